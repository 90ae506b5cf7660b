//! Bipartite soft matching (ToMe) applied to decoder keys, used as the
//! merging baseline against classification-guided pruning.

use std::cmp::Ordering;

use crate::decoder::{DecoderConfig, HookAction, HookContext, LayerHook};
use crate::error::{Error, Result};
use crate::numerics::{matmul_nt, Mat, OpCounter, Scalar};
use crate::pruner::{make_schedule, PruneSchedule};

/// How the input rows were combined.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MergePlan {
    /// `(source, destination)` input positions; sources come from the even
    /// set, destinations from the odd set.
    pub pairs: Vec<(usize, usize)>,
    /// For every output row, the input positions averaged into it. The first
    /// entry is the row's own position.
    pub provenance: Vec<Vec<usize>>,
}

/// Largest merge count accepted for `n` keys.
pub fn merge_limit(n: usize) -> usize {
    n / 2
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine_similarity<T: Scalar>(a: &[T], b: &[T]) -> T {
    let dot: T = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    let na = a.iter().map(|&x| x * x).sum::<T>().sqrt();
    let nb = b.iter().map(|&x| x * x).sum::<T>().sqrt();
    if na == T::zero() || nb == T::zero() {
        T::zero()
    } else {
        dot / (na * nb)
    }
}

fn normalized_rows<T: Scalar>(m: &Mat<T>, rows: &[usize]) -> Mat<T> {
    let mut out = m.select_rows(rows);
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let norm = row.iter().map(|&x| x * x).sum::<T>().sqrt();
        if norm > T::zero() {
            for x in row {
                *x = *x / norm;
            }
        }
    }
    out
}

/// Merges `merge_count` keys into their most similar partner.
///
/// Even positions form the source set and odd positions the destination set.
/// Each source is matched to the destination with the highest cosine
/// similarity (lower index on ties); the `merge_count` best-matched sources
/// are averaged into their destinations. Output order: every destination by
/// position, then the unmerged sources by position. `merge_count = 0` returns
/// the input untouched.
pub fn bipartite_soft_matching<T: Scalar>(
    keys: &Mat<T>,
    merge_count: usize,
) -> Result<(Mat<T>, MergePlan)> {
    let n = keys.rows();
    let limit = merge_limit(n);
    if merge_count > limit {
        return Err(Error::MergeLimit {
            requested: merge_count,
            limit,
            keys: n,
        });
    }
    if merge_count == 0 {
        return Ok((
            keys.clone(),
            MergePlan {
                pairs: Vec::new(),
                provenance: (0..n).map(|i| vec![i]).collect(),
            },
        ));
    }

    let sources: Vec<usize> = (0..n).step_by(2).collect();
    let dests: Vec<usize> = (1..n).step_by(2).collect();
    let sim = matmul_nt(
        &normalized_rows(keys, &sources),
        &normalized_rows(keys, &dests),
        None,
    )?;

    let best: Vec<(usize, T)> = (0..sources.len())
        .map(|a| {
            let row = sim.row(a);
            let mut arg = 0;
            for (b, &v) in row.iter().enumerate().skip(1) {
                if v > row[arg] {
                    arg = b;
                }
            }
            (arg, row[arg])
        })
        .collect();
    let mut order: Vec<usize> = (0..sources.len()).collect();
    order.sort_by(|&x, &y| {
        best[y]
            .1
            .partial_cmp(&best[x].1)
            .unwrap_or(Ordering::Equal)
            .then(x.cmp(&y))
    });
    let mut merged = vec![false; sources.len()];
    let mut absorbed: Vec<Vec<usize>> = vec![Vec::new(); dests.len()];
    let mut pairs = Vec::with_capacity(merge_count);
    for &a in &order[..merge_count] {
        merged[a] = true;
        absorbed[best[a].0].push(sources[a]);
    }
    for (b, srcs) in absorbed.iter_mut().enumerate() {
        srcs.sort_unstable();
        pairs.extend(srcs.iter().map(|&s| (s, dests[b])));
    }
    pairs.sort_unstable();

    let e = keys.cols();
    let out_rows = n - merge_count;
    let mut data = Vec::with_capacity(out_rows * e);
    let mut provenance = Vec::with_capacity(out_rows);
    for (b, &d) in dests.iter().enumerate() {
        let mut prov = vec![d];
        prov.extend_from_slice(&absorbed[b]);
        let count = T::of(prov.len() as f64);
        let mut row = keys.row(d).to_vec();
        for &s in &absorbed[b] {
            for (r, &v) in row.iter_mut().zip(keys.row(s)) {
                *r += v;
            }
        }
        if prov.len() > 1 {
            for r in &mut row {
                *r = *r / count;
            }
        }
        data.extend(row);
        provenance.push(prov);
    }
    for (a, &s) in sources.iter().enumerate() {
        if !merged[a] {
            data.extend_from_slice(keys.row(s));
            provenance.push(vec![s]);
        }
    }
    Ok((Mat::new(out_rows, e, data)?, MergePlan { pairs, provenance }))
}

/// Token-merging hook following the same floor schedule as the pruner.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TomeMerger {
    layers_merged: usize,
    schedule: PruneSchedule,
}

impl TomeMerger {
    pub fn new(total_merge: usize, layers_merged: usize, decoder: &DecoderConfig) -> Result<Self> {
        let schedule = make_schedule(decoder.num_keys, total_merge, layers_merged, decoder.layers)?;
        // every step must respect the bipartite limit at the size it applies to
        let mut n = decoder.num_keys;
        for &step in schedule.per_layer() {
            if step > merge_limit(n) {
                return Err(Error::MergeLimit {
                    requested: step,
                    limit: merge_limit(n),
                    keys: n,
                });
            }
            n -= step;
        }
        Ok(Self {
            layers_merged,
            schedule,
        })
    }

    pub fn schedule(&self) -> &PruneSchedule {
        &self.schedule
    }
}

impl<T: Scalar> LayerHook<T> for TomeMerger {
    fn after_layer(
        &self,
        ctx: HookContext<'_, T>,
        _counter: Option<&mut OpCounter>,
    ) -> Result<HookAction<T>> {
        let count = self.schedule.at(ctx.layer);
        if ctx.layer >= self.layers_merged || count == 0 {
            return Ok(HookAction::Keep);
        }
        let (keys, plan) = bipartite_soft_matching(ctx.keys, count)?;
        Ok(HookAction::Replace {
            keys,
            origin: plan.provenance.iter().map(|p| p[0]).collect(),
        })
    }
}
