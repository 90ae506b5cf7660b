//! Closed-form operation counts for the decoder's cross-attention and for
//! key scoring, plus an instrumented cross-check against the real forward
//! pass.
//!
//! A FLOP here is one multiplication, addition, division, exponentiation or
//! square root. Comparisons are not counted.

use serde::{Deserialize, Serialize};

use crate::decoder::{Decoder, DecoderConfig, ForwardCounters, ForwardOptions, LayerHook};
use crate::error::{Error, Result};
use crate::numerics::OpCounter;
use crate::pruner::{make_schedule, Criterion, PruneConfig, PruneTarget, Reduction, TgGbcPruner};
use crate::workload::{generate_workload, Profile, Workload};

pub const GIGA: f64 = 1e9;

/// `N×C` times `C×M`.
pub fn flops_matmul(n: u64, m: u64, c: u64) -> u64 {
    n * m * (2 * c).saturating_sub(1)
}

/// Cross-attention cost is affine in the key count: `slope·N_k + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MhaCost {
    pub slope: u64,
    pub intercept: u64,
}

impl MhaCost {
    pub fn new(num_queries: u64, embed_dim: u64, heads: u64) -> Result<Self> {
        let (nq, e, h) = (num_queries, embed_dim, heads);
        if h == 0 || e % h != 0 {
            return Err(Error::Config(format!("embed_dim {e} not divisible by {h} heads")));
        }
        Ok(Self {
            slope: 4 * e * e - 2 * e + 4 * nq * e + 3 * nq * h,
            intercept: 4 * nq * e * e + 1 - 3 * nq * e - nq * h,
        })
    }

    pub fn at(&self, num_keys: u64) -> u64 {
        self.slope * num_keys + self.intercept
    }
}

pub fn flops_mha(num_queries: u64, num_keys: u64, embed_dim: u64, heads: u64) -> Result<u64> {
    Ok(MhaCost::new(num_queries, embed_dim, heads)?.at(num_keys))
}

/// Head averaging, the per-query weighting and the column sum over the
/// `top_queries` selected rows.
pub fn flops_importance(num_queries: u64, num_keys: u64, heads: u64, top_queries: u64) -> u64 {
    let (nq, nk) = (num_queries, num_keys);
    nq * nk * heads + nq * nk + nk * top_queries.saturating_sub(1)
}

/// Decoder size and pruning setting for a cost estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostSetting {
    pub layers: u64,
    pub num_queries: u64,
    pub num_keys: u64,
    pub embed_dim: u64,
    pub heads: u64,
    pub total_prune: u64,
    pub layers_pruned: u64,
    pub top_queries: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsBreakdown {
    pub per_layer_cross_attention: Vec<u64>,
    pub per_layer_scoring: Vec<u64>,
    pub total_before: u64,
    pub total_after: u64,
    pub reduction_fraction: f64,
}

impl CostSetting {
    pub fn from_configs(decoder: &DecoderConfig, prune: &PruneConfig) -> Self {
        Self {
            layers: decoder.layers as u64,
            num_queries: decoder.num_queries as u64,
            num_keys: decoder.num_keys as u64,
            embed_dim: decoder.embed_dim as u64,
            heads: decoder.heads as u64,
            total_prune: prune.total_prune as u64,
            layers_pruned: prune.layers_pruned as u64,
            top_queries: prune.top_queries as u64,
        }
    }

    fn mha(&self) -> Result<MhaCost> {
        MhaCost::new(self.num_queries, self.embed_dim, self.heads)
    }

    pub fn before(&self) -> Result<u64> {
        Ok(self.layers * self.mha()?.at(self.num_keys))
    }

    fn step(&self) -> Result<u64> {
        let (n, r, l, nk) = (self.layers_pruned, self.total_prune, self.layers, self.num_keys);
        if n == 0 || n > l {
            return Err(Error::Config(format!("layers_pruned {n} must be in 1..={l}")));
        }
        let step = r / n;
        if step * n >= nk {
            return Err(Error::Schedule {
                removed: (step * n) as usize,
                keys: nk as usize,
            });
        }
        Ok(step)
    }

    /// Keys seen by the cross-attention of every layer.
    pub fn keys_per_layer(&self) -> Result<Vec<u64>> {
        let step = self.step()?;
        Ok((0..self.layers)
            .map(|i| self.num_keys - i.min(self.layers_pruned) * step)
            .collect())
    }

    pub fn breakdown(&self) -> Result<FlopsBreakdown> {
        let mha = self.mha()?;
        let keys = self.keys_per_layer()?;
        let k = self.top_queries.clamp(1, self.num_queries.max(1));
        let per_layer_cross_attention: Vec<u64> = keys.iter().map(|&nk| mha.at(nk)).collect();
        let per_layer_scoring: Vec<u64> = keys
            .iter()
            .take(self.layers_pruned as usize)
            .map(|&nk| flops_importance(self.num_queries, nk, self.heads, k))
            .collect();
        let total_before = self.before()?;
        let total_after =
            per_layer_cross_attention.iter().sum::<u64>() + per_layer_scoring.iter().sum::<u64>();
        Ok(FlopsBreakdown {
            per_layer_cross_attention,
            per_layer_scoring,
            total_before,
            total_after,
            reduction_fraction: 1.0 - total_after as f64 / total_before as f64,
        })
    }

    pub fn after(&self) -> Result<u64> {
        Ok(self.breakdown()?.total_after)
    }
}

pub fn flops_decoder_before(
    layers: u64,
    num_queries: u64,
    num_keys: u64,
    embed_dim: u64,
    heads: u64,
) -> Result<u64> {
    Ok(layers * flops_mha(num_queries, num_keys, embed_dim, heads)?)
}

pub fn flops_decoder_after(setting: &CostSetting) -> Result<u64> {
    setting.after()
}

/// Cross-attention cost of a run whose key count follows an arbitrary
/// schedule, for baselines that do not score keys.
pub fn flops_cross_attention_schedule(
    decoder: &DecoderConfig,
    total_removed: usize,
    layers_reduced: usize,
) -> Result<u64> {
    let schedule = make_schedule(decoder.num_keys, total_removed, layers_reduced, decoder.layers)?;
    let mha = MhaCost::new(decoder.num_queries as u64, decoder.embed_dim as u64, decoder.heads as u64)?;
    Ok(schedule
        .counts_per_layer(decoder.num_keys, decoder.layers)
        .into_iter()
        .map(|nk| mha.at(nk as u64))
        .sum())
}

/// Cost of a pruned run for any pruner variant. Matches
/// [`CostSetting::after`] for the default variant (class-weighted, `max`,
/// key target) and additionally covers the unweighted criterion, the `mean`
/// reduction's arithmetic and query pruning.
pub fn pruned_cost(decoder: &DecoderConfig, prune: &PruneConfig) -> Result<u64> {
    let schedule = prune.schedule(decoder)?;
    let (l, nq, nk) = (decoder.layers, decoder.num_queries, decoder.num_keys);
    let (e, h) = (decoder.embed_dim as u64, decoder.heads as u64);
    let n = prune.layers_pruned;
    let reduce = |rows: usize| match prune.reduction {
        Reduction::Mean => (rows * decoder.num_classes) as u64,
        Reduction::Max | Reduction::Min => 0,
    };
    match prune.target {
        PruneTarget::Keys => {
            let mha = MhaCost::new(nq as u64, e, h)?;
            let keys = schedule.counts_per_layer(nk, l);
            let cross: u64 = keys.iter().map(|&k| mha.at(k as u64)).sum();
            let scoring: u64 = keys[..n]
                .iter()
                .map(|&k| match prune.criterion {
                    Criterion::WithCls => {
                        let top = prune.effective_top_queries(nq) as u64;
                        flops_importance(nq as u64, k as u64, h, top) + reduce(nq)
                    }
                    Criterion::NoCls => (nq * k) as u64 * h + (k * (nq - 1)) as u64,
                })
                .sum();
            Ok(cross + scoring)
        }
        PruneTarget::Queries => {
            let queries = schedule.counts_per_layer(nq, l);
            let mut total = 0;
            for (i, &q) in queries.iter().enumerate() {
                total += flops_mha(q as u64, nk as u64, e, h)?;
                if i < n {
                    total += reduce(q);
                }
            }
            Ok(total)
        }
    }
}

/// Counts measured by running the decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentedCost {
    pub cross_attention: Vec<OpCounter>,
    pub scoring: Vec<OpCounter>,
    pub key_counts: Vec<usize>,
}

impl InstrumentedCost {
    pub fn total_flops(&self) -> u64 {
        self.cross_attention.iter().chain(&self.scoring).map(OpCounter::flops).sum()
    }
}

/// Runs a seeded random workload through a seeded decoder with counting
/// enabled. Meant for small configurations; the count is exact at any size
/// but the forward pass still has to run.
pub fn instrumented_decoder_cost(
    decoder: &DecoderConfig,
    prune: Option<&PruneConfig>,
    seed: u64,
) -> Result<InstrumentedCost> {
    let model: Decoder<f64> = Decoder::seeded(*decoder, seed)?;
    let w: Workload<f64> = generate_workload(decoder, seed, &Profile::Random)?;
    let pruner = prune.map(|p| TgGbcPruner::new(*p, decoder)).transpose()?;
    let hook = pruner.as_ref().map(|p| p as &dyn LayerHook<f64>);
    let mut counters = ForwardCounters::default();
    let out = model.forward_with(&w.queries, &w.keys, hook, ForwardOptions::default(), Some(&mut counters))?;
    Ok(InstrumentedCost {
        cross_attention: counters.cross_attention,
        scoring: counters.hooks,
        key_counts: out.key_counts,
    })
}
