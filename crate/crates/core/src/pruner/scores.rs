use serde::{Deserialize, Serialize};

use super::Reduction;
use crate::error::{Error, Result};
use crate::numerics::{bottom_indices, record, top_indices, Mat, OpCounter, Scalar};

/// Original key index of every surviving position, strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyIndexMap(Vec<usize>);

impl KeyIndexMap {
    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn from_vec(origin: Vec<usize>) -> Result<Self> {
        if origin.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "key index map must be strictly increasing".into(),
            ));
        }
        Ok(Self(origin))
    }

    /// Map restricted to the given (ascending) surviving positions.
    pub fn retain(&self, kept: &[usize]) -> Self {
        Self(kept.iter().map(|&p| self.0[p]).collect())
    }

    pub fn origin(&self, position: usize) -> usize {
        self.0[position]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-key importance over the current key set.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceScores<T> {
    pub scores: Vec<T>,
    pub origin: KeyIndexMap,
}

/// Collapses each row of the class-score matrix to a single value.
pub fn reduce_classification<T: Scalar>(
    scores: &Mat<T>,
    mode: Reduction,
    mut counter: Option<&mut OpCounter>,
) -> Vec<T> {
    let (rows, width) = (scores.rows() as u64, scores.cols() as u64);
    let out = scores
        .row_iter()
        .map(|row| match mode {
            Reduction::Max => row.iter().copied().fold(T::neg_infinity(), T::max),
            Reduction::Min => row.iter().copied().fold(T::infinity(), T::min),
            Reduction::Mean => row.iter().copied().sum::<T>() / T::of(row.len() as f64),
        })
        .collect();
    let extra = width.saturating_sub(1) * rows;
    record(&mut counter, |c| match mode {
        Reduction::Max | Reduction::Min => c.comparisons += extra,
        Reduction::Mean => {
            c.additions += extra;
            c.divisions += rows;
        }
    });
    out
}

/// Element-wise mean of the per-head maps: `H − 1` additions and one division
/// per entry.
pub fn head_average<T: Scalar>(maps: &[Mat<T>], mut counter: Option<&mut OpCounter>) -> Result<Mat<T>> {
    let first = maps.first().ok_or(Error::Empty("attention maps"))?;
    if first.rows() == 0 || first.cols() == 0 {
        return Err(Error::Empty("attention maps"));
    }
    let mut avg = first.clone();
    for m in &maps[1..] {
        if m.shape() != avg.shape() {
            return Err(Error::Shape {
                op: "head_average",
                left: avg.shape(),
                right: m.shape(),
            });
        }
        for (a, &b) in avg.as_mut_slice().iter_mut().zip(m.as_slice()) {
            *a += b;
        }
    }
    let h = T::of(maps.len() as f64);
    for a in avg.as_mut_slice() {
        *a = *a / h;
    }
    let cells = (avg.rows() * avg.cols()) as u64;
    record(&mut counter, |c| {
        c.additions += cells * (maps.len() as u64 - 1);
        c.divisions += cells;
    });
    Ok(avg)
}

/// Classification-guided key importance.
///
/// The head-averaged map is weighted row-wise by `class_scores`, the `k` rows
/// with the highest class score are kept (ties to the lower query index), and
/// their columns are summed: `S_j = Σ_{i∈top-k} Ĉ_i · A_ij`.
pub fn importance_scores<T: Scalar>(
    maps: &[Mat<T>],
    class_scores: &[T],
    top_queries: usize,
    origin: KeyIndexMap,
    mut counter: Option<&mut OpCounter>,
) -> Result<ImportanceScores<T>> {
    let mut weighted = head_average(maps, counter.as_deref_mut())?;
    let (nq, nk) = weighted.shape();
    if class_scores.len() != nq {
        return Err(Error::Shape {
            op: "importance_scores",
            left: (nq, nk),
            right: (class_scores.len(), 1),
        });
    }
    check_origin(&origin, nk)?;
    for (i, &c) in class_scores.iter().enumerate() {
        for a in weighted.row_mut(i) {
            *a *= c;
        }
    }
    record(&mut counter, |c| c.multiplications += (nq * nk) as u64);

    let k = top_queries.clamp(1, nq);
    let rows = top_indices(class_scores, k)?;
    let scores = column_sum(&weighted, &rows);
    record(&mut counter, |c| c.additions += (nk * (k - 1)) as u64);
    Ok(ImportanceScores { scores, origin })
}

/// Key importance without classification scores: column sums of the
/// head-averaged map over every query.
pub fn importance_scores_no_cls<T: Scalar>(
    maps: &[Mat<T>],
    origin: KeyIndexMap,
    mut counter: Option<&mut OpCounter>,
) -> Result<ImportanceScores<T>> {
    let avg = head_average(maps, counter.as_deref_mut())?;
    let (nq, nk) = avg.shape();
    check_origin(&origin, nk)?;
    let rows: Vec<usize> = (0..nq).collect();
    let scores = column_sum(&avg, &rows);
    record(&mut counter, |c| c.additions += (nk * (nq - 1)) as u64);
    Ok(ImportanceScores { scores, origin })
}

fn check_origin(origin: &KeyIndexMap, nk: usize) -> Result<()> {
    if origin.len() != nk {
        return Err(Error::Shape {
            op: "importance origin",
            left: (nk, 1),
            right: (origin.len(), 1),
        });
    }
    Ok(())
}

fn column_sum<T: Scalar>(m: &Mat<T>, rows: &[usize]) -> Vec<T> {
    let mut out = m.row(rows[0]).to_vec();
    for &i in &rows[1..] {
        for (o, &v) in out.iter_mut().zip(m.row(i)) {
            *o += v;
        }
    }
    out
}

/// Removes the `count` least important keys, keeping survivors in order.
pub fn prune_keys<T: Scalar>(
    keys: &Mat<T>,
    scores: &ImportanceScores<T>,
    count: usize,
) -> Result<(Mat<T>, KeyIndexMap)> {
    if scores.scores.len() != keys.rows() {
        return Err(Error::Shape {
            op: "prune_keys",
            left: keys.shape(),
            right: (scores.scores.len(), 1),
        });
    }
    let kept = surviving_keys(&scores.scores, count)?;
    Ok((keys.select_rows(&kept), scores.origin.retain(&kept)))
}

/// Positions that survive removing the `count` lowest scores.
pub fn surviving_keys<T: Scalar>(scores: &[T], count: usize) -> Result<Vec<usize>> {
    if count >= scores.len() {
        return Err(Error::Count {
            what: "keys to prune",
            requested: count,
            available: scores.len().saturating_sub(1),
        });
    }
    let dropped = bottom_indices(scores, count)?;
    Ok(complement(scores.len(), &dropped))
}

/// Indices of the queries retained after removing the `count` with the
/// lowest reduced class score.
pub fn prune_queries<T: Scalar>(scores: &Mat<T>, count: usize, mode: Reduction) -> Result<Vec<usize>> {
    if count >= scores.rows() {
        return Err(Error::Count {
            what: "queries to prune",
            requested: count,
            available: scores.rows().saturating_sub(1),
        });
    }
    let reduced = reduce_classification(scores, mode, None);
    let dropped = bottom_indices(&reduced, count)?;
    Ok(complement(scores.rows(), &dropped))
}

/// `0..n` without the ascending `dropped` list.
fn complement(n: usize, dropped: &[usize]) -> Vec<usize> {
    let mut d = dropped.iter().peekable();
    (0..n)
        .filter(|i| {
            if d.peek() == Some(&i) {
                d.next();
                false
            } else {
                true
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Mat<f64> {
        Mat::from_rows(rows).unwrap()
    }

    #[test]
    fn reduction_modes() {
        let c = m(&[&[0.1, 0.9], &[0.3, 0.2]]);
        assert_eq!(reduce_classification(&c, Reduction::Max, None), vec![0.9, 0.3]);
        assert_eq!(reduce_classification(&c, Reduction::Min, None), vec![0.1, 0.2]);
        let mean = reduce_classification(&c, Reduction::Mean, None);
        assert!((mean[0] - 0.5).abs() < 1e-12 && (mean[1] - 0.25).abs() < 1e-12);

        let single = m(&[&[0.4], &[0.7]]);
        for mode in [Reduction::Max, Reduction::Mean, Reduction::Min] {
            assert_eq!(reduce_classification(&single, mode, None), vec![0.4, 0.7]);
        }
    }

    #[test]
    fn importance_worked_examples() {
        let a = m(&[&[0.5, 0.3, 0.2], &[0.1, 0.1, 0.8]]);
        let s = importance_scores(&[a.clone()], &[0.9, 0.4], 1, KeyIndexMap::identity(3), None)
            .unwrap();
        for (x, y) in s.scores.iter().zip([0.45, 0.27, 0.18]) {
            assert!((x - y).abs() < 1e-12);
        }
        let s = importance_scores(&[a], &[0.9, 0.4], 2, KeyIndexMap::identity(3), None).unwrap();
        for (x, y) in s.scores.iter().zip([0.49, 0.31, 0.50]) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_inputs_give_equal_scores() {
        let a = Mat::<f64>::filled(4, 5, 0.2);
        let s = importance_scores(&[a.clone(), a], &[0.6; 4], 3, KeyIndexMap::identity(5), None)
            .unwrap();
        assert!(s.scores.iter().all(|&v| (v - s.scores[0]).abs() < 1e-15));
    }

    #[test]
    fn no_cls_examples() {
        let a = m(&[&[0.5, 0.5]]);
        let s = importance_scores_no_cls(&[a], KeyIndexMap::identity(2), None).unwrap();
        assert_eq!(s.scores, vec![0.5, 0.5]);

        let a = m(&[&[0.2, 0.3, 0.5], &[0.6, 0.3, 0.1], &[0.0, 0.0, 1.0]]);
        let s = importance_scores_no_cls(&[a.clone()], KeyIndexMap::identity(3), None).unwrap();
        assert!((s.scores.iter().sum::<f64>() - 3.0).abs() < 1e-12);

        let with = importance_scores(&[a], &[1.0; 3], 3, KeyIndexMap::identity(3), None).unwrap();
        for (x, y) in s.scores.iter().zip(&with.scores) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn importance_rejects_bad_inputs() {
        assert_eq!(
            importance_scores::<f64>(&[], &[], 1, KeyIndexMap::identity(0), None).unwrap_err(),
            Error::Empty("attention maps")
        );
        let a = Mat::<f64>::filled(2, 3, 0.1);
        let b = Mat::<f64>::filled(2, 4, 0.1);
        assert!(importance_scores(&[a.clone(), b], &[0.1, 0.2], 1, KeyIndexMap::identity(3), None).is_err());
        assert!(importance_scores(&[a], &[0.1], 1, KeyIndexMap::identity(3), None).is_err());
    }

    #[test]
    fn importance_counts_follow_cost_model() {
        let maps: Vec<Mat<f64>> = (0..3).map(|h| Mat::filled(4, 6, 0.1 * h as f64)).collect();
        let mut c = OpCounter::new();
        importance_scores(&maps, &[0.1, 0.4, 0.3, 0.2], 2, KeyIndexMap::identity(6), Some(&mut c))
            .unwrap();
        // N_q·N_k·H + N_q·N_k + N_k·(k − 1)
        assert_eq!(c.flops(), 4 * 6 * 3 + 4 * 6 + 6);
        assert_eq!(c.comparisons, 0);
    }

    #[test]
    fn prune_keys_examples() {
        let keys = Mat::<f64>::from_fn(3, 2, |i, j| (i * 2 + j) as f64);
        let s = ImportanceScores {
            scores: vec![0.45, 0.27, 0.18],
            origin: KeyIndexMap::identity(3),
        };
        let (k, map) = prune_keys(&keys, &s, 1).unwrap();
        assert_eq!(k, keys.select_rows(&[0, 1]));
        assert_eq!(map.as_slice(), &[0, 1]);

        let (k, map) = prune_keys(&keys, &s, 0).unwrap();
        assert_eq!(k, keys);
        assert_eq!(map, KeyIndexMap::identity(3));

        let flat = ImportanceScores {
            scores: vec![0.3; 3],
            origin: KeyIndexMap::from_vec(vec![4, 7, 9]).unwrap(),
        };
        let (_, map) = prune_keys(&keys, &flat, 2).unwrap();
        assert_eq!(map.as_slice(), &[9]);

        assert!(matches!(prune_keys(&keys, &s, 3), Err(Error::Count { .. })));
    }

    #[test]
    fn prune_queries_examples() {
        let c = m(&[&[0.9], &[0.1], &[0.5]]);
        assert_eq!(prune_queries(&c, 0, Reduction::Max).unwrap(), vec![0, 1, 2]);
        assert_eq!(prune_queries(&c, 1, Reduction::Max).unwrap(), vec![0, 2]);
        assert_eq!(prune_queries(&c, 2, Reduction::Max).unwrap(), vec![0]);
        assert!(prune_queries(&c, 3, Reduction::Max).is_err());
    }

    #[test]
    fn key_index_map_must_increase() {
        assert!(KeyIndexMap::from_vec(vec![0, 2, 2]).is_err());
        assert!(KeyIndexMap::from_vec(vec![3, 1]).is_err());
        let m = KeyIndexMap::from_vec(vec![1, 5, 8, 9]).unwrap();
        assert_eq!(m.retain(&[0, 2]).as_slice(), &[1, 8]);
    }
}
