//! Comparing a reduced run against the full one.

use serde::{Deserialize, Serialize};

use crate::decoder::DecoderOutput;
use crate::error::{Error, Result};
use crate::numerics::{argmax, top_indices, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    /// Share of compared queries whose top class is unchanged. A query that
    /// was dropped counts as a disagreement.
    pub fraction: f64,
    pub compared: usize,
    /// Mean absolute class-score difference over compared queries that
    /// survived.
    pub mean_score_deviation: f64,
}

/// Compares the `top` most confident queries of `reference` (ranked by
/// their best class score) with the same queries in `candidate`.
pub fn agreement<T: Scalar>(
    reference: &DecoderOutput<T>,
    candidate: &DecoderOutput<T>,
    top: usize,
) -> Result<Agreement> {
    let confidence: Vec<f64> = reference.predictions.iter().map(|p| p.score).collect();
    if confidence.is_empty() {
        return Err(Error::Empty("reference run has no predictions"));
    }
    let chosen = top_indices(&confidence, top.min(confidence.len()))?;
    let ref_scores = reference.final_scores();
    let cand_scores = candidate.final_scores();
    if ref_scores.cols() != cand_scores.cols() {
        return Err(Error::Shape {
            op: "agreement",
            left: ref_scores.shape(),
            right: cand_scores.shape(),
        });
    }

    let mut agree = 0;
    let mut deviation = 0.0;
    let mut survived = 0;
    for &p in &chosen {
        let pred = &reference.predictions[p];
        let Some(row) = candidate.position_of_query(pred.query) else {
            continue;
        };
        let cand = cand_scores.row(row);
        if argmax(cand) == Some(pred.class) {
            agree += 1;
        }
        let base = ref_scores.row(reference.position_of_query(pred.query).unwrap_or(p));
        deviation += base
            .iter()
            .zip(cand)
            .map(|(a, b)| (*a - *b).abs().to_f64().unwrap_or(f64::NAN))
            .sum::<f64>()
            / base.len() as f64;
        survived += 1;
    }
    Ok(Agreement {
        fraction: agree as f64 / chosen.len() as f64,
        compared: chosen.len(),
        mean_score_deviation: if survived == 0 { 0.0 } else { deviation / survived as f64 },
    })
}

/// `max|a − b| / max|b|`, with the denominator floored at the smallest
/// positive normal value.
pub fn relative_inf_deviation<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (*x - *y).abs())
        .fold(T::zero(), T::max);
    let scale = b.iter().map(|y| y.abs()).fold(T::min_positive_value(), T::max);
    (diff / scale).to_f64().unwrap_or(f64::INFINITY)
}
