use super::{AttentionScale, AttentionWeights};
use crate::error::{Error, Result};
use crate::numerics::{gemm_counted, matmul, record, softmax_rows_in_place, Mat, OpCounter, Scalar};

/// Result of one multi-head attention call.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput<T> {
    /// `N_q × E`
    pub output: Mat<T>,
    /// One row-stochastic `N_q × N_k` map per head, taken before the value
    /// product.
    pub maps: Vec<Mat<T>>,
}

/// Multi-head scaled dot-product attention with output projection.
///
/// Works for any number of keys `≥ 1`; the output is always `N_q × E`. When a
/// counter is attached it receives the projection, score, scaling, softmax and
/// value-product costs plus a single square root for the divisor.
pub fn multi_head_attention<T: Scalar>(
    queries: &Mat<T>,
    keys: &Mat<T>,
    values: &Mat<T>,
    weights: &AttentionWeights<T>,
    heads: usize,
    scale: AttentionScale,
    mut counter: Option<&mut OpCounter>,
) -> Result<AttentionOutput<T>> {
    let e = weights.w_q.rows();
    if keys.rows() != values.rows() {
        return Err(Error::Shape {
            op: "attention keys/values",
            left: keys.shape(),
            right: values.shape(),
        });
    }
    for (op, m) in [
        ("attention queries", queries),
        ("attention keys", keys),
        ("attention values", values),
    ] {
        if m.cols() != e {
            return Err(Error::Shape {
                op,
                left: m.shape(),
                right: weights.w_q.shape(),
            });
        }
    }
    if keys.rows() == 0 {
        return Err(Error::Empty("attention needs at least one key"));
    }
    if heads == 0 || e % heads != 0 {
        return Err(Error::Config(format!("embed_dim {e} not divisible by {heads} heads")));
    }

    let q = matmul(queries, &weights.w_q, counter.as_deref_mut())?;
    let k = matmul(keys, &weights.w_k, counter.as_deref_mut())?;
    let v = matmul(values, &weights.w_v, counter.as_deref_mut())?;

    let head_dim = e / heads;
    let width = match scale {
        AttentionScale::Embed => e,
        AttentionScale::Head => head_dim,
    };
    let divisor = T::of(width as f64).sqrt();
    record(&mut counter, |c| c.square_roots += 1);

    let (nq, nk) = (queries.rows(), keys.rows());
    let mut concat = Mat::zeros(nq, e);
    let mut maps = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = h * head_dim;
        let mut map = Mat::zeros(nq, nk);
        gemm_counted(
            q.view().col_block(cols, head_dim),
            k.view().col_block(cols, head_dim).t(),
            map.view_mut(),
            counter.as_deref_mut(),
        )?;
        for x in map.as_mut_slice() {
            *x = *x / divisor;
        }
        record(&mut counter, |c| c.divisions += (nq * nk) as u64);
        softmax_rows_in_place(&mut map, counter.as_deref_mut());
        gemm_counted(
            map.view(),
            v.view().col_block(cols, head_dim),
            concat.view_mut().col_block(cols, head_dim),
            counter.as_deref_mut(),
        )?;
        maps.push(map);
    }
    let output = matmul(&concat, &weights.w_o, counter)?;
    Ok(AttentionOutput { output, maps })
}
