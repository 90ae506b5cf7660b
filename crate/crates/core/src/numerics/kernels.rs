use std::cmp::Ordering;

use rand::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

use super::counter::record;
use super::matrix::{gemm_views, MatMut, MatRef};
use super::{Mat, OpCounter, Scalar};
use crate::error::{Error, Result};

/// Counted product of two strided views into `out`.
///
/// Records `N·M·C` multiplications and `N·M·(C−1)` additions.
pub fn gemm_counted<T: Scalar>(
    a: MatRef<'_, T>,
    b: MatRef<'_, T>,
    out: MatMut<'_, T>,
    mut counter: Option<&mut OpCounter>,
) -> Result<()> {
    if a.cols() != b.rows() {
        return Err(Error::Shape {
            op: "matmul",
            left: (a.rows(), a.cols()),
            right: (b.rows(), b.cols()),
        });
    }
    if (a.rows(), b.cols()) != (out.rows(), out.cols()) {
        return Err(Error::Shape {
            op: "matmul output",
            left: (a.rows(), b.cols()),
            right: (out.rows(), out.cols()),
        });
    }
    let (n, c, m) = (a.rows() as u64, a.cols() as u64, b.cols() as u64);
    record(&mut counter, |k| {
        k.multiplications += n * m * c;
        k.additions += n * m * c.saturating_sub(1);
    });
    gemm_views(a, b, out);
    Ok(())
}

/// `a · b`.
pub fn matmul<T: Scalar>(a: &Mat<T>, b: &Mat<T>, counter: Option<&mut OpCounter>) -> Result<Mat<T>> {
    if a.cols() != b.rows() {
        return Err(Error::Shape {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = Mat::zeros(a.rows(), b.cols());
    gemm_counted(a.view(), b.view(), out.view_mut(), counter)?;
    Ok(out)
}

/// `a · bᵀ`.
pub fn matmul_nt<T: Scalar>(
    a: &Mat<T>,
    b: &Mat<T>,
    counter: Option<&mut OpCounter>,
) -> Result<Mat<T>> {
    if a.cols() != b.cols() {
        return Err(Error::Shape {
            op: "matmul_nt",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = Mat::zeros(a.rows(), b.rows());
    gemm_counted(a.view(), b.view().t(), out.view_mut(), counter)?;
    Ok(out)
}

/// Adds `bias` to every row.
pub fn add_row_bias<T: Scalar>(m: &mut Mat<T>, bias: &[T]) -> Result<()> {
    if bias.len() != m.cols() {
        return Err(Error::Shape {
            op: "add_row_bias",
            left: m.shape(),
            right: (1, bias.len()),
        });
    }
    for i in 0..m.rows() {
        for (x, &b) in m.row_mut(i).iter_mut().zip(bias) {
            *x += b;
        }
    }
    Ok(())
}

/// Row-wise softmax, in place.
///
/// The executed kernel subtracts the row maximum before exponentiating. The
/// counter records only the unstabilised cost: per row of width `N`, `N`
/// exponentiations, `N − 1` additions and `N` divisions.
pub fn softmax_rows_in_place<T: Scalar>(m: &mut Mat<T>, mut counter: Option<&mut OpCounter>) {
    let (rows, cols) = m.shape();
    if cols == 0 {
        return;
    }
    for i in 0..rows {
        let row = m.row_mut(i);
        let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut sum = T::zero();
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x = *x / sum;
        }
    }
    let (r, n) = (rows as u64, cols as u64);
    record(&mut counter, |k| {
        k.exponentiations += r * n;
        k.additions += r * (n - 1);
        k.divisions += r * n;
    });
}

pub fn softmax_rows<T: Scalar>(m: &Mat<T>, counter: Option<&mut OpCounter>) -> Mat<T> {
    let mut out = m.clone();
    softmax_rows_in_place(&mut out, counter);
    out
}

/// Per-row layer normalisation followed by an affine `gain`/`bias`.
pub fn layer_norm<T: Scalar>(x: &Mat<T>, gain: &[T], bias: &[T], epsilon: T) -> Result<Mat<T>> {
    let e = x.cols();
    if gain.len() != e || bias.len() != e {
        return Err(Error::Shape {
            op: "layer_norm",
            left: x.shape(),
            right: (gain.len(), bias.len()),
        });
    }
    let mut out = x.clone();
    if e == 0 {
        return Ok(out);
    }
    let n = T::of(e as f64);
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let inv = T::one() / (var + epsilon).sqrt();
        for ((v, &g), &b) in row.iter_mut().zip(gain).zip(bias) {
            *v = (*v - mean) * inv * g + b;
        }
    }
    Ok(out)
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn ascending<T: Scalar>(v: &[T]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| {
        v[a].partial_cmp(&v[b])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    }
}

fn descending<T: Scalar>(v: &[T]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| {
        v[b].partial_cmp(&v[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    }
}

fn select_by<T: Scalar>(
    v: &[T],
    count: usize,
    what: &'static str,
    order: impl Fn(&usize, &usize) -> Ordering,
) -> Result<Vec<usize>> {
    if count > v.len() {
        return Err(Error::Count {
            what,
            requested: count,
            available: v.len(),
        });
    }
    let mut idx: Vec<usize> = (0..v.len()).collect();
    if count == 0 {
        return Ok(Vec::new());
    }
    if count < idx.len() {
        idx.select_nth_unstable_by(count - 1, &order);
        idx.truncate(count);
    }
    idx.sort_unstable();
    Ok(idx)
}

/// Indices of the `count` smallest entries, ties going to the lower index,
/// returned in ascending index order.
pub fn bottom_indices<T: Scalar>(v: &[T], count: usize) -> Result<Vec<usize>> {
    select_by(v, count, "bottom_indices", ascending(v))
}

/// Indices of the `count` largest entries, ties going to the lower index,
/// returned in ascending index order.
pub fn top_indices<T: Scalar>(v: &[T], count: usize) -> Result<Vec<usize>> {
    select_by(v, count, "top_indices", descending(v))
}

/// Index of the maximum entry (first one on ties).
pub fn argmax<T: Scalar>(v: &[T]) -> Option<usize> {
    (0..v.len()).min_by(descending(v))
}

/// Mixes a stream identifier into a seed so that related generators do not
/// share a SplitMix64 sequence.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = SplitMix64::seed_from_u64(seed ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    rng.next_u64()
}

/// Uniform draw in `[0, 1)` with 53 random bits.
#[inline]
fn unit_f64(rng: &mut SplitMix64) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Deterministic `rows × cols` matrix with zero-mean entries of standard
/// deviation `scale / √cols`.
///
/// A SplitMix64 stream seeded with `seed` is consumed in row-major order; each
/// 64-bit output becomes a uniform `u ∈ [0, 1)` from its top 53 bits, mapped to
/// `(2u − 1) · √3 · scale / √cols` in `f64` and then rounded to `T`.
pub fn seeded_init<T: Scalar>(rows: usize, cols: usize, seed: u64, scale: f64) -> Mat<T> {
    let mut rng = SplitMix64::seed_from_u64(seed);
    let half_width = 3f64.sqrt() * scale / (cols.max(1) as f64).sqrt();
    Mat::from_fn(rows, cols, |_, _| {
        T::of((2.0 * unit_f64(&mut rng) - 1.0) * half_width)
    })
}
