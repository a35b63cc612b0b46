//! Small dense routines on row-major `n x n` buffers.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Lower Cholesky factor of a symmetric matrix, or the failing pivot.
pub(crate) fn cholesky<T: Scalar>(a: &[T], n: usize) -> std::result::Result<Vec<T>, T> {
    debug_assert_eq!(a.len(), n * n);
    let mut l = vec![T::zero(); n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d = d - l[j * n + k] * l[j * n + k];
        }
        if !(d > T::zero()) || !d.is_finite() {
            return Err(d);
        }
        let djj = d.sqrt();
        l[j * n + j] = djj;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            let (ri, rj) = (&l[i * n..i * n + j], &l[j * n..j * n + j]);
            for k in 0..j {
                s = s - ri[k] * rj[k];
            }
            l[i * n + j] = s / djj;
        }
    }
    Ok(l)
}

/// Jitter values tried after a plain factorization fails.
pub const JITTER_LADDER: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Factorizes `a`, adding diagonal jitter from [`JITTER_LADDER`] on failure.
/// Returns the factor and the jitter that was needed.
pub(crate) fn cholesky_with_jitter<T: Scalar>(a: &[T], n: usize) -> Result<(Vec<T>, T)> {
    let mut last_pivot = match cholesky(a, n) {
        Ok(l) => return Ok((l, T::zero())),
        Err(p) => p,
    };
    let mut work = a.to_vec();
    for &j in JITTER_LADDER.iter() {
        let jit = T::lit(j);
        for i in 0..n {
            work[i * n + i] = a[i * n + i] + jit;
        }
        match cholesky(&work, n) {
            Ok(l) => return Ok((l, jit)),
            Err(p) => last_pivot = p,
        }
    }
    let diag = (0..n).map(|i| a[i * n + i].to_f64_lossy());
    let (min_diag, max_diag) = diag.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)));
    Err(Error::Factorization {
        size: n,
        max_jitter: JITTER_LADDER[JITTER_LADDER.len() - 1],
        min_pivot: last_pivot.to_f64_lossy(),
        min_diag,
        max_diag,
    })
}

/// Solves `L x = b` for lower-triangular `L`.
pub(crate) fn solve_lower<T: Scalar>(l: &[T], n: usize, b: &[T]) -> Vec<T> {
    let mut x = b.to_vec();
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s = s - l[i * n + k] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}

/// Solves `L^T x = b` for lower-triangular `L`.
pub(crate) fn solve_lower_transposed<T: Scalar>(l: &[T], n: usize, b: &[T]) -> Vec<T> {
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s = s - l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    x
}
