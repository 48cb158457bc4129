//! Dense helpers on top of nalgebra: jittered Cholesky and a cache-friendly
//! inverse of an SPD matrix from its Cholesky factor.

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diagonal jitter escalation policy for Cholesky factorizations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JitterConfig {
    /// First jitter level, relative to the mean of the matrix diagonal.
    pub initial_relative: f64,
    /// Number of doublings after the first jittered attempt.
    pub max_escalations: usize,
}

impl Default for JitterConfig {
    fn default() -> Self {
        Self {
            initial_relative: 1e-6,
            max_escalations: 8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Factorization {
    pub cholesky: Cholesky<f64, Dyn>,
    /// Absolute jitter that was added to the diagonal (0 when none was needed).
    pub jitter: f64,
    /// Number of jittered attempts made (0 when the plain matrix factored).
    pub attempts: usize,
}

/// Factors `k`, first as-is and then with increasing diagonal jitter.
pub fn cholesky_with_jitter(k: &DMatrix<f64>, cfg: &JitterConfig) -> Result<Factorization> {
    let n = k.nrows();
    let max_diag = k.diagonal().amax();
    // pivots at rounding level mean the matrix is numerically singular
    let floor = f64::EPSILON * n.max(1) as f64 * max_diag;
    let accept = |c: &Cholesky<f64, Dyn>| c.l_dirty().diagonal().iter().all(|d| d * d > floor);
    if let Some(cholesky) = Cholesky::new(k.clone()).filter(accept) {
        return Ok(Factorization {
            cholesky,
            jitter: 0.0,
            attempts: 0,
        });
    }
    let mean_diag = if n == 0 { 1.0 } else { k.diagonal().mean().abs() };
    let mut jitter = cfg.initial_relative * mean_diag.max(f64::MIN_POSITIVE);
    for attempt in 0..=cfg.max_escalations {
        let mut kj = k.clone();
        for i in 0..n {
            kj[(i, i)] += jitter;
        }
        if let Some(cholesky) = Cholesky::new(kj).filter(accept) {
            return Ok(Factorization {
                cholesky,
                jitter,
                attempts: attempt + 1,
            });
        }
        if attempt < cfg.max_escalations {
            jitter *= 2.0;
        }
    }
    Err(Error::Factorization {
        escalations: cfg.max_escalations,
        jitter,
    })
}

/// `(L Lᵀ)^-1` given the lower Cholesky factor `L`.
///
/// Forward substitution runs over contiguous rows of `L`, then the product
/// `L^-ᵀ L^-1` goes through nalgebra's GEMM.
pub fn inverse_from_cholesky(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    // column i of lt is row i of L
    let lt = l.transpose();
    let lt = lt.as_slice();
    let mut upper = vec![0.0; n * n];
    let mut x = vec![0.0; n];
    for j in 0..n {
        for i in j..n {
            let row = &lt[i * n + j..i * n + i];
            let mut s = if i == j { 1.0 } else { 0.0 };
            s -= dot(row, &x[j..i]);
            x[i] = s / lt[i * n + i];
        }
        upper[j * n + j..j * n + n].copy_from_slice(&x[j..n]);
    }
    // row j of `upper` is column j of L^-1, so this is (L^-1)ᵀ
    let u = DMatrix::from_row_slice(n, n, &upper);
    let mut inv = &u * u.transpose();
    // exact symmetry
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (inv[(i, j)] + inv[(j, i)]);
            inv[(i, j)] = v;
            inv[(j, i)] = v;
        }
    }
    inv
}

/// Four-lane dot product; the fixed lane split keeps results deterministic.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}
