//! Helpers shared by integration test targets.
#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use causalgp::linalg::JitterConfig;
use causalgp::GpModel;

pub const ORACLE_TOL: f64 = 1e-8;

/// ARD-RBF written out independently of the library.
pub fn oracle_kernel(a: &DMatrix<f64>, b: &DMatrix<f64>, ls: &[f64], sv: f64) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        let mut r2 = 0.0;
        for d in 0..ls.len() {
            let diff = (a[(i, d)] - b[(j, d)]) / ls[d];
            r2 += diff * diff;
        }
        sv * (-0.5 * r2).exp()
    })
}

#[derive(Debug)]
pub struct Problem {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub xs: DMatrix<f64>,
    pub params: Vec<f64>,
}

pub fn random_problem(seed: u64) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=20);
    let d = rng.random_range(1..=5);
    let m = rng.random_range(1..=6);
    let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
    let y = DVector::from_fn(n, |_, _| rng.random_range(-1.5..1.5));
    let xs = DMatrix::from_fn(m, d, |_, _| rng.random_range(-2.5..2.5));
    let mut params: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    params.push(rng.random_range(-1.0..1.0));
    params.push(rng.random_range(1e-3f64.ln()..0.5f64.ln()));
    Problem { x, y, xs, params }
}

pub fn max_abs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

/// Largest absolute error of mean, covariance, variance and MLL against
/// the dense-inverse oracle, and the jitter the library needed.
pub fn oracle_error(p: &Problem) -> (f64, f64) {
    let d = p.x.ncols();
    let ls: Vec<f64> = p.params[..d].iter().map(|v| v.exp()).collect();
    let sv = p.params[d].exp();
    let noise = p.params[d + 1].exp();

    let mut model = GpModel::raw(d);
    model.set_flat(&p.params).unwrap();
    let cond = model.condition(&p.x, &p.y, &JitterConfig::default()).unwrap();
    let pred = cond.predict(&p.xs, false, true).unwrap();

    let n = p.x.nrows();
    let k = oracle_kernel(&p.x, &p.x, &ls, sv) + DMatrix::identity(n, n) * noise;
    let k_inv = k.clone().lu().try_inverse().unwrap();
    let ks = oracle_kernel(&p.x, &p.xs, &ls, sv);
    let kss = oracle_kernel(&p.xs, &p.xs, &ls, sv);
    let mean = ks.transpose() * &k_inv * &p.y;
    let cov = &kss - ks.transpose() * &k_inv * &ks;
    let det = k.lu().determinant();
    let mll = -0.5 * (p.y.transpose() * &k_inv * &p.y)[0] - 0.5 * det.ln() - 0.5 * n as f64 * (2.0 * PI).ln();

    let mean_err = mean
        .iter()
        .zip(&pred.means)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let cov_err = max_abs(&cov, pred.covariance.as_ref().unwrap());
    let var_err = (0..cov.nrows())
        .map(|i| (cov[(i, i)].max(0.0) - pred.variances[i]).abs())
        .fold(0.0, f64::max);
    let mll_err = (mll - cond.log_marginal_likelihood()).abs();
    let worst = [mean_err, cov_err, var_err, mll_err].into_iter().fold(0.0, f64::max);
    (worst, cond.jitter())
}
