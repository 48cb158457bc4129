//! Exact zero-mean Gaussian process regression with an ARD-RBF kernel,
//! optionally composed with a learned feature map (deep kernel).
//!
//! All positive hyperparameters are stored as logarithms. The flat
//! parameter order used by optimizers is
//! `[log l_1..log l_D, log σ², log σ_y², extractor parameters...]`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extractors::{Extractor, ExtractorParams, ExtractorSpec, Recording};
use crate::linalg::{cholesky_with_jitter, inverse_from_cholesky, JitterConfig};

/// ARD-RBF hyperparameters in log space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfParams {
    pub log_length_scales: Vec<f64>,
    pub log_signal_variance: f64,
}

impl RbfParams {
    /// Unit length scales and unit signal variance.
    pub fn new(dim: usize) -> Self {
        Self {
            log_length_scales: vec![0.0; dim],
            log_signal_variance: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.log_length_scales.len()
    }

    pub fn signal_variance(&self) -> f64 {
        self.log_signal_variance.exp()
    }

    pub fn length_scales(&self) -> Vec<f64> {
        self.log_length_scales.iter().map(|l| l.exp()).collect()
    }

    fn inv_sq_length_scales(&self) -> Vec<f64> {
        self.log_length_scales
            .iter()
            .map(|l| (-2.0 * l).exp())
            .collect()
    }
}

/// `σ² exp(-Σ_d (x_d - x'_d)² / (2 l_d²))`.
pub fn rbf_kernel(x: &[f64], x2: &[f64], p: &RbfParams) -> Result<f64> {
    if x.len() != p.dim() || x2.len() != p.dim() {
        return Err(Error::Shape(format!(
            "rbf_kernel: points of length {} and {} for a {}-dimensional kernel",
            x.len(),
            x2.len(),
            p.dim()
        )));
    }
    let r2: f64 = x
        .iter()
        .zip(x2)
        .zip(&p.log_length_scales)
        .map(|((a, b), l)| {
            let d = a - b;
            d * d * (-2.0 * l).exp()
        })
        .sum();
    Ok(p.signal_variance() * (-0.5 * r2).exp())
}

/// Row-major `n × d` buffer; rows are contiguous.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Rows {
    pub n: usize,
    pub d: usize,
    pub data: Vec<f64>,
}

impl Rows {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self {
            n: m.nrows(),
            d: m.ncols(),
            data: m.transpose().as_slice().to_vec(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.d, &self.data)
    }
}

fn rbf_cross_rows(a: &Rows, b: &Rows, p: &RbfParams) -> DMatrix<f64> {
    let inv = p.inv_sq_length_scales();
    let sv = p.signal_variance();
    DMatrix::from_fn(a.n, b.n, |i, j| {
        let (ra, rb) = (a.row(i), b.row(j));
        let mut r2 = 0.0;
        for d in 0..inv.len() {
            let t = ra[d] - rb[d];
            r2 += t * t * inv[d];
        }
        sv * (-0.5 * r2).exp()
    })
}

/// Serializable form of a [`GpModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpModelState {
    pub input_dim: usize,
    pub rbf: RbfParams,
    pub log_noise_variance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extractor: Option<ExtractorState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorState {
    pub spec: ExtractorSpec,
    pub params: ExtractorParams,
}

/// GP hyperparameters plus an optional feature extractor.
#[derive(Debug, Clone)]
pub struct GpModel {
    input_dim: usize,
    pub rbf: RbfParams,
    pub log_noise_variance: f64,
    pub extractor: Option<Extractor>,
}

pub const DEFAULT_NOISE_VARIANCE: f64 = 0.01;

impl GpModel {
    /// ARD-RBF directly on the flattened window.
    pub fn raw(input_dim: usize) -> Self {
        Self {
            input_dim,
            rbf: RbfParams::new(input_dim),
            log_noise_variance: DEFAULT_NOISE_VARIANCE.ln(),
            extractor: None,
        }
    }

    /// ARD-RBF on the extractor's latent features.
    pub fn deep(extractor: Extractor) -> Self {
        Self {
            input_dim: extractor.input_len(),
            rbf: RbfParams::new(extractor.latent_dim()),
            log_noise_variance: DEFAULT_NOISE_VARIANCE.ln(),
            extractor: Some(extractor),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn noise_variance(&self) -> f64 {
        self.log_noise_variance.exp()
    }

    pub fn is_deep(&self) -> bool {
        self.extractor.is_some()
    }

    pub fn param_count(&self) -> usize {
        self.rbf.dim() + 2 + self.extractor.as_ref().map_or(0, |e| e.params.len())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend_from_slice(&self.rbf.log_length_scales);
        out.push(self.rbf.log_signal_variance);
        out.push(self.log_noise_variance);
        if let Some(e) = &self.extractor {
            e.params.write_flat(&mut out);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "model has {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let d = self.rbf.dim();
        self.rbf.log_length_scales.copy_from_slice(&flat[..d]);
        self.rbf.log_signal_variance = flat[d];
        self.log_noise_variance = flat[d + 1];
        if let Some(e) = &mut self.extractor {
            e.params.set_flat(&flat[d + 2..])?;
        }
        Ok(())
    }

    pub fn state(&self) -> GpModelState {
        GpModelState {
            input_dim: self.input_dim,
            rbf: self.rbf.clone(),
            log_noise_variance: self.log_noise_variance,
            extractor: self.extractor.as_ref().map(|e| ExtractorState {
                spec: e.spec().clone(),
                params: e.params.clone(),
            }),
        }
    }

    pub fn from_state(state: GpModelState) -> Result<Self> {
        let extractor = state
            .extractor
            .map(|s| Extractor::with_params(s.spec, s.params))
            .transpose()?;
        let expected_dim = extractor
            .as_ref()
            .map_or(state.input_dim, |e| e.latent_dim());
        if state.rbf.dim() != expected_dim {
            return Err(Error::Shape(format!(
                "kernel dimension {} does not match feature dimension {expected_dim}",
                state.rbf.dim()
            )));
        }
        if let Some(e) = &extractor {
            if e.input_len() != state.input_dim {
                return Err(Error::Shape("extractor input length mismatch".into()));
            }
        }
        Ok(Self {
            input_dim: state.input_dim,
            rbf: state.rbf,
            log_noise_variance: state.log_noise_variance,
            extractor,
        })
    }

    fn check_inputs(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.input_dim {
            return Err(Error::Shape(format!(
                "model expects {} input columns, got {}",
                self.input_dim,
                x.ncols()
            )));
        }
        Ok(())
    }

    pub(crate) fn feature_rows(&self, x: &DMatrix<f64>) -> Result<Rows> {
        self.check_inputs(x)?;
        let rows = Rows::from_matrix(x);
        match &self.extractor {
            None => Ok(rows),
            Some(e) => {
                let d = e.latent_dim();
                let mut data = Vec::with_capacity(rows.n * d);
                for i in 0..rows.n {
                    data.extend(e.forward(rows.row(i), None)?);
                }
                Ok(Rows { n: rows.n, d, data })
            }
        }
    }

    /// Latent features `φ(x)` for each row (the inputs themselves for the
    /// raw kernel).
    pub fn features(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.feature_rows(x)?.to_matrix())
    }

    /// `K(X, X')` without observation noise.
    pub fn kernel_matrix(&self, x: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let a = self.feature_rows(x)?;
        let b = self.feature_rows(x2)?;
        Ok(rbf_cross_rows(&a, &b, &self.rbf))
    }

    pub fn condition(
        &self,
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        jitter: &JitterConfig,
    ) -> Result<ConditionedGp> {
        ConditionedGp::new(self.clone(), x, y, jitter)
    }
}

/// The three parts of the log marginal likelihood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MllTerms {
    /// `-½ yᵀ (K + σ_y² I)^-1 y`
    pub model_fit: f64,
    /// `-½ log |K + σ_y² I|`
    pub complexity_penalty: f64,
    /// `-(n/2) log 2π`
    pub constant: f64,
}

impl MllTerms {
    pub fn total(&self) -> f64 {
        self.model_fit + self.complexity_penalty + self.constant
    }
}

/// Gradient of the log marginal likelihood, in flat-parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct MllGradient {
    pub log_length_scales: Vec<f64>,
    pub log_signal_variance: f64,
    pub log_noise_variance: f64,
    pub extractor: Option<ExtractorParams>,
}

impl MllGradient {
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.log_length_scales.clone();
        out.push(self.log_signal_variance);
        out.push(self.log_noise_variance);
        if let Some(e) = &self.extractor {
            e.write_flat(&mut out);
        }
        out
    }
}

/// Predictive marginals (and optionally the joint covariance).
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDistribution {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub covariance: Option<DMatrix<f64>>,
    /// Whether σ_y² has been added (observation-space prediction).
    pub includes_noise: bool,
    /// Number of negative variances clamped to zero.
    pub clamped: usize,
}

impl PredictiveDistribution {
    pub fn stds(&self) -> Vec<f64> {
        self.variances.iter().map(|v| v.sqrt()).collect()
    }
}

/// A model conditioned on training data, with the Cholesky factor of
/// `K + σ_y² I (+ jitter)` and `a = (K + σ_y² I)^-1 y` cached.
#[derive(Debug, Clone)]
pub struct ConditionedGp {
    model: GpModel,
    inputs: Rows,
    latents: Rows,
    y: DVector<f64>,
    kernel: DMatrix<f64>,
    l: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
    jitter_attempts: usize,
}

impl ConditionedGp {
    pub fn new(
        model: GpModel,
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        jitter: &JitterConfig,
    ) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::EmptyInput("conditioning set".into()));
        }
        if y.len() != n {
            return Err(Error::Shape(format!("{} inputs but {} targets", n, y.len())));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite training data".into()));
        }
        let latents = model.feature_rows(x)?;
        if latents.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite latent features".into()));
        }
        let kernel = rbf_cross_rows(&latents, &latents, &model.rbf);
        let mut noisy = kernel.clone();
        let noise = model.noise_variance();
        for i in 0..n {
            noisy[(i, i)] += noise;
        }
        let fact = cholesky_with_jitter(&noisy, jitter)?;
        let alpha = fact.cholesky.solve(y);
        Ok(Self {
            inputs: Rows::from_matrix(x),
            latents,
            y: y.clone(),
            kernel,
            l: fact.cholesky.l(),
            alpha,
            jitter: fact.jitter,
            jitter_attempts: fact.attempts,
            model,
        })
    }

    pub fn model(&self) -> &GpModel {
        &self.model
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.y
    }

    /// Jitter added to the diagonal, 0 if the plain matrix factored.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn jitter_attempts(&self) -> usize {
        self.jitter_attempts
    }

    pub fn latents(&self) -> DMatrix<f64> {
        self.latents.to_matrix()
    }

    pub fn mll_terms(&self) -> MllTerms {
        let n = self.len() as f64;
        let log_det: f64 = 2.0 * self.l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        MllTerms {
            model_fit: -0.5 * self.y.dot(&self.alpha),
            complexity_penalty: -0.5 * log_det,
            constant: -0.5 * n * (2.0 * PI).ln(),
        }
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.mll_terms().total()
    }

    pub fn predict(
        &self,
        x_star: &DMatrix<f64>,
        include_noise: bool,
        full_cov: bool,
    ) -> Result<PredictiveDistribution> {
        if x_star.nrows() == 0 {
            return Err(Error::EmptyInput("prediction inputs".into()));
        }
        let zs = self.model.feature_rows(x_star)?;
        let ks = rbf_cross_rows(&self.latents, &zs, &self.model.rbf);
        let means: Vec<f64> = (ks.transpose() * &self.alpha).iter().copied().collect();
        let v = self
            .l
            .solve_lower_triangular(&ks)
            .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
        let sv = self.model.rbf.signal_variance();
        let noise = if include_noise {
            self.model.noise_variance()
        } else {
            0.0
        };
        let mut clamped = 0;
        let mut variances: Vec<f64> = v
            .column_iter()
            .map(|c| {
                let var = sv - c.norm_squared();
                if var < 0.0 {
                    clamped += 1;
                    0.0
                } else {
                    var
                }
            })
            .collect();
        for var in &mut variances {
            *var += noise;
        }
        let covariance = full_cov.then(|| {
            let kss = rbf_cross_rows(&zs, &zs, &self.model.rbf);
            let mut c = kss - v.transpose() * &v;
            for i in 0..c.nrows() {
                c[(i, i)] = variances[i];
            }
            c
        });
        Ok(PredictiveDistribution {
            means,
            variances,
            covariance,
            includes_noise: include_noise,
            clamped,
        })
    }

    /// Exact gradient of the log marginal likelihood with respect to all
    /// model parameters. Jitter, if any, is treated as a constant.
    pub fn mll_gradients(&self) -> Result<MllGradient> {
        let n = self.len();
        let d = self.latents.d;
        let kinv = inverse_from_cholesky(&self.l);
        // ∂L/∂K = ½ (a aᵀ - K^-1); only its Hadamard product with K is needed
        let a = self.alpha.as_slice();
        let inv_sq = self.model.rbf.inv_sq_length_scales();
        let mut grad_ls = vec![0.0; d];
        let mut grad_sv = 0.0;
        let mut trace = 0.0;
        let want_latent = self.model.extractor.is_some();
        let mut dz = vec![0.0; if want_latent { n * d } else { 0 }];
        for j in 0..n {
            let kinv_col = kinv.column(j);
            let k_col = self.kernel.column(j);
            let zj = self.latents.row(j);
            trace += 0.5 * (a[j] * a[j] - kinv_col[j]);
            for i in 0..n {
                let w = 0.5 * (a[i] * a[j] - kinv_col[i]);
                let m = w * k_col[i];
                grad_sv += m;
                if i == j {
                    continue;
                }
                let zi = self.latents.row(i);
                for dd in 0..d {
                    let diff = zi[dd] - zj[dd];
                    grad_ls[dd] += m * diff * diff * inv_sq[dd];
                    if want_latent {
                        dz[i * d + dd] -= 2.0 * m * diff * inv_sq[dd];
                    }
                }
            }
        }
        let extractor = match &self.model.extractor {
            None => None,
            Some(e) => Some(backprop_latents(e, &self.inputs, &dz, d)?),
        };
        Ok(MllGradient {
            log_length_scales: grad_ls,
            log_signal_variance: grad_sv,
            log_noise_variance: trace * self.model.noise_variance(),
            extractor,
        })
    }
}

/// Pushes `∂L/∂Z` back through the extractor, summing over samples in
/// input order.
fn backprop_latents(
    e: &Extractor,
    inputs: &Rows,
    dz: &[f64],
    d: usize,
) -> Result<ExtractorParams> {
    let mut total = e.params.zeros_like();
    let mut rec = Recording::new();
    for i in 0..inputs.n {
        let up = &dz[i * d..(i + 1) * d];
        if up.iter().all(|&v| v == 0.0) {
            continue;
        }
        e.forward(inputs.row(i), Some(&mut rec))?;
        e.feature_map()
            .backward(&e.params, &rec, up, &mut total)?;
    }
    Ok(total)
}

/// Convenience wrapper: condition and return the log marginal likelihood.
pub fn log_marginal_likelihood(
    model: &GpModel,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    jitter: &JitterConfig,
) -> Result<f64> {
    Ok(model.condition(x, y, jitter)?.log_marginal_likelihood())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model_with(sv: f64, noise: f64, dim: usize) -> GpModel {
        let mut m = GpModel::raw(dim);
        m.rbf.log_signal_variance = sv.ln();
        m.log_noise_variance = noise.ln();
        m
    }

    #[test]
    fn rbf_examples() {
        let p = RbfParams::new(3);
        let x = [0.3, -1.0, 2.0];
        assert_eq!(rbf_kernel(&x, &x, &p).unwrap(), 1.0);
        let v = rbf_kernel(&[2f64.sqrt(), 0.0, 0.0], &[0.0; 3], &p).unwrap();
        assert!((v - (-1f64).exp()).abs() < 1e-15);
        let mut far = RbfParams::new(2);
        far.log_length_scales = vec![1e6f64.ln(); 2];
        far.log_signal_variance = 2.5f64.ln();
        let v = rbf_kernel(&[3.0, -4.0], &[-1.0, 7.0], &far).unwrap();
        assert!((v - 2.5).abs() < 1e-6);
        assert!(rbf_kernel(&[1.0], &[1.0, 2.0], &RbfParams::new(1)).is_err());
    }

    #[test]
    fn single_point_kernel_matrix() {
        let m = model_with(1.7, 0.1, 2);
        let x = DMatrix::from_row_slice(1, 2, &[0.4, 0.2]);
        let k = m.kernel_matrix(&x, &x).unwrap();
        assert!((k[(0, 0)] - 1.7).abs() < 1e-15);
    }

    #[test]
    fn mll_single_point() {
        // K + σ_y² = 1 with σ² = 0.5 and σ_y² = 0.5
        let m = model_with(0.5, 0.5, 1);
        let x = DMatrix::from_row_slice(1, 1, &[0.0]);
        let half_log_2pi = 0.5 * (2.0 * PI).ln();
        let c = m
            .condition(&x, &DVector::from_vec(vec![0.0]), &JitterConfig::default())
            .unwrap();
        assert!((c.log_marginal_likelihood() + half_log_2pi).abs() < 1e-15);
        assert!((c.log_marginal_likelihood() - (-0.918938533204672)).abs() < 1e-12);
        let c = m
            .condition(&x, &DVector::from_vec(vec![1.0]), &JitterConfig::default())
            .unwrap();
        assert!((c.log_marginal_likelihood() - (-0.5 - half_log_2pi)).abs() < 1e-15);
    }

    #[test]
    fn condition_single_point_factor() {
        let m = model_with(1.0, 1.0, 1);
        let x = DMatrix::from_row_slice(1, 1, &[3.0]);
        let c = m
            .condition(&x, &DVector::from_vec(vec![2.0]), &JitterConfig::default())
            .unwrap();
        assert!((c.cholesky_factor()[(0, 0)] - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(c.jitter(), 0.0);
    }

    #[test]
    fn duplicates_with_noise_factor_cleanly() {
        let m = model_with(1.0, 0.01, 1);
        let x = DMatrix::from_row_slice(3, 1, &[0.5, 0.5, 0.5]);
        let c = m
            .condition(&x, &DVector::from_vec(vec![1.0, 1.1, 0.9]), &JitterConfig::default())
            .unwrap();
        assert_eq!(c.jitter(), 0.0);
    }

    #[test]
    fn zero_targets_noise_gradient_is_negative() {
        let m = model_with(1.0, 0.1, 2);
        let x = DMatrix::from_row_slice(4, 2, &[0.0, 0.1, 0.5, 0.2, 0.9, 0.7, 0.3, 0.3]);
        let c = m
            .condition(&x, &DVector::zeros(4), &JitterConfig::default())
            .unwrap();
        let g = c.mll_gradients().unwrap();
        let kinv = c.cholesky_factor().clone() * c.cholesky_factor().transpose();
        let expected = -0.5 * kinv.try_inverse().unwrap().trace() * 0.1;
        assert!(g.log_noise_variance < 0.0);
        assert!((g.log_noise_variance - expected).abs() < 1e-12);
    }

    #[test]
    fn flat_params_round_trip() {
        let mut m = model_with(1.3, 0.2, 3);
        let mut flat = m.to_flat();
        assert_eq!(flat.len(), 5);
        flat[0] = 0.7;
        m.set_flat(&flat).unwrap();
        assert_eq!(m.rbf.log_length_scales[0], 0.7);
        assert!(m.set_flat(&flat[..4]).is_err());
    }

    #[test]
    fn rejects_bad_training_data() {
        let m = GpModel::raw(1);
        let x = DMatrix::from_row_slice(2, 1, &[0.0, f64::NAN]);
        let y = DVector::from_vec(vec![0.0, 1.0]);
        assert!(m.condition(&x, &y, &JitterConfig::default()).is_err());
        let x = DMatrix::<f64>::zeros(0, 1);
        assert!(m.condition(&x, &DVector::zeros(0), &JitterConfig::default()).is_err());
    }
}
