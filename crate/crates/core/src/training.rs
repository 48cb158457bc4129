//! Marginal-likelihood training with full-batch Adam and early stopping,
//! finite-difference gradient checks, and checkpoint files.

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gp::{ConditionedGp, GpModel, GpModelState};
use crate::linalg::JitterConfig;
use crate::pipeline::{Normalizer, WindowedDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub validation_fraction: f64,
    pub seed: u64,
    pub jitter: JitterConfig,
    /// Print a progress line every this many epochs (0 = silent).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            max_epochs: 2000,
            patience: 50,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            validation_fraction: 0.1,
            seed: 0,
            jitter: JitterConfig::default(),
            log_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("train.learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.max_epochs == 0 {
            return bad("train.max_epochs must be positive".into());
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return bad(format!(
                "train.patience must be in 1..={}, got {}",
                self.max_epochs, self.patience
            ));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!(
                "train.validation_fraction must be in (0, 1), got {}",
                self.validation_fraction
            ));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("train.adam_beta1 and adam_beta2 must be in [0, 1)".into());
        }
        if !(self.adam_epsilon > 0.0) {
            return bad("train.adam_epsilon must be positive".into());
        }
        Ok(())
    }
}

/// First and second moment estimates for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of steps taken so far.
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` against `grads` (descent).
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &TrainConfig) {
    assert_eq!(params.len(), grads.len(), "parameter and gradient lengths differ");
    assert_eq!(params.len(), state.m.len(), "optimizer state length differs");
    state.t += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

/// Patience bookkeeping over a stream of validation losses.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
        }
    }

    /// Records the loss for `epoch`; returns `true` if it is a new best.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best || self.best_epoch.is_none() {
            self.best = loss;
            self.best_epoch = Some(epoch);
            true
        } else {
            false
        }
    }

    /// Whether `patience` epochs have passed since the best one.
    pub fn should_stop(&self, epoch: usize) -> bool {
        self.best_epoch
            .is_some_and(|b| epoch >= b + self.patience)
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
    pub epoch_seconds: Vec<f64>,
    /// Epochs whose factorization needed diagonal jitter.
    pub jittered_epochs: usize,
}

impl TrainTrace {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }

    pub fn best_val_loss(&self) -> f64 {
        self.val_loss[self.best_epoch]
    }

    pub fn mean_epoch_seconds(&self) -> f64 {
        if self.epoch_seconds.is_empty() {
            0.0
        } else {
            self.epoch_seconds.iter().sum::<f64>() / self.epoch_seconds.len() as f64
        }
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,seconds\n");
        for e in 0..self.epochs() {
            out.push_str(&format!(
                "{e},{:?},{:?},{:?}\n",
                self.train_loss[e], self.val_loss[e], self.epoch_seconds[e]
            ));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

/// Mean negative log predictive density of `y` at `x` (noise included).
pub fn mean_nlpd(cond: &ConditionedGp, x: &DMatrix<f64>, y: &[f64]) -> Result<f64> {
    let pred = cond.predict(x, true, false)?;
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let total: f64 = pred
        .means
        .iter()
        .zip(&pred.variances)
        .zip(y)
        .map(|((m, v), t)| 0.5 * (ln_2pi + v.ln()) + (t - m) * (t - m) / (2.0 * v))
        .sum();
    Ok(total / y.len() as f64)
}

/// Fits all parameters by minimizing the negative log marginal likelihood
/// on the leading windows, monitoring predictive density on the held-out
/// tail, and returns the parameters of the best validation epoch.
pub fn train(
    model: &GpModel,
    data: &WindowedDataset,
    cfg: &TrainConfig,
) -> Result<(GpModel, TrainTrace)> {
    cfg.validate()?;
    let (fit, val) = data.split_tail(cfg.validation_fraction)?;
    let y_fit = fit.target_vector();
    let mut model = model.clone();
    let mut params = model.to_flat();
    let mut adam = AdamState::new(params.len());
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params = params.clone();
    let mut trace = TrainTrace {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        stop_reason: StopReason::MaxEpochs,
        epoch_seconds: Vec::new(),
        jittered_epochs: 0,
    };
    for epoch in 0..cfg.max_epochs {
        let start = Instant::now();
        let cond = model.condition(&fit.inputs, &y_fit, &cfg.jitter)?;
        if cond.jitter() > 0.0 {
            trace.jittered_epochs += 1;
        }
        let loss = -cond.log_marginal_likelihood();
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, loss });
        }
        let val_loss = mean_nlpd(&cond, &val.inputs, &val.targets)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                loss: val_loss,
            });
        }
        let grads: Vec<f64> = cond.mll_gradients()?.to_flat().iter().map(|g| -g).collect();
        drop(cond);
        if stopper.observe(epoch, val_loss) {
            best_params.copy_from_slice(&params);
        }
        adam_step(&mut params, &grads, &mut adam, cfg);
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numerical(format!(
                "optimizer produced non-finite parameters at epoch {epoch}"
            )));
        }
        model.set_flat(&params)?;
        trace.train_loss.push(loss);
        trace.val_loss.push(val_loss);
        trace.epoch_seconds.push(start.elapsed().as_secs_f64());
        if cfg.log_every > 0 && epoch % cfg.log_every == 0 {
            eprintln!("epoch {epoch:5}  train {loss:.6}  val {val_loss:.6}");
        }
        if stopper.should_stop(epoch) {
            trace.stop_reason = StopReason::Patience;
            break;
        }
    }
    trace.best_epoch = stopper.best_epoch().expect("at least one epoch");
    model.set_flat(&best_params)?;
    Ok((model, trace))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub n_params: usize,
    pub max_rel_error: f64,
    /// Flat index of the worst parameter.
    pub worst_index: usize,
    pub tolerance: f64,
    pub passed: bool,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Floor on the denominator of the relative error, so parameters whose
/// true gradient is zero do not divide by rounding noise.
pub const GRAD_CHECK_FLOOR: f64 = 1e-3;

/// Compares analytic gradients of the negative log marginal likelihood
/// with central differences `(L(θ+h) - L(θ-h)) / 2h` for every parameter.
/// Relative error is `|a - f| / max(|a|, |f|, GRAD_CHECK_FLOOR)`.
pub fn gradient_check(
    model: &GpModel,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    step: f64,
    tolerance: f64,
    jitter: &JitterConfig,
) -> Result<GradCheckReport> {
    let loss = |m: &GpModel| -> Result<f64> {
        Ok(-m.condition(x, y, jitter)?.log_marginal_likelihood())
    };
    let analytic: Vec<f64> = model
        .condition(x, y, jitter)?
        .mll_gradients()?
        .to_flat()
        .iter()
        .map(|g| -g)
        .collect();
    let base = model.to_flat();
    let mut probe = model.clone();
    let mut numeric = Vec::with_capacity(base.len());
    let mut theta = base.clone();
    for i in 0..base.len() {
        theta[i] = base[i] + step;
        probe.set_flat(&theta)?;
        let up = loss(&probe)?;
        theta[i] = base[i] - step;
        probe.set_flat(&theta)?;
        let down = loss(&probe)?;
        theta[i] = base[i];
        numeric.push((up - down) / (2.0 * step));
    }
    let mut max_rel_error = 0.0;
    let mut worst_index = 0;
    for (i, (a, f)) in analytic.iter().zip(&numeric).enumerate() {
        let err = (a - f).abs() / a.abs().max(f.abs()).max(GRAD_CHECK_FLOOR);
        if err > max_rel_error || !err.is_finite() {
            max_rel_error = err;
            worst_index = i;
        }
    }
    Ok(GradCheckReport {
        n_params: base.len(),
        max_rel_error,
        worst_index,
        tolerance,
        passed: max_rel_error <= tolerance,
        analytic,
        numeric,
    })
}

pub const CHECKPOINT_VERSION: &str = "causalgp-checkpoint-v1";

/// Everything needed to rebuild a trained predictor: parameters, the
/// conditioning set, normalizers, and the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub variant: String,
    pub model: GpModelState,
    pub input_names: Vec<String>,
    pub target_name: String,
    pub window: usize,
    /// Normalized training windows, row-major.
    pub train_inputs: Vec<f64>,
    pub train_targets: Vec<f64>,
    pub normalizer: Option<Normalizer>,
    pub jitter: JitterConfig,
    pub seed: u64,
    /// Echo of the resolved run configuration.
    pub config: serde_json::Value,
}

impl Checkpoint {
    pub fn new(
        variant: &str,
        model: &GpModel,
        train: &WindowedDataset,
        jitter: JitterConfig,
        seed: u64,
        config: serde_json::Value,
    ) -> Self {
        let inputs = &train.inputs;
        let mut train_inputs = Vec::with_capacity(inputs.len());
        for r in 0..inputs.nrows() {
            train_inputs.extend(inputs.row(r).iter());
        }
        Self {
            variant: variant.into(),
            model: model.state(),
            input_names: train.input_names.clone(),
            target_name: train.target_name.clone(),
            window: train.window,
            train_inputs,
            train_targets: train.targets.clone(),
            normalizer: train.normalizer.clone(),
            jitter,
            seed,
            config,
        }
    }

    pub fn model(&self) -> Result<GpModel> {
        GpModel::from_state(self.model.clone())
    }

    pub fn train_matrix(&self) -> Result<DMatrix<f64>> {
        let n = self.train_targets.len();
        let width = self.input_names.len() * self.window;
        if self.train_inputs.len() != n * width {
            return Err(Error::Shape("checkpoint training data size".into()));
        }
        Ok(DMatrix::from_row_slice(n, width, &self.train_inputs))
    }

    /// The trained model conditioned on its stored training windows.
    pub fn conditioned(&self) -> Result<ConditionedGp> {
        let y = DVector::from_column_slice(&self.train_targets);
        self.model()?.condition(&self.train_matrix()?, &y, &self.jitter)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let payload = serde_json::to_vec(self)?;
        let digest = hex::encode(Sha256::digest(&payload));
        let mut out = Vec::with_capacity(payload.len() + 96);
        writeln!(out, "{CHECKPOINT_VERSION} sha256={digest}").expect("write to Vec");
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or(Error::Checksum)?;
        let header = std::str::from_utf8(&bytes[..newline]).map_err(|_| Error::Checksum)?;
        let (version, digest) = header.split_once(' ').ok_or(Error::Checksum)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version.into(),
                expected: CHECKPOINT_VERSION.into(),
            });
        }
        let digest = digest.strip_prefix("sha256=").ok_or(Error::Checksum)?;
        let payload = &bytes[newline + 1..];
        if hex::encode(Sha256::digest(payload)) != digest {
            return Err(Error::Checksum);
        }
        Ok(serde_json::from_slice(payload)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_gradient_is_noop() {
        let cfg = TrainConfig::default();
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, &cfg);
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn adam_first_step() {
        let cfg = TrainConfig {
            learning_rate: 0.1,
            ..Default::default()
        };
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, &cfg);
        assert!((p[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
        let first = p[0];
        adam_step(&mut p, &[1.0], &mut s, &cfg);
        assert!((p[0] - first).abs() <= first.abs());
    }

    #[test]
    fn patience_stops_after_flat_run() {
        let k = 7;
        let mut es = EarlyStopping::new(50);
        let mut stopped = None;
        for epoch in 0..200 {
            let loss = if epoch <= k { 10.0 - epoch as f64 } else { 10.0 - k as f64 };
            es.observe(epoch, loss);
            if es.should_stop(epoch) {
                stopped = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped, Some(k + 50));
        assert_eq!(es.best_epoch(), Some(k));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            patience: 3000,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            validation_fraction: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn header_errors() {
        assert!(matches!(Checkpoint::from_bytes(b"no newline"), Err(Error::Checksum)));
        assert!(matches!(
            Checkpoint::from_bytes(b"causalgp-checkpoint-v0 sha256=00\n{}"),
            Err(Error::CheckpointVersion { .. })
        ));
    }
}
