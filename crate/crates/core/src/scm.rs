//! Synthetic benchmark from a nine-variable structural causal model:
//!
//! ```text
//! x5 = x1²
//! x6 = x2 · log(1 + |x4|) + x3
//! x7 = sin(x5) · cos(x5)
//! x8 = x6² + √|x5|
//! y  = tanh(x7) + cos(x8) + sin(x7 − x8) + x7 + x8
//! ```
//!
//! Root inputs are drawn i.i.d. per time step, the target gets additive
//! noise with std `zeta`, and every input column is observed through
//! additive measurement noise with std `tau`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::CausalGraph;
use crate::pipeline::Table;

pub const INPUT_NAMES: [&str; 8] = ["x1", "x2", "x3", "x4", "x5", "x6", "x7", "x8"];
pub const TARGET_NAME: &str = "y";

/// Distribution of the four root variables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputDistribution {
    StandardNormal,
    Normal { mean: f64, std: f64 },
    Uniform { low: f64, high: f64 },
}

impl Default for InputDistribution {
    fn default() -> Self {
        InputDistribution::StandardNormal
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScmConfig {
    pub n_samples: usize,
    pub train_count: usize,
    /// Target noise standard deviation.
    pub zeta: f64,
    /// Input measurement noise standard deviation.
    pub tau: f64,
    pub seed: u64,
    pub input_distribution: InputDistribution,
    /// Hard interventions `do(x_i = value)` applied to root variables.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub interventions: Vec<(String, f64)>,
}

impl Default for ScmConfig {
    fn default() -> Self {
        Self {
            n_samples: 10_000,
            train_count: 9_000,
            zeta: 0.01,
            tau: 0.01,
            seed: 0,
            input_distribution: InputDistribution::StandardNormal,
            interventions: Vec::new(),
        }
    }
}

impl ScmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::Config("scm.n_samples must be positive".into()));
        }
        if self.train_count == 0 || self.train_count >= self.n_samples {
            return Err(Error::Config(format!(
                "scm.train_count must be in 1..{}, got {}",
                self.n_samples, self.train_count
            )));
        }
        if !(self.zeta >= 0.0 && self.zeta.is_finite()) {
            return Err(Error::Config("scm.zeta must be a finite non-negative std".into()));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::Config("scm.tau must be a finite non-negative std".into()));
        }
        match self.input_distribution {
            InputDistribution::Normal { std, .. } if !(std > 0.0) => {
                return Err(Error::Config("scm.input_distribution.std must be positive".into()))
            }
            InputDistribution::Uniform { low, high } if !(high > low) => {
                return Err(Error::Config("scm.input_distribution needs low < high".into()))
            }
            _ => {}
        }
        for (name, _) in &self.interventions {
            if !INPUT_NAMES[..4].contains(&name.as_str()) {
                return Err(Error::Config(format!(
                    "interventions are supported on x1..x4 only, got `{name}`"
                )));
            }
        }
        Ok(())
    }
}

/// Latent values `(x5, x6, x7, x8, y_clean)` for given roots.
pub fn scm_eval(x1: f64, x2: f64, x3: f64, x4: f64) -> (f64, f64, f64, f64, f64) {
    let x5 = x1 * x1;
    let x6 = x2 * (1.0 + x4.abs()).ln() + x3;
    let x7 = x5.sin() * x5.cos();
    let x8 = x6 * x6 + x5.abs().sqrt();
    let y = x7.tanh() + x8.cos() + (x7 - x8).sin() + x7 + x8;
    (x5, x6, x7, x8, y)
}

/// Generated samples. Columns follow [`INPUT_NAMES`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScmDataset {
    /// Noisy measurements of x1..x8, one row per time step.
    pub measured: Vec<[f64; 8]>,
    /// Noise-free x1..x8.
    pub clean: Vec<[f64; 8]>,
    pub y: Vec<f64>,
    pub y_clean: Vec<f64>,
}

impl ScmDataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Measured inputs and noisy target as a table with columns x1..x8, y.
    pub fn to_table(&self) -> Table {
        let mut names: Vec<String> = INPUT_NAMES.iter().map(|s| s.to_string()).collect();
        names.push(TARGET_NAME.into());
        let mut columns: Vec<Vec<f64>> = (0..8)
            .map(|c| self.measured.iter().map(|r| r[c]).collect())
            .collect();
        columns.push(self.y.clone());
        Table::new(names, columns).expect("consistent column lengths")
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> ScmDataset {
        ScmDataset {
            measured: self.measured[range.clone()].to_vec(),
            clean: self.clean[range.clone()].to_vec(),
            y: self.y[range.clone()].to_vec(),
            y_clean: self.y_clean[range].to_vec(),
        }
    }
}

/// Samples the benchmark. Every row consumes the same number of random
/// draws in the same order (4 roots, 8 measurement noises, 1 target noise),
/// so interventions and zero noise levels never shift the stream.
pub fn generate(cfg: &ScmConfig) -> Result<ScmDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_samples;
    let mut out = ScmDataset {
        measured: Vec::with_capacity(n),
        clean: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
        y_clean: Vec::with_capacity(n),
    };
    let uniform = match cfg.input_distribution {
        InputDistribution::Uniform { low, high } => {
            Some(Uniform::new(low, high).map_err(|e| Error::Config(e.to_string()))?)
        }
        _ => None,
    };
    let normal = match cfg.input_distribution {
        InputDistribution::Normal { mean, std } => {
            Some(Normal::new(mean, std).map_err(|e| Error::Config(e.to_string()))?)
        }
        _ => None,
    };
    let intervention: Vec<Option<f64>> = INPUT_NAMES[..4]
        .iter()
        .map(|name| {
            cfg.interventions
                .iter()
                .rev()
                .find(|(n, _)| n == name)
                .map(|&(_, v)| v)
        })
        .collect();
    for _ in 0..n {
        let mut roots = [0.0; 4];
        for (i, r) in roots.iter_mut().enumerate() {
            let draw = match (&uniform, &normal) {
                (Some(u), _) => u.sample(&mut rng),
                (_, Some(nd)) => nd.sample(&mut rng),
                _ => StandardNormal.sample(&mut rng),
            };
            *r = intervention[i].unwrap_or(draw);
        }
        let (x5, x6, x7, x8, y_clean) = scm_eval(roots[0], roots[1], roots[2], roots[3]);
        let clean = [roots[0], roots[1], roots[2], roots[3], x5, x6, x7, x8];
        let mut measured = clean;
        for m in &mut measured {
            let eta: f64 = StandardNormal.sample(&mut rng);
            *m += cfg.tau * eta;
        }
        let eps: f64 = StandardNormal.sample(&mut rng);
        out.clean.push(clean);
        out.measured.push(measured);
        out.y_clean.push(y_clean);
        out.y.push(y_clean + cfg.zeta * eps);
    }
    Ok(out)
}

/// First `train_count` rows for training, the rest for testing.
pub fn split(ds: &ScmDataset, train_count: usize) -> Result<(ScmDataset, ScmDataset)> {
    if train_count >= ds.len() {
        return Err(Error::InvalidArgument(format!(
            "train_count {train_count} must be less than the {} rows",
            ds.len()
        )));
    }
    Ok((ds.slice(0..train_count), ds.slice(train_count..ds.len())))
}

/// The benchmark's causal graph, with `y` as target.
pub fn illustrative_graph() -> CausalGraph {
    let mut names: Vec<String> = INPUT_NAMES.iter().map(|s| s.to_string()).collect();
    names.push(TARGET_NAME.into());
    let edges = vec![
        (0, 4), // x1 -> x5
        (1, 5), // x2 -> x6
        (2, 5), // x3 -> x6
        (3, 5), // x4 -> x6
        (4, 6), // x5 -> x7
        (4, 7), // x5 -> x8
        (5, 7), // x6 -> x8
        (6, 8), // x7 -> y
        (7, 8), // x8 -> y
    ];
    CausalGraph::new(names, edges, Some(8)).expect("benchmark graph is a DAG")
}
