use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::Units;
use crate::extractors::{Activation, SubsamplePolicy};
use crate::scm::ScmConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
pub enum Variant {
    #[serde(rename = "rbf")]
    #[value(name = "rbf")]
    Rbf,
    #[serde(rename = "drbf-mlp")]
    #[value(name = "drbf-mlp")]
    DrbfMlp,
    #[serde(rename = "drbf-cnn")]
    #[value(name = "drbf-cnn")]
    DrbfCnn,
    #[serde(rename = "drbf-gcn")]
    #[value(name = "drbf-gcn")]
    DrbfGcn,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Rbf,
        Variant::DrbfMlp,
        Variant::DrbfCnn,
        Variant::DrbfGcn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Rbf => "rbf",
            Variant::DrbfMlp => "drbf-mlp",
            Variant::DrbfCnn => "drbf-cnn",
            Variant::DrbfGcn => "drbf-gcn",
        }
    }

    /// Row label used in the comparison tables.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Rbf => "GP (RBF)",
            Variant::DrbfMlp => "GP (DRBF-MLP)",
            Variant::DrbfCnn => "GP (DRBF-CNN)",
            Variant::DrbfGcn => "GP (DRBF-GCN)",
        }
    }

    pub fn needs_graph(self) -> bool {
        self == Variant::DrbfGcn
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub dataset: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub target: String,
    /// Input columns in window-row order; all non-target columns if unset.
    pub inputs: Option<Vec<String>>,
    /// Leading rows used for training; 90% of rows if unset.
    pub train_count: Option<usize>,
    /// Split scored by `evaluate` and `predict`.
    pub split: Split,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            graph: None,
            checkpoint: None,
            target: "y".into(),
            inputs: None,
            train_count: None,
            split: Split::Test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub mlp_widths: Vec<usize>,
    pub mlp_activation: Activation,
    pub cnn_conv1_channels: usize,
    pub cnn_conv2_channels: usize,
    pub cnn_kernel_width: usize,
    pub cnn_pool_width: usize,
    pub cnn_dense_widths: Vec<usize>,
    pub gcn_widths: Vec<usize>,
    pub gcn_subsample_count: usize,
    pub gcn_subsample_policy: SubsamplePolicy,
    pub gcn_symmetrize: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mlp_widths: vec![64, 32, 3],
            mlp_activation: Activation::Relu,
            cnn_conv1_channels: 256,
            cnn_conv2_channels: 128,
            cnn_kernel_width: 3,
            cnn_pool_width: 2,
            cnn_dense_widths: vec![100, 50, 25, 10, 3],
            gcn_widths: vec![32, 16, 8, 4],
            gcn_subsample_count: 3,
            gcn_subsample_policy: SubsamplePolicy::CausalPriority,
            gcn_symmetrize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Table1Config {
    pub sizes: Vec<usize>,
    pub variants: Vec<Variant>,
    /// Training size at which the GCN variant must beat the baselines.
    pub small_size: usize,
    /// Upper bound on the GCN variant's RMSE at `small_size`.
    pub small_max_gcn_rmse: f64,
    /// Training size at which all variants must converge.
    pub large_size: usize,
    /// Upper bound on every RMSE at `large_size`.
    pub large_max_rmse: f64,
    /// Upper bound on the max pairwise RMSE spread at `large_size`.
    pub large_max_spread: f64,
    /// Lower bound on GCN / RBF mean epoch time.
    pub min_epoch_time_ratio: f64,
}

impl Default for Table1Config {
    fn default() -> Self {
        Self {
            sizes: vec![1000, 5000, 9000],
            variants: vec![Variant::Rbf, Variant::DrbfMlp, Variant::DrbfGcn],
            small_size: 1000,
            small_max_gcn_rmse: 0.30,
            large_size: 9000,
            large_max_rmse: 0.25,
            large_max_spread: 0.08,
            min_epoch_time_ratio: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Table3Config {
    pub train_count: usize,
    pub min_r2_correct: f64,
    /// R² of the incorrect-graph model must be strictly below this.
    pub max_r2_incorrect: f64,
}

impl Default for Table3Config {
    fn default() -> Self {
        Self {
            train_count: 1000,
            min_r2_correct: 0.85,
            max_r2_incorrect: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    pub n_points: usize,
    pub step: f64,
    pub tolerance_raw: f64,
    pub tolerance_deep: f64,
    pub variants: Vec<Variant>,
    /// Window length for the check (the CNN needs at least its kernel width).
    pub window: usize,
    /// Architectures for the check; the CNN is scaled down so central
    /// differences over every weight stay fast.
    pub model: ModelConfig,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            n_points: 10,
            step: 1e-5,
            tolerance_raw: 1e-5,
            tolerance_deep: 1e-4,
            variants: Variant::ALL.to_vec(),
            window: 4,
            model: ModelConfig {
                cnn_conv1_channels: 6,
                cnn_conv2_channels: 4,
                cnn_dense_widths: vec![8, 5, 3],
                ..ModelConfig::default()
            },
        }
    }
}

/// Everything a command needs. Loaded from TOML; command-line flags
/// override individual fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; data, graph perturbation and initialization seeds are
    /// derived from it.
    pub seed: u64,
    pub out: PathBuf,
    pub units: Units,
    pub variant: Variant,
    pub window: usize,
    pub data: DataConfig,
    pub scm: ScmConfig,
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub table1: Table1Config,
    pub table3: Table3Config,
    pub grad_check: GradCheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            units: Units::Normalized,
            variant: Variant::Rbf,
            window: 1,
            data: DataConfig::default(),
            scm: ScmConfig::default(),
            train: TrainConfig::default(),
            model: ModelConfig::default(),
            table1: Table1Config::default(),
            table3: Table3Config::default(),
            grad_check: GradCheckConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Fills derived fields (per-component seeds) after overrides.
    pub fn resolve(mut self) -> Result<Self> {
        self.scm.seed = derive_seed(self.seed, "scm");
        self.train.seed = derive_seed(self.seed, "train");
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::Config("window must be at least 1".into()));
        }
        self.scm.validate()?;
        self.train.validate()?;
        if self.grad_check.n_points == 0 || self.grad_check.n_points > 30 {
            return Err(Error::Config("grad_check.n_points must be in 1..=30".into()));
        }
        if !(self.grad_check.step > 0.0) {
            return Err(Error::Config("grad_check.step must be positive".into()));
        }
        Ok(())
    }

    /// Checks the accuracy-table settings against the generated dataset.
    pub fn validate_table1(&self) -> Result<()> {
        if self.table1.sizes.is_empty() {
            return Err(Error::Config("table1.sizes must not be empty".into()));
        }
        for &n in &self.table1.sizes {
            if n < 2 || n > self.scm.train_count {
                return Err(Error::Config(format!(
                    "table1.sizes entry {n} must be in 2..={}",
                    self.scm.train_count
                )));
            }
        }
        Ok(())
    }

    /// Checks the graph-comparison settings against the generated dataset.
    pub fn validate_table3(&self) -> Result<()> {
        if self.table3.train_count < 2 || self.table3.train_count > self.scm.train_count {
            return Err(Error::Config(format!(
                "table3.train_count must be in 2..={}",
                self.scm.train_count
            )));
        }
        Ok(())
    }
}

/// Deterministic child seed for a named component.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    // FNV-1a over the tag, then a splitmix64 finalizer
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = master ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = RunConfig::from_toml("variant = \"drbf-gcn\"\n[train]\nmax_epochs = 5\n").unwrap();
        assert_eq!(cfg.variant, Variant::DrbfGcn);
        assert_eq!(cfg.train.max_epochs, 5);
        assert_eq!(cfg.train.patience, 50);
    }

    #[test]
    fn unknown_field_is_named() {
        let err = RunConfig::from_toml("[train]\nlearning_rte = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("learning_rte"));
    }

    #[test]
    fn derived_seeds_differ_by_tag() {
        assert_ne!(derive_seed(0, "scm"), derive_seed(0, "train"));
        assert_eq!(derive_seed(7, "scm"), derive_seed(7, "scm"));
        assert_ne!(derive_seed(7, "scm"), derive_seed(8, "scm"));
    }
}
