//! Command-line interface: config handling, subcommands and the table
//! reproductions.

pub mod commands;
pub mod config;
pub mod experiment;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;
use crate::evaluation::Units;
pub use commands::Outcome;
pub use config::{RunConfig, Split, Variant};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;
pub const EXIT_THRESHOLD: u8 = 5;

#[derive(Debug, Parser)]
#[command(name = "causalgp", version, about = "Gaussian process regression with causal-graph deep kernels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic benchmark dataset and its causal graph.
    Generate(Flags),
    /// Train a model and write a checkpoint and per-epoch trace.
    Train(Flags),
    /// Predict with uncertainty from a checkpoint.
    Predict(Flags),
    /// Score a checkpoint and write metrics and Q-Q data.
    Evaluate(Flags),
    /// Compare RBF, MLP and GCN kernels across training sizes.
    ReproTable1(Flags),
    /// Compare the GCN kernel under correct, partial and incorrect graphs.
    ReproTable3(Flags),
    /// Check analytic gradients against central finite differences.
    GradCheck(Flags),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_parser = ["normalized", "original"])]
    pub units: Option<String>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub split: Option<Split>,
    #[arg(long)]
    pub train_count: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Target noise std for `generate`.
    #[arg(long)]
    pub zeta: Option<f64>,
    /// Input measurement noise std for `generate`.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub n_samples: Option<usize>,
    /// Training sizes for `repro-table1`, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
}

impl Flags {
    /// Loads the config file (or defaults), applies overrides and derives
    /// component seeds.
    pub fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.variant {
            cfg.variant = v;
        }
        if let Some(v) = self.window {
            cfg.window = v;
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if let Some(v) = &self.units {
            cfg.units = v.parse::<Units>()?;
        }
        if let Some(v) = &self.dataset {
            cfg.data.dataset = Some(v.clone());
        }
        if let Some(v) = &self.graph {
            cfg.data.graph = Some(v.clone());
        }
        if let Some(v) = &self.checkpoint {
            cfg.data.checkpoint = Some(v.clone());
        }
        if let Some(v) = self.split {
            cfg.data.split = v;
        }
        if let Some(v) = self.train_count {
            cfg.data.train_count = Some(v);
            cfg.scm.train_count = v;
        }
        if let Some(v) = self.max_epochs {
            cfg.train.max_epochs = v;
        }
        match self.patience {
            Some(v) => cfg.train.patience = v,
            None if self.max_epochs.is_some() => {
                cfg.train.patience = cfg.train.patience.min(cfg.train.max_epochs);
            }
            None => {}
        }
        if let Some(v) = self.learning_rate {
            cfg.train.learning_rate = v;
        }
        if let Some(v) = self.zeta {
            cfg.scm.zeta = v;
        }
        if let Some(v) = self.tau {
            cfg.scm.tau = v;
        }
        if let Some(v) = self.n_samples {
            cfg.scm.n_samples = v;
        }
        if let Some(v) = &self.sizes {
            cfg.table1.sizes = v.clone();
        }
        cfg.resolve()
    }
}

/// Exit status for a library error.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io { .. }
        | Error::Csv(_)
        | Error::Json(_)
        | Error::Checksum
        | Error::CheckpointVersion { .. }
        | Error::MissingColumn(_)
        | Error::NonNumeric { .. }
        | Error::EmptyInput(_) => EXIT_IO,
        Error::Factorization { .. } | Error::NonFiniteLoss { .. } | Error::Numerical(_) => {
            EXIT_NUMERICAL
        }
        _ => EXIT_CONFIG,
    }
}

pub fn execute(command: &Command) -> Result<Outcome, Error> {
    let (flags, run): (&Flags, fn(&RunConfig) -> Result<Outcome, Error>) = match command {
        Command::Generate(f) => (f, commands::generate),
        Command::Train(f) => (f, commands::train_cmd),
        Command::Predict(f) => (f, commands::predict),
        Command::Evaluate(f) => (f, commands::evaluate),
        Command::ReproTable1(f) => (f, commands::repro_table1),
        Command::ReproTable3(f) => (f, commands::repro_table3),
        Command::GradCheck(f) => (f, commands::grad_check),
    };
    run(&flags.resolve()?)
}

pub fn run(cli: Cli) -> ExitCode {
    match execute(&cli.command) {
        Ok(outcome) => {
            for p in &outcome.outputs {
                eprintln!("wrote {}", p.display());
            }
            if outcome.passed {
                ExitCode::from(EXIT_OK)
            } else {
                eprintln!("error: acceptance thresholds not met");
                ExitCode::from(EXIT_THRESHOLD)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
