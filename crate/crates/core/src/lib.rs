//! Exact Gaussian process regression with three kernel families:
//! an ARD-RBF kernel on flattened input windows, a deep kernel over a
//! learned MLP or 1-D CNN feature map, and a causal-graph deep kernel whose
//! feature map is a graph convolutional network over a user supplied DAG.
//!
//! The crate also ships the synthetic structural-causal-model benchmark,
//! quantile normalization and windowing, marginal-likelihood training with
//! Adam and early stopping, and the evaluation metrics used to compare the
//! models.

pub mod cli;
pub mod error;
pub mod evaluation;
pub mod extractors;
pub mod gp;
pub mod graph;
pub mod linalg;
pub mod pipeline;
pub mod scm;
pub mod training;

pub use error::{Error, Result};
pub use evaluation::{EvalReport, QqData};
pub use extractors::{Extractor, ExtractorParams, ExtractorSpec};
pub use gp::{ConditionedGp, GpModel, PredictiveDistribution, RbfParams};
pub use graph::{CausalGraph, PropagationOperator};
pub use pipeline::{QuantileTransform, Table, WindowedDataset};
pub use scm::{ScmConfig, ScmDataset};
pub use training::{TrainConfig, TrainTrace};
