//! Python bindings for the `causalgp` crate.
//!
//! Matrices cross the boundary as lists of rows (`list[list[float]]`).

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use causalgp::cli::config::ModelConfig;
use causalgp::cli::experiment::build_model;
use causalgp::cli::Variant;
use causalgp::evaluation::{metrics as eval_metrics, Units};
use causalgp::linalg::JitterConfig;
use causalgp::training::{gradient_check, train, TrainConfig};
use causalgp::{scm, Error, GpModel, WindowedDataset};

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Io { .. } => PyIOError::new_err(err.to_string()),
        Error::Factorization { .. } | Error::NonFiniteLoss { .. } | Error::Numerical(_) => {
            PyRuntimeError::new_err(err.to_string())
        }
        _ => PyValueError::new_err(err.to_string()),
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Ok(DMatrix::from_fn(n, d, |i, j| rows[i][j]))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Evaluates the benchmark's structural equations.
#[pyfunction]
fn scm_eval(x1: f64, x2: f64, x3: f64, x4: f64) -> (f64, f64, f64, f64, f64) {
    scm::scm_eval(x1, x2, x3, x4)
}

/// Generates the synthetic benchmark; returns column name -> values.
#[pyfunction]
#[pyo3(signature = (n_samples=10000, train_count=9000, zeta=0.01, tau=0.01, seed=0))]
fn generate_scm(
    n_samples: usize,
    train_count: usize,
    zeta: f64,
    tau: f64,
    seed: u64,
) -> PyResult<BTreeMap<String, Vec<f64>>> {
    let cfg = scm::ScmConfig {
        n_samples,
        train_count,
        zeta,
        tau,
        seed,
        ..Default::default()
    };
    let table = scm::generate(&cfg).map_err(to_py)?.to_table();
    Ok(table
        .names()
        .iter()
        .cloned()
        .zip(table.columns().iter().cloned())
        .collect())
}

/// Regression metrics as a dict.
#[pyfunction]
fn metrics(predicted: Vec<f64>, truth: Vec<f64>) -> PyResult<BTreeMap<String, Option<f64>>> {
    let r = eval_metrics(&predicted, &truth, Units::Normalized).map_err(to_py)?;
    Ok(BTreeMap::from([
        ("n".to_string(), Some(r.n as f64)),
        ("rmse".to_string(), Some(r.rmse)),
        ("mae".to_string(), Some(r.mae)),
        ("r_squared".to_string(), r.r_squared),
        ("p90_abs_error".to_string(), Some(r.p90_abs_error)),
        ("p95_abs_error".to_string(), Some(r.p95_abs_error)),
        ("p98_abs_error".to_string(), Some(r.p98_abs_error)),
    ]))
}

#[pyclass(name = "CausalGraph", module = "pycausalgp", frozen)]
struct PyCausalGraph {
    inner: causalgp::CausalGraph,
}

#[pymethods]
impl PyCausalGraph {
    #[new]
    #[pyo3(signature = (nodes, edges, target=None))]
    fn new(nodes: Vec<String>, edges: Vec<(String, String)>, target: Option<String>) -> PyResult<Self> {
        let file = causalgp::graph::GraphFile {
            nodes,
            edges: edges.into_iter().map(|(a, b)| [a, b]).collect(),
            target,
        };
        let inner = causalgp::CausalGraph::from_file(&file).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// The benchmark's nine-node graph.
    #[staticmethod]
    fn illustrative() -> Self {
        Self {
            inner: scm::illustrative_graph(),
        }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = causalgp::CausalGraph::parse(text).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn nodes(&self) -> Vec<String> {
        self.inner.node_names().to_vec()
    }

    #[getter]
    fn edges(&self) -> Vec<(String, String)> {
        let names = self.inner.node_names();
        self.inner
            .edges()
            .iter()
            .map(|&(a, b)| (names[a].clone(), names[b].clone()))
            .collect()
    }

    fn is_acyclic(&self) -> bool {
        self.inner.is_acyclic()
    }

    /// Graph without the target node.
    fn restrict_to_inputs(&self) -> PyResult<Self> {
        let inner = self.inner.restrict_to_inputs().map_err(to_py)?;
        Ok(Self { inner })
    }

    #[pyo3(signature = (symmetrize=true))]
    fn propagation_operator(&self, symmetrize: bool) -> Vec<Vec<f64>> {
        rows_of(&self.inner.propagation_operator(symmetrize).matrix)
    }

    fn __repr__(&self) -> String {
        format!(
            "CausalGraph(nodes={}, edges={})",
            self.inner.node_count(),
            self.inner.edges().len()
        )
    }
}

#[pyclass(name = "QuantileTransform", module = "pycausalgp", frozen)]
struct PyQuantileTransform {
    inner: causalgp::QuantileTransform,
}

#[pymethods]
impl PyQuantileTransform {
    #[new]
    fn new(values: Vec<f64>) -> PyResult<Self> {
        let inner = causalgp::QuantileTransform::fit(&values).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn transform(&self, values: Vec<f64>) -> Vec<f64> {
        values.iter().map(|&v| self.inner.transform(v)).collect()
    }

    fn inverse(&self, values: Vec<f64>) -> PyResult<Vec<f64>> {
        values
            .iter()
            .map(|&u| self.inner.inverse(u).map_err(to_py))
            .collect()
    }
}

/// A GP regressor with an optional deep feature extractor.
///
/// Inputs are rows of `len(input_names) * window` values laid out one
/// variable after another, each holding its `window` most recent steps.
#[pyclass(name = "GaussianProcess", module = "pycausalgp")]
struct PyGaussianProcess {
    model: GpModel,
    /// Column blocks of user rows in the order the model expects.
    block_order: Vec<usize>,
    window: usize,
    jitter: JitterConfig,
    train_x: Option<DMatrix<f64>>,
    train_y: Option<DVector<f64>>,
}

impl PyGaussianProcess {
    fn model_rows(&self, rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
        let x = matrix(rows)?;
        let width = self.block_order.len() * self.window;
        if x.ncols() != width {
            return Err(PyValueError::new_err(format!(
                "expected rows of {width} values, got {}",
                x.ncols()
            )));
        }
        let w = self.window;
        Ok(DMatrix::from_fn(x.nrows(), width, |i, j| {
            x[(i, self.block_order[j / w] * w + j % w)]
        }))
    }

    fn conditioned(&self) -> PyResult<causalgp::ConditionedGp> {
        match (&self.train_x, &self.train_y) {
            (Some(x), Some(y)) => self.model.condition(x, y, &self.jitter).map_err(to_py),
            _ => Err(PyRuntimeError::new_err("call fit() before predicting")),
        }
    }
}

#[pymethods]
impl PyGaussianProcess {
    /// `variant` is one of "rbf", "drbf-mlp", "drbf-cnn", "drbf-gcn";
    /// the GCN variant needs a graph whose nodes cover `input_names`.
    #[new]
    #[pyo3(signature = (input_names, variant="rbf", window=1, graph=None, seed=0))]
    fn new(
        input_names: Vec<String>,
        variant: &str,
        window: usize,
        graph: Option<PyRef<'_, PyCausalGraph>>,
        seed: u64,
    ) -> PyResult<Self> {
        let variant = Variant::ALL
            .into_iter()
            .find(|v| v.name() == variant)
            .ok_or_else(|| PyValueError::new_err(format!("unknown variant {variant:?}")))?;
        if window == 0 {
            return Err(PyValueError::new_err("window must be at least 1"));
        }
        let graph = graph.map(|g| g.inner.clone());
        let (model, order) = build_model(
            variant,
            &ModelConfig::default(),
            &input_names,
            window,
            graph.as_ref(),
            seed,
        )
        .map_err(to_py)?;
        let block_order = order
            .iter()
            .map(|n| input_names.iter().position(|m| m == n).expect("model inputs come from input_names"))
            .collect();
        Ok(Self {
            model,
            block_order,
            window,
            jitter: JitterConfig::default(),
            train_x: None,
            train_y: None,
        })
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.model.param_count()
    }

    #[getter]
    fn noise_variance(&self) -> f64 {
        self.model.noise_variance()
    }

    /// Flat parameter vector: log length scales, log signal variance,
    /// log noise variance, then extractor weights.
    #[getter]
    fn get_params(&self) -> Vec<f64> {
        self.model.to_flat()
    }

    #[setter]
    fn set_params(&mut self, flat: Vec<f64>) -> PyResult<()> {
        self.model.set_flat(&flat).map_err(to_py)
    }

    /// Trains with Adam on the negative log marginal likelihood and early
    /// stopping on the tail of the data; returns a summary of the run.
    #[pyo3(signature = (x, y, learning_rate=0.01, max_epochs=2000, patience=50, seed=0))]
    fn fit(
        &mut self,
        py: Python<'_>,
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        learning_rate: f64,
        max_epochs: usize,
        patience: usize,
        seed: u64,
    ) -> PyResult<BTreeMap<String, f64>> {
        let inputs = self.model_rows(&x)?;
        if inputs.nrows() != y.len() {
            return Err(PyValueError::new_err("x and y have different lengths"));
        }
        let data = WindowedDataset {
            input_names: Vec::new(),
            target_name: String::new(),
            window: self.window,
            timestamps: (0..y.len()).collect(),
            inputs: inputs.clone(),
            targets: y.clone(),
            normalizer: None,
        };
        let cfg = TrainConfig {
            learning_rate,
            max_epochs,
            patience: patience.min(max_epochs),
            seed,
            jitter: self.jitter,
            ..Default::default()
        };
        let model = self.model.clone();
        let (model, trace) = py
            .detach(|| train(&model, &data, &cfg))
            .map_err(to_py)?;
        self.model = model;
        self.train_x = Some(inputs);
        self.train_y = Some(DVector::from_vec(y));
        Ok(BTreeMap::from([
            ("epochs".to_string(), trace.epochs() as f64),
            ("best_epoch".to_string(), trace.best_epoch as f64),
            ("best_val_loss".to_string(), trace.best_val_loss()),
            ("mean_epoch_seconds".to_string(), trace.mean_epoch_seconds()),
        ]))
    }

    /// Predictive means and variances; noise is included by default.
    #[pyo3(signature = (x, include_noise=true))]
    fn predict(&self, x: Vec<Vec<f64>>, include_noise: bool) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let xs = self.model_rows(&x)?;
        let pred = self
            .conditioned()?
            .predict(&xs, include_noise, false)
            .map_err(to_py)?;
        Ok((pred.means, pred.variances))
    }

    /// Log marginal likelihood of `y` at the current parameters.
    fn log_marginal_likelihood(&self, x: Vec<Vec<f64>>, y: Vec<f64>) -> PyResult<f64> {
        let xs = self.model_rows(&x)?;
        let cond = self
            .model
            .condition(&xs, &DVector::from_vec(y), &self.jitter)
            .map_err(to_py)?;
        Ok(cond.log_marginal_likelihood())
    }

    /// Central-difference check of the analytic gradients; returns
    /// `(max_relative_error, passed)`.
    #[pyo3(signature = (x, y, step=1e-5, tolerance=1e-4))]
    fn gradient_check(
        &self,
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        step: f64,
        tolerance: f64,
    ) -> PyResult<(f64, bool)> {
        let xs = self.model_rows(&x)?;
        let r = gradient_check(&self.model, &xs, &DVector::from_vec(y), step, tolerance, &self.jitter)
            .map_err(to_py)?;
        Ok((r.max_rel_error, r.passed))
    }
}

#[pymodule]
fn pycausalgp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(scm_eval, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scm, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_class::<PyCausalGraph>()?;
    m.add_class::<PyQuantileTransform>()?;
    m.add_class::<PyGaussianProcess>()?;
    Ok(())
}
