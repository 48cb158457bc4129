//! Model construction and the train/score path shared by the commands and
//! the table reproductions.

use serde::{Deserialize, Serialize};

use super::config::{derive_seed, ModelConfig, RunConfig, Variant};
use crate::error::{Error, Result};
use crate::evaluation::{metrics, EvalReport, Units};
use crate::extractors::{CnnSpec, Extractor, ExtractorSpec, GcnSpec, MlpSpec};
use crate::gp::{GpModel, PredictiveDistribution};
use crate::graph::{CausalGraph, PerturbMode};
use crate::pipeline::{prepare_split, Table, WindowedDataset};
use crate::scm;
use crate::training::{train, StopReason, TrainConfig, TrainTrace};

/// Builds an untrained model and the input columns it expects, in window
/// row order.
pub fn build_model(
    variant: Variant,
    model: &ModelConfig,
    inputs: &[String],
    window: usize,
    graph: Option<&CausalGraph>,
    seed: u64,
) -> Result<(GpModel, Vec<String>)> {
    let n = inputs.len();
    let spec = match variant {
        Variant::Rbf => return Ok((GpModel::raw(n * window), inputs.to_vec())),
        Variant::DrbfMlp => ExtractorSpec::Mlp(MlpSpec {
            input_dim: n * window,
            layer_widths: model.mlp_widths.clone(),
            activation: model.mlp_activation,
        }),
        Variant::DrbfCnn => ExtractorSpec::Cnn(CnnSpec {
            n_inputs: n,
            window,
            conv1_channels: model.cnn_conv1_channels,
            conv2_channels: model.cnn_conv2_channels,
            kernel_width: model.cnn_kernel_width,
            pool_width: model.cnn_pool_width,
            dense_widths: model.cnn_dense_widths.clone(),
        }),
        Variant::DrbfGcn => {
            let graph = graph.ok_or_else(|| {
                Error::Config("variant drbf-gcn requires a causal graph (data.graph)".into())
            })?;
            ExtractorSpec::Gcn(GcnSpec {
                window,
                widths: model.gcn_widths.clone(),
                subsample_count: model.gcn_subsample_count,
                subsample_policy: model.gcn_subsample_policy,
                symmetrize: model.gcn_symmetrize,
                graph: graph.to_file(),
            })
        }
    };
    let extractor = Extractor::new(spec, seed)?;
    let names = match extractor.gcn() {
        Some(g) => {
            let names = g.input_names().to_vec();
            if let Some(missing) = names.iter().find(|n| !inputs.contains(n)) {
                return Err(Error::MissingColumn(missing.clone()));
            }
            names
        }
        None => inputs.to_vec(),
    };
    Ok((GpModel::deep(extractor), names))
}

/// Trained model plus its predictions on a test split.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: GpModel,
    pub trace: TrainTrace,
    pub train: WindowedDataset,
    pub test: WindowedDataset,
    pub prediction: PredictiveDistribution,
    pub normalized: EvalReport,
    pub original: EvalReport,
}

/// Normalizes, windows, trains, conditions on every training window and
/// scores the test windows in both unit systems.
#[allow(clippy::too_many_arguments)]
pub fn fit_and_score(
    table: &Table,
    model: &GpModel,
    inputs: &[String],
    target: &str,
    window: usize,
    train_end: usize,
    test_start: usize,
    cfg: &TrainConfig,
) -> Result<FitResult> {
    let (train_ds, test_ds) = prepare_split(table, inputs, target, window, train_end, test_start)?;
    let (model, trace) = train(model, &train_ds, cfg)?;
    let cond = model.condition(&train_ds.inputs, &train_ds.target_vector(), &cfg.jitter)?;
    let prediction = cond.predict(&test_ds.inputs, true, false)?;
    let normalized = metrics(&prediction.means, &test_ds.targets, Units::Normalized)?;
    let t = test_ds
        .normalizer
        .as_ref()
        .expect("prepared split carries its normalizer")
        .get(target)?;
    let orig_means: Vec<f64> = prediction.means.iter().map(|&m| t.inverse_clamped(m)).collect();
    let orig_truth: Vec<f64> = test_ds.targets.iter().map(|&v| t.inverse_clamped(v)).collect();
    let original = metrics(&orig_means, &orig_truth, Units::Original)?;
    Ok(FitResult {
        model,
        trace,
        train: train_ds,
        test: test_ds,
        prediction,
        normalized,
        original,
    })
}

/// One pass/fail line of a reproduction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            detail,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "[{}] {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub variant: Variant,
    pub label: String,
    pub n_train: usize,
    pub normalized: EvalReport,
    pub original: EvalReport,
    pub epochs: usize,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
    pub mean_epoch_seconds: f64,
    pub final_params: Vec<f64>,
}

impl RunSummary {
    fn new(variant: Variant, label: String, n_train: usize, fit: &FitResult) -> Self {
        Self {
            variant,
            label,
            n_train,
            normalized: fit.normalized.clone(),
            original: fit.original.clone(),
            epochs: fit.trace.epochs(),
            best_epoch: fit.trace.best_epoch,
            stop_reason: fit.trace.stop_reason,
            mean_epoch_seconds: fit.trace.mean_epoch_seconds(),
            final_params: fit.model.to_flat(),
        }
    }
}

fn input_names() -> Vec<String> {
    scm::INPUT_NAMES.iter().map(|s| s.to_string()).collect()
}

fn progress(msg: &str) {
    if std::env::var_os("CAUSALGP_QUIET").is_none() {
        eprintln!("{msg}");
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Result {
    pub sizes: Vec<usize>,
    pub runs: Vec<RunSummary>,
    pub checks: Vec<Check>,
}

impl Table1Result {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn rmse(&self, variant: Variant, n: usize) -> Option<f64> {
        self.runs
            .iter()
            .find(|r| r.variant == variant && r.n_train == n)
            .map(|r| r.normalized.rmse)
    }

    /// Plain-text table: one row per model, one RMSE column per size.
    pub fn render(&self) -> String {
        let mut out = String::from("Accuracy of the GP models (RMSE, normalized space)\n");
        out.push_str(&format!("{:<16}", "Model"));
        for n in &self.sizes {
            out.push_str(&format!("{:>12}", format!("N = {n}")));
        }
        out.push('\n');
        let mut seen = Vec::new();
        for r in &self.runs {
            if seen.contains(&r.variant) {
                continue;
            }
            seen.push(r.variant);
            out.push_str(&format!("{:<16}", r.label));
            for &n in &self.sizes {
                match self.rmse(r.variant, n) {
                    Some(v) => out.push_str(&format!("{v:>12.4}")),
                    None => out.push_str(&format!("{:>12}", "-")),
                }
            }
            out.push('\n');
        }
        for c in &self.checks {
            out.push_str(&c.line());
            out.push('\n');
        }
        out
    }
}

/// Trains each configured variant at each training size on one generated
/// benchmark and scores all of them on the same held-out tail.
pub fn run_table1(cfg: &RunConfig) -> Result<Table1Result> {
    cfg.validate_table1()?;
    let ds = scm::generate(&cfg.scm)?;
    let table = ds.to_table();
    let graph = scm::illustrative_graph();
    let inputs = input_names();
    let test_start = cfg.scm.train_count;
    let mut runs = Vec::new();
    for &n in &cfg.table1.sizes {
        for &variant in &cfg.table1.variants {
            progress(&format!("table1: training {variant} on N = {n}"));
            let seed = derive_seed(cfg.seed, &format!("table1/{variant}/{n}"));
            let (model, names) =
                build_model(variant, &cfg.model, &inputs, cfg.window, Some(&graph), seed)?;
            let fit = fit_and_score(
                &table, &model, &names, scm::TARGET_NAME, cfg.window, n, test_start, &cfg.train,
            )?;
            runs.push(RunSummary::new(variant, variant.label().into(), n, &fit));
        }
    }
    let mut result = Table1Result {
        sizes: cfg.table1.sizes.clone(),
        runs,
        checks: Vec::new(),
    };
    result.checks = table1_checks(&result, cfg);
    Ok(result)
}

fn table1_checks(r: &Table1Result, cfg: &RunConfig) -> Vec<Check> {
    let t = &cfg.table1;
    let mut checks = Vec::new();
    let get = |v, n| r.rmse(v, n);
    if let (Some(gcn), Some(rbf), Some(mlp)) = (
        get(Variant::DrbfGcn, t.small_size),
        get(Variant::Rbf, t.small_size),
        get(Variant::DrbfMlp, t.small_size),
    ) {
        let n = t.small_size;
        checks.push(Check::new(
            format!("N={n} GCN below RBF"),
            gcn < rbf,
            format!("{gcn:.4} vs {rbf:.4}"),
        ));
        checks.push(Check::new(
            format!("N={n} GCN below MLP"),
            gcn < mlp,
            format!("{gcn:.4} vs {mlp:.4}"),
        ));
        checks.push(Check::new(
            format!("N={n} GCN RMSE bound"),
            gcn <= t.small_max_gcn_rmse,
            format!("{gcn:.4} <= {}", t.small_max_gcn_rmse),
        ));
    }
    let large: Vec<f64> = r
        .runs
        .iter()
        .filter(|s| s.n_train == t.large_size)
        .map(|s| s.normalized.rmse)
        .collect();
    if !large.is_empty() {
        let max = large.iter().copied().fold(f64::MIN, f64::max);
        let min = large.iter().copied().fold(f64::MAX, f64::min);
        checks.push(Check::new(
            format!("N={} RMSE bound", t.large_size),
            max <= t.large_max_rmse,
            format!("max {max:.4} <= {}", t.large_max_rmse),
        ));
        checks.push(Check::new(
            format!("N={} spread", t.large_size),
            max - min <= t.large_max_spread,
            format!("{:.4} <= {}", max - min, t.large_max_spread),
        ));
    }
    let time = |v| {
        let runs: Vec<&RunSummary> = r.runs.iter().filter(|s| s.variant == v).collect();
        (!runs.is_empty())
            .then(|| runs.iter().map(|s| s.mean_epoch_seconds).sum::<f64>() / runs.len() as f64)
    };
    if let (Some(g), Some(b)) = (time(Variant::DrbfGcn), time(Variant::Rbf)) {
        let ratio = g / b;
        checks.push(Check::new(
            "epoch time GCN/RBF",
            ratio >= t.min_epoch_time_ratio,
            format!("{g:.4}s / {b:.4}s = {ratio:.3} >= {}", t.min_epoch_time_ratio),
        ));
    }
    checks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphRun {
    pub name: String,
    pub edges: Vec<[String; 2]>,
    pub selected_nodes: Vec<String>,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table3Result {
    pub runs: Vec<GraphRun>,
    pub checks: Vec<Check>,
}

impl Table3Result {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::from("GP models with different causal information (normalized space)\n");
        out.push_str(&format!("{:<32}{:>10}{:>10}{:>10}\n", "Causal information", "RMSE", "MAE", "R2"));
        for g in &self.runs {
            let r = &g.summary.normalized;
            let r2 = r.r_squared.map_or("invalid".to_string(), |v| format!("{v:.4}"));
            out.push_str(&format!("{:<32}{:>10.4}{:>10.4}{:>10}\n", g.name, r.rmse, r.mae, r2));
        }
        for g in &self.runs {
            out.push_str(&format!("{}: selected {:?}\n", g.name, g.selected_nodes));
        }
        for c in &self.checks {
            out.push_str(&c.line());
            out.push('\n');
        }
        out
    }
}

/// Trains the GCN variant with the correct graph and with partially and
/// fully incorrect versions of it; initialization and data are shared so
/// only the graph differs.
pub fn run_table3(cfg: &RunConfig) -> Result<Table3Result> {
    cfg.validate_table3()?;
    let ds = scm::generate(&cfg.scm)?;
    let table = ds.to_table();
    let correct = scm::illustrative_graph();
    let graphs = [
        ("Correct causal information", correct.clone()),
        (
            "Partially correct causal information",
            correct.perturb(PerturbMode::Partial, derive_seed(cfg.seed, "table3/partial"))?,
        ),
        (
            "Incorrect causal information",
            correct.perturb(PerturbMode::Incorrect, derive_seed(cfg.seed, "table3/incorrect"))?,
        ),
    ];
    let inputs = input_names();
    let n = cfg.table3.train_count;
    let seed = derive_seed(cfg.seed, "table3/gcn");
    let mut runs = Vec::new();
    for (name, graph) in graphs {
        progress(&format!("table3: training with {name}"));
        let (model, names) =
            build_model(Variant::DrbfGcn, &cfg.model, &inputs, cfg.window, Some(&graph), seed)?;
        let selected_nodes = model
            .extractor
            .as_ref()
            .and_then(|e| e.gcn())
            .map(|g| g.selected_names())
            .unwrap_or_default();
        let fit = fit_and_score(
            &table,
            &model,
            &names,
            scm::TARGET_NAME,
            cfg.window,
            n,
            cfg.scm.train_count,
            &cfg.train,
        )?;
        runs.push(GraphRun {
            name: name.into(),
            edges: graph.to_file().edges,
            selected_nodes,
            summary: RunSummary::new(Variant::DrbfGcn, name.into(), n, &fit),
        });
    }
    let rmse: Vec<f64> = runs.iter().map(|g| g.summary.normalized.rmse).collect();
    let r2: Vec<Option<f64>> = runs.iter().map(|g| g.summary.normalized.r_squared).collect();
    let t = &cfg.table3;
    let fmt = |v: Option<f64>| v.map_or("invalid".to_string(), |x| format!("{x:.4}"));
    let checks = vec![
        Check::new(
            "RMSE correct < partial < incorrect",
            rmse[0] < rmse[1] && rmse[1] < rmse[2],
            format!("{:.4} / {:.4} / {:.4}", rmse[0], rmse[1], rmse[2]),
        ),
        Check::new(
            "R2 correct bound",
            r2[0].is_some_and(|v| v >= t.min_r2_correct),
            format!("{} >= {}", fmt(r2[0]), t.min_r2_correct),
        ),
        Check::new(
            "R2 incorrect bound",
            r2[2].is_some_and(|v| v < t.max_r2_incorrect),
            format!("{} < {}", fmt(r2[2]), t.max_r2_incorrect),
        ),
    ];
    Ok(Table3Result { runs, checks })
}
