use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::{json, Value};

use super::config::{derive_seed, RunConfig, Split, Variant};
use super::experiment::{build_model, run_table1, run_table3};
use crate::error::{Error, Result};
use crate::evaluation::{metrics, qq_data, Units};
use crate::graph::CausalGraph;
use crate::pipeline::{make_windows, prepare_split, Table, WindowedDataset};
use crate::scm;
use crate::training::{gradient_check, train, Checkpoint, GradCheckReport};

/// Result of a command: whether its acceptance checks (if any) held.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub passed: bool,
    pub outputs: Vec<PathBuf>,
}

impl Outcome {
    fn ok(outputs: Vec<PathBuf>) -> Self {
        Self {
            passed: true,
            outputs,
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn write_manifest(
    cfg: &RunConfig,
    command: &str,
    outputs: &[PathBuf],
    summary: Value,
) -> Result<PathBuf> {
    let path = cfg.out.join(format!("{}_manifest.json", command.replace('-', "_")));
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": serde_json::to_value(cfg)?,
        "outputs": outputs,
        "summary": summary,
    });
    write_json(&path, &manifest)?;
    Ok(path)
}

fn dataset_path(cfg: &RunConfig) -> Result<&Path> {
    cfg.data
        .dataset
        .as_deref()
        .ok_or_else(|| Error::Config("data.dataset (--dataset) is required".into()))
}

fn checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.data
        .checkpoint
        .clone()
        .unwrap_or_else(|| cfg.out.join("checkpoint.ckpt"))
}

fn load_graph(cfg: &RunConfig) -> Result<Option<CausalGraph>> {
    match &cfg.data.graph {
        None => Ok(None),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Ok(Some(CausalGraph::parse(&text)?))
        }
    }
}

fn input_columns(cfg: &RunConfig, table: &Table) -> Vec<String> {
    cfg.data.inputs.clone().unwrap_or_else(|| {
        table
            .names()
            .iter()
            .filter(|n| **n != cfg.data.target)
            .cloned()
            .collect()
    })
}

fn train_rows(cfg: &RunConfig, table: &Table) -> Result<usize> {
    let rows = table.n_rows();
    let n = cfg.data.train_count.unwrap_or(rows * 9 / 10);
    if n == 0 || n >= rows {
        return Err(Error::Config(format!(
            "data.train_count must be in 1..{rows}, got {n}"
        )));
    }
    Ok(n)
}

pub fn generate(cfg: &RunConfig) -> Result<Outcome> {
    ensure_dir(&cfg.out)?;
    let ds = scm::generate(&cfg.scm)?;
    let data = cfg.out.join("dataset.csv");
    let graph = cfg.out.join("graph.json");
    ds.to_table().write_csv(&data)?;
    write_text(&graph, &(scm::illustrative_graph().to_json() + "\n"))?;
    let outputs = vec![data, graph];
    let summary = json!({ "rows": ds.len(), "train_count": cfg.scm.train_count });
    let manifest = write_manifest(cfg, "generate", &outputs, summary)?;
    Ok(Outcome::ok([outputs, vec![manifest]].concat()))
}

pub fn train_cmd(cfg: &RunConfig) -> Result<Outcome> {
    if cfg.variant.needs_graph() && cfg.data.graph.is_none() {
        return Err(Error::Config(
            "variant drbf-gcn requires data.graph (--graph)".into(),
        ));
    }
    let path = dataset_path(cfg)?;
    let graph = load_graph(cfg)?;
    let mut required = vec![cfg.data.target.as_str()];
    if let Some(inputs) = &cfg.data.inputs {
        required.extend(inputs.iter().map(String::as_str));
    }
    let table = Table::read_csv(path, &required)?;
    let inputs = input_columns(cfg, &table);
    let n_train = train_rows(cfg, &table)?;
    let seed = derive_seed(cfg.seed, &format!("model/{}", cfg.variant));
    let (model, names) = build_model(
        cfg.variant,
        &cfg.model,
        &inputs,
        cfg.window,
        graph.as_ref(),
        seed,
    )?;
    let (train_ds, _) = prepare_split(&table, &names, &cfg.data.target, cfg.window, n_train, n_train)?;
    let (model, trace) = train(&model, &train_ds, &cfg.train)?;

    ensure_dir(&cfg.out)?;
    let ckpt_path = checkpoint_path(cfg);
    let trace_path = cfg.out.join("trace.csv");
    let config = serde_json::to_value(cfg)?;
    Checkpoint::new(cfg.variant.name(), &model, &train_ds, cfg.train.jitter, cfg.seed, config)
        .save(&ckpt_path)?;
    trace.write_csv(&trace_path)?;
    let outputs = vec![ckpt_path, trace_path];
    let summary = json!({
        "epochs": trace.epochs(),
        "best_epoch": trace.best_epoch,
        "best_val_loss": trace.best_val_loss(),
        "stop_reason": trace.stop_reason,
        "mean_epoch_seconds": trace.mean_epoch_seconds(),
        "train_windows": train_ds.len(),
    });
    let manifest = write_manifest(cfg, "train", &outputs, summary)?;
    Ok(Outcome::ok([outputs, vec![manifest]].concat()))
}

/// Checkpoint, its conditioned model, and the requested windows of the
/// configured dataset, normalized with the checkpoint's transforms.
fn load_for_scoring(cfg: &RunConfig) -> Result<(Checkpoint, WindowedDataset)> {
    let ckpt = Checkpoint::load(checkpoint_path(cfg))?;
    let path = dataset_path(cfg)?;
    let mut required: Vec<&str> = ckpt.input_names.iter().map(String::as_str).collect();
    required.push(&ckpt.target_name);
    let table = Table::read_csv(path, &required)?;
    let normalizer = ckpt
        .normalizer
        .clone()
        .ok_or_else(|| Error::Config("checkpoint has no normalizer state".into()))?;
    let normalized = normalizer.apply(&table)?;
    let mut all = make_windows(&normalized, &ckpt.input_names, &ckpt.target_name, ckpt.window)?;
    all.normalizer = Some(normalizer);
    // windows end at timestamps window-1 ..; the checkpoint's training
    // range ends one past its last window unless overridden
    let n_train = match cfg.data.train_count {
        Some(_) => train_rows(cfg, &table)?,
        None => ckpt.train_targets.len() + ckpt.window - 1,
    };
    let (train_part, test_part) = all.split_at_time(n_train);
    let ds = match cfg.data.split {
        Split::Train => train_part,
        Split::Test => test_part,
    };
    if ds.is_empty() {
        return Err(Error::EmptyInput("no windows in the requested split".into()));
    }
    Ok((ckpt, ds))
}

pub fn predict(cfg: &RunConfig) -> Result<Outcome> {
    let (ckpt, ds) = load_for_scoring(cfg)?;
    let pred = ckpt.conditioned()?.predict(&ds.inputs, true, false)?;
    let t = ds.normalizer.as_ref().expect("set above").get(&ckpt.target_name)?;
    let original = cfg.units == Units::Original;
    let conv = |v: f64| if original { t.inverse_clamped(v) } else { v };
    let mut text = String::from("timestamp,mean,std_normalized,lower95,upper95,truth\n");
    for (i, (&m, &var)) in pred.means.iter().zip(&pred.variances).enumerate() {
        let s = var.sqrt();
        text.push_str(&format!(
            "{},{:?},{:?},{:?},{:?},{:?}\n",
            ds.timestamps[i],
            conv(m),
            s,
            conv(m - 1.96 * s),
            conv(m + 1.96 * s),
            conv(ds.targets[i])
        ));
    }
    ensure_dir(&cfg.out)?;
    let path = cfg.out.join("predictions.csv");
    write_text(&path, &text)?;
    let outputs = vec![path];
    let summary = json!({ "n": ds.len(), "units": cfg.units, "clamped_variances": pred.clamped });
    let manifest = write_manifest(cfg, "predict", &outputs, summary)?;
    Ok(Outcome::ok([outputs, vec![manifest]].concat()))
}

pub fn evaluate(cfg: &RunConfig) -> Result<Outcome> {
    let (ckpt, ds) = load_for_scoring(cfg)?;
    let pred = ckpt.conditioned()?.predict(&ds.inputs, true, false)?;
    let t = ds.normalizer.as_ref().expect("set above").get(&ckpt.target_name)?;
    let report = match cfg.units {
        Units::Normalized => metrics(&pred.means, &ds.targets, Units::Normalized)?,
        Units::Original => {
            let m: Vec<f64> = pred.means.iter().map(|&v| t.inverse_clamped(v)).collect();
            let y: Vec<f64> = ds.targets.iter().map(|&v| t.inverse_clamped(v)).collect();
            metrics(&m, &y, Units::Original)?
        }
    };
    let qq = qq_data(&pred.means, &pred.stds(), &ds.targets)?;
    ensure_dir(&cfg.out)?;
    let report_path = cfg.out.join("eval_report.json");
    let qq_path = cfg.out.join("qq.csv");
    report.write_json(&report_path)?;
    qq.write_csv(&qq_path)?;
    let outputs = vec![report_path, qq_path];
    let manifest = write_manifest(cfg, "evaluate", &outputs, serde_json::to_value(&report)?)?;
    Ok(Outcome::ok([outputs, vec![manifest]].concat()))
}

pub fn repro_table1(cfg: &RunConfig) -> Result<Outcome> {
    let result = run_table1(cfg)?;
    ensure_dir(&cfg.out)?;
    let text = cfg.out.join("table1.txt");
    let json_path = cfg.out.join("table1.json");
    let rendered = result.render();
    print!("{rendered}");
    write_text(&text, &rendered)?;
    write_json(&json_path, &result)?;
    let outputs = vec![text, json_path];
    let summary = json!({ "passed": result.passed(), "checks": result.checks });
    let manifest = write_manifest(cfg, "repro-table1", &outputs, summary)?;
    Ok(Outcome {
        passed: result.passed(),
        outputs: [outputs, vec![manifest]].concat(),
    })
}

pub fn repro_table3(cfg: &RunConfig) -> Result<Outcome> {
    let result = run_table3(cfg)?;
    ensure_dir(&cfg.out)?;
    let text = cfg.out.join("table3.txt");
    let json_path = cfg.out.join("table3.json");
    let rendered = result.render();
    print!("{rendered}");
    write_text(&text, &rendered)?;
    write_json(&json_path, &result)?;
    let outputs = vec![text, json_path];
    let summary = json!({ "passed": result.passed(), "checks": result.checks });
    let manifest = write_manifest(cfg, "repro-table3", &outputs, summary)?;
    Ok(Outcome {
        passed: result.passed(),
        outputs: [outputs, vec![manifest]].concat(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantGradCheck {
    pub variant: Variant,
    pub report: GradCheckReport,
}

/// Gradient check for one variant on the first `n_points` windows of a
/// small generated benchmark.
pub fn grad_check_variant(cfg: &RunConfig, variant: Variant) -> Result<GradCheckReport> {
    let g = &cfg.grad_check;
    let rows = g.n_points + g.window - 1;
    let scm_cfg = scm::ScmConfig {
        n_samples: rows + 1,
        train_count: rows,
        seed: derive_seed(cfg.seed, "grad-check/data"),
        ..cfg.scm.clone()
    };
    let table = scm::generate(&scm_cfg)?.to_table();
    let graph = scm::illustrative_graph();
    let inputs: Vec<String> = scm::INPUT_NAMES.iter().map(|s| s.to_string()).collect();
    let seed = derive_seed(cfg.seed, &format!("grad-check/{variant}"));
    let (model, names) = build_model(variant, &g.model, &inputs, g.window, Some(&graph), seed)?;
    let (train_ds, _) = prepare_split(&table, &names, scm::TARGET_NAME, g.window, rows, rows)?;
    let x: DMatrix<f64> = train_ds.inputs.rows(0, g.n_points).into_owned();
    let y = DVector::from_column_slice(&train_ds.targets[..g.n_points]);
    let tol = if variant == Variant::Rbf {
        g.tolerance_raw
    } else {
        g.tolerance_deep
    };
    gradient_check(&model, &x, &y, g.step, tol, &cfg.train.jitter)
}

pub fn grad_check(cfg: &RunConfig) -> Result<Outcome> {
    let mut results = Vec::new();
    for &variant in &cfg.grad_check.variants {
        let report = grad_check_variant(cfg, variant)?;
        println!(
            "[{}] {variant}: {} parameters, max relative error {:.3e} (tolerance {:.0e})",
            if report.passed { "PASS" } else { "FAIL" },
            report.n_params,
            report.max_rel_error,
            report.tolerance
        );
        results.push(VariantGradCheck { variant, report });
    }
    let passed = results.iter().all(|r| r.report.passed);
    ensure_dir(&cfg.out)?;
    let path = cfg.out.join("grad_check.json");
    let brief: Vec<Value> = results
        .iter()
        .map(|r| {
            json!({
                "variant": r.variant,
                "n_params": r.report.n_params,
                "max_rel_error": r.report.max_rel_error,
                "worst_index": r.report.worst_index,
                "tolerance": r.report.tolerance,
                "passed": r.report.passed,
            })
        })
        .collect();
    write_json(&path, &brief)?;
    let outputs = vec![path];
    let manifest = write_manifest(cfg, "grad-check", &outputs, json!({ "passed": passed }))?;
    Ok(Outcome {
        passed,
        outputs: [outputs, vec![manifest]].concat(),
    })
}
