//! Training loop behavior and checkpoint round trips.

use causalgp::cli::config::{ModelConfig, RunConfig};
use causalgp::cli::experiment::build_model;
use causalgp::cli::Variant;
use causalgp::pipeline::prepare_split;
use causalgp::scm::{self, ScmConfig, INPUT_NAMES, TARGET_NAME};
use causalgp::training::{mean_nlpd, train, Checkpoint, CHECKPOINT_VERSION};
use causalgp::{Error, GpModel, TrainConfig, WindowedDataset};

fn data(window: usize) -> (WindowedDataset, WindowedDataset) {
    let ds = scm::generate(&ScmConfig {
        n_samples: 140,
        train_count: 100,
        seed: 21,
        ..Default::default()
    })
    .unwrap();
    let names: Vec<String> = INPUT_NAMES.iter().map(|s| s.to_string()).collect();
    prepare_split(&ds.to_table(), &names, TARGET_NAME, window, 100, 100).unwrap()
}

fn gcn_model(window: usize) -> GpModel {
    let names: Vec<String> = INPUT_NAMES.iter().map(|s| s.to_string()).collect();
    let model = ModelConfig {
        gcn_widths: vec![4, 3],
        ..ModelConfig::default()
    };
    let g = scm::illustrative_graph();
    let (m, order) = build_model(Variant::DrbfGcn, &model, &names, window, Some(&g), 3).unwrap();
    assert_eq!(order, names);
    m
}

fn cfg(max_epochs: usize, patience: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 0.05,
        max_epochs,
        patience,
        ..Default::default()
    }
}

#[test]
fn fixed_seed_reproduces_trace_and_parameters() {
    let (train_ds, _) = data(1);
    let model = gcn_model(1);
    let (a, ta) = train(&model, &train_ds, &cfg(25, 10)).unwrap();
    let (b, tb) = train(&model, &train_ds, &cfg(25, 10)).unwrap();
    assert_eq!(a.to_flat(), b.to_flat());
    assert_eq!(ta.train_loss, tb.train_loss);
    assert_eq!(ta.val_loss, tb.val_loss);
    assert_eq!(ta.best_epoch, tb.best_epoch);
}

#[test]
fn restored_model_has_best_validation_loss() {
    let (train_ds, _) = data(1);
    let c = cfg(60, 5);
    let (model, trace) = train(&GpModel::raw(8), &train_ds, &c).unwrap();
    assert!(trace.epochs() <= c.max_epochs);
    assert!(trace.best_epoch < trace.epochs());
    let min = trace.val_loss.iter().copied().fold(f64::INFINITY, f64::min);
    assert_eq!(trace.best_val_loss(), min);
    assert!(model.to_flat().iter().all(|v| v.is_finite()));

    let (fit, val) = train_ds.split_tail(c.validation_fraction).unwrap();
    let cond = model.condition(&fit.inputs, &fit.target_vector(), &c.jitter).unwrap();
    let nlpd = mean_nlpd(&cond, &val.inputs, &val.targets).unwrap();
    assert!((nlpd - min).abs() <= 1e-12 * min.abs().max(1.0), "{nlpd} vs {min}");
}

#[test]
fn training_lowers_the_objective() {
    let (train_ds, _) = data(2);
    let (_, trace) = train(&GpModel::raw(16), &train_ds, &cfg(30, 30)).unwrap();
    assert!(trace.train_loss.last().unwrap() < &trace.train_loss[0]);
    assert!(trace.train_loss.iter().chain(&trace.val_loss).all(|v| v.is_finite()));
}

fn checkpoint() -> (Checkpoint, WindowedDataset) {
    let (train_ds, test_ds) = data(2);
    let model = gcn_model(2);
    let (model, _) = train(&model, &train_ds, &cfg(8, 8)).unwrap();
    let run = serde_json::to_value(RunConfig::default()).unwrap();
    let ckpt = Checkpoint::new("drbf-gcn", &model, &train_ds, Default::default(), 0, run);
    (ckpt, test_ds)
}

#[test]
fn reloaded_checkpoint_predicts_identically() {
    let (ckpt, test_ds) = checkpoint();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ckpt);
    let a = ckpt.conditioned().unwrap().predict(&test_ds.inputs, true, false).unwrap();
    let b = back.conditioned().unwrap().predict(&test_ds.inputs, true, false).unwrap();
    assert_eq!(a.means, b.means);
    assert_eq!(a.variances, b.variances);
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let (ckpt, _) = checkpoint();
    let bytes = ckpt.to_bytes().unwrap();
    assert!(bytes.starts_with(CHECKPOINT_VERSION.as_bytes()));

    let truncated = &bytes[..bytes.len() - 10];
    assert!(matches!(Checkpoint::from_bytes(truncated), Err(Error::Checksum)));

    let mut flipped = bytes.clone();
    let last = flipped.len() - 3;
    flipped[last] ^= 0x01;
    assert!(matches!(Checkpoint::from_bytes(&flipped), Err(Error::Checksum)));

    let text = String::from_utf8(bytes).unwrap();
    let other = text.replacen(CHECKPOINT_VERSION, "causalgp-checkpoint-v0", 1);
    assert!(matches!(
        Checkpoint::from_bytes(other.as_bytes()),
        Err(Error::CheckpointVersion { .. })
    ));
    assert!(matches!(Checkpoint::from_bytes(b""), Err(Error::Checksum)));
}
