//! Synthetic benchmark generator fidelity.

use causalgp::scm::{self, ScmConfig};

fn small(seed: u64) -> ScmConfig {
    ScmConfig {
        n_samples: 500,
        train_count: 400,
        seed,
        ..Default::default()
    }
}

#[test]
fn noiseless_targets_equal_structural_equations_exactly() {
    let cfg = ScmConfig {
        zeta: 0.0,
        tau: 0.0,
        ..small(4)
    };
    let ds = scm::generate(&cfg).unwrap();
    for (row, &y) in ds.measured.iter().zip(&ds.y) {
        let (x5, x6, x7, x8, yc) = scm::scm_eval(row[0], row[1], row[2], row[3]);
        assert_eq!([x5, x6, x7, x8], [row[4], row[5], row[6], row[7]]);
        assert_eq!(yc, y);
    }
    assert_eq!(ds.measured, ds.clean);
}

#[test]
fn default_dataset_shape_and_split() {
    let cfg = ScmConfig::default();
    let ds = scm::generate(&cfg).unwrap();
    assert_eq!(ds.len(), 10_000);
    let table = ds.to_table();
    assert_eq!(table.n_cols(), 9);
    assert!(table.columns().iter().flatten().all(|v| v.is_finite()));
    let (train, test) = scm::split(&ds, cfg.train_count).unwrap();
    assert_eq!((train.len(), test.len()), (9000, 1000));
}

#[test]
fn target_noise_std_within_concentration_bound() {
    let cfg = ScmConfig::default();
    let ds = scm::generate(&cfg).unwrap();
    let n = ds.len() as f64;
    let resid: Vec<f64> = ds.y.iter().zip(&ds.y_clean).map(|(a, b)| a - b).collect();
    let mean = resid.iter().sum::<f64>() / n;
    let std = (resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let bound = 3.0 * cfg.zeta / (2.0 * n).sqrt();
    assert!((std - cfg.zeta).abs() <= bound, "std {std} outside {} ± {bound}", cfg.zeta);
}

#[test]
fn same_seed_is_bitwise_identical() {
    let a = scm::generate(&small(9)).unwrap();
    let b = scm::generate(&small(9)).unwrap();
    assert_eq!(a, b);
    let c = scm::generate(&small(10)).unwrap();
    assert_ne!(a.y, c.y);
}

#[test]
fn intervention_on_x3_leaves_non_descendants_unchanged() {
    let base = ScmConfig {
        zeta: 0.0,
        tau: 0.0,
        ..small(2)
    };
    let fixed = ScmConfig {
        interventions: vec![("x3".into(), 0.7)],
        ..base.clone()
    };
    let a = scm::generate(&base).unwrap();
    let b = scm::generate(&fixed).unwrap();
    for (ra, rb) in a.clean.iter().zip(&b.clean) {
        assert_eq!(rb[2], 0.7);
        // x5 and x7 descend only from x1
        assert_eq!(ra[4], rb[4]);
        assert_eq!(ra[6], rb[6]);
    }
    assert!(a.clean.iter().zip(&b.clean).any(|(ra, rb)| ra[5] != rb[5]));
}

#[test]
fn latent_ranges_hold() {
    let ds = scm::generate(&ScmConfig::default()).unwrap();
    for r in &ds.clean {
        assert!((-0.5..=0.5).contains(&r[6]));
        assert!(r[7] >= 0.0);
    }
}

#[test]
fn unit_x1_matches_closed_form() {
    let x7 = 1f64.sin() * 1f64.cos();
    let expected = x7.tanh() + 1f64.cos() + (x7 - 1.0).sin() + x7 + 1.0;
    let (x5, x6, x7b, x8, y) = scm::scm_eval(1.0, 0.0, 0.0, 0.0);
    assert_eq!((x5, x6, x8), (1.0, 0.0, 1.0));
    assert!((x7b - x7).abs() < 1e-15);
    assert!((y - expected).abs() < 1e-15);
}

#[test]
fn generated_graph_matches_structure() {
    let g = scm::illustrative_graph();
    assert!(g.is_acyclic());
    assert_eq!(g.node_count(), 9);
    assert_eq!(g.edges().len(), 9);
}
