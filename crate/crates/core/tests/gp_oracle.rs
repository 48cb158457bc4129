//! Exact GP posterior and marginal likelihood against a dense-inverse oracle.

mod common;

use std::f64::consts::PI;

use proptest::prelude::*;

use causalgp::linalg::JitterConfig;
use causalgp::GpModel;
use common::{oracle_error, random_problem, Problem, ORACLE_TOL};

#[test]
fn cholesky_path_matches_dense_inverse_on_random_problems() {
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let (err, jitter) = oracle_error(&random_problem(seed));
        assert_eq!(jitter, 0.0, "problem {seed} needed jitter");
        assert!(err <= ORACLE_TOL, "problem {seed}: error {err:e}");
        worst = worst.max(err);
    }
    eprintln!("worst oracle error over 100 problems: {worst:e}");
}

#[test]
fn noise_only_affects_observation_variance() {
    let p = random_problem(7);
    let mut model = GpModel::raw(p.x.ncols());
    model.set_flat(&p.params).unwrap();
    let cond = model.condition(&p.x, &p.y, &JitterConfig::default()).unwrap();
    let latent = cond.predict(&p.xs, false, false).unwrap();
    let observed = cond.predict(&p.xs, true, false).unwrap();
    assert_eq!(latent.means, observed.means);
    for (a, b) in latent.variances.iter().zip(&observed.variances) {
        assert!((b - a - model.noise_variance()).abs() < 1e-12);
    }
}

fn problem_strategy() -> impl Strategy<Value = Problem> {
    any::<u64>().prop_map(random_problem)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_matrix_is_symmetric_and_factorizes(p in problem_strategy()) {
        let mut model = GpModel::raw(p.x.ncols());
        model.set_flat(&p.params).unwrap();
        let k = model.kernel_matrix(&p.x, &p.x).unwrap();
        prop_assert!((&k - k.transpose()).amax() < 1e-12);
        let cond = model.condition(&p.x, &p.y, &JitterConfig::default()).unwrap();
        let l = cond.cholesky_factor();
        for i in 0..l.nrows() {
            prop_assert!(l[(i, i)] > 0.0);
            for j in i + 1..l.ncols() {
                prop_assert_eq!(l[(i, j)], 0.0);
            }
        }
        let resid = (l * l.transpose()) * cond.alpha() - &p.y;
        prop_assert!(resid.amax() < 1e-8 * p.y.amax().max(f64::MIN_POSITIVE));
    }

    #[test]
    fn latent_variance_bounded_by_prior(p in problem_strategy()) {
        let mut model = GpModel::raw(p.x.ncols());
        model.set_flat(&p.params).unwrap();
        let sv = p.params[p.x.ncols()].exp();
        let cond = model.condition(&p.x, &p.y, &JitterConfig::default()).unwrap();
        let pred = cond.predict(&p.xs, false, true).unwrap();
        for v in &pred.variances {
            prop_assert!(*v >= 0.0 && *v <= sv + 1e-8);
        }
        let cov = pred.covariance.unwrap();
        prop_assert!((&cov - cov.transpose()).amax() < 1e-8);
        let min_eig = cov.symmetric_eigenvalues().min();
        prop_assert!(min_eig > -1e-8, "min eigenvalue {}", min_eig);
    }

    #[test]
    fn extra_training_point_never_raises_variance(p in problem_strategy(), extra in prop::collection::vec(-2.0f64..2.0, 5)) {
        let d = p.x.ncols();
        let mut model = GpModel::raw(d);
        model.set_flat(&p.params).unwrap();
        let jitter = JitterConfig::default();
        let before = model.condition(&p.x, &p.y, &jitter).unwrap().predict(&p.xs, false, false).unwrap();
        let n = p.x.nrows();
        let mut x2 = p.x.clone().insert_row(n, 0.0);
        for c in 0..d {
            x2[(n, c)] = extra[c];
        }
        let y2 = p.y.clone().push(0.3);
        let after = model.condition(&x2, &y2, &jitter).unwrap().predict(&p.xs, false, false).unwrap();
        for (a, b) in after.variances.iter().zip(&before.variances) {
            prop_assert!(*a <= *b + 1e-10, "{} > {}", a, b);
        }
    }

    #[test]
    fn mll_terms_sum_to_total(p in problem_strategy()) {
        let mut model = GpModel::raw(p.x.ncols());
        model.set_flat(&p.params).unwrap();
        let cond = model.condition(&p.x, &p.y, &JitterConfig::default()).unwrap();
        let t = cond.mll_terms();
        prop_assert!((t.model_fit + t.complexity_penalty + t.constant - cond.log_marginal_likelihood()).abs() < 1e-12);
        prop_assert!(t.model_fit <= 0.0);
        prop_assert!((t.constant + 0.5 * p.x.nrows() as f64 * (2.0 * PI).ln()).abs() < 1e-12);
    }
}
