use lambda_garch::estimation::{OptimizerConfig, Restriction};
use lambda_garch::model::{
    diagonal_benchmark_spec, simulate_path, DynamicsParams, Innovations, ModelSpec, SimulationConfig,
};
use lambda_garch::risk::{
    christoffersen_tests, fhs_paths, rolling_backtest, var_from_distribution, BacktestConfig, ResidualPanel,
};
use lambda_garch::spectral::{givens_product, RotationAngles};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #[test]
    fn conditional_coverage_is_the_sum_of_its_parts(hits in prop::collection::vec(prop::bool::weighted(0.1), 20..400)) {
        let t = christoffersen_tests(&hits, 0.05).unwrap();
        if let (Some(ind), Some(cc)) = (t.lr_ind, t.lr_cc) {
            prop_assert_eq!(cc, t.lr_uc + ind);
            prop_assert!(t.p_cc.unwrap() >= 0.0 && t.p_cc.unwrap() <= 1.0);
        } else {
            prop_assert!(t.hits == 0 || t.hits == t.n);
        }
    }

    #[test]
    fn unconditional_statistic_depends_only_on_the_count(
        hits in prop::collection::vec(prop::bool::weighted(0.08), 20..300),
        seed in any::<u64>(),
    ) {
        let mut shuffled = hits.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = christoffersen_tests(&hits, 0.05).unwrap();
        let b = christoffersen_tests(&shuffled, 0.05).unwrap();
        prop_assert_eq!(a.lr_uc, b.lr_uc);
        prop_assert_eq!(a.p_uc, b.p_uc);
    }

    #[test]
    fn var_is_positively_homogeneous(
        draws in prop::collection::vec(-10.0f64..10.0, 1..300),
        c in 0.01f64..100.0,
        alpha in 0.001f64..0.5,
    ) {
        let scaled: Vec<f64> = draws.iter().map(|d| c * d).collect();
        let base = var_from_distribution(&draws, alpha).unwrap();
        let s = var_from_distribution(&scaled, alpha).unwrap();
        prop_assert!((s - c * base).abs() <= 1e-12 * (c * base).abs().max(1e-300));
    }
}

fn toy_spec() -> ModelSpec {
    let dynamics = DynamicsParams::diagonal(&[0.1, 0.05], &[0.8, 0.9]).unwrap();
    let v = givens_product(&RotationAngles(vec![0.4]), 2).unwrap();
    ModelSpec::from_targets(DVector::from_vec(vec![0.5, 1.5]), v, dynamics).unwrap()
}

fn toy_residuals(n: usize, seed: u64) -> ResidualPanel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DMatrix::from_fn(n, 2, |_, _| {
        rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)
    });
    ResidualPanel {
        z,
        lambda: DMatrix::from_element(n, 2, 1.0),
        next_lambda: DVector::from_vec(vec![0.6, 1.2]),
    }
}

#[test]
fn one_step_draws_enumerate_the_residual_rows() {
    let spec = toy_spec();
    let res = toy_residuals(5, 1);
    let v = spec.eigenvectors();
    let outcomes: Vec<DVector<f64>> = (0..5)
        .map(|s| {
            let y = DVector::from_fn(2, |j, _| res.next_lambda[j].sqrt() * res.z[(s, j)]);
            v * y
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let draws = fhs_paths(&spec, &res, 1, 5000, &mut rng).unwrap();
    let mut counts = [0usize; 5];
    for d in 0..draws.nrows() {
        let row = draws.row(d).transpose();
        let k = outcomes
            .iter()
            .position(|o| (o - &row).amax() < 1e-14)
            .expect("draw is one of the outcomes");
        counts[k] += 1;
    }
    assert!(counts.iter().all(|&c| (850..1150).contains(&c)), "{counts:?}");
}

#[test]
fn draws_do_not_depend_on_residual_row_order() {
    let spec = toy_spec();
    let res = toy_residuals(400, 3);
    let mut order: Vec<usize> = (0..400).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(4));
    let permuted = ResidualPanel {
        z: DMatrix::from_fn(400, 2, |t, j| res.z[(order[t], j)]),
        lambda: res.lambda.clone(),
        next_lambda: res.next_lambda.clone(),
    };
    let w = DVector::from_vec(vec![0.5, 0.5]);
    let quantile = |r: &ResidualPanel, seed: u64| {
        let paths = fhs_paths(&spec, r, 5, 100_000, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let d: Vec<f64> = (&paths * &w).iter().copied().collect();
        var_from_distribution(&d, 0.05).unwrap()
    };
    let (a, b) = (quantile(&res, 10), quantile(&permuted, 11));
    assert!((a - b).abs() < 0.02 * a.abs(), "{a} vs {b}");
}

#[test]
fn multi_step_draws_are_reproducible() {
    let spec = toy_spec();
    let res = toy_residuals(50, 5);
    let a = fhs_paths(&spec, &res, 10, 1000, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    let b = fhs_paths(&spec, &res, 10, 1000, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    assert_eq!(a, b);
    assert!(fhs_paths(&spec, &res, 0, 1000, &mut ChaCha8Rng::seed_from_u64(6)).is_err());
}

#[test]
fn backtest_schedule_and_reproducibility() {
    let spec = diagonal_benchmark_spec(3).unwrap();
    let sim = simulate_path(&spec, &SimulationConfig::new(700, 21), &Innovations::Gaussian).unwrap();
    let weights = vec![
        ("long".to_string(), DVector::from_element(3, 1.0 / 3.0)),
        ("geared".to_string(), DVector::from_vec(vec![1.0, 0.5, -0.5])),
    ];
    let mut cfg = BacktestConfig::new(500, 5, 0.05);
    cfg.optimizer = OptimizerConfig::with_restriction(Restriction::diagonal());
    cfg.refit_every = Some(20);
    cfg.seed = 3;
    let a = rolling_backtest(&sim.panel, &weights, &cfg).unwrap();
    let b = rolling_backtest(&sim.panel, &weights, &cfg).unwrap();
    assert_eq!(a.tau, 40);
    assert_eq!(a.n_refits, 10);
    assert_eq!(a.portfolios[0].origins[..3], [500, 505, 510]);
    assert_eq!(a.portfolios[1].weight_sum, 1.0);
    for (x, y) in a.portfolios.iter().zip(&b.portfolios) {
        assert_eq!(x.var_path, y.var_path);
        assert_eq!(x.hits, y.hits);
    }
    let realized: f64 = (500..505).map(|t| sim.panel.data().row(t).sum() / 3.0).sum();
    assert!((a.portfolios[0].realized[0] - realized).abs() < 1e-14);

    cfg.refit_every = None;
    assert_eq!(rolling_backtest(&sim.panel, &weights, &cfg).unwrap().n_refits, 40);
}

#[test]
fn backtest_rejects_short_samples_and_bad_weights() {
    let spec = diagonal_benchmark_spec(2).unwrap();
    let sim = simulate_path(&spec, &SimulationConfig::new(520, 22), &Innovations::Gaussian).unwrap();
    let w = vec![("p".to_string(), DVector::from_element(2, 0.5))];
    assert!(rolling_backtest(&sim.panel, &w, &BacktestConfig::new(510, 1, 0.05)).is_err());
    let bad = vec![("p".to_string(), DVector::from_element(3, 0.5))];
    assert!(rolling_backtest(&sim.panel, &bad, &BacktestConfig::new(400, 1, 0.05)).is_err());
}
