use lambda_garch::estimation::{
    fit_equation, fit_given_target, fit_joint_qmle, fit_spectral_targeting, rotate_returns, OptimizerConfig,
    Restriction, RotatedSquares, StartPoint,
};
use lambda_garch::model::{diagonal_benchmark_spec, simulate_path, CaseStudy, Innovations, SimulationConfig};
use lambda_garch::spectral::{eigen_sym, sample_covariance};
use lambda_garch::{Error, ReturnPanel};
use nalgebra::DMatrix;
use rayon::prelude::*;

fn arch_only() -> OptimizerConfig {
    OptimizerConfig::with_restriction(Restriction {
        diag_a: true,
        arch_only: true,
    })
}

fn benchmark_panel(p: usize, n: usize, seed: u64) -> ReturnPanel {
    let spec = diagonal_benchmark_spec(p).unwrap();
    simulate_path(&spec, &SimulationConfig::new(n, seed), &Innovations::Gaussian)
        .unwrap()
        .panel
}

fn median(mut x: Vec<f64>) -> f64 {
    x.sort_by(f64::total_cmp);
    let n = x.len();
    if n % 2 == 1 {
        x[n / 2]
    } else {
        0.5 * (x[n / 2 - 1] + x[n / 2])
    }
}

#[test]
fn ste_recovers_the_diagonal_benchmark() {
    let panel = benchmark_panel(3, 20_000, 5);
    let fit = fit_spectral_targeting(&panel, &OptimizerConfig::with_restriction(Restriction::diagonal())).unwrap();
    let (truth, _) = diagonal_benchmark_spec(3).unwrap().identified().unwrap();
    for i in 0..3 {
        assert!((fit.kappa[(i, i)] - 0.05).abs() < 0.02, "{}", fit.kappa);
        assert!((fit.kappa[(i, 3)] - 0.85).abs() < 0.06, "{}", fit.kappa);
        let l = truth.unconditional().unwrap()[i];
        assert!((fit.gamma.lambda()[i] - l).abs() < 0.15 * l);
    }
}

#[test]
fn consistency_improves_with_sample_size() {
    let spec = CaseStudy::FiniteFourth.spec().unwrap();
    let errors = |n: usize| -> Vec<Vec<f64>> {
        let rows: Vec<Vec<f64>> = (0..200u64)
            .into_par_iter()
            .map(|r| {
                let sim = simulate_path(&spec, &SimulationConfig::new(n, 5_000 + r), &Innovations::Gaussian).unwrap();
                let fit = fit_spectral_targeting(&sim.panel, &arch_only()).unwrap();
                // identified order puts the a = 0.33, w = 1.5 equation second
                vec![
                    (fit.w[1] - 1.5).abs(),
                    (fit.w[0] - 0.46).abs(),
                    (fit.kappa[(1, 1)] - 0.33).abs(),
                    (fit.kappa[(0, 0)] - 0.25).abs(),
                ]
            })
            .collect();
        (0..4).map(|k| rows.iter().map(|r| r[k]).collect()).collect()
    };
    let short = errors(2000);
    let long = errors(8000);
    for k in 0..4 {
        let (s, l) = (median(short[k].clone()), median(long[k].clone()));
        assert!(l < s, "parameter {k}: median error {l} at T = 8000 vs {s} at T = 2000");
    }
}

#[test]
fn sequential_and_parallel_equations_are_bitwise_identical() {
    let panel = benchmark_panel(4, 3000, 8);
    let seq = fit_spectral_targeting(&panel, &OptimizerConfig::default()).unwrap();
    let cfg = OptimizerConfig {
        parallel_equations: true,
        ..Default::default()
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let par = pool.install(|| fit_spectral_targeting(&panel, &cfg)).unwrap();
    assert_eq!(seq.kappa, par.kappa);
    assert_eq!(seq.w, par.w);
    assert_eq!(seq.total_nll.to_bits(), par.total_nll.to_bits());
}

#[test]
fn fit_equation_is_deterministic_and_stable_at_its_optimum() {
    let panel = benchmark_panel(3, 3000, 9);
    let gamma = eigen_sym(&sample_covariance(&panel).unwrap()).unwrap();
    let sq = RotatedSquares::from_rotated(&rotate_returns(&panel, gamma.eigenvectors()).unwrap());
    let cfg = OptimizerConfig::default();
    let first = fit_equation(&sq, gamma.lambda(), 1, &cfg).unwrap();
    let again = fit_equation(&sq, gamma.lambda(), 1, &cfg).unwrap();
    assert_eq!(first, again);
    let mut restart = cfg.clone();
    restart.start = StartPoint::Given(first.kappa.clone());
    restart.multi_start = 1;
    let refit = fit_equation(&sq, gamma.lambda(), 1, &restart).unwrap();
    assert!(refit.nll <= first.nll + 1e-12);
    let shift = refit
        .kappa
        .iter()
        .zip(&first.kappa)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(shift < 1e-4, "{shift}");
}

#[test]
fn permuting_assets_permutes_the_fit() {
    let panel = benchmark_panel(3, 4000, 10);
    let order = [2, 0, 1];
    let permuted = panel.permute_assets(&order);
    let cfg = OptimizerConfig::with_restriction(Restriction::diagonal());
    let a = fit_spectral_targeting(&panel, &cfg).unwrap();
    let b = fit_spectral_targeting(&permuted, &cfg).unwrap();
    assert!((a.gamma.lambda() - b.gamma.lambda()).amax() < 1e-12);
    assert!((&a.kappa - &b.kappa).amax() < 1e-6, "{} vs {}", a.kappa, b.kappa);
    assert!((a.total_nll - b.total_nll).abs() < 1e-10);
    let va = a.gamma.eigenvectors();
    let vb = b.gamma.eigenvectors();
    for k in 0..3 {
        for j in 0..3 {
            // eigenvector signs are re-normalized after the permutation
            assert!((vb[(k, j)].abs() - va[(order[k], j)].abs()).abs() < 1e-10);
        }
    }
}

#[test]
fn joint_qmle_improves_on_the_targeted_likelihood() {
    let panel = benchmark_panel(2, 2000, 11);
    let cfg = OptimizerConfig::with_restriction(Restriction::diagonal());
    let ste = fit_spectral_targeting(&panel, &cfg).unwrap();
    let joint = fit_joint_qmle(&panel, &cfg).unwrap();
    assert!(
        joint.total_nll <= ste.total_nll + 1e-8,
        "{} vs {}",
        joint.total_nll,
        ste.total_nll
    );
    assert!((joint.gamma.lambda() - ste.gamma.lambda()).amax() < 0.05);
    assert!(joint.gamma.lambda()[0] <= joint.gamma.lambda()[1]);
}

#[test]
fn restricted_coordinates_stay_at_zero() {
    let panel = benchmark_panel(3, 1500, 12);
    let fit = fit_spectral_targeting(&panel, &arch_only()).unwrap();
    let p = 3;
    for i in 0..p {
        for j in 0..=p {
            if j != i {
                assert_eq!(fit.kappa[(i, j)], 0.0);
            }
        }
        // targeting positivity with the intercept implied by the targets
        assert!(fit.w[i] > 0.0);
    }
}

#[test]
fn given_target_uses_supplied_first_step() {
    let panel = benchmark_panel(2, 1500, 13);
    let gamma = eigen_sym(&sample_covariance(&panel).unwrap()).unwrap();
    let a = fit_given_target(&panel, gamma, &OptimizerConfig::default()).unwrap();
    let b = fit_spectral_targeting(&panel, &OptimizerConfig::default()).unwrap();
    assert_eq!(a.kappa, b.kappa);
}

#[test]
fn invalid_panels_are_rejected() {
    let short = ReturnPanel::from_matrix(DMatrix::from_row_slice(2, 2, &[0.1, 0.2, -0.1, 0.3])).unwrap();
    assert!(matches!(
        fit_spectral_targeting(&short, &OptimizerConfig::default()),
        Err(Error::InvalidInput(_))
    ));
    let flat = ReturnPanel::from_matrix(DMatrix::from_fn(
        50,
        2,
        |t, j| if j == 0 { 0.5 } else { (t as f64).sin() },
    ))
    .unwrap();
    assert!(matches!(
        fit_spectral_targeting(&flat, &OptimizerConfig::default()),
        Err(Error::DegenerateAsset(_))
    ));
}
