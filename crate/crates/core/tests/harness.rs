use lambda_garch::estimation::{fit_joint_qmle, fit_spectral_targeting, OptimizerConfig, Restriction};
use lambda_garch::harness::{
    bundled_weights, load_returns_csv, load_weights_csv, read_rows_csv, run_density_study, run_relative_efficiency,
    write_panel_csv, write_rows_csv, DensityConfig, ExperimentConfig, HistogramBin, RelativeEfficiencyRow,
};
use lambda_garch::model::{diagonal_benchmark_spec, simulate_path, CaseStudy, Innovations, SimulationConfig};
use lambda_garch::ReturnPanel;
use nalgebra::DMatrix;
use rayon::prelude::*;

#[test]
fn panel_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let spec = diagonal_benchmark_spec(3).unwrap();
    let sim = simulate_path(&spec, &SimulationConfig::new(200, 1), &Innovations::Gaussian).unwrap();
    let dates: Vec<String> = (0..200)
        .map(|t| format!("2020-{:02}-{:02}", 1 + t / 28, 1 + t % 28))
        .collect();
    let panel = ReturnPanel::new(
        vec!["AAA".into(), "BBB".into(), "CCC".into()],
        Some(dates),
        sim.panel.data().clone(),
    )
    .unwrap();
    let path = dir.path().join("returns.csv");
    write_panel_csv(&panel, &path).unwrap();
    let back = load_returns_csv(&path).unwrap();
    assert_eq!(back, panel);

    let plain =
        ReturnPanel::from_matrix(DMatrix::from_fn(20, 2, |t, j| (t as f64 * 0.37 + j as f64).sin() / 7.0)).unwrap();
    write_panel_csv(&plain, &path).unwrap();
    let back = load_returns_csv(&path).unwrap();
    assert_eq!(back.data(), plain.data());
    assert!(back.dates().is_none());
}

#[test]
fn weights_are_aligned_by_ticker() {
    let dir = tempfile::tempdir().unwrap();
    let table = bundled_weights();
    let sums = table.sums();
    assert!((sums[2].1 - 1.501).abs() < 1e-9, "{sums:?}");
    let n = 300;
    let data = DMatrix::from_fn(n, 25, |t, j| ((t * 31 + j * 17) % 23) as f64 / 100.0 - 0.1);
    let panel = ReturnPanel::new(table.tickers.clone(), None, data).unwrap();

    // the same table with its rows reversed
    let mut text = String::from("ticker,P1,P2,P3,P4,P5\n");
    for k in (0..25).rev() {
        let row: Vec<String> = table.portfolios.iter().map(|(_, w)| format!("{}", w[k])).collect();
        text.push_str(&format!("{},{}\n", table.tickers[k], row.join(",")));
    }
    let path = dir.path().join("weights.csv");
    std::fs::write(&path, text).unwrap();
    let shuffled = load_weights_csv(&path).unwrap();

    let a = table.align(panel.labels()).unwrap();
    let b = shuffled.align(panel.labels()).unwrap();
    for ((na, wa), (nb, wb)) in a.iter().zip(&b) {
        assert_eq!(na, nb);
        assert_eq!(
            panel.portfolio_returns(wa).unwrap(),
            panel.portfolio_returns(wb).unwrap()
        );
    }
    let short = panel.permute_assets(&(0..24).collect::<Vec<_>>());
    assert!(table.align(short.labels()).is_err());
}

#[test]
fn tables_round_trip_through_their_readers() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(vec![1, 2], 4, 500, 3);
    cfg.out_dir = Some(dir.path().to_path_buf());
    let rows = run_relative_efficiency(&cfg).unwrap();
    let back: Vec<RelativeEfficiencyRow> = read_rows_csv(dir.path().join("relative_efficiency.csv")).unwrap();
    assert_eq!(back, rows);

    let mut dcfg = DensityConfig::new(CaseStudy::FiniteFourth, 20, 1000, 4);
    dcfg.out_dir = Some(dir.path().to_path_buf());
    let report = run_density_study(&dcfg).unwrap();
    let hist: Vec<HistogramBin> = read_rows_csv(dir.path().join("density_case1_a11_histogram.csv")).unwrap();
    assert_eq!(hist, report.parameters[1].histogram);
    let path = dir.path().join("again.csv");
    write_rows_csv(&hist, &path).unwrap();
    assert_eq!(read_rows_csv::<HistogramBin>(&path).unwrap(), hist);
}

#[test]
fn relative_efficiency_at_two_assets() {
    let rows = run_relative_efficiency(&ExperimentConfig::new(vec![2], 50, 2000, 77)).unwrap();
    let r = &rows[0];
    assert_eq!(r.n_params, 7);
    let re = r.re.expect("RE reported");
    assert!((0.5..=5.0).contains(&re), "{r:?}");
    assert!(r.ste_seconds < r.qmle_seconds.unwrap(), "{r:?}");
    assert!(r.qmle_failure_rate.unwrap() <= 0.2);
}

#[test]
fn scalar_model_estimators_agree() {
    let spec = diagonal_benchmark_spec(1).unwrap();
    let cfg = OptimizerConfig::with_restriction(Restriction::diagonal());
    let diffs: Vec<[f64; 3]> = (0..30u64)
        .into_par_iter()
        .map(|r| {
            let sim = simulate_path(&spec, &SimulationConfig::new(2000, 300 + r), &Innovations::Gaussian).unwrap();
            let s = fit_spectral_targeting(&sim.panel, &cfg).unwrap();
            let q = fit_joint_qmle(&sim.panel, &cfg).unwrap();
            [
                (s.gamma.lambda()[0] - q.gamma.lambda()[0]).abs(),
                (s.kappa[(0, 0)] - q.kappa[(0, 0)]).abs(),
                (s.kappa[(0, 1)] - q.kappa[(0, 1)]).abs(),
            ]
        })
        .collect();
    for k in 0..3 {
        let mut v: Vec<f64> = diffs.iter().map(|d| d[k]).collect();
        v.sort_by(f64::total_cmp);
        let med = 0.5 * (v[14] + v[15]);
        assert!(med < 5e-4, "component {k}: median |STE - QMLE| = {med}");
    }
}

#[test]
fn density_designs_order_by_moment_condition() {
    let one = run_density_study(&DensityConfig::new(CaseStudy::FiniteFourth, 500, 10_000, 12)).unwrap();
    let two = run_density_study(&DensityConfig::new(CaseStudy::FiniteSecond, 500, 10_000, 12)).unwrap();
    assert!(
        two.parameters[1].median_abs_error < 0.05,
        "{}",
        two.parameters[1].median_abs_error
    );
    assert!(
        two.parameters[1].ks_distance > one.parameters[1].ks_distance,
        "KS case 2 {} vs case 1 {}",
        two.parameters[1].ks_distance,
        one.parameters[1].ks_distance
    );
}

#[test]
fn finite_mean_design_is_not_consistent() {
    let one = run_density_study(&DensityConfig::new(CaseStudy::FiniteFourth, 200, 10_000, 13)).unwrap();
    let three = run_density_study(&DensityConfig::new(CaseStudy::FiniteMean, 200, 10_000, 13)).unwrap();
    let a = &three.parameters[1];
    // the targeted parameter space excludes the true loading of 1.01
    assert!(a.estimates.iter().all(|&e| e <= 1.0));
    assert!(
        a.median_abs_error > 3.0 * one.parameters[1].median_abs_error,
        "{}",
        a.median_abs_error
    );
    assert!(a.median_abs_error > 0.05);
}

#[test]
fn experiments_do_not_depend_on_the_worker_count() {
    let mut cfg = DensityConfig::new(CaseStudy::FiniteSecond, 12, 1500, 99);
    cfg.workers = 1;
    let a = run_density_study(&cfg).unwrap();
    cfg.workers = 3;
    let b = run_density_study(&cfg).unwrap();
    assert_eq!(a, b);

    let mut re = ExperimentConfig::new(vec![2], 6, 600, 5);
    let x = run_relative_efficiency(&re).unwrap();
    re.workers = 3;
    let y = run_relative_efficiency(&re).unwrap();
    assert_eq!(x[0].re, y[0].re);
}
