//! `lgarch`: simulate, estimate, forecast and backtest eigenvalue GARCH models.

mod settings;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lambda_garch::estimation::{
    fit_joint_qmle, fit_spectral_targeting, FitSummary, Method, ModelFit, OptimizerConfig, Restriction,
};
use lambda_garch::harness::{
    bundled_weights, load_returns_csv, load_weights_csv, run_density_study, run_relative_efficiency, write_json,
    write_panel_csv, write_rows_csv, DensityConfig, ExperimentConfig,
};
use lambda_garch::inference::{equation_inference, intercept_delta};
use lambda_garch::model::{diagonal_benchmark_spec, simulate_path, CaseStudy, Innovations, SimulationConfig};
use lambda_garch::risk::{fhs_forecast, rolling_backtest, var_from_distribution, BacktestConfig};
use lambda_garch::{Error, Result, ReturnPanel};
use nalgebra::DVector;
use serde::Serialize;

use settings::{MethodArg, Settings};

#[derive(Parser, Debug)]
#[command(name = "lgarch", version, about = "Eigenvalue GARCH estimation and VaR backtesting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    settings: Settings,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate returns from a case-study design or the diagonal benchmark.
    Simulate,
    /// Fit a model to a returns file and report estimates with standard errors.
    Estimate,
    /// Portfolio VaR for the period after the sample by filtered historical simulation.
    Forecast,
    /// Rolling-window VaR backtest with coverage tests.
    Backtest,
    /// Relative efficiency and fit time of STE against the joint QMLE.
    BenchRe,
    /// Sampling distribution of the STE in one of the three case-study designs.
    DensityStudy,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let s = match &cli.settings.config {
        Some(path) => cli.settings.clone().overlay(Settings::from_file(path)?),
        None => cli.settings.clone(),
    };
    match cli.command {
        Command::Simulate => simulate(&s),
        Command::Estimate => estimate(&s),
        Command::Forecast => forecast(&s),
        Command::Backtest => backtest(&s),
        Command::BenchRe => bench_re(&s),
        Command::DensityStudy => density_study(&s),
    }
}

fn out_dir(s: &Settings) -> Result<Option<PathBuf>> {
    if let Some(dir) = &s.out {
        std::fs::create_dir_all(dir)?;
    }
    Ok(s.out.clone())
}

/// Pretty JSON on stdout; a closed pipe is not an error.
fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match serde_json::to_writer_pretty(&mut out, value)
        .map_err(std::io::Error::from)
        .and_then(|_| writeln!(out))
    {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn emit<T: Serialize>(value: &T, s: &Settings, file: &str) -> Result<()> {
    print_json(value)?;
    if let Some(dir) = out_dir(s)? {
        write_json(value, dir.join(file))?;
    }
    Ok(())
}

fn input_panel(s: &Settings) -> Result<ReturnPanel> {
    let path = s
        .input
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("--input is required".into()))?;
    let panel = load_returns_csv(path)?;
    Ok(if s.demean { panel.demeaned() } else { panel })
}

fn optimizer(s: &Settings) -> OptimizerConfig {
    OptimizerConfig::with_restriction(Restriction {
        diag_a: s.diag_a,
        arch_only: false,
    })
}

fn method(s: &Settings) -> Method {
    match s.method.unwrap_or(MethodArg::Ste) {
        MethodArg::Ste => Method::Ste,
        MethodArg::Qmle => Method::JointQmle,
    }
}

fn fit(panel: &ReturnPanel, s: &Settings) -> Result<ModelFit> {
    match method(s) {
        Method::Ste => fit_spectral_targeting(panel, &optimizer(s)),
        Method::JointQmle => fit_joint_qmle(panel, &optimizer(s)),
    }
}

/// Weight vectors aligned to the panel; equal weights when no table is given.
fn portfolios(s: &Settings, panel: &ReturnPanel) -> Result<Vec<(String, DVector<f64>)>> {
    match &s.weights {
        Some(path) => load_weights_csv(path)?.align(panel.labels()),
        None => {
            let bundled = bundled_weights();
            if let Ok(w) = bundled.align(panel.labels()) {
                return Ok(w);
            }
            let p = panel.n_assets();
            Ok(vec![("equal".into(), DVector::from_element(p, 1.0 / p as f64))])
        }
    }
}

#[derive(Serialize)]
struct SimulationReport {
    design: String,
    n_obs: usize,
    n_assets: usize,
    seed: u64,
    file: Option<PathBuf>,
}

fn simulate(s: &Settings) -> Result<()> {
    let seed = s.seed.unwrap_or(0);
    let n_obs = s.n_obs.unwrap_or(2000);
    let (design, spec, nonstationary) = match s.case {
        Some(c) => {
            let case = CaseStudy::from_number(c)?;
            (format!("case {c}"), case.spec()?, case == CaseStudy::FiniteMean)
        }
        None => {
            let p = s.dim.unwrap_or(2);
            (
                format!("diagonal benchmark p = {p}"),
                diagonal_benchmark_spec(p)?,
                false,
            )
        }
    };
    let mut cfg = SimulationConfig::new(n_obs, seed);
    cfg.allow_nonstationary = nonstationary;
    let sim = simulate_path(&spec, &cfg, &Innovations::Gaussian)?;
    let file = match out_dir(s)? {
        Some(dir) => {
            let f = dir.join("returns.csv");
            write_panel_csv(&sim.panel, &f)?;
            Some(f)
        }
        None => None,
    };
    emit(
        &SimulationReport {
            design,
            n_obs,
            n_assets: sim.panel.n_assets(),
            seed,
            file,
        },
        s,
        "simulation.json",
    )
}

#[derive(Serialize)]
struct EquationSe {
    equation: usize,
    /// Standard errors of the free `[a_i1, ..., a_ip, b_i]` entries.
    free: Vec<usize>,
    se_kappa: Vec<f64>,
    w_se: f64,
}

#[derive(Serialize)]
struct EstimateReport {
    labels: Vec<String>,
    fit: FitSummary,
    standard_errors: Vec<EquationSe>,
    /// Why standard errors are missing, if they are.
    inference_note: Option<String>,
}

fn estimate(s: &Settings) -> Result<()> {
    let panel = input_panel(s)?;
    let fit = fit(&panel, s)?;
    let mut ses = Vec::new();
    let mut note = None;
    if fit.method == Method::Ste {
        for i in 0..fit.dim() {
            match equation_inference(&fit, &panel, i).and_then(|inf| Ok((intercept_delta(&fit, &inf, i)?, inf))) {
                Ok((d, inf)) => ses.push(EquationSe {
                    equation: i,
                    free: inf.free.clone(),
                    se_kappa: inf.se_kappa.clone(),
                    w_se: d.w_se,
                }),
                Err(e) => {
                    note = Some(format!("equation {}: {e}", i + 1));
                    ses.clear();
                    break;
                }
            }
        }
    } else {
        note = Some("two-step standard errors apply to STE fits only".into());
    }
    emit(
        &EstimateReport {
            labels: panel.labels().to_vec(),
            fit: fit.summary(),
            standard_errors: ses,
            inference_note: note,
        },
        s,
        "estimate.json",
    )
}

#[derive(Serialize)]
struct ForecastRow {
    portfolio: String,
    weight_sum: f64,
    horizon: usize,
    alpha: f64,
    var: f64,
}

fn forecast(s: &Settings) -> Result<()> {
    let panel = input_panel(s)?;
    let fit = fit(&panel, s)?;
    let horizon = s.horizon.unwrap_or(1);
    let alpha = s.alpha.unwrap_or(0.05);
    let mut rows = Vec::new();
    for (k, (name, w)) in portfolios(s, &panel)?.into_iter().enumerate() {
        let draws = fhs_forecast(
            &fit,
            &panel,
            &w,
            horizon,
            s.draws.unwrap_or(1000),
            s.seed.unwrap_or(0) + k as u64,
        )?;
        rows.push(ForecastRow {
            portfolio: name,
            weight_sum: w.sum(),
            horizon,
            alpha,
            var: var_from_distribution(&draws, alpha)?,
        });
    }
    if let Some(dir) = out_dir(s)? {
        write_rows_csv(&rows, dir.join("forecast.csv"))?;
    }
    emit(&rows, s, "forecast.json")
}

#[derive(Serialize)]
struct VarPathRow<'a> {
    portfolio: &'a str,
    origin: usize,
    date: Option<&'a str>,
    var: f64,
    realized: f64,
    hit: u8,
}

fn backtest(s: &Settings) -> Result<()> {
    let panel = input_panel(s)?;
    let mut cfg = BacktestConfig::new(
        s.window.unwrap_or(1000),
        s.horizon.unwrap_or(1),
        s.alpha.unwrap_or(0.05),
    );
    cfg.refit_every = s.refit_every;
    cfg.n_draws = s.draws.unwrap_or(1000);
    cfg.seed = s.seed.unwrap_or(0);
    cfg.method = method(s);
    cfg.optimizer = optimizer(s);
    let report = rolling_backtest(&panel, &portfolios(s, &panel)?, &cfg)?;
    if let Some(dir) = out_dir(s)? {
        let mut rows = Vec::new();
        for p in &report.portfolios {
            for (k, &o) in p.origins.iter().enumerate() {
                rows.push(VarPathRow {
                    portfolio: &p.name,
                    origin: o,
                    date: panel.dates().map(|d| d[o].as_str()),
                    var: p.var_path[k],
                    realized: p.realized[k],
                    hit: p.hits[k] as u8,
                });
            }
        }
        write_rows_csv(&rows, dir.join("var_paths.csv"))?;
    }
    emit(&report, s, "backtest.json")
}

fn bench_re(s: &Settings) -> Result<()> {
    let dims = s
        .dims
        .clone()
        .unwrap_or_else(|| if s.full { vec![2, 3, 5, 10] } else { vec![2, 3, 5] });
    let n = s.replications.unwrap_or(if s.full { 399 } else { 100 });
    let mut cfg = ExperimentConfig::new(dims, n, s.n_obs.unwrap_or(2000), s.seed.unwrap_or(0));
    cfg.out_dir = out_dir(s)?;
    cfg.workers = 1;
    if let Some(m) = s.method {
        cfg.estimators = match m {
            MethodArg::Ste => vec![Method::Ste],
            MethodArg::Qmle => vec![Method::Ste, Method::JointQmle],
        };
    }
    let rows = run_relative_efficiency(&cfg)?;
    print_json(&rows)
}

fn density_study(s: &Settings) -> Result<()> {
    let case = CaseStudy::from_number(s.case.unwrap_or(1))?;
    let n = s.replications.unwrap_or(if s.full { 10_000 } else { 100 });
    let mut cfg = DensityConfig::new(case, n, s.n_obs.unwrap_or(10_000), s.seed.unwrap_or(0));
    cfg.out_dir = out_dir(s)?;
    cfg.workers = s.workers.unwrap_or(0);
    let report = run_density_study(&cfg)?;
    let brief: Vec<_> = report
        .parameters
        .iter()
        .map(|p| {
            serde_json::json!({
                "name": p.name,
                "truth": p.truth,
                "mean": p.mean,
                "sd": p.sd,
                "median_abs_error": p.median_abs_error,
                "ks_distance": p.ks_distance,
            })
        })
        .collect();
    print_json(&serde_json::json!({
        "case": report.case,
        "n_replications": report.n_replications,
        "n_obs": report.n_obs,
        "n_failures": report.n_failures,
        "parameters": brief,
    }))
}
