//! Rolling-window VaR backtest on non-overlapping forecast blocks.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimation::{fit_joint_qmle, fit_spectral_targeting, Method, ModelFit, OptimizerConfig};
use crate::panel::ReturnPanel;
use crate::risk::coverage::{christoffersen_tests, hit_sequence, CoverageTests, MIN_OUT_OF_SAMPLE};
use crate::risk::{fhs_paths, residuals_for_spec, var_from_distribution};
use crate::timing::cpu_timed;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BacktestConfig {
    pub window: usize,
    pub horizon: usize,
    pub alpha: f64,
    /// Observations between refits; `None` refits at every forecast origin.
    pub refit_every: Option<usize>,
    pub n_draws: usize,
    pub seed: u64,
    pub method: Method,
    pub optimizer: OptimizerConfig,
}

impl BacktestConfig {
    pub fn new(window: usize, horizon: usize, alpha: f64) -> Self {
        Self {
            window,
            horizon,
            alpha,
            refit_every: None,
            n_draws: 1000,
            seed: 0,
            method: Method::Ste,
            optimizer: OptimizerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PortfolioReport {
    pub name: String,
    pub weight_sum: f64,
    pub tests: CoverageTests,
    /// First row of each forecast block.
    pub origins: Vec<usize>,
    pub var_path: Vec<f64>,
    pub realized: Vec<f64>,
    pub hits: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BacktestReport {
    pub method: Method,
    pub window: usize,
    pub horizon: usize,
    pub alpha: f64,
    pub refit_every: usize,
    pub tau: usize,
    pub n_refits: usize,
    pub refit_cpu_seconds: Vec<f64>,
    pub mean_refit_cpu_seconds: f64,
    pub portfolios: Vec<PortfolioReport>,
}

fn refit(panel: &ReturnPanel, cfg: &BacktestConfig) -> Result<ModelFit> {
    match cfg.method {
        Method::Ste => fit_spectral_targeting(panel, &cfg.optimizer),
        Method::JointQmle => fit_joint_qmle(panel, &cfg.optimizer),
    }
}

/// Forecast origins advance by the horizon; the model is refitted on the most
/// recent `window` rows whenever `refit_every` rows have passed since the last
/// refit, and reused (re-filtered over the current window) in between.
pub fn rolling_backtest(
    panel: &ReturnPanel,
    portfolios: &[(String, DVector<f64>)],
    cfg: &BacktestConfig,
) -> Result<BacktestReport> {
    let n = panel.n_obs();
    let h = cfg.horizon;
    if h == 0 {
        return Err(Error::InvalidInput("horizon must be at least 1".into()));
    }
    if cfg.window >= n {
        return Err(Error::InvalidInput(format!(
            "window of {} leaves no out-of-sample data in {n} rows",
            cfg.window
        )));
    }
    let tau = (n - cfg.window) / h;
    if tau < MIN_OUT_OF_SAMPLE {
        return Err(Error::InvalidInput(format!(
            "only {tau} out-of-sample forecasts (at least {MIN_OUT_OF_SAMPLE} required)"
        )));
    }
    for (name, w) in portfolios {
        if w.len() != panel.n_assets() {
            return Err(Error::InvalidInput(format!(
                "portfolio {name} has {} weights for {} assets",
                w.len(),
                panel.n_assets()
            )));
        }
    }
    let refit_every = cfg.refit_every.unwrap_or(h).max(1);
    let master = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut current: Option<(ModelFit, usize)> = None;
    let mut cpu = Vec::new();
    let mut var_paths = vec![Vec::with_capacity(tau); portfolios.len()];
    let mut realized = vec![Vec::with_capacity(tau); portfolios.len()];
    let mut origins = Vec::with_capacity(tau);
    for k in 0..tau {
        let o = cfg.window + k * h;
        let window = panel.slice_rows(o - cfg.window, o);
        let stale = current.as_ref().is_none_or(|(_, at)| o - at >= refit_every);
        if stale {
            let (fit, secs) = cpu_timed(|| refit(&window, cfg));
            cpu.push(secs);
            current = Some((fit?, o));
        }
        let fit = &current.as_ref().expect("fitted above").0;
        let spec = fit.spec()?;
        let res = residuals_for_spec(&spec, &window, &fit.init)?;
        let mut rng = master.clone();
        rng.set_stream(k as u64);
        let paths = fhs_paths(&spec, &res, h, cfg.n_draws, &mut rng)?;
        for (pi, (_, w)) in portfolios.iter().enumerate() {
            let draws: Vec<f64> = (&paths * w).iter().copied().collect();
            var_paths[pi].push(var_from_distribution(&draws, cfg.alpha)?);
            let r: f64 = (o..o + h).map(|t| (panel.data().row(t) * w)[(0, 0)]).sum();
            realized[pi].push(r);
        }
        origins.push(o);
    }

    let mut reports = Vec::with_capacity(portfolios.len());
    for (pi, (name, w)) in portfolios.iter().enumerate() {
        let hits = hit_sequence(&realized[pi], &var_paths[pi])?;
        reports.push(PortfolioReport {
            name: name.clone(),
            weight_sum: w.sum(),
            tests: christoffersen_tests(&hits, cfg.alpha)?,
            origins: origins.clone(),
            var_path: std::mem::take(&mut var_paths[pi]),
            realized: std::mem::take(&mut realized[pi]),
            hits,
        });
    }
    let mean = cpu.iter().sum::<f64>() / cpu.len().max(1) as f64;
    Ok(BacktestReport {
        method: cfg.method,
        window: cfg.window,
        horizon: h,
        alpha: cfg.alpha,
        refit_every,
        tau,
        n_refits: cpu.len(),
        refit_cpu_seconds: cpu,
        mean_refit_cpu_seconds: mean,
        portfolios: reports,
    })
}
