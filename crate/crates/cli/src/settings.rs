//! Command-line flags and the flat TOML file that mirrors them.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use lambda_garch::{Error, Result};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Ste,
    Qmle,
}

/// Every flag is also a key of the `--config` file; flags win.
#[derive(Debug, Clone, Default, PartialEq, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    /// Flat key-value TOML file with any of the options below.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Returns CSV (header of asset labels, optional leading date column).
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Portfolio weights CSV (ticker column then one column per portfolio).
    #[arg(long, global = true)]
    pub weights: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub method: Option<MethodArg>,
    /// Restrict A to be diagonal.
    #[arg(long, global = true)]
    pub diag_a: bool,
    /// VaR level (default 0.05).
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Forecast horizon in periods (default 1).
    #[arg(long, global = true)]
    pub horizon: Option<usize>,
    /// Rolling estimation window (default 1000).
    #[arg(long, global = true)]
    pub window: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for JSON reports and CSV tables.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Subtract column means before fitting.
    #[arg(long, global = true)]
    pub demean: bool,
    /// Full-scale experiment sizes instead of the desk defaults.
    #[arg(long, global = true)]
    pub full: bool,
    /// Sample length for simulations and experiments.
    #[arg(long, global = true)]
    pub n_obs: Option<usize>,
    /// Dimension of the simulated diagonal benchmark.
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    /// Case-study design 1, 2 or 3.
    #[arg(long, global = true)]
    pub case: Option<u8>,
    /// Comma-separated dimensions for `bench-re`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    /// Monte Carlo replications.
    #[arg(long, global = true)]
    pub replications: Option<usize>,
    /// Bootstrap draws per forecast (default 1000).
    #[arg(long, global = true)]
    pub draws: Option<usize>,
    /// Periods between refits in `backtest` (default: the horizon).
    #[arg(long, global = true)]
    pub refit_every: Option<usize>,
    /// Worker threads for `density-study` (0 = all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

impl Settings {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidInput(format!("config file: {e}")))
    }

    /// Fills every option not given on the command line from `file`.
    pub fn overlay(self, file: Settings) -> Settings {
        Settings {
            config: self.config,
            input: self.input.or(file.input),
            weights: self.weights.or(file.weights),
            method: self.method.or(file.method),
            diag_a: self.diag_a || file.diag_a,
            alpha: self.alpha.or(file.alpha),
            horizon: self.horizon.or(file.horizon),
            window: self.window.or(file.window),
            seed: self.seed.or(file.seed),
            out: self.out.or(file.out),
            demean: self.demean || file.demean,
            full: self.full || file.full,
            n_obs: self.n_obs.or(file.n_obs),
            dim: self.dim.or(file.dim),
            case: self.case.or(file.case),
            dims: self.dims.or(file.dims),
            replications: self.replications.or(file.replications),
            draws: self.draws.or(file.draws),
            refit_every: self.refit_every.or(file.refit_every),
            workers: self.workers.or(file.workers),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file = Settings::from_toml("alpha = 0.01\nwindow = 500\nmethod = \"qmle\"\ndiag_a = true\ndims = [2, 3]\n")
            .unwrap();
        let flags = Settings {
            alpha: Some(0.05),
            ..Settings::default()
        };
        let s = flags.overlay(file);
        assert_eq!(s.alpha, Some(0.05));
        assert_eq!(s.window, Some(500));
        assert_eq!(s.method, Some(MethodArg::Qmle));
        assert!(s.diag_a);
        assert_eq!(s.dims, Some(vec![2, 3]));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(Settings::from_toml("windw = 3\n").is_err());
    }
}
