//! Filtered historical simulation, portfolio VaR and coverage backtests.

mod backtest;
mod coverage;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::estimation::{rotate_returns, ModelFit};
use crate::model::{filter_eigenvalues, ModelSpec};
use crate::panel::ReturnPanel;

pub use backtest::{rolling_backtest, BacktestConfig, BacktestReport, PortfolioReport};
pub use coverage::{christoffersen_tests, hit_sequence, CoverageTests, MIN_OUT_OF_SAMPLE};

/// Standardized residuals with the filtered eigenvalues that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualPanel {
    /// `Z_t = diag(lambda_t)^{-1/2} V'X_t`, one row per observation.
    pub z: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    /// One-step-ahead eigenvalues for the period after the sample.
    pub next_lambda: DVector<f64>,
}

/// Filters the fitted recursion through the panel and standardizes.
pub fn standardized_residuals(fit: &ModelFit, panel: &ReturnPanel) -> Result<ResidualPanel> {
    residuals_for_spec(&fit.spec()?, panel, &fit.init)
}

pub fn residuals_for_spec(
    spec: &ModelSpec,
    panel: &ReturnPanel,
    init: &crate::model::InitScheme,
) -> Result<ResidualPanel> {
    let y = rotate_returns(panel, spec.eigenvectors())?;
    let path = filter_eigenvalues(spec, &y, init)?;
    let (n, p) = y.shape();
    let mut z = DMatrix::zeros(n, p);
    for t in 0..n {
        for j in 0..p {
            let l = path.lambda[(t, j)];
            if !(l > 0.0) {
                return Err(Error::NonFiniteRecursion { t });
            }
            z[(t, j)] = y[(t, j)] / l.sqrt();
        }
    }
    let a = spec.dynamics().a();
    let b = spec.dynamics().b();
    let w = spec.intercepts();
    let next_lambda = DVector::from_fn(p, |i, _| {
        let mut l = w[i] + b[i] * path.lambda[(n - 1, i)];
        for j in 0..p {
            l += a[(i, j)] * y[(n - 1, j)] * y[(n - 1, j)];
        }
        l
    });
    Ok(ResidualPanel {
        z,
        lambda: path.lambda,
        next_lambda,
    })
}

/// Simulated `h`-period cumulative return vectors `sum_k X_{T+k}` (one row per
/// draw) obtained by resampling whole residual rows with replacement.
pub fn fhs_paths(
    spec: &ModelSpec,
    residuals: &ResidualPanel,
    horizon: usize,
    n_draws: usize,
    rng: &mut ChaCha8Rng,
) -> Result<DMatrix<f64>> {
    if horizon == 0 {
        return Err(Error::InvalidInput("horizon must be at least 1".into()));
    }
    let p = spec.dim();
    let n_res = residuals.z.nrows();
    if n_res == 0 {
        return Err(Error::InvalidInput("no residuals to resample".into()));
    }
    let v = spec.eigenvectors();
    let a = spec.dynamics().a();
    let b = spec.dynamics().b();
    let w = spec.intercepts();
    let mut out = DMatrix::zeros(n_draws, p);
    let mut lam = vec![0.0; p];
    let mut next = vec![0.0; p];
    let mut y = vec![0.0; p];
    let mut ysum = vec![0.0; p];
    for d in 0..n_draws {
        lam.copy_from_slice(residuals.next_lambda.as_slice());
        ysum.iter_mut().for_each(|s| *s = 0.0);
        for _ in 0..horizon {
            let s = rng.random_range(0..n_res);
            for j in 0..p {
                y[j] = lam[j].sqrt() * residuals.z[(s, j)];
                ysum[j] += y[j];
            }
            for i in 0..p {
                let mut l = w[i] + b[i] * lam[i];
                for j in 0..p {
                    l += a[(i, j)] * y[j] * y[j];
                }
                next[i] = l;
            }
            std::mem::swap(&mut lam, &mut next);
        }
        // X = V Y, and the rotation is linear so the sum commutes with it
        for r in 0..p {
            out[(d, r)] = (0..p).map(|j| v[(r, j)] * ysum[j]).sum();
        }
    }
    Ok(out)
}

/// Empirical distribution of the `h`-period portfolio return `sum_k w'X_{T+k}`.
pub fn fhs_forecast(
    fit: &ModelFit,
    panel: &ReturnPanel,
    weights: &DVector<f64>,
    horizon: usize,
    n_draws: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_draws < 1000 {
        return Err(Error::InvalidInput("at least 1000 draws are required".into()));
    }
    if weights.len() != fit.dim() || weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::InvalidInput("weights must be finite, one per asset".into()));
    }
    let spec = fit.spec()?;
    let res = residuals_for_spec(&spec, panel, &fit.init)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let paths = fhs_paths(&spec, &res, horizon, n_draws, &mut rng)?;
    Ok((&paths * weights).iter().copied().collect())
}

/// `VaR = -q` where `q` is the type-1 empirical `alpha`-quantile, the order
/// statistic of rank `ceil(alpha * n)`.
pub fn var_from_distribution(draws: &[f64], alpha: f64) -> Result<f64> {
    if draws.is_empty() {
        return Err(Error::InvalidInput("no draws".into()));
    }
    if !(alpha > 0.0 && alpha <= 0.5) {
        return Err(Error::InvalidInput(format!("alpha = {alpha} outside (0, 0.5]")));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((alpha * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Ok(-sorted[rank - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DynamicsParams, InitScheme};

    #[test]
    fn quantile_construction() {
        let mut draws: Vec<f64> = vec![-3.0];
        draws.extend((0..19).map(|k| k as f64 - 2.0));
        // 20 draws, rank ceil(0.05 * 20) = 1
        assert_eq!(var_from_distribution(&draws, 0.05).unwrap(), 3.0);
        assert_eq!(var_from_distribution(&[1.5; 7], 0.05).unwrap(), -1.5);
        let sym: Vec<f64> = (-50..=50).map(|k| k as f64).collect();
        assert_eq!(var_from_distribution(&sym, 0.5).unwrap(), 0.0);
        assert!(var_from_distribution(&[], 0.05).is_err());
        assert!(var_from_distribution(&[1.0], 0.7).is_err());
    }

    #[test]
    fn unit_model_residuals_equal_returns() {
        let dynamics = DynamicsParams::diagonal(&[0.0, 0.0], &[0.0, 0.0]).unwrap();
        let spec =
            ModelSpec::from_intercepts(DMatrix::identity(2, 2), DVector::from_vec(vec![1.0, 1.0]), dynamics).unwrap();
        let panel = ReturnPanel::from_rows(&[vec![0.3, -1.0], vec![2.0, 0.5], vec![-0.1, 0.0]]).unwrap();
        let res = residuals_for_spec(&spec, &panel, &InitScheme::Unconditional).unwrap();
        assert_eq!(res.z, *panel.data());
    }

    #[test]
    fn zero_residuals_give_zero_draws() {
        let dynamics = DynamicsParams::diagonal(&[0.1, 0.1], &[0.8, 0.8]).unwrap();
        let spec =
            ModelSpec::from_intercepts(DMatrix::identity(2, 2), DVector::from_vec(vec![0.1, 0.2]), dynamics).unwrap();
        let res = ResidualPanel {
            z: DMatrix::zeros(10, 2),
            lambda: DMatrix::from_element(10, 2, 1.0),
            next_lambda: DVector::from_vec(vec![1.0, 1.0]),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws = fhs_paths(&spec, &res, 5, 1000, &mut rng).unwrap();
        assert!(draws.iter().all(|&x| x == 0.0));
    }
}
