//! Relative efficiency and fit time of spectral targeting against the joint QMLE.

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{fit_joint_qmle, fit_spectral_targeting, Method, ModelFit, OptimizerConfig, Restriction};
use crate::harness::{io, mean, replication_seed, with_pool};
use crate::model::{diagonal_benchmark_spec, simulate_path, Innovations, ModelSpec, SimulationConfig};
use crate::timing::cpu_timed;

/// Rows whose joint-QMLE failure rate exceeds this carry no RE statistic.
pub const MAX_QMLE_FAILURE_RATE: f64 = 0.2;

/// Data-generating process of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dgp {
    /// `A = 0.05 I`, `B = 0.85 I`, `lambda_i = (p + 1 - i) / 10`, all angles 0.5.
    DiagonalBenchmark,
}

impl Dgp {
    pub fn spec(&self, p: usize) -> Result<ModelSpec> {
        match self {
            Dgp::DiagonalBenchmark => diagonal_benchmark_spec(p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub dimensions: Vec<usize>,
    pub n_replications: usize,
    pub n_obs: usize,
    pub seed: u64,
    pub estimators: Vec<Method>,
    pub dgp: Dgp,
    /// Where the table is written as `relative_efficiency.csv`/`.json`.
    pub out_dir: Option<PathBuf>,
    /// Worker threads (0 = all cores); keep at 1 when timings matter.
    pub workers: usize,
    pub optimizer: OptimizerConfig,
}

impl ExperimentConfig {
    pub fn new(dimensions: Vec<usize>, n_replications: usize, n_obs: usize, seed: u64) -> Self {
        Self {
            dimensions,
            n_replications,
            n_obs,
            seed,
            estimators: vec![Method::Ste, Method::JointQmle],
            dgp: Dgp::DiagonalBenchmark,
            out_dir: None,
            workers: 1,
            optimizer: OptimizerConfig::with_restriction(Restriction::diagonal()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_replications < 1 {
            return Err(Error::InvalidInput("at least one replication is required".into()));
        }
        if self.n_obs < 100 {
            return Err(Error::InvalidInput(format!(
                "T = {} is below the minimum of 100",
                self.n_obs
            )));
        }
        if self.dimensions.is_empty() || self.dimensions.contains(&0) {
            return Err(Error::InvalidInput(
                "dimensions must be a non-empty list of positive sizes".into(),
            ));
        }
        if !self.estimators.contains(&Method::Ste) {
            return Err(Error::InvalidInput("the estimator set must include STE".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeEfficiencyRow {
    pub p: usize,
    pub n_params: usize,
    pub n_replications: usize,
    /// Mean CPU seconds per fit attempt, converged or not.
    pub ste_seconds: f64,
    pub qmle_seconds: Option<f64>,
    /// Missing when QMLE was not run or failed too often.
    pub re: Option<f64>,
    pub ste_failure_rate: f64,
    pub qmle_failure_rate: Option<f64>,
}

/// `[vec(H), diag(A), b]` with `H = V diag(lambda) V'`.
fn theta(spec_v: &DMatrix<f64>, lambda: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let h = spec_v * DMatrix::from_diagonal(lambda) * spec_v.transpose();
    let p = lambda.len();
    let mut out = Vec::with_capacity(p * p + 2 * p);
    out.extend(h.iter().copied());
    out.extend((0..p).map(|i| a[(i, i)]));
    out.extend(b.iter().copied());
    DVector::from_vec(out)
}

fn fit_theta(fit: &ModelFit) -> DVector<f64> {
    theta(fit.gamma.eigenvectors(), fit.gamma.lambda(), &fit.a(), &fit.b())
}

fn spec_theta(spec: &ModelSpec) -> Result<DVector<f64>> {
    let (id, _) = spec.identified()?;
    let lambda = id.unconditional().ok_or(Error::Nonstationary {
        radius: id.dynamics().persistence_radius(),
    })?;
    Ok(theta(id.eigenvectors(), lambda, id.dynamics().a(), id.dynamics().b()))
}

fn centred_mean(x: &[DVector<f64>], truth: &DVector<f64>) -> DVector<f64> {
    x.iter().fold(DVector::zeros(truth.len()), |acc, v| acc + v - truth) / x.len() as f64
}

/// `(s - t)' I (s - t) / (q - t)' I (q - t)` where `s`, `q` are the replication
/// means of the two estimators and `I` is the QMLE replication spread around
/// the truth `t`.
pub fn relative_efficiency_statistic(ste: &[DVector<f64>], qmle: &[DVector<f64>], truth: &DVector<f64>) -> Result<f64> {
    if ste.is_empty() || qmle.is_empty() {
        return Err(Error::InvalidInput(
            "both estimators need at least one replication".into(),
        ));
    }
    let k = truth.len();
    if ste.iter().chain(qmle).any(|v| v.len() != k) {
        return Err(Error::InvalidInput("parameter vectors differ in length".into()));
    }
    let mut info = DMatrix::zeros(k, k);
    for q in qmle {
        let d = q - truth;
        info += &d * d.transpose();
    }
    info /= qmle.len() as f64;
    let ds = centred_mean(ste, truth);
    let dq = centred_mean(qmle, truth);
    let num = (ds.transpose() * &info * &ds)[(0, 0)];
    let den = (dq.transpose() * &info * &dq)[(0, 0)];
    if !(den > 0.0) {
        return Err(Error::Singular {
            condition: f64::INFINITY,
        });
    }
    Ok(num / den)
}

/// Estimates (missing on non-convergence) with the CPU seconds spent.
type Timed = (Option<DVector<f64>>, f64);

struct Replication {
    ste: Timed,
    qmle: Option<Timed>,
}

fn replicate(cfg: &ExperimentConfig, spec: &ModelSpec, seed: u64, with_qmle: bool) -> Result<Replication> {
    let sim = simulate_path(spec, &SimulationConfig::new(cfg.n_obs, seed), &Innovations::Gaussian)?;
    let timed = |method: Method| -> Result<Timed> {
        let (fit, secs) = cpu_timed(|| match method {
            Method::Ste => fit_spectral_targeting(&sim.panel, &cfg.optimizer),
            Method::JointQmle => fit_joint_qmle(&sim.panel, &cfg.optimizer),
        });
        match fit {
            Ok(f) => Ok((Some(fit_theta(&f)), secs)),
            Err(Error::Convergence { .. }) => Ok((None, secs)),
            Err(e) => Err(e),
        }
    };
    Ok(Replication {
        ste: timed(Method::Ste)?,
        qmle: if with_qmle {
            Some(timed(Method::JointQmle)?)
        } else {
            None
        },
    })
}

/// One row per dimension: mean CPU time per fit and the RE statistic.
pub fn run_relative_efficiency(cfg: &ExperimentConfig) -> Result<Vec<RelativeEfficiencyRow>> {
    cfg.validate()?;
    let with_qmle = cfg.estimators.contains(&Method::JointQmle);
    let mut rows = Vec::with_capacity(cfg.dimensions.len());
    for &p in &cfg.dimensions {
        let spec = cfg.dgp.spec(p)?;
        let truth = spec_theta(&spec)?;
        let reps: Vec<Result<Replication>> = with_pool(cfg.workers, || {
            (0..cfg.n_replications as u64)
                .into_par_iter()
                .map(|r| replicate(cfg, &spec, replication_seed(cfg.seed, p as u64, r), with_qmle))
                .collect()
        })?;
        let reps = reps.into_iter().collect::<Result<Vec<_>>>()?;
        let n = reps.len() as f64;

        let ste_theta: Vec<DVector<f64>> = reps.iter().filter_map(|r| r.ste.0.clone()).collect();
        if ste_theta.is_empty() {
            return Err(Error::Convergence {
                context: format!("STE at p = {p}: every replication"),
                traces: Vec::new(),
            });
        }
        let ste_seconds = mean(&reps.iter().map(|r| r.ste.1).collect::<Vec<_>>());

        let (qmle_seconds, qmle_failure_rate, re) = if with_qmle {
            let runs: Vec<&Timed> = reps.iter().filter_map(|r| r.qmle.as_ref()).collect();
            let q: Vec<DVector<f64>> = runs.iter().filter_map(|t| t.0.clone()).collect();
            let failure = 1.0 - q.len() as f64 / n;
            let secs = mean(&runs.iter().map(|t| t.1).collect::<Vec<_>>());
            let re = if failure > MAX_QMLE_FAILURE_RATE {
                None
            } else {
                relative_efficiency_statistic(&ste_theta, &q, &truth).ok()
            };
            (Some(secs), Some(failure), re)
        } else {
            (None, None, None)
        };
        rows.push(RelativeEfficiencyRow {
            p,
            n_params: p * (p - 1) / 2 + 3 * p,
            n_replications: cfg.n_replications,
            ste_seconds,
            qmle_seconds,
            re,
            ste_failure_rate: 1.0 - ste_theta.len() as f64 / n,
            qmle_failure_rate,
        });
    }
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir)?;
        io::write_rows_csv(&rows, dir.join("relative_efficiency.csv"))?;
        io::write_json(&rows, dir.join("relative_efficiency.json"))?;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_estimators_give_unit_ratio() {
        let truth = DVector::from_vec(vec![1.0, 0.5, 0.2]);
        let draws: Vec<DVector<f64>> = (0..5)
            .map(|k| &truth + DVector::from_vec(vec![0.01 * k as f64, -0.02, 0.003 * (k * k) as f64]))
            .collect();
        assert_eq!(relative_efficiency_statistic(&draws, &draws, &truth).unwrap(), 1.0);
    }

    #[test]
    fn truth_vector_layout() {
        let t = spec_theta(&diagonal_benchmark_spec(2).unwrap()).unwrap();
        assert_eq!(t.len(), 8);
        assert_eq!(&t.as_slice()[4..], &[0.05, 0.05, 0.85, 0.85]);
        let h = DMatrix::from_column_slice(2, 2, &t.as_slice()[..4]);
        assert!((h.trace() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(ExperimentConfig::new(vec![2], 0, 500, 1).validate().is_err());
        assert!(ExperimentConfig::new(vec![2], 5, 99, 1).validate().is_err());
        assert!(ExperimentConfig::new(vec![], 5, 500, 1).validate().is_err());
        assert!(ExperimentConfig::new(vec![2, 3], 5, 500, 1).validate().is_ok());
    }
}
