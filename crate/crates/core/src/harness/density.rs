//! Large-sample distribution of the spectral targeting estimator in the three
//! bivariate ARCH designs.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimation::{fit_spectral_targeting, OptimizerConfig, Restriction};
use crate::harness::{io, mean, median, replication_seed, with_pool};
use crate::model::{simulate_path, CaseStudy, Innovations, SimulationConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityConfig {
    pub case: CaseStudy,
    pub n_replications: usize,
    pub n_obs: usize,
    pub seed: u64,
    pub bins: usize,
    /// Worker threads (0 = all cores).
    pub workers: usize,
    /// Summary, standardized samples and histograms are written here.
    pub out_dir: Option<PathBuf>,
}

impl DensityConfig {
    pub fn new(case: CaseStudy, n_replications: usize, n_obs: usize, seed: u64) -> Self {
        Self {
            case,
            n_replications,
            n_obs,
            seed,
            bins: 30,
            workers: 0,
            out_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Count divided by `n * width`, comparable to a density.
    pub density: f64,
    /// Standard normal density at the bin centre.
    pub normal_density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterSummary {
    pub name: String,
    pub truth: f64,
    pub mean: f64,
    pub sd: f64,
    pub median_abs_error: f64,
    /// Kolmogorov-Smirnov distance of the standardized sample to N(0, 1).
    pub ks_distance: f64,
    pub estimates: Vec<f64>,
    pub standardized: Vec<f64>,
    pub histogram: Vec<HistogramBin>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityReport {
    pub case: u8,
    pub n_replications: usize,
    pub n_obs: usize,
    pub n_failures: usize,
    /// `w_1` then `a_11`, where equation 1 has the dominant eigenvector of the design.
    pub parameters: Vec<ParameterSummary>,
}

/// `sup |F_n - Phi|` evaluated at both sides of every jump.
pub fn ks_distance_normal(sample: &[f64]) -> f64 {
    let phi = Normal::standard();
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = phi.cdf(x);
            ((i + 1) as f64 / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

fn standardize(x: &[f64]) -> (f64, f64, Vec<f64>) {
    let m = mean(x);
    let sd = if x.len() > 1 {
        (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    let z = if sd > 0.0 {
        x.iter().map(|v| (v - m) / sd).collect()
    } else {
        vec![0.0; x.len()]
    };
    (m, sd, z)
}

pub fn histogram(x: &[f64], bins: usize) -> Vec<HistogramBin> {
    if x.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &v in x {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let phi = Normal::standard();
    let n = x.len() as f64;
    counts
        .into_iter()
        .enumerate()
        .map(|(k, count)| {
            let lower = lo + k as f64 * width;
            let centre = lower + 0.5 * width;
            HistogramBin {
                lower,
                upper: lower + width,
                count,
                density: count as f64 / (n * width),
                normal_density: statrs::distribution::Continuous::pdf(&phi, centre),
            }
        })
        .collect()
}

fn summarize(name: &str, truth: f64, estimates: Vec<f64>, bins: usize) -> ParameterSummary {
    let (m, sd, z) = standardize(&estimates);
    let errors: Vec<f64> = estimates.iter().map(|e| (e - truth).abs()).collect();
    ParameterSummary {
        name: name.into(),
        truth,
        mean: m,
        sd,
        median_abs_error: median(&errors),
        ks_distance: ks_distance_normal(&z),
        histogram: histogram(&z, bins),
        estimates,
        standardized: z,
    }
}

/// Fits the diagonal ARCH model to `n_replications` simulated paths of the
/// chosen design and summarizes `w_1` and `a_11`.
pub fn run_density_study(cfg: &DensityConfig) -> Result<DensityReport> {
    if cfg.n_replications < 2 {
        return Err(Error::InvalidInput("at least two replications are required".into()));
    }
    if cfg.n_obs < 100 {
        return Err(Error::InvalidInput(format!(
            "T = {} is below the minimum of 100",
            cfg.n_obs
        )));
    }
    let spec = cfg.case.spec()?;
    let v0 = CaseStudy::eigenvectors();
    let opt = OptimizerConfig::with_restriction(Restriction {
        diag_a: true,
        arch_only: true,
    });
    let cell = u64::from(cfg.case.number());
    let fits: Vec<Result<Option<(f64, f64)>>> = with_pool(cfg.workers, || {
        (0..cfg.n_replications as u64)
            .into_par_iter()
            .map(|r| {
                let mut sim_cfg = SimulationConfig::new(cfg.n_obs, replication_seed(cfg.seed, cell, r));
                sim_cfg.allow_nonstationary = true;
                let sim = simulate_path(&spec, &sim_cfg, &Innovations::Gaussian)?;
                let fit = match fit_spectral_targeting(&sim.panel, &opt) {
                    Ok(f) => f,
                    Err(Error::Convergence { .. }) => return Ok(None),
                    Err(e) => return Err(e),
                };
                // the fitted equation whose eigenvector is closest to the design's first column
                let v = fit.gamma.eigenvectors();
                let k = (0..2)
                    .max_by(|&x, &y| {
                        let dx = v.column(x).dot(&v0.column(0)).abs();
                        let dy = v.column(y).dot(&v0.column(0)).abs();
                        dx.total_cmp(&dy)
                    })
                    .expect("two equations");
                Ok(Some((fit.w[k], fit.kappa[(k, k)])))
            })
            .collect()
    })?;
    let fits = fits.into_iter().collect::<Result<Vec<_>>>()?;
    let ok: Vec<(f64, f64)> = fits.iter().flatten().copied().collect();
    if ok.len() < 2 {
        return Err(Error::Convergence {
            context: format!("density study case {}: fewer than two replications", cell),
            traces: Vec::new(),
        });
    }
    let parameters = vec![
        summarize(
            "w1",
            CaseStudy::INTERCEPTS[0],
            ok.iter().map(|f| f.0).collect(),
            cfg.bins,
        ),
        summarize(
            "a11",
            cfg.case.arch_loadings()[0],
            ok.iter().map(|f| f.1).collect(),
            cfg.bins,
        ),
    ];
    let report = DensityReport {
        case: cfg.case.number(),
        n_replications: cfg.n_replications,
        n_obs: cfg.n_obs,
        n_failures: fits.len() - ok.len(),
        parameters,
    };
    if let Some(dir) = &cfg.out_dir {
        write_report(&report, dir)?;
    }
    Ok(report)
}

#[derive(Serialize)]
struct SampleRow {
    replication: usize,
    w1: f64,
    a11: f64,
    w1_standardized: f64,
    a11_standardized: f64,
}

fn write_report(report: &DensityReport, dir: &std::path::Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let c = report.case;
    io::write_json(report, dir.join(format!("density_case{c}.json")))?;
    let (w, a) = (&report.parameters[0], &report.parameters[1]);
    let rows: Vec<SampleRow> = (0..w.estimates.len())
        .map(|k| SampleRow {
            replication: k,
            w1: w.estimates[k],
            a11: a.estimates[k],
            w1_standardized: w.standardized[k],
            a11_standardized: a.standardized[k],
        })
        .collect();
    io::write_rows_csv(&rows, dir.join(format!("density_case{c}_samples.csv")))?;
    for p in &report.parameters {
        io::write_rows_csv(
            &p.histogram,
            dir.join(format!("density_case{c}_{}_histogram.csv", p.name)),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_of_normal_quantiles_is_small() {
        let phi = Normal::standard();
        let n = 400;
        let x: Vec<f64> = (0..n).map(|k| phi.inverse_cdf((k as f64 + 0.5) / n as f64)).collect();
        let d = ks_distance_normal(&x);
        assert!((d - 0.5 / n as f64).abs() < 1e-9, "{d}");
    }

    #[test]
    fn ks_of_shifted_point_mass() {
        assert!((ks_distance_normal(&[0.0; 10]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn histogram_counts_every_point() {
        let x: Vec<f64> = (0..101).map(|k| k as f64 / 10.0).collect();
        let h = histogram(&x, 7);
        assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), 101);
        let area: f64 = h.iter().map(|b| b.density * (b.upper - b.lower)).sum();
        assert!((area - 1.0).abs() < 1e-12);
    }
}
