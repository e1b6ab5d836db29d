//! Spectral targeting estimation and the joint QMLE benchmark.

pub mod equation;
pub mod joint;
pub mod optimizer;
pub mod rotation;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{DynamicsParams, InitScheme, ModelSpec};
use crate::panel::ReturnPanel;
use crate::spectral::{eigen_sym, sample_covariance, SpectralTarget, SpectralWarning};

pub use equation::{
    equation_hessian, equation_nll, equation_score, equation_score_path, fit_equation, implied_intercept, EquationFit,
    RotatedSquares,
};
pub use joint::{fit_joint_qmle, joint_fit_count};
pub use optimizer::{minimize_box, BoxSettings, Objective, OptimResult};
pub use rotation::{fit_rotation_first_step, rotation_cost, RotationConfig, RotationFit};

/// Upper bound on every ARCH loading.
pub const A_UPPER: f64 = 1.0;
/// Upper bound on every GARCH persistence coefficient.
pub const B_UPPER: f64 = 1.0 - 1e-6;
/// Implied intercepts must satisfy `w_i >= W_FLOOR * lambda_i`.
pub const W_FLOOR: f64 = 1e-10;

/// Zero restrictions on the dynamics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Restriction {
    /// `A` diagonal (no spill-overs).
    pub diag_a: bool,
    /// `B = 0` (pure ARCH eigenvalue dynamics).
    pub arch_only: bool,
}

impl Restriction {
    pub fn diagonal() -> Self {
        Self {
            diag_a: true,
            arch_only: false,
        }
    }

    pub fn free_count(&self, p: usize) -> usize {
        equation::free_indices(self, p, 0).len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum StartPoint {
    /// `a_ii = 0.05`, `a_ij = 0.01`, `b_i = 0.85`, then the alternatives.
    Default,
    /// Tried first, before the default starts.
    Given(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizerConfig {
    pub settings: BoxSettings,
    /// Number of starting points tried per equation (the best converged optimum wins).
    pub multi_start: usize,
    pub start: StartPoint,
    pub restriction: Restriction,
    pub init: InitScheme,
    /// Fit the equations on the rayon pool instead of sequentially.
    pub parallel_equations: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            settings: BoxSettings::default(),
            multi_start: 3,
            start: StartPoint::Default,
            restriction: Restriction::default(),
            init: InitScheme::Unconditional,
            parallel_equations: false,
        }
    }
}

impl OptimizerConfig {
    pub fn with_restriction(restriction: Restriction) -> Self {
        Self {
            restriction,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    #[serde(rename = "STE")]
    Ste,
    #[serde(rename = "joint-QMLE")]
    JointQmle,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquationReport {
    pub nll: f64,
    pub iterations: usize,
    pub converged: bool,
    pub starts_tried: usize,
    /// Indices into `kappa` sitting on a bound.
    pub active: Vec<usize>,
    pub message: String,
}

/// A fitted model in the identified equation order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFit {
    pub method: Method,
    pub restriction: Restriction,
    pub gamma: SpectralTarget,
    /// Row `i` is `kappa_i = [a_i1, ..., a_ip, b_i]`.
    pub kappa: DMatrix<f64>,
    pub w: DVector<f64>,
    pub equations: Vec<EquationReport>,
    pub total_nll: f64,
    pub n_obs: usize,
    pub init: InitScheme,
    /// Rotation angles on a bound (joint QMLE only).
    pub active_angles: Vec<usize>,
}

impl ModelFit {
    pub fn dim(&self) -> usize {
        self.gamma.dim()
    }

    pub fn kappa_row(&self, i: usize) -> Vec<f64> {
        self.kappa.row(i).iter().copied().collect()
    }

    pub fn a(&self) -> DMatrix<f64> {
        let p = self.dim();
        self.kappa.columns(0, p).into_owned()
    }

    pub fn b(&self) -> DVector<f64> {
        self.kappa.column(self.dim()).into_owned()
    }

    pub fn dynamics(&self) -> Result<DynamicsParams> {
        DynamicsParams::new(self.a(), self.b())
    }

    pub fn spec(&self) -> Result<ModelSpec> {
        ModelSpec::from_targets(
            self.gamma.lambda().clone(),
            self.gamma.eigenvectors().clone(),
            self.dynamics()?,
        )
    }

    pub fn has_active_constraints(&self) -> bool {
        !self.active_angles.is_empty() || self.equations.iter().any(|e| !e.active.is_empty())
    }

    pub fn summary(&self) -> FitSummary {
        let p = self.dim();
        FitSummary {
            method: self.method,
            restriction: self.restriction,
            n_obs: self.n_obs,
            lambda: self.gamma.lambda().iter().copied().collect(),
            eigenvectors: (0..p)
                .map(|r| self.gamma.eigenvectors().row(r).iter().copied().collect())
                .collect(),
            a: (0..p)
                .map(|r| self.kappa.row(r).columns(0, p).iter().copied().collect())
                .collect(),
            b: self.b().iter().copied().collect(),
            w: self.w.iter().copied().collect(),
            total_nll: self.total_nll,
            equations: self.equations.clone(),
            warnings: self.gamma.warnings().to_vec(),
            active_angles: self.active_angles.clone(),
        }
    }
}

/// Serializable view of a [`ModelFit`] (matrices as row lists).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSummary {
    pub method: Method,
    pub restriction: Restriction,
    pub n_obs: usize,
    pub lambda: Vec<f64>,
    pub eigenvectors: Vec<Vec<f64>>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub w: Vec<f64>,
    pub total_nll: f64,
    pub equations: Vec<EquationReport>,
    pub warnings: Vec<SpectralWarning>,
    pub active_angles: Vec<usize>,
}

/// `Y = X V`, i.e. `Y_t = V'X_t` row by row.
pub fn rotate_returns(panel: &ReturnPanel, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if v.nrows() != panel.n_assets() || v.ncols() != panel.n_assets() {
        return Err(Error::InvalidInput(format!(
            "rotation is {}x{} for {} assets",
            v.nrows(),
            v.ncols(),
            panel.n_assets()
        )));
    }
    Ok(panel.data() * v)
}

/// Sum of the equation criteria at `(targets, V, kappa)`: the joint Gaussian
/// negative log-likelihood averaged over `t = 1..T-1`.
pub fn decomposed_nll(
    panel: &ReturnPanel,
    targets: &DVector<f64>,
    v: &DMatrix<f64>,
    kappa: &DMatrix<f64>,
    init: &InitScheme,
) -> Result<f64> {
    let sq = RotatedSquares::from_rotated(&rotate_returns(panel, v)?);
    let t = targets.as_slice();
    let mut total = 0.0;
    for i in 0..t.len() {
        let k: Vec<f64> = kappa.row(i).iter().copied().collect();
        total += equation_nll(&k, t, &sq, i, init)?;
    }
    Ok(total)
}

fn validate_panel(panel: &ReturnPanel) -> Result<()> {
    if panel.n_obs() <= panel.n_assets() || panel.n_obs() < 2 {
        return Err(Error::InvalidInput(format!(
            "need more observations than assets (T = {}, p = {})",
            panel.n_obs(),
            panel.n_assets()
        )));
    }
    panel.check_non_degenerate()
}

/// Two-step spectral targeting estimator: eigendecomposition of the sample
/// second-moment matrix, then one univariate QMLE per rotated return.
pub fn fit_spectral_targeting(panel: &ReturnPanel, cfg: &OptimizerConfig) -> Result<ModelFit> {
    validate_panel(panel)?;
    let gamma = eigen_sym(&sample_covariance(panel)?)?;
    fit_given_target(panel, gamma, cfg)
}

/// Second step only, with the first-step target supplied.
pub fn fit_given_target(panel: &ReturnPanel, gamma: SpectralTarget, cfg: &OptimizerConfig) -> Result<ModelFit> {
    let p = gamma.dim();
    let sq = RotatedSquares::from_rotated(&rotate_returns(panel, gamma.eigenvectors())?);
    let fit_one = |i: usize| fit_equation(&sq, gamma.lambda(), i, cfg);
    let fits: Vec<Result<EquationFit>> = if cfg.parallel_equations {
        (0..p).into_par_iter().map(fit_one).collect()
    } else {
        (0..p).map(fit_one).collect()
    };
    let fits = fits.into_iter().collect::<Result<Vec<_>>>()?;
    let mut kappa = DMatrix::zeros(p, p + 1);
    let mut w = DVector::zeros(p);
    let mut equations = Vec::with_capacity(p);
    for (i, f) in fits.iter().enumerate() {
        for k in 0..=p {
            kappa[(i, k)] = f.kappa[k];
        }
        w[i] = f.w;
        equations.push(EquationReport {
            nll: f.nll,
            iterations: f.iterations,
            converged: true,
            starts_tried: f.starts_tried,
            active: f.active.clone(),
            message: f.message.clone(),
        });
    }
    let total_nll = equations.iter().map(|e| e.nll).sum();
    Ok(ModelFit {
        method: Method::Ste,
        restriction: cfg.restriction,
        gamma,
        kappa,
        w,
        equations,
        total_nll,
        n_obs: panel.n_obs(),
        init: cfg.init.clone(),
        active_angles: Vec::new(),
    })
}
