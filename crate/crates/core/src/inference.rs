//! Two-step sandwich covariance of `(gamma, kappa_i)` and the delta-method
//! standard error of the implied intercept.
//!
//! Parameter ordering throughout: `[lambda (p), vec(V) (p^2), free kappa_i]`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimation::equation::{equation_score_path, free_indices, nll_pass};
use crate::estimation::{equation_hessian, ModelFit, RotatedSquares};
use crate::model::InitScheme;
use crate::panel::ReturnPanel;
use crate::spectral::{sample_covariance, shifted_pseudo_inverse};

pub const J_CONDITION_LIMIT: f64 = 1e12;
const GAMMA_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct SandwichBlocks {
    pub equation: usize,
    /// Free coordinates of `kappa_i` (indices into `[a_i1, ..., a_ip, b_i]`).
    pub free: Vec<usize>,
    /// Hessian of the equation criterion in the free `kappa_i`.
    pub j: DMatrix<f64>,
    /// Cross derivative of the mean score with respect to `gamma`.
    pub k: DMatrix<f64>,
    /// `(1/T) sum_t omega_t omega_t'`.
    pub omega: DMatrix<f64>,
    pub n_obs: usize,
}

impl SandwichBlocks {
    pub fn gamma_dim(&self) -> usize {
        self.k.ncols()
    }

    pub fn dim(&self) -> usize {
        self.omega.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquationInference {
    pub equation: usize,
    pub free: Vec<usize>,
    /// Asymptotic covariance of `sqrt(T) (theta_hat - theta)`.
    pub sigma: DMatrix<f64>,
    pub se_gamma: Vec<f64>,
    pub se_kappa: Vec<f64>,
    pub n_obs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InterceptDelta {
    pub w: f64,
    pub w_se: f64,
}

/// Per-observation moment and score contributions `omega_t` (`T x e`).
pub fn omega_contributions(fit: &ModelFit, panel: &ReturnPanel, i: usize) -> Result<DMatrix<f64>> {
    let p = fit.dim();
    let n = panel.n_obs();
    let x = panel.data();
    let lambda = fit.gamma.lambda();
    let v = fit.gamma.eigenvectors();
    let h = sample_covariance(panel)?;
    let y = x * v;
    let sq = RotatedSquares::from_rotated(&y);
    let free = free_indices(&fit.restriction, p, i);
    let kappa = fit.kappa_row(i);
    let scores = equation_score_path(&kappa, lambda.as_slice(), &sq, i, &fit.init)?;
    let pinvs: Vec<DMatrix<f64>> = (0..p)
        .map(|j| shifted_pseudo_inverse(&h, lambda[j]))
        .collect::<Result<_>>()?;
    let e = p * (p + 1) + free.len();
    let mut out = DMatrix::zeros(n, e);
    let mut r = DVector::zeros(p);
    for t in 0..n {
        for j in 0..p {
            out[(t, j)] = y[(t, j)] * y[(t, j)] - lambda[j];
        }
        for j in 0..p {
            for row in 0..p {
                r[row] = x[(t, row)] * y[(t, j)] - lambda[j] * v[(row, j)];
            }
            let d = &pinvs[j] * &r;
            for row in 0..p {
                out[(t, p + j * p + row)] = d[row];
            }
        }
        for (m, &k) in free.iter().enumerate() {
            out[(t, p * (p + 1) + m)] = scores[(t, k)];
        }
    }
    Ok(out)
}

/// Mean score of equation `i` in its free coordinates with `gamma = [lambda; vec(V)]`
/// taken as given (the eigenvector matrix is not re-orthonormalized).
fn mean_score_at(
    panel: &ReturnPanel,
    gamma: &[f64],
    kappa: &[f64],
    i: usize,
    free: &[usize],
    init: &InitScheme,
) -> Vec<f64> {
    let p = kappa.len() - 1;
    let lambda = &gamma[..p];
    let v = DMatrix::from_column_slice(p, p, &gamma[p..]);
    let sq = RotatedSquares::from_rotated(&(panel.data() * v));
    let l0 = match init {
        InitScheme::Unconditional => lambda[i],
        InitScheme::Fixed(f) => f[i],
        InitScheme::SampleVariance => sq.column_mean(i),
    };
    let mut g = vec![0.0; p + 1];
    nll_pass(&sq, lambda, i, l0, kappa, Some(&mut g));
    free.iter().map(|&k| g[k]).collect()
}

/// Plug-in blocks for equation `i`. Refused when the fit sits on a constraint
/// or the first step flagged near-repeated eigenvalues.
pub fn sandwich_blocks(fit: &ModelFit, panel: &ReturnPanel, i: usize) -> Result<SandwichBlocks> {
    let p = fit.dim();
    if i >= p {
        return Err(Error::InvalidInput(format!("equation {} does not exist", i + 1)));
    }
    if panel.n_assets() != p {
        return Err(Error::InvalidInput("panel does not match the fit".into()));
    }
    if fit.gamma.has_near_repeated() {
        return Err(Error::InferenceRefused(
            "near-repeated eigenvalues make the eigenvector estimates unreliable".into(),
        ));
    }
    if !fit.equations[i].active.is_empty() || !fit.active_angles.is_empty() {
        return Err(Error::InferenceRefused(format!(
            "equation {} has parameters on the boundary of the parameter space",
            i + 1
        )));
    }
    let free = free_indices(&fit.restriction, p, i);
    let kappa = fit.kappa_row(i);
    let lambda = fit.gamma.lambda();
    let sq = RotatedSquares::from_rotated(&(panel.data() * fit.gamma.eigenvectors()));
    let h_full = equation_hessian(&kappa, lambda.as_slice(), &sq, i, &fit.init)?;
    let j = DMatrix::from_fn(free.len(), free.len(), |r, c| h_full[(free[r], free[c])]);

    let gamma: Vec<f64> = fit.gamma.stacked().iter().copied().collect();
    let q = gamma.len();
    let mut k = DMatrix::zeros(free.len(), q);
    for c in 0..q {
        let step = GAMMA_STEP * gamma[c].abs().max(1.0);
        let mut gp = gamma.clone();
        let mut gm = gamma.clone();
        gp[c] += step;
        gm[c] -= step;
        let sp = mean_score_at(panel, &gp, &kappa, i, &free, &fit.init);
        let sm = mean_score_at(panel, &gm, &kappa, i, &free, &fit.init);
        for r in 0..free.len() {
            k[(r, c)] = (sp[r] - sm[r]) / (2.0 * step);
        }
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(
            "cross derivatives are not finite at the fit".into(),
        ));
    }

    let w = omega_contributions(fit, panel, i)?;
    let n = panel.n_obs() as f64;
    let omega = w.transpose() * &w / n;
    Ok(SandwichBlocks {
        equation: i,
        free,
        j,
        k,
        omega: (&omega + omega.transpose()) * 0.5,
        n_obs: panel.n_obs(),
    })
}

/// `Sigma = M Omega M'` with `M = [[I, 0], [-J^{-1} K, -J^{-1}]]`.
pub fn sandwich_sigma(blocks: &SandwichBlocks) -> Result<EquationInference> {
    let q = blocks.gamma_dim();
    let m = blocks.j.nrows();
    if blocks.omega.nrows() != q + m || blocks.k.nrows() != m {
        return Err(Error::InvalidInput("inconsistent sandwich block dimensions".into()));
    }
    let sv = blocks.j.clone().symmetric_eigen().eigenvalues.abs();
    let smax = sv.max();
    let smin = sv.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition < J_CONDITION_LIMIT) {
        return Err(Error::Singular { condition });
    }
    let j_inv = blocks.j.clone().try_inverse().ok_or(Error::Singular { condition })?;
    let mut big = DMatrix::zeros(q + m, q + m);
    for d in 0..q {
        big[(d, d)] = 1.0;
    }
    let jk = -(&j_inv * &blocks.k);
    big.view_mut((q, 0), (m, q)).copy_from(&jk);
    big.view_mut((q, q), (m, m)).copy_from(&(-&j_inv));
    let sigma = &big * &blocks.omega * big.transpose();
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    let n = blocks.n_obs as f64;
    let se = |d: usize| (sigma[(d, d)].max(0.0) / n).sqrt();
    Ok(EquationInference {
        equation: blocks.equation,
        free: blocks.free.clone(),
        se_gamma: (0..q).map(se).collect(),
        se_kappa: (q..q + m).map(se).collect(),
        sigma,
        n_obs: blocks.n_obs,
    })
}

/// Blocks and covariance in one call.
pub fn equation_inference(fit: &ModelFit, panel: &ReturnPanel, i: usize) -> Result<EquationInference> {
    sandwich_sigma(&sandwich_blocks(fit, panel, i)?)
}

/// Gradient of `w_i` in the `[lambda, vec(V), free kappa_i]` ordering.
pub fn intercept_gradient(fit: &ModelFit, i: usize, free: &[usize]) -> DVector<f64> {
    let p = fit.dim();
    let lambda = fit.gamma.lambda();
    let kappa = fit.kappa_row(i);
    let b = kappa[p];
    let mut phi = DVector::zeros(p * (p + 1) + free.len());
    for k in 0..p {
        phi[k] = if k == i { 1.0 - b } else { 0.0 } - kappa[k];
    }
    for (m, &idx) in free.iter().enumerate() {
        phi[p * (p + 1) + m] = if idx == p { -lambda[i] } else { -lambda[idx] };
    }
    phi
}

/// Delta-method standard error of `w_i`.
pub fn intercept_delta(fit: &ModelFit, inference: &EquationInference, i: usize) -> Result<InterceptDelta> {
    if inference.equation != i {
        return Err(Error::InvalidInput("inference belongs to a different equation".into()));
    }
    let phi = intercept_gradient(fit, i, &inference.free);
    if phi.len() != inference.sigma.nrows() {
        return Err(Error::InvalidInput(
            "covariance dimension does not match the fit".into(),
        ));
    }
    let var = (phi.transpose() * &inference.sigma * &phi)[(0, 0)];
    Ok(InterceptDelta {
        w: fit.w[i],
        w_se: (var.max(0.0) / inference.n_obs as f64).sqrt(),
    })
}
