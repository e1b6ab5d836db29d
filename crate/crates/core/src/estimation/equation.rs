//! Per-equation Gaussian quasi-likelihood of the rotated returns under the
//! targeting parameterization, with analytic score and Hessian in `kappa`.
//!
//! For equation `i`, `kappa = [a_i1, ..., a_ip, b_i]`, the intercept is
//! `w_i = (1 - b_i) lambda_i - sum_j a_ij lambda_j` and
//! `lambda_{i,t} = w_i + sum_j a_ij y_{j,t-1}^2 + b_i lambda_{i,t-1}`.
//! The criterion averages `log lambda_{i,t} + y_{i,t}^2 / lambda_{i,t}` over
//! `t = 1..T-1`, conditioning on the first observation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result, StartTrace};
use crate::estimation::optimizer::{minimize_box, Objective, OptimResult};
use crate::estimation::{OptimizerConfig, Restriction, StartPoint, A_UPPER, B_UPPER, W_FLOOR};
use crate::model::InitScheme;

/// Squared rotated returns, row-major (`T x p`).
#[derive(Debug, Clone, PartialEq)]
pub struct RotatedSquares {
    n_obs: usize,
    p: usize,
    sq: Vec<f64>,
}

impl RotatedSquares {
    pub fn from_rotated(y: &DMatrix<f64>) -> Self {
        let (n_obs, p) = y.shape();
        let mut sq = vec![0.0; n_obs * p];
        for t in 0..n_obs {
            for j in 0..p {
                let v = y[(t, j)];
                sq[t * p + j] = v * v;
            }
        }
        Self { n_obs, p, sq }
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.sq[t * self.p..(t + 1) * self.p]
    }

    pub fn get(&self, t: usize, j: usize) -> f64 {
        self.sq[t * self.p + j]
    }

    /// `(1/T) sum_t y_{j,t}^2`.
    pub fn column_mean(&self, j: usize) -> f64 {
        (0..self.n_obs).map(|t| self.get(t, j)).sum::<f64>() / self.n_obs as f64
    }
}

/// `w_i = (1 - b_i) lambda_i - sum_j a_ij lambda_j`.
pub fn implied_intercept(kappa: &[f64], targets: &[f64], i: usize) -> f64 {
    let p = targets.len();
    let b = kappa[p];
    (1.0 - b) * targets[i] - (0..p).map(|j| kappa[j] * targets[j]).sum::<f64>()
}

/// Whether `kappa` lies in the admissible region for equation `i`.
pub fn is_admissible(kappa: &[f64], targets: &[f64], i: usize) -> bool {
    let p = targets.len();
    kappa.len() == p + 1
        && kappa.iter().all(|v| v.is_finite() && *v >= 0.0)
        && kappa[p] < 1.0
        && implied_intercept(kappa, targets, i) >= W_FLOOR * targets[i]
}

/// Initial eigenvalue `lambda_{i,0}` for an equation.
pub fn initial_eigenvalue(init: &InitScheme, targets: &[f64], sq: &RotatedSquares, i: usize) -> Result<f64> {
    let v = match init {
        InitScheme::Unconditional => targets[i],
        InitScheme::Fixed(v) => *v
            .get(i)
            .ok_or_else(|| Error::InvalidInput("fixed initial eigenvalues have the wrong length".into()))?,
        InitScheme::SampleVariance => sq.column_mean(i),
    };
    if !(v > 0.0) {
        return Err(Error::InvalidInput("initial eigenvalue must be positive".into()));
    }
    Ok(v)
}

/// Averaged negative log-likelihood and (optionally) its gradient in the full
/// `kappa`. Returns `+inf` outside the admissible region.
pub(crate) fn nll_pass(
    sq: &RotatedSquares,
    targets: &[f64],
    i: usize,
    lambda0: f64,
    kappa: &[f64],
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let p = sq.dim();
    let n = sq.n_obs();
    if n < 2 || !is_admissible(kappa, targets, i) {
        return f64::INFINITY;
    }
    let w = implied_intercept(kappa, targets, i);
    let b = kappa[p];
    let a = &kappa[..p];
    let mut lam = lambda0;
    let mut total = 0.0;
    let mut d = vec![0.0; p + 1];
    if let Some(g) = grad.as_deref_mut() {
        g.iter_mut().for_each(|v| *v = 0.0);
    }
    for t in 1..n {
        let prev = sq.row(t - 1);
        let lam_prev = lam;
        let mut l = w + b * lam_prev;
        for j in 0..p {
            l += a[j] * prev[j];
        }
        lam = l;
        let y2 = sq.get(t, i);
        total += lam.ln() + y2 / lam;
        if let Some(g) = grad.as_deref_mut() {
            for j in 0..p {
                d[j] = prev[j] - targets[j] + b * d[j];
            }
            d[p] = lam_prev - targets[i] + b * d[p];
            let coef = (1.0 - y2 / lam) / lam;
            for k in 0..=p {
                g[k] += coef * d[k];
            }
        }
    }
    let scale = 1.0 / (n - 1) as f64;
    if let Some(g) = grad {
        g.iter_mut().for_each(|v| *v *= scale);
    }
    let out = total * scale;
    if out.is_finite() {
        out
    } else {
        f64::INFINITY
    }
}

/// Conditional eigenvalue path `lambda_{i,t}` for `t = 0..T-1`.
pub fn equation_path(sq: &RotatedSquares, targets: &[f64], i: usize, lambda0: f64, kappa: &[f64]) -> Vec<f64> {
    let p = sq.dim();
    let w = implied_intercept(kappa, targets, i);
    let mut out = Vec::with_capacity(sq.n_obs());
    let mut lam = lambda0;
    out.push(lam);
    for t in 1..sq.n_obs() {
        let prev = sq.row(t - 1);
        let mut l = w + kappa[p] * lam;
        for j in 0..p {
            l += kappa[j] * prev[j];
        }
        lam = l;
        out.push(lam);
    }
    out
}

/// Negative log-likelihood of equation `i`; `+inf` when `kappa` is inadmissible.
pub fn equation_nll(kappa: &[f64], targets: &[f64], sq: &RotatedSquares, i: usize, init: &InitScheme) -> Result<f64> {
    check_kappa(kappa, targets, sq, i)?;
    let l0 = initial_eigenvalue(init, targets, sq, i)?;
    Ok(nll_pass(sq, targets, i, l0, kappa, None))
}

/// Analytic gradient of [`equation_nll`] with respect to the full `kappa`.
pub fn equation_score(
    kappa: &[f64],
    targets: &[f64],
    sq: &RotatedSquares,
    i: usize,
    init: &InitScheme,
) -> Result<Vec<f64>> {
    check_kappa(kappa, targets, sq, i)?;
    if !is_admissible(kappa, targets, i) {
        return Err(Error::InvalidInput(format!(
            "kappa is outside the admissible region of equation {}",
            i + 1
        )));
    }
    let l0 = initial_eigenvalue(init, targets, sq, i)?;
    let mut g = vec![0.0; targets.len() + 1];
    nll_pass(sq, targets, i, l0, kappa, Some(&mut g));
    Ok(g)
}

/// Per-observation scores `d l_t / d kappa`; row 0 is zero (no likelihood term).
pub fn equation_score_path(
    kappa: &[f64],
    targets: &[f64],
    sq: &RotatedSquares,
    i: usize,
    init: &InitScheme,
) -> Result<DMatrix<f64>> {
    check_kappa(kappa, targets, sq, i)?;
    let p = sq.dim();
    let n = sq.n_obs();
    let lam_path = equation_path(sq, targets, i, initial_eigenvalue(init, targets, sq, i)?, kappa);
    let b = kappa[p];
    let mut d = vec![0.0; p + 1];
    let mut out = DMatrix::zeros(n, p + 1);
    for t in 1..n {
        let prev = sq.row(t - 1);
        for j in 0..p {
            d[j] = prev[j] - targets[j] + b * d[j];
        }
        d[p] = lam_path[t - 1] - targets[i] + b * d[p];
        let lam = lam_path[t];
        let coef = (1.0 - sq.get(t, i) / lam) / lam;
        for k in 0..=p {
            out[(t, k)] = coef * d[k];
        }
    }
    Ok(out)
}

/// Analytic Hessian of [`equation_nll`] with respect to the full `kappa`.
pub fn equation_hessian(
    kappa: &[f64],
    targets: &[f64],
    sq: &RotatedSquares,
    i: usize,
    init: &InitScheme,
) -> Result<DMatrix<f64>> {
    check_kappa(kappa, targets, sq, i)?;
    let p = sq.dim();
    let n = sq.n_obs();
    let m = p + 1;
    let lam_path = equation_path(sq, targets, i, initial_eigenvalue(init, targets, sq, i)?, kappa);
    let b = kappa[p];
    let mut d = vec![0.0; m];
    let mut d_prev = vec![0.0; m];
    // second derivative of lambda_t: H_t = e_b d_{t-1}' + d_{t-1} e_b' + b H_{t-1}
    let mut h = DMatrix::<f64>::zeros(m, m);
    let mut acc = DMatrix::<f64>::zeros(m, m);
    for t in 1..n {
        let prev = sq.row(t - 1);
        d_prev.copy_from_slice(&d);
        for j in 0..p {
            d[j] = prev[j] - targets[j] + b * d[j];
        }
        d[p] = lam_path[t - 1] - targets[i] + b * d[p];
        h *= b;
        for k in 0..m {
            h[(p, k)] += d_prev[k];
            h[(k, p)] += d_prev[k];
        }
        let lam = lam_path[t];
        let y2 = sq.get(t, i);
        let c1 = (1.0 - y2 / lam) / lam;
        let c2 = (2.0 * y2 / lam - 1.0) / (lam * lam);
        for r in 0..m {
            for c in 0..m {
                acc[(r, c)] += c1 * h[(r, c)] + c2 * d[r] * d[c];
            }
        }
    }
    Ok(acc / (n - 1) as f64)
}

fn check_kappa(kappa: &[f64], targets: &[f64], sq: &RotatedSquares, i: usize) -> Result<()> {
    let p = sq.dim();
    if targets.len() != p || kappa.len() != p + 1 || i >= p {
        return Err(Error::InvalidInput(format!(
            "equation {} needs {} coefficients and {p} targets",
            i + 1,
            p + 1
        )));
    }
    if sq.n_obs() < 2 {
        return Err(Error::InvalidInput("at least two observations are required".into()));
    }
    Ok(())
}

/// Free coordinates of equation `i` under a restriction, as indices into `kappa`.
pub fn free_indices(restriction: &Restriction, p: usize, i: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = if restriction.diag_a { vec![i] } else { (0..p).collect() };
    if !restriction.arch_only {
        idx.push(p);
    }
    idx
}

/// Default and alternative starting points for equation `i`.
pub fn starting_points(restriction: &Restriction, p: usize, i: usize) -> Vec<Vec<f64>> {
    let b_of = |b: f64| if restriction.arch_only { 0.0 } else { b };
    let make = |aii: f64, aij: f64, b: f64| {
        let mut k = vec![0.0; p + 1];
        for j in 0..p {
            k[j] = if j == i {
                aii
            } else if restriction.diag_a {
                0.0
            } else {
                aij
            };
        }
        k[p] = b_of(b);
        k
    };
    vec![make(0.05, 0.01, 0.85), make(0.10, 0.0, 0.80), make(0.02, 0.0, 0.90)]
}

/// Halves the ARCH loadings until the implied intercept clears the floor with margin.
pub(crate) fn shrink_to_feasible(kappa: &mut [f64], targets: &[f64], i: usize) {
    let p = targets.len();
    for _ in 0..64 {
        if implied_intercept(kappa, targets, i) >= 1e3 * W_FLOOR * targets[i] {
            return;
        }
        kappa[..p].iter_mut().for_each(|a| *a *= 0.5);
    }
}

struct EquationObjective<'a> {
    sq: &'a RotatedSquares,
    targets: &'a [f64],
    i: usize,
    lambda0: f64,
    free: &'a [usize],
    template: Vec<f64>,
}

impl EquationObjective<'_> {
    fn expand(&self, x: &[f64]) -> Vec<f64> {
        let mut k = self.template.clone();
        for (&idx, &v) in self.free.iter().zip(x) {
            k[idx] = v;
        }
        k
    }
}

impl Objective for EquationObjective<'_> {
    fn dim(&self) -> usize {
        self.free.len()
    }

    fn eval(&self, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let kappa = self.expand(x);
        match grad {
            None => nll_pass(self.sq, self.targets, self.i, self.lambda0, &kappa, None),
            Some(g) => {
                let mut full = vec![0.0; kappa.len()];
                let f = nll_pass(self.sq, self.targets, self.i, self.lambda0, &kappa, Some(&mut full));
                for (gk, &idx) in g.iter_mut().zip(self.free) {
                    *gk = full[idx];
                }
                f
            }
        }
    }
}

/// Result of fitting one equation.
#[derive(Debug, Clone, PartialEq)]
pub struct EquationFit {
    pub kappa: Vec<f64>,
    pub w: f64,
    pub nll: f64,
    pub iterations: usize,
    pub starts_tried: usize,
    /// Indices into `kappa` of free coordinates sitting on a bound.
    pub active: Vec<usize>,
    pub message: String,
}

/// Minimizes the equation criterion over the admissible box with multi-start,
/// returning the best converged optimum.
pub fn fit_equation(
    sq: &RotatedSquares,
    targets: &DVector<f64>,
    i: usize,
    cfg: &OptimizerConfig,
) -> Result<EquationFit> {
    let p = sq.dim();
    let targets = targets.as_slice();
    if targets.len() != p {
        return Err(Error::InvalidInput("target dimension mismatch".into()));
    }
    let lambda0 = initial_eigenvalue(&cfg.init, targets, sq, i)?;
    let free = free_indices(&cfg.restriction, p, i);
    let mut starts = starting_points(&cfg.restriction, p, i);
    if let StartPoint::Given(k) = &cfg.start {
        if k.len() != p + 1 {
            return Err(Error::InvalidInput("starting point must have p + 1 entries".into()));
        }
        starts.insert(0, k.clone());
    }
    starts.truncate(cfg.multi_start.max(1));
    let lower = vec![0.0; free.len()];
    let upper: Vec<f64> = free.iter().map(|&k| if k == p { B_UPPER } else { A_UPPER }).collect();

    let mut best: Option<(OptimResult, usize)> = None;
    let mut traces = Vec::new();
    for (s_idx, start) in starts.iter().enumerate() {
        let mut template = start.clone();
        for (k, v) in template.iter_mut().enumerate() {
            if !free.contains(&k) {
                *v = 0.0;
            }
        }
        shrink_to_feasible(&mut template, targets, i);
        let obj = EquationObjective {
            sq,
            targets,
            i,
            lambda0,
            free: &free,
            template: template.clone(),
        };
        let x0: Vec<f64> = free.iter().map(|&k| template[k]).collect();
        let res = minimize_box(&obj, &x0, &lower, &upper, &cfg.settings);
        if res.converged && res.value.is_finite() {
            if best.as_ref().is_none_or(|(b, _)| res.value < b.value) {
                best = Some((res, s_idx));
            }
        } else {
            traces.push(StartTrace {
                start: x0,
                final_point: res.x.clone(),
                objective: res.value,
                iterations: res.iterations,
                message: res.message.clone(),
            });
        }
    }
    let (res, _) = best.ok_or_else(|| Error::Convergence {
        context: format!("equation {}", i + 1),
        traces,
    })?;
    let mut kappa = vec![0.0; p + 1];
    for (&idx, &v) in free.iter().zip(&res.x) {
        kappa[idx] = v;
    }
    let active = free
        .iter()
        .zip(&res.at_bound)
        .filter(|(_, &b)| b)
        .map(|(&k, _)| k)
        .collect();
    Ok(EquationFit {
        w: implied_intercept(&kappa, targets, i),
        kappa,
        nll: res.value,
        iterations: res.iterations,
        starts_tried: starts.len(),
        active,
        message: res.message,
    })
}
