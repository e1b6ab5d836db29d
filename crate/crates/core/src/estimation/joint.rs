//! Joint QMLE over `(lambda, phi, kappa_1, ..., kappa_p)` with the eigenvectors
//! parameterized as a Givens product.

use std::f64::consts::FRAC_PI_2;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result, StartTrace};
use crate::estimation::equation::{
    free_indices, implied_intercept, is_admissible, shrink_to_feasible, starting_points,
};
use crate::estimation::optimizer::{minimize_box, Objective};
use crate::estimation::{
    validate_panel, EquationReport, Method, ModelFit, OptimizerConfig, RotatedSquares, StartPoint, A_UPPER, B_UPPER,
};
use crate::model::InitScheme;
use crate::panel::ReturnPanel;
use crate::spectral::{
    box_representation_within, eigen_sym, givens_angles, givens_gradient, givens_product, normalize_eigenpairs,
    sample_covariance, RotationAngles, SpectralTarget,
};

/// Margin keeping the rotation angles inside the open identification region.
pub const ANGLE_MARGIN: f64 = 1e-6;

static JOINT_FITS: AtomicUsize = AtomicUsize::new(0);

/// Number of joint optimizations started in this process.
pub fn joint_fit_count() -> usize {
    JOINT_FITS.load(Ordering::Relaxed)
}

pub(crate) struct JointObjective<'a> {
    x: &'a DMatrix<f64>,
    p: usize,
    n_angles: usize,
    free: Vec<Vec<usize>>,
    offsets: Vec<usize>,
    dim: usize,
}

impl<'a> JointObjective<'a> {
    pub(crate) fn new(x: &'a DMatrix<f64>, cfg: &OptimizerConfig) -> Self {
        let p = x.ncols();
        let n_angles = RotationAngles::count(p);
        let free: Vec<Vec<usize>> = (0..p).map(|i| free_indices(&cfg.restriction, p, i)).collect();
        let mut offsets = Vec::with_capacity(p);
        let mut at = p + n_angles;
        for f in &free {
            offsets.push(at);
            at += f.len();
        }
        Self {
            x,
            p,
            n_angles,
            free,
            offsets,
            dim: at,
        }
    }

    fn unpack(&self, z: &[f64]) -> (Vec<f64>, RotationAngles, Vec<Vec<f64>>) {
        let p = self.p;
        let lambda = z[..p].to_vec();
        let phi = RotationAngles(z[p..p + self.n_angles].to_vec());
        let kappa = (0..p)
            .map(|i| {
                let mut k = vec![0.0; p + 1];
                for (m, &idx) in self.free[i].iter().enumerate() {
                    k[idx] = z[self.offsets[i] + m];
                }
                k
            })
            .collect();
        (lambda, phi, kappa)
    }

    fn pack(&self, lambda: &[f64], phi: &RotationAngles, kappa: &[Vec<f64>]) -> Vec<f64> {
        let mut z = vec![0.0; self.dim];
        z[..self.p].copy_from_slice(lambda);
        z[self.p..self.p + self.n_angles].copy_from_slice(&phi.0);
        for i in 0..self.p {
            for (m, &idx) in self.free[i].iter().enumerate() {
                z[self.offsets[i] + m] = kappa[i][idx];
            }
        }
        z
    }
}

impl Objective for JointObjective<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, z: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let p = self.p;
        let n = self.x.nrows();
        let (lambda, phi, kappa) = self.unpack(z);
        if lambda.iter().any(|&l| !(l > 0.0)) || (0..p).any(|i| !is_admissible(&kappa[i], &lambda, i)) {
            return f64::INFINITY;
        }
        let v = match givens_product(&phi, p) {
            Ok(v) => v,
            Err(_) => return f64::INFINITY,
        };
        let y = self.x * &v;
        let sq = RotatedSquares::from_rotated(&y);
        let scale = 1.0 / (n - 1) as f64;

        // forward pass, keeping every eigenvalue path for the adjoint sweep
        let mut paths = vec![0.0; n * p];
        let mut total = 0.0;
        for i in 0..p {
            let k = &kappa[i];
            let w = implied_intercept(k, &lambda, i);
            let mut lam = lambda[i];
            paths[i] = lam;
            for t in 1..n {
                let prev = sq.row(t - 1);
                let mut l = w + k[p] * lam;
                for j in 0..p {
                    l += k[j] * prev[j];
                }
                lam = l;
                paths[t * p + i] = lam;
                total += lam.ln() + sq.get(t, i) / lam;
            }
        }
        let value = total * scale;
        if !value.is_finite() {
            return f64::INFINITY;
        }
        let Some(g) = grad else {
            return value;
        };
        g.iter_mut().for_each(|v| *v = 0.0);

        // adjoint: u_t = dL/dlambda_{i,t}, sbar = dL/d(y_{j,t}^2)
        let mut sbar = vec![0.0; n * p];
        for t in 1..n {
            for i in 0..p {
                sbar[t * p + i] = scale / paths[t * p + i];
            }
        }
        let mut g_lambda = vec![0.0; p];
        for i in 0..p {
            let k = &kappa[i];
            let b = k[p];
            let mut u_next = 0.0;
            let mut sum_u = 0.0;
            let mut g_a = vec![0.0; p];
            let mut g_b = 0.0;
            for t in (1..n).rev() {
                let lam = paths[t * p + i];
                let y2 = sq.get(t, i);
                let u = scale * (1.0 / lam - y2 / (lam * lam)) + b * u_next;
                sum_u += u;
                let prev = sq.row(t - 1);
                for j in 0..p {
                    g_a[j] += u * prev[j];
                    sbar[(t - 1) * p + j] += k[j] * u;
                }
                g_b += u * paths[(t - 1) * p + i];
                u_next = u;
            }
            // u_next now holds u_1; lambda_{i,0} = lambda_i
            g_lambda[i] += b * u_next;
            for kk in 0..p {
                let dw = if kk == i { 1.0 - b } else { 0.0 } - k[kk];
                g_lambda[kk] += sum_u * dw;
            }
            for j in 0..p {
                g_a[j] -= lambda[j] * sum_u;
            }
            g_b -= lambda[i] * sum_u;
            for (m, &idx) in self.free[i].iter().enumerate() {
                g[self.offsets[i] + m] = if idx == p { g_b } else { g_a[idx] };
            }
        }
        g[..p].copy_from_slice(&g_lambda);
        if self.n_angles > 0 {
            // dL/dV = X' (2 Y o sbar)
            let m = DMatrix::from_fn(n, p, |t, j| 2.0 * y[(t, j)] * sbar[t * p + j]);
            let gv = self.x.transpose() * m;
            match givens_gradient(&phi, p, &gv) {
                Ok(ga) => g[p..p + self.n_angles].copy_from_slice(&ga),
                Err(_) => return f64::INFINITY,
            }
        }
        value
    }
}

/// Starting eigenpairs for the joint fit: the sample eigenvalues with the
/// eigenvectors arranged so that their angles lie inside the box when possible.
fn starting_rotation(target: &SpectralTarget) -> (Vec<f64>, RotationAngles) {
    let p = target.dim();
    let lo = ANGLE_MARGIN;
    let hi = FRAC_PI_2 - ANGLE_MARGIN;
    let v = target.eigenvectors();
    let rep = [0.0, 0.02, 0.05, 0.1, 0.2, 0.35]
        .iter()
        .find_map(|&tol| box_representation_within(v, tol));
    if let Some(rep) = rep {
        let lambda = rep.order.iter().map(|&k| target.lambda()[k]).collect();
        let phi = rep.angles.0.iter().map(|a| a.clamp(lo, hi)).collect();
        return (lambda, RotationAngles(phi));
    }
    let mut w = v.clone();
    if w.determinant() < 0.0 {
        let last = -w.column(p - 1);
        w.set_column(p - 1, &last);
    }
    let phi = givens_angles(&w)
        .map(|a| a.0.iter().map(|x| x.clamp(lo, hi)).collect())
        .unwrap_or_else(|_| vec![0.25 * std::f64::consts::PI; RotationAngles::count(p)]);
    (target.lambda().iter().copied().collect(), RotationAngles(phi))
}

/// Joint Gaussian QMLE of every parameter. The result is relabelled into the
/// identified order (eigenvalues non-decreasing, sign rule).
pub fn fit_joint_qmle(panel: &ReturnPanel, cfg: &OptimizerConfig) -> Result<ModelFit> {
    JOINT_FITS.fetch_add(1, Ordering::Relaxed);
    validate_panel(panel)?;
    if cfg.init != InitScheme::Unconditional {
        return Err(Error::InvalidInput(
            "joint QMLE supports only the unconditional initialization".into(),
        ));
    }
    let p = panel.n_assets();
    let target = eigen_sym(&sample_covariance(panel)?)?;
    let obj = JointObjective::new(panel.data(), cfg);
    let (lambda0, phi0) = starting_rotation(&target);

    let scale = target.lambda().iter().sum::<f64>() / p as f64;
    let mut lower = vec![0.0; obj.dim];
    let mut upper = vec![f64::INFINITY; obj.dim];
    for i in 0..p {
        lower[i] = 1e-8 * scale;
    }
    for m in 0..obj.n_angles {
        lower[p + m] = ANGLE_MARGIN;
        upper[p + m] = FRAC_PI_2 - ANGLE_MARGIN;
    }
    for i in 0..p {
        for (m, &idx) in obj.free[i].iter().enumerate() {
            upper[obj.offsets[i] + m] = if idx == p { B_UPPER } else { A_UPPER };
        }
    }

    let per_eq: Vec<Vec<Vec<f64>>> = (0..p).map(|i| starting_points(&cfg.restriction, p, i)).collect();
    let mut kappa_starts: Vec<Vec<Vec<f64>>> = (0..per_eq[0].len())
        .map(|s| (0..p).map(|i| per_eq[i][s].clone()).collect())
        .collect();
    if let StartPoint::Given(k) = &cfg.start {
        if k.len() != p + 1 {
            return Err(Error::InvalidInput("starting point must have p + 1 entries".into()));
        }
        kappa_starts.insert(0, (0..p).map(|_| k.clone()).collect());
    }
    kappa_starts.truncate(cfg.multi_start.max(1));

    let mut settings = cfg.settings.clone();
    settings.max_iterations = settings.max_iterations.max(20 * obj.dim);
    let mut traces = Vec::new();
    for start in kappa_starts {
        let mut kappa = start;
        for (i, k) in kappa.iter_mut().enumerate() {
            let free = &obj.free[i];
            for (idx, v) in k.iter_mut().enumerate() {
                if !free.contains(&idx) {
                    *v = 0.0;
                }
            }
            shrink_to_feasible(k, &lambda0, i);
        }
        let z0 = obj.pack(&lambda0, &phi0, &kappa);
        let res = minimize_box(&obj, &z0, &lower, &upper, &settings);
        if !(res.converged && res.value.is_finite()) {
            traces.push(StartTrace {
                start: z0,
                final_point: res.x,
                objective: res.value,
                iterations: res.iterations,
                message: res.message,
            });
            continue;
        }
        let (lambda, phi, kappa) = obj.unpack(&res.x);
        let v = givens_product(&phi, p)?;
        let (sorted, v_sorted, order) = normalize_eigenpairs(&DVector::from_vec(lambda), &v);
        let mut kmat = DMatrix::zeros(p, p + 1);
        for k in 0..p {
            for l in 0..p {
                kmat[(k, l)] = kappa[order[k]][order[l]];
            }
            kmat[(k, p)] = kappa[order[k]][p];
        }
        let gamma = SpectralTarget::from_parts(sorted.clone(), v_sorted.clone())?;
        let sq = RotatedSquares::from_rotated(&(panel.data() * gamma.eigenvectors()));
        let tl = gamma.lambda().as_slice();
        let mut w = DVector::zeros(p);
        let mut equations = Vec::with_capacity(p);
        for k in 0..p {
            let row: Vec<f64> = kmat.row(k).iter().copied().collect();
            w[k] = implied_intercept(&row, tl, k);
            let src = order[k];
            let active = obj.free[src]
                .iter()
                .enumerate()
                .filter(|&(m, _)| res.at_bound[obj.offsets[src] + m])
                .map(|(_, &idx)| {
                    if idx == p {
                        p
                    } else {
                        order.iter().position(|&o| o == idx).unwrap()
                    }
                })
                .collect();
            equations.push(EquationReport {
                nll: crate::estimation::equation::nll_pass(&sq, tl, k, tl[k], &row, None),
                iterations: res.iterations,
                converged: true,
                starts_tried: traces.len() + 1,
                active,
                message: res.message.clone(),
            });
        }
        let active_angles = (0..obj.n_angles).filter(|&m| res.at_bound[p + m]).collect();
        return Ok(ModelFit {
            method: Method::JointQmle,
            restriction: cfg.restriction,
            gamma,
            kappa: kmat,
            w,
            total_nll: res.value,
            equations,
            n_obs: panel.n_obs(),
            init: InitScheme::Unconditional,
            active_angles,
        });
    }
    Err(Error::Convergence {
        context: "joint QMLE".into(),
        traces,
    })
}
