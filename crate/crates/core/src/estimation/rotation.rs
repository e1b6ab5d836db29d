//! Alternative first step: Gaussian likelihood of a constant covariance
//! `V(phi) diag(lambda) V(phi)'` minimized over the angles and eigenvalues.

use std::f64::consts::FRAC_PI_2;

use nalgebra::DMatrix;

use crate::error::{Error, Result, StartTrace};
use crate::estimation::joint::ANGLE_MARGIN;
use crate::estimation::optimizer::{minimize_box, BoxSettings, Objective};
use crate::panel::ReturnPanel;
use crate::spectral::{
    box_representation, eigen_sym, givens_gradient, givens_product, sample_covariance, RotationAngles, SpectralTarget,
};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RotationConfig {
    pub settings: BoxSettings,
    /// Relax the lower angle bound from the margin to zero.
    pub allow_zero_angles: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RotationFit {
    pub target: SpectralTarget,
    /// Raw angles at the optimum, before relabelling.
    pub angles: RotationAngles,
    pub cost: f64,
    pub iterations: usize,
}

/// `C = sum_i log lambda_i + tr(diag(lambda)^{-1} V' H V)`, the per-observation
/// average of `log det(Lambda) + X_t' V Lambda^{-1} V' X_t`.
pub fn rotation_cost(lambda: &[f64], phi: &RotationAngles, h: &DMatrix<f64>) -> Result<f64> {
    let p = h.nrows();
    if lambda.len() != p || lambda.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidInput(
            "eigenvalues must be positive, one per asset".into(),
        ));
    }
    let v = givens_product(phi, p)?;
    let s = v.transpose() * h * &v;
    Ok((0..p).map(|i| lambda[i].ln() + s[(i, i)] / lambda[i]).sum())
}

struct RotationObjective<'a> {
    h: &'a DMatrix<f64>,
    p: usize,
}

impl Objective for RotationObjective<'_> {
    fn dim(&self) -> usize {
        self.p + RotationAngles::count(self.p)
    }

    fn eval(&self, z: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let p = self.p;
        let lambda = &z[..p];
        if lambda.iter().any(|&l| !(l > 0.0)) {
            return f64::INFINITY;
        }
        let phi = RotationAngles(z[p..].to_vec());
        let Ok(v) = givens_product(&phi, p) else {
            return f64::INFINITY;
        };
        let hv = self.h * &v;
        let s = v.transpose() * &hv;
        let value = (0..p).map(|i| lambda[i].ln() + s[(i, i)] / lambda[i]).sum();
        if let Some(g) = grad {
            for i in 0..p {
                g[i] = 1.0 / lambda[i] - s[(i, i)] / (lambda[i] * lambda[i]);
            }
            // dC/dV = 2 H V diag(lambda)^{-1}
            let gv = DMatrix::from_fn(p, p, |r, c| 2.0 * hv[(r, c)] / lambda[c]);
            match givens_gradient(&phi, p, &gv) {
                Ok(ga) => g[p..].copy_from_slice(&ga),
                Err(_) => return f64::INFINITY,
            }
        }
        value
    }
}

/// Minimizes the rotation cost over the angle box and positive eigenvalues,
/// returning the target in the identified normalization.
pub fn fit_rotation_first_step(panel: &ReturnPanel, cfg: &RotationConfig) -> Result<RotationFit> {
    let h = sample_covariance(panel)?;
    let p = h.dim();
    let k = RotationAngles::count(p);
    let obj = RotationObjective { h: h.matrix(), p };
    let lo = if cfg.allow_zero_angles { 0.0 } else { ANGLE_MARGIN };
    let hi = FRAC_PI_2 - ANGLE_MARGIN;
    let scale = h.matrix().trace() / p as f64;
    if !(scale > 0.0) {
        return Err(Error::NonPositiveEigenvalue { value: 0.0 });
    }
    let mut lower = vec![1e-10 * scale; p];
    lower.extend(std::iter::repeat_n(lo, k));
    let mut upper = vec![f64::INFINITY; p];
    upper.extend(std::iter::repeat_n(hi, k));

    let mut angle_starts = vec![vec![lo.max(1e-3); k], vec![0.25 * std::f64::consts::PI; k]];
    if let Ok(t) = eigen_sym(&h) {
        if let Some(rep) = box_representation(t.eigenvectors()) {
            angle_starts.insert(0, rep.angles.0.iter().map(|a| a.clamp(lo, hi)).collect());
        }
    }
    let mut best: Option<(Vec<f64>, f64, usize)> = None;
    let mut traces = Vec::new();
    for phi0 in angle_starts {
        let v = givens_product(&RotationAngles(phi0.clone()), p)?;
        let s = v.transpose() * h.matrix() * &v;
        let mut z0: Vec<f64> = (0..p).map(|i| s[(i, i)].max(lower[i])).collect();
        z0.extend(phi0);
        let res = minimize_box(&obj, &z0, &lower, &upper, &cfg.settings);
        if res.converged && res.value.is_finite() {
            if best
                .as_ref()
                .is_none_or(|(_, c, _)| res.value < c - 1e-12 * c.abs().max(1.0))
            {
                best = Some((res.x, res.value, res.iterations));
            }
        } else {
            traces.push(StartTrace {
                start: z0,
                final_point: res.x,
                objective: res.value,
                iterations: res.iterations,
                message: res.message,
            });
        }
    }
    let (z, cost, iterations) = best.ok_or_else(|| Error::Convergence {
        context: "rotation first step".into(),
        traces,
    })?;
    let angles = RotationAngles(z[p..].to_vec());
    let v = givens_product(&angles, p)?;
    let target = SpectralTarget::from_parts(nalgebra::DVector::from_column_slice(&z[..p]), v)?;
    Ok(RotationFit {
        target,
        angles,
        cost,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_matches_finite_differences() {
        let h = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 0.5]);
        let obj = RotationObjective { h: &h, p: 3 };
        let z = [0.7, 1.3, 0.4, 0.3, 0.9, 0.2];
        let mut g = vec![0.0; 6];
        obj.eval(&z, Some(&mut g));
        for k in 0..6 {
            let e = 1e-6;
            let mut zp = z;
            let mut zm = z;
            zp[k] += e;
            zm[k] -= e;
            let fd = (obj.eval(&zp, None) - obj.eval(&zm, None)) / (2.0 * e);
            assert!((g[k] - fd).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn diagonal_covariance_gives_zero_angle() {
        let panel =
            ReturnPanel::from_rows(&[vec![2.0, 0.0], vec![-2.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]]).unwrap();
        let cfg = RotationConfig {
            allow_zero_angles: true,
            ..RotationConfig::default()
        };
        let fit = fit_rotation_first_step(&panel, &cfg).unwrap();
        assert!(fit.angles.0[0].abs() < 1e-6);
        let mut l: Vec<f64> = fit.target.lambda().iter().copied().collect();
        l.sort_by(f64::total_cmp);
        assert!((l[0] - 0.5).abs() < 1e-6 && (l[1] - 2.0).abs() < 1e-6);
    }
}
