//! Box-constrained quasi-Newton minimization (projected BFGS with Armijo
//! backtracking along the projection arc).

use serde::Serialize;

/// A smooth objective. `eval` returns the value and, when asked, writes the
/// gradient. Points outside the objective's domain return a non-finite value.
pub trait Objective {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], grad: Option<&mut [f64]>) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxSettings {
    pub max_iterations: usize,
    /// Infinity norm of the projected gradient.
    pub gradient_tolerance: f64,
    /// Infinity norm of the last step, paired with a relative objective change below `function_tolerance`.
    pub parameter_tolerance: f64,
    pub function_tolerance: f64,
}

impl Default for BoxSettings {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-7,
            parameter_tolerance: 1e-9,
            function_tolerance: 1e-13,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub message: String,
    /// Coordinates sitting on a bound at the solution.
    pub at_bound: Vec<bool>,
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((xi, &l), &u) in x.iter_mut().zip(lower).zip(upper) {
        *xi = xi.clamp(l, u);
    }
}

fn projected_gradient_norm(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .zip(lower.iter().zip(upper))
        .map(|((&xi, &gi), (&l, &u))| (xi - (xi - gi).clamp(l, u)).abs())
        .fold(0.0, f64::max)
}

fn bound_eps(l: f64, u: f64) -> f64 {
    1e-12 * (1.0 + l.abs().min(u.abs()).min(1e12))
}

/// Minimizes `obj` over `lower <= x <= upper` starting from `x0` (projected first).
pub fn minimize_box(obj: &dyn Objective, x0: &[f64], lower: &[f64], upper: &[f64], cfg: &BoxSettings) -> OptimResult {
    let n = obj.dim();
    assert!(
        x0.len() == n && lower.len() == n && upper.len() == n,
        "dimension mismatch"
    );
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let mut g = vec![0.0; n];
    let mut f = obj.eval(&x, Some(&mut g));
    let mut evaluations = 1;
    let at_bound = |x: &[f64]| -> Vec<bool> {
        x.iter()
            .zip(lower.iter().zip(upper))
            .map(|(&xi, (&l, &u))| xi <= l + bound_eps(l, u) || xi >= u - bound_eps(l, u))
            .collect()
    };
    let finish = |x: Vec<f64>, f: f64, g: Vec<f64>, it: usize, ev: usize, ok: bool, msg: &str| {
        let b = at_bound(&x);
        OptimResult {
            x,
            value: f,
            gradient: g,
            iterations: it,
            evaluations: ev,
            converged: ok,
            message: msg.to_string(),
            at_bound: b,
        }
    };
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return finish(
            x,
            f,
            g,
            0,
            evaluations,
            false,
            "objective not finite at the starting point",
        );
    }

    // Dense inverse Hessian approximation, row-major.
    let mut hinv = identity(n);
    let mut fresh = true;
    let mut stalled = false;
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut dir = vec![0.0; n];

    for iter in 0..cfg.max_iterations {
        if projected_gradient_norm(&x, &g, lower, upper) <= cfg.gradient_tolerance {
            return finish(x, f, g, iter, evaluations, true, "projected gradient below tolerance");
        }
        let free: Vec<bool> = (0..n)
            .map(|i| {
                let eps = bound_eps(lower[i], upper[i]);
                !((x[i] <= lower[i] + eps && g[i] > 0.0) || (x[i] >= upper[i] - eps && g[i] < 0.0))
            })
            .collect();
        let mut slope = 0.0;
        for i in 0..n {
            dir[i] = 0.0;
            if !free[i] {
                continue;
            }
            let row = &hinv[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                if free[j] {
                    acc -= row[j] * g[j];
                }
            }
            dir[i] = acc;
            slope += acc * g[i];
        }
        if !(slope < 0.0) {
            hinv = identity(n);
            fresh = true;
            slope = 0.0;
            for i in 0..n {
                dir[i] = if free[i] { -g[i] } else { 0.0 };
                slope += dir[i] * g[i];
            }
            if !(slope < 0.0) {
                return finish(x, f, g, iter, evaluations, true, "no descent direction on the free set");
            }
        }

        let mut step = if fresh {
            let dmax = dir.iter().fold(0.0f64, |m, d| m.max(d.abs()));
            (0.1 / dmax).min(1.0)
        } else {
            1.0
        };
        let mut accepted = false;
        let mut f_new = f;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = x[i] + step * dir[i];
            }
            project(&mut x_new, lower, upper);
            let decrease: f64 = (0..n).map(|i| g[i] * (x_new[i] - x[i])).sum();
            f_new = obj.eval(&x_new, Some(&mut g_new));
            evaluations += 1;
            if f_new.is_finite() && g_new.iter().all(|v| v.is_finite()) && f_new <= f + 1e-4 * decrease.min(0.0) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            if !fresh {
                hinv = identity(n);
                fresh = true;
                continue;
            }
            let ok = projected_gradient_norm(&x, &g, lower, upper) <= cfg.gradient_tolerance.sqrt();
            return finish(
                x,
                f,
                g,
                iter,
                evaluations,
                ok,
                "line search could not reduce the objective",
            );
        }

        let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
        let yv: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
        let step_norm = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let f_change = (f - f_new).abs();
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        let f_old = f;
        f = f_new;

        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        let yy: f64 = yv.iter().map(|v| v * v).sum();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        if sy > 1e-10 * (ss * yy).sqrt() && sy > 0.0 {
            if fresh {
                let scale = sy / yy;
                hinv.iter_mut().for_each(|v| *v *= scale);
                fresh = false;
            }
            bfgs_update(&mut hinv, &s, &yv, sy);
        }

        if step_norm <= cfg.parameter_tolerance && f_change <= cfg.function_tolerance * f_old.abs().max(1.0) {
            let pg = projected_gradient_norm(&x, &g, lower, upper);
            if pg <= cfg.gradient_tolerance.sqrt() {
                return finish(
                    x,
                    f,
                    g,
                    iter + 1,
                    evaluations,
                    true,
                    "step and objective change below tolerance",
                );
            }
            if stalled {
                return finish(
                    x,
                    f,
                    g,
                    iter + 1,
                    evaluations,
                    false,
                    "stalled away from a stationary point",
                );
            }
            stalled = true;
            hinv = identity(n);
            fresh = true;
        } else {
            stalled = false;
        }
    }
    let ok = projected_gradient_norm(&x, &g, lower, upper) <= cfg.gradient_tolerance;
    finish(x, f, g, cfg.max_iterations, evaluations, ok, "iteration limit reached")
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

/// `H <- (I - r s y') H (I - r y s') + r s s'` with `r = 1 / s'y`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let r = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum()).collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    let coef = (1.0 + r * yhy) * r;
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += coef * s[i] * s[j] - r * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Rosenbrock;

    impl Objective for Rosenbrock {
        fn dim(&self) -> usize {
            2
        }
        fn eval(&self, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
            let (a, b) = (x[0], x[1]);
            if let Some(g) = grad {
                g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
                g[1] = 200.0 * (b - a * a);
            }
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        }
    }

    struct Quadratic {
        center: Vec<f64>,
    }

    impl Objective for Quadratic {
        fn dim(&self) -> usize {
            self.center.len()
        }
        fn eval(&self, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
            if let Some(g) = grad {
                for i in 0..x.len() {
                    g[i] = 2.0 * (i as f64 + 1.0) * (x[i] - self.center[i]);
                }
            }
            x.iter()
                .zip(&self.center)
                .enumerate()
                .map(|(i, (a, c))| (i as f64 + 1.0) * (a - c).powi(2))
                .sum()
        }
    }

    #[test]
    fn rosenbrock_unconstrained() {
        let inf = f64::INFINITY;
        let r = minimize_box(
            &Rosenbrock,
            &[-1.2, 1.0],
            &[-inf, -inf],
            &[inf, inf],
            &BoxSettings::default(),
        );
        assert!(r.converged, "{}", r.message);
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn quadratic_with_active_bounds() {
        let q = Quadratic {
            center: vec![-1.0, 0.5, 2.0],
        };
        let r = minimize_box(&q, &[0.3, 0.3, 0.3], &[0.0; 3], &[1.0; 3], &BoxSettings::default());
        assert!(r.converged);
        assert!(r.x[0].abs() < 1e-12 && (r.x[1] - 0.5).abs() < 1e-7 && (r.x[2] - 1.0).abs() < 1e-12);
        assert_eq!(r.at_bound, vec![true, false, true]);
    }

    struct Barrier;

    impl Objective for Barrier {
        fn dim(&self) -> usize {
            1
        }
        fn eval(&self, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
            if x[0] >= 1.0 {
                return f64::INFINITY;
            }
            if let Some(g) = grad {
                g[0] = -1.0;
            }
            -x[0]
        }
    }

    #[test]
    fn infeasible_trial_points_are_backtracked() {
        let r = minimize_box(&Barrier, &[0.0], &[-10.0], &[10.0], &BoxSettings::default());
        assert!(r.value.is_finite());
        assert!(r.x[0] < 1.0 && r.x[0] > 0.99);
    }

    #[test]
    fn infeasible_start_is_reported() {
        let r = minimize_box(&Barrier, &[2.0], &[-10.0], &[10.0], &BoxSettings::default());
        assert!(!r.converged);
    }
}
