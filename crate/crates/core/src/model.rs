//! The eigenvalue GARCH process: `X_t = V diag(lambda_t)^{1/2} Z_t` with
//! `lambda_t = W + A Y_{t-1}^2 + B lambda_{t-1}` and `Y_t = V'X_t`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::panel::ReturnPanel;
use crate::spectral::{givens_product, normalize_eigenpairs, spectral_radius, RotationAngles, SpectralTarget};

pub const DEFAULT_BURN_IN: usize = 1000;
/// Value returned by [`lyapunov_estimate`] when the matrix product collapses to zero.
pub const LYAPUNOV_FLOOR: f64 = -708.0;

/// ARCH loadings `A` (non-negative, possibly full) and diagonal GARCH persistence `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsParams {
    a: DMatrix<f64>,
    b: DVector<f64>,
    diag_a: bool,
}

impl DynamicsParams {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let p = b.len();
        if a.nrows() != p || a.ncols() != p {
            return Err(Error::InvalidInput(format!(
                "A is {}x{} but B has {p} entries",
                a.nrows(),
                a.ncols()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(
                "dynamics parameters must be finite and non-negative".into(),
            ));
        }
        let diag_a = (0..p).all(|i| (0..p).all(|j| i == j || a[(i, j)] == 0.0));
        Ok(Self { a, b, diag_a })
    }

    /// Diagonal `A = diag(a)`, `B = diag(b)`.
    pub fn diagonal(a: &[f64], b: &[f64]) -> Result<Self> {
        let a = DMatrix::from_diagonal(&DVector::from_column_slice(a));
        Self::new(a, DVector::from_column_slice(b))
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn b_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.b)
    }

    pub fn is_diagonal_a(&self) -> bool {
        self.diag_a
    }

    /// `A + B`, the expected companion matrix `E[A diag(Z^2) + B]`.
    pub fn persistence(&self) -> DMatrix<f64> {
        &self.a + self.b_matrix()
    }

    pub fn persistence_radius(&self) -> f64 {
        spectral_radius(&self.persistence()).unwrap_or(f64::INFINITY)
    }

    /// Relabels equations: entry `(k, l)` of the result is `(order[k], order[l])` here.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let p = order.len();
        let a = DMatrix::from_fn(p, p, |k, l| self.a[(order[k], order[l])]);
        let b = DVector::from_iterator(p, order.iter().map(|&k| self.b[k]));
        Self {
            a,
            b,
            diag_a: self.diag_a,
        }
    }
}

/// `lambda = (I - A - B)^{-1} W`.
pub fn unconditional_eigenvalues(w: &DVector<f64>, dynamics: &DynamicsParams) -> Result<DVector<f64>> {
    if w.len() != dynamics.dim() {
        return Err(Error::InvalidInput("intercept dimension mismatch".into()));
    }
    if w.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::InvalidInput("intercepts must be strictly positive".into()));
    }
    let radius = dynamics.persistence_radius();
    if radius >= 1.0 {
        return Err(Error::Nonstationary { radius });
    }
    let p = w.len();
    let m = DMatrix::identity(p, p) - dynamics.persistence();
    let lambda = m.lu().solve(w).ok_or(Error::Singular {
        condition: f64::INFINITY,
    })?;
    if lambda.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidInput("unconditional eigenvalues are not positive".into()));
    }
    Ok(lambda)
}

/// `W = (I - A - B) lambda`; fails naming the first (1-based) equation whose
/// intercept is not strictly positive.
pub fn intercepts_from_targets(lambda: &DVector<f64>, dynamics: &DynamicsParams) -> Result<DVector<f64>> {
    if lambda.len() != dynamics.dim() {
        return Err(Error::InvalidInput("target dimension mismatch".into()));
    }
    let p = lambda.len();
    let w = (DMatrix::identity(p, p) - dynamics.persistence()) * lambda;
    if let Some(i) = w.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::TargetingPositivity {
            equation: i + 1,
            w: w[i],
        });
    }
    Ok(w)
}

/// A fully specified process in its own (not necessarily identified) equation order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    v: DMatrix<f64>,
    w: DVector<f64>,
    dynamics: DynamicsParams,
    lambda: Option<DVector<f64>>,
}

impl ModelSpec {
    /// From eigenvectors, intercepts and dynamics. The unconditional eigenvalues
    /// are left undefined when `rho(A+B) >= 1`.
    pub fn from_intercepts(v: DMatrix<f64>, w: DVector<f64>, dynamics: DynamicsParams) -> Result<Self> {
        check_orthonormal(&v, dynamics.dim())?;
        if w.len() != dynamics.dim() || w.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::InvalidInput(
                "intercepts must be strictly positive, one per equation".into(),
            ));
        }
        let lambda = match unconditional_eigenvalues(&w, &dynamics) {
            Ok(l) => Some(l),
            Err(Error::Nonstationary { .. }) => None,
            Err(e) => return Err(e),
        };
        Ok(Self { v, w, dynamics, lambda })
    }

    /// From unconditional eigenpairs and dynamics (the targeting parameterization).
    pub fn from_targets(lambda: DVector<f64>, v: DMatrix<f64>, dynamics: DynamicsParams) -> Result<Self> {
        check_orthonormal(&v, dynamics.dim())?;
        let radius = dynamics.persistence_radius();
        if radius >= 1.0 {
            return Err(Error::Nonstationary { radius });
        }
        let w = intercepts_from_targets(&lambda, &dynamics)?;
        Ok(Self {
            v,
            w,
            dynamics,
            lambda: Some(lambda),
        })
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn intercepts(&self) -> &DVector<f64> {
        &self.w
    }

    pub fn dynamics(&self) -> &DynamicsParams {
        &self.dynamics
    }

    pub fn unconditional(&self) -> Option<&DVector<f64>> {
        self.lambda.as_ref()
    }

    pub fn is_stationary(&self) -> bool {
        self.lambda.is_some()
    }

    /// `V diag(lambda) V'`, when it exists.
    pub fn unconditional_covariance(&self) -> Option<DMatrix<f64>> {
        self.lambda
            .as_ref()
            .map(|l| &self.v * DMatrix::from_diagonal(l) * self.v.transpose())
    }

    /// The same process relabelled into the identified order (eigenvalues
    /// non-decreasing, sign rule on eigenvectors). Also returns the ordering:
    /// equation `k` of the result is equation `order[k]` of `self`.
    pub fn identified(&self) -> Result<(ModelSpec, Vec<usize>)> {
        let lambda = self.lambda.as_ref().ok_or(Error::Nonstationary {
            radius: self.dynamics.persistence_radius(),
        })?;
        let (sorted, v, order) = normalize_eigenpairs(lambda, &self.v);
        let dynamics = self.dynamics.permuted(&order);
        let w = DVector::from_iterator(order.len(), order.iter().map(|&k| self.w[k]));
        Ok((
            ModelSpec {
                v,
                w,
                dynamics,
                lambda: Some(sorted),
            },
            order,
        ))
    }

    /// Spectral target in the identified normalization.
    pub fn target(&self) -> Result<SpectralTarget> {
        let lambda = self.lambda.clone().ok_or(Error::Nonstationary {
            radius: self.dynamics.persistence_radius(),
        })?;
        SpectralTarget::from_parts(lambda, self.v.clone())
    }
}

fn check_orthonormal(v: &DMatrix<f64>, p: usize) -> Result<()> {
    if v.nrows() != p || v.ncols() != p {
        return Err(Error::InvalidInput(format!("eigenvector matrix must be {p}x{p}")));
    }
    let err = (v.transpose() * v - DMatrix::identity(p, p)).amax();
    if err > 1e-10 {
        return Err(Error::InvalidInput(format!(
            "eigenvector matrix is not orthonormal ({err:e})"
        )));
    }
    Ok(())
}

/// Starting value `lambda_0` of the eigenvalue filter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum InitScheme {
    /// The unconditional (targeted) eigenvalues.
    Unconditional,
    Fixed(Vec<f64>),
    /// Sample mean of the squared rotated returns.
    SampleVariance,
}

/// Filtered conditional eigenvalues, one row per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenvaluePath {
    pub lambda: DMatrix<f64>,
    pub init: Vec<f64>,
    pub scheme: InitScheme,
}

fn resolve_init(spec: &ModelSpec, y: &DMatrix<f64>, init: &InitScheme) -> Result<Vec<f64>> {
    let p = spec.dim();
    let out = match init {
        InitScheme::Unconditional => spec
            .unconditional()
            .ok_or(Error::Nonstationary {
                radius: spec.dynamics().persistence_radius(),
            })?
            .iter()
            .copied()
            .collect(),
        InitScheme::Fixed(v) => {
            if v.len() != p {
                return Err(Error::InvalidInput(
                    "fixed initial eigenvalues have wrong length".into(),
                ));
            }
            v.clone()
        }
        InitScheme::SampleVariance => (0..p)
            .map(|j| y.column(j).iter().map(|v| v * v).sum::<f64>() / y.nrows() as f64)
            .collect(),
    };
    if out.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidInput("initial eigenvalues must be positive".into()));
    }
    Ok(out)
}

/// Runs `lambda_{i,t} = w_i + sum_j a_ij y_{j,t-1}^2 + b_i lambda_{i,t-1}` over the
/// rotated returns `y` (`T x p`). Row 0 holds the initial value.
pub fn filter_eigenvalues(spec: &ModelSpec, y: &DMatrix<f64>, init: &InitScheme) -> Result<EigenvaluePath> {
    let p = spec.dim();
    if y.ncols() != p {
        return Err(Error::InvalidInput(
            "rotated returns have the wrong number of columns".into(),
        ));
    }
    let n = y.nrows();
    if n == 0 {
        return Err(Error::InvalidInput("empty return series".into()));
    }
    let start = resolve_init(spec, y, init)?;
    let a = spec.dynamics().a();
    let b = spec.dynamics().b();
    let w = spec.intercepts();
    let mut lambda = DMatrix::zeros(n, p);
    for i in 0..p {
        lambda[(0, i)] = start[i];
    }
    let mut sq = vec![0.0; p];
    for t in 1..n {
        for j in 0..p {
            sq[j] = y[(t - 1, j)] * y[(t - 1, j)];
        }
        for i in 0..p {
            let mut l = w[i] + b[i] * lambda[(t - 1, i)];
            for j in 0..p {
                l += a[(i, j)] * sq[j];
            }
            if !l.is_finite() {
                return Err(Error::NonFiniteRecursion { t });
            }
            lambda[(t, i)] = l;
        }
    }
    Ok(EigenvaluePath {
        lambda,
        init: start,
        scheme: init.clone(),
    })
}

/// Source of the innovations `Z_t`.
#[derive(Debug, Clone, PartialEq)]
pub enum Innovations {
    /// iid standard Gaussian vectors.
    Gaussian,
    /// Caller-supplied draws, one row per simulated period including burn-in.
    Provided(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub n_obs: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub allow_nonstationary: bool,
}

impl SimulationConfig {
    pub fn new(n_obs: usize, seed: u64) -> Self {
        Self {
            n_obs,
            burn_in: DEFAULT_BURN_IN,
            seed,
            allow_nonstationary: false,
        }
    }
}

/// Simulated returns with the internal state that generated them.
#[derive(Debug, Clone)]
pub struct SimulatedPath {
    pub panel: ReturnPanel,
    /// Conditional eigenvalues behind each kept observation.
    pub lambda: DMatrix<f64>,
    /// Innovations behind each kept observation.
    pub innovations: DMatrix<f64>,
}

/// Simulates `n_obs` periods after discarding `burn_in`, starting from the
/// unconditional eigenvalues (or `W` for a non-stationary process).
pub fn simulate_path(spec: &ModelSpec, cfg: &SimulationConfig, innovations: &Innovations) -> Result<SimulatedPath> {
    let p = spec.dim();
    if !spec.is_stationary() && !cfg.allow_nonstationary {
        return Err(Error::Nonstationary {
            radius: spec.dynamics().persistence_radius(),
        });
    }
    let total = cfg.burn_in + cfg.n_obs;
    if let Innovations::Provided(z) = innovations {
        if z.nrows() != total || z.ncols() != p {
            return Err(Error::InvalidInput(format!(
                "provided innovations must be {total}x{p}, got {}x{}",
                z.nrows(),
                z.ncols()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let v = spec.eigenvectors();
    let a = spec.dynamics().a();
    let b = spec.dynamics().b();
    let w = spec.intercepts();
    let mut lam: Vec<f64> = match spec.unconditional() {
        Some(l) => l.iter().copied().collect(),
        None => w.iter().copied().collect(),
    };
    let mut x = DMatrix::zeros(cfg.n_obs, p);
    let mut lam_out = DMatrix::zeros(cfg.n_obs, p);
    let mut z_out = DMatrix::zeros(cfg.n_obs, p);
    let mut z = vec![0.0; p];
    let mut y = vec![0.0; p];
    let mut next = vec![0.0; p];
    for s in 0..total {
        for j in 0..p {
            z[j] = match innovations {
                Innovations::Gaussian => StandardNormal.sample(&mut rng),
                Innovations::Provided(m) => m[(s, j)],
            };
            y[j] = lam[j].sqrt() * z[j];
        }
        if s >= cfg.burn_in {
            let t = s - cfg.burn_in;
            for r in 0..p {
                let mut acc = 0.0;
                for j in 0..p {
                    acc += v[(r, j)] * y[j];
                }
                x[(t, r)] = acc;
                lam_out[(t, r)] = lam[r];
                z_out[(t, r)] = z[r];
            }
        }
        for i in 0..p {
            let mut l = w[i] + b[i] * lam[i];
            for j in 0..p {
                l += a[(i, j)] * y[j] * y[j];
            }
            next[i] = l;
        }
        if next.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFiniteRecursion { t: s });
        }
        std::mem::swap(&mut lam, &mut next);
    }
    Ok(SimulatedPath {
        panel: ReturnPanel::from_matrix(x)?,
        lambda: lam_out,
        innovations: z_out,
    })
}

/// Outcome of the finite-moment condition `rho(E[(A diag(Z^2) + B)^{⊗k}]) < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentCheck {
    pub satisfied: bool,
    pub radius: f64,
}

/// Exact `E[(A diag(Z^2) + B)^{⊗k}]` for `k` in `{1, 2}` with coordinate-independent
/// innovations, `E[z^2] = 1` and `E[z^4] = kurtosis`.
pub fn expected_companion_power(dynamics: &DynamicsParams, k: u32, kurtosis: f64) -> Result<DMatrix<f64>> {
    let p = dynamics.dim();
    match k {
        1 => Ok(dynamics.persistence()),
        2 => {
            let a = dynamics.a();
            let b = dynamics.b_matrix();
            let n = p * p;
            // Kronecker index (r1, r2) -> r1 * p + r2
            let mut m = DMatrix::zeros(n, n);
            for r1 in 0..p {
                for r2 in 0..p {
                    for c1 in 0..p {
                        for c2 in 0..p {
                            let e_zz = if c1 == c2 { kurtosis } else { 1.0 };
                            let val = a[(r1, c1)] * a[(r2, c2)] * e_zz
                                + a[(r1, c1)] * b[(r2, c2)]
                                + b[(r1, c1)] * a[(r2, c2)]
                                + b[(r1, c1)] * b[(r2, c2)];
                            m[(r1 * p + r2, c1 * p + c2)] = val;
                        }
                    }
                }
            }
            Ok(m)
        }
        _ => Err(Error::InvalidInput(format!(
            "moment order k = {k} not supported (use 1 or 2)"
        ))),
    }
}

/// Finite `2k`-th moments of the returns hold iff the returned radius is below one.
pub fn moment_order_check(dynamics: &DynamicsParams, k: u32, kurtosis: f64) -> Result<MomentCheck> {
    let m = expected_companion_power(dynamics, k, kurtosis)?;
    let radius = spectral_radius(&m)?;
    Ok(MomentCheck {
        satisfied: radius < 1.0,
        radius,
    })
}

/// Monte Carlo estimate of the top Lyapunov exponent of the random products
/// `A diag(Z_t^2) + B` with Gaussian `Z_t`. Negative values mean the process is
/// strictly stationary.
pub fn lyapunov_estimate(dynamics: &DynamicsParams, n_steps: usize, seed: u64) -> Result<f64> {
    if n_steps < 10_000 {
        return Err(Error::InvalidInput(
            "Lyapunov estimate needs at least 10^4 steps".into(),
        ));
    }
    let p = dynamics.dim();
    let a = dynamics.a();
    let b = dynamics.b();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Non-negative matrices: the growth of a positive unit vector gives the top exponent.
    let mut v = vec![1.0 / (p as f64).sqrt(); p];
    let mut next = vec![0.0; p];
    let mut z2 = vec![0.0; p];
    let mut log_growth = 0.0;
    for _ in 0..n_steps {
        for zj in z2.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *zj = z * z;
        }
        for i in 0..p {
            let mut acc = b[i] * v[i];
            for j in 0..p {
                acc += a[(i, j)] * z2[j] * v[j];
            }
            next[i] = acc;
        }
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Ok(LYAPUNOV_FLOOR);
        }
        log_growth += norm.ln();
        for (vi, ni) in v.iter_mut().zip(next.iter()) {
            *vi = ni / norm;
        }
    }
    Ok((log_growth / n_steps as f64).max(LYAPUNOV_FLOOR))
}

/// The three bivariate designs used for the large-sample density studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CaseStudy {
    /// Finite fourth moments.
    FiniteFourth,
    /// Finite second but infinite fourth moments.
    FiniteSecond,
    /// Finite mean only (not covariance stationary).
    FiniteMean,
}

impl CaseStudy {
    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Self::FiniteFourth),
            2 => Ok(Self::FiniteSecond),
            3 => Ok(Self::FiniteMean),
            _ => Err(Error::InvalidInput(format!("unknown case {n} (expected 1, 2 or 3)"))),
        }
    }

    pub fn number(&self) -> u8 {
        match self {
            Self::FiniteFourth => 1,
            Self::FiniteSecond => 2,
            Self::FiniteMean => 3,
        }
    }

    /// Diagonal of `A`; `B` is zero in all three designs.
    pub fn arch_loadings(&self) -> [f64; 2] {
        match self {
            Self::FiniteFourth => [0.33, 0.25],
            Self::FiniteSecond => [0.60, 0.55],
            Self::FiniteMean => [1.01, 0.90],
        }
    }

    pub const INTERCEPTS: [f64; 2] = [1.5, 0.46];

    /// The rounded eigenvector matrix `[[0.89, 0.45], [-0.45, 0.89]]` with its
    /// columns rescaled to unit length.
    pub fn eigenvectors() -> DMatrix<f64> {
        let norm = (0.89f64 * 0.89 + 0.45 * 0.45).sqrt();
        DMatrix::from_row_slice(2, 2, &[0.89, 0.45, -0.45, 0.89]) / norm
    }

    pub fn spec(&self) -> Result<ModelSpec> {
        let dynamics = DynamicsParams::diagonal(&self.arch_loadings(), &[0.0, 0.0])?;
        ModelSpec::from_intercepts(
            Self::eigenvectors(),
            DVector::from_column_slice(&Self::INTERCEPTS),
            dynamics,
        )
    }
}

/// The diagonal benchmark design: `A = 0.05 I`, `B = 0.85 I`,
/// `lambda_i = (p + 1 - i) / 10` and every rotation angle equal to 0.5.
pub fn diagonal_benchmark_spec(p: usize) -> Result<ModelSpec> {
    let lambda = DVector::from_iterator(p, (1..=p).map(|i| (p + 1 - i) as f64 / 10.0));
    let v = givens_product(&RotationAngles::constant(p, 0.5), p)?;
    let dynamics = DynamicsParams::diagonal(&vec![0.05; p], &vec![0.85; p])?;
    ModelSpec::from_targets(lambda, v, dynamics)
}
