//! Dense symmetric linear algebra for the targeting step.
//!
//! Everything here is a pure function of its inputs. The eigendecomposition is
//! backed by `nalgebra::SymmetricEigen`; this module owns the identification rule
//! (eigenvalues sorted non-decreasing, first entry of each eigenvector with
//! `|v| > 1e-12` positive) and the Givens-rotation parameterization of orthonormal
//! matrices used by the joint and rotation estimators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::panel::ReturnPanel;

/// Entries with absolute value at or below this are treated as zero by the sign rule.
pub const SIGN_THRESHOLD: f64 = 1e-12;
/// Relative eigenvalue gap (in units of the trace) below which a warning is raised.
pub const GAP_WARNING: f64 = 1e-8;
/// Relative singular-value cutoff for pseudo-inverses.
pub const PINV_RCOND: f64 = 1e-10;

/// Symmetric positive semi-definite `p x p` matrix in variance units.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix(DMatrix<f64>);

impl CovMatrix {
    /// Wraps a square matrix, symmetrizing it and checking the PSD tolerance.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::InvalidInput(
                "covariance matrix must be square and non-empty".into(),
            ));
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        let asym = (&m - m.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(Error::InvalidInput(format!(
                "matrix is not symmetric (max asymmetry {asym:e})"
            )));
        }
        let sym = (&m + m.transpose()) * 0.5;
        let trace = sym.trace();
        let min_eig = SymmetricEigen::new(sym.clone()).eigenvalues.min();
        if min_eig < -1e-10 * trace.abs().max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidInput(format!(
                "matrix is not positive semi-definite (min eigenvalue {min_eig:e})"
            )));
        }
        Ok(Self(sym))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum SpectralWarning {
    /// Two adjacent eigenvalues closer than `1e-8 * trace(H)`; eigenvectors and
    /// downstream inference are unreliable.
    NearRepeatedEigenvalues { index: usize, gap: f64 },
}

/// Unconditional eigenvalues and eigenvectors in the identified normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralTarget {
    lambda: DVector<f64>,
    v: DMatrix<f64>,
    warnings: Vec<SpectralWarning>,
    residual: f64,
}

impl SpectralTarget {
    /// Normalizes an arbitrary eigenpair set (any order, any signs) and checks
    /// positivity and orthonormality.
    pub fn from_parts(lambda: DVector<f64>, v: DMatrix<f64>) -> Result<Self> {
        let p = lambda.len();
        if v.nrows() != p || v.ncols() != p {
            return Err(Error::InvalidInput(format!(
                "eigenvector matrix is {}x{} for {p} eigenvalues",
                v.nrows(),
                v.ncols()
            )));
        }
        let ortho = (v.transpose() * &v - DMatrix::identity(p, p)).amax();
        if ortho > 1e-10 {
            return Err(Error::InvalidInput(format!(
                "eigenvectors are not orthonormal ({ortho:e})"
            )));
        }
        let (lambda, v, _) = normalize_eigenpairs(&lambda, &v);
        if lambda[0] <= 0.0 {
            return Err(Error::NonPositiveEigenvalue { value: lambda[0] });
        }
        let warnings = gap_warnings(&lambda);
        Ok(Self {
            lambda,
            v,
            warnings,
            residual: 0.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    pub fn lambda(&self) -> &DVector<f64> {
        &self.lambda
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// `vec(V)`, the eigenvectors stacked column by column.
    pub fn upsilon(&self) -> DVector<f64> {
        DVector::from_column_slice(self.v.as_slice())
    }

    /// `[lambda', vec(V)']'`.
    pub fn stacked(&self) -> DVector<f64> {
        let p = self.dim();
        let mut g = DVector::zeros(p + p * p);
        g.rows_mut(0, p).copy_from(&self.lambda);
        g.rows_mut(p, p * p).copy_from(&self.upsilon());
        g
    }

    pub fn warnings(&self) -> &[SpectralWarning] {
        &self.warnings
    }

    pub fn has_near_repeated(&self) -> bool {
        !self.warnings.is_empty()
    }

    /// `max |V diag(lambda) V' - H|` recorded at decomposition time.
    pub fn reconstruction_residual(&self) -> f64 {
        self.residual
    }

    /// `V diag(lambda) V'`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.v * DMatrix::from_diagonal(&self.lambda) * self.v.transpose()
    }
}

/// Sorts eigenvalues non-decreasing and flips each eigenvector so that its first
/// entry above [`SIGN_THRESHOLD`] in magnitude is positive. Returns the applied
/// ordering: column `k` of the output is column `order[k]` of the input.
pub fn normalize_eigenpairs(lambda: &DVector<f64>, v: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>, Vec<usize>) {
    let p = lambda.len();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| lambda[a].total_cmp(&lambda[b]));
    let sorted = DVector::from_iterator(p, order.iter().map(|&k| lambda[k]));
    let mut out = DMatrix::zeros(p, p);
    for (k, &src) in order.iter().enumerate() {
        let col = v.column(src);
        let sign = col
            .iter()
            .find(|x| x.abs() > SIGN_THRESHOLD)
            .map_or(1.0, |x| x.signum());
        out.set_column(k, &(col * sign));
    }
    (sorted, out, order)
}

fn gap_warnings(lambda: &DVector<f64>) -> Vec<SpectralWarning> {
    let trace: f64 = lambda.iter().sum();
    (1..lambda.len())
        .filter_map(|k| {
            let gap = lambda[k] - lambda[k - 1];
            (gap < GAP_WARNING * trace).then_some(SpectralWarning::NearRepeatedEigenvalues { index: k, gap })
        })
        .collect()
}

/// Uncentered second-moment matrix `(1/T) sum_t X_t X_t'`.
pub fn sample_covariance(panel: &ReturnPanel) -> Result<CovMatrix> {
    let n = panel.n_obs();
    if n == 0 || panel.n_assets() == 0 {
        return Err(Error::InvalidInput("empty return panel".into()));
    }
    let x = panel.data();
    for t in 0..n {
        if let Some(col) = x.row(t).iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: t, col });
        }
    }
    let m = x.transpose() * x / n as f64;
    Ok(CovMatrix((&m + m.transpose()) * 0.5))
}

/// Identified eigendecomposition of a covariance matrix.
///
/// Fails when the smallest eigenvalue is not strictly positive; near-repeated
/// eigenvalues only produce a warning on the returned target.
pub fn eigen_sym(h: &CovMatrix) -> Result<SpectralTarget> {
    let eig = SymmetricEigen::new(h.matrix().clone());
    let (lambda, v, _) = normalize_eigenpairs(&eig.eigenvalues, &eig.eigenvectors);
    if lambda[0] <= 0.0 {
        return Err(Error::NonPositiveEigenvalue { value: lambda[0] });
    }
    let warnings = gap_warnings(&lambda);
    let mut target = SpectralTarget {
        lambda,
        v,
        warnings,
        residual: 0.0,
    };
    target.residual = (target.reconstruct() - h.matrix()).amax();
    Ok(target)
}

/// Rotation angles, one per pair `i < j` in lexicographic order
/// `(1,2), (1,3), ..., (1,p), (2,3), ...`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RotationAngles(pub Vec<f64>);

impl RotationAngles {
    pub fn count(p: usize) -> usize {
        p * p.saturating_sub(1) / 2
    }

    pub fn constant(p: usize, angle: f64) -> Self {
        Self(vec![angle; Self::count(p)])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Index pairs `(i, j)` (0-based) in the product order.
pub fn rotation_pairs(p: usize) -> Vec<(usize, usize)> {
    (0..p).flat_map(|i| (i + 1..p).map(move |j| (i, j))).collect()
}

fn apply_rotation_right(m: &mut DMatrix<f64>, i: usize, j: usize, phi: f64) {
    // m <- m * U_ij(phi); U has (i,i)=(j,j)=cos, (i,j)=sin, (j,i)=-sin.
    let (s, c) = phi.sin_cos();
    for r in 0..m.nrows() {
        let mi = m[(r, i)];
        let mj = m[(r, j)];
        m[(r, i)] = c * mi - s * mj;
        m[(r, j)] = s * mi + c * mj;
    }
}

fn rotation_matrix(p: usize, i: usize, j: usize, phi: f64) -> DMatrix<f64> {
    let mut u = DMatrix::identity(p, p);
    apply_rotation_right(&mut u, i, j, phi);
    u
}

/// `V(phi) = prod_{i<j} U_ij(phi_ij)`.
pub fn givens_product(phi: &RotationAngles, p: usize) -> Result<DMatrix<f64>> {
    if phi.0.len() != RotationAngles::count(p) {
        return Err(Error::InvalidInput(format!(
            "expected {} rotation angles for p = {p}, got {}",
            RotationAngles::count(p),
            phi.0.len()
        )));
    }
    let mut v = DMatrix::identity(p, p);
    for (&(i, j), &a) in rotation_pairs(p).iter().zip(phi.0.iter()) {
        apply_rotation_right(&mut v, i, j, a);
    }
    Ok(v)
}

/// Gradient of `<G, V(phi)>_F` with respect to each angle.
pub fn givens_gradient(phi: &RotationAngles, p: usize, g: &DMatrix<f64>) -> Result<Vec<f64>> {
    let pairs = rotation_pairs(p);
    if phi.0.len() != pairs.len() {
        return Err(Error::InvalidInput("wrong number of rotation angles".into()));
    }
    let k = pairs.len();
    // prefix[m] = U_0 ... U_{m-1}; suffix[m] = U_{m+1} ... U_{k-1}
    let mut prefix = Vec::with_capacity(k);
    let mut acc = DMatrix::identity(p, p);
    for (m, &(i, j)) in pairs.iter().enumerate() {
        prefix.push(acc.clone());
        apply_rotation_right(&mut acc, i, j, phi.0[m]);
    }
    let mut suffix = vec![DMatrix::identity(p, p); k];
    let mut acc = DMatrix::identity(p, p);
    for m in (0..k).rev() {
        suffix[m] = acc.clone();
        let (i, j) = pairs[m];
        acc = rotation_matrix(p, i, j, phi.0[m]) * acc;
    }
    let mut grad = vec![0.0; k];
    for (m, &(i, j)) in pairs.iter().enumerate() {
        let q = prefix[m].transpose() * g * suffix[m].transpose();
        let (s, c) = phi.0[m].sin_cos();
        // dU/dphi: (i,i)=(j,j)=-sin, (i,j)=cos, (j,i)=-cos
        grad[m] = -s * (q[(i, i)] + q[(j, j)]) + c * (q[(i, j)] - q[(j, i)]);
    }
    Ok(grad)
}

/// Inverse of [`givens_product`] for an orthonormal matrix with determinant +1.
///
/// Angles for the pairs `(k, j)` with `j > k+1` come out in `(-pi/2, pi/2)`, the
/// first angle of each sweep in `(-pi, pi]`.
pub fn givens_angles(v: &DMatrix<f64>) -> Result<RotationAngles> {
    let p = v.nrows();
    if v.ncols() != p {
        return Err(Error::InvalidInput("matrix must be square".into()));
    }
    let ortho = (v.transpose() * v - DMatrix::identity(p, p)).amax();
    if ortho > 1e-8 {
        return Err(Error::InvalidInput(format!("matrix is not orthonormal ({ortho:e})")));
    }
    if v.determinant() < 0.0 {
        return Err(Error::InvalidInput(
            "rotation decomposition needs determinant +1".into(),
        ));
    }
    let mut m = v.clone();
    let mut phi = Vec::with_capacity(RotationAngles::count(p));
    for k in 0..p.saturating_sub(1) {
        let col: Vec<f64> = (0..p).map(|r| m[(r, k)]).collect();
        let mut sweep = Vec::with_capacity(p - k - 1);
        for j in k + 1..p {
            let next = if j > k + 1 {
                let head: f64 = col[k + 1..j].iter().map(|x| x * x).sum();
                (col[k] * col[k] + head).sqrt()
            } else {
                col[k]
            };
            sweep.push((-col[j]).atan2(next));
        }
        // peel R_k = U_{k,k+1} ... U_{k,p-1} off the left
        let mut r = DMatrix::identity(p, p);
        for (j, &a) in (k + 1..p).zip(sweep.iter()) {
            apply_rotation_right(&mut r, k, j, a);
        }
        m = r.transpose() * m;
        phi.extend(sweep);
    }
    Ok(RotationAngles(phi))
}

/// Column order and signs under which an orthonormal matrix is a Givens product
/// with all angles strictly inside `(0, pi/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxRepresentation {
    /// Column `k` of the representation is `signs[k]` times column `order[k]` of the input.
    pub order: Vec<usize>,
    pub signs: Vec<f64>,
    pub angles: RotationAngles,
}

/// Searches column orderings and signs of `v` for a representation with every
/// angle in `(0, pi/2)`. Returns `None` when no such representation exists
/// (or the search budget runs out).
pub fn box_representation(v: &DMatrix<f64>) -> Option<BoxRepresentation> {
    box_representation_within(v, 0.0)
}

/// As [`box_representation`], but entries of the wrong sign up to `tolerance`
/// in magnitude are accepted; the angles then may fall slightly outside the box.
pub fn box_representation_within(v: &DMatrix<f64>, tolerance: f64) -> Option<BoxRepresentation> {
    let p = v.nrows();
    if v.ncols() != p || (v.transpose() * v - DMatrix::identity(p, p)).amax() > 1e-8 {
        return None;
    }
    let mut order = Vec::with_capacity(p);
    let mut signs = Vec::with_capacity(p);
    let mut angles = Vec::with_capacity(RotationAngles::count(p));
    let mut budget = 20_000usize;
    let remaining: Vec<usize> = (0..p).collect();
    if box_search(
        v.clone(),
        0,
        &remaining,
        tolerance,
        &mut order,
        &mut signs,
        &mut angles,
        &mut budget,
    ) {
        Some(BoxRepresentation {
            order,
            signs,
            angles: RotationAngles(angles),
        })
    } else {
        None
    }
}

#[allow(clippy::too_many_arguments)]
fn box_search(
    m: DMatrix<f64>,
    k: usize,
    remaining: &[usize],
    tol: f64,
    order: &mut Vec<usize>,
    signs: &mut Vec<f64>,
    angles: &mut Vec<f64>,
    budget: &mut usize,
) -> bool {
    let p = m.nrows();
    if k + 1 == p {
        let c = remaining[0];
        let sign = m[(k, c)].signum();
        order.push(c);
        signs.push(sign);
        return true;
    }
    for (pos, &c) in remaining.iter().enumerate() {
        for sign in [1.0, -1.0] {
            if *budget == 0 {
                return false;
            }
            *budget -= 1;
            let col: Vec<f64> = (0..p).map(|r| sign * m[(r, c)]).collect();
            if !(col[k] > 0.0) || col[k + 1..].iter().any(|&x| !(x < tol) || (tol == 0.0 && x == 0.0)) {
                continue;
            }
            let mut sweep = Vec::with_capacity(p - k - 1);
            for j in k + 1..p {
                let head: f64 = col[k + 1..j].iter().map(|x| x * x).sum();
                sweep.push((-col[j]).atan2((col[k] * col[k] + head).sqrt()));
            }
            let mut r = DMatrix::identity(p, p);
            for (j, &a) in (k + 1..p).zip(sweep.iter()) {
                apply_rotation_right(&mut r, k, j, a);
            }
            let next = r.transpose() * &m;
            let rest: Vec<usize> = remaining
                .iter()
                .enumerate()
                .filter(|&(q, _)| q != pos)
                .map(|(_, &x)| x)
                .collect();
            let (o, s, a) = (order.len(), signs.len(), angles.len());
            order.push(c);
            signs.push(sign);
            angles.extend(sweep);
            if box_search(next, k + 1, &rest, tol, order, signs, angles, budget) {
                return true;
            }
            order.truncate(o);
            signs.truncate(s);
            angles.truncate(a);
        }
    }
    false
}

/// Symmetric pseudo-inverse from the eigendecomposition, dropping
/// eigenvalues with `|mu| <= rcond * max |mu|`.
fn symmetric_pseudo_inverse(a: &DMatrix<f64>, rcond: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(a.clone());
    let cutoff = rcond * eig.eigenvalues.amax();
    let n = a.nrows();
    let mut out = DMatrix::zeros(n, n);
    for (k, &mu) in eig.eigenvalues.iter().enumerate() {
        if mu.abs() > cutoff && mu != 0.0 {
            let q = eig.eigenvectors.column(k);
            out += q * q.transpose() / mu;
        }
    }
    out
}

/// Moore-Penrose pseudo-inverse with singular values below
/// `rcond * max singular value` treated as zero.
///
/// Singular triplets come from the symmetric eigenproblem of
/// `[[0, A], [A', 0]]`, whose positive eigenvalues are the singular values
/// with eigenvectors `(u; v) / sqrt(2)`.
pub fn pseudo_inverse(a: &DMatrix<f64>, rcond: f64) -> DMatrix<f64> {
    let (m, n) = a.shape();
    if m == n && (a - a.transpose()).amax() <= 1e-14 * a.amax() {
        return symmetric_pseudo_inverse(&((a + a.transpose()) * 0.5), rcond);
    }
    let mut jw = DMatrix::zeros(m + n, m + n);
    jw.view_mut((0, m), (m, n)).copy_from(a);
    jw.view_mut((m, 0), (n, m)).copy_from(&a.transpose());
    let eig = SymmetricEigen::new(jw);
    let cutoff = rcond * eig.eigenvalues.amax();
    let mut out = DMatrix::zeros(n, m);
    for (k, &s) in eig.eigenvalues.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            let q = eig.eigenvectors.column(k);
            out += q.rows(m, n) * q.rows(0, m).transpose() * (2.0 / s);
        }
    }
    out
}

/// `(lambda_i I - H)^+`.
pub fn shifted_pseudo_inverse(h: &CovMatrix, lambda_i: f64) -> Result<DMatrix<f64>> {
    if !lambda_i.is_finite() {
        return Err(Error::InvalidInput("shift must be finite".into()));
    }
    let p = h.dim();
    let shifted = DMatrix::identity(p, p) * lambda_i - h.matrix();
    Ok(symmetric_pseudo_inverse(&shifted, PINV_RCOND))
}

/// Largest eigenvalue modulus of a square matrix (complex moduli for
/// non-symmetric input).
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::InvalidInput("spectral radius needs a square matrix".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    let is_diag = (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] == 0.0));
    if is_diag {
        return Ok(m.diagonal().amax());
    }
    Ok(m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Kronecker product `A ⊗ B`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}
