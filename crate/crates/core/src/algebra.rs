//! Augmented complex linear algebra.
//!
//! Zero-mean complex random vectors carry two second-order moments: the
//! covariance `R = E{x x^H}` and the pseudocovariance `P = E{x x^T}`. The
//! pair is held by [`SecondOrderStats`]; stacking a vector with its conjugate
//! gives the augmented representation whose covariance is the block matrix
//! `[[R, P], [P*, R*]]`, held by [`AugmentedMatrix`]. [`DualityMap`] is the
//! invertible mapping between augmented complex vectors and stacked
//! real/imaginary composite vectors.

use nalgebra::{Complex, DMatrix, DVector};
use thiserror::Error;

/// Double-precision complex scalar.
pub type C64 = Complex<f64>;
/// Dense complex matrix.
pub type CMatrix = DMatrix<C64>;
/// Dense complex column vector.
pub type CVector = DVector<C64>;
/// Dense real matrix.
pub type RMatrix = DMatrix<f64>;
/// Dense real column vector.
pub type RVector = DVector<f64>;

/// Absolute tolerance for structural checks (Hermitian, conjugate-pair, PSD),
/// scaled by the matrix max-norm.
pub const STRUCTURAL_TOL: f64 = 1e-10;

/// Estimated 1-norm condition number beyond which inversions are rejected.
pub const CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Error)]
pub enum AlgebraError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("matrix is not Hermitian within tolerance (deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },
    #[error("matrix is not symmetric within tolerance (deviation {deviation:.3e})")]
    NotSymmetric { deviation: f64 },
    #[error("matrix is not positive semi-definite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPsd { min_eigenvalue: f64 },
    #[error("vector violates the augmented conjugate-pair structure (deviation {deviation:.3e})")]
    NotAugmented { deviation: f64 },
    #[error("matrix is singular or exceeds the condition limit (estimate {cond_estimate:.3e})")]
    Singular { cond_estimate: f64 },
    #[error("variance must be strictly positive")]
    ZeroVariance,
}

fn scale_of(norm: f64) -> f64 {
    norm.max(1.0)
}

fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

/// Checks that every entry of `m` is finite.
pub fn ensure_finite(m: &CMatrix) -> Result<(), AlgebraError> {
    if m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(AlgebraError::NonFinite)
    }
}

fn hermitian_deviation(m: &CMatrix) -> f64 {
    (m - m.adjoint()).iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

fn symmetric_deviation(m: &CMatrix) -> f64 {
    (m - m.transpose()).iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let mut eigs: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    eigs.sort_by(|a, b| a.partial_cmp(b).expect("eigenvalues are finite"));
    eigs
}

/// Verifies that a Hermitian matrix is PSD within the scaled tolerance.
pub fn ensure_psd(m: &CMatrix, tol: f64) -> Result<(), AlgebraError> {
    let eigs = hermitian_eigenvalues(m);
    let scale = scale_of(eigs.iter().fold(0.0_f64, |a, &e| a.max(e.abs())));
    match eigs.first() {
        Some(&min) if min < -tol * scale => Err(AlgebraError::NotPsd { min_eigenvalue: min }),
        _ => Ok(()),
    }
}

/// Dense inverse with an explicit condition-number guard, for any scalar
/// algebra (complex or real).
///
/// Fails with [`AlgebraError::Singular`] when the LU factorization breaks down
/// or when the 1-norm condition estimate `‖A‖₁‖A⁻¹‖₁` exceeds `cond_limit`.
/// No regularization is applied.
pub fn invert<T>(m: &DMatrix<T>, cond_limit: f64) -> Result<DMatrix<T>, AlgebraError>
where
    T: nalgebra::ComplexField<RealField = f64>,
{
    if m.nrows() != m.ncols() {
        return Err(AlgebraError::DimensionMismatch(format!(
            "cannot invert a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if !m.iter().all(|z| z.clone().modulus().is_finite()) {
        return Err(AlgebraError::NonFinite);
    }
    let inv = m
        .clone()
        .lu()
        .try_inverse()
        .ok_or(AlgebraError::Singular { cond_estimate: f64::INFINITY })?;
    if !inv.iter().all(|z| z.clone().modulus().is_finite()) {
        return Err(AlgebraError::Singular { cond_estimate: f64::INFINITY });
    }
    let cond = one_norm(m) * one_norm(&inv);
    if cond > cond_limit {
        return Err(AlgebraError::Singular { cond_estimate: cond });
    }
    Ok(inv)
}

fn one_norm<T>(m: &DMatrix<T>) -> f64
where
    T: nalgebra::ComplexField<RealField = f64>,
{
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|z| z.clone().modulus()).sum::<f64>())
        .fold(0.0_f64, f64::max)
}

/// Covariance/pseudocovariance pair of a zero-mean complex random vector.
///
/// The covariance must be Hermitian, the pseudocovariance symmetric, and the
/// assembled augmented matrix `[[R, P], [P*, R*]]` positive semi-definite.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrderStats {
    covariance: CMatrix,
    pseudocovariance: CMatrix,
}

impl SecondOrderStats {
    /// Validates and stores a covariance/pseudocovariance pair.
    pub fn new(covariance: CMatrix, pseudocovariance: CMatrix) -> Result<Self, AlgebraError> {
        Self::with_tol(covariance, pseudocovariance, STRUCTURAL_TOL)
    }

    /// Like [`SecondOrderStats::new`] with an explicit structural tolerance.
    pub fn with_tol(
        covariance: CMatrix,
        pseudocovariance: CMatrix,
        tol: f64,
    ) -> Result<Self, AlgebraError> {
        if covariance.nrows() != covariance.ncols()
            || pseudocovariance.nrows() != pseudocovariance.ncols()
            || covariance.nrows() != pseudocovariance.nrows()
            || covariance.nrows() == 0
        {
            return Err(AlgebraError::DimensionMismatch(format!(
                "covariance {}x{} and pseudocovariance {}x{} must be square and equal-sized",
                covariance.nrows(),
                covariance.ncols(),
                pseudocovariance.nrows(),
                pseudocovariance.ncols()
            )));
        }
        ensure_finite(&covariance)?;
        ensure_finite(&pseudocovariance)?;
        let scale = scale_of(max_abs(&covariance).max(max_abs(&pseudocovariance)));
        let herm = hermitian_deviation(&covariance);
        if herm > tol * scale {
            return Err(AlgebraError::NotHermitian { deviation: herm });
        }
        let sym = symmetric_deviation(&pseudocovariance);
        if sym > tol * scale {
            return Err(AlgebraError::NotSymmetric { deviation: sym });
        }
        let stats = Self { covariance, pseudocovariance };
        ensure_psd(&stats.assemble_augmented(), tol)?;
        Ok(stats)
    }

    /// Circular (proper) statistics: zero pseudocovariance.
    pub fn circular(covariance: CMatrix) -> Result<Self, AlgebraError> {
        let dim = covariance.nrows();
        Self::new(covariance, CMatrix::zeros(dim, dim))
    }

    /// Scalar statistics from a variance and pseudovariance.
    pub fn scalar(variance: f64, pseudovariance: C64) -> Result<Self, AlgebraError> {
        Self::new(
            CMatrix::from_element(1, 1, C64::new(variance, 0.0)),
            CMatrix::from_element(1, 1, pseudovariance),
        )
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    pub fn covariance(&self) -> &CMatrix {
        &self.covariance
    }

    pub fn pseudocovariance(&self) -> &CMatrix {
        &self.pseudocovariance
    }

    fn assemble_augmented(&self) -> CMatrix {
        assemble_blocks(&self.covariance, &self.pseudocovariance)
    }

    /// Congruence transform `(A R A^H, A P A^T)` of the statistics, i.e. the
    /// second-order statistics of `A x`.
    pub fn transform(&self, a: &CMatrix) -> Result<Self, AlgebraError> {
        if a.ncols() != self.dim() {
            return Err(AlgebraError::DimensionMismatch(format!(
                "transform expects {} columns, got {}",
                self.dim(),
                a.ncols()
            )));
        }
        Ok(Self {
            covariance: a * &self.covariance * a.adjoint(),
            pseudocovariance: a * &self.pseudocovariance * a.transpose(),
        })
    }
}

fn assemble_blocks(top_left: &CMatrix, top_right: &CMatrix) -> CMatrix {
    let (p, q) = (top_left.nrows(), top_left.ncols());
    let mut full = CMatrix::zeros(2 * p, 2 * q);
    full.view_mut((0, 0), (p, q)).copy_from(top_left);
    full.view_mut((0, q), (p, q)).copy_from(top_right);
    full.view_mut((p, 0), (p, q)).copy_from(&top_right.conjugate());
    full.view_mut((p, q), (p, q)).copy_from(&top_left.conjugate());
    full
}

/// Matrix with the augmented block-conjugate pattern `[[A₁, A₂], [A₂*, A₁*]]`.
///
/// Only the two independent blocks are stored; the full matrix is materialized
/// on demand, so the structural invariant cannot be violated by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedMatrix {
    top_left: CMatrix,
    top_right: CMatrix,
}

impl AugmentedMatrix {
    pub fn from_blocks(top_left: CMatrix, top_right: CMatrix) -> Result<Self, AlgebraError> {
        if top_left.shape() != top_right.shape() {
            return Err(AlgebraError::DimensionMismatch(format!(
                "augmented blocks must agree in shape: {:?} vs {:?}",
                top_left.shape(),
                top_right.shape()
            )));
        }
        ensure_finite(&top_left)?;
        ensure_finite(&top_right)?;
        Ok(Self { top_left, top_right })
    }

    /// Augmented identity of complex dimension `dim` (full size `2·dim`).
    pub fn identity(dim: usize) -> Self {
        Self {
            top_left: CMatrix::identity(dim, dim),
            top_right: CMatrix::zeros(dim, dim),
        }
    }

    /// Extracts the blocks of a full matrix, verifying the conjugate pattern.
    pub fn from_full(full: &CMatrix, tol: f64) -> Result<Self, AlgebraError> {
        if full.nrows() % 2 != 0 || full.ncols() % 2 != 0 {
            return Err(AlgebraError::DimensionMismatch(
                "augmented matrices have even dimensions".into(),
            ));
        }
        let (p, q) = (full.nrows() / 2, full.ncols() / 2);
        let top_left = full.view((0, 0), (p, q)).into_owned();
        let top_right = full.view((0, q), (p, q)).into_owned();
        let scale = scale_of(max_abs(full));
        let dev_conj = (full.view((p, 0), (p, q)).into_owned() - top_right.conjugate())
            .iter()
            .fold(0.0_f64, |a, z| a.max(z.norm()));
        let dev_same = (full.view((p, q), (p, q)).into_owned() - top_left.conjugate())
            .iter()
            .fold(0.0_f64, |a, z| a.max(z.norm()));
        let deviation = dev_conj.max(dev_same);
        if deviation > tol * scale {
            return Err(AlgebraError::NotAugmented { deviation });
        }
        Self::from_blocks(top_left, top_right)
    }

    pub fn top_left(&self) -> &CMatrix {
        &self.top_left
    }

    pub fn top_right(&self) -> &CMatrix {
        &self.top_right
    }

    /// Materializes the full `[[A₁, A₂], [A₂*, A₁*]]` matrix.
    pub fn materialize(&self) -> CMatrix {
        assemble_blocks(&self.top_left, &self.top_right)
    }

    /// Block product; the pattern is closed under multiplication.
    pub fn mul(&self, rhs: &Self) -> Result<Self, AlgebraError> {
        if self.top_left.ncols() != rhs.top_left.nrows() {
            return Err(AlgebraError::DimensionMismatch(format!(
                "product of {}x{} and {}x{} blocks",
                self.top_left.nrows(),
                self.top_left.ncols(),
                rhs.top_left.nrows(),
                rhs.top_left.ncols()
            )));
        }
        Ok(Self {
            top_left: &self.top_left * &rhs.top_left + &self.top_right * rhs.top_right.conjugate(),
            top_right: &self.top_left * &rhs.top_right + &self.top_right * rhs.top_left.conjugate(),
        })
    }

    /// Inverse through the materialized matrix; the pattern is closed under
    /// inversion, so the result is re-extracted blockwise.
    pub fn try_inverse(&self, cond_limit: f64) -> Result<Self, AlgebraError> {
        let inv = invert(&self.materialize(), cond_limit)?;
        Self::from_full(&inv, STRUCTURAL_TOL.max(1e-8))
    }
}

/// Builds the augmented covariance `[[R, P], [P*, R*]]` of a stats pair.
///
/// The PSD invariant is re-checked on the assembled matrix; `NotPsd` is
/// reported when an eigenvalue falls below the scaled tolerance.
pub fn build_augmented_cov(stats: &SecondOrderStats) -> Result<AugmentedMatrix, AlgebraError> {
    let full = stats.assemble_augmented();
    ensure_psd(&full, STRUCTURAL_TOL)?;
    AugmentedMatrix::from_blocks(stats.covariance().clone(), stats.pseudocovariance().clone())
}

/// Stacks a complex vector with its conjugate: `x ↦ [x^T, x^H]^T`.
pub fn augment_vector(x: &CVector) -> CVector {
    let n = x.len();
    let mut out = CVector::zeros(2 * n);
    out.rows_mut(0, n).copy_from(x);
    out.rows_mut(n, n).copy_from(&x.conjugate());
    out
}

/// Degree of circularity `|p|/σ²` of scalar statistics; 0 is circular, 1 is
/// maximally noncircular.
pub fn circularity_degree(stats: &SecondOrderStats) -> Result<f64, AlgebraError> {
    if stats.dim() != 1 {
        return Err(AlgebraError::DimensionMismatch(
            "circularity degree is defined for scalar statistics".into(),
        ));
    }
    let variance = stats.covariance()[(0, 0)].re;
    if variance <= 0.0 {
        return Err(AlgebraError::ZeroVariance);
    }
    Ok(stats.pseudocovariance()[(0, 0)].norm() / variance)
}

/// The orthogonal mapping `J = [[I, jI], [I, -jI]]` between composite real
/// vectors `[Re x; Im x]` and augmented complex vectors `[x; x*]`, with
/// `J⁻¹ = ½ J^H`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DualityMap {
    dim: usize,
}

impl DualityMap {
    /// Map for complex vectors of length `dim` (full matrices are `2·dim`).
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The full `2q×2q` matrix `J`.
    pub fn matrix(&self) -> CMatrix {
        let q = self.dim;
        let mut j = CMatrix::zeros(2 * q, 2 * q);
        for k in 0..q {
            j[(k, k)] = C64::new(1.0, 0.0);
            j[(k, q + k)] = C64::new(0.0, 1.0);
            j[(q + k, k)] = C64::new(1.0, 0.0);
            j[(q + k, q + k)] = C64::new(0.0, -1.0);
        }
        j
    }

    /// The exact inverse `J⁻¹ = ½ J^H`.
    pub fn inverse_matrix(&self) -> CMatrix {
        self.matrix().adjoint() * C64::new(0.5, 0.0)
    }

    /// `z^r = J⁻¹ z^a`: maps an augmented vector to its stacked
    /// real/imaginary composite form. The conjugate-pair structure is
    /// verified within the scaled tolerance.
    pub fn complex_to_real(&self, augmented: &CVector) -> Result<RVector, AlgebraError> {
        if augmented.len() != 2 * self.dim {
            return Err(AlgebraError::DimensionMismatch(format!(
                "expected augmented length {}, got {}",
                2 * self.dim,
                augmented.len()
            )));
        }
        let upper = augmented.rows(0, self.dim);
        let lower = augmented.rows(self.dim, self.dim);
        let scale = scale_of(augmented.iter().fold(0.0_f64, |a, z| a.max(z.norm())));
        let deviation = (lower.into_owned() - upper.conjugate())
            .iter()
            .fold(0.0_f64, |a, z| a.max(z.norm()));
        if deviation > STRUCTURAL_TOL * scale {
            return Err(AlgebraError::NotAugmented { deviation });
        }
        let mut out = RVector::zeros(2 * self.dim);
        for k in 0..self.dim {
            out[k] = upper[k].re;
            out[self.dim + k] = upper[k].im;
        }
        Ok(out)
    }

    /// `z^a = J z^r`: recomposes an augmented complex vector from its real
    /// composite form. Exact inverse of [`DualityMap::complex_to_real`].
    pub fn real_to_complex(&self, composite: &RVector) -> Result<CVector, AlgebraError> {
        if composite.len() != 2 * self.dim {
            return Err(AlgebraError::DimensionMismatch(format!(
                "expected composite length {}, got {}",
                2 * self.dim,
                composite.len()
            )));
        }
        let mut out = CVector::zeros(2 * self.dim);
        for k in 0..self.dim {
            let z = C64::new(composite[k], composite[self.dim + k]);
            out[k] = z;
            out[self.dim + k] = z.conj();
        }
        Ok(out)
    }

    /// Complex vector of length `dim` from its real composite form.
    pub fn complex_from_composite(&self, composite: &RVector) -> Result<CVector, AlgebraError> {
        let aug = self.real_to_complex(composite)?;
        Ok(aug.rows(0, self.dim).into_owned())
    }
}

/// Similarity transport `M^r = J_out⁻¹ M^a J_in` of a (possibly rectangular)
/// matrix with the augmented block pattern; the result is exactly real.
///
/// For blocks `[[A₁, A₂], [A₂*, A₁*]]` the closed form is
/// `[[Re(A₁+A₂), Im(A₂−A₁)], [Im(A₁+A₂), Re(A₁−A₂)]]`.
pub fn real_from_augmented(m: &CMatrix, tol: f64) -> Result<RMatrix, AlgebraError> {
    let aug = AugmentedMatrix::from_full(m, tol)?;
    let a1 = aug.top_left();
    let a2 = aug.top_right();
    let (p, q) = a1.shape();
    let mut out = RMatrix::zeros(2 * p, 2 * q);
    for i in 0..p {
        for j in 0..q {
            let s = a1[(i, j)] + a2[(i, j)];
            let d = a1[(i, j)] - a2[(i, j)];
            out[(i, j)] = s.re;
            out[(i, q + j)] = -d.im;
            out[(p + i, j)] = s.im;
            out[(p + i, q + j)] = d.re;
        }
    }
    Ok(out)
}

/// Congruence transport `M^r = J_out⁻¹ M^a J_in^{-H} = ½ J_out⁻¹ M^a J_in` of
/// a covariance with the augmented pattern.
pub fn real_cov_from_augmented(m: &CMatrix, tol: f64) -> Result<RMatrix, AlgebraError> {
    Ok(real_from_augmented(m, tol)? * 0.5)
}

/// Widely-linear MMSE coefficients for `ŷ = B x + C x*` given the input
/// statistics `(R_x, P_x)` and cross statistics `(R_yx, P_yx)`.
///
/// `B = R_yx D + P_yx E*`, `C = R_yx E + P_yx D*` with
/// `D = (R_x − P_x R_x*⁻¹ P_x*)⁻¹` and `E = −D P_x R_x*⁻¹`. Fails with
/// [`AlgebraError::Singular`] when `R_x` or the Schur-type matrix cannot be
/// inverted, e.g. for a maximally noncircular scalar input.
pub fn wl_mmse_coefficients(
    r_x: &CMatrix,
    p_x: &CMatrix,
    r_yx: &CMatrix,
    p_yx: &CMatrix,
) -> Result<(CMatrix, CMatrix), AlgebraError> {
    let n = r_x.nrows();
    if r_x.ncols() != n || p_x.shape() != (n, n) || r_yx.ncols() != n || p_yx.ncols() != n {
        return Err(AlgebraError::DimensionMismatch(
            "widely-linear solve requires square input stats and matching cross stats".into(),
        ));
    }
    let r_x_conj_inv = invert(&r_x.conjugate(), CONDITION_LIMIT)?;
    let schur = r_x - p_x * &r_x_conj_inv * p_x.conjugate();
    let d = invert(&schur, CONDITION_LIMIT)?;
    let e = -(&d * p_x * &r_x_conj_inv);
    let b = r_yx * &d + p_yx * e.conjugate();
    let c = r_yx * &e + p_yx * d.conjugate();
    Ok((b, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_cmatrix(rng: &mut StdRng, rows: usize, cols: usize) -> CMatrix {
        CMatrix::from_fn(rows, cols, |_, _| {
            c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    /// A valid random stats pair built as the second-order moments of a
    /// linearly mixed proper+improper Gaussian, which is PSD by construction.
    fn random_stats(rng: &mut StdRng, dim: usize) -> SecondOrderStats {
        let a = random_cmatrix(rng, dim, dim);
        let b = random_cmatrix(rng, dim, dim);
        // x = A u + B u* for proper unit-variance u gives R = AA^H + BB^H,
        // P = AB^T + BA^T.
        let r = &a * a.adjoint() + &b * b.adjoint();
        let p = &a * b.transpose() + &b * a.transpose();
        SecondOrderStats::new(r, p).expect("construction is PSD by design")
    }

    #[test]
    fn augment_vector_definition() {
        let x = CVector::from_vec(vec![c(1.0, 2.0)]);
        let a = augment_vector(&x);
        assert_eq!(a.len(), 2);
        assert_eq!(a[0], c(1.0, 2.0));
        assert_eq!(a[1], c(1.0, -2.0));
    }

    #[test]
    fn augment_vector_zero_case() {
        let x = CVector::zeros(2);
        let a = augment_vector(&x);
        assert_eq!(a.len(), 4);
        assert!(a.iter().all(|z| *z == c(0.0, 0.0)));
    }

    #[test]
    fn augment_vector_real_fixed_by_conjugation() {
        let x = CVector::from_vec(vec![c(3.0, 0.0), c(-1.0, 0.0)]);
        let a = augment_vector(&x);
        assert_eq!(a.as_slice(), &[c(3.0, 0.0), c(-1.0, 0.0), c(3.0, 0.0), c(-1.0, 0.0)]);
    }

    #[test]
    fn build_augmented_cov_circular_scalar() {
        let stats = SecondOrderStats::scalar(1.0, c(0.0, 0.0)).unwrap();
        let full = build_augmented_cov(&stats).unwrap().materialize();
        assert_eq!(full, CMatrix::identity(2, 2));
    }

    #[test]
    fn build_augmented_cov_maximally_noncircular_boundary() {
        let stats = SecondOrderStats::scalar(2.0, c(2.0, 0.0)).unwrap();
        let full = build_augmented_cov(&stats).unwrap().materialize();
        for entry in full.iter() {
            assert_relative_eq!(entry.re, 2.0);
            assert_relative_eq!(entry.im, 0.0);
        }
        // rank 1: eigenvalues {4, 0}
        let eigs = hermitian_eigenvalues(&full);
        assert_relative_eq!(eigs[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(eigs[1], 4.0, epsilon = 1e-12);
    }

    #[test]
    fn build_augmented_cov_rejects_infeasible_pseudovariance() {
        let err = SecondOrderStats::scalar(2.0, c(3.0, 0.0)).unwrap_err();
        assert!(matches!(err, AlgebraError::NotPsd { .. }));
    }

    #[test]
    fn circularity_degree_examples() {
        let circular = SecondOrderStats::scalar(2.0, c(0.0, 0.0)).unwrap();
        assert_relative_eq!(circularity_degree(&circular).unwrap(), 0.0);
        let maximal = SecondOrderStats::scalar(2.0, c(2.0, 0.0)).unwrap();
        assert_relative_eq!(circularity_degree(&maximal).unwrap(), 1.0);
        let partial = SecondOrderStats::scalar(2.0, c(0.0, 1.7)).unwrap();
        assert_relative_eq!(circularity_degree(&partial).unwrap(), 0.85);
    }

    #[test]
    fn circularity_degree_rejects_zero_variance() {
        // Bypass the constructor invariants via a raw pair: variance zero.
        let stats = SecondOrderStats {
            covariance: CMatrix::zeros(1, 1),
            pseudocovariance: CMatrix::zeros(1, 1),
        };
        assert!(matches!(circularity_degree(&stats), Err(AlgebraError::ZeroVariance)));
    }

    #[test]
    fn complex_to_real_definition() {
        let map = DualityMap::new(1);
        let aug = CVector::from_vec(vec![c(1.0, 2.0), c(1.0, -2.0)]);
        let real = map.complex_to_real(&aug).unwrap();
        assert_eq!(real.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn complex_to_real_rejects_structure_violation() {
        let map = DualityMap::new(1);
        let bad = CVector::from_vec(vec![c(1.0, 2.0), c(1.0, 2.0)]);
        assert!(matches!(map.complex_to_real(&bad), Err(AlgebraError::NotAugmented { .. })));
    }

    #[test]
    fn identity_transport_is_identity() {
        let id = CMatrix::identity(4, 4);
        let real = real_from_augmented(&id, STRUCTURAL_TOL).unwrap();
        assert_eq!(real, RMatrix::identity(4, 4));
    }

    #[test]
    fn duality_map_inverse_identity() {
        for q in [1usize, 2, 4, 8] {
            let map = DualityMap::new(q);
            let j = map.matrix();
            let j_inv = map.inverse_matrix();
            let prod = &j * &j_inv;
            let dev = (prod - CMatrix::identity(2 * q, 2 * q))
                .iter()
                .fold(0.0_f64, |a, z| a.max(z.norm()));
            assert!(dev == 0.0, "J · ½J^H must be the identity exactly, dev {dev}");
        }
    }

    #[test]
    fn wl_mmse_proper_case_recovers_strictly_linear() {
        let mut rng = StdRng::seed_from_u64(7);
        let a = random_cmatrix(&mut rng, 2, 2);
        let r_x = &a * a.adjoint() + CMatrix::identity(2, 2);
        let p_x = CMatrix::zeros(2, 2);
        let r_yx = random_cmatrix(&mut rng, 2, 2);
        let p_yx = CMatrix::zeros(2, 2);
        let (b, c_coef) = wl_mmse_coefficients(&r_x, &p_x, &r_yx, &p_yx).unwrap();
        let expected_b = &r_yx * invert(&r_x, CONDITION_LIMIT).unwrap();
        assert!((b - expected_b).iter().all(|z| z.norm() < 1e-10));
        assert!(c_coef.iter().all(|z| z.norm() <= 1e-12));
    }

    #[test]
    fn wl_mmse_singular_on_maximally_noncircular_scalar() {
        let r_x = CMatrix::from_element(1, 1, c(2.0, 0.0));
        let p_x = CMatrix::from_element(1, 1, c(2.0, 0.0));
        let r_yx = CMatrix::from_element(1, 1, c(1.0, 0.0));
        let p_yx = CMatrix::from_element(1, 1, c(1.0, 0.0));
        assert!(matches!(
            wl_mmse_coefficients(&r_x, &p_x, &r_yx, &p_yx),
            Err(AlgebraError::Singular { .. })
        ));
    }

    #[test]
    fn wl_mmse_matches_augmented_normal_equations() {
        // Oracle: solve the augmented least-squares system
        // W = R_{y x^a} (R^a_x)^{-1} and compare the [B C] split.
        let mut rng = StdRng::seed_from_u64(21);
        for _ in 0..10 {
            let dim = 2;
            let mix_a = random_cmatrix(&mut rng, dim, dim);
            let mix_b = random_cmatrix(&mut rng, dim, dim);
            let gain_a = random_cmatrix(&mut rng, dim, dim);
            let gain_b = random_cmatrix(&mut rng, dim, dim);
            // x = A u + B u* + e, y = C u + D u* for proper unit u and an
            // independent proper unit e: all joint moments follow in closed
            // form, and e keeps R_x well conditioned.
            let r_x = &mix_a * mix_a.adjoint() + &mix_b * mix_b.adjoint()
                + CMatrix::identity(dim, dim);
            let p_x = &mix_a * mix_b.transpose() + &mix_b * mix_a.transpose();
            let r_yx = &gain_a * mix_a.adjoint() + &gain_b * mix_b.adjoint();
            let p_yx = &gain_a * mix_b.transpose() + &gain_b * mix_a.transpose();

            let (b, c_coef) = wl_mmse_coefficients(&r_x, &p_x, &r_yx, &p_yx).unwrap();

            let r_x_aug = assemble_blocks(&r_x, &p_x);
            let mut r_yxa = CMatrix::zeros(dim, 2 * dim);
            r_yxa.view_mut((0, 0), (dim, dim)).copy_from(&r_yx);
            r_yxa.view_mut((0, dim), (dim, dim)).copy_from(&p_yx);
            let w = &r_yxa * invert(&r_x_aug, CONDITION_LIMIT).unwrap();

            let dev_b = (w.view((0, 0), (dim, dim)).into_owned() - &b)
                .iter()
                .fold(0.0_f64, |a, z| a.max(z.norm()));
            let dev_c = (w.view((0, dim), (dim, dim)).into_owned() - &c_coef)
                .iter()
                .fold(0.0_f64, |a, z| a.max(z.norm()));
            assert!(dev_b < 1e-9 && dev_c < 1e-9, "dev_b {dev_b}, dev_c {dev_c}");
        }
    }

    #[test]
    fn augmented_cov_is_hermitian_psd_for_valid_stats() {
        let mut rng = StdRng::seed_from_u64(3);
        for dim in [1usize, 2, 3, 5] {
            let stats = random_stats(&mut rng, dim);
            let full = build_augmented_cov(&stats).unwrap().materialize();
            assert!(hermitian_deviation(&full) <= 1e-12 * scale_of(max_abs(&full)));
            let eigs = hermitian_eigenvalues(&full);
            assert!(eigs[0] >= -1e-10 * scale_of(eigs[eigs.len() - 1]));
        }
    }

    #[test]
    fn invert_rejects_singular() {
        let m = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(2.0, 0.0), c(2.0, 0.0), c(4.0, 0.0)]);
        assert!(matches!(invert(&m, CONDITION_LIMIT), Err(AlgebraError::Singular { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn duality_round_trip(dim in 1usize..=64, seed in 0u64..1000) {
            let mut rng = StdRng::seed_from_u64(seed);
            let map = DualityMap::new(dim);
            let x = CVector::from_fn(dim, |_, _| {
                c(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0))
            });
            let aug = augment_vector(&x);
            let real = map.complex_to_real(&aug).unwrap();
            let back = map.real_to_complex(&real).unwrap();
            let dev = (back - aug).iter().fold(0.0_f64, |a, z| a.max(z.norm()));
            prop_assert!(dev <= 1e-12);
        }

        #[test]
        fn augmented_pattern_closed_under_product_and_inverse(seed in 0u64..1000) {
            let mut rng = StdRng::seed_from_u64(seed);
            let dim = 3;
            let lhs = AugmentedMatrix::from_blocks(
                random_cmatrix(&mut rng, dim, dim),
                random_cmatrix(&mut rng, dim, dim),
            ).unwrap();
            let rhs = AugmentedMatrix::from_blocks(
                random_cmatrix(&mut rng, dim, dim),
                random_cmatrix(&mut rng, dim, dim),
            ).unwrap();

            // Product: block form against full dense product.
            let block = lhs.mul(&rhs).unwrap().materialize();
            let dense = lhs.materialize() * rhs.materialize();
            let scale = scale_of(max_abs(&dense));
            let dev = (block - &dense).iter().fold(0.0_f64, |a, z| a.max(z.norm()));
            prop_assert!(dev <= 1e-10 * scale);

            // Inverse retains the pattern (skip near-singular draws).
            if let Ok(inv) = invert(&lhs.materialize(), 1e8) {
                prop_assert!(AugmentedMatrix::from_full(&inv, 1e-8).is_ok());
            }
        }
    }
}
