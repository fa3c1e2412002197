//! Noncircular complex Gaussian noise generation.
//!
//! Noise is specified through second-order moments only: per-node variances
//! and pseudovariances plus cross-node covariances and pseudocovariances
//! ([`NoiseSpec`]). Sampling assembles the equivalent real covariance of the
//! stacked real/imaginary parts, factorizes it once through a clamped
//! eigenvalue square root, and transforms i.i.d. standard normals
//! ([`GaussianSampler`]). All randomness flows through [`RngStream`], a
//! counter-addressed seeding scheme that makes every (trial, source, step)
//! draw reproducible and independent of execution order.

use crate::algebra::{AlgebraError, CMatrix, CVector, RMatrix, RVector, SecondOrderStats, C64};
use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Samples discarded before an AR sequence is considered stationary.
pub const AR_BURN_IN: usize = 500;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("pseudovariance magnitude {pseudo_abs} exceeds variance {variance} at node {node}")]
    InfeasiblePseudovariance { node: usize, variance: f64, pseudo_abs: f64 },
    #[error("variance must be strictly positive at node {node}")]
    ZeroVariance { node: usize },
    #[error("joint covariance is not positive semi-definite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPsd { min_eigenvalue: f64 },
    #[error("AR polynomial is not stationary (root modulus {root_modulus})")]
    UnstableAr { root_modulus: f64 },
    #[error("driving noise must be scalar, got dimension {dim}")]
    NotScalar { dim: usize },
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

fn mix64(mut h: u64) -> u64 {
    h ^= h >> 30;
    h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^ (h >> 31)
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Address of an independent random stream: a 64-bit master seed, a stream
/// index (typically the trial id) and a substream index (typically the time
/// step). Identical addresses reproduce identical draws; distinct addresses
/// yield statistically independent ChaCha streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
    pub substream: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0, substream: 0 }
    }

    /// Stream for a given trial (or other top-level index).
    pub fn stream(self, stream: u64) -> Self {
        Self { stream, ..self }
    }

    /// Substream for a given step (or other per-stream index).
    pub fn substream(self, substream: u64) -> Self {
        Self { substream, ..self }
    }

    /// Derives a child whose stream index mixes in `tag`, for addressing
    /// independent noise sources within one trial.
    pub fn child(self, tag: u64) -> Self {
        Self {
            seed: self.seed,
            stream: mix64(self.stream ^ tag.wrapping_mul(GOLDEN) ^ 0xA5A5_A5A5_A5A5_A5A5),
            substream: 0,
        }
    }

    fn key(&self) -> [u8; 32] {
        let mut state = mix64(self.seed ^ 0x6A09_E667_F3BC_C909);
        state = mix64(state ^ self.stream.wrapping_mul(GOLDEN));
        state = mix64(state ^ self.substream.wrapping_mul(0xD1B5_4A32_D192_ED03));
        let mut key = [0u8; 32];
        let mut word = state;
        for chunk in key.chunks_exact_mut(8) {
            word = mix64(word.wrapping_add(GOLDEN));
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        key
    }

    /// Instantiates the generator addressed by this stream.
    pub fn rng(&self) -> ChaCha12Rng {
        ChaCha12Rng::from_seed(self.key())
    }
}

/// Moment-matching split of a scalar complex variance/pseudovariance into the
/// real bivariate parameters `(var_real, var_imag, cov_real_imag)`:
/// `var_real = (σ² + Re p)/2`, `var_imag = (σ² − Re p)/2`, `cov = Im p / 2`.
pub fn bivariate_params(variance: f64, pseudovariance: C64) -> Result<(f64, f64, f64), StatsError> {
    if pseudovariance.norm() > variance * (1.0 + 1e-12) {
        return Err(StatsError::InfeasiblePseudovariance {
            node: 0,
            variance,
            pseudo_abs: pseudovariance.norm(),
        });
    }
    Ok((
        (variance + pseudovariance.re) / 2.0,
        (variance - pseudovariance.re) / 2.0,
        pseudovariance.im / 2.0,
    ))
}

/// Real covariance of `[Re z; Im z]` equivalent to complex second-order
/// statistics `(R, P)`: the vector generalization of [`bivariate_params`].
pub fn real_composite_covariance(stats: &SecondOrderStats) -> RMatrix {
    let d = stats.dim();
    let r = stats.covariance();
    let p = stats.pseudocovariance();
    let mut cov = RMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        for j in 0..d {
            let rr = r[(i, j)];
            let pp = p[(i, j)];
            cov[(i, j)] = (rr.re + pp.re) / 2.0;
            cov[(d + i, d + j)] = (rr.re - pp.re) / 2.0;
            // E[z_r z_i^T] = (Im P - Im R)/2
            cov[(i, d + j)] = (pp.im - rr.im) / 2.0;
            cov[(d + i, j)] = (pp.im + rr.im) / 2.0;
        }
    }
    cov
}

/// Gaussian sampler for a zero-mean complex vector with the given
/// second-order statistics. The equivalent real covariance is factorized once
/// through an eigenvalue square root; eigenvalues in `[-tol, 0)` are clamped
/// to zero so that rank-deficient (fully correlated) specifications remain
/// sampleable, while anything below `-tol` is rejected.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    factor: RMatrix,
    dim: usize,
}

impl GaussianSampler {
    pub fn new(stats: &SecondOrderStats) -> Result<Self, StatsError> {
        let d = stats.dim();
        let cov = real_composite_covariance(stats);
        let eigen = SymmetricEigen::new(cov);
        let max_eig = eigen.eigenvalues.iter().fold(0.0_f64, |a, &e| a.max(e.abs()));
        let tol = 1e-10 * max_eig.max(1.0);
        let mut scaled = eigen.eigenvectors.clone();
        for (k, &lambda) in eigen.eigenvalues.iter().enumerate() {
            if lambda < -tol {
                return Err(StatsError::NotPsd { min_eigenvalue: lambda });
            }
            let sqrt = lambda.max(0.0).sqrt();
            scaled.column_mut(k).scale_mut(sqrt);
        }
        Ok(Self { factor: scaled, dim: d })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// One draw using the provided generator.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> CVector {
        let normals = RVector::from_fn(2 * self.dim, |_, _| rng.sample(StandardNormal));
        let real = &self.factor * normals;
        CVector::from_fn(self.dim, |k, _| C64::new(real[k], real[self.dim + k]))
    }

    /// One draw addressed by an [`RngStream`] substream.
    pub fn sample_at(&self, stream: &RngStream, substream: u64) -> CVector {
        self.sample(&mut stream.substream(substream).rng())
    }
}

/// Joint second-order specification of the nodal observation noises: per-node
/// variances `σ²ᵢ` and pseudovariances `pᵢ` plus cross-node covariances
/// `r_{ik}` and pseudocovariances `u_{ik}`.
#[derive(Debug, Clone)]
pub struct NoiseSpec {
    stats: SecondOrderStats,
}

impl NoiseSpec {
    /// Builds the spec from per-node and cross terms. `cross_cov` and
    /// `cross_pseudo` supply the off-diagonal entries; diagonals are taken
    /// from `variances` and `pseudovariances`.
    pub fn from_parts(
        variances: &[f64],
        pseudovariances: &[C64],
        cross_cov: &CMatrix,
        cross_pseudo: &CMatrix,
    ) -> Result<Self, StatsError> {
        let n = variances.len();
        if pseudovariances.len() != n || cross_cov.shape() != (n, n) || cross_pseudo.shape() != (n, n)
        {
            return Err(StatsError::Algebra(AlgebraError::DimensionMismatch(
                "noise spec parts must agree on the node count".into(),
            )));
        }
        for (node, (&variance, pseudo)) in variances.iter().zip(pseudovariances).enumerate() {
            if variance <= 0.0 {
                return Err(StatsError::ZeroVariance { node });
            }
            if pseudo.norm() > variance * (1.0 + 1e-12) {
                return Err(StatsError::InfeasiblePseudovariance {
                    node,
                    variance,
                    pseudo_abs: pseudo.norm(),
                });
            }
        }
        let mut covariance = cross_cov.clone();
        let mut pseudocovariance = cross_pseudo.clone();
        for i in 0..n {
            covariance[(i, i)] = C64::new(variances[i], 0.0);
            pseudocovariance[(i, i)] = pseudovariances[i];
        }
        let stats = SecondOrderStats::new(covariance, pseudocovariance).map_err(|e| match e {
            AlgebraError::NotPsd { min_eigenvalue } => StatsError::NotPsd { min_eigenvalue },
            other => StatsError::Algebra(other),
        })?;
        Ok(Self { stats })
    }

    /// Spec with identical cross terms for every node pair.
    pub fn uniform_cross(
        variances: &[f64],
        pseudovariances: &[C64],
        cross_cov: C64,
        cross_pseudo: C64,
    ) -> Result<Self, StatsError> {
        let n = variances.len();
        // covariance is Hermitian (conjugate below the diagonal), the
        // pseudocovariance symmetric
        let r = CMatrix::from_fn(n, n, |i, k| {
            if i == k {
                C64::new(0.0, 0.0)
            } else if i < k {
                cross_cov
            } else {
                cross_cov.conj()
            }
        });
        let u =
            CMatrix::from_fn(n, n, |i, k| if i == k { C64::new(0.0, 0.0) } else { cross_pseudo });
        Self::from_parts(variances, pseudovariances, &r, &u)
    }

    /// Spec with independent nodes.
    pub fn independent(variances: &[f64], pseudovariances: &[C64]) -> Result<Self, StatsError> {
        Self::uniform_cross(variances, pseudovariances, C64::new(0.0, 0.0), C64::new(0.0, 0.0))
    }

    /// Scalar single-node spec.
    pub fn scalar(variance: f64, pseudovariance: C64) -> Result<Self, StatsError> {
        Self::independent(&[variance], &[pseudovariance])
    }

    pub fn nodes(&self) -> usize {
        self.stats.dim()
    }

    pub fn stats(&self) -> &SecondOrderStats {
        &self.stats
    }

    pub fn node_variance(&self, node: usize) -> f64 {
        self.stats.covariance()[(node, node)].re
    }

    pub fn node_pseudovariance(&self, node: usize) -> C64 {
        self.stats.pseudocovariance()[(node, node)]
    }

    pub fn cross_covariance(&self, i: usize, k: usize) -> C64 {
        self.stats.covariance()[(i, k)]
    }

    pub fn cross_pseudocovariance(&self, i: usize, k: usize) -> C64 {
        self.stats.pseudocovariance()[(i, k)]
    }

    /// True when every pseudo moment is (numerically) zero.
    pub fn is_circular(&self) -> bool {
        self.stats.pseudocovariance().iter().all(|z| z.norm() <= 1e-14)
    }

    /// True when any off-diagonal covariance or pseudocovariance is nonzero.
    pub fn has_cross_terms(&self) -> bool {
        let n = self.nodes();
        (0..n).any(|i| {
            (0..n).any(|k| {
                i != k
                    && (self.stats.covariance()[(i, k)].norm() > 1e-14
                        || self.stats.pseudocovariance()[(i, k)].norm() > 1e-14)
            })
        })
    }

    /// Covariance and pseudocovariance blocks for a node subset, in the
    /// given order.
    pub fn submatrices(&self, nodes: &[usize]) -> (CMatrix, CMatrix) {
        let m = nodes.len();
        let r = CMatrix::from_fn(m, m, |a, b| self.stats.covariance()[(nodes[a], nodes[b])]);
        let u = CMatrix::from_fn(m, m, |a, b| self.stats.pseudocovariance()[(nodes[a], nodes[b])]);
        (r, u)
    }

    pub fn sampler(&self) -> Result<GaussianSampler, StatsError> {
        GaussianSampler::new(&self.stats)
    }
}

/// One joint draw of the nodal noises described by `spec`.
pub fn sample_network_noise(spec: &NoiseSpec, rng: &RngStream) -> Result<CVector, StatsError> {
    Ok(spec.sampler()?.sample(&mut rng.rng()))
}

/// Moduli of the roots of the AR(2) characteristic polynomial
/// `λ² − a₁λ − a₂`.
fn ar2_root_moduli(a1: f64, a2: f64) -> (f64, f64) {
    let disc = C64::new(a1 * a1 + 4.0 * a2, 0.0).sqrt();
    let r1 = (C64::new(a1, 0.0) + disc) * 0.5;
    let r2 = (C64::new(a1, 0.0) - disc) * 0.5;
    (r1.norm(), r2.norm())
}

/// Generates a stationary complex AR(2) sequence
/// `z_n = a₁ z_{n−1} + a₂ z_{n−2} + u_n`, started from zeros with
/// [`AR_BURN_IN`] samples discarded. `driving` gives the scalar second-order
/// statistics of `u`; `None` selects the deterministic all-zeros path. The
/// draw at step `n` (1-based, counting from the start of the burn-in) uses
/// substream `n` of `rng`.
pub fn ar2_sequence(
    coeffs: (f64, f64),
    driving: Option<&SecondOrderStats>,
    length: usize,
    rng: &RngStream,
) -> Result<Vec<C64>, StatsError> {
    let (a1, a2) = coeffs;
    let (m1, m2) = ar2_root_moduli(a1, a2);
    let modulus = m1.max(m2);
    if modulus >= 1.0 - 1e-9 {
        return Err(StatsError::UnstableAr { root_modulus: modulus });
    }
    let sampler = match driving {
        Some(stats) => {
            if stats.dim() != 1 {
                return Err(StatsError::NotScalar { dim: stats.dim() });
            }
            if stats.covariance()[(0, 0)].re <= 0.0 {
                return Err(StatsError::ZeroVariance { node: 0 });
            }
            Some(GaussianSampler::new(stats)?)
        }
        None => None,
    };
    let a1 = C64::new(a1, 0.0);
    let a2 = C64::new(a2, 0.0);
    let total = AR_BURN_IN + length;
    let mut out = Vec::with_capacity(length);
    let mut prev1 = C64::new(0.0, 0.0);
    let mut prev2 = C64::new(0.0, 0.0);
    for n in 1..=total {
        let u = match &sampler {
            Some(s) => s.sample_at(rng, n as u64)[0],
            None => C64::new(0.0, 0.0),
        };
        let z = a1 * prev1 + a2 * prev2 + u;
        prev2 = prev1;
        prev1 = z;
        if n > AR_BURN_IN {
            out.push(z);
        }
    }
    Ok(out)
}

/// Empirical covariance `Σ v v^H / n` and pseudocovariance `Σ v v^T / n` of a
/// set of zero-mean draws.
pub fn empirical_second_order(draws: &[CVector]) -> (CMatrix, CMatrix) {
    assert!(!draws.is_empty(), "need at least one draw");
    let d = draws[0].len();
    let mut r = CMatrix::zeros(d, d);
    let mut u = CMatrix::zeros(d, d);
    for v in draws {
        r += v * v.adjoint();
        u += v * v.transpose();
    }
    let scale = C64::new(1.0 / draws.len() as f64, 0.0);
    (r * scale, u * scale)
}
