//! The diffusion Kalman filter family.
//!
//! Every variant runs the same schedule — predict, neighbourhood update,
//! diffuse — in one of three algebras:
//!
//! - strict complex (dimension L): the strictly-linear filter, which ignores
//!   pseudocovariances by construction;
//! - augmented complex (dimension 2L): the widely-linear filter acting on
//!   `[x; x*]`, which carries the full second-order description;
//! - real composite (dimension 2L): the dual bivariate filter acting on
//!   `[Re x; Im x]` with transported model matrices.
//!
//! The neighbourhood update comes in covariance form (stacked neighbourhood
//! observation with cross-correlated noise) or information form (per-node
//! information contributions, valid only for uncorrelated nodal noises).
//! Centralised variants stack the whole network into one filter and skip
//! diffusion; the non-cooperative variant runs per-node filters with
//! singleton neighbourhoods.
//!
//! `M` matrices follow the filter recursions but are not error covariances of
//! the diffused estimates (the diffusion step updates estimates only), so
//! diffusion leaves `M` untouched.

use crate::algebra::{
    augment_vector, build_augmented_cov, invert, real_cov_from_augmented, real_from_augmented,
    AlgebraError, AugmentedMatrix, CMatrix, CVector, SecondOrderStats, C64, CONDITION_LIMIT,
    STRUCTURAL_TOL,
};
use crate::model::{KnownInput, ModelError, StateSpaceModel};
use crate::network::{DiffusionWeights, NetworkTopology};
use nalgebra::{ComplexField, DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("innovation covariance is singular or ill-conditioned")]
    SingularInnovation(#[source] AlgebraError),
    #[error("filter M matrix is singular in the information form")]
    SingularM(#[source] AlgebraError),
    #[error(
        "the information form requires uncorrelated nodal observation noises \
         (block-diagonal neighbourhood covariance)"
    )]
    CrossCorrelatedNoise,
    #[error("diffusion weights are not column-stochastic over the neighbourhoods: {0}")]
    InvalidWeights(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

/// Scalar algebra a variant operates in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterAlgebra {
    /// Strictly-linear complex filter of dimension L.
    Strict,
    /// Widely-linear augmented complex filter of dimension 2L.
    Augmented,
    /// Dual bivariate real filter of dimension 2L.
    RealComposite,
}

/// Filter family member.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FilterVariant {
    /// Diffusion strictly-linear complex Kalman filter.
    Dckf,
    /// Diffusion augmented (widely-linear) complex Kalman filter.
    Dackf,
    /// Information form of the augmented diffusion filter (uncorrelated
    /// nodal noises only).
    DackfInfo,
    /// Information-form strictly-linear diffusion filter using per-node
    /// variances only; emulates diffusion filters that ignore both
    /// pseudocovariances and cross-node noise correlations.
    DckfInfo,
    /// Centralised strictly-linear filter over the full network stack.
    CentralCkf,
    /// Centralised augmented filter over the full network stack.
    CentralAckf,
    /// Dual bivariate real-valued diffusion filter.
    Drkf,
    /// Non-cooperative augmented filter: singleton neighbourhoods, no
    /// diffusion.
    Local,
}

impl FilterVariant {
    pub const ALL: [FilterVariant; 8] = [
        FilterVariant::Dckf,
        FilterVariant::Dackf,
        FilterVariant::DackfInfo,
        FilterVariant::DckfInfo,
        FilterVariant::CentralCkf,
        FilterVariant::CentralAckf,
        FilterVariant::Drkf,
        FilterVariant::Local,
    ];

    pub fn algebra(&self) -> FilterAlgebra {
        match self {
            FilterVariant::Dckf | FilterVariant::DckfInfo | FilterVariant::CentralCkf => {
                FilterAlgebra::Strict
            }
            FilterVariant::Dackf
            | FilterVariant::DackfInfo
            | FilterVariant::CentralAckf
            | FilterVariant::Local => FilterAlgebra::Augmented,
            FilterVariant::Drkf => FilterAlgebra::RealComposite,
        }
    }

    pub fn is_centralised(&self) -> bool {
        matches!(self, FilterVariant::CentralCkf | FilterVariant::CentralAckf)
    }

    pub fn uses_information_form(&self) -> bool {
        matches!(self, FilterVariant::DackfInfo | FilterVariant::DckfInfo)
    }

    /// Whether the variant runs a diffusion step.
    pub fn diffuses(&self) -> bool {
        !self.is_centralised() && !matches!(self, FilterVariant::Local)
    }

    pub fn name(&self) -> &'static str {
        match self {
            FilterVariant::Dckf => "dckf",
            FilterVariant::Dackf => "dackf",
            FilterVariant::DackfInfo => "dackf-info",
            FilterVariant::DckfInfo => "dckf-info",
            FilterVariant::CentralCkf => "central-ckf",
            FilterVariant::CentralAckf => "central-ackf",
            FilterVariant::Drkf => "drkf",
            FilterVariant::Local => "local",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == name)
    }
}

impl std::fmt::Display for FilterVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-node filter state in the variant's algebra: the (diffused) estimate
/// and the filter matrix `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFilterState<T: ComplexField<RealField = f64>> {
    pub estimate: DVector<T>,
    pub m: DMatrix<T>,
}

/// Predicted pair produced by [`predict`].
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedState<T: ComplexField<RealField = f64>> {
    pub estimate: DVector<T>,
    pub m: DMatrix<T>,
}

/// Prediction step with known input: `x̂ ← F x̂ + u`, `M ← F M F^H + Q`.
pub fn predict<T: ComplexField<RealField = f64>>(
    state: &NodeFilterState<T>,
    transition: &DMatrix<T>,
    process_cov: &DMatrix<T>,
    input: Option<&DVector<T>>,
) -> PredictedState<T> {
    let mut estimate = transition * &state.estimate;
    if let Some(u) = input {
        estimate += u;
    }
    let m = transition * &state.m * transition.adjoint() + process_cov;
    PredictedState { estimate, m }
}

fn hermitize<T: ComplexField<RealField = f64>>(m: &mut DMatrix<T>) {
    let sym = (&*m + m.adjoint()) * T::from_real(0.5);
    *m = sym;
}

/// Covariance-form neighbourhood update. Returns the non-diffused estimate,
/// its `M` matrix, and the gain.
///
/// `G = M H^H (H M H^H + R)⁻¹`; the `M` update uses the Joseph form
/// `(I − GH) M (I − GH)^H + G R G^H`, algebraically equal to `(I − GH) M`
/// for the optimal gain but robust to roundoff.
pub fn local_update<T: ComplexField<RealField = f64>>(
    predicted: &PredictedState<T>,
    stacked_h: &DMatrix<T>,
    stacked_r: &DMatrix<T>,
    stacked_obs: &DVector<T>,
) -> Result<(NodeFilterState<T>, DMatrix<T>), FilterError> {
    let innovation_cov = stacked_h * &predicted.m * stacked_h.adjoint() + stacked_r;
    let s_inv = invert(&innovation_cov, CONDITION_LIMIT).map_err(FilterError::SingularInnovation)?;
    let gain = &predicted.m * stacked_h.adjoint() * s_inv;
    let innovation = stacked_obs - stacked_h * &predicted.estimate;
    let estimate = &predicted.estimate + &gain * innovation;
    let closed = DMatrix::identity(predicted.m.nrows(), predicted.m.ncols()) - &gain * stacked_h;
    let mut m = &closed * &predicted.m * closed.adjoint()
        + &gain * stacked_r * gain.adjoint();
    hermitize(&mut m);
    Ok((NodeFilterState { estimate, m }, gain))
}

/// One information contribution: the observation matrix, noise covariance and
/// observation of a single node, all in the filter's algebra.
pub struct InfoContribution<'a, T: ComplexField<RealField = f64>> {
    pub h: &'a DMatrix<T>,
    pub r: &'a DMatrix<T>,
    pub obs: DVector<T>,
}

/// Information-form update: accumulates `S = Σ H_k^H R_k⁻¹ H_k` and
/// `r = Σ H_k^H R_k⁻¹ y_k` over the contributions, then
/// `M⁻¹ ← M_pred⁻¹ + S` and `x̂ ← x̂_pred + M (r − S x̂_pred)`.
/// The accumulation is order-independent up to roundoff; an empty
/// contribution set returns the prediction unchanged.
pub fn info_update<T: ComplexField<RealField = f64>>(
    predicted: &PredictedState<T>,
    contributions: &[InfoContribution<'_, T>],
) -> Result<NodeFilterState<T>, FilterError> {
    let dim = predicted.m.nrows();
    let mut s = DMatrix::<T>::zeros(dim, dim);
    let mut r_acc = DVector::<T>::zeros(dim);
    for contribution in contributions {
        let r_inv = invert(contribution.r, CONDITION_LIMIT).map_err(FilterError::SingularM)?;
        let weighted = contribution.h.adjoint() * r_inv;
        s += &weighted * contribution.h;
        r_acc += &weighted * &contribution.obs;
    }
    let m_pred_inv = invert(&predicted.m, CONDITION_LIMIT).map_err(FilterError::SingularM)?;
    let mut m = invert(&(m_pred_inv + &s), CONDITION_LIMIT).map_err(FilterError::SingularM)?;
    hermitize(&mut m);
    let estimate = &predicted.estimate + &m * (r_acc - &s * &predicted.estimate);
    Ok(NodeFilterState { estimate, m })
}

/// Diffusion step: convex combination of non-diffused neighbourhood
/// estimates, `x̂_i = Σ_k c_{k,i} x̲̂_k`. `M` is not updated by diffusion.
pub fn diffuse<T: ComplexField<RealField = f64>>(
    local_estimates: &[DVector<T>],
    column: &[(usize, f64)],
) -> DVector<T> {
    let dim = local_estimates[0].len();
    let mut out = DVector::<T>::zeros(dim);
    for &(k, weight) in column {
        out += &local_estimates[k] * T::from_real(weight);
    }
    out
}

/// Filter initialisation: prior mean and second-order prior statistics of
/// `x₀` (used to form `M₀` in each algebra).
#[derive(Debug, Clone)]
pub struct FilterInit {
    pub mean: CVector,
    pub prior: SecondOrderStats,
}

impl FilterInit {
    /// Zero mean with a diffuse circular prior `M₀ = scale·I`.
    pub fn diffuse(state_dim: usize, scale: f64) -> Self {
        let cov = CMatrix::identity(state_dim, state_dim) * C64::new(scale, 0.0);
        Self {
            mean: CVector::zeros(state_dim),
            prior: SecondOrderStats::circular(cov).expect("scaled identity prior is valid"),
        }
    }
}

/// Default diffuse prior scale.
pub const DEFAULT_PRIOR_SCALE: f64 = 100.0;

// ---------------------------------------------------------------------------
// prepared engines
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum PreparedInput<T: ComplexField<RealField = f64>> {
    Zero,
    Constant(DVector<T>),
    PerStep(Vec<DVector<T>>),
}

impl<T: ComplexField<RealField = f64>> PreparedInput<T> {
    fn at(&self, step: usize) -> Result<Option<&DVector<T>>, FilterError> {
        match self {
            PreparedInput::Zero => Ok(None),
            PreparedInput::Constant(u) => Ok(Some(u)),
            PreparedInput::PerStep(seq) => seq.get(step - 1).map(Some).ok_or_else(|| {
                FilterError::DimensionMismatch(format!(
                    "known-input sequence exhausted at step {step}"
                ))
            }),
        }
    }
}

#[derive(Debug, Clone)]
enum UnitKind<T: ComplexField<RealField = f64>> {
    Covariance {
        h: DMatrix<T>,
        r: DMatrix<T>,
    },
    Information {
        member_h: Vec<DMatrix<T>>,
        /// Precomputed information weights `H_k^H R_k⁻¹`.
        member_w: Vec<DMatrix<T>>,
        /// Constant information sum `Σ_k H_k^H R_k⁻¹ H_k`.
        s: DMatrix<T>,
    },
}

impl<T: ComplexField<RealField = f64>> UnitKind<T> {
    fn information(
        member_h: Vec<DMatrix<T>>,
        member_r: Vec<DMatrix<T>>,
        state_dim: usize,
    ) -> Result<Self, FilterError> {
        let mut member_w = Vec::with_capacity(member_h.len());
        let mut s = DMatrix::<T>::zeros(state_dim, state_dim);
        for (h_k, r_k) in member_h.iter().zip(&member_r) {
            let r_inv = invert(r_k, CONDITION_LIMIT).map_err(FilterError::SingularM)?;
            let w = h_k.adjoint() * r_inv;
            s += &w * h_k;
            member_w.push(w);
        }
        Ok(UnitKind::Information { member_h, member_w, s })
    }
}

/// One filtering unit: a node's neighbourhood filter, or the single central
/// filter. `members` lists the raw nodes feeding it, in stacking order.
#[derive(Debug, Clone)]
struct Unit<T: ComplexField<RealField = f64>> {
    members: Vec<usize>,
    kind: UnitKind<T>,
}

#[derive(Debug, Clone)]
struct Engine<T: ComplexField<RealField = f64>> {
    transition: DMatrix<T>,
    process_cov: DMatrix<T>,
    input: PreparedInput<T>,
    units: Vec<Unit<T>>,
    /// Column lists of the diffusion weights, `None` for central/local.
    diffusion: Option<Vec<Vec<(usize, f64)>>>,
    states: Vec<NodeFilterState<T>>,
    step: usize,
}

impl<T: ComplexField<RealField = f64>> Engine<T> {
    /// Advances the data-independent part of the step: M recursions and
    /// gains (covariance form) or posterior M (information form).
    fn advance_matrices(&mut self, input: Option<&DVector<T>>) -> Result<Vec<StepGain<T>>, FilterError> {
        let mut gains = Vec::with_capacity(self.units.len());
        for (idx, unit) in self.units.iter().enumerate() {
            let state = &self.states[idx];
            let pred = predict(state, &self.transition, &self.process_cov, input);
            match &unit.kind {
                UnitKind::Covariance { h, r } => {
                    let innovation_cov = h * &pred.m * h.adjoint() + r;
                    let s_inv = invert(&innovation_cov, CONDITION_LIMIT)
                        .map_err(FilterError::SingularInnovation)?;
                    let gain = &pred.m * h.adjoint() * s_inv;
                    let closed =
                        DMatrix::identity(pred.m.nrows(), pred.m.ncols()) - &gain * h;
                    let mut m = &closed * &pred.m * closed.adjoint() + &gain * r * gain.adjoint();
                    hermitize(&mut m);
                    self.states[idx].m = m;
                    gains.push(StepGain::Covariance(gain));
                }
                UnitKind::Information { s, .. } => {
                    let m_pred_inv =
                        invert(&pred.m, CONDITION_LIMIT).map_err(FilterError::SingularM)?;
                    let mut m = invert(&(m_pred_inv + s), CONDITION_LIMIT)
                        .map_err(FilterError::SingularM)?;
                    hermitize(&mut m);
                    self.states[idx].m = m.clone();
                    gains.push(StepGain::Information { m_post: m });
                }
            }
        }
        Ok(gains)
    }

    /// Applies the estimate updates for one step given the per-unit gains,
    /// then diffuses.
    fn apply_estimates(
        &mut self,
        unit_obs: &[DVector<T>],
        gains: &[StepGain<T>],
        input: Option<&DVector<T>>,
    ) -> Result<(), FilterError> {
        let mut locals = Vec::with_capacity(self.units.len());
        for (idx, unit) in self.units.iter().enumerate() {
            let mut x_pred = &self.transition * &self.states[idx].estimate;
            if let Some(u) = input {
                x_pred += u;
            }
            let local = match (&unit.kind, &gains[idx]) {
                (UnitKind::Covariance { h, .. }, StepGain::Covariance(gain)) => {
                    let innovation = &unit_obs[idx] - h * &x_pred;
                    x_pred + gain * innovation
                }
                (
                    UnitKind::Information { member_w, s, .. },
                    StepGain::Information { m_post },
                ) => {
                    let dim = x_pred.len();
                    let mut r_acc = DVector::<T>::zeros(dim);
                    let k_obs = unit_obs[idx].len() / unit.members.len();
                    for (slot, w_k) in member_w.iter().enumerate() {
                        let y_k = unit_obs[idx].rows(slot * k_obs, k_obs);
                        r_acc.gemv(T::one(), w_k, &y_k, T::one());
                    }
                    &x_pred + m_post * (r_acc - s * &x_pred)
                }
                _ => unreachable!("gain kind matches unit kind by construction"),
            };
            locals.push(local);
        }
        match &self.diffusion {
            Some(columns) => {
                for (idx, column) in columns.iter().enumerate() {
                    self.states[idx].estimate = diffuse(&locals, column);
                }
            }
            None => {
                for (idx, local) in locals.into_iter().enumerate() {
                    self.states[idx].estimate = local;
                }
            }
        }
        Ok(())
    }

    fn step(&mut self, unit_obs: &[DVector<T>]) -> Result<(), FilterError> {
        if unit_obs.len() != self.units.len() {
            return Err(FilterError::DimensionMismatch(format!(
                "expected {} unit observations, got {}",
                self.units.len(),
                unit_obs.len()
            )));
        }
        self.step += 1;
        let input = self.input.at(self.step)?.cloned();
        let gains = self.advance_matrices(input.as_ref())?;
        self.apply_estimates(unit_obs, &gains, input.as_ref())
    }
}

#[derive(Debug, Clone)]
enum StepGain<T: ComplexField<RealField = f64>> {
    Covariance(DMatrix<T>),
    Information { m_post: DMatrix<T> },
}

// ---------------------------------------------------------------------------
// construction
// ---------------------------------------------------------------------------

/// Complex-side prepared quantities shared by all algebras before transport.
struct ComplexPrep {
    transition: CMatrix,
    process_cov_blocks: AugmentedMatrix,
    units: Vec<(Vec<usize>, CMatrix, CMatrix, CMatrix, CMatrix)>, // members, H̲, B̲, R̲, U̲
}

fn stacked_blocks(
    members: &[usize],
    model: &StateSpaceModel,
) -> (CMatrix, CMatrix, CMatrix, CMatrix) {
    let k = model.obs_dim();
    let l = model.state_dim();
    let m = members.len();
    let mut h = CMatrix::zeros(k * m, l);
    let mut b = CMatrix::zeros(k * m, l);
    for (slot, &node) in members.iter().enumerate() {
        h.view_mut((slot * k, 0), (k, l)).copy_from(&model.obs[node]);
        b.view_mut((slot * k, 0), (k, l)).copy_from(&model.conj_obs[node]);
    }
    let (r, u) = match &model.obs_noise {
        Some(spec) => spec.submatrices(members),
        None => (CMatrix::zeros(m, m), CMatrix::zeros(m, m)),
    };
    (h, b, r, u)
}

fn complex_prep(
    variant: FilterVariant,
    model: &StateSpaceModel,
    topology: &NetworkTopology,
) -> Result<ComplexPrep, FilterError> {
    model.validate()?;
    if topology.nodes() != model.num_nodes() {
        return Err(FilterError::DimensionMismatch(format!(
            "topology has {} nodes, model has {}",
            topology.nodes(),
            model.num_nodes()
        )));
    }
    let member_sets: Vec<Vec<usize>> = if variant.is_centralised() {
        vec![(0..model.num_nodes()).collect()]
    } else if matches!(variant, FilterVariant::Local) {
        (0..model.num_nodes()).map(|i| vec![i]).collect()
    } else {
        (0..model.num_nodes()).map(|i| topology.neighbourhood(i).to_vec()).collect()
    };
    if variant == FilterVariant::DackfInfo {
        if let Some(spec) = &model.obs_noise {
            if spec.has_cross_terms() {
                return Err(FilterError::CrossCorrelatedNoise);
            }
        }
    }
    let units = member_sets
        .into_iter()
        .map(|members| {
            let (h, b, r, u) = stacked_blocks(&members, model);
            (members, h, b, r, u)
        })
        .collect();
    let state_stats = model.state_noise_stats()?;
    let process_cov_blocks = AugmentedMatrix::from_blocks(
        state_stats.covariance().clone(),
        state_stats.pseudocovariance().clone(),
    )?;
    Ok(ComplexPrep { transition: model.transition.clone(), process_cov_blocks, units })
}

fn weight_columns(
    weights: &DiffusionWeights,
    topology: &NetworkTopology,
) -> Result<Vec<Vec<(usize, f64)>>, FilterError> {
    if weights.matrix().nrows() != topology.nodes() {
        return Err(FilterError::InvalidWeights(format!(
            "weight matrix is {}x{} for {} nodes",
            weights.matrix().nrows(),
            weights.matrix().ncols(),
            topology.nodes()
        )));
    }
    if weights.column_sum_deviation() > 1e-12 {
        return Err(FilterError::InvalidWeights(format!(
            "column sums deviate by {:.3e}",
            weights.column_sum_deviation()
        )));
    }
    let mut columns = Vec::with_capacity(topology.nodes());
    for i in 0..topology.nodes() {
        let column = weights.column(i);
        for &(k, w) in &column {
            if w < 0.0 {
                return Err(FilterError::InvalidWeights(format!("negative weight c[{k},{i}]")));
            }
            if !topology.neighbourhood(i).contains(&k) {
                return Err(FilterError::InvalidWeights(format!(
                    "weight c[{k},{i}] outside the neighbourhood of {i}"
                )));
            }
        }
        columns.push(column);
    }
    Ok(columns)
}

fn build_complex_engine(
    variant: FilterVariant,
    model: &StateSpaceModel,
    topology: &NetworkTopology,
    weights: &DiffusionWeights,
    init: &FilterInit,
) -> Result<Engine<C64>, FilterError> {
    let prep = complex_prep(variant, model, topology)?;
    let augmented = variant.algebra() == FilterAlgebra::Augmented;
    let l = model.state_dim();
    if init.mean.len() != l || init.prior.dim() != l {
        return Err(FilterError::DimensionMismatch(
            "filter init does not match the state dimension".into(),
        ));
    }

    let (transition, process_cov, init_mean, init_m) = if augmented {
        let f_aug =
            AugmentedMatrix::from_blocks(prep.transition.clone(), model.conj_transition.clone())?;
        (
            f_aug.materialize(),
            prep.process_cov_blocks.materialize(),
            augment_vector(&init.mean),
            build_augmented_cov(&init.prior)?.materialize(),
        )
    } else {
        (
            prep.transition.clone(),
            prep.process_cov_blocks.top_left().clone(),
            init.mean.clone(),
            init.prior.covariance().clone(),
        )
    };

    let units = prep
        .units
        .iter()
        .map(|(members, h, b, r, u)| {
            let kind = if variant.uses_information_form() {
                let k = model.obs_dim();
                let mut member_h = Vec::with_capacity(members.len());
                let mut member_r = Vec::with_capacity(members.len());
                for (slot, _) in members.iter().enumerate() {
                    let h_k = h.view((slot * k, 0), (k, h.ncols())).into_owned();
                    let b_k = b.view((slot * k, 0), (k, b.ncols())).into_owned();
                    let r_k = r.view((slot * k, slot * k), (k, k)).into_owned();
                    let u_k = u.view((slot * k, slot * k), (k, k)).into_owned();
                    if augmented {
                        member_h.push(AugmentedMatrix::from_blocks(h_k, b_k)?.materialize());
                        member_r.push(AugmentedMatrix::from_blocks(r_k, u_k)?.materialize());
                    } else {
                        member_h.push(h_k);
                        member_r.push(r_k);
                    }
                }
                let state_dim = if augmented { 2 * model.state_dim() } else { model.state_dim() };
                UnitKind::information(member_h, member_r, state_dim)?
            } else if augmented {
                UnitKind::Covariance {
                    h: AugmentedMatrix::from_blocks(h.clone(), b.clone())?.materialize(),
                    r: AugmentedMatrix::from_blocks(r.clone(), u.clone())?.materialize(),
                }
            } else {
                UnitKind::Covariance { h: h.clone(), r: r.clone() }
            };
            Ok(Unit { members: members.clone(), kind })
        })
        .collect::<Result<Vec<_>, FilterError>>()?;

    let input = match &model.known_input {
        KnownInput::Zero => PreparedInput::Zero,
        KnownInput::Constant(u) => {
            PreparedInput::Constant(if augmented { augment_vector(u) } else { u.clone() })
        }
        KnownInput::PerStep(seq) => PreparedInput::PerStep(
            seq.iter().map(|u| if augmented { augment_vector(u) } else { u.clone() }).collect(),
        ),
    };

    let diffusion =
        if variant.diffuses() { Some(weight_columns(weights, topology)?) } else { None };

    let states = vec![
        NodeFilterState { estimate: init_mean, m: init_m };
        units.len()
    ];
    Ok(Engine {
        transition,
        process_cov,
        input,
        units,
        diffusion,
        states,
        step: 0,
    })
}

/// Transported real engine built from the augmented complex engine of the
/// same model; every quantity is the exact image under the duality map.
fn build_real_engine(
    model: &StateSpaceModel,
    topology: &NetworkTopology,
    weights: &DiffusionWeights,
    init: &FilterInit,
) -> Result<Engine<f64>, FilterError> {
    let complex = build_complex_engine(FilterVariant::Dackf, model, topology, weights, init)?;
    let tol = STRUCTURAL_TOL.max(1e-8);
    let transition = real_from_augmented(&complex.transition, tol)?;
    let process_cov = real_cov_from_augmented(&complex.process_cov, tol)?;
    let units = complex
        .units
        .iter()
        .map(|unit| {
            let UnitKind::Covariance { h, r } = &unit.kind else {
                unreachable!("augmented diffusion engine is covariance-form")
            };
            Ok(Unit {
                members: unit.members.clone(),
                kind: UnitKind::Covariance {
                    h: real_from_augmented(h, tol)?,
                    r: real_cov_from_augmented(r, tol)?,
                },
            })
        })
        .collect::<Result<Vec<_>, FilterError>>()?;
    let to_real = |v: &CVector| -> DVector<f64> {
        let q = v.len() / 2;
        DVector::from_fn(2 * q, |idx, _| if idx < q { v[idx].re } else { v[idx - q].im })
    };
    let input = match &complex.input {
        PreparedInput::Zero => PreparedInput::Zero,
        PreparedInput::Constant(u) => PreparedInput::Constant(to_real(u)),
        PreparedInput::PerStep(seq) => PreparedInput::PerStep(seq.iter().map(to_real).collect()),
    };
    let init_m = real_cov_from_augmented(&complex.states[0].m, tol)?;
    let init_estimate = to_real(&complex.states[0].estimate);
    let states = vec![
        NodeFilterState { estimate: init_estimate, m: init_m };
        complex.units.len()
    ];
    Ok(Engine {
        transition,
        process_cov,
        input,
        units,
        diffusion: complex.diffusion.clone(),
        states,
        step: 0,
    })
}

// ---------------------------------------------------------------------------
// public network filter
// ---------------------------------------------------------------------------

enum EngineState {
    Complex(Engine<C64>),
    Real(Engine<f64>),
}

/// A network of per-node filters of one variant, stepped synchronously.
pub struct NetworkFilter {
    variant: FilterVariant,
    state_dim: usize,
    num_nodes: usize,
    obs_dim: usize,
    inner: EngineState,
}

impl NetworkFilter {
    pub fn new(
        variant: FilterVariant,
        model: &StateSpaceModel,
        topology: &NetworkTopology,
        weights: &DiffusionWeights,
        init: &FilterInit,
    ) -> Result<Self, FilterError> {
        let inner = match variant.algebra() {
            FilterAlgebra::RealComposite => {
                EngineState::Real(build_real_engine(model, topology, weights, init)?)
            }
            _ => EngineState::Complex(build_complex_engine(variant, model, topology, weights, init)?),
        };
        Ok(Self {
            variant,
            state_dim: model.state_dim(),
            num_nodes: model.num_nodes(),
            obs_dim: model.obs_dim(),
            inner,
        })
    }

    pub fn variant(&self) -> FilterVariant {
        self.variant
    }

    /// Executes one synchronous network step on the per-node raw
    /// observations: predict, neighbourhood (or information) update, then
    /// diffusion where the variant uses it.
    pub fn step(&mut self, observations: &[CVector]) -> Result<(), FilterError> {
        if observations.len() != self.num_nodes {
            return Err(FilterError::DimensionMismatch(format!(
                "expected {} observations, got {}",
                self.num_nodes,
                observations.len()
            )));
        }
        match &mut self.inner {
            EngineState::Complex(engine) => {
                let obs = complex_unit_obs(
                    &engine.units,
                    observations,
                    self.obs_dim,
                    self.variant.algebra() == FilterAlgebra::Augmented,
                );
                engine.step(&obs)
            }
            EngineState::Real(engine) => {
                let obs = real_unit_obs(&engine.units, observations, self.obs_dim);
                engine.step(&obs)
            }
        }
    }

    /// Current complex state estimates, one per node (centralised variants
    /// replicate the single shared estimate).
    pub fn estimates(&self) -> Vec<CVector> {
        let l = self.state_dim;
        let per_unit: Vec<CVector> = match &self.inner {
            EngineState::Complex(engine) => engine
                .states
                .iter()
                .map(|s| {
                    if self.variant.algebra() == FilterAlgebra::Augmented {
                        s.estimate.rows(0, l).into_owned()
                    } else {
                        s.estimate.clone()
                    }
                })
                .collect(),
            EngineState::Real(engine) => engine
                .states
                .iter()
                .map(|s| CVector::from_fn(l, |k, _| C64::new(s.estimate[k], s.estimate[l + k])))
                .collect(),
        };
        if self.variant.is_centralised() {
            vec![per_unit[0].clone(); self.num_nodes]
        } else {
            per_unit
        }
    }

    /// Raw per-unit states in the variant's algebra (complex variants only).
    pub fn complex_states(&self) -> Option<&[NodeFilterState<C64>]> {
        match &self.inner {
            EngineState::Complex(engine) => Some(&engine.states),
            EngineState::Real(_) => None,
        }
    }

    /// Raw per-unit states of the real composite variant.
    pub fn real_states(&self) -> Option<&[NodeFilterState<f64>]> {
        match &self.inner {
            EngineState::Real(engine) => Some(&engine.states),
            EngineState::Complex(_) => None,
        }
    }
}

fn stack_members(members: &[usize], observations: &[CVector], obs_dim: usize) -> CVector {
    let mut out = CVector::zeros(obs_dim * members.len());
    for (slot, &node) in members.iter().enumerate() {
        out.rows_mut(slot * obs_dim, obs_dim).copy_from(&observations[node]);
    }
    out
}

fn complex_unit_obs(
    units: &[Unit<C64>],
    observations: &[CVector],
    obs_dim: usize,
    augmented: bool,
) -> Vec<CVector> {
    units
        .iter()
        .map(|unit| match (&unit.kind, augmented) {
            // Information units consume member-major slices, so augment each
            // member observation in place: [y_k; y_k*] per member.
            (UnitKind::Information { .. }, true) => {
                let mut out = CVector::zeros(2 * obs_dim * unit.members.len());
                for (slot, &node) in unit.members.iter().enumerate() {
                    out.rows_mut(slot * 2 * obs_dim, obs_dim).copy_from(&observations[node]);
                    out.rows_mut(slot * 2 * obs_dim + obs_dim, obs_dim)
                        .copy_from(&observations[node].conjugate());
                }
                out
            }
            (_, true) => augment_vector(&stack_members(&unit.members, observations, obs_dim)),
            (_, false) => stack_members(&unit.members, observations, obs_dim),
        })
        .collect()
}

fn real_unit_obs(
    units: &[Unit<f64>],
    observations: &[CVector],
    obs_dim: usize,
) -> Vec<DVector<f64>> {
    units
        .iter()
        .map(|unit| {
            let stacked = stack_members(&unit.members, observations, obs_dim);
            let q = stacked.len();
            DVector::from_fn(2 * q, |idx, _| {
                if idx < q {
                    stacked[idx].re
                } else {
                    stacked[idx - q].im
                }
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// precomputed plans for Monte-Carlo runs
// ---------------------------------------------------------------------------

/// Relative Frobenius change below which the M recursion is considered
/// converged and gains are frozen.
const GAIN_FREEZE_TOL: f64 = 1e-13;
const GAIN_FREEZE_RUN: usize = 3;

struct Plan<T: ComplexField<RealField = f64>> {
    transition: DMatrix<T>,
    input: PreparedInput<T>,
    units: Vec<Unit<T>>,
    diffusion: Option<Vec<Vec<(usize, f64)>>>,
    init_estimate: DVector<T>,
    /// Per-step gains until convergence; steps beyond reuse the last entry.
    schedule: Vec<Vec<StepGain<T>>>,
}

enum PlanInner {
    Complex(Plan<C64>),
    Real(Plan<f64>),
}

/// Precomputed gain schedule for a (variant, model, topology, weights)
/// quadruple. The M recursions are data-independent for time-invariant
/// models, so they are run once here; trials then apply estimate updates
/// only, which is algebraically identical to stepping a [`NetworkFilter`].
pub struct FilterPlan {
    variant: FilterVariant,
    state_dim: usize,
    num_nodes: usize,
    obs_dim: usize,
    inner: PlanInner,
}

fn build_plan<T: ComplexField<RealField = f64>>(
    mut engine: Engine<T>,
    horizon: usize,
) -> Result<Plan<T>, FilterError> {
    let mut schedule = Vec::new();
    let mut stable_run = 0usize;
    for step in 1..=horizon {
        let input = engine.input.at(step)?.cloned();
        let prev_m: Vec<DMatrix<T>> = engine.states.iter().map(|s| s.m.clone()).collect();
        let gains = engine.advance_matrices(input.as_ref())?;
        let mut max_rel = 0.0_f64;
        for (state, prev) in engine.states.iter().zip(&prev_m) {
            let denom = prev.norm().max(1e-300);
            max_rel = max_rel.max((state.m.clone() - prev).norm() / denom);
        }
        schedule.push(gains);
        // A constant known input does not affect M; freezing is only valid
        // when the input is also step-invariant beyond this point.
        let input_invariant = !matches!(engine.input, PreparedInput::PerStep(_));
        if input_invariant && max_rel < GAIN_FREEZE_TOL {
            stable_run += 1;
            if stable_run >= GAIN_FREEZE_RUN {
                break;
            }
        } else {
            stable_run = 0;
        }
    }
    Ok(Plan {
        transition: engine.transition,
        input: engine.input,
        units: engine.units,
        diffusion: engine.diffusion,
        init_estimate: engine.states[0].estimate.clone(),
        schedule,
    })
}

/// Per-trial output of a plan run: squared errors of the complex state
/// estimates against the true trajectory, plus the final complex error
/// vectors.
pub struct TrialErrors {
    /// `sq_err[(node, step-1)]`: squared Euclidean error of the complex
    /// estimate at that step.
    pub sq_err: DMatrix<f64>,
    /// Complex error vectors `x_n − x̂_{i,n|n}` at the final step.
    pub final_errors: Vec<CVector>,
}

impl FilterPlan {
    pub fn new(
        variant: FilterVariant,
        model: &StateSpaceModel,
        topology: &NetworkTopology,
        weights: &DiffusionWeights,
        init: &FilterInit,
        horizon: usize,
    ) -> Result<Self, FilterError> {
        let inner = match variant.algebra() {
            FilterAlgebra::RealComposite => {
                let engine = build_real_engine(model, topology, weights, init)?;
                PlanInner::Real(build_plan(engine, horizon)?)
            }
            _ => {
                let engine = build_complex_engine(variant, model, topology, weights, init)?;
                PlanInner::Complex(build_plan(engine, horizon)?)
            }
        };
        Ok(Self {
            variant,
            state_dim: model.state_dim(),
            num_nodes: model.num_nodes(),
            obs_dim: model.obs_dim(),
            inner,
        })
    }

    pub fn variant(&self) -> FilterVariant {
        self.variant
    }

    /// Runs the estimate recursions over a full observation record and
    /// scores squared errors against the true states (`truth[n]` is the state
    /// after step `n`, `truth[0]` the initial state).
    pub fn run_trial(
        &self,
        observations: &[Vec<CVector>],
        truth: &[CVector],
    ) -> Result<TrialErrors, FilterError> {
        let horizon = observations.len();
        let mut sq_err = DMatrix::<f64>::zeros(self.num_nodes, horizon);
        let mut final_errors = Vec::new();
        match &self.inner {
            PlanInner::Complex(plan) => {
                let augmented = self.variant.algebra() == FilterAlgebra::Augmented;
                let l = self.state_dim;
                let mut ws = TrialWorkspace::new(plan, self.obs_dim);
                for (n, raw) in observations.iter().enumerate() {
                    fill_complex_unit_obs(&plan.units, raw, self.obs_dim, augmented, &mut ws.unit_obs);
                    self.advance(plan, &mut ws, n)?;
                    let x = &truth[n + 1];
                    for node in 0..self.num_nodes {
                        let est = &ws.estimates[self.unit_of(node)];
                        let mut acc = 0.0;
                        for j in 0..l {
                            acc += (x[j] - est[j]).norm_sqr();
                        }
                        sq_err[(node, n)] = acc;
                        if n + 1 == horizon {
                            final_errors
                                .push(CVector::from_fn(l, |j, _| x[j] - est[j]));
                        }
                    }
                }
            }
            PlanInner::Real(plan) => {
                let l = self.state_dim;
                let mut ws = TrialWorkspace::new(plan, self.obs_dim);
                for (n, raw) in observations.iter().enumerate() {
                    fill_real_unit_obs(&plan.units, raw, self.obs_dim, &mut ws.unit_obs);
                    self.advance(plan, &mut ws, n)?;
                    let x = &truth[n + 1];
                    for node in 0..self.num_nodes {
                        let est = &ws.estimates[self.unit_of(node)];
                        let mut acc = 0.0;
                        for j in 0..l {
                            let dr = x[j].re - est[j];
                            let di = x[j].im - est[l + j];
                            acc += dr * dr + di * di;
                        }
                        sq_err[(node, n)] = acc;
                        if n + 1 == horizon {
                            final_errors.push(CVector::from_fn(l, |j, _| {
                                C64::new(x[j].re - est[j], x[j].im - est[l + j])
                            }));
                        }
                    }
                }
            }
        }
        Ok(TrialErrors { sq_err, final_errors })
    }

    /// Complex per-node estimates after every step.
    pub fn run_trial_estimates(
        &self,
        observations: &[Vec<CVector>],
    ) -> Result<Vec<Vec<CVector>>, FilterError> {
        let l = self.state_dim;
        let mut out = Vec::with_capacity(observations.len());
        match &self.inner {
            PlanInner::Complex(plan) => {
                let augmented = self.variant.algebra() == FilterAlgebra::Augmented;
                let mut ws = TrialWorkspace::new(plan, self.obs_dim);
                for (n, raw) in observations.iter().enumerate() {
                    fill_complex_unit_obs(&plan.units, raw, self.obs_dim, augmented, &mut ws.unit_obs);
                    self.advance(plan, &mut ws, n)?;
                    out.push(
                        (0..self.num_nodes)
                            .map(|node| {
                                ws.estimates[self.unit_of(node)].rows(0, l).into_owned()
                            })
                            .collect(),
                    );
                }
            }
            PlanInner::Real(plan) => {
                let mut ws = TrialWorkspace::new(plan, self.obs_dim);
                for (n, raw) in observations.iter().enumerate() {
                    fill_real_unit_obs(&plan.units, raw, self.obs_dim, &mut ws.unit_obs);
                    self.advance(plan, &mut ws, n)?;
                    out.push(
                        (0..self.num_nodes)
                            .map(|node| {
                                let est = &ws.estimates[self.unit_of(node)];
                                CVector::from_fn(l, |j, _| C64::new(est[j], est[l + j]))
                            })
                            .collect(),
                    );
                }
            }
        }
        Ok(out)
    }

    fn unit_of(&self, node: usize) -> usize {
        if self.variant.is_centralised() {
            0
        } else {
            node
        }
    }

    fn advance<T: ComplexField<RealField = f64>>(
        &self,
        plan: &Plan<T>,
        ws: &mut TrialWorkspace<T>,
        step_index: usize,
    ) -> Result<(), FilterError> {
        let gains = &plan.schedule[step_index.min(plan.schedule.len() - 1)];
        let input = plan.input.at(step_index + 1)?;
        apply_plan_step(plan, ws, gains, input)
    }
}

/// Reusable per-trial buffers; sized once, written in place every step.
struct TrialWorkspace<T: ComplexField<RealField = f64>> {
    estimates: Vec<DVector<T>>,
    locals: Vec<DVector<T>>,
    unit_obs: Vec<DVector<T>>,
    innovation: Vec<DVector<T>>,
    x_pred: DVector<T>,
    r_acc: DVector<T>,
    s_x: DVector<T>,
}

fn unit_obs_len<T: ComplexField<RealField = f64>>(unit: &Unit<T>) -> usize {
    match &unit.kind {
        UnitKind::Covariance { h, .. } => h.nrows(),
        UnitKind::Information { member_h, .. } => {
            member_h.len() * member_h.first().map_or(0, |h| h.nrows())
        }
    }
}

impl<T: ComplexField<RealField = f64>> TrialWorkspace<T> {
    fn new(plan: &Plan<T>, _obs_dim: usize) -> Self {
        let dim = plan.init_estimate.len();
        Self {
            estimates: vec![plan.init_estimate.clone(); plan.units.len()],
            locals: vec![DVector::zeros(dim); plan.units.len()],
            unit_obs: plan.units.iter().map(|u| DVector::zeros(unit_obs_len(u))).collect(),
            innovation: plan.units.iter().map(|u| DVector::zeros(unit_obs_len(u))).collect(),
            x_pred: DVector::zeros(dim),
            r_acc: DVector::zeros(dim),
            s_x: DVector::zeros(dim),
        }
    }
}

fn fill_complex_unit_obs(
    units: &[Unit<C64>],
    observations: &[CVector],
    obs_dim: usize,
    augmented: bool,
    buffers: &mut [CVector],
) {
    for (unit, buf) in units.iter().zip(buffers) {
        let members = &unit.members;
        match (&unit.kind, augmented) {
            // member-major augmented layout [y_k; y_k*] per member
            (UnitKind::Information { .. }, true) => {
                for (slot, &node) in members.iter().enumerate() {
                    for r in 0..obs_dim {
                        let y = observations[node][r];
                        buf[slot * 2 * obs_dim + r] = y;
                        buf[slot * 2 * obs_dim + obs_dim + r] = y.conj();
                    }
                }
            }
            (_, true) => {
                let half = obs_dim * members.len();
                for (slot, &node) in members.iter().enumerate() {
                    for r in 0..obs_dim {
                        let y = observations[node][r];
                        buf[slot * obs_dim + r] = y;
                        buf[half + slot * obs_dim + r] = y.conj();
                    }
                }
            }
            (_, false) => {
                for (slot, &node) in members.iter().enumerate() {
                    for r in 0..obs_dim {
                        buf[slot * obs_dim + r] = observations[node][r];
                    }
                }
            }
        }
    }
}

fn fill_real_unit_obs(
    units: &[Unit<f64>],
    observations: &[CVector],
    obs_dim: usize,
    buffers: &mut [DVector<f64>],
) {
    for (unit, buf) in units.iter().zip(buffers) {
        let members = &unit.members;
        let half = obs_dim * members.len();
        for (slot, &node) in members.iter().enumerate() {
            for r in 0..obs_dim {
                let y = observations[node][r];
                buf[slot * obs_dim + r] = y.re;
                buf[half + slot * obs_dim + r] = y.im;
            }
        }
    }
}

fn apply_plan_step<T: ComplexField<RealField = f64>>(
    plan: &Plan<T>,
    ws: &mut TrialWorkspace<T>,
    gains: &[StepGain<T>],
    input: Option<&DVector<T>>,
) -> Result<(), FilterError> {
    let one = T::one();
    let zero = T::zero();
    for (idx, unit) in plan.units.iter().enumerate() {
        ws.x_pred.gemv(one.clone(), &plan.transition, &ws.estimates[idx], zero.clone());
        if let Some(u) = input {
            ws.x_pred += u;
        }
        match (&unit.kind, &gains[idx]) {
            (UnitKind::Covariance { h, .. }, StepGain::Covariance(gain)) => {
                let innovation = &mut ws.innovation[idx];
                innovation.copy_from(&ws.unit_obs[idx]);
                innovation.gemv(-one.clone(), h, &ws.x_pred, one.clone());
                let local = &mut ws.locals[idx];
                local.copy_from(&ws.x_pred);
                local.gemv(one.clone(), gain, innovation, one.clone());
            }
            (UnitKind::Information { member_w, s, .. }, StepGain::Information { m_post }) => {
                let k_obs = unit_obs_len(unit) / unit.members.len();
                ws.r_acc.fill(zero.clone());
                for (slot, w_k) in member_w.iter().enumerate() {
                    let y_k = ws.unit_obs[idx].rows(slot * k_obs, k_obs);
                    ws.r_acc.gemv(one.clone(), w_k, &y_k, one.clone());
                }
                ws.s_x.gemv(one.clone(), s, &ws.x_pred, zero.clone());
                ws.r_acc -= &ws.s_x;
                let local = &mut ws.locals[idx];
                local.copy_from(&ws.x_pred);
                local.gemv(one.clone(), m_post, &ws.r_acc, one.clone());
            }
            _ => unreachable!("gain kind matches unit kind by construction"),
        }
    }
    match &plan.diffusion {
        Some(columns) => {
            for (idx, column) in columns.iter().enumerate() {
                let estimate = &mut ws.estimates[idx];
                estimate.fill(zero.clone());
                for &(k, weight) in column {
                    estimate.axpy(T::from_real(weight), &ws.locals[k], one.clone());
                }
            }
        }
        None => {
            for (idx, local) in ws.locals.iter().enumerate() {
                ws.estimates[idx].copy_from(local);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::simulate;
    use crate::network::random_geometric_topology;
    use crate::stats::{NoiseSpec, RngStream};
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn scalar(m: f64) -> DMatrix<C64> {
        DMatrix::from_element(1, 1, c(m, 0.0))
    }

    #[test]
    fn predict_identity_model_keeps_state() {
        let state = NodeFilterState {
            estimate: CVector::from_vec(vec![c(1.0, 2.0)]),
            m: scalar(3.0),
        };
        let pred = predict(&state, &CMatrix::identity(1, 1), &CMatrix::zeros(1, 1), None);
        assert_eq!(pred.estimate, state.estimate);
        assert_eq!(pred.m, state.m);
    }

    #[test]
    fn predict_scalar_m_propagation() {
        // F = 0.5, M = 1, Q = 2 -> M_pred = 0.25 + 2 = 2.25
        let state = NodeFilterState { estimate: CVector::zeros(1), m: scalar(1.0) };
        let pred = predict(&state, &scalar(0.5), &scalar(2.0), None);
        assert_relative_eq!(pred.m[(0, 0)].re, 2.25);
    }

    #[test]
    fn local_update_scalar_hand_computation() {
        // M_pred = 1, H = 1, R = 1, x_pred = 0, y = 2:
        // G = 1/(1+1) = 0.5, x = 0 + 0.5 * 2 = 1, M = 0.5
        let pred = PredictedState { estimate: CVector::zeros(1), m: scalar(1.0) };
        let y = CVector::from_vec(vec![c(2.0, 0.0)]);
        let (state, gain) =
            local_update(&pred, &scalar(1.0), &scalar(1.0), &y).unwrap();
        assert_relative_eq!(gain[(0, 0)].re, 0.5);
        assert_relative_eq!(state.estimate[0].re, 1.0);
        assert_relative_eq!(state.m[(0, 0)].re, 0.5, epsilon = 1e-14);
    }

    #[test]
    fn perfect_measurement_limit_returns_observation() {
        let pred = PredictedState {
            estimate: CVector::from_vec(vec![c(5.0, -1.0)]),
            m: scalar(10.0),
        };
        let y = CVector::from_vec(vec![c(2.0, 3.0)]);
        let (state, gain) = local_update(&pred, &scalar(1.0), &scalar(0.0), &y).unwrap();
        assert_relative_eq!(gain[(0, 0)].re, 1.0);
        assert!((state.estimate[0] - y[0]).norm() < 1e-12);
    }

    #[test]
    fn joseph_form_agrees_with_short_form() {
        let mut rng = StdRng::seed_from_u64(4);
        let dim = 3;
        let a = CMatrix::from_fn(dim, dim, |_, _| {
            c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let m_pred = &a * a.adjoint() + CMatrix::identity(dim, dim);
        let h = CMatrix::from_fn(2, dim, |_, _| {
            c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let r = CMatrix::identity(2, 2) * c(0.5, 0.0);
        let pred = PredictedState { estimate: CVector::zeros(dim), m: m_pred.clone() };
        let y = CVector::zeros(2);
        let (state, gain) = local_update(&pred, &h, &r, &y).unwrap();
        let short = (CMatrix::identity(dim, dim) - &gain * &h) * &m_pred;
        let dev = (&state.m - &short).iter().fold(0.0_f64, |acc, z| acc.max(z.norm()));
        assert!(dev < 1e-9, "Joseph vs short form deviation {dev}");
    }

    #[test]
    fn diffuse_examples() {
        let estimates = vec![
            CVector::from_vec(vec![c(1.0, 1.0)]),
            CVector::from_vec(vec![c(3.0, -1.0)]),
        ];
        // identity weights
        let own = diffuse(&estimates, &[(0, 1.0)]);
        assert_eq!(own[0], c(1.0, 1.0));
        // equal estimates are a fixed point
        let same = vec![CVector::from_vec(vec![c(2.0, 0.5)]); 3];
        let mixed = diffuse(&same, &[(0, 0.2), (1, 0.3), (2, 0.5)]);
        assert!((mixed[0] - c(2.0, 0.5)).norm() < 1e-15);
        // weighted average
        let avg = diffuse(&estimates, &[(0, 0.4), (1, 0.6)]);
        assert!((avg[0] - c(2.2, -0.2)).norm() < 1e-15);
    }

    #[test]
    fn info_update_with_no_observations_returns_prediction() {
        let pred = PredictedState {
            estimate: CVector::from_vec(vec![c(1.0, -2.0)]),
            m: scalar(4.0),
        };
        let state = info_update::<C64>(&pred, &[]).unwrap();
        assert!((state.estimate[0] - pred.estimate[0]).norm() < 1e-12);
        assert!((state.m[(0, 0)] - pred.m[(0, 0)]).norm() < 1e-10);
    }

    #[test]
    fn info_update_single_node_matches_local_update() {
        let pred = PredictedState {
            estimate: CVector::from_vec(vec![c(0.5, 0.5), c(-1.0, 0.0)]),
            m: CMatrix::identity(2, 2) * c(2.0, 0.0),
        };
        let h = CMatrix::from_row_slice(1, 2, &[c(1.0, 0.0), c(0.5, -0.5)]);
        let r = scalar(0.8);
        let y = CVector::from_vec(vec![c(1.5, -0.3)]);
        let (cov_state, _) = local_update(&pred, &h, &r, &y).unwrap();
        let info_state =
            info_update(&pred, &[InfoContribution { h: &h, r: &r, obs: y.clone() }]).unwrap();
        let dev = (&cov_state.estimate - &info_state.estimate)
            .iter()
            .fold(0.0_f64, |a, z| a.max(z.norm()));
        assert!(dev < 1e-10, "estimate deviation {dev}");
        let mdev =
            (&cov_state.m - &info_state.m).iter().fold(0.0_f64, |a, z| a.max(z.norm()));
        assert!(mdev < 1e-10, "M deviation {mdev}");
    }

    #[test]
    fn info_update_is_order_independent() {
        let pred = PredictedState {
            estimate: CVector::from_vec(vec![c(0.1, 0.2), c(0.3, -0.4)]),
            m: CMatrix::identity(2, 2) * c(3.0, 0.0),
        };
        let h1 = CMatrix::from_row_slice(1, 2, &[c(1.0, 0.0), c(0.0, 0.0)]);
        let h2 = CMatrix::from_row_slice(1, 2, &[c(0.0, 0.0), c(1.0, 0.5)]);
        let r1 = scalar(0.5);
        let r2 = scalar(1.5);
        let y1 = CVector::from_vec(vec![c(1.0, 1.0)]);
        let y2 = CVector::from_vec(vec![c(-0.5, 0.2)]);
        let forward = info_update(
            &pred,
            &[
                InfoContribution { h: &h1, r: &r1, obs: y1.clone() },
                InfoContribution { h: &h2, r: &r2, obs: y2.clone() },
            ],
        )
        .unwrap();
        let reverse = info_update(
            &pred,
            &[
                InfoContribution { h: &h2, r: &r2, obs: y2 },
                InfoContribution { h: &h1, r: &r1, obs: y1 },
            ],
        )
        .unwrap();
        let dev = (&forward.estimate - &reverse.estimate)
            .iter()
            .fold(0.0_f64, |a, z| a.max(z.norm()));
        assert!(dev < 1e-12);
    }

    // -- network-level tests ------------------------------------------------

    /// Strictly-linear AR(2) benchmark model over `nodes` nodes.
    fn ar2_network_model(nodes: usize, eta_state: f64, eta_obs: f64) -> StateSpaceModel {
        let f = CMatrix::from_row_slice(
            2,
            2,
            &[c(1.2, 0.0), c(-0.8, 0.0), c(1.0, 0.0), c(0.0, 0.0)],
        );
        let h = CMatrix::from_row_slice(1, 2, &[c(1.0, 0.0), c(0.0, 0.0)]);
        let variances: Vec<f64> = (1..=nodes).map(|i| 4.0 + 1.0 / (i as f64).sqrt()).collect();
        let pseudo: Vec<C64> = variances.iter().map(|v| c(eta_obs * v, 0.0)).collect();
        let spec = NoiseSpec::uniform_cross(
            &variances,
            &pseudo,
            c(4.0, 0.0),
            c(4.0 * eta_obs, 0.0),
        )
        .unwrap();
        StateSpaceModel::strictly_linear(
            f,
            vec![h; nodes],
            CMatrix::from_column_slice(2, 1, &[c(1.0, 0.0), c(0.0, 0.0)]),
            Some(SecondOrderStats::scalar(2.0, c(2.0 * eta_state, 0.0)).unwrap()),
            Some(spec),
            KnownInput::Zero,
            CVector::zeros(2),
        )
    }

    fn run_variant(
        variant: FilterVariant,
        model: &StateSpaceModel,
        topo: &NetworkTopology,
        weights: &DiffusionWeights,
        horizon: usize,
        seed: u64,
    ) -> Vec<Vec<CVector>> {
        let record = simulate(model, horizon, &RngStream::new(seed)).unwrap();
        let init = FilterInit::diffuse(model.state_dim(), DEFAULT_PRIOR_SCALE);
        let mut filter = NetworkFilter::new(variant, model, topo, weights, &init).unwrap();
        let mut out = Vec::with_capacity(horizon);
        for obs in &record.observations {
            filter.step(obs).unwrap();
            out.push(filter.estimates());
        }
        out
    }

    #[test]
    fn single_node_network_variants_coincide() {
        let model = ar2_network_model(1, 0.0, 0.0);
        let topo = NetworkTopology::from_edges(1, &[]).unwrap();
        let weights = DiffusionWeights::nearest_neighbour(&topo);
        let dckf = run_variant(FilterVariant::Dckf, &model, &topo, &weights, 60, 5);
        let central = run_variant(FilterVariant::CentralCkf, &model, &topo, &weights, 60, 5);
        let local = run_variant(FilterVariant::Local, &model, &topo, &weights, 60, 5);
        for n in 0..60 {
            assert!((&dckf[n][0] - &central[n][0]).norm() < 1e-10);
            assert!((&dckf[n][0] - &local[n][0]).norm() < 1e-10);
        }
    }

    #[test]
    fn circular_strictly_linear_dackf_equals_dckf() {
        let model = ar2_network_model(4, 0.0, 0.0);
        let topo = NetworkTopology::path(4).unwrap();
        let weights = DiffusionWeights::nearest_neighbour(&topo);
        let dckf = run_variant(FilterVariant::Dckf, &model, &topo, &weights, 100, 9);
        let dackf = run_variant(FilterVariant::Dackf, &model, &topo, &weights, 100, 9);
        let mut max_dev = 0.0_f64;
        for n in 0..100 {
            for i in 0..4 {
                max_dev = max_dev.max((&dckf[n][i] - &dackf[n][i]).norm());
            }
        }
        assert!(max_dev <= 1e-10, "max deviation {max_dev}");
    }

    #[test]
    fn noncircular_state_noise_separates_dackf_from_dckf() {
        let model = ar2_network_model(4, 0.5, 0.0);
        let topo = NetworkTopology::path(4).unwrap();
        let weights = DiffusionWeights::nearest_neighbour(&topo);
        let dckf = run_variant(FilterVariant::Dckf, &model, &topo, &weights, 100, 9);
        let dackf = run_variant(FilterVariant::Dackf, &model, &topo, &weights, 100, 9);
        let mut max_dev = 0.0_f64;
        for n in 0..100 {
            for i in 0..4 {
                max_dev = max_dev.max((&dckf[n][i] - &dackf[n][i]).norm());
            }
        }
        assert!(max_dev > 1e-3, "expected measurable divergence, got {max_dev}");
    }

    #[test]
    fn drkf_matches_transported_dackf() {
        let model = ar2_network_model(3, 0.6, 0.3);
        let topo = NetworkTopology::path(3).unwrap();
        let weights = DiffusionWeights::nearest_neighbour(&topo);
        let dackf = run_variant(FilterVariant::Dackf, &model, &topo, &weights, 80, 13);
        let drkf = run_variant(FilterVariant::Drkf, &model, &topo, &weights, 80, 13);
        let mut max_rel = 0.0_f64;
        for n in 0..80 {
            for i in 0..3 {
                let denom = dackf[n][i].norm().max(1e-9);
                max_rel = max_rel.max((&dackf[n][i] - &drkf[n][i]).norm() / denom);
            }
        }
        assert!(max_rel <= 1e-10, "max relative deviation {max_rel}");
    }

    #[test]
    fn info_form_matches_covariance_form_without_cross_correlations() {
        let mut model = ar2_network_model(4, 0.4, 0.5);
        // strip cross correlations, keep noncircular per-node noises
        let variances: Vec<f64> = (1..=4).map(|i| 4.0 + 1.0 / (i as f64).sqrt()).collect();
        let pseudo: Vec<C64> = variances.iter().map(|v| c(0.5 * v, 0.0)).collect();
        model.obs_noise = Some(NoiseSpec::independent(&variances, &pseudo).unwrap());
        let topo = NetworkTopology::path(4).unwrap();
        let weights = DiffusionWeights::nearest_neighbour(&topo);
        let dackf = run_variant(FilterVariant::Dackf, &model, &topo, &weights, 120, 3);
        let info = run_variant(FilterVariant::DackfInfo, &model, &topo, &weights, 120, 3);
        let mut max_dev = 0.0_f64;
        for n in 0..120 {
            for i in 0..4 {
                max_dev = max_dev.max((&dackf[n][i] - &info[n][i]).norm());
            }
        }
        assert!(max_dev <= 1e-8, "max deviation {max_dev}");
    }

    #[test]
    fn strict_info_form_matches_dckf_on_uncorrelated_circular_noises() {
        let mut model = ar2_network_model(4, 0.0, 0.0);
        let variances: Vec<f64> = (1..=4).map(|i| 4.0 + 1.0 / (i as f64).sqrt()).collect();
        model.obs_noise =
            Some(NoiseSpec::independent(&variances, &vec![c(0.0, 0.0); 4]).unwrap());
        let topo = NetworkTopology::path(4).unwrap();
        let weights = DiffusionWeights::nearest_neighbour(&topo);
        let dckf = run_variant(FilterVariant::Dckf, &model, &topo, &weights, 120, 31);
        let info = run_variant(FilterVariant::DckfInfo, &model, &topo, &weights, 120, 31);
        let mut max_dev = 0.0_f64;
        for n in 0..120 {
            for i in 0..4 {
                max_dev = max_dev.max((&dckf[n][i] - &info[n][i]).norm());
            }
        }
        assert!(max_dev <= 1e-8, "max deviation {max_dev}");
    }

    #[test]
    fn augmented_info_form_rejects_cross_correlated_noise() {
        let model = ar2_network_model(3, 0.0, 0.0);
        let topo = NetworkTopology::path(3).unwrap();
        let weights = DiffusionWeights::nearest_neighbour(&topo);
        let init = FilterInit::diffuse(2, DEFAULT_PRIOR_SCALE);
        assert!(matches!(
            NetworkFilter::new(FilterVariant::DackfInfo, &model, &topo, &weights, &init),
            Err(FilterError::CrossCorrelatedNoise)
        ));
    }

    #[test]
    fn m_matrices_stay_hermitian_psd_and_estimates_keep_conjugate_structure() {
        let model = ar2_network_model(4, 0.7, 0.4);
        let topo = NetworkTopology::path(4).unwrap();
        let weights = DiffusionWeights::nearest_neighbour(&topo);
        let record = simulate(&model, 150, &RngStream::new(2)).unwrap();
        let init = FilterInit::diffuse(2, DEFAULT_PRIOR_SCALE);
        let mut filter =
            NetworkFilter::new(FilterVariant::Dackf, &model, &topo, &weights, &init).unwrap();
        for obs in &record.observations {
            filter.step(obs).unwrap();
            for state in filter.complex_states().unwrap() {
                let m = &state.m;
                let herm_dev =
                    (m - m.adjoint()).iter().fold(0.0_f64, |a, z| a.max(z.norm()));
                let scale = m.iter().fold(0.0_f64, |a, z| a.max(z.norm())).max(1e-12);
                assert!(herm_dev <= 1e-9 * scale, "Hermitian deviation {herm_dev}");
                let min_eig = crate::algebra::hermitian_eigenvalues(m)[0];
                assert!(min_eig >= -1e-9 * scale, "min eigenvalue {min_eig}");
                let l = 2;
                let upper = state.estimate.rows(0, l).into_owned();
                let lower = state.estimate.rows(l, l).into_owned();
                let conj_dev = (lower - upper.conjugate())
                    .iter()
                    .fold(0.0_f64, |a, z| a.max(z.norm()));
                assert!(conj_dev <= 1e-10, "conjugate-pair deviation {conj_dev}");
            }
        }
    }

    #[test]
    fn node_permutation_permutes_trajectories() {
        let nodes = 5;
        let model = ar2_network_model(nodes, 0.5, 0.2);
        let topo = random_geometric_topology(nodes, 0.6, 3).unwrap();
        let weights = DiffusionWeights::nearest_neighbour(&topo);
        let horizon = 40;
        let record = simulate(&model, horizon, &RngStream::new(77)).unwrap();
        let init = FilterInit::diffuse(2, DEFAULT_PRIOR_SCALE);

        let perm = vec![2usize, 4, 1, 0, 3];
        let permuted_topo = topo.permuted(&perm).unwrap();
        let permuted_weights = DiffusionWeights::nearest_neighbour(&permuted_topo);
        let mut permuted_model = model.clone();
        // permute the observation-noise spec alongside the node relabelling
        let variances: Vec<f64> = {
            let mut v = vec![0.0; nodes];
            for i in 0..nodes {
                v[perm[i]] = model.obs_noise.as_ref().unwrap().node_variance(i);
            }
            v
        };
        let pseudo: Vec<C64> = {
            let mut v = vec![c(0.0, 0.0); nodes];
            for i in 0..nodes {
                v[perm[i]] = model.obs_noise.as_ref().unwrap().node_pseudovariance(i);
            }
            v
        };
        permuted_model.obs_noise = Some(
            NoiseSpec::uniform_cross(&variances, &pseudo, c(4.0, 0.0), c(4.0 * 0.2, 0.0)).unwrap(),
        );

        let mut filter =
            NetworkFilter::new(FilterVariant::Dackf, &model, &topo, &weights, &init).unwrap();
        let mut permuted_filter = NetworkFilter::new(
            FilterVariant::Dackf,
            &permuted_model,
            &permuted_topo,
            &permuted_weights,
            &init,
        )
        .unwrap();
        for obs in &record.observations {
            filter.step(obs).unwrap();
            let mut permuted_obs = vec![CVector::zeros(1); nodes];
            for i in 0..nodes {
                permuted_obs[perm[i]] = obs[i].clone();
            }
            permuted_filter.step(&permuted_obs).unwrap();
            let estimates = filter.estimates();
            let permuted_estimates = permuted_filter.estimates();
            for i in 0..nodes {
                let dev = (&estimates[i] - &permuted_estimates[perm[i]]).norm();
                assert!(dev < 1e-10, "node {i} deviation {dev}");
            }
        }
    }

    #[test]
    fn noiseless_tracking_converges_to_truth() {
        // Q = 0, tiny R, observable network: estimates converge to the state.
        let f = CMatrix::from_row_slice(
            2,
            2,
            &[c(0.9, 0.1), c(0.1, 0.0), c(-0.05, 0.0), c(0.95, 0.0)],
        );
        let h1 = CMatrix::from_row_slice(1, 2, &[c(1.0, 0.0), c(0.0, 0.0)]);
        let h2 = CMatrix::from_row_slice(1, 2, &[c(0.0, 0.0), c(1.0, 0.0)]);
        let spec = NoiseSpec::independent(&[1e-9, 1e-9], &[c(0.0, 0.0); 2]).unwrap();
        let model = StateSpaceModel::strictly_linear(
            f,
            vec![h1, h2],
            CMatrix::identity(2, 2),
            None,
            Some(spec),
            KnownInput::Zero,
            CVector::from_vec(vec![c(1.0, -0.5), c(0.3, 0.8)]),
        );
        let topo = NetworkTopology::complete(2).unwrap();
        let weights = DiffusionWeights::uniform(&topo);
        let record = simulate(&model, 60, &RngStream::new(1)).unwrap();
        let init = FilterInit::diffuse(2, DEFAULT_PRIOR_SCALE);
        let mut filter =
            NetworkFilter::new(FilterVariant::Dackf, &model, &topo, &weights, &init).unwrap();
        for obs in &record.observations {
            filter.step(obs).unwrap();
        }
        let estimates = filter.estimates();
        for i in 0..2 {
            let err = (&estimates[i] - &record.states[60]).norm();
            assert!(err < 1e-3, "node {i} error {err}");
        }
    }

    #[test]
    fn plan_reproduces_network_filter_trajectories() {
        for variant in [
            FilterVariant::Dckf,
            FilterVariant::Dackf,
            FilterVariant::DckfInfo,
            FilterVariant::CentralAckf,
            FilterVariant::Drkf,
            FilterVariant::Local,
        ] {
            let mut model = ar2_network_model(4, 0.5, 0.3);
            if variant == FilterVariant::DckfInfo {
                // keep the emulation scenario: it ignores cross terms anyway
                model = ar2_network_model(4, 0.5, 0.0);
            }
            let topo = NetworkTopology::path(4).unwrap();
            let weights = DiffusionWeights::nearest_neighbour(&topo);
            let horizon = 70;
            let record = simulate(&model, horizon, &RngStream::new(19)).unwrap();
            let init = FilterInit::diffuse(2, DEFAULT_PRIOR_SCALE);
            let plan =
                FilterPlan::new(variant, &model, &topo, &weights, &init, horizon).unwrap();
            let plan_estimates = plan.run_trial_estimates(&record.observations).unwrap();
            let mut filter =
                NetworkFilter::new(variant, &model, &topo, &weights, &init).unwrap();
            for (n, obs) in record.observations.iter().enumerate() {
                filter.step(obs).unwrap();
                let direct = filter.estimates();
                for i in 0..4 {
                    let dev = (&direct[i] - &plan_estimates[n][i]).norm();
                    assert!(dev <= 1e-10, "{variant} node {i} step {n}: deviation {dev}");
                }
            }
        }
    }

    #[test]
    fn plan_trial_errors_match_estimates() {
        let model = ar2_network_model(3, 0.2, 0.1);
        let topo = NetworkTopology::path(3).unwrap();
        let weights = DiffusionWeights::nearest_neighbour(&topo);
        let horizon = 30;
        let record = simulate(&model, horizon, &RngStream::new(4)).unwrap();
        let init = FilterInit::diffuse(2, DEFAULT_PRIOR_SCALE);
        let plan =
            FilterPlan::new(FilterVariant::Dackf, &model, &topo, &weights, &init, horizon)
                .unwrap();
        let errors = plan.run_trial(&record.observations, &record.states).unwrap();
        let estimates = plan.run_trial_estimates(&record.observations).unwrap();
        for n in 0..horizon {
            for i in 0..3 {
                let expected = (&record.states[n + 1] - &estimates[n][i]).norm_squared();
                assert_relative_eq!(errors.sq_err[(i, n)], expected, epsilon = 1e-12);
            }
        }
    }
}
