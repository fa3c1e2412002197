//! Widely-linear distributed state-space models.
//!
//! The model is `x_n = F x_{n−1} + A x*_{n−1} + u_n + w_n` with per-node
//! observations `y_{i,n} = H_i x_n + B_i x*_n + v_{i,n}`. State noise enters
//! through an input matrix, `w_n = K_w η_n`, which covers both full-rank
//! state noise (`K_w = I`) and the scalar driving noise of the benchmark
//! scenarios. Setting `A = 0` and all `B_i = 0` recovers the strictly linear
//! model; the augmented representation stacks every quantity with its
//! conjugate so that filters see a strictly linear system of doubled
//! dimension.

use crate::algebra::{
    augment_vector, build_augmented_cov, AlgebraError, AugmentedMatrix, CMatrix, CVector,
    SecondOrderStats,
};
use crate::network::NetworkTopology;
use crate::stats::{GaussianSampler, NoiseSpec, RngStream, StatsError};
use thiserror::Error;

/// Stream tag for the state (driving) noise source within a trial.
pub const STATE_NOISE_TAG: u64 = 0;
/// Stream tag for the joint observation noise source within a trial.
pub const OBS_NOISE_TAG: u64 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("missing observation for node {node}")]
    MissingObservation { node: usize },
    #[error("per-node observations must be scalar when an observation noise spec is set")]
    VectorObservationNoise,
    #[error("known-input sequence has {len} entries, step {step} requested")]
    InputTooShort { len: usize, step: usize },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

/// Deterministic known input `u_n` added in the state recursion.
#[derive(Debug, Clone, PartialEq)]
pub enum KnownInput {
    Zero,
    Constant(CVector),
    /// One vector per step; index 0 is the input of step `n = 1`.
    PerStep(Vec<CVector>),
}

impl KnownInput {
    /// Input at step `n` (1-based).
    pub fn at(&self, step: usize) -> Result<Option<&CVector>, ModelError> {
        match self {
            KnownInput::Zero => Ok(None),
            KnownInput::Constant(u) => Ok(Some(u)),
            KnownInput::PerStep(seq) => seq
                .get(step - 1)
                .map(Some)
                .ok_or(ModelError::InputTooShort { len: seq.len(), step }),
        }
    }
}

/// Distributed widely-linear state-space model with time-invariant matrices.
#[derive(Debug, Clone)]
pub struct StateSpaceModel {
    /// State transition `F` (L×L).
    pub transition: CMatrix,
    /// Conjugate-state transition `A` (L×L); zero for strictly linear models.
    pub conj_transition: CMatrix,
    /// Per-node observation matrices `H_i` (K×L).
    pub obs: Vec<CMatrix>,
    /// Per-node conjugate-observation matrices `B_i` (K×L).
    pub conj_obs: Vec<CMatrix>,
    /// State-noise input matrix `K_w` (L×d); `w_n = K_w η_n`.
    pub noise_input: CMatrix,
    /// Statistics of the driving noise `η` (dimension d); `None` is the
    /// deterministic noiseless path.
    pub driving_noise: Option<SecondOrderStats>,
    /// Joint observation-noise specification across nodes (scalar per node);
    /// `None` is the noiseless path.
    pub obs_noise: Option<NoiseSpec>,
    /// Deterministic known input.
    pub known_input: KnownInput,
    /// Deterministic initial state `x₀`.
    pub initial_state: CVector,
}

impl StateSpaceModel {
    /// Strictly-linear model skeleton with zero conjugate matrices.
    pub fn strictly_linear(
        transition: CMatrix,
        obs: Vec<CMatrix>,
        noise_input: CMatrix,
        driving_noise: Option<SecondOrderStats>,
        obs_noise: Option<NoiseSpec>,
        known_input: KnownInput,
        initial_state: CVector,
    ) -> Self {
        let l = transition.nrows();
        let conj_obs = obs.iter().map(|h| CMatrix::zeros(h.nrows(), h.ncols())).collect();
        Self {
            conj_transition: CMatrix::zeros(l, l),
            conj_obs,
            transition,
            obs,
            noise_input,
            driving_noise,
            obs_noise,
            known_input,
            initial_state,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.transition.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.obs.first().map_or(0, |h| h.nrows())
    }

    pub fn num_nodes(&self) -> usize {
        self.obs.len()
    }

    /// `A = 0` and all `B_i = 0`.
    pub fn is_strictly_linear(&self) -> bool {
        self.conj_transition.iter().all(|z| z.norm() == 0.0)
            && self.conj_obs.iter().all(|b| b.iter().all(|z| z.norm() == 0.0))
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let l = self.state_dim();
        let k = self.obs_dim();
        let mismatch = |what: &str| Err(ModelError::DimensionMismatch(what.into()));
        if l == 0 || self.transition.ncols() != l {
            return mismatch("transition matrix must be square and non-empty");
        }
        if self.conj_transition.shape() != (l, l) {
            return mismatch("conjugate transition must match the state dimension");
        }
        if self.obs.is_empty() || self.conj_obs.len() != self.obs.len() {
            return mismatch("per-node observation matrices must be present for every node");
        }
        for (h, b) in self.obs.iter().zip(&self.conj_obs) {
            if h.shape() != (k, l) || b.shape() != (k, l) {
                return mismatch("observation matrices must share the K×L shape");
            }
        }
        if self.noise_input.nrows() != l {
            return mismatch("noise input matrix must have L rows");
        }
        if let Some(stats) = &self.driving_noise {
            if stats.dim() != self.noise_input.ncols() {
                return mismatch("driving noise dimension must match the noise input columns");
            }
        }
        if let Some(spec) = &self.obs_noise {
            if spec.nodes() != self.num_nodes() {
                return mismatch("observation noise spec must cover every node");
            }
            if k != 1 {
                return Err(ModelError::VectorObservationNoise);
            }
        }
        if self.initial_state.len() != l {
            return mismatch("initial state must have length L");
        }
        Ok(())
    }

    /// Second-order statistics of the state noise `w_n = K_w η_n`, i.e.
    /// `(K_w R_η K_w^H, K_w P_η K_w^T)`. Zero statistics when noiseless.
    pub fn state_noise_stats(&self) -> Result<SecondOrderStats, ModelError> {
        let l = self.state_dim();
        match &self.driving_noise {
            Some(stats) => Ok(stats.transform(&self.noise_input)?),
            None => Ok(SecondOrderStats::with_tol(
                CMatrix::zeros(l, l),
                CMatrix::zeros(l, l),
                f64::INFINITY,
            )
            .expect("zero statistics are valid")),
        }
    }
}

/// Augmented representation of a [`StateSpaceModel`]: every matrix carries
/// the block-conjugate pattern by construction.
#[derive(Debug, Clone)]
pub struct AugmentedModel {
    /// `F^a = [[F, A], [A*, F*]]`.
    pub transition: AugmentedMatrix,
    /// Per-node `H^a_i = [[H_i, B_i], [B_i*, H_i*]]`.
    pub obs: Vec<AugmentedMatrix>,
    /// `Q^a = [[Q, P], [P*, Q*]]` of the state noise.
    pub state_noise_cov: AugmentedMatrix,
    /// Per-node `R^a_i = [[R_i, U_i], [U_i*, R_i*]]` of the observation noise.
    pub node_obs_noise_cov: Vec<AugmentedMatrix>,
    /// `x₀^a = [x₀^T, x₀^H]^T`.
    pub initial_state: CVector,
    known_input: KnownInput,
}

impl AugmentedModel {
    /// Augmented known input `[u^T, u^H]^T` at step `n` (1-based).
    pub fn input_at(&self, step: usize) -> Result<Option<CVector>, ModelError> {
        Ok(self.known_input.at(step)?.map(augment_vector))
    }
}

/// Builds the augmented representation, validating PSD of the noise blocks.
pub fn augment_model(model: &StateSpaceModel) -> Result<AugmentedModel, ModelError> {
    model.validate()?;
    let transition =
        AugmentedMatrix::from_blocks(model.transition.clone(), model.conj_transition.clone())?;
    let obs = model
        .obs
        .iter()
        .zip(&model.conj_obs)
        .map(|(h, b)| AugmentedMatrix::from_blocks(h.clone(), b.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let state_stats = model.state_noise_stats()?;
    let state_noise_cov = AugmentedMatrix::from_blocks(
        state_stats.covariance().clone(),
        state_stats.pseudocovariance().clone(),
    )?;
    let node_obs_noise_cov = match &model.obs_noise {
        Some(spec) => (0..spec.nodes())
            .map(|i| {
                let stats = SecondOrderStats::scalar(
                    spec.node_variance(i),
                    spec.node_pseudovariance(i),
                )?;
                Ok(build_augmented_cov(&stats)?)
            })
            .collect::<Result<Vec<_>, ModelError>>()?,
        None => (0..model.num_nodes())
            .map(|_| AugmentedMatrix::from_blocks(CMatrix::zeros(1, 1), CMatrix::zeros(1, 1)))
            .collect::<Result<Vec<_>, _>>()?,
    };
    Ok(AugmentedModel {
        transition,
        obs,
        state_noise_cov,
        node_obs_noise_cov,
        initial_state: augment_vector(&model.initial_state),
        known_input: model.known_input.clone(),
    })
}

/// Collective observation quantities of one neighbourhood: vertically stacked
/// observations and matrices in ascending node order, plus the neighbourhood
/// noise covariance and pseudocovariance blocks.
#[derive(Debug, Clone)]
pub struct NeighbourhoodObservation {
    /// Ascending node ids of the neighbourhood.
    pub nodes: Vec<usize>,
    /// `y̲_i`: stacked observation vector.
    pub stacked_obs: CVector,
    /// `H̲_i`: stacked observation matrix.
    pub stacked_h: CMatrix,
    /// `B̲_i`: stacked conjugate-observation matrix.
    pub stacked_b: CMatrix,
    /// `R̲_i`: neighbourhood noise covariance.
    pub noise_cov: CMatrix,
    /// `U̲_i`: neighbourhood noise pseudocovariance.
    pub noise_pseudo: CMatrix,
}

impl NeighbourhoodObservation {
    /// `y̲^a = [y̲^T, y̲^H]^T`.
    pub fn augmented_obs(&self) -> CVector {
        augment_vector(&self.stacked_obs)
    }

    /// `H̲^a = [[H̲, B̲], [B̲*, H̲*]]`.
    pub fn augmented_h(&self) -> AugmentedMatrix {
        AugmentedMatrix::from_blocks(self.stacked_h.clone(), self.stacked_b.clone())
            .expect("stacked blocks share a shape")
    }

    /// `R̲^a = [[R̲, U̲], [U̲*, R̲*]]`.
    pub fn augmented_noise_cov(&self) -> AugmentedMatrix {
        AugmentedMatrix::from_blocks(self.noise_cov.clone(), self.noise_pseudo.clone())
            .expect("noise blocks share a shape")
    }
}

/// Stacks the neighbourhood observation quantities of `node` at one step.
/// `observations[k]` holds the raw observation of node `k`; every member of
/// the neighbourhood must be present.
pub fn stack_neighbourhood(
    node: usize,
    topology: &NetworkTopology,
    model: &StateSpaceModel,
    observations: &[Option<CVector>],
) -> Result<NeighbourhoodObservation, ModelError> {
    let nodes = topology.neighbourhood(node).to_vec();
    let k = model.obs_dim();
    let l = model.state_dim();
    let m = nodes.len();
    let mut stacked_obs = CVector::zeros(k * m);
    let mut stacked_h = CMatrix::zeros(k * m, l);
    let mut stacked_b = CMatrix::zeros(k * m, l);
    for (slot, &member) in nodes.iter().enumerate() {
        let y = observations
            .get(member)
            .and_then(|o| o.as_ref())
            .ok_or(ModelError::MissingObservation { node: member })?;
        if y.len() != k {
            return Err(ModelError::DimensionMismatch(format!(
                "observation of node {member} has length {}, expected {k}",
                y.len()
            )));
        }
        stacked_obs.rows_mut(slot * k, k).copy_from(y);
        stacked_h.view_mut((slot * k, 0), (k, l)).copy_from(&model.obs[member]);
        stacked_b.view_mut((slot * k, 0), (k, l)).copy_from(&model.conj_obs[member]);
    }
    let (noise_cov, noise_pseudo) = match &model.obs_noise {
        Some(spec) => spec.submatrices(&nodes),
        None => (CMatrix::zeros(m, m), CMatrix::zeros(m, m)),
    };
    Ok(NeighbourhoodObservation {
        nodes,
        stacked_obs,
        stacked_h,
        stacked_b,
        noise_cov,
        noise_pseudo,
    })
}

/// Simulated trajectory: `states[0]` is `x₀`, `states[n]` the state after
/// step `n`; `observations[n-1][i]` is node `i`'s observation of `states[n]`.
#[derive(Debug, Clone)]
pub struct SimulationRecord {
    pub states: Vec<CVector>,
    pub observations: Vec<Vec<CVector>>,
}

/// Simulates `horizon` steps of the model. State noise at step `n` uses
/// substream `n` of `rng.child(STATE_NOISE_TAG)`, observation noise substream
/// `n` of `rng.child(OBS_NOISE_TAG)`, so noises are white across time and
/// independent across sources.
pub fn simulate(
    model: &StateSpaceModel,
    horizon: usize,
    rng: &RngStream,
) -> Result<SimulationRecord, ModelError> {
    model.validate()?;
    let state_sampler = match &model.driving_noise {
        Some(stats) => Some(GaussianSampler::new(stats)?),
        None => None,
    };
    let obs_sampler = match &model.obs_noise {
        Some(spec) => Some(spec.sampler()?),
        None => None,
    };
    let state_stream = rng.child(STATE_NOISE_TAG);
    let obs_stream = rng.child(OBS_NOISE_TAG);
    let widely_linear = !model.is_strictly_linear();

    let mut states = Vec::with_capacity(horizon + 1);
    let mut observations = Vec::with_capacity(horizon);
    states.push(model.initial_state.clone());
    let mut x = model.initial_state.clone();
    for n in 1..=horizon {
        let mut next = &model.transition * &x;
        if widely_linear {
            next += &model.conj_transition * x.conjugate();
        }
        if let Some(u) = model.known_input.at(n)? {
            next += u;
        }
        if let Some(sampler) = &state_sampler {
            next += &model.noise_input * sampler.sample_at(&state_stream, n as u64);
        }
        x = next;
        states.push(x.clone());

        let noise = obs_sampler.as_ref().map(|s| s.sample_at(&obs_stream, n as u64));
        let mut step_obs = Vec::with_capacity(model.num_nodes());
        for i in 0..model.num_nodes() {
            let mut y = &model.obs[i] * &x;
            if widely_linear {
                y += &model.conj_obs[i] * x.conjugate();
            }
            if let Some(v) = &noise {
                y[0] += v[i];
            }
            step_obs.push(y);
        }
        observations.push(step_obs);
    }
    Ok(SimulationRecord { states, observations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::C64;
    use crate::stats::ar2_sequence;
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn scalar_matrix(z: C64) -> CMatrix {
        CMatrix::from_element(1, 1, z)
    }

    /// AR(2) in companion form: state (z_n, z_{n−1}), scalar driving noise
    /// entering the first component, scalar observation of z_n per node.
    fn ar2_model(
        coeffs: (f64, f64),
        drive: Option<SecondOrderStats>,
        obs_noise: Option<NoiseSpec>,
        nodes: usize,
    ) -> StateSpaceModel {
        let f = CMatrix::from_row_slice(
            2,
            2,
            &[c(coeffs.0, 0.0), c(coeffs.1, 0.0), c(1.0, 0.0), c(0.0, 0.0)],
        );
        let h = CMatrix::from_row_slice(1, 2, &[c(1.0, 0.0), c(0.0, 0.0)]);
        StateSpaceModel::strictly_linear(
            f,
            vec![h; nodes],
            CMatrix::from_column_slice(2, 1, &[c(1.0, 0.0), c(0.0, 0.0)]),
            drive,
            obs_noise,
            KnownInput::Zero,
            CVector::zeros(2),
        )
    }

    /// Constant-velocity ballistic model: state (position, velocity) in the
    /// complex plane, gravity as a known input.
    fn projectile_model(noise: bool) -> StateSpaceModel {
        let t = 0.05;
        let g = 9.8;
        let f = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(t, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
        let kv = CMatrix::from_column_slice(2, 1, &[c(t * t / 2.0, 0.0), c(t, 0.0)]);
        let input = CVector::from_vec(vec![c(0.0, -g * t * t / 2.0), c(0.0, -g * t)]);
        let h = CMatrix::from_row_slice(1, 2, &[c(1.0, 0.0), c(0.0, 0.0)]);
        let drive = if noise {
            Some(SecondOrderStats::scalar(5.0, c(4.25, 0.0)).unwrap())
        } else {
            None
        };
        StateSpaceModel::strictly_linear(
            f,
            vec![h; 4],
            kv,
            drive,
            None,
            KnownInput::Constant(input),
            CVector::from_vec(vec![c(0.0, 0.0), c(20.0, 10.0)]),
        )
    }

    #[test]
    fn strictly_linear_augmentation_is_block_diagonal() {
        let model = ar2_model((1.2, -0.8), None, None, 2);
        let aug = augment_model(&model).unwrap();
        assert!(aug.transition.top_right().iter().all(|z| z.norm() == 0.0));
        for h in &aug.obs {
            assert!(h.top_right().iter().all(|z| z.norm() == 0.0));
        }
    }

    #[test]
    fn scalar_widely_linear_transition_blocks() {
        let mut model = ar2_model((0.5, 0.0), None, None, 1);
        model.transition = scalar_matrix(c(0.5, 0.0));
        model.conj_transition = scalar_matrix(c(0.1, 0.0));
        model.obs = vec![scalar_matrix(c(1.0, 0.0))];
        model.conj_obs = vec![scalar_matrix(c(0.0, 0.0))];
        model.noise_input = scalar_matrix(c(1.0, 0.0));
        model.initial_state = CVector::zeros(1);
        let aug = augment_model(&model).unwrap();
        let full = aug.transition.materialize();
        assert_eq!(full[(0, 0)], c(0.5, 0.0));
        assert_eq!(full[(0, 1)], c(0.1, 0.0));
        assert_eq!(full[(1, 0)], c(0.1, 0.0));
        assert_eq!(full[(1, 1)], c(0.5, 0.0));
    }

    #[test]
    fn state_noise_augmented_covariance_blocks() {
        let mut model = ar2_model((0.5, 0.0), None, None, 1);
        model.transition = scalar_matrix(c(0.5, 0.0));
        model.conj_transition = scalar_matrix(c(0.0, 0.0));
        model.obs = vec![scalar_matrix(c(1.0, 0.0))];
        model.conj_obs = vec![scalar_matrix(c(0.0, 0.0))];
        model.noise_input = scalar_matrix(c(1.0, 0.0));
        model.initial_state = CVector::zeros(1);
        model.driving_noise = Some(SecondOrderStats::scalar(2.0, c(1.7, 0.0)).unwrap());
        let aug = augment_model(&model).unwrap();
        let q = aug.state_noise_cov.materialize();
        assert_relative_eq!(q[(0, 0)].re, 2.0);
        assert_relative_eq!(q[(0, 1)].re, 1.7);
        assert_relative_eq!(q[(1, 0)].re, 1.7);
        assert_relative_eq!(q[(1, 1)].re, 2.0);
    }

    #[test]
    fn singleton_neighbourhood_stacks_to_node_local_quantities() {
        let spec = NoiseSpec::independent(&[3.0], &[c(1.0, 0.5)]).unwrap();
        let model = ar2_model((1.2, -0.8), None, Some(spec), 1);
        let topo = NetworkTopology::from_edges(1, &[]).unwrap();
        let obs = vec![Some(CVector::from_vec(vec![c(2.0, -1.0)]))];
        let stacked = stack_neighbourhood(0, &topo, &model, &obs).unwrap();
        assert_eq!(stacked.nodes, vec![0]);
        assert_eq!(stacked.stacked_obs[0], c(2.0, -1.0));
        assert_eq!(stacked.stacked_h, model.obs[0]);
        assert_eq!(stacked.noise_cov[(0, 0)], c(3.0, 0.0));
        assert_eq!(stacked.noise_pseudo[(0, 0)], c(1.0, 0.5));
    }

    #[test]
    fn two_node_neighbourhood_noise_blocks() {
        //

        // variances 4 + 1/sqrt(i) for 1-based i, cross-covariance 4
        let variances = [5.0, 4.0 + 1.0 / 2.0_f64.sqrt()];
        let spec = NoiseSpec::uniform_cross(&variances, &[c(0.0, 0.0); 2], c(4.0, 0.0), c(0.0, 0.0))
            .unwrap();
        let model = ar2_model((1.2, -0.8), None, Some(spec), 2);
        let topo = NetworkTopology::complete(2).unwrap();
        let obs = vec![
            Some(CVector::from_vec(vec![c(1.0, 0.0)])),
            Some(CVector::from_vec(vec![c(2.0, 0.0)])),
        ];
        let stacked = stack_neighbourhood(0, &topo, &model, &obs).unwrap();
        assert_relative_eq!(stacked.noise_cov[(0, 0)].re, 5.0);
        assert_relative_eq!(stacked.noise_cov[(0, 1)].re, 4.0);
        assert_relative_eq!(stacked.noise_cov[(1, 0)].re, 4.0);
        assert_relative_eq!(stacked.noise_cov[(1, 1)].re, 4.0 + 1.0 / 2.0_f64.sqrt());
    }

    #[test]
    fn uncorrelated_neighbourhood_noise_is_diagonal() {
        let spec = NoiseSpec::independent(&[1.0, 2.0, 3.0], &[c(0.0, 0.0); 3]).unwrap();
        let model = ar2_model((1.2, -0.8), None, Some(spec), 3);
        let topo = NetworkTopology::complete(3).unwrap();
        let obs: Vec<Option<CVector>> =
            (0..3).map(|_| Some(CVector::from_vec(vec![c(0.0, 0.0)]))).collect();
        let stacked = stack_neighbourhood(1, &topo, &model, &obs).unwrap();
        for i in 0..3 {
            for k in 0..3 {
                if i != k {
                    assert_eq!(stacked.noise_cov[(i, k)], c(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn missing_observation_is_reported() {
        let model = ar2_model((1.2, -0.8), None, None, 2);
        let topo = NetworkTopology::complete(2).unwrap();
        let obs = vec![Some(CVector::from_vec(vec![c(0.0, 0.0)])), None];
        assert!(matches!(
            stack_neighbourhood(0, &topo, &model, &obs),
            Err(ModelError::MissingObservation { node: 1 })
        ));
    }

    #[test]
    fn full_network_stack_equals_centralised_noise_spec() {
        let variances = [2.0, 3.0, 4.0];
        let spec =
            NoiseSpec::uniform_cross(&variances, &[c(0.5, 0.0); 3], c(0.8, 0.3), c(0.25, 0.0))
                .unwrap();
        let model = ar2_model((1.2, -0.8), None, Some(spec.clone()), 3);
        let topo = NetworkTopology::complete(3).unwrap();
        let obs: Vec<Option<CVector>> =
            (0..3).map(|i| Some(CVector::from_vec(vec![c(i as f64, 0.0)]))).collect();
        let stacked = stack_neighbourhood(0, &topo, &model, &obs).unwrap();
        assert_eq!(&stacked.noise_cov, spec.stats().covariance());
        assert_eq!(&stacked.noise_pseudo, spec.stats().pseudocovariance());
    }

    #[test]
    fn noiseless_identity_model_holds_state_constant() {
        let model = StateSpaceModel::strictly_linear(
            CMatrix::identity(2, 2),
            vec![CMatrix::from_row_slice(1, 2, &[c(1.0, 0.0), c(0.0, 0.0)])],
            CMatrix::identity(2, 2),
            None,
            None,
            KnownInput::Zero,
            CVector::from_vec(vec![c(1.0, 2.0), c(-3.0, 0.5)]),
        );
        let record = simulate(&model, 5, &RngStream::new(0)).unwrap();
        for state in &record.states {
            assert_eq!(state, &model.initial_state);
        }
    }

    #[test]
    fn noise_free_projectile_matches_ballistic_closed_form() {
        let model = projectile_model(false);
        let t = 0.05;
        let record = simulate(&model, 40, &RngStream::new(0)).unwrap();
        for (n, state) in record.states.iter().enumerate() {
            let time = n as f64 * t;
            let horizontal = 20.0 * time;
            let vertical = 10.0 * time - 4.9 * time * time;
            assert!((state[0].re - horizontal).abs() < 1e-9, "step {n}: {}", state[0].re);
            assert!((state[0].im - vertical).abs() < 1e-9, "step {n}: {}", state[0].im);
        }
    }

    #[test]
    fn companion_form_simulation_reproduces_ar2_sequence() {
        let drive = SecondOrderStats::scalar(2.0, c(1.0, 0.8)).unwrap();
        let model = ar2_model((1.2, -0.8), Some(drive.clone()), None, 1);
        let trial = RngStream::new(51).stream(9);
        let burn = crate::stats::AR_BURN_IN;
        let len = 64;
        let record = simulate(&model, burn + len, &trial).unwrap();
        let seq = ar2_sequence((1.2, -0.8), Some(&drive), len, &trial.child(STATE_NOISE_TAG))
            .unwrap();
        for (k, z) in seq.iter().enumerate() {
            let sim = record.states[burn + 1 + k][0];
            assert!((sim - z).norm() <= 1e-12 * z.norm().max(1.0), "k={k}: {sim} vs {z}");
        }
    }

    #[test]
    fn augmented_trajectory_satisfies_augmented_recursion() {
        // Widely-linear model: recover w_n from the strict recursion, then
        // check the augmented recursion reproduces the augmented state.
        let mut model = ar2_model((0.9, -0.2), None, None, 1);
        model.conj_transition =
            CMatrix::from_row_slice(2, 2, &[c(0.2, 0.1), c(0.0, 0.0), c(0.0, 0.0), c(0.1, -0.1)]);
        model.driving_noise = Some(SecondOrderStats::scalar(1.0, c(0.6, 0.2)).unwrap());
        model.known_input = KnownInput::Constant(CVector::from_vec(vec![c(0.1, -0.2), c(0.0, 0.0)]));
        let record = simulate(&model, 50, &RngStream::new(3)).unwrap();
        let aug = augment_model(&model).unwrap();
        let f_aug = aug.transition.materialize();
        for n in 1..record.states.len() {
            let prev = &record.states[n - 1];
            let curr = &record.states[n];
            let mut w = curr - &model.transition * prev - &model.conj_transition * prev.conjugate();
            if let Some(u) = model.known_input.at(n).unwrap() {
                w -= u;
            }
            let expected = &f_aug * augment_vector(prev)
                + aug.input_at(n).unwrap().unwrap()
                + augment_vector(&w);
            let dev = (augment_vector(curr) - expected)
                .iter()
                .fold(0.0_f64, |a, z| a.max(z.norm()));
            assert!(dev <= 1e-12, "step {n}: deviation {dev}");
        }
    }

    #[test]
    fn simulation_is_deterministic_per_stream() {
        let drive = SecondOrderStats::scalar(2.0, c(0.5, 0.0)).unwrap();
        let spec = NoiseSpec::uniform_cross(
            &[4.0, 4.5],
            &[c(1.0, 0.0), c(0.0, 0.0)],
            c(2.0, 0.0),
            c(0.5, 0.0),
        )
        .unwrap();
        let model = ar2_model((1.2, -0.8), Some(drive), Some(spec), 2);
        let rng = RngStream::new(8).stream(1);
        let a = simulate(&model, 32, &rng).unwrap();
        let b = simulate(&model, 32, &rng).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.observations, b.observations);
    }
}
