//! Theoretical performance analysis of the augmented diffusion filter.
//!
//! The diffused error of node `i` obeys a linear recursion in the joint error
//! vector of all nodes: with `T_k = (I − G_k H̲_k) F` and `W_k = I − G_k H̲_k`
//! (all quantities augmented),
//!
//! ```text
//! e̲_k,n = T_k e_{k,n−1} + W_k w_n − G_k v̲_k,n
//! e_i,n = Σ_{k∈N_i} c_{k,i} e̲_k,n
//! ```
//!
//! Because neighbourhoods overlap, the errors of different nodes are
//! cross-correlated; the propagation therefore tracks the full stacked
//! covariance over all `N` nodes (dimension `2LN`) and reads per-node blocks
//! `Σ_i` and cross blocks `Γ_jk` from it. Gains and `M` recursions are the
//! filter's own, run alongside. Per-node MSE is `tr(Σ_i)/2` — the augmented
//! trace double-counts the complex error power.

use crate::algebra::{
    build_augmented_cov, hermitian_eigenvalues, invert, AlgebraError, AugmentedMatrix, CMatrix,
    CVector, SecondOrderStats, C64, CONDITION_LIMIT,
};
use crate::filters::FilterError;
use crate::model::{ModelError, StateSpaceModel};
use crate::network::{DiffusionWeights, NetworkTopology};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("bias estimation needs at least {required} trials, got {got}")]
    InsufficientTrials { required: usize, got: usize },
    #[error("worst-node bound violated at node {node}: mse {mse} > bound {bound}")]
    BoundViolated { node: usize, mse: f64, bound: f64 },
    #[error("unsupported model for analysis: {0}")]
    UnsupportedModel(String),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

/// Joint second moment of the initial errors `e_{i,0} = x₀ − x̂_{i,0}`.
/// All nodes share the same initial error, so the stacked covariance has
/// identical blocks everywhere.
#[derive(Debug, Clone)]
pub enum InitialErrorCov {
    /// Deterministic `x₀` and zero initial estimates: blocks `x₀^a x₀^{aH}`.
    DeterministicState(CVector),
    /// Random `x₀` with known prior statistics and matching filter
    /// initialisation: blocks are the augmented prior covariance.
    SharedPrior(SecondOrderStats),
}

/// Options of [`propagate_covariance`].
#[derive(Debug, Clone)]
pub struct PropagationOptions {
    pub steps: usize,
    pub initial: InitialErrorCov,
    /// Scale of the filters' diffuse prior `M₀ = scale·I` (augmented).
    pub prior_scale: f64,
}

/// Output of [`propagate_covariance`].
#[derive(Debug, Clone)]
pub struct CovariancePropagation {
    /// Augmented state dimension per node (2L).
    pub block_dim: usize,
    /// `Σ^a_{i,n}` blocks: `sigma[n-1][i]`, each `2L×2L`.
    pub sigma: Vec<Vec<CMatrix>>,
    /// Per-node theoretical MSE `tr(Σ^a_i)/2` per step.
    pub node_mse: Vec<Vec<f64>>,
    /// Per-node non-diffused MSE `tr(Γ_kk)/2` per step.
    pub gamma_node_mse: Vec<Vec<f64>>,
    /// Per-node worst-neighbour bound `max_{k∈N_i} tr(Γ_kk)/2` per step.
    pub worst_node_bounds: Vec<Vec<f64>>,
    /// Full `Γ` matrix of the final step (2LN×2LN).
    pub final_gamma: CMatrix,
    /// Maximum entrywise disagreement between the stacked recursion and the
    /// weighted double-sum over `Γ` blocks, across all steps and nodes.
    pub route_disagreement: f64,
    /// First step index (1-based) after which the relative Frobenius change
    /// of every `Σ_i` stayed below 1e−8 for 5 consecutive steps.
    pub settling_index: Option<usize>,
}

impl CovariancePropagation {
    pub fn steps(&self) -> usize {
        self.sigma.len()
    }

    /// Per-node theoretical MSE at the final propagated step.
    pub fn final_node_mse(&self) -> &[f64] {
        self.node_mse.last().expect("at least one step propagated")
    }

    pub fn final_worst_node_bounds(&self) -> &[f64] {
        self.worst_node_bounds.last().expect("at least one step propagated")
    }
}

const SETTLING_TOL: f64 = 1e-8;
const SETTLING_RUN: usize = 5;

/// Exactly propagates the joint error covariance of the augmented diffusion
/// filter over `options.steps` steps.
pub fn propagate_covariance(
    model: &StateSpaceModel,
    topology: &NetworkTopology,
    weights: &DiffusionWeights,
    options: &PropagationOptions,
) -> Result<CovariancePropagation, AnalysisError> {
    model.validate()?;
    if topology.nodes() != model.num_nodes() {
        return Err(AnalysisError::UnsupportedModel(format!(
            "topology has {} nodes, model has {}",
            topology.nodes(),
            model.num_nodes()
        )));
    }
    let l = model.state_dim();
    let k_dim = model.obs_dim();
    let n_nodes = model.num_nodes();
    let s = 2 * l; // augmented block dimension
    let joint = s * n_nodes;

    // Augmented time-invariant model quantities.
    let f_aug = AugmentedMatrix::from_blocks(model.transition.clone(), model.conj_transition.clone())?
        .materialize();
    let state_stats = model.state_noise_stats()?;
    let q_aug = AugmentedMatrix::from_blocks(
        state_stats.covariance().clone(),
        state_stats.pseudocovariance().clone(),
    )?
    .materialize();

    // Per-node stacked neighbourhood matrices.
    let mut stacked_h = Vec::with_capacity(n_nodes);
    let mut stacked_r = Vec::with_capacity(n_nodes);
    for i in 0..n_nodes {
        let members = topology.neighbourhood(i);
        let m = members.len();
        let mut h = CMatrix::zeros(k_dim * m, l);
        let mut b = CMatrix::zeros(k_dim * m, l);
        for (slot, &node) in members.iter().enumerate() {
            h.view_mut((slot * k_dim, 0), (k_dim, l)).copy_from(&model.obs[node]);
            b.view_mut((slot * k_dim, 0), (k_dim, l)).copy_from(&model.conj_obs[node]);
        }
        let (r, u) = match &model.obs_noise {
            Some(spec) => spec.submatrices(members),
            None => (CMatrix::zeros(m, m), CMatrix::zeros(m, m)),
        };
        stacked_h.push(AugmentedMatrix::from_blocks(h, b)?.materialize());
        stacked_r.push(AugmentedMatrix::from_blocks(r, u)?.materialize());
    }

    // Full-network augmented observation noise covariance.
    let r_full = match &model.obs_noise {
        Some(spec) => build_augmented_cov(spec.stats()).map_err(AnalysisError::Algebra)?.materialize(),
        None => CMatrix::zeros(2 * k_dim * n_nodes, 2 * k_dim * n_nodes),
    };

    // Initial joint error covariance: identical blocks for every node pair.
    let init_block = match &options.initial {
        InitialErrorCov::DeterministicState(x0) => {
            if x0.len() != l {
                return Err(AnalysisError::UnsupportedModel(
                    "initial state dimension mismatch".into(),
                ));
            }
            let aug = crate::algebra::augment_vector(x0);
            &aug * aug.adjoint()
        }
        InitialErrorCov::SharedPrior(prior) => build_augmented_cov(prior)?.materialize(),
    };
    let mut joint_cov = CMatrix::zeros(joint, joint);
    for i in 0..n_nodes {
        for j in 0..n_nodes {
            joint_cov.view_mut((i * s, j * s), (s, s)).copy_from(&init_block);
        }
    }

    // Filter M recursions start from the diffuse prior.
    let mut m_post: Vec<CMatrix> =
        vec![CMatrix::identity(s, s) * C64::new(options.prior_scale, 0.0); n_nodes];

    let mut sigma_steps = Vec::with_capacity(options.steps);
    let mut node_mse_steps = Vec::with_capacity(options.steps);
    let mut gamma_mse_steps = Vec::with_capacity(options.steps);
    let mut bound_steps = Vec::with_capacity(options.steps);
    let mut route_disagreement = 0.0_f64;
    let mut gamma = CMatrix::zeros(joint, joint);
    let mut settled_run = 0usize;
    let mut settling_index = None;
    let mut prev_sigma: Option<Vec<CMatrix>> = None;

    for step in 1..=options.steps {
        // data-independent filter recursion: gains and M updates
        let mut t_blocks = Vec::with_capacity(n_nodes);
        let mut w_blocks = Vec::with_capacity(n_nodes);
        let mut gains = Vec::with_capacity(n_nodes);
        for i in 0..n_nodes {
            let m_pred = &f_aug * &m_post[i] * f_aug.adjoint() + &q_aug;
            let h = &stacked_h[i];
            let innovation = h * &m_pred * h.adjoint() + &stacked_r[i];
            let s_inv =
                invert(&innovation, CONDITION_LIMIT).map_err(FilterError::SingularInnovation)?;
            let gain = &m_pred * h.adjoint() * s_inv;
            let closed = CMatrix::identity(s, s) - &gain * h;
            let mut m_new =
                &closed * &m_pred * closed.adjoint() + &gain * &stacked_r[i] * gain.adjoint();
            m_new = (&m_new + m_new.adjoint()) * C64::new(0.5, 0.0);
            m_post[i] = m_new;
            t_blocks.push(&closed * &f_aug);
            w_blocks.push(closed);
            gains.push(gain);
        }

        // V_k = G_k S^a_k scatters the neighbourhood gain columns onto the
        // full-network noise coordinates (upper and conjugate halves).
        let v_blocks: Vec<CMatrix> = (0..n_nodes)
            .map(|i| {
                let members = topology.neighbourhood(i);
                let m = members.len();
                let mut v = CMatrix::zeros(s, 2 * k_dim * n_nodes);
                for (slot, &node) in members.iter().enumerate() {
                    for col in 0..k_dim {
                        let src_upper = gains[i].column(slot * k_dim + col).into_owned();
                        let src_lower = gains[i].column((m + slot) * k_dim + col).into_owned();
                        v.column_mut(node * k_dim + col).copy_from(&src_upper);
                        v.column_mut((n_nodes + node) * k_dim + col).copy_from(&src_lower);
                    }
                }
                v
            })
            .collect();

        // non-diffused joint covariance Γ: blockwise D 𝓜 D^H + shared noise
        for j in 0..n_nodes {
            for k in 0..n_nodes {
                let block = &t_blocks[j]
                    * joint_cov.view((j * s, k * s), (s, s)).into_owned()
                    * t_blocks[k].adjoint()
                    + &w_blocks[j] * &q_aug * w_blocks[k].adjoint()
                    + &v_blocks[j] * &r_full * v_blocks[k].adjoint();
                gamma.view_mut((j * s, k * s), (s, s)).copy_from(&block);
            }
        }

        // stacked recursion (route 1): fold the diffusion into the operators
        let mut a_op = CMatrix::zeros(joint, joint);
        let mut b_op = CMatrix::zeros(joint, s);
        let mut g_op = CMatrix::zeros(joint, 2 * k_dim * n_nodes);
        for i in 0..n_nodes {
            let mut b_block = CMatrix::zeros(s, s);
            let mut g_block = CMatrix::zeros(s, 2 * k_dim * n_nodes);
            for &k in topology.neighbourhood(i) {
                let c = C64::new(weights.weight(k, i), 0.0);
                a_op.view_mut((i * s, k * s), (s, s)).copy_from(&(&t_blocks[k] * c));
                b_block += &w_blocks[k] * c;
                g_block += &v_blocks[k] * c;
            }
            b_op.view_mut((i * s, 0), (s, s)).copy_from(&b_block);
            g_op.view_mut((i * s, 0), (s, 2 * k_dim * n_nodes)).copy_from(&g_block);
        }
        let mut next = &a_op * &joint_cov * a_op.adjoint()
            + &b_op * &q_aug * b_op.adjoint()
            + &g_op * &r_full * g_op.adjoint();
        next = (&next + next.adjoint()) * C64::new(0.5, 0.0);
        joint_cov = next;

        // route 2: Σ_i as the double sum over Γ blocks
        let mut sigmas = Vec::with_capacity(n_nodes);
        let mut mses = Vec::with_capacity(n_nodes);
        for i in 0..n_nodes {
            let direct = joint_cov.view((i * s, i * s), (s, s)).into_owned();
            let mut double_sum = CMatrix::zeros(s, s);
            for &j in topology.neighbourhood(i) {
                for &k in topology.neighbourhood(i) {
                    let c = C64::new(weights.weight(j, i) * weights.weight(k, i), 0.0);
                    double_sum += gamma.view((j * s, k * s), (s, s)).into_owned() * c;
                }
            }
            let dev = (&direct - &double_sum)
                .iter()
                .fold(0.0_f64, |acc, z| acc.max(z.norm()));
            route_disagreement = route_disagreement.max(dev);
            mses.push(direct.trace().re / 2.0);
            sigmas.push(direct);
        }

        let gamma_mse: Vec<f64> = (0..n_nodes)
            .map(|k| gamma.view((k * s, k * s), (s, s)).into_owned().trace().re / 2.0)
            .collect();
        let bounds: Vec<f64> = (0..n_nodes)
            .map(|i| {
                topology
                    .neighbourhood(i)
                    .iter()
                    .map(|&k| gamma_mse[k])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();

        // settling detection on the diffused Σ blocks
        if let Some(prev) = &prev_sigma {
            let mut max_rel = 0.0_f64;
            for (sig, old) in sigmas.iter().zip(prev) {
                let denom = old.norm().max(1e-300);
                max_rel = max_rel.max((sig - old).norm() / denom);
            }
            if max_rel < SETTLING_TOL {
                settled_run += 1;
                if settled_run >= SETTLING_RUN && settling_index.is_none() {
                    settling_index = Some(step);
                }
            } else {
                settled_run = 0;
                settling_index = None;
            }
        }
        prev_sigma = Some(sigmas.clone());

        sigma_steps.push(sigmas);
        node_mse_steps.push(mses);
        gamma_mse_steps.push(gamma_mse);
        bound_steps.push(bounds);
    }

    Ok(CovariancePropagation {
        block_dim: s,
        sigma: sigma_steps,
        node_mse: node_mse_steps,
        gamma_node_mse: gamma_mse_steps,
        worst_node_bounds: bound_steps,
        final_gamma: gamma,
        route_disagreement,
        settling_index,
    })
}

/// Per-node worst-neighbour bounds `max_{k∈N_i} tr(Γ_kk)/2` from a full `Γ`
/// matrix, checking the postcondition `tr(Σ_i)/2 ≤ bound_i + 1e−9` when the
/// Σ blocks are supplied.
pub fn worst_node_bounds(
    gamma: &CMatrix,
    topology: &NetworkTopology,
    block_dim: usize,
    sigma: Option<&[CMatrix]>,
) -> Result<Vec<f64>, AnalysisError> {
    let n = topology.nodes();
    let traces: Vec<f64> = (0..n)
        .map(|k| gamma.view((k * block_dim, k * block_dim), (block_dim, block_dim)).into_owned().trace().re / 2.0)
        .collect();
    let bounds: Vec<f64> = (0..n)
        .map(|i| {
            topology
                .neighbourhood(i)
                .iter()
                .map(|&k| traces[k])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    if let Some(sigma) = sigma {
        for (i, sig) in sigma.iter().enumerate() {
            let mse = sig.trace().re / 2.0;
            if mse > bounds[i] + 1e-9 {
                return Err(AnalysisError::BoundViolated { node: i, mse, bound: bounds[i] });
            }
        }
    }
    Ok(bounds)
}

/// Componentwise empirical bias of per-node error vectors across trials.
#[derive(Debug, Clone)]
pub struct BiasReport {
    /// Per-node mean error vector.
    pub mean: Vec<CVector>,
    /// Per-node standard errors, components ordered
    /// `[Re e_0, Im e_0, Re e_1, Im e_1, …]`.
    pub standard_error: Vec<Vec<f64>>,
    pub trials: usize,
}

impl BiasReport {
    /// Largest `|mean| / se` ratio over all nodes and components; components
    /// with zero spread count only if their mean is nonzero.
    pub fn max_sigma_ratio(&self) -> f64 {
        let mut worst = 0.0_f64;
        for (mean, ses) in self.mean.iter().zip(&self.standard_error) {
            for (j, component) in ses.iter().enumerate() {
                let value = if j % 2 == 0 { mean[j / 2].re } else { mean[j / 2].im };
                if *component > 0.0 {
                    worst = worst.max(value.abs() / component);
                } else if value != 0.0 {
                    worst = f64::INFINITY;
                }
            }
        }
        worst
    }
}

/// Minimum number of trials for a bias estimate.
pub const MIN_BIAS_TRIALS: usize = 100;

/// Mean and standard error of per-node error vectors: `errors[t][i]` is the
/// error of node `i` in trial `t` at the designated step.
pub fn empirical_bias(errors: &[Vec<CVector>]) -> Result<BiasReport, AnalysisError> {
    let trials = errors.len();
    if trials < MIN_BIAS_TRIALS {
        return Err(AnalysisError::InsufficientTrials { required: MIN_BIAS_TRIALS, got: trials });
    }
    let nodes = errors[0].len();
    let dim = errors[0][0].len();
    let mut mean = vec![CVector::zeros(dim); nodes];
    for trial in errors {
        for (acc, err) in mean.iter_mut().zip(trial) {
            *acc += err;
        }
    }
    for acc in &mut mean {
        *acc /= C64::new(trials as f64, 0.0);
    }
    let mut standard_error = vec![vec![0.0; 2 * dim]; nodes];
    for trial in errors {
        for (i, err) in trial.iter().enumerate() {
            for j in 0..dim {
                let dr = err[j].re - mean[i][j].re;
                let di = err[j].im - mean[i][j].im;
                standard_error[i][2 * j] += dr * dr;
                standard_error[i][2 * j + 1] += di * di;
            }
        }
    }
    for ses in &mut standard_error {
        for se in ses.iter_mut() {
            *se = (*se / (trials as f64 - 1.0)).sqrt() / (trials as f64).sqrt();
        }
    }
    Ok(BiasReport { mean, standard_error, trials })
}

/// Theoretical and empirical per-node steady-state MSE with the worst-node
/// bound.
#[derive(Debug, Clone)]
pub struct MseReport {
    pub theoretical_mse: Vec<f64>,
    pub empirical_mse: Vec<f64>,
    pub per_node_bound: Vec<f64>,
    pub network_average_theoretical: f64,
    pub network_average_empirical: f64,
    pub worst_node_bound: f64,
}

impl MseReport {
    pub fn new(
        theoretical_mse: Vec<f64>,
        empirical_mse: Vec<f64>,
        per_node_bound: Vec<f64>,
    ) -> Result<Self, AnalysisError> {
        for (node, (&mse, &bound)) in theoretical_mse.iter().zip(&per_node_bound).enumerate() {
            if mse < 0.0 || bound < 0.0 {
                return Err(AnalysisError::UnsupportedModel(
                    "negative MSE values in report".into(),
                ));
            }
            if mse > bound + 1e-9 {
                return Err(AnalysisError::BoundViolated { node, mse, bound });
            }
        }
        let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        let network_average_theoretical = avg(&theoretical_mse);
        let network_average_empirical = avg(&empirical_mse);
        let worst_node_bound = per_node_bound.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            theoretical_mse,
            empirical_mse,
            per_node_bound,
            network_average_theoretical,
            network_average_empirical,
            worst_node_bound,
        })
    }
}

/// Sanity helper for tests: max Hermitian deviation and most negative
/// eigenvalue over a set of Σ blocks.
pub fn sigma_health(blocks: &[CMatrix]) -> (f64, f64) {
    let mut herm = 0.0_f64;
    let mut min_eig = f64::INFINITY;
    for block in blocks {
        herm = herm.max(
            (block - block.adjoint()).iter().fold(0.0_f64, |a, z| a.max(z.norm())),
        );
        min_eig = min_eig.min(hermitian_eigenvalues(block)[0]);
    }
    (herm, min_eig)
}
