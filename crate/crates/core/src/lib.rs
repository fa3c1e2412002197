//! Distributed widely-linear (augmented) complex Kalman filtering over sensor
//! networks with correlated, noncircular nodal noises.
//!
//! The crate provides:
//!
//! - [`algebra`]: augmented complex linear algebra — augmented covariance
//!   matrices, the complex/bivariate-real isomorphism, circularity measures,
//!   and the widely-linear MMSE coefficient solver;
//! - [`stats`]: noncircular complex Gaussian noise generation, jointly across
//!   network nodes with specified cross-(pseudo)covariances, and an AR(2)
//!   benchmark signal;
//! - [`model`]: widely-linear distributed state-space models, their augmented
//!   representations, trajectory simulation and neighbourhood observation
//!   stacking;
//! - [`network`]: topologies, self-inclusive neighbourhoods and diffusion
//!   weight schemes;
//! - [`filters`]: the diffusion filter family (strictly-linear, augmented,
//!   information-form, centralised, non-cooperative and the dual bivariate
//!   real-valued filter);
//! - [`analysis`]: exact propagation of the network error covariance, the
//!   worst-node bound and empirical bias estimation;
//! - [`harness`]: scenario configuration, Monte-Carlo orchestration and CSV
//!   emission for the built-in benchmark scenarios.

pub mod algebra;
pub mod analysis;
pub mod filters;
pub mod harness;
pub mod model;
pub mod network;
pub mod stats;

pub use algebra::{CMatrix, CVector, RMatrix, RVector, C64};
