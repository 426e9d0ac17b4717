//! Sparse-layer sharpness-aware minimization.
//!
//! The crate implements an AdamW-based SAM family on layer-blocked
//! parameters:
//!
//! - dense two-step SAM ([`optim::adasam_step`]),
//! - SL-SAM, which runs both SAM passes only on a sampled subset of layers
//!   chosen by an EXP3-style bandit ([`optim::slsam_step`], [`bandit`]),
//! - the single-step variants S²-SAM and SL-S²-SAM, which perturb along the
//!   previous iteration's gradient ([`optim::s2sam_step`],
//!   [`optim::sl_s2sam_step`]),
//! - uniform-random and greedy top-k layer selection for ablations.
//!
//! Objectives ([`objectives`]) include a separable quadratic and a small MLP
//! classifier with masked reverse-mode gradients; [`train`] runs a full
//! training loop and [`metrics`] aggregates per-step telemetry.

pub mod bandit;
pub mod data;
pub mod error;
pub mod idx;
pub mod layered;
pub mod metrics;
pub mod objectives;
pub mod optim;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
pub use layered::{ActiveSet, LayerId, LayeredVector, MaskedGrad};
