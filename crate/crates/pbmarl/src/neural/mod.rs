//! From-scratch branching Q-network.
//!
//! A policy is a shared fully connected trunk feeding `T` parallel heads,
//! one per ballot token; each head emits `P` Q-values, one per project.
//! Hidden layers are rectified, outputs are linear. Everything an agent
//! learns with lives here: Xavier initialisation, forward passes, the
//! branch loss and its backward pass, SGD/Adam updates, replay buffers
//! with recency-weighted sampling, and exact checkpoint round-trips.

mod checkpoint;
mod dense;
mod optim;
mod policy;
mod replay;

use std::sync::Arc;

use thiserror::Error;

pub use checkpoint::{load_policy, save_policy};
pub use dense::{Dense, DenseGrad};
pub use optim::{Optimizer, OptimizerKind};
pub use policy::{PolicyGradients, QPolicy, DEFAULT_HEAD_HIDDEN, DEFAULT_TRUNK_HIDDEN};
pub use replay::{sample_minibatch, ReplayBuffer, Transition, RECENT_WINDOW};

/// Shared observation vector. Within one election every agent sees the
/// same state, so transitions hold a reference rather than a copy.
pub type StateVector = Arc<[f64]>;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("network dimensions must be positive")]
    ZeroDimension,
    #[error("state width {found} does not match the network input {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("cannot compute a loss over an empty batch")]
    EmptyBatch,
    #[error("cannot sample from an empty replay buffer")]
    EmptyBuffer,
    #[error("gradient shapes do not match the policy parameters")]
    ShapeMismatch,
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    BadCheckpoint(String),
}
