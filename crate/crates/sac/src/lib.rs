//! Soft actor-critic for the cooling environments.
//!
//! Networks, gradients and the optimiser are written out by hand for the one
//! topology used here (dense layers, ReLU, tanh-squashed Gaussian head), so
//! every derivative can be checked against finite differences.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod buffer;
pub mod checkpoint;
pub mod nn;
pub mod train;

pub use agent::{ActionMode, Batch, Hyperparams, SacAgent, UpdateStats};
pub use buffer::{ReplayBuffer, Transition};
pub use checkpoint::{env_hash, AgentCheckpoint};
pub use train::{evaluate, train, CurveRow, TrainConfig, TrainOutcome};

#[derive(Debug, thiserror::Error)]
pub enum SacError {
    #[error("invalid hyperparameters: {0}")]
    Config(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },
    #[error("non-finite values: {0}")]
    NonFinite(String),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint was written for environment {checkpoint}, config hashes to {config}")]
    EnvMismatch { checkpoint: String, config: String },
    #[error(transparent)]
    Env(#[from] magcool_core::CoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SacError> = std::result::Result<T, E>;
