//! Distributional reinforcement learning with implicit quantile networks.
//!
//! The crate is organized around a small dense-tensor autodiff engine
//! ([`graph`]), distortion risk measures and their normal-CDF kernels
//! ([`distortion`]), the IQN/QR/DQN function approximators ([`networks`]),
//! Huber quantile losses ([`losses`]), a DQN-style control loop ([`agent`]),
//! desk-scale oracle environments ([`env`]), and an experiment harness with
//! CSV metrics and sweep runners ([`harness`]).

pub mod adam;
pub mod agent;
pub mod checkpoint;
pub mod config;
pub mod distortion;
pub mod env;
pub mod grad_check;
pub mod graph;
pub mod harness;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod plot;
pub mod tensor;

use std::collections::BTreeMap;

pub use config::ConfigError;
pub use tensor::Tensor;

/// Named tensors: parameter bundles, input bindings, gradients.
/// A `BTreeMap` keeps iteration order deterministic, which the
/// reproducibility contract depends on.
pub type TensorMap = BTreeMap<String, Tensor>;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("tensor data length {len} does not match shape {shape:?}")]
    ShapeData { shape: Vec<usize>, len: usize },

    #[error("shape mismatch at node {node} ({op}): {detail}")]
    ShapeMismatch {
        node: usize,
        op: &'static str,
        detail: String,
    },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("unbound slot `{name}`")]
    UnboundSlot { name: String },

    #[error("evaluation does not belong to this graph")]
    GraphMismatch,

    #[error("gradient check requires a scalar output, got shape {shape:?}")]
    NonScalarOutput { shape: Vec<usize> },

    #[error("`{0}` is a sampling-only measure with no pointwise map")]
    SamplingOnly(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("environment: {0}")]
    Env(String),

    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("metrics: {0}")]
    Metrics(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
