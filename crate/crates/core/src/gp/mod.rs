//! Exact Gaussian-process regression from normalized pixel coordinates to the six point
//! attributes (x, y, z, r, g, b), realized as six independent single-output GPs.

mod kernel;
mod likelihood;
mod model;
mod model_file;
mod normalizer;

pub use kernel::{kernel_value, KernelConfig, KernelFamily, Smoothness, NOISE_FLOOR};
pub use likelihood::{gram_matrix, nll, nll_gradient, nll_with_gradient, LossAndGradient, MAX_JITTER};
pub use model::{train_gp, Objective, OutputGp, PosteriorBatch, TrainConfig, TrainedGp};
pub use model_file::{read_model, read_model_file, write_model, write_model_file, MODEL_HEADER};
pub use normalizer::OutputNormalizer;

use thiserror::Error;

/// Number of regressed outputs: three position and three colour channels.
pub const OUTPUTS: usize = 6;

/// Output names in target order.
pub const OUTPUT_NAMES: [&str; OUTPUTS] = ["x", "y", "z", "r", "g", "b"];

#[derive(Debug, Error)]
pub enum GpError {
    #[error("dataset is empty")]
    EmptyDataset,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("covariance matrix is not positive definite (jitter escalated to {jitter:e})")]
    NotPositiveDefinite { jitter: f64 },

    #[error("non-finite value during optimization: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("model file line {line}: {message}")]
    ModelFormat { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl GpError {
    /// Numerical failures, as opposed to bad input or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(self, GpError::NotPositiveDefinite { .. } | GpError::NonFinite(_))
    }
}
