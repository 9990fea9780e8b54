//! Densification of sparse structure-from-motion point clouds with Gaussian processes.
//!
//! A key frame's pixel-to-point correspondences train six independent GPs mapping
//! normalized pixel coordinates to position and colour. Candidate pixels sampled on
//! circles around the training pixels are predicted, the most uncertain predictions (by
//! mean colour variance) are discarded, and the rest are merged into the sparse cloud.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the aliases below fix
//! the usual double-precision instantiation.

// `!(x > 0.0)` is the NaN-rejecting form of a positivity check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod densify;
pub mod gp;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod scalar;
pub mod sfm;
pub mod synthetic;

pub use scalar::Scalar;

use thiserror::Error;

pub type Matrix64 = linalg::Matrix<f64>;
pub type KernelConfig64 = gp::KernelConfig<f64>;
pub type TrainedGp64 = gp::TrainedGp<f64>;
pub type TrainedGp32 = gp::TrainedGp<f32>;
pub type Dataset64 = sfm::PixelToPointDataset<f64>;
pub type Dataset32 = sfm::PixelToPointDataset<f32>;
pub type PredictedPointSet64 = densify::PredictedPointSet<f64>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Sfm(#[from] sfm::SfmError),

    #[error(transparent)]
    Gp(#[from] gp::GpError),

    #[error(transparent)]
    Densify(#[from] densify::DensifyError),

    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
}

impl Error {
    /// Failures of the numerics rather than of the inputs or configuration.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Gp(e)
            | Error::Densify(densify::DensifyError::Gp(e))
            | Error::Metrics(metrics::MetricsError::Gp(e)) => e.is_numerical(),
            _ => false,
        }
    }
}
