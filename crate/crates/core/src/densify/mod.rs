//! Candidate generation around training pixels, GP inference, variance-quantile
//! filtering and merging with the sparse cloud.

mod cloud;
mod filter;
mod sampling;

pub use cloud::{merge_clouds, CloudPoint, DensifiedCloud, PointSource};
pub use filter::{
    filter_by_variance, infer_dense, variance_reduction_report, ChannelReduction, FilterConfig, PredictedPoint,
    PredictedPointSet, VarianceReport,
};
pub use sampling::{attach_depth, generate_samples, SamplingConfig};

use thiserror::Error;

use crate::gp::GpError;

#[derive(Debug, Error)]
pub enum DensifyError {
    #[error("prediction set is empty")]
    EmptyPredictionSet,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Gp(#[from] GpError),
}
