//! Densification of a sparse model from one or more trained key-frame GPs.

use crate::densify::{
    attach_depth, filter_by_variance, generate_samples, infer_dense, merge_clouds, variance_reduction_report,
    DensifiedCloud, DensifyError, FilterConfig, PredictedPointSet, SamplingConfig, VarianceReport,
};
use crate::gp::{GpError, TrainedGp};
use crate::scalar::Scalar;
use crate::sfm::{DepthMap, SparseModel};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DensifyConfig {
    pub sampling: SamplingConfig,
    pub filter: FilterConfig,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct DensifyOutcome<T> {
    /// Candidates that reached inference, after bounds, deduplication and depth checks.
    pub candidates: usize,
    pub predictions: PredictedPointSet<T>,
    pub cloud: DensifiedCloud,
    pub report: VarianceReport,
}

/// One trained key frame, with the depth map its candidates read depth from when the
/// model uses depth inputs.
#[derive(Debug, Clone, Copy)]
pub struct KeyFrameModel<'a, T> {
    pub model: &'a TrainedGp<T>,
    pub depth: Option<&'a DepthMap>,
}

/// Samples candidates around every model's training pixels, predicts them, filters the
/// union by colour variance and merges the survivors into the sparse cloud.
pub fn densify_scene<T: Scalar>(
    sparse: &SparseModel,
    frames: &[KeyFrameModel<'_, T>],
    cfg: &DensifyConfig,
) -> Result<DensifyOutcome<T>, Error> {
    cfg.sampling.validate()?;
    cfg.filter.validate()?;
    let mut sets = Vec::with_capacity(frames.len());
    for frame in frames {
        let m = frame.model;
        let mut candidates = generate_samples(&m.training_pixels(), m.width(), m.height(), &cfg.sampling, cfg.seed);
        if m.input_dim() == 3 {
            let depth = frame.depth.ok_or(GpError::DimensionMismatch { expected: 3, found: 2 })?;
            candidates = attach_depth(&candidates, depth);
        }
        sets.push(infer_dense(m, &candidates)?);
    }
    let union = PredictedPointSet::union(sets);
    if union.is_empty() {
        return Err(DensifyError::EmptyPredictionSet.into());
    }
    let candidates = union.len();
    let predictions = filter_by_variance(union, &cfg.filter)?;
    let cloud = merge_clouds(sparse, &predictions);
    let report = variance_reduction_report(&predictions);
    Ok(DensifyOutcome { candidates, predictions, cloud, report })
}
