use crate::densify::PredictedPointSet;
use crate::scalar::Scalar;
use crate::sfm::SparseModel;

/// Provenance of a point in a densified cloud; the discriminant is the PLY `source` value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum PointSource {
    Sfm = 0,
    Gp = 1,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudPoint {
    pub position: [f32; 3],
    pub color: [u8; 3],
    pub source: PointSource,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DensifiedCloud {
    pub points: Vec<CloudPoint>,
}

impl DensifiedCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn count(&self, source: PointSource) -> usize {
        self.points.iter().filter(|p| p.source == source).count()
    }

    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.points.iter().map(|p| p.position.map(f64::from)).collect()
    }
}

fn quantize<T: Scalar>(c: T) -> u8 {
    let c = c.as_f64();
    // NaN maps to 0 like any out-of-range low value
    let c = if c.is_nan() { 0.0 } else { c.clamp(0.0, 1.0) };
    (c * 255.0).round() as u8
}

/// Sparse points in model order, followed by the retained predictions in set order.
///
/// Sparse positions are stored at single precision; colours are copied unchanged.
/// Predicted colours are clamped to `[0, 1]` and quantized as `round(c · 255)`.
pub fn merge_clouds<T: Scalar>(sparse: &SparseModel, preds: &PredictedPointSet<T>) -> DensifiedCloud {
    let mut points = Vec::with_capacity(sparse.points3d.len() + preds.retained_count());
    points.extend(sparse.points3d.iter().map(|p| CloudPoint {
        position: p.position.map(|c| c as f32),
        color: p.color,
        source: PointSource::Sfm,
    }));
    points.extend(preds.points.iter().filter(|p| p.retained).map(|p| CloudPoint {
        position: p.mean.position().map(|c| c.as_f64() as f32),
        color: p.mean.color().map(quantize),
        source: PointSource::Gp,
    }));
    DensifiedCloud { points }
}
