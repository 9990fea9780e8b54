//! Chamfer distance, RMSE, R² and held-out evaluation of trained models.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::gp::{GpError, TrainedGp, OUTPUTS, OUTPUT_NAMES};
use crate::scalar::Scalar;
use crate::sfm::PixelToPointDataset;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("point set is empty")]
    EmptySet,

    #[error("shape mismatch: {0} vs {1} values")]
    ShapeMismatch(usize, usize),

    #[error("truth is constant or has fewer than two values")]
    ConstantTruth,

    #[error("test dataset is empty")]
    EmptyDataset,

    #[error(transparent)]
    Gp(#[from] GpError),
}

/// Nearest-neighbour strategy for [`chamfer_distance_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NeighborSearch {
    /// Brute force up to `BRUTE_FORCE_PAIRS` pairs, grid above.
    #[default]
    Auto,
    BruteForce,
    Grid,
}

pub const BRUTE_FORCE_PAIRS: usize = 25_000_000;

/// Mean nearest-neighbour Euclidean distance from `p` to `g` plus the same from `g` to `p`.
pub fn chamfer_distance(p: &[[f64; 3]], g: &[[f64; 3]]) -> Result<f64, MetricsError> {
    chamfer_distance_with(p, g, NeighborSearch::Auto)
}

pub fn chamfer_distance_with(p: &[[f64; 3]], g: &[[f64; 3]], search: NeighborSearch) -> Result<f64, MetricsError> {
    if p.is_empty() || g.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let grid = match search {
        NeighborSearch::BruteForce => false,
        NeighborSearch::Grid => true,
        NeighborSearch::Auto => p.len().saturating_mul(g.len()) > BRUTE_FORCE_PAIRS,
    };
    let one_way = |from: &[[f64; 3]], to: &[[f64; 3]]| -> f64 {
        let total: f64 = if grid {
            let index = Grid::new(to);
            from.iter().map(|a| index.nearest(a)).sum()
        } else {
            from.iter().map(|a| to.iter().map(|b| dist(a, b)).fold(f64::INFINITY, f64::min)).sum()
        };
        total / from.len() as f64
    };
    Ok(one_way(p, g) + one_way(g, p))
}

#[inline]
fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let (dx, dy, dz) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Uniform hash grid over a point set with roughly two points per occupied cell.
struct Grid<'a> {
    points: &'a [[f64; 3]],
    origin: [f64; 3],
    cell: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
    /// Largest occupied key along each axis; the smallest is 0.
    top: [i64; 3],
}

impl<'a> Grid<'a> {
    fn new(points: &'a [[f64; 3]]) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let extent = [0, 1, 2].map(|k| hi[k] - lo[k]);
        let longest = extent.iter().cloned().fold(0.0, f64::max);
        let volume: f64 = extent.iter().map(|e| e.max(longest * 1e-3)).product();
        let mut cell = (2.0 * volume / points.len() as f64).cbrt();
        if !(cell.is_finite() && cell > 0.0) {
            cell = 1.0;
        }
        let mut grid = Self { points, origin: lo, cell, cells: HashMap::new(), top: [0; 3] };
        for (i, p) in points.iter().enumerate() {
            let key = grid.key(p);
            for (top, k) in grid.top.iter_mut().zip(key) {
                *top = (*top).max(k);
            }
            grid.cells.entry(key).or_default().push(i);
        }
        grid
    }

    fn key(&self, p: &[f64; 3]) -> [i64; 3] {
        [0, 1, 2].map(|k| ((p[k] - self.origin[k]) / self.cell).floor() as i64)
    }

    fn nearest(&self, q: &[f64; 3]) -> f64 {
        let c = self.key(q);
        // rings closer than the occupied key box are empty
        let first = (0..3).map(|k| (-c[k]).max(c[k] - self.top[k]).max(0)).max().unwrap_or(0);
        let last = (0..3).map(|k| c[k].abs().max((c[k] - self.top[k]).abs())).max().unwrap_or(0);
        let mut best = f64::INFINITY;
        for s in first..=last {
            self.visit_shell(c, s, q, &mut best);
            // every point in ring s + 1 or beyond is at least s · cell away
            if best <= s as f64 * self.cell {
                break;
            }
        }
        best
    }

    /// Cells at Chebyshev key distance exactly `s` from `c`, clipped to the key box.
    fn visit_shell(&self, c: [i64; 3], s: i64, q: &[f64; 3], best: &mut f64) {
        let range = |k: usize| (-s).max(-c[k])..=s.min(self.top[k] - c[k]);
        for dx in range(0) {
            for dy in range(1) {
                let dzs = range(2);
                let faces = [-s, s];
                let dzs: Box<dyn Iterator<Item = i64>> = if dx.abs() == s || dy.abs() == s {
                    Box::new(dzs)
                } else {
                    Box::new(faces.into_iter().take(if s == 0 { 1 } else { 2 }).filter(move |dz| dzs.contains(dz)))
                };
                for dz in dzs {
                    if let Some(ids) = self.cells.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        for &i in ids {
                            *best = best.min(dist(q, &self.points[i]));
                        }
                    }
                }
            }
        }
    }
}

/// Root mean squared difference over all entries.
pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64, MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::ShapeMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let ss: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((ss / pred.len() as f64).sqrt())
}

/// `1 − Σ(t − p)² / Σ(t − t̄)²`.
pub fn r2_score(pred: &[f64], truth: &[f64]) -> Result<f64, MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::ShapeMismatch(pred.len(), truth.len()));
    }
    if truth.len() < 2 {
        return Err(MetricsError::ConstantTruth);
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(MetricsError::ConstantTruth);
    }
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (t - p) * (t - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputMetrics {
    /// Absent when the held-out truth of this output is constant.
    pub r2: Option<f64>,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsBundle {
    /// Pooled over the six outputs, each around its own mean; absent when every output
    /// is constant.
    pub r2: Option<f64>,
    pub rmse: f64,
    /// Between predicted and true positions.
    pub chamfer: f64,
    pub sample_count: usize,
    pub per_output: [OutputMetrics; OUTPUTS],
}

impl MetricsBundle {
    /// `metric,output,value` rows; absent values are written as `nan`.
    pub fn to_csv(&self) -> String {
        let fmt_opt = |v: Option<f64>| v.map_or("nan".to_string(), |v| format!("{v}"));
        let mut out = String::from("metric,output,value\n");
        out.push_str(&format!("r2,all,{}\n", fmt_opt(self.r2)));
        out.push_str(&format!("rmse,all,{}\n", self.rmse));
        out.push_str(&format!("chamfer,xyz,{}\n", self.chamfer));
        out.push_str(&format!("sample_count,all,{}\n", self.sample_count));
        for (name, m) in OUTPUT_NAMES.iter().zip(&self.per_output) {
            out.push_str(&format!("r2,{name},{}\n", fmt_opt(m.r2)));
            out.push_str(&format!("rmse,{name},{}\n", m.rmse));
        }
        out
    }
}

impl fmt::Display for MetricsBundle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
        writeln!(f, "held-out samples {}", self.sample_count)?;
        writeln!(f, "{:<8} {:>12} {:>12}", "output", "r2", "rmse")?;
        writeln!(f, "{:<8} {:>12} {:>12.6}", "all", show(self.r2), self.rmse)?;
        for (name, m) in OUTPUT_NAMES.iter().zip(&self.per_output) {
            writeln!(f, "{name:<8} {:>12} {:>12.6}", show(m.r2), m.rmse)?;
        }
        writeln!(f, "chamfer (xyz) {:.6}", self.chamfer)
    }
}

/// Posterior means on `test`, scored against its targets in target units.
pub fn evaluate_holdout<T: Scalar>(
    model: &TrainedGp<T>,
    test: &PixelToPointDataset<T>,
) -> Result<MetricsBundle, MetricsError> {
    if test.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    let inputs: Vec<_> = test.samples.iter().map(|s| s.input).collect();
    let batch = model.posterior_samples(&inputs)?;
    let pred: Vec<[f64; OUTPUTS]> = batch.mean.iter().map(|r| r.map(|v| v.as_f64())).collect();
    let truth: Vec<[f64; OUTPUTS]> = test.samples.iter().map(|s| s.target.0.map(|v| v.as_f64())).collect();
    let column = |rows: &[[f64; OUTPUTS]], o: usize| rows.iter().map(|r| r[o]).collect::<Vec<_>>();

    let mut per_output = [OutputMetrics { r2: None, rmse: 0.0 }; OUTPUTS];
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for (o, m) in per_output.iter_mut().enumerate() {
        let (p, t) = (column(&pred, o), column(&truth, o));
        m.rmse = rmse(&p, &t)?;
        m.r2 = match r2_score(&p, &t) {
            Ok(v) => Some(v),
            Err(MetricsError::ConstantTruth) => None,
            Err(e) => return Err(e),
        };
        let mean = t.iter().sum::<f64>() / t.len() as f64;
        ss_res += p.iter().zip(&t).map(|(p, t)| (t - p) * (t - p)).sum::<f64>();
        ss_tot += t.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>();
    }
    let flat = |rows: &[[f64; OUTPUTS]]| rows.iter().flatten().copied().collect::<Vec<_>>();
    let xyz = |rows: &[[f64; OUTPUTS]]| rows.iter().map(|r| [r[0], r[1], r[2]]).collect::<Vec<_>>();
    Ok(MetricsBundle {
        r2: (test.len() >= 2 && ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot),
        rmse: rmse(&flat(&pred), &flat(&truth))?,
        chamfer: chamfer_distance(&xyz(&pred), &xyz(&truth))?,
        sample_count: test.len(),
        per_output,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chamfer_examples() {
        let o = [[0.0, 0.0, 0.0]];
        assert_eq!(chamfer_distance(&o, &o).unwrap(), 0.0);
        assert_eq!(chamfer_distance(&o, &[[1.0, 0.0, 0.0]]).unwrap(), 2.0);
        assert_eq!(chamfer_distance(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]], &[[1.0, 0.0, 0.0]]).unwrap(), 2.0);
        assert!(matches!(chamfer_distance(&[], &o), Err(MetricsError::EmptySet)));
    }

    #[test]
    fn grid_handles_degenerate_and_distant_sets() {
        let line: Vec<[f64; 3]> = (0..50).map(|i| [i as f64, 0.0, 0.0]).collect();
        let far = [[1000.0, -40.0, 7.0], [-3.0, 0.5, 0.0]];
        let brute = chamfer_distance_with(&line, &far, NeighborSearch::BruteForce).unwrap();
        let grid = chamfer_distance_with(&line, &far, NeighborSearch::Grid).unwrap();
        assert!((brute - grid).abs() < 1e-12);
        let same = [[1.0, 1.0, 1.0]; 4];
        assert_eq!(chamfer_distance_with(&same, &same, NeighborSearch::Grid).unwrap(), 0.0);
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 3.535534).abs() < 1e-6);
        assert!(matches!(rmse(&[0.0], &[1.0, 2.0]), Err(MetricsError::ShapeMismatch(1, 2))));
    }

    #[test]
    fn r2_examples() {
        let t = [0.0, 1.0, 2.0];
        assert_eq!(r2_score(&t, &t).unwrap(), 1.0);
        assert_eq!(r2_score(&[1.0; 3], &t).unwrap(), 0.0);
        assert_eq!(r2_score(&[0.0; 3], &t).unwrap(), -1.5);
        assert!(matches!(r2_score(&[1.0, 1.0], &[2.0, 2.0]), Err(MetricsError::ConstantTruth)));
        assert!(matches!(r2_score(&[1.0], &[2.0]), Err(MetricsError::ConstantTruth)));
    }
}
