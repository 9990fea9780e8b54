use std::fmt;

use crate::densify::DensifyError;
use crate::gp::{TrainedGp, OUTPUTS};
use crate::scalar::Scalar;
use crate::sfm::{PixelSample, TargetVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    /// Fraction of candidates, by ascending mean colour variance, that is kept.
    pub quantile: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { quantile: 0.75 }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), DensifyError> {
        if !(self.quantile > 0.0 && self.quantile <= 1.0) {
            return Err(DensifyError::InvalidConfig(format!("filter quantile {} is not in (0, 1]", self.quantile)));
        }
        Ok(())
    }

    /// `⌈q · n⌉` clamped to `[1, n]`, robust to `q · n` landing a rounding error above
    /// an integer.
    pub fn keep_count(&self, n: usize) -> usize {
        let x = self.quantile * n as f64;
        let k = if (x - x.round()).abs() <= 1e-9 * x.max(1.0) { x.round() } else { x.ceil() };
        (k as usize).clamp(1, n.max(1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictedPoint<T> {
    pub pixel: PixelSample<T>,
    /// Posterior mean in target units.
    pub mean: TargetVector<T>,
    /// Posterior variances in standardized target space.
    pub variance: [T; OUTPUTS],
    /// Mean of the three colour variances.
    pub mean_rgb_var: T,
    pub retained: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictedPointSet<T> {
    pub points: Vec<PredictedPoint<T>>,
    /// Variance threshold of the last filtering pass.
    pub threshold: Option<T>,
}

impl<T: Scalar> PredictedPointSet<T> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn retained_count(&self) -> usize {
        self.points.iter().filter(|p| p.retained).count()
    }

    /// Concatenates sets, clearing any filtering state.
    pub fn union(sets: impl IntoIterator<Item = Self>) -> Self {
        let mut points: Vec<PredictedPoint<T>> = sets.into_iter().flat_map(|s| s.points).collect();
        points.iter_mut().for_each(|p| p.retained = false);
        Self { points, threshold: None }
    }
}

/// Posterior at every candidate. Nothing is retained until [`filter_by_variance`] runs.
pub fn infer_dense<T: Scalar>(
    model: &TrainedGp<T>,
    candidates: &[PixelSample<T>],
) -> Result<PredictedPointSet<T>, DensifyError> {
    let batch = model.posterior_samples(candidates)?;
    let three = T::lit(3.0);
    let points = candidates
        .iter()
        .zip(batch.mean.iter().zip(&batch.variance))
        .map(|(pixel, (mean, var))| PredictedPoint {
            pixel: *pixel,
            mean: TargetVector(*mean),
            variance: *var,
            mean_rgb_var: (var[3] + var[4] + var[5]) / three,
            retained: false,
        })
        .collect();
    Ok(PredictedPointSet { points, threshold: None })
}

/// Keeps every point whose mean colour variance is at most `τ`, the `⌈q · N⌉`-th
/// smallest value. Ties at `τ` are kept, so at least `⌈q · N⌉` points survive.
pub fn filter_by_variance<T: Scalar>(
    mut preds: PredictedPointSet<T>,
    cfg: &FilterConfig,
) -> Result<PredictedPointSet<T>, DensifyError> {
    cfg.validate()?;
    if preds.is_empty() {
        return Err(DensifyError::EmptyPredictionSet);
    }
    let mut sorted: Vec<T> = preds.points.iter().map(|p| p.mean_rgb_var).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let tau = sorted[cfg.keep_count(sorted.len()) - 1];
    for p in &mut preds.points {
        p.retained = p.mean_rgb_var <= tau;
    }
    preds.threshold = Some(tau);
    Ok(preds)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelReduction {
    pub original: f64,
    pub filtered: f64,
    /// `100 · (original − filtered) / original`; 0 when the original mean is 0.
    pub reduction_percent: f64,
}

impl ChannelReduction {
    fn new(original: f64, filtered: f64) -> Self {
        let reduction_percent = if original == 0.0 { 0.0 } else { 100.0 * (original - filtered) / original };
        Self { original, filtered, reduction_percent }
    }
}

/// Mean colour variances before and after filtering, per channel and for `σ̄²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceReport {
    pub candidates: usize,
    pub retained: usize,
    pub red: ChannelReduction,
    pub green: ChannelReduction,
    pub blue: ChannelReduction,
    pub mean_rgb: ChannelReduction,
}

impl VarianceReport {
    pub fn rows(&self) -> [(&'static str, ChannelReduction); 4] {
        [("r", self.red), ("g", self.green), ("b", self.blue), ("mean_rgb", self.mean_rgb)]
    }
}

impl fmt::Display for VarianceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "candidates {}  retained {}", self.candidates, self.retained)?;
        writeln!(f, "{:<10} {:>14} {:>14} {:>10}", "channel", "original", "filtered", "reduction")?;
        for (name, c) in self.rows() {
            writeln!(f, "{name:<10} {:>14.6e} {:>14.6e} {:>9.2}%", c.original, c.filtered, c.reduction_percent)?;
        }
        Ok(())
    }
}

/// Variance reduction achieved by the retained subset. Variances are in standardized
/// target space; a set with nothing retained reports a filtered mean of 0.
pub fn variance_reduction_report<T: Scalar>(preds: &PredictedPointSet<T>) -> VarianceReport {
    let mean_of = |pick: &dyn Fn(&PredictedPoint<T>) -> f64, only_retained: bool| {
        let vals: Vec<f64> = preds.points.iter().filter(|p| !only_retained || p.retained).map(pick).collect();
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    };
    let channel =
        |pick: &dyn Fn(&PredictedPoint<T>) -> f64| ChannelReduction::new(mean_of(pick, false), mean_of(pick, true));
    VarianceReport {
        candidates: preds.len(),
        retained: preds.retained_count(),
        red: channel(&|p| p.variance[3].as_f64()),
        green: channel(&|p| p.variance[4].as_f64()),
        blue: channel(&|p| p.variance[5].as_f64()),
        mean_rgb: channel(&|p| p.mean_rgb_var.as_f64()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn set(vars: &[f64]) -> PredictedPointSet<f64> {
        let points = vars
            .iter()
            .map(|&v| PredictedPoint {
                pixel: PixelSample::new(0.5, 0.5),
                mean: TargetVector([0.0; 6]),
                variance: [0.0, 0.0, 0.0, v, v, v],
                mean_rgb_var: v,
                retained: false,
            })
            .collect();
        PredictedPointSet { points, threshold: None }
    }

    fn mask(s: &PredictedPointSet<f64>) -> Vec<bool> {
        s.points.iter().map(|p| p.retained).collect()
    }

    #[test]
    fn three_of_four() {
        let f = filter_by_variance(set(&[4.0, 1.0, 3.0, 2.0]), &FilterConfig { quantile: 0.75 }).unwrap();
        assert_eq!(mask(&f), vec![false, true, true, true]);
        assert_eq!(f.threshold, Some(3.0));
    }

    #[test]
    fn full_quantile_and_ties() {
        let all = filter_by_variance(set(&[4.0, 1.0, 3.0, 2.0]), &FilterConfig { quantile: 1.0 }).unwrap();
        assert_eq!(all.retained_count(), 4);
        let ties = filter_by_variance(set(&[5.0; 4]), &FilterConfig { quantile: 0.5 }).unwrap();
        assert_eq!(ties.retained_count(), 4);
    }

    #[test]
    fn empty_set_and_bad_quantile() {
        assert!(matches!(
            filter_by_variance(set(&[]), &FilterConfig::default()),
            Err(DensifyError::EmptyPredictionSet)
        ));
        assert!(filter_by_variance(set(&[1.0]), &FilterConfig { quantile: 0.0 }).is_err());
    }

    #[test]
    fn keep_count_absorbs_rounding() {
        // 0.85 · 100 evaluates to 85.00000000000001
        assert_eq!(FilterConfig { quantile: 0.85 }.keep_count(100), 85);
        assert_eq!(FilterConfig { quantile: 0.45 }.keep_count(7), 4);
        assert_eq!(FilterConfig { quantile: 0.01 }.keep_count(3), 1);
    }

    #[test]
    fn report_arithmetic() {
        let f = filter_by_variance(set(&[1.0, 2.0, 3.0, 4.0]), &FilterConfig { quantile: 0.75 }).unwrap();
        let r = variance_reduction_report(&f);
        assert_eq!((r.mean_rgb.original, r.mean_rgb.filtered), (2.5, 2.0));
        assert!((r.mean_rgb.reduction_percent - 20.0).abs() < 1e-12);
        assert!((r.red.reduction_percent - 20.0).abs() < 1e-12);
        let all = filter_by_variance(set(&[1.0, 2.0]), &FilterConfig { quantile: 1.0 }).unwrap();
        assert_eq!(variance_reduction_report(&all).mean_rgb.reduction_percent, 0.0);
        let zero = filter_by_variance(set(&[0.0, 0.0]), &FilterConfig { quantile: 0.5 }).unwrap();
        assert_eq!(variance_reduction_report(&zero).mean_rgb.reduction_percent, 0.0);
    }
}
