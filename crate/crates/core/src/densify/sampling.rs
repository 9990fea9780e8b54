use std::collections::HashSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::densify::DensifyError;
use crate::scalar::Scalar;
use crate::sfm::{DepthMap, PixelSample};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingConfig {
    /// Radius as a fraction of the shorter image side.
    pub beta: f64,
    /// Samples per training pixel.
    pub angular_resolution: usize,
    /// Place samples exactly on the circle; otherwise draw the radius uniformly in `(0, r]`.
    pub on_boundary: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { beta: 0.25, angular_resolution: 8, on_boundary: true }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<(), DensifyError> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(DensifyError::InvalidConfig(format!("beta {} is not in (0, 1)", self.beta)));
        }
        if self.angular_resolution == 0 {
            return Err(DensifyError::InvalidConfig("angular resolution must be at least 1".into()));
        }
        Ok(())
    }
}

/// Candidate pixels on circles of radius `r = β · min(W, H)` around each training pixel,
/// at angles `2πj / M`.
///
/// Candidates outside `[0, W) × [0, H)` are dropped and exact repeats are kept once, in
/// first-seen order. Returned coordinates are divided by the image size.
pub fn generate_samples<T: Scalar>(
    train_pixels: &[[T; 2]],
    width: u32,
    height: u32,
    cfg: &SamplingConfig,
    seed: u64,
) -> Vec<PixelSample<T>> {
    let (w, h) = (T::lit(width as f64), T::lit(height as f64));
    let r = T::lit(cfg.beta) * w.min(h);
    let m = cfg.angular_resolution;
    let angles: Vec<(T, T)> = (0..m)
        .map(|j| {
            let theta = T::lit(2.0) * T::PI() * T::lit(j as f64) / T::lit(m as f64);
            (theta.cos(), theta.sin())
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for &[u0, v0] in train_pixels {
        for &(c, s) in &angles {
            let radius = if cfg.on_boundary { r } else { r * (T::one() - T::lit(rng.gen::<f64>())) };
            let (u, v) = (u0 + radius * c, v0 + radius * s);
            if !(u >= T::zero() && u < w && v >= T::zero() && v < h) {
                continue;
            }
            let sample = PixelSample::new(u / w, v / h);
            if seen.insert((sample.u_norm.as_f64().to_bits(), sample.v_norm.as_f64().to_bits())) {
                out.push(sample);
            }
        }
    }
    out
}

/// Adds the depth of each candidate's pixel; candidates on invalid depth are dropped.
pub fn attach_depth<T: Scalar>(samples: &[PixelSample<T>], depth: &DepthMap) -> Vec<PixelSample<T>> {
    let (w, h) = (depth.width as f64, depth.height as f64);
    samples
        .iter()
        .filter_map(|s| {
            let z = depth.lookup(s.u_norm.as_f64() * w, s.v_norm.as_f64() * h)?;
            Some(PixelSample { depth: Some(T::lit(z as f64)), ..*s })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn boundary(m: usize) -> SamplingConfig {
        SamplingConfig { beta: 0.25, angular_resolution: m, on_boundary: true }
    }

    #[test]
    fn first_sample_lies_right_of_the_pixel() {
        let s = generate_samples(&[[100.0f64, 100.0]], 400, 400, &boundary(8), 0);
        assert_eq!(s.len(), 8);
        assert!((s[0].u_norm - 0.5).abs() < 1e-15 && (s[0].v_norm - 0.25).abs() < 1e-15);
    }

    #[test]
    fn corner_pixel_keeps_two_of_four() {
        let s = generate_samples(&[[0.0f64, 0.0]], 400, 400, &boundary(4), 0);
        assert_eq!(s.len(), 2);
        assert!((s[0].u_norm - 0.25).abs() < 1e-12 && s[0].v_norm.abs() < 1e-12);
        assert!(s[1].u_norm.abs() < 1e-12 && (s[1].v_norm - 0.25).abs() < 1e-12);
    }

    #[test]
    fn single_angle_at_center() {
        assert_eq!(generate_samples(&[[200.0f64, 200.0]], 400, 400, &boundary(1), 0).len(), 1);
    }

    #[test]
    fn repeated_pixels_are_deduplicated() {
        let s = generate_samples(&[[200.0f64, 200.0], [200.0, 200.0]], 400, 400, &boundary(8), 0);
        assert_eq!(s.len(), 8);
    }

    #[test]
    fn in_disk_radius_is_bounded_and_seeded() {
        let cfg = SamplingConfig { on_boundary: false, ..boundary(16) };
        let a = generate_samples(&[[200.0f64, 200.0]], 400, 400, &cfg, 3);
        assert_eq!(a, generate_samples(&[[200.0f64, 200.0]], 400, 400, &cfg, 3));
        for s in &a {
            let d = ((s.u_norm * 400.0 - 200.0).powi(2) + (s.v_norm * 400.0 - 200.0).powi(2)).sqrt();
            assert!(d > 0.0 && d <= 100.0 + 1e-9);
        }
    }

    #[test]
    fn depth_attachment_drops_invalid_pixels() {
        let depth = DepthMap::new(2, 1, vec![3.0, 0.0]).unwrap();
        let s = [PixelSample::new(0.25f64, 0.5), PixelSample::new(0.75, 0.5)];
        let d = attach_depth(&s, &depth);
        assert_eq!(d, vec![PixelSample { u_norm: 0.25, v_norm: 0.5, depth: Some(3.0) }]);
    }

    #[test]
    fn config_validation() {
        assert!(SamplingConfig::default().validate().is_ok());
        assert!(SamplingConfig { beta: 1.0, ..Default::default() }.validate().is_err());
        assert!(SamplingConfig { angular_resolution: 0, ..Default::default() }.validate().is_err());
    }
}
