//! Procedural scenes with known ground truth, used by the tests and for demos.
//!
//! A pinhole camera at the origin looks down +z at a surface parameterized by the
//! normalized image-plane coordinates `(a, b) = ((u - cx) / f, (v - cy) / f)`: the
//! surface point seen through pixel `(u, v)` is `d(a, b) · (a, b, 1)`. A second camera,
//! shifted sideways, sees part of the same points so the model has real tracks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::sfm::{CameraIntrinsics, DepthMap, Feature, ImageRecord, Point3D, SfmError, SparseModel, TrackElement};

/// Colour texture painted on the surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorField {
    /// Low-frequency sinusoids in every channel.
    Smooth,
    /// Constant colour patches with hard edges between them.
    Piecewise,
}

/// Shape of the depth function.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relief {
    /// Gentle sinusoidal height field.
    Smooth,
    /// The smooth field plus raised rectangular blocks with vertical edges.
    Stepped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    /// Points sampled on the surface as the dense reference.
    pub ground_truth_points: usize,
    /// How many of those become the sparse reconstruction.
    pub sparse_points: usize,
    pub color: ColorField,
    pub relief: Relief,
    /// Standard deviation of Gaussian noise added to sparse positions (scene units) and
    /// colours (on the [0, 1] scale, before quantization).
    pub noise: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 640,
            height: 480,
            focal: 500.0,
            ground_truth_points: 5000,
            sparse_points: 300,
            color: ColorField::Smooth,
            relief: Relief::Smooth,
            noise: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    /// Sparse reconstruction: image 1 is the full frontal view, image 2 a shifted view.
    pub model: SparseModel,
    /// Dense noise-free surface samples.
    pub ground_truth: Vec<[f64; 3]>,
    pub ground_truth_colors: Vec<[f64; 3]>,
    /// Per-pixel depth of image 1.
    pub depth: DepthMap,
}

impl SceneSpec {
    fn plane(&self, u: f64, v: f64) -> (f64, f64) {
        let (cx, cy) = (self.width as f64 / 2.0, self.height as f64 / 2.0);
        ((u - cx) / self.focal, (v - cy) / self.focal)
    }

    /// Depth along the optical axis of the surface seen at image-plane point `(a, b)`.
    pub fn depth_at(&self, a: f64, b: f64) -> f64 {
        let base = 4.0 + 0.4 * (3.0 * a).sin() * (2.0 * b).cos() + 0.2 * (2.5 * a + 1.5 * b).sin();
        match self.relief {
            Relief::Smooth => base,
            Relief::Stepped => {
                let mut d = base;
                if a > -0.2 && a < 0.25 && b > -0.15 && b < 0.2 {
                    d -= 0.8;
                }
                if a < -0.35 && b > 0.05 {
                    d += 0.6;
                }
                d
            }
        }
    }

    /// Surface colour in [0, 1] at image-plane point `(a, b)`.
    pub fn color_at(&self, a: f64, b: f64) -> [f64; 3] {
        match self.color {
            ColorField::Smooth => [
                0.5 + 0.35 * (4.0 * a + 1.0).sin(),
                0.5 + 0.3 * (5.0 * b - 0.5).cos(),
                0.5 + 0.25 * (3.0 * (a + b)).sin(),
            ],
            ColorField::Piecewise => {
                let i = ((a + 1.0) * 2.5).floor() as i64;
                let j = ((b + 1.0) * 2.5).floor() as i64;
                let cell = (i * 7 + j * 13).rem_euclid(5) as usize;
                const PALETTE: [[f64; 3]; 5] =
                    [[0.9, 0.2, 0.1], [0.1, 0.7, 0.2], [0.2, 0.3, 0.9], [0.95, 0.9, 0.2], [0.3, 0.2, 0.35]];
                PALETTE[cell]
            }
        }
    }

    fn surface(&self, u: f64, v: f64) -> [f64; 3] {
        let (a, b) = self.plane(u, v);
        let d = self.depth_at(a, b);
        [a * d, b * d, d]
    }

    fn project(&self, p: [f64; 3], shift: f64) -> Option<(f64, f64)> {
        let x = p[0] + shift;
        if p[2] <= 0.0 {
            return None;
        }
        let u = self.focal * x / p[2] + self.width as f64 / 2.0;
        let v = self.focal * p[1] / p[2] + self.height as f64 / 2.0;
        let inside = u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64;
        inside.then_some((u, v))
    }

    pub fn generate(&self) -> Result<SyntheticScene, SfmError> {
        if self.sparse_points > self.ground_truth_points || self.width == 0 || self.height == 0 {
            return Err(SfmError::DimensionMismatch(format!(
                "cannot draw {} sparse points from {} on a {}x{} image",
                self.sparse_points, self.ground_truth_points, self.width, self.height
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let (w, h) = (self.width as f64, self.height as f64);
        let mut pixels = Vec::with_capacity(self.ground_truth_points);
        let mut ground_truth = Vec::with_capacity(self.ground_truth_points);
        let mut ground_truth_colors = Vec::with_capacity(self.ground_truth_points);
        for _ in 0..self.ground_truth_points {
            let (u, v) = (rng.gen::<f64>() * w, rng.gen::<f64>() * h);
            let (a, b) = self.plane(u, v);
            pixels.push((u, v));
            ground_truth.push(self.surface(u, v));
            ground_truth_colors.push(self.color_at(a, b));
        }

        let noise = Normal::new(0.0, self.noise.max(0.0)).expect("finite standard deviation");
        let chosen = rand::seq::index::sample(&mut rng, self.ground_truth_points, self.sparse_points).into_vec();
        let shift = -0.4;
        let mut frontal = Vec::with_capacity(chosen.len() + 8);
        let mut side = Vec::new();
        let mut points3d = Vec::with_capacity(chosen.len());
        for (k, &i) in chosen.iter().enumerate() {
            let id = k as u64 + 1;
            let mut position = ground_truth[i];
            for c in &mut position {
                *c += noise.sample(&mut rng);
            }
            let color =
                ground_truth_colors[i].map(|c| ((c + noise.sample(&mut rng)).clamp(0.0, 1.0) * 255.0).round() as u8);
            let mut track = vec![TrackElement { image_id: 1, feature_index: frontal.len() }];
            frontal.push(Feature { u: pixels[i].0, v: pixels[i].1, point3d_id: Some(id) });
            // the side view keeps roughly two thirds of what it can see
            if let Some((u, v)) = self.project(ground_truth[i], shift).filter(|_| k % 3 != 0) {
                track.push(TrackElement { image_id: 2, feature_index: side.len() });
                side.push(Feature { u, v, point3d_id: Some(id) });
            }
            points3d.push(Point3D { id, position, color, error: 0.5, track });
        }
        // unmatched keypoints, as a real feature extractor would leave behind
        for _ in 0..8 {
            frontal.push(Feature { u: rng.gen::<f64>() * w, v: rng.gen::<f64>() * h, point3d_id: None });
        }

        let camera = CameraIntrinsics {
            id: 1,
            model: "PINHOLE".into(),
            width: self.width,
            height: self.height,
            params: vec![self.focal, self.focal, w / 2.0, h / 2.0],
        };
        let image = |id: u32, name: &str, tx: f64, features| ImageRecord {
            id,
            qvec: [1.0, 0.0, 0.0, 0.0],
            tvec: [tx, 0.0, 0.0],
            camera_id: 1,
            name: name.into(),
            features,
        };
        let model = SparseModel {
            cameras: vec![camera],
            images: vec![image(1, "frame_0001.png", 0.0, frontal), image(2, "frame_0002.png", shift, side)],
            points3d,
        };
        model.validate()?;

        let mut values = Vec::with_capacity(self.width as usize * self.height as usize);
        for row in 0..self.height {
            for col in 0..self.width {
                let (a, b) = self.plane(col as f64 + 0.5, row as f64 + 0.5);
                values.push(self.depth_at(a, b) as f32);
            }
        }
        let depth = DepthMap::new(self.width, self.height, values)?;
        Ok(SyntheticScene { spec: self.clone(), model, ground_truth, ground_truth_colors, depth })
    }
}
