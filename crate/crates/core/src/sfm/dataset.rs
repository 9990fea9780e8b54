//! Key-frame selection and the pixel-to-point training corpus.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::sfm::{DepthMap, SfmError, SparseModel};

/// GP input: pixel coordinates normalized by the image size, plus optional depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelSample<T> {
    pub u_norm: T,
    pub v_norm: T,
    pub depth: Option<T>,
}

impl<T: Scalar> PixelSample<T> {
    pub fn new(u_norm: T, v_norm: T) -> Self {
        Self { u_norm, v_norm, depth: None }
    }

    /// Feature vector fed to the GP: `[u, v]` or `[u, v, depth]`.
    pub fn features(&self) -> Vec<T> {
        match self.depth {
            Some(d) => vec![self.u_norm, self.v_norm, d],
            None => vec![self.u_norm, self.v_norm],
        }
    }
}

/// GP target `[x, y, z, r, g, b]`: world position, then colour in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetVector<T>(pub [T; 6]);

impl<T: Scalar> TargetVector<T> {
    pub fn position(&self) -> [T; 3] {
        [self.0[0], self.0[1], self.0[2]]
    }

    pub fn color(&self) -> [T; 3] {
        [self.0[3], self.0[4], self.0[5]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample<T> {
    pub input: PixelSample<T>,
    pub target: TargetVector<T>,
}

/// Pixel-to-point pairs of one key frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelToPointDataset<T> {
    pub image_id: u32,
    pub width: u32,
    pub height: u32,
    pub samples: Vec<Sample<T>>,
}

impl<T: Scalar> PixelToPointDataset<T> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// 2 without depth, 3 when every sample carries depth.
    pub fn input_dim(&self) -> Result<usize, SfmError> {
        let with_depth = self.samples.iter().filter(|s| s.input.depth.is_some()).count();
        match with_depth {
            0 => Ok(2),
            n if n == self.samples.len() => Ok(3),
            n => Err(SfmError::DimensionMismatch(format!(
                "{n} of {} samples carry depth; depth must be present on all or none",
                self.samples.len()
            ))),
        }
    }

    pub fn input_matrix(&self) -> Result<Matrix<T>, SfmError> {
        let d = self.input_dim()?;
        let data = self.samples.iter().flat_map(|s| s.input.features()).collect();
        Ok(Matrix::from_row_major(self.samples.len(), d, data))
    }

    /// Same image, different samples.
    pub fn with_samples(&self, samples: Vec<Sample<T>>) -> Self {
        Self { image_id: self.image_id, width: self.width, height: self.height, samples }
    }
}

/// Image ids ranked by linked-feature count (descending, ties by ascending id), truncated
/// to `k`.
pub fn select_key_frames(model: &SparseModel, k: usize) -> Result<Vec<u32>, SfmError> {
    if k == 0 {
        return Err(SfmError::InvalidArgument("key-frame count must be at least 1".into()));
    }
    let mut ranked: Vec<(usize, u32)> = model.images.iter().map(|i| (i.correspondence_count(), i.id)).collect();
    if ranked.iter().all(|(c, _)| *c == 0) {
        return Err(SfmError::NoCorrespondences);
    }
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(ranked.into_iter().take(k).map(|(_, id)| id).collect())
}

/// Builds the pixel-to-point dataset of `image_id`: one sample per linked feature, with
/// pixels divided by the camera size and colours divided by 255.
///
/// With a depth map, each sample takes the depth of the pixel containing it; samples on
/// invalid depth are dropped. Exact duplicate (input, target) pairs are kept once.
pub fn build_pixel_dataset<T: Scalar>(
    model: &SparseModel,
    image_id: u32,
    depth: Option<&DepthMap>,
) -> Result<PixelToPointDataset<T>, SfmError> {
    let image = model.image(image_id).ok_or(SfmError::UnknownImage(image_id))?;
    let camera = model.camera(image.camera_id).ok_or_else(|| {
        SfmError::DanglingReference(format!("image {image_id} uses unknown camera {}", image.camera_id))
    })?;
    if let Some(d) = depth {
        if d.width != camera.width || d.height != camera.height {
            return Err(SfmError::DimensionMismatch(format!(
                "depth map is {}x{} but camera {} is {}x{}",
                d.width, d.height, camera.id, camera.width, camera.height
            )));
        }
    }
    let points = model.point_index();
    let (w, h) = (camera.width as f64, camera.height as f64);
    let mut seen = HashSet::new();
    let mut samples = Vec::new();
    for f in &image.features {
        let Some(pid) = f.point3d_id else { continue };
        let p = &model.points3d[points[&pid]];
        let depth_value = match depth {
            Some(d) => match d.lookup(f.u, f.v) {
                Some(z) => Some(T::lit(z as f64)),
                None => continue,
            },
            None => None,
        };
        let input = PixelSample { u_norm: T::lit(f.u / w), v_norm: T::lit(f.v / h), depth: depth_value };
        let [x, y, z] = p.position;
        let [r, g, b] = p.color.map(|c| c as f64 / 255.0);
        let target = TargetVector([x, y, z, r, g, b].map(T::lit));
        let key: Vec<u64> = input.features().iter().chain(target.0.iter()).map(|v| v.as_f64().to_bits()).collect();
        if seen.insert(key) {
            samples.push(Sample { input, target });
        }
    }
    Ok(PixelToPointDataset { image_id, width: camera.width, height: camera.height, samples })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset<T> {
    pub train: PixelToPointDataset<T>,
    pub test: PixelToPointDataset<T>,
    /// Set when rounding left one side empty.
    pub degenerate: bool,
}

/// Seeded shuffle, then the first `round(train_fraction · n)` samples train.
pub fn split_dataset<T: Scalar>(
    ds: &PixelToPointDataset<T>,
    train_fraction: f64,
    seed: u64,
) -> Result<SplitDataset<T>, SfmError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(SfmError::InvalidArgument(format!("train fraction {train_fraction} is not in (0, 1)")));
    }
    if ds.is_empty() {
        return Err(SfmError::EmptyDataset);
    }
    let n = ds.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((train_fraction * n as f64).round() as usize).min(n);
    let pick = |idx: &[usize]| ds.with_samples(idx.iter().map(|&i| ds.samples[i]).collect());
    let train = pick(&order[..n_train]);
    let test = pick(&order[n_train..]);
    let degenerate = train.is_empty() || test.is_empty();
    Ok(SplitDataset { train, test, degenerate })
}

/// CSV header for a dataset, with or without the depth column.
fn csv_header(with_depth: bool) -> &'static str {
    if with_depth {
        "u_norm,v_norm,depth,x,y,z,r,g,b"
    } else {
        "u_norm,v_norm,x,y,z,r,g,b"
    }
}

/// Writes `u_norm,v_norm,[depth,]x,y,z,r,g,b` rows under a one-line header.
pub fn write_dataset_csv<T: Scalar>(ds: &PixelToPointDataset<T>, path: impl AsRef<Path>) -> Result<(), SfmError> {
    let with_depth = ds.input_dim()? == 3;
    let mut out = String::from(csv_header(with_depth));
    out.push('\n');
    for s in &ds.samples {
        let row: Vec<String> =
            s.input.features().iter().chain(s.target.0.iter()).map(|v| format!("{}", v.as_f64())).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    let path = path.as_ref();
    fs::write(path, out).map_err(|e| SfmError::io(path, e))
}

/// Reads a dataset written by [`write_dataset_csv`]; the image metadata is not part of
/// the file and is supplied by the caller.
pub fn read_dataset_csv<T: Scalar>(
    path: impl AsRef<Path>,
    image_id: u32,
    width: u32,
    height: u32,
) -> Result<PixelToPointDataset<T>, SfmError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| SfmError::io(path, e))?;
    let file = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let with_depth = match lines.next() {
        Some((_, h)) if h.trim() == csv_header(false) => false,
        Some((_, h)) if h.trim() == csv_header(true) => true,
        _ => {
            return Err(SfmError::MalformedLine { file, line: 1, message: "unrecognized dataset header".into() });
        }
    };
    let cols = if with_depth { 9 } else { 8 };
    let mut samples = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let vals = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| SfmError::MalformedLine { file: file.clone(), line: i + 1, message: e.to_string() })?;
        if vals.len() != cols {
            return Err(SfmError::MalformedLine {
                file,
                line: i + 1,
                message: format!("expected {cols} values, found {}", vals.len()),
            });
        }
        let o = if with_depth { 3 } else { 2 };
        let mut t = [T::zero(); 6];
        for (k, v) in vals[o..].iter().enumerate() {
            t[k] = T::lit(*v);
        }
        samples.push(Sample {
            input: PixelSample {
                u_norm: T::lit(vals[0]),
                v_norm: T::lit(vals[1]),
                depth: with_depth.then(|| T::lit(vals[2])),
            },
            target: TargetVector(t),
        });
    }
    Ok(PixelToPointDataset { image_id, width, height, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sfm::parse_colmap_text;

    fn model() -> SparseModel {
        parse_colmap_text(
            "1 PINHOLE 400 400 300 300 200 200\n",
            "1 1 0 0 0 0 0 0 1 a.png\n200 100 1 10 10 -1 30 40 2\n\
             2 1 0 0 0 0 0 0 1 b.png\n5 5 1 6 6 2\n\
             3 1 0 0 0 0 0 0 1 c.png\n\n",
            "1 1 2 3 255 0 0 0.1 1 0 2 0\n2 4 5 6 0 128 255 0.1 1 2 2 1\n",
        )
        .unwrap()
    }

    #[test]
    fn sample_arithmetic() {
        let ds = build_pixel_dataset::<f64>(&model(), 1, None).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.samples[0].input, PixelSample::new(0.5, 0.25));
        assert_eq!(ds.samples[0].target.0, [1.0, 2.0, 3.0, 1.0, 0.0, 0.0]);
        assert_eq!(ds.input_dim().unwrap(), 2);
    }

    #[test]
    fn image_without_links_gives_empty_dataset() {
        let ds = build_pixel_dataset::<f64>(&model(), 3, None).unwrap();
        assert!(ds.is_empty());
        assert!(matches!(build_pixel_dataset::<f64>(&model(), 77, None), Err(SfmError::UnknownImage(77))));
    }

    #[test]
    fn key_frames_tie_break_and_clamp() {
        let m = model();
        // images 1 and 2 both have two links; the smaller id wins
        assert_eq!(select_key_frames(&m, 1).unwrap(), vec![1]);
        assert_eq!(select_key_frames(&m, 10).unwrap(), vec![1, 2, 3]);
        assert!(select_key_frames(&m, 0).is_err());
    }

    #[test]
    fn no_correspondences_anywhere() {
        let m = parse_colmap_text("1 PINHOLE 4 4 1 1 2 2\n", "1 1 0 0 0 0 0 0 1 a.png\n1 1 -1\n", "").unwrap();
        assert!(matches!(select_key_frames(&m, 1), Err(SfmError::NoCorrespondences)));
    }

    #[test]
    fn depth_lookup_and_dimension_check() {
        let m = model();
        let mut depth = DepthMap::new(400, 400, vec![2.0; 400 * 400]).unwrap();
        let ds = build_pixel_dataset::<f64>(&m, 1, Some(&depth)).unwrap();
        assert_eq!(ds.samples[0].input.depth, Some(2.0));
        assert_eq!(ds.input_dim().unwrap(), 3);
        // invalid depth at the second feature (30, 40) drops it
        depth.values[40 * 400 + 30] = 0.0;
        assert_eq!(build_pixel_dataset::<f64>(&m, 1, Some(&depth)).unwrap().len(), 1);
        let small = DepthMap::new(2, 2, vec![1.0; 4]).unwrap();
        assert!(matches!(build_pixel_dataset::<f64>(&m, 1, Some(&small)), Err(SfmError::DimensionMismatch(_))));
    }

    fn numbered(n: usize) -> PixelToPointDataset<f64> {
        let samples = (0..n)
            .map(|i| Sample {
                input: PixelSample::new(i as f64 / n as f64, 0.5),
                target: TargetVector([i as f64, 0.0, 0.0, 0.0, 0.0, 0.0]),
            })
            .collect();
        PixelToPointDataset { image_id: 1, width: 10, height: 10, samples }
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = numbered(10);
        let a = split_dataset(&ds, 0.8, 7).unwrap();
        assert_eq!((a.train.len(), a.test.len()), (8, 2));
        assert!(!a.degenerate);
        assert_eq!(a, split_dataset(&ds, 0.8, 7).unwrap());
        let one = split_dataset(&numbered(1), 0.8, 0).unwrap();
        assert_eq!((one.train.len(), one.test.len()), (1, 0));
        assert!(one.degenerate);
        assert!(split_dataset(&ds, 1.0, 0).is_err());
        assert!(matches!(split_dataset(&numbered(0), 0.5, 0), Err(SfmError::EmptyDataset)));
    }

    #[test]
    fn csv_round_trip() {
        let ds = build_pixel_dataset::<f64>(&model(), 1, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        write_dataset_csv(&ds, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("u_norm,v_norm,x,y,z,r,g,b\n"));
        assert_eq!(read_dataset_csv::<f64>(&p, 1, 400, 400).unwrap(), ds);
    }
}
