//! COLMAP sparse models in the text format (`cameras.txt`, `images.txt`, `points3D.txt`).

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::sfm::SfmError;

#[derive(Debug, Clone, PartialEq)]
pub struct CameraIntrinsics {
    pub id: u32,
    /// COLMAP model name, e.g. `PINHOLE`.
    pub model: String,
    pub width: u32,
    pub height: u32,
    pub params: Vec<f64>,
}

/// A 2D keypoint, linked to a 3D point when it belongs to a track.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feature {
    pub u: f64,
    pub v: f64,
    /// `None` for keypoints without a triangulated point (`-1` in the file).
    pub point3d_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: u32,
    /// Rotation quaternion `(w, x, y, z)`.
    pub qvec: [f64; 4],
    pub tvec: [f64; 3],
    pub camera_id: u32,
    pub name: String,
    pub features: Vec<Feature>,
}

impl ImageRecord {
    /// Number of features linked to a 3D point.
    pub fn correspondence_count(&self) -> usize {
        self.features.iter().filter(|f| f.point3d_id.is_some()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrackElement {
    pub image_id: u32,
    pub feature_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Point3D {
    pub id: u64,
    pub position: [f64; 3],
    pub color: [u8; 3],
    pub error: f64,
    pub track: Vec<TrackElement>,
}

/// A parsed and cross-checked sparse reconstruction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseModel {
    pub cameras: Vec<CameraIntrinsics>,
    pub images: Vec<ImageRecord>,
    pub points3d: Vec<Point3D>,
}

impl SparseModel {
    pub fn camera(&self, id: u32) -> Option<&CameraIntrinsics> {
        self.cameras.iter().find(|c| c.id == id)
    }

    pub fn image(&self, id: u32) -> Option<&ImageRecord> {
        self.images.iter().find(|i| i.id == id)
    }

    /// Lookup table from point id to index in `points3d`.
    pub fn point_index(&self) -> HashMap<u64, usize> {
        self.points3d.iter().enumerate().map(|(i, p)| (p.id, i)).collect()
    }

    /// Checks id uniqueness and every cross reference.
    pub fn validate(&self) -> Result<(), SfmError> {
        let mut cams = HashSet::new();
        for c in &self.cameras {
            if !cams.insert(c.id) {
                return Err(SfmError::DanglingReference(format!("camera id {} is duplicated", c.id)));
            }
        }
        let points = self.point_index();
        if points.len() != self.points3d.len() {
            return Err(SfmError::DanglingReference("duplicate 3D point id".into()));
        }
        let mut images = HashMap::new();
        for img in &self.images {
            if images.insert(img.id, img.features.len()).is_some() {
                return Err(SfmError::DanglingReference(format!("image id {} is duplicated", img.id)));
            }
            if !cams.contains(&img.camera_id) {
                return Err(SfmError::DanglingReference(format!(
                    "image {} uses unknown camera {}",
                    img.id, img.camera_id
                )));
            }
            for (k, f) in img.features.iter().enumerate() {
                if let Some(pid) = f.point3d_id {
                    if !points.contains_key(&pid) {
                        return Err(SfmError::DanglingReference(format!(
                            "image {} feature {k} cites point {pid}, which is not in points3D",
                            img.id
                        )));
                    }
                }
            }
        }
        for p in &self.points3d {
            for t in &p.track {
                match images.get(&t.image_id) {
                    Some(&count) if t.feature_index < count => {}
                    Some(_) => {
                        return Err(SfmError::DanglingReference(format!(
                            "point {} track cites feature {} of image {}, which does not exist",
                            p.id, t.feature_index, t.image_id
                        )))
                    }
                    None => {
                        return Err(SfmError::DanglingReference(format!(
                            "point {} track cites unknown image {}",
                            p.id, t.image_id
                        )))
                    }
                }
            }
        }
        Ok(())
    }
}

struct Cursor<'a> {
    file: &'a str,
    line: usize,
}

impl Cursor<'_> {
    fn err(&self, message: impl Into<String>) -> SfmError {
        SfmError::MalformedLine { file: self.file.to_string(), line: self.line, message: message.into() }
    }

    fn num<V: FromStr>(&self, tok: Option<&str>, what: &str) -> Result<V, SfmError> {
        let tok = tok.ok_or_else(|| self.err(format!("missing {what}")))?;
        tok.parse().map_err(|_| self.err(format!("cannot parse {what} from `{tok}`")))
    }
}

fn is_comment(l: &str) -> bool {
    l.trim_start().starts_with('#')
}

fn parse_cameras(text: &str) -> Result<Vec<CameraIntrinsics>, SfmError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if is_comment(line) || line.trim().is_empty() {
            continue;
        }
        let c = Cursor { file: "cameras.txt", line: i + 1 };
        let mut t = line.split_whitespace();
        let id = c.num(t.next(), "camera id")?;
        let model = t.next().ok_or_else(|| c.err("missing camera model"))?.to_string();
        let width = c.num(t.next(), "width")?;
        let height = c.num(t.next(), "height")?;
        let params = t.map(|p| c.num(Some(p), "camera parameter")).collect::<Result<_, _>>()?;
        if width == 0 || height == 0 {
            return Err(c.err("camera width and height must be positive"));
        }
        out.push(CameraIntrinsics { id, model, width, height, params });
    }
    Ok(out)
}

fn parse_images(text: &str) -> Result<Vec<ImageRecord>, SfmError> {
    let mut out = Vec::new();
    let mut lines = text.lines().enumerate().filter(|(_, l)| !is_comment(l));
    while let Some((i, line)) = lines.next() {
        if line.trim().is_empty() {
            continue;
        }
        let c = Cursor { file: "images.txt", line: i + 1 };
        let mut t = line.split_whitespace();
        let id = c.num(t.next(), "image id")?;
        let mut qvec = [0.0; 4];
        for q in &mut qvec {
            *q = c.num(t.next(), "quaternion component")?;
        }
        let mut tvec = [0.0; 3];
        for v in &mut tvec {
            *v = c.num(t.next(), "translation component")?;
        }
        let camera_id = c.num(t.next(), "camera id")?;
        // Names may contain spaces; everything after the camera id belongs to it.
        let name = t.collect::<Vec<_>>().join(" ");
        if name.is_empty() {
            return Err(c.err("missing image name"));
        }
        // The keypoint line follows immediately, and is empty for images without keypoints.
        let mut features = Vec::new();
        if let Some((j, pts)) = lines.next() {
            let c = Cursor { file: "images.txt", line: j + 1 };
            let toks: Vec<&str> = pts.split_whitespace().collect();
            if !toks.len().is_multiple_of(3) {
                return Err(c.err("keypoint line must hold X Y POINT3D_ID triples"));
            }
            for tri in toks.chunks_exact(3) {
                let u = c.num(Some(tri[0]), "keypoint x")?;
                let v = c.num(Some(tri[1]), "keypoint y")?;
                let pid: i64 = c.num(Some(tri[2]), "point3d id")?;
                let point3d_id = match pid {
                    -1 => None,
                    p if p >= 0 => Some(p as u64),
                    p => return Err(c.err(format!("invalid point3d id {p}"))),
                };
                features.push(Feature { u, v, point3d_id });
            }
        }
        out.push(ImageRecord { id, qvec, tvec, camera_id, name, features });
    }
    Ok(out)
}

fn parse_points(text: &str) -> Result<Vec<Point3D>, SfmError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if is_comment(line) || line.trim().is_empty() {
            continue;
        }
        let c = Cursor { file: "points3D.txt", line: i + 1 };
        let mut t = line.split_whitespace();
        let id = c.num(t.next(), "point id")?;
        let mut position = [0.0; 3];
        for p in &mut position {
            *p = c.num(t.next(), "coordinate")?;
        }
        let mut color = [0u8; 3];
        for ch in &mut color {
            *ch = c.num(t.next(), "colour channel")?;
        }
        let error = c.num(t.next(), "reprojection error")?;
        let rest: Vec<&str> = t.collect();
        if !rest.len().is_multiple_of(2) {
            return Err(c.err("track must hold IMAGE_ID POINT2D_IDX pairs"));
        }
        let track = rest
            .chunks_exact(2)
            .map(|p| {
                Ok(TrackElement {
                    image_id: c.num(Some(p[0]), "track image id")?,
                    feature_index: c.num(Some(p[1]), "track keypoint index")?,
                })
            })
            .collect::<Result<_, SfmError>>()?;
        out.push(Point3D { id, position, color, error, track });
    }
    Ok(out)
}

/// Parses the three text files already loaded into memory.
pub fn parse_colmap_text(cameras: &str, images: &str, points3d: &str) -> Result<SparseModel, SfmError> {
    let model = SparseModel {
        cameras: parse_cameras(cameras)?,
        images: parse_images(images)?,
        points3d: parse_points(points3d)?,
    };
    model.validate()?;
    Ok(model)
}

/// Reads `cameras.txt`, `images.txt` and `points3D.txt` from `dir`.
pub fn parse_colmap_model(dir: impl AsRef<Path>) -> Result<SparseModel, SfmError> {
    let dir = dir.as_ref();
    let read = |name: &str| {
        let p = dir.join(name);
        fs::read_to_string(&p).map_err(|e| SfmError::io(p, e))
    };
    let cameras = read("cameras.txt")?;
    let images = read("images.txt")?;
    let points = read("points3D.txt")?;
    parse_colmap_text(&cameras, &images, &points)
}

/// Writes `model` as a COLMAP text model into `dir` (created if needed).
pub fn write_colmap_model(model: &SparseModel, dir: impl AsRef<Path>) -> Result<(), SfmError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| SfmError::io(dir, e))?;

    let mut cams = String::from(
        "# Camera list with one line of data per camera:\n#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n",
    );
    for c in &model.cameras {
        let _ = write!(cams, "{} {} {} {}", c.id, c.model, c.width, c.height);
        for p in &c.params {
            let _ = write!(cams, " {p}");
        }
        cams.push('\n');
    }

    let mut imgs = String::from(
        "# Image list with two lines of data per image:\n#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n#   POINTS2D[] as (X, Y, POINT3D_ID)\n",
    );
    for im in &model.images {
        let [qw, qx, qy, qz] = im.qvec;
        let [tx, ty, tz] = im.tvec;
        let _ = writeln!(imgs, "{} {qw} {qx} {qy} {qz} {tx} {ty} {tz} {} {}", im.id, im.camera_id, im.name);
        let feats: Vec<String> = im
            .features
            .iter()
            .map(|f| match f.point3d_id {
                Some(p) => format!("{} {} {p}", f.u, f.v),
                None => format!("{} {} -1", f.u, f.v),
            })
            .collect();
        imgs.push_str(&feats.join(" "));
        imgs.push('\n');
    }

    let mut pts = String::from(
        "# 3D point list with one line of data per point:\n#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n",
    );
    for p in &model.points3d {
        let [x, y, z] = p.position;
        let [r, g, b] = p.color;
        let _ = write!(pts, "{} {x} {y} {z} {r} {g} {b} {}", p.id, p.error);
        for t in &p.track {
            let _ = write!(pts, " {} {}", t.image_id, t.feature_index);
        }
        pts.push('\n');
    }

    for (name, body) in [("cameras.txt", cams), ("images.txt", imgs), ("points3D.txt", pts)] {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| SfmError::io(p, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const CAMERAS: &str = "# Camera list\n1 PINHOLE 400 300 350 350 200 150\n";
    const IMAGES: &str = "\
# Image list
1 1 0 0 0 0 0 0 1 left.png
10 20 1 30 40 2 50 60 -1 70 80 3
2 1 0 0 0 0.5 0 0 1 right.png

";
    const POINTS: &str = "\
# points
1 0 0 1 255 0 0 0.5 1 0
2 1 0 1 0 255 0 0.5 1 1
3 0 1 1 0 0 255 0.5 1 3
";

    #[test]
    fn parses_sentinels_and_empty_keypoint_lines() {
        let m = parse_colmap_text(CAMERAS, IMAGES, POINTS).unwrap();
        assert_eq!((m.cameras.len(), m.images.len(), m.points3d.len()), (1, 2, 3));
        let left = m.image(1).unwrap();
        assert_eq!(left.features.len(), 4);
        assert_eq!(left.features[2].point3d_id, None);
        assert_eq!(left.correspondence_count(), 3);
        assert!(m.image(2).unwrap().features.is_empty());
        assert_eq!(m.points3d[1].color, [0, 255, 0]);
        assert_eq!(m.camera(1).unwrap().params.len(), 4);
    }

    #[test]
    fn dangling_point_reference() {
        let images = "1 1 0 0 0 0 0 0 1 a.png\n5 5 999\n";
        let err = parse_colmap_text(CAMERAS, images, POINTS).unwrap_err();
        assert!(matches!(err, SfmError::DanglingReference(ref m) if m.contains("999")), "{err}");
    }

    #[test]
    fn dangling_track_reference() {
        let points = "1 0 0 1 255 0 0 0.5 1 7\n";
        let images = "1 1 0 0 0 0 0 0 1 a.png\n5 5 1\n";
        assert!(matches!(parse_colmap_text(CAMERAS, images, points), Err(SfmError::DanglingReference(_))));
    }

    #[test]
    fn malformed_line_reports_position() {
        let points = "# header\n1 0 0 one 255 0 0 0.5\n";
        match parse_colmap_text(CAMERAS, "", points) {
            Err(SfmError::MalformedLine { file, line, .. }) => {
                assert_eq!(file, "points3D.txt");
                assert_eq!(line, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_points_file_is_fine() {
        let m = parse_colmap_text(CAMERAS, "1 1 0 0 0 0 0 0 1 a.png\n\n", "# only headers\n").unwrap();
        assert!(m.points3d.is_empty());
    }

    #[test]
    fn write_then_parse_is_identity() {
        let m = parse_colmap_text(CAMERAS, IMAGES, POINTS).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_colmap_model(&m, dir.path()).unwrap();
        assert_eq!(parse_colmap_model(dir.path()).unwrap(), m);
    }

    #[test]
    fn missing_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("cameras.txt"), CAMERAS).unwrap();
        std::fs::write(dir.path().join("images.txt"), IMAGES).unwrap();
        match parse_colmap_model(dir.path()) {
            Err(SfmError::MissingFile(p)) => assert!(p.ends_with("points3D.txt")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
