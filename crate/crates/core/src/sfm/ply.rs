//! PLY vertex clouds, ASCII or binary little endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::densify::{CloudPoint, DensifiedCloud, PointSource};
use crate::sfm::SfmError;

/// Writes `cloud` with properties `x y z` (float), `red green blue` (uchar) and `source`
/// (uchar, 0 for SfM points and 1 for GP predictions).
pub fn write_ply(cloud: &DensifiedCloud, path: impl AsRef<Path>, binary: bool) -> Result<(), SfmError> {
    let path = path.as_ref();
    if let Some(p) = cloud.points.iter().find(|p| !p.position.iter().all(|c| c.is_finite())) {
        return Err(SfmError::InvalidArgument(format!("non-finite point position {:?}", p.position)));
    }
    let format = if binary { "binary_little_endian" } else { "ascii" };
    let mut out = Vec::with_capacity(64 + cloud.points.len() * 16);
    write!(
        out,
        "ply\nformat {format} 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\n\
         property uchar source\nend_header\n",
        cloud.points.len()
    )
    .expect("writing to a Vec cannot fail");
    for p in &cloud.points {
        if binary {
            for c in p.position {
                out.extend_from_slice(&c.to_le_bytes());
            }
            out.extend_from_slice(&p.color);
            out.push(p.source as u8);
        } else {
            let [x, y, z] = p.position;
            let [r, g, b] = p.color;
            writeln!(out, "{x} {y} {z} {r} {g} {b} {}", p.source as u8).expect("writing to a Vec cannot fail");
        }
    }
    fs::write(path, out).map_err(|e| SfmError::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

struct Header {
    binary: bool,
    vertices: usize,
    props: Vec<(String, ScalarType)>,
    body_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, SfmError> {
    let bad = |m: &str| SfmError::PlyFormat(m.to_string());
    let mut offset = 0;
    let mut next_line = || -> Option<String> {
        let rest = bytes.get(offset..)?;
        let end = rest.iter().position(|&b| b == b'\n')?;
        offset += end + 1;
        Some(String::from_utf8_lossy(&rest[..end]).trim_end_matches('\r').to_string())
    };
    if next_line().as_deref() != Some("ply") {
        return Err(bad("missing `ply` magic"));
    }
    let mut binary = None;
    let mut vertices = None;
    let mut props = Vec::new();
    // the vertex element must come first; properties of later elements are ignored
    let mut in_vertex = false;
    loop {
        let line = next_line().ok_or_else(|| bad("header ends without `end_header`"))?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["end_header"] => break,
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", "ascii", _] => binary = Some(false),
            ["format", "binary_little_endian", _] => binary = Some(true),
            ["format", other, ..] => return Err(bad(&format!("unsupported format `{other}`"))),
            ["element", name, count] => {
                if *name == "vertex" {
                    if vertices.is_some() {
                        return Err(bad("duplicate vertex element"));
                    }
                    vertices = Some(count.parse::<usize>().map_err(|_| bad("invalid vertex count"))?);
                    in_vertex = true;
                } else if vertices.is_none() {
                    return Err(bad(&format!("element `{name}` precedes the vertex element")));
                } else {
                    in_vertex = false;
                }
            }
            ["property", "list", ..] if in_vertex => {
                return Err(SfmError::UnsupportedProperty(format!("list property in `{line}`")));
            }
            ["property", ty, name] if in_vertex => {
                let ty = ScalarType::parse(ty).ok_or_else(|| SfmError::UnsupportedProperty(format!("type `{ty}`")))?;
                props.push((name.to_string(), ty));
            }
            ["property", ..] if !in_vertex => {}
            _ => return Err(bad(&format!("unrecognized header line `{line}`"))),
        }
    }
    Ok(Header {
        binary: binary.ok_or_else(|| bad("missing format line"))?,
        vertices: vertices.ok_or_else(|| bad("missing vertex element"))?,
        props,
        body_offset: offset,
    })
}

#[derive(Default)]
struct Layout {
    position: [Option<usize>; 3],
    color: [Option<usize>; 3],
    source: Option<usize>,
}

fn layout(props: &[(String, ScalarType)]) -> Result<Layout, SfmError> {
    let mut l = Layout::default();
    for (i, (name, ty)) in props.iter().enumerate() {
        let slot = match name.as_str() {
            "x" => &mut l.position[0],
            "y" => &mut l.position[1],
            "z" => &mut l.position[2],
            "red" => &mut l.color[0],
            "green" => &mut l.color[1],
            "blue" => &mut l.color[2],
            "source" => &mut l.source,
            _ => continue,
        };
        let is_position = matches!(name.as_str(), "x" | "y" | "z");
        if !is_position && *ty != ScalarType::U8 {
            return Err(SfmError::UnsupportedProperty(format!("`{name}` must be uchar")));
        }
        if is_position && !matches!(ty, ScalarType::F32 | ScalarType::F64) {
            return Err(SfmError::UnsupportedProperty(format!("`{name}` must be float or double")));
        }
        *slot = Some(i);
    }
    if l.position.iter().any(Option::is_none) {
        return Err(SfmError::PlyFormat("vertex element lacks x, y or z".into()));
    }
    Ok(l)
}

fn assemble(l: &Layout, values: &[f64]) -> Result<CloudPoint, SfmError> {
    let position = l.position.map(|i| values[i.unwrap()] as f32);
    let color = l.color.map(|i| i.map_or(0, |i| values[i] as u8));
    let source = match l.source.map_or(0.0, |i| values[i]) {
        0.0 => PointSource::Sfm,
        1.0 => PointSource::Gp,
        s => return Err(SfmError::PlyFormat(format!("source value {s} is neither 0 nor 1"))),
    };
    Ok(CloudPoint { position, color, source })
}

/// Reads a vertex cloud. Files without colour or `source` properties read as black SfM
/// points; other scalar vertex properties are skipped.
pub fn read_ply(path: impl AsRef<Path>) -> Result<DensifiedCloud, SfmError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| SfmError::io(path, e))?;
    decode_ply(&bytes)
}

pub(crate) fn decode_ply(bytes: &[u8]) -> Result<DensifiedCloud, SfmError> {
    let header = parse_header(bytes)?;
    let l = layout(&header.props)?;
    let body = &bytes[header.body_offset..];
    let mut points = Vec::with_capacity(header.vertices);
    let mut values = vec![0.0; header.props.len()];
    if header.binary {
        let stride: usize = header.props.iter().map(|(_, t)| t.size()).sum();
        let needed = stride * header.vertices;
        if body.len() < needed {
            return Err(SfmError::TruncatedPayload { expected: needed, found: body.len() });
        }
        for rec in body[..needed].chunks_exact(stride.max(1)) {
            let mut at = 0;
            for ((_, ty), v) in header.props.iter().zip(values.iter_mut()) {
                *v = ty.decode(&rec[at..]);
                at += ty.size();
            }
            points.push(assemble(&l, &values)?);
        }
    } else {
        let text = std::str::from_utf8(body).map_err(|_| SfmError::PlyFormat("ASCII body is not UTF-8".into()))?;
        let mut lines = text.lines().filter(|s| !s.trim().is_empty());
        for k in 0..header.vertices {
            let line = lines
                .next()
                .ok_or_else(|| SfmError::PlyFormat(format!("expected {} vertices, found {k}", header.vertices)))?;
            let tok: Vec<&str> = line.split_whitespace().collect();
            if tok.len() != values.len() {
                return Err(SfmError::PlyFormat(format!("vertex {k} has {} values", tok.len())));
            }
            for (t, v) in tok.iter().zip(values.iter_mut()) {
                *v = t.parse().map_err(|_| SfmError::PlyFormat(format!("vertex {k}: bad value `{t}`")))?;
            }
            points.push(assemble(&l, &values)?);
        }
    }
    Ok(DensifiedCloud { points })
}
