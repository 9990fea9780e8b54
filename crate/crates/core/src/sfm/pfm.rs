//! Single-channel PFM depth maps.

use std::fs;
use std::path::Path;

use crate::sfm::SfmError;

/// Depth value marking a pixel without a usable measurement.
pub const INVALID_DEPTH: f32 = 0.0;

/// Row-major depth grid, top row first.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32, values: Vec<f32>) -> Result<Self, SfmError> {
        if values.len() != width as usize * height as usize {
            return Err(SfmError::BadDims(format!("{width}x{height} grid given {} values", values.len())));
        }
        Ok(Self { width, height, values })
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    /// Depth of the pixel containing `(u, v)`, or `None` when it is invalid or the point
    /// lies outside the map.
    pub fn lookup(&self, u: f64, v: f64) -> Option<f32> {
        if !(u >= 0.0 && v >= 0.0) {
            return None;
        }
        let (x, y) = (u.floor() as u64, v.floor() as u64);
        if x >= self.width as u64 || y >= self.height as u64 {
            return None;
        }
        let z = self.get(x as u32, y as u32);
        (z.is_finite() && z > 0.0).then_some(z)
    }
}

/// Reads a `Pf` file. The sign of the scale line selects the byte order (negative is
/// little endian); rows are stored bottom-up and returned top-down.
pub fn read_depth_pfm(path: impl AsRef<Path>) -> Result<DepthMap, SfmError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| SfmError::io(path, e))?;
    decode_pfm(&bytes)
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos]).ok().filter(|s| !s.is_empty())
}

pub(crate) fn decode_pfm(bytes: &[u8]) -> Result<DepthMap, SfmError> {
    let mut pos = 0;
    let magic = header_token(bytes, &mut pos).unwrap_or("");
    if magic != "Pf" {
        return Err(SfmError::BadMagic(magic.to_string()));
    }
    let mut dim = |what: &str| -> Result<u32, SfmError> {
        header_token(bytes, &mut pos)
            .and_then(|t| t.parse::<u32>().ok())
            .filter(|v| *v > 0)
            .ok_or_else(|| SfmError::BadDims(format!("missing or invalid {what}")))
    };
    let width = dim("width")?;
    let height = dim("height")?;
    let scale: f32 = header_token(bytes, &mut pos)
        .and_then(|t| t.parse().ok())
        .filter(|s: &f32| *s != 0.0 && s.is_finite())
        .ok_or_else(|| SfmError::BadDims("missing or invalid scale".into()))?;
    // exactly one whitespace byte separates the header from the payload
    pos += 1;
    let count = width as usize * height as usize;
    let payload = bytes.get(pos..).unwrap_or(&[]);
    if payload.len() < count * 4 {
        return Err(SfmError::TruncatedPayload { expected: count * 4, found: payload.len() });
    }
    let little = scale < 0.0;
    let mut values = vec![INVALID_DEPTH; count];
    let w = width as usize;
    for (i, chunk) in payload[..count * 4].chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let z = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let (row, col) = (i / w, i % w);
        let top_row = height as usize - 1 - row;
        values[top_row * w + col] = if z.is_finite() { z } else { INVALID_DEPTH };
    }
    DepthMap::new(width, height, values)
}

/// Writes a little-endian `Pf` file.
pub fn write_depth_pfm(map: &DepthMap, path: impl AsRef<Path>) -> Result<(), SfmError> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", map.width, map.height).into_bytes();
    for row in map.values.chunks(map.width as usize).rev() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let path = path.as_ref();
    fs::write(path, out).map_err(|e| SfmError::io(path, e))
}
