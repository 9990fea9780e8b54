//! Versioned plain-text model files.
//!
//! ```text
//! gpgs-model v1
//! image_id 3            # or `none`
//! width 400
//! height 300
//! input_dim 2
//! samples 2
//! output x              # one block per output, in x y z r g b order
//! family matern
//! nu 0.5                # `none` for rbf
//! log_signal_var ...
//! log_lengthscale ...
//! log_noise_var ...
//! jitter ...
//! mean ...
//! std ...
//! data
//! <input_dim inputs> <6 normalized targets>    # `samples` rows
//! end
//! ```
//!
//! Reals are written with 17 significant digits, so a reloaded model refactorizes to
//! exactly the same Cholesky factors and reproduces posteriors bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::gp::{GpError, KernelConfig, KernelFamily, OutputNormalizer, Smoothness, TrainedGp, OUTPUTS, OUTPUT_NAMES};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

pub const MODEL_HEADER: &str = "gpgs-model v1";

fn real<T: Scalar>(v: T) -> String {
    format!("{:.16e}", v.as_f64())
}

pub fn write_model<T: Scalar, W: Write>(gp: &TrainedGp<T>, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{MODEL_HEADER}")?;
    match gp.image_id() {
        Some(id) => writeln!(w, "image_id {id}")?,
        None => writeln!(w, "image_id none")?,
    }
    writeln!(w, "width {}", gp.width())?;
    writeln!(w, "height {}", gp.height())?;
    writeln!(w, "input_dim {}", gp.input_dim())?;
    writeln!(w, "samples {}", gp.len())?;
    let norm = gp.normalizer();
    for (o, out) in gp.outputs().iter().enumerate() {
        let k = out.kernel();
        writeln!(w, "output {}", OUTPUT_NAMES[o])?;
        writeln!(w, "family {}", k.family.name())?;
        match k.family {
            KernelFamily::Matern(s) => writeln!(w, "nu {s}")?,
            KernelFamily::Rbf => writeln!(w, "nu none")?,
        }
        writeln!(w, "log_signal_var {}", real(k.log_signal_var))?;
        writeln!(w, "log_lengthscale {}", real(k.log_lengthscale))?;
        writeln!(w, "log_noise_var {}", real(k.log_noise_var))?;
        writeln!(w, "jitter {}", real(out.jitter()))?;
        writeln!(w, "mean {}", real(norm.mean[o]))?;
        writeln!(w, "std {}", real(norm.std[o]))?;
    }
    writeln!(w, "data")?;
    for (i, t) in gp.targets().iter().enumerate() {
        let row: Vec<String> = gp.inputs().row(i).iter().chain(t.iter()).map(|v| real(*v)).collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    writeln!(w, "end")?;
    w.flush()
}

pub fn write_model_file<T: Scalar>(gp: &TrainedGp<T>, path: impl AsRef<Path>) -> Result<(), GpError> {
    let f = File::create(path)?;
    write_model(gp, BufWriter::new(f))?;
    Ok(())
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> Lines<R> {
    fn err(&self, message: impl Into<String>) -> GpError {
        GpError::ModelFormat { line: self.line, message: message.into() }
    }

    fn next_line(&mut self) -> Result<String, GpError> {
        self.line += 1;
        match self.inner.next() {
            Some(l) => Ok(l?.trim().to_string()),
            None => Err(self.err("unexpected end of file")),
        }
    }

    /// Reads `key value` and returns the value.
    fn field(&mut self, key: &str) -> Result<String, GpError> {
        let l = self.next_line()?;
        match l.split_once(char::is_whitespace) {
            Some((k, v)) if k == key => Ok(v.trim().to_string()),
            _ => Err(self.err(format!("expected `{key} <value>`, found `{l}`"))),
        }
    }

    fn parse<V: std::str::FromStr>(&self, s: &str, what: &str) -> Result<V, GpError> {
        s.parse().map_err(|_| self.err(format!("cannot parse {what} from `{s}`")))
    }

    fn real<T: Scalar>(&mut self, key: &str) -> Result<T, GpError> {
        let v = self.field(key)?;
        let x: f64 = self.parse(&v, key)?;
        Ok(T::lit(x))
    }
}

pub fn read_model<T: Scalar, R: BufRead>(r: R) -> Result<TrainedGp<T>, GpError> {
    let mut lines = Lines { inner: r.lines(), line: 0 };
    let header = lines.next_line()?;
    if header != MODEL_HEADER {
        return Err(lines.err(format!("expected header `{MODEL_HEADER}`, found `{header}`")));
    }
    let image_id = match lines.field("image_id")?.as_str() {
        "none" => None,
        s => Some(lines.parse::<u32>(s, "image_id")?),
    };
    let v = lines.field("width")?;
    let width: u32 = lines.parse(&v, "width")?;
    let v = lines.field("height")?;
    let height: u32 = lines.parse(&v, "height")?;
    let v = lines.field("input_dim")?;
    let dim: usize = lines.parse(&v, "input_dim")?;
    let v = lines.field("samples")?;
    let n: usize = lines.parse(&v, "samples")?;
    if dim == 0 || n == 0 {
        return Err(lines.err("model must have a positive input dimension and sample count"));
    }

    let mut kernels = [KernelConfig::<T>::rbf(); OUTPUTS];
    let mut jitters = [T::zero(); OUTPUTS];
    let mut norm = OutputNormalizer::identity();
    for o in 0..OUTPUTS {
        let name = lines.field("output")?;
        if name != OUTPUT_NAMES[o] {
            return Err(lines.err(format!("expected output `{}`, found `{name}`", OUTPUT_NAMES[o])));
        }
        let family = lines.field("family")?;
        let nu = lines.field("nu")?;
        let family = match (family.as_str(), nu.as_str()) {
            ("rbf", _) => KernelFamily::Rbf,
            ("matern", nu) => {
                let v: f64 = lines.parse(nu, "nu")?;
                KernelFamily::Matern(Smoothness::from_nu(v).ok_or_else(|| lines.err(format!("unsupported nu {v}")))?)
            }
            (other, _) => return Err(lines.err(format!("unknown family `{other}`"))),
        };
        kernels[o] = KernelConfig {
            family,
            log_signal_var: lines.real("log_signal_var")?,
            log_lengthscale: lines.real("log_lengthscale")?,
            log_noise_var: lines.real("log_noise_var")?,
        };
        jitters[o] = lines.real("jitter")?;
        norm.mean[o] = lines.real("mean")?;
        norm.std[o] = lines.real("std")?;
        if !(norm.std[o] > T::zero()) {
            return Err(lines.err("normalizer std must be positive"));
        }
    }
    let marker = lines.next_line()?;
    if marker != "data" {
        return Err(lines.err(format!("expected `data`, found `{marker}`")));
    }
    let mut inputs = Vec::with_capacity(n * dim);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let l = lines.next_line()?;
        let vals = l
            .split_whitespace()
            .map(|s| lines.parse::<f64>(s, "data value").map(T::lit))
            .collect::<Result<Vec<T>, _>>()?;
        if vals.len() != dim + OUTPUTS {
            return Err(lines.err(format!("data row has {} values, expected {}", vals.len(), dim + OUTPUTS)));
        }
        inputs.extend_from_slice(&vals[..dim]);
        let mut t = [T::zero(); OUTPUTS];
        t.copy_from_slice(&vals[dim..]);
        targets.push(t);
    }
    let end = lines.next_line()?;
    if end != "end" {
        return Err(lines.err(format!("expected `end`, found `{end}`")));
    }
    let mut gp =
        TrainedGp::from_parts(kernels, jitters, norm, Matrix::from_row_major(n, dim, inputs), targets, width, height)?;
    gp.set_image_id(image_id);
    Ok(gp)
}

pub fn read_model_file<T: Scalar>(path: impl AsRef<Path>) -> Result<TrainedGp<T>, GpError> {
    read_model(BufReader::new(File::open(path)?))
}
