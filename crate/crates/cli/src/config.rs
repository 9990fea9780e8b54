//! Run configuration: built-in defaults, then a `key = value` config file, then flags.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use gpgs_core::densify::{FilterConfig, SamplingConfig};
use gpgs_core::gp::{KernelFamily, Smoothness, TrainConfig};

use crate::CliError;

/// Environment variable read when neither a flag nor the config file sets the seed.
pub const SEED_ENV: &str = "GPGS_SEED";

/// Settings shared by every subcommand. Each one can also be given in the `--config` file
/// under the same name, with `-` or `_` as separator.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// COLMAP text model directory (cameras.txt, images.txt, points3D.txt).
    #[arg(long, value_name = "DIR")]
    pub model_dir: Option<PathBuf>,
    /// Pixel-to-point dataset CSV written by build-dataset.
    #[arg(long, value_name = "FILE")]
    pub dataset: Option<PathBuf>,
    /// Directory receiving every output file.
    #[arg(long, value_name = "DIR")]
    pub output: Option<PathBuf>,
    /// Trained model file read by densify; repeat for several key frames.
    #[arg(long = "gp-model", value_name = "FILE")]
    pub gp_model: Vec<PathBuf>,
    /// Matérn smoothness: 0.5, 1.5 or 2.5.
    #[arg(long)]
    pub nu: Option<f64>,
    /// Kernel family: matern or rbf.
    #[arg(long)]
    pub kernel: Option<String>,
    /// Sampling radius as a fraction of the shorter image side.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Samples per training pixel.
    #[arg(long)]
    pub angular_resolution: Option<usize>,
    /// Fraction of candidates kept, by ascending colour variance.
    #[arg(long)]
    pub filter_quantile: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub l2_weight: Option<f64>,
    /// Larger datasets are subsampled to this many points before training.
    #[arg(long)]
    pub max_train_points: Option<usize>,
    /// Share of the dataset used for training by evaluate.
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Seed for subsampling, splitting and sampling (falls back to GPGS_SEED, then 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of key frames, ranked by linked-feature count.
    #[arg(long)]
    pub key_frames: Option<usize>,
    /// Directory of `<image stem>.pfm` depth maps; adds depth as a third GP input.
    #[arg(long, value_name = "DIR")]
    pub depth_dir: Option<PathBuf>,
    /// Write the point cloud as ASCII instead of binary PLY.
    #[arg(long)]
    pub ascii_ply: bool,
    /// `key = value` file with defaults for any of the flags above.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model_dir: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub gp_models: Vec<PathBuf>,
    pub key_frames: usize,
    pub kernel: KernelFamily,
    pub beta: f64,
    pub angular_resolution: usize,
    pub filter_quantile: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2_weight: f64,
    pub max_train_points: usize,
    pub train_fraction: f64,
    pub seed: u64,
    pub depth_dir: Option<PathBuf>,
    pub ply_binary: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model_dir: None,
            dataset: None,
            output: None,
            gp_models: Vec::new(),
            key_frames: 1,
            kernel: KernelFamily::Matern(Smoothness::Half),
            beta: 0.25,
            angular_resolution: 8,
            filter_quantile: 0.75,
            iterations: 1000,
            learning_rate: 0.01,
            l2_weight: 1e-6,
            max_train_points: 2000,
            train_fraction: 0.8,
            seed: 0,
            depth_dir: None,
            ply_binary: true,
        }
    }
}

/// Parses `key = value` lines; `#` starts a comment and blank lines are skipped. Keys are
/// normalized to use `-`.
pub fn parse_key_values(text: &str, file: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Usage(format!("{}:{}: expected `key = value`", file.display(), i + 1)));
        };
        out.insert(key.trim().replace('_', "-"), value.trim().to_string());
    }
    Ok(out)
}

fn parse_value<T: FromStr>(file: &Path, key: &str, value: &str) -> Result<T, CliError> {
    value.parse().map_err(|_| CliError::Usage(format!("{}: invalid value `{value}` for `{key}`", file.display())))
}

impl Flags {
    /// Flags read from a config file.
    fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
        let mut f = Flags::default();
        for (key, value) in parse_key_values(&text, path)? {
            let v = value.as_str();
            match key.as_str() {
                "model-dir" => f.model_dir = Some(v.into()),
                "dataset" => f.dataset = Some(v.into()),
                "output" => f.output = Some(v.into()),
                "gp-model" => f.gp_model = v.split(',').map(|p| PathBuf::from(p.trim())).collect(),
                "nu" => f.nu = Some(parse_value(path, &key, v)?),
                "kernel" => f.kernel = Some(v.to_string()),
                "beta" => f.beta = Some(parse_value(path, &key, v)?),
                "angular-resolution" => f.angular_resolution = Some(parse_value(path, &key, v)?),
                "filter-quantile" => f.filter_quantile = Some(parse_value(path, &key, v)?),
                "iterations" => f.iterations = Some(parse_value(path, &key, v)?),
                "learning-rate" => f.learning_rate = Some(parse_value(path, &key, v)?),
                "l2-weight" => f.l2_weight = Some(parse_value(path, &key, v)?),
                "max-train-points" => f.max_train_points = Some(parse_value(path, &key, v)?),
                "train-fraction" => f.train_fraction = Some(parse_value(path, &key, v)?),
                "seed" => f.seed = Some(parse_value(path, &key, v)?),
                "key-frames" => f.key_frames = Some(parse_value(path, &key, v)?),
                "depth-dir" => f.depth_dir = Some(v.into()),
                "ascii-ply" => f.ascii_ply = parse_value(path, &key, v)?,
                "ply-binary" => f.ascii_ply = !parse_value::<bool>(path, &key, v)?,
                other => return Err(CliError::Usage(format!("{}: unknown key `{other}`", path.display()))),
            }
        }
        Ok(f)
    }

    /// Fields set here win over those set in `lower`.
    fn over(self, lower: Flags) -> Flags {
        Flags {
            model_dir: self.model_dir.or(lower.model_dir),
            dataset: self.dataset.or(lower.dataset),
            output: self.output.or(lower.output),
            gp_model: if self.gp_model.is_empty() { lower.gp_model } else { self.gp_model },
            nu: self.nu.or(lower.nu),
            kernel: self.kernel.or(lower.kernel),
            beta: self.beta.or(lower.beta),
            angular_resolution: self.angular_resolution.or(lower.angular_resolution),
            filter_quantile: self.filter_quantile.or(lower.filter_quantile),
            iterations: self.iterations.or(lower.iterations),
            learning_rate: self.learning_rate.or(lower.learning_rate),
            l2_weight: self.l2_weight.or(lower.l2_weight),
            max_train_points: self.max_train_points.or(lower.max_train_points),
            train_fraction: self.train_fraction.or(lower.train_fraction),
            seed: self.seed.or(lower.seed),
            key_frames: self.key_frames.or(lower.key_frames),
            depth_dir: self.depth_dir.or(lower.depth_dir),
            ascii_ply: self.ascii_ply || lower.ascii_ply,
            config: self.config,
        }
    }
}

fn kernel_family(name: Option<&str>, nu: Option<f64>) -> Result<KernelFamily, CliError> {
    let base = match name {
        Some(n) => KernelFamily::from_str(n).map_err(|e| CliError::Usage(e.to_string()))?,
        None => RunConfig::default().kernel,
    };
    match (base, nu) {
        (family, None) => Ok(family),
        (KernelFamily::Rbf, Some(_)) => Err(CliError::Usage("--nu applies to the matern kernel only".into())),
        (KernelFamily::Matern(s), Some(nu)) => {
            let chosen = Smoothness::from_nu(nu)
                .ok_or_else(|| CliError::Usage(format!("nu {nu} is not one of 0.5, 1.5, 2.5")))?;
            // `matern32` together with `--nu 2.5` is contradictory, bare `matern` is not
            let explicit = name.is_some_and(|n| n.trim().len() > "matern".len());
            if explicit && chosen != s {
                return Err(CliError::Usage(format!("kernel `{}` conflicts with nu {nu}", name.unwrap_or(""))));
            }
            Ok(KernelFamily::Matern(chosen))
        }
    }
}

impl RunConfig {
    /// Defaults, overridden by the config file, overridden by `flags`. `env_seed` is the
    /// value of [`SEED_ENV`], used only when no seed is set otherwise.
    pub fn resolve(flags: Flags, env_seed: Option<&str>) -> Result<Self, CliError> {
        let file = match &flags.config {
            Some(path) => Flags::from_file(path)?,
            None => Flags::default(),
        };
        let f = flags.over(file);
        let d = RunConfig::default();
        let seed = match (f.seed, env_seed) {
            (Some(s), _) => s,
            (None, Some(s)) => {
                s.trim().parse().map_err(|_| CliError::Usage(format!("{SEED_ENV}=`{s}` is not an unsigned integer")))?
            }
            (None, None) => d.seed,
        };
        let cfg = RunConfig {
            kernel: kernel_family(f.kernel.as_deref(), f.nu)?,
            model_dir: f.model_dir,
            dataset: f.dataset,
            output: f.output,
            gp_models: f.gp_model,
            key_frames: f.key_frames.unwrap_or(d.key_frames),
            beta: f.beta.unwrap_or(d.beta),
            angular_resolution: f.angular_resolution.unwrap_or(d.angular_resolution),
            filter_quantile: f.filter_quantile.unwrap_or(d.filter_quantile),
            iterations: f.iterations.unwrap_or(d.iterations),
            learning_rate: f.learning_rate.unwrap_or(d.learning_rate),
            l2_weight: f.l2_weight.unwrap_or(d.l2_weight),
            max_train_points: f.max_train_points.unwrap_or(d.max_train_points),
            train_fraction: f.train_fraction.unwrap_or(d.train_fraction),
            seed,
            depth_dir: f.depth_dir,
            ply_binary: !f.ascii_ply,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let usage = |e: &dyn fmt::Display| CliError::Usage(e.to_string());
        if self.key_frames == 0 {
            return Err(CliError::Usage("key-frames must be at least 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(CliError::Usage(format!("train-fraction {} is not in (0, 1)", self.train_fraction)));
        }
        self.train_config().validate().map_err(|e| usage(&e))?;
        self.sampling().validate().map_err(|e| usage(&e))?;
        self.filter().validate().map_err(|e| usage(&e))?;
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            iterations: self.iterations,
            learning_rate: self.learning_rate,
            l2_weight: self.l2_weight,
            max_train_points: Some(self.max_train_points),
            seed: self.seed,
            ..TrainConfig::default()
        }
    }

    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig { beta: self.beta, angular_resolution: self.angular_resolution, ..SamplingConfig::default() }
    }

    pub fn filter(&self) -> FilterConfig {
        FilterConfig { quantile: self.filter_quantile }
    }

    /// The effective configuration in config-file syntax.
    pub fn to_file_text(&self) -> String {
        let mut out = String::from("# effective configuration of this run\n");
        let mut line = |k: &str, v: &dyn fmt::Display| {
            let _ = writeln!(out, "{k} = {v}");
        };
        for (key, path) in [("model-dir", &self.model_dir), ("dataset", &self.dataset), ("output", &self.output)] {
            if let Some(p) = path {
                line(key, &p.display());
            }
        }
        if !self.gp_models.is_empty() {
            let list: Vec<String> = self.gp_models.iter().map(|p| p.display().to_string()).collect();
            line("gp-model", &list.join(","));
        }
        line("kernel", &self.kernel.name());
        if let KernelFamily::Matern(s) = self.kernel {
            line("nu", &s);
        }
        line("key-frames", &self.key_frames);
        line("beta", &self.beta);
        line("angular-resolution", &self.angular_resolution);
        line("filter-quantile", &self.filter_quantile);
        line("iterations", &self.iterations);
        line("learning-rate", &self.learning_rate);
        line("l2-weight", &self.l2_weight);
        line("max-train-points", &self.max_train_points);
        line("train-fraction", &self.train_fraction);
        line("seed", &self.seed);
        if let Some(d) = &self.depth_dir {
            line("depth-dir", &d.display());
        }
        line("ascii-ply", &!self.ply_binary);
        out
    }
}
