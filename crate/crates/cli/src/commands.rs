use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use gpgs_core::densify::DensifyError;
use gpgs_core::gp::{read_model_file, train_gp, write_model_file, KernelConfig, TrainedGp, OUTPUT_NAMES};
use gpgs_core::metrics::evaluate_holdout;
use gpgs_core::pipeline::{densify_scene, DensifyConfig, KeyFrameModel};
use gpgs_core::sfm::{
    build_pixel_dataset, parse_colmap_model, read_dataset_csv, read_depth_pfm, select_key_frames, split_dataset,
    write_dataset_csv, write_ply, DepthMap, SfmError, SparseModel,
};
use gpgs_core::{Dataset64, TrainedGp64};

use crate::config::{parse_key_values, RunConfig};
use crate::CliError;

pub const RUN_CONFIG_FILE: &str = "run-config.txt";
pub const MODEL_FILE: &str = "model.gpgs";
pub const PLY_FILE: &str = "densified.ply";

/// `""` for a single key frame, `"_<rank>"` (1-based) when there are several.
fn suffix(rank: usize, count: usize) -> String {
    if count > 1 {
        format!("_{}", rank + 1)
    } else {
        String::new()
    }
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    value.as_deref().ok_or_else(|| CliError::Usage(format!("{flag} is required")))
}

/// Creates the output directory and records the effective configuration in it.
fn prepare_output(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = required(&cfg.output, "--output")?.to_path_buf();
    fs::create_dir_all(&dir).map_err(|e| CliError::write(&dir, e))?;
    write_text(&dir.join(RUN_CONFIG_FILE), &cfg.to_file_text())?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::write(path, e))
}

fn ensure_exists(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(SfmError::MissingFile(path.to_path_buf()).into())
    }
}

/// Depth map of `image_id`, read from `<depth_dir>/<image name stem>.pfm`.
fn load_depth(cfg: &RunConfig, model: &SparseModel, image_id: u32) -> Result<Option<DepthMap>, CliError> {
    let Some(dir) = &cfg.depth_dir else { return Ok(None) };
    let image = model.image(image_id).ok_or(SfmError::UnknownImage(image_id))?;
    let stem = Path::new(&image.name).file_stem().unwrap_or_default();
    let path = dir.join(stem).with_extension("pfm");
    Ok(Some(read_depth_pfm(path)?))
}

/// Sidecar holding the image metadata that the dataset CSV does not carry.
fn meta_path(dataset: &Path) -> PathBuf {
    dataset.with_extension("meta")
}

fn write_dataset(ds: &Dataset64, image_name: &str, path: &Path) -> Result<(), CliError> {
    write_dataset_csv(ds, path)?;
    let meta = format!(
        "image_id = {}\nimage_name = {}\nwidth = {}\nheight = {}\n",
        ds.image_id, image_name, ds.width, ds.height
    );
    write_text(&meta_path(path), &meta)
}

fn load_dataset(path: &Path) -> Result<Dataset64, CliError> {
    ensure_exists(path)?;
    let meta = meta_path(path);
    ensure_exists(&meta)?;
    let text = fs::read_to_string(&meta).map_err(|e| CliError::read(&meta, e))?;
    let fields = parse_key_values(&text, &meta)?;
    let field = |key: &str| -> Result<u32, CliError> {
        fields
            .get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| CliError::Input(format!("{}: missing or invalid `{key}`", meta.display())))
    };
    Ok(read_dataset_csv(path, field("image-id")?, field("width")?, field("height")?)?)
}

/// Writes one dataset per selected key frame and prints the ranking of every image.
/// Returns the dataset paths, best frame first.
fn build_datasets(cfg: &RunConfig, model: &SparseModel, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let ranked = select_key_frames(model, model.images.len())?;
    let chosen = &ranked[..cfg.key_frames.min(ranked.len())];
    println!("{:>4} {:>8} {:>8}  image", "rank", "image_id", "linked");
    for (rank, id) in ranked.iter().enumerate() {
        let image = model.image(*id).expect("ranked ids exist");
        let mark = if rank < chosen.len() { "*" } else { " " };
        println!("{:>4} {:>8} {:>8}{mark} {}", rank + 1, id, image.correspondence_count(), image.name);
    }
    let mut paths = Vec::with_capacity(chosen.len());
    for (rank, &id) in chosen.iter().enumerate() {
        let depth = load_depth(cfg, model, id)?;
        let ds: Dataset64 = build_pixel_dataset(model, id, depth.as_ref())?;
        let path = out.join(format!("dataset{}.csv", suffix(rank, chosen.len())));
        write_dataset(&ds, &model.image(id).expect("selected ids exist").name, &path)?;
        println!("wrote {} ({} samples from image {id})", path.display(), ds.len());
        paths.push(path);
    }
    Ok(paths)
}

fn train_one(cfg: &RunConfig, ds: &Dataset64) -> Result<TrainedGp64, CliError> {
    let train = cfg.train_config();
    let gp = train_gp(ds, &KernelConfig::new(cfg.kernel), &train)?;
    let losses = gp.final_losses(&train)?;
    let summary: Vec<String> = OUTPUT_NAMES.iter().zip(losses).map(|(n, l)| format!("{n} {l:.6}")).collect();
    println!("final objective per output: {}", summary.join("  "));
    Ok(gp)
}

fn loss_csv(gp: &TrainedGp<f64>) -> String {
    let mut out = String::from("iter,output,loss\n");
    for (name, output) in OUTPUT_NAMES.iter().zip(gp.outputs()) {
        for (i, loss) in output.loss_curve().iter().enumerate() {
            let _ = writeln!(out, "{i},{name},{loss}");
        }
    }
    out
}

/// Trains on `dataset` and writes the model and loss files with the given suffix.
fn train_to(cfg: &RunConfig, dataset: &Path, out: &Path, suffix: &str) -> Result<PathBuf, CliError> {
    let ds = load_dataset(dataset)?;
    println!("training {} outputs on {} samples from {}", OUTPUT_NAMES.len(), ds.len(), dataset.display());
    let gp = train_one(cfg, &ds)?;
    let model = out.join(format!("model{suffix}.gpgs"));
    write_model_file(&gp, &model)?;
    write_text(&out.join(format!("loss{suffix}.csv")), &loss_csv(&gp))?;
    println!("wrote {}", model.display());
    Ok(model)
}

fn densify_to(cfg: &RunConfig, models: &[PathBuf], out: &Path) -> Result<(), CliError> {
    let sparse = parse_colmap_model(required(&cfg.model_dir, "--model-dir")?)?;
    let mut gps = Vec::with_capacity(models.len());
    for path in models {
        ensure_exists(path)?;
        let gp: TrainedGp64 = read_model_file(path)?;
        let depth = match (gp.input_dim(), gp.image_id()) {
            (2, _) => None,
            (_, Some(id)) if cfg.depth_dir.is_some() => load_depth(cfg, &sparse, id)?,
            _ => {
                return Err(CliError::Usage(format!("{} uses depth inputs; pass --depth-dir", path.display())));
            }
        };
        gps.push((gp, depth));
    }
    let frames: Vec<KeyFrameModel<'_, f64>> =
        gps.iter().map(|(model, depth)| KeyFrameModel { model, depth: depth.as_ref() }).collect();
    let dcfg = DensifyConfig { sampling: cfg.sampling(), filter: cfg.filter(), seed: cfg.seed };
    let outcome = densify_scene(&sparse, &frames, &dcfg)?;
    let ply = out.join(PLY_FILE);
    write_ply(&outcome.cloud, &ply, cfg.ply_binary)?;
    write_text(&out.join("variance_report.txt"), &outcome.report.to_string())?;
    println!(
        "sparse {}  candidates {}  retained {}  total {}",
        sparse.points3d.len(),
        outcome.candidates,
        outcome.report.retained,
        outcome.cloud.len()
    );
    print!("{}", outcome.report);
    println!("wrote {}", ply.display());
    Ok(())
}

fn evaluate_to(cfg: &RunConfig, dataset: &Path, out: &Path, suffix: &str) -> Result<(), CliError> {
    let ds = load_dataset(dataset)?;
    let split = split_dataset(&ds, cfg.train_fraction, cfg.seed)?;
    if split.degenerate {
        println!(
            "split of {} samples leaves {} for training, {} for testing",
            ds.len(),
            split.train.len(),
            split.test.len()
        );
        return Err(SfmError::EmptyDataset.into());
    }
    println!("evaluating on {} held-out of {} samples", split.test.len(), ds.len());
    let gp = train_one(cfg, &split.train)?;
    let metrics = evaluate_holdout(&gp, &split.test)?;
    write_text(&out.join(format!("metrics{suffix}.txt")), &metrics.to_string())?;
    write_text(&out.join(format!("metrics{suffix}.csv")), &metrics.to_csv())?;
    print!("{metrics}");
    Ok(())
}

pub fn build_dataset(cfg: &RunConfig) -> Result<(), CliError> {
    let model = parse_colmap_model(required(&cfg.model_dir, "--model-dir")?)?;
    let out = prepare_output(cfg)?;
    build_datasets(cfg, &model, &out).map(drop)
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let dataset = required(&cfg.dataset, "--dataset")?;
    let out = prepare_output(cfg)?;
    train_to(cfg, dataset, &out, "").map(drop)
}

pub fn densify(cfg: &RunConfig) -> Result<(), CliError> {
    let out = prepare_output(cfg)?;
    let models = if cfg.gp_models.is_empty() { vec![out.join(MODEL_FILE)] } else { cfg.gp_models.clone() };
    densify_to(cfg, &models, &out)
}

pub fn evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    let dataset = required(&cfg.dataset, "--dataset")?;
    let out = prepare_output(cfg)?;
    evaluate_to(cfg, dataset, &out, "")
}

/// build-dataset, train and evaluate per key frame, then one densification over all of
/// the trained models.
pub fn pipeline(cfg: &RunConfig) -> Result<(), CliError> {
    let model = parse_colmap_model(required(&cfg.model_dir, "--model-dir")?)?;
    let out = prepare_output(cfg)?;
    let datasets = build_datasets(cfg, &model, &out)?;
    let mut models = Vec::with_capacity(datasets.len());
    for (rank, ds) in datasets.iter().enumerate() {
        models.push(train_to(cfg, ds, &out, &suffix(rank, datasets.len()))?);
    }
    densify_to(cfg, &models, &out)?;
    for (rank, ds) in datasets.iter().enumerate() {
        evaluate_to(cfg, ds, &out, &suffix(rank, datasets.len()))?;
    }
    Ok(())
}

/// Exit code for a library failure: numerical breakdowns are 3, bad settings 1, and
/// everything else is a problem with the input data.
pub fn core_exit_code(e: &gpgs_core::Error) -> u8 {
    use gpgs_core::gp::GpError;
    use gpgs_core::metrics::MetricsError;
    use gpgs_core::Error;
    if e.is_numerical() {
        return 3;
    }
    let config = matches!(
        e,
        Error::Gp(GpError::InvalidConfig(_))
            | Error::Densify(DensifyError::InvalidConfig(_))
            | Error::Densify(DensifyError::Gp(GpError::InvalidConfig(_)))
            | Error::Metrics(MetricsError::Gp(GpError::InvalidConfig(_)))
            | Error::Sfm(SfmError::InvalidArgument(_))
    );
    if config {
        1
    } else {
        2
    }
}
