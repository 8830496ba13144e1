//! Command-line pipeline: dataset generation, RGB pretraining, head
//! fitting, latent inference, rendering, interpolation, point-cloud and
//! feature export, and metric evaluation. Every command is deterministic
//! given its flags, and partial outputs are removed on failure.

use clap::{Args, Parser, Subcommand};
use semscene::camera::{orbit_pose, sample_sphere_poses, CameraView, Intrinsics};
use semscene::dataset::{
    read_pgm, read_pose, read_ppm, write_dataset, write_depth, write_pgm, write_pose, write_ppm,
    dataset_file_list, generate_dataset, read_dataset, Dataset, GenConfig, Split,
};
use semscene::error::{Error, Result};
use semscene::eval::{consistency_rate, miou, psnr, shape_miou, ConsistencyView, MetricReport, SegPair};
use semscene::ply::write_ply;
use semscene::synthetic::Template;
use semscene::training::{
    fit_seg_head, infer_latent, pretrain, select_labeled_subset, FitConfig, InferConfig,
    LabeledView, LossWeights, Observation, TrainConfig,
};
use semscene::{ArchDims, LatentCode, Model};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

const LATENT_HEADER: &str = "semscene-latent v1";

#[derive(Parser)]
#[command(
    name = "semscene",
    version,
    about = "Implicit 3D scene representations with per-point semantics, learned from posed images"
)]
struct CliArgs {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic part-labeled multi-view dataset.
    GenData(GenDataArgs),
    /// Train shared weights and per-instance latent codes on RGB views.
    Pretrain(PretrainArgs),
    /// Fit the linear segmentation head on labeled views, backbone frozen.
    FitHead(FitHeadArgs),
    /// Optimize a latent code for a new object from observed views.
    Infer(InferArgs),
    /// Render color, class and optional depth maps from a pose.
    Render(RenderArgs),
    /// Render a latent interpolation sweep along an orbiting camera.
    Interpolate(InterpolateArgs),
    /// Export a labeled surface point cloud as ASCII PLY.
    Pointcloud(PointcloudArgs),
    /// Compute segmentation, reconstruction and consistency metrics.
    Eval(EvalArgs),
    /// Export per-pixel features with ground-truth labels as ASCII rows.
    ExportFeatures(ExportFeaturesArgs),
}

fn main() {
    let cli = CliArgs::parse();
    let mut written: Vec<PathBuf> = Vec::new();
    if let Err(e) = run(cli.cmd, &mut written) {
        eprintln!("error: {e}");
        for p in written {
            let _ = fs::remove_file(&p);
        }
        std::process::exit(1);
    }
}

fn run(cmd: Cmd, written: &mut Vec<PathBuf>) -> Result<()> {
    match cmd {
        Cmd::GenData(a) => cmd_gen_data(a, written),
        Cmd::Pretrain(a) => cmd_pretrain(a, written),
        Cmd::FitHead(a) => cmd_fit_head(a, written),
        Cmd::Infer(a) => cmd_infer(a, written),
        Cmd::Render(a) => cmd_render(a, written),
        Cmd::Interpolate(a) => cmd_interpolate(a, written),
        Cmd::Pointcloud(a) => cmd_pointcloud(a, written),
        Cmd::Eval(a) => cmd_eval(a, written),
        Cmd::ExportFeatures(a) => cmd_export_features(a, written),
    }
}

// ── Config file support ──────────────────────────────────────────────

/// `key=value` lines ('#' comments, blank lines allowed). Explicit flags
/// override file values; unknown keys are rejected.
struct FileConfig {
    values: BTreeMap<String, String>,
    path: PathBuf,
}

impl FileConfig {
    fn load(path: Option<&PathBuf>) -> Result<FileConfig> {
        let mut values = BTreeMap::new();
        let path = match path {
            None => {
                return Ok(FileConfig { values, path: PathBuf::new() });
            }
            Some(p) => p.clone(),
        };
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::parse(&path, format!("line {}: expected key=value, got {line:?}", i + 1))
            })?;
            if values.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(Error::parse(&path, format!("duplicate key {}", k.trim())));
            }
        }
        Ok(FileConfig { values, path })
    }

    /// Removes and parses `key`, so leftovers can be reported as unknown.
    fn take<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.values.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::parse(&self.path, format!("bad value for {key}: {v:?}"))),
        }
    }

    fn finish(self) -> Result<()> {
        if let Some(k) = self.values.keys().next() {
            return Err(Error::parse(&self.path, format!("unknown key {k}")));
        }
        Ok(())
    }
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

// ── Shared helpers ───────────────────────────────────────────────────

fn track(written: &mut Vec<PathBuf>, path: &Path) -> PathBuf {
    written.push(path.to_path_buf());
    path.to_path_buf()
}

fn save_code(path: &Path, z: &LatentCode) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "{LATENT_HEADER}");
    let _ = writeln!(s, "{}", z.dim());
    let vals: Vec<String> = z.z.iter().map(|v| v.to_string()).collect();
    let _ = writeln!(s, "{}", vals.join(" "));
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn load_code(path: &Path) -> Result<LatentCode> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header != LATENT_HEADER {
        return Err(Error::VersionMismatch {
            found: header.to_string(),
            expected: LATENT_HEADER.to_string(),
        });
    }
    let dim: usize = lines
        .next()
        .and_then(|l| l.trim().parse().ok())
        .ok_or_else(|| Error::parse(path, "missing dimension line"))?;
    let vals: Vec<f64> = lines
        .next()
        .unwrap_or("")
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::parse(path, format!("bad value {t:?}"))))
        .collect::<Result<_>>()?;
    if vals.len() != dim {
        return Err(Error::parse(path, format!("expected {dim} values, got {}", vals.len())));
    }
    LatentCode::new(vals)
}

/// Resolves `--instance` / `--code` (exactly one) to a latent code.
fn resolve_code(model: &Model, instance: &Option<String>, code: &Option<PathBuf>) -> Result<LatentCode> {
    match (instance, code) {
        (Some(id), None) => Ok(model.latent(id)?.clone()),
        (None, Some(path)) => {
            let z = load_code(path)?;
            if z.dim() != model.dims.latent {
                return Err(Error::InvalidArgument(format!(
                    "code has dim {}, model expects {}",
                    z.dim(),
                    model.dims.latent
                )));
            }
            Ok(z)
        }
        _ => Err(Error::InvalidArgument(
            "pass exactly one of --instance and --code".into(),
        )),
    }
}

fn view_at(pose_path: &Path, resolution: usize) -> Result<CameraView> {
    let pose = read_pose(pose_path)?;
    CameraView::new(Intrinsics::centered(resolution), pose, resolution, resolution)
}

fn parse_template(s: &str) -> Result<Template> {
    Template::parse(s)
}

// ── gen-data ─────────────────────────────────────────────────────────

#[derive(Args)]
struct GenDataArgs {
    /// Object template: chair or table.
    #[arg(long)]
    template: String,
    #[arg(long)]
    instances: usize,
    #[arg(long, default_value_t = 16)]
    train_views: usize,
    #[arg(long, default_value_t = 8)]
    test_views: usize,
    #[arg(long, default_value_t = 32)]
    resolution: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2.5)]
    camera_radius: f64,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
}

fn cmd_gen_data(a: GenDataArgs, written: &mut Vec<PathBuf>) -> Result<()> {
    let cfg = GenConfig {
        template: parse_template(&a.template)?,
        instances: a.instances,
        train_views: a.train_views,
        test_views: a.test_views,
        resolution: a.resolution,
        seed: a.seed,
        camera_radius: a.camera_radius,
    };
    let ds = generate_dataset(&cfg)?;
    for rel in dataset_file_list(&ds) {
        track(written, &a.out.join(rel));
    }
    write_dataset(&ds, &a.out)?;
    println!(
        "wrote {} instances, {} views ({} train / {} test per instance) to {}",
        ds.instances.len(),
        ds.view_count(),
        a.train_views,
        a.test_views,
        a.out.display()
    );
    Ok(())
}

// ── pretrain ─────────────────────────────────────────────────────────

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Optional key=value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue from an existing checkpoint instead of initializing.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    rays: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Adam second-moment decay.
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Weight initialization seed (fresh models only).
    #[arg(long)]
    init_seed: Option<u64>,
    #[arg(long)]
    march_steps: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    marcher_hidden_dim: Option<usize>,
    #[arg(long)]
    lambda_rgb: Option<f64>,
    #[arg(long)]
    lambda_ce: Option<f64>,
    #[arg(long)]
    lambda_latent: Option<f64>,
    #[arg(long)]
    log_every: Option<usize>,
}

fn weights_from(
    cfg: &mut FileConfig,
    rgb: Option<f64>,
    ce: Option<f64>,
    latent: Option<f64>,
) -> Result<LossWeights> {
    let d = LossWeights::default();
    Ok(LossWeights {
        rgb: pick(rgb, cfg.take("lambda-rgb")?, d.rgb),
        ce: pick(ce, cfg.take("lambda-ce")?, d.ce),
        latent: pick(latent, cfg.take("lambda-latent")?, d.latent),
    })
}

fn cmd_pretrain(a: PretrainArgs, written: &mut Vec<PathBuf>) -> Result<()> {
    let mut file = FileConfig::load(a.config.as_ref())?;
    let data = read_dataset(&a.data)?;
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        steps: pick(a.steps, file.take("steps")?, defaults.steps),
        rays_per_step: pick(a.rays, file.take("rays")?, defaults.rays_per_step),
        lr: pick(a.lr, file.take("lr")?, defaults.lr),
        beta2: pick(a.beta2, file.take("beta2")?, defaults.beta2),
        seed: pick(a.seed, file.take("seed")?, defaults.seed),
        weights: weights_from(&mut file, a.lambda_rgb, a.lambda_ce, a.lambda_latent)?,
        log_every: pick(a.log_every, file.take("log-every")?, defaults.log_every),
    };
    let mut model = match &a.resume {
        Some(path) => {
            let model = Model::load(path)?;
            if model.dims.classes != data.classes {
                return Err(Error::InvalidArgument(format!(
                    "checkpoint has {} classes, dataset {}",
                    model.dims.classes, data.classes
                )));
            }
            model
        }
        None => {
            let dims = ArchDims {
                latent: pick(a.latent_dim, file.take("latent-dim")?, 32),
                hidden: pick(a.hidden_dim, file.take("hidden-dim")?, 32),
                feature: pick(a.feature_dim, file.take("feature-dim")?, 32),
                marcher_hidden: pick(a.marcher_hidden_dim, file.take("marcher-hidden-dim")?, 32),
                classes: data.classes,
            };
            let march = pick(a.march_steps, file.take("march-steps")?, 10);
            let init_seed = pick(a.init_seed, file.take("init-seed")?, 0);
            Model::init(dims, march, data.camera_radius, init_seed)?
        }
    };
    file.finish()?;
    let log = pretrain(&mut model, &data, &cfg)?;
    for line in &log.lines {
        println!("{line}");
    }
    track(written, &a.out);
    model.save(&a.out)?;
    println!("saved checkpoint to {}", a.out.display());
    Ok(())
}

// ── fit-head ─────────────────────────────────────────────────────────

#[derive(Args)]
struct FitHeadArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output checkpoint with the fitted head.
    #[arg(long)]
    out: PathBuf,
    /// Labels list: lines of `instance_id view_index`. Generated by
    /// class-covering sampling when omitted (written next to --out).
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Number of labeled views to sample when generating the list.
    #[arg(long)]
    label_count: Option<usize>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    log_every: Option<usize>,
}

fn parse_labels_file(path: &Path, data: &Dataset) -> Result<Vec<(usize, usize)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(id), Some(vi), None) = (it.next(), it.next(), it.next()) else {
            return Err(Error::parse(path, format!("line {}: expected `instance view`", i + 1)));
        };
        let vi: usize = vi
            .parse()
            .map_err(|_| Error::parse(path, format!("line {}: bad view index {vi:?}", i + 1)))?;
        let ii = data
            .instances
            .iter()
            .position(|inst| inst.id == id)
            .ok_or_else(|| Error::UnknownInstance(id.to_string()))?;
        if vi >= data.instances[ii].views.len() {
            return Err(Error::parse(
                path,
                format!("line {}: instance {id} has no view {vi}", i + 1),
            ));
        }
        pairs.push((ii, vi));
    }
    if pairs.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "labels list {} names no views",
            path.display()
        )));
    }
    Ok(pairs)
}

fn cmd_fit_head(a: FitHeadArgs, written: &mut Vec<PathBuf>) -> Result<()> {
    let mut file = FileConfig::load(a.config.as_ref())?;
    let data = read_dataset(&a.data)?;
    let mut model = Model::load(&a.checkpoint)?;
    let defaults = FitConfig::default();
    let cfg = FitConfig {
        steps: pick(a.steps, file.take("steps")?, defaults.steps),
        lr: pick(a.lr, file.take("lr")?, defaults.lr),
        log_every: pick(a.log_every, file.take("log-every")?, defaults.log_every),
    };
    let seed = pick(a.seed, file.take("seed")?, 0);
    let label_count = pick(a.label_count, file.take("label-count")?, 10);
    file.finish()?;
    let pairs = match &a.labels {
        Some(path) => parse_labels_file(path, &data)?,
        None => {
            let pairs = select_labeled_subset(&data, label_count, seed)?;
            let mut listing = String::new();
            for &(ii, vi) in &pairs {
                let _ = writeln!(listing, "{} {}", data.instances[ii].id, vi);
            }
            let list_path = a.out.with_extension("labels");
            track(written, &list_path);
            fs::write(&list_path, &listing).map_err(|e| Error::io(&list_path, e))?;
            println!("selected labeled views (written to {}):", list_path.display());
            print!("{listing}");
            pairs
        }
    };
    let labeled: Vec<LabeledView> = pairs
        .iter()
        .map(|&(ii, vi)| {
            let inst = &data.instances[ii];
            let vr = &inst.views[vi];
            LabeledView {
                instance_id: inst.id.clone(),
                view: vr.view.clone(),
                mask: vr.mask.clone(),
            }
        })
        .collect();
    let log = fit_seg_head(&mut model, &labeled, &cfg)?;
    for line in &log.lines {
        println!("{line}");
    }
    track(written, &a.out);
    model.save(&a.out)?;
    println!("saved checkpoint to {}", a.out.display());
    Ok(())
}

// ── infer ────────────────────────────────────────────────────────────

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output latent code file.
    #[arg(long)]
    out: PathBuf,
    /// Camera pose file per observed view (repeatable).
    #[arg(long, required = true)]
    pose: Vec<PathBuf>,
    /// Observed color image (PPM) per view; omit entirely for mask-only.
    #[arg(long)]
    rgb: Vec<PathBuf>,
    /// Observed class mask (PGM) per view; omit entirely for color-only.
    #[arg(long)]
    mask: Vec<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    rays: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda_rgb: Option<f64>,
    #[arg(long)]
    lambda_ce: Option<f64>,
    #[arg(long)]
    lambda_latent: Option<f64>,
    #[arg(long)]
    log_every: Option<usize>,
}

fn cmd_infer(a: InferArgs, written: &mut Vec<PathBuf>) -> Result<()> {
    let mut file = FileConfig::load(a.config.as_ref())?;
    let model = Model::load(&a.checkpoint)?;
    let defaults = InferConfig::default();
    let cfg = InferConfig {
        iters: pick(a.iters, file.take("iters")?, defaults.iters),
        rays_per_step: pick(a.rays, file.take("rays")?, defaults.rays_per_step),
        lr: pick(a.lr, file.take("lr")?, defaults.lr),
        seed: pick(a.seed, file.take("seed")?, defaults.seed),
        weights: weights_from(&mut file, a.lambda_rgb, a.lambda_ce, a.lambda_latent)?,
        log_every: pick(a.log_every, file.take("log-every")?, defaults.log_every),
    };
    file.finish()?;
    if !a.rgb.is_empty() && a.rgb.len() != a.pose.len() {
        return Err(Error::InvalidArgument(format!(
            "{} --rgb files for {} --pose files",
            a.rgb.len(),
            a.pose.len()
        )));
    }
    if !a.mask.is_empty() && a.mask.len() != a.pose.len() {
        return Err(Error::InvalidArgument(format!(
            "{} --mask files for {} --pose files",
            a.mask.len(),
            a.pose.len()
        )));
    }
    let mut observations = Vec::new();
    for (i, pose_path) in a.pose.iter().enumerate() {
        let rgb = match a.rgb.get(i) {
            Some(p) => Some(read_ppm(p)?),
            None => None,
        };
        let mask = match a.mask.get(i) {
            Some(p) => Some(read_pgm(p)?),
            None => None,
        };
        let res = match (&rgb, &mask) {
            (Some((_, w, h)), Some((_, mw, mh))) => {
                if (w, h) != (mw, mh) {
                    return Err(Error::InvalidArgument(format!(
                        "view {i}: color is {w}x{h} but mask is {mw}x{mh}"
                    )));
                }
                (*w, *h)
            }
            (Some((_, w, h)), None) => (*w, *h),
            (None, Some((_, w, h))) => (*w, *h),
            (None, None) => {
                return Err(Error::InvalidArgument(format!(
                    "view {i} has neither --rgb nor --mask"
                )))
            }
        };
        if res.0 != res.1 {
            return Err(Error::InvalidArgument(format!(
                "view {i}: only square observations are supported, got {}x{}",
                res.0, res.1
            )));
        }
        let view = view_at(pose_path, res.0)?;
        observations.push(Observation {
            view,
            rgb: rgb.map(|(v, _, _)| v),
            mask: mask.map(|(v, _, _)| v),
        });
    }
    let (code, log) = infer_latent(&model, &observations, &cfg)?;
    for line in &log.lines {
        println!("{line}");
    }
    track(written, &a.out);
    save_code(&a.out, &code)?;
    println!("saved latent code to {}", a.out.display());
    Ok(())
}

// ── render ───────────────────────────────────────────────────────────

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Instance id stored in the checkpoint.
    #[arg(long)]
    instance: Option<String>,
    /// Latent code file (alternative to --instance).
    #[arg(long)]
    code: Option<PathBuf>,
    #[arg(long)]
    pose: PathBuf,
    #[arg(long, default_value_t = 32)]
    resolution: usize,
    #[arg(long)]
    out_rgb: PathBuf,
    #[arg(long)]
    out_mask: PathBuf,
    #[arg(long)]
    out_depth: Option<PathBuf>,
}

fn cmd_render(a: RenderArgs, written: &mut Vec<PathBuf>) -> Result<()> {
    let model = Model::load(&a.checkpoint)?;
    let z = resolve_code(&model, &a.instance, &a.code)?;
    let view = view_at(&a.pose, a.resolution)?;
    let out = model.render_code(&z, &view)?;
    track(written, &a.out_rgb);
    write_ppm(&a.out_rgb, &out.rgb, out.width, out.height)?;
    track(written, &a.out_mask);
    write_pgm(&a.out_mask, &out.class_map(), out.width, out.height)?;
    if let Some(path) = &a.out_depth {
        track(written, path);
        write_depth(path, &out.depth, out.width, out.height)?;
    }
    println!("rendered {}x{} view to {}", out.width, out.height, a.out_rgb.display());
    Ok(())
}

// ── interpolate ──────────────────────────────────────────────────────

#[derive(Args)]
struct InterpolateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    instance_a: Option<String>,
    #[arg(long)]
    code_a: Option<PathBuf>,
    #[arg(long)]
    instance_b: Option<String>,
    #[arg(long)]
    code_b: Option<PathBuf>,
    /// Number of frames (>= 2; endpoints are exactly the input codes).
    #[arg(long, default_value_t = 8)]
    steps: usize,
    #[arg(long, default_value_t = 32)]
    resolution: usize,
    /// Camera orbit radius; checkpoint camera radius when omitted.
    #[arg(long)]
    radius: Option<f64>,
    /// Camera elevation above the equator, radians.
    #[arg(long, default_value_t = 0.5)]
    elevation: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

fn cmd_interpolate(a: InterpolateArgs, written: &mut Vec<PathBuf>) -> Result<()> {
    if a.steps < 2 {
        return Err(Error::InvalidArgument("interpolation needs at least 2 frames".into()));
    }
    let model = Model::load(&a.checkpoint)?;
    let za = resolve_code(&model, &a.instance_a, &a.code_a)?;
    let zb = resolve_code(&model, &a.instance_b, &a.code_b)?;
    let radius = a.radius.unwrap_or(model.camera_radius);
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    for i in 0..a.steps {
        let t = i as f64 / (a.steps - 1) as f64;
        let z = za.interpolate(&zb, t)?;
        let pose = orbit_pose(radius, a.elevation, t);
        let view =
            CameraView::new(Intrinsics::centered(a.resolution), pose, a.resolution, a.resolution)?;
        let out = model.render_code(&z, &view)?;
        let stem = a.out_dir.join(format!("frame_{i:03}"));
        track(written, &stem.with_extension("ppm"));
        write_ppm(&stem.with_extension("ppm"), &out.rgb, out.width, out.height)?;
        track(written, &stem.with_extension("pgm"));
        write_pgm(&stem.with_extension("pgm"), &out.class_map(), out.width, out.height)?;
        track(written, &stem.with_extension("pose"));
        write_pose(&stem.with_extension("pose"), &pose)?;
    }
    println!("wrote {} frames to {}", a.steps, a.out_dir.display());
    Ok(())
}

// ── pointcloud ───────────────────────────────────────────────────────

#[derive(Args)]
struct PointcloudArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    instance: Option<String>,
    #[arg(long)]
    code: Option<PathBuf>,
    /// Number of viewpoints sampled on the camera sphere.
    #[arg(long, default_value_t = 8)]
    views: usize,
    #[arg(long, default_value_t = 32)]
    resolution: usize,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn cmd_pointcloud(a: PointcloudArgs, written: &mut Vec<PathBuf>) -> Result<()> {
    let model = Model::load(&a.checkpoint)?;
    let z = resolve_code(&model, &a.instance, &a.code)?;
    let radius = a.radius.unwrap_or(model.camera_radius);
    let poses = sample_sphere_poses(a.views, radius, a.seed)?;
    let views: Result<Vec<CameraView>> = poses
        .into_iter()
        .map(|p| CameraView::new(Intrinsics::centered(a.resolution), p, a.resolution, a.resolution))
        .collect();
    let cloud = model.point_cloud_code(&z, &views?)?;
    track(written, &a.out);
    write_ply(&a.out, &cloud)?;
    println!("wrote {} labeled points to {}", cloud.len(), a.out.display());
    Ok(())
}

// ── eval ─────────────────────────────────────────────────────────────

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Metric report output path.
    #[arg(long)]
    out: PathBuf,
    /// Which split to evaluate: train or test.
    #[arg(long, default_value = "test")]
    split: String,
    /// Drop class 0 from the per-image class sets.
    #[arg(long)]
    ignore_background: bool,
    /// Sanity mode: use ground-truth masks and images as predictions.
    #[arg(long)]
    gt_as_pred: bool,
    /// View pairs for the consistency rate (0 disables).
    #[arg(long)]
    consistency_pairs: Option<usize>,
    /// Surface samples per view pair.
    #[arg(long)]
    consistency_samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn cmd_eval(a: EvalArgs, written: &mut Vec<PathBuf>) -> Result<()> {
    let mut file = FileConfig::load(a.config.as_ref())?;
    let pairs_n = pick(a.consistency_pairs, file.take("consistency-pairs")?, 50);
    let samples_n = pick(a.consistency_samples, file.take("consistency-samples")?, 200);
    let seed = pick(a.seed, file.take("seed")?, 0);
    file.finish()?;
    let split = Split::parse(&a.split)?;
    let data = read_dataset(&a.data)?;
    let model = Model::load(&a.checkpoint)?;

    // One render per evaluated view, reused by every metric.
    struct Evaluated {
        instance: usize,
        view: usize,
        pred_classes: Vec<u8>,
        pred_rgb: Vec<f64>,
    }
    let mut evaluated: Vec<Evaluated> = Vec::new();
    for (ii, inst) in data.instances.iter().enumerate() {
        for (vi, vr) in inst.views.iter().enumerate() {
            if vr.split != split {
                continue;
            }
            let (pred_classes, pred_rgb) = if a.gt_as_pred {
                (vr.mask.clone(), vr.rgb.clone())
            } else {
                let out = model.render(&inst.id, &vr.view)?;
                (out.class_map(), out.rgb)
            };
            evaluated.push(Evaluated { instance: ii, view: vi, pred_classes, pred_rgb });
        }
    }
    if evaluated.is_empty() {
        return Err(Error::InvalidArgument(format!("no views in split {}", split.tag())));
    }

    let seg_pairs: Vec<SegPair> = evaluated
        .iter()
        .map(|e| SegPair {
            pred: e.pred_classes.clone(),
            gt: data.instances[e.instance].views[e.view].mask.clone(),
        })
        .collect();
    let miou_v = miou(&seg_pairs, data.classes, a.ignore_background)?;
    let shape_v = shape_miou(&seg_pairs, data.classes, a.ignore_background)?;
    let psnr_mean = {
        let mut sum = 0.0;
        for e in &evaluated {
            sum += psnr(&e.pred_rgb, &data.instances[e.instance].views[e.view].rgb)?;
        }
        sum / evaluated.len() as f64
    };

    let consistency = if pairs_n == 0 {
        None
    } else {
        // Deterministic choice of same-instance view pairs.
        let mut all_pairs = Vec::new();
        for i in 0..evaluated.len() {
            for j in i + 1..evaluated.len() {
                if evaluated[i].instance == evaluated[j].instance {
                    all_pairs.push((i, j));
                }
            }
        }
        if all_pairs.is_empty() {
            None
        } else {
            // Evenly strided deterministic selection across the pair list.
            fn cview<'a>(data: &'a Dataset, e: &'a Evaluated) -> ConsistencyView<'a> {
                let vr = &data.instances[e.instance].views[e.view];
                ConsistencyView {
                    view: &vr.view,
                    gt_depth: &vr.depth,
                    pred_classes: &e.pred_classes,
                }
            }
            let take = pairs_n.min(all_pairs.len());
            let chosen: Vec<(ConsistencyView, ConsistencyView)> = (0..take)
                .map(|t| {
                    let (i, j) = all_pairs[t * all_pairs.len() / take];
                    (cview(&data, &evaluated[i]), cview(&data, &evaluated[j]))
                })
                .collect();
            Some(consistency_rate(&chosen, samples_n, seed)?)
        }
    };

    let report = MetricReport { miou: miou_v, shape_miou: shape_v, psnr_mean, consistency_rate: consistency };
    track(written, &a.out);
    fs::write(&a.out, report.to_text()).map_err(|e| Error::io(&a.out, e))?;
    print!("{}", report.to_text());
    Ok(())
}

// ── export-features ──────────────────────────────────────────────────

#[derive(Args)]
struct ExportFeaturesArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    instance: Option<String>,
    #[arg(long)]
    code: Option<PathBuf>,
    #[arg(long)]
    pose: PathBuf,
    /// Ground-truth class mask (PGM) supplying the label column.
    #[arg(long)]
    mask: PathBuf,
    #[arg(long, default_value_t = 32)]
    resolution: usize,
    #[arg(long)]
    out: PathBuf,
}

fn cmd_export_features(a: ExportFeaturesArgs, written: &mut Vec<PathBuf>) -> Result<()> {
    let model = Model::load(&a.checkpoint)?;
    let z = resolve_code(&model, &a.instance, &a.code)?;
    let (mask, mw, mh) = read_pgm(&a.mask)?;
    if (mw, mh) != (a.resolution, a.resolution) {
        return Err(Error::InvalidArgument(format!(
            "mask is {mw}x{mh}, expected {0}x{0}",
            a.resolution
        )));
    }
    let view = view_at(&a.pose, a.resolution)?;
    let out = model.render_code(&z, &view)?;
    let n = model.dims.feature;
    let mut text = String::new();
    for (i, &label) in mask.iter().enumerate() {
        for f in 0..n {
            let _ = write!(text, "{} ", out.features[i * n + f]);
        }
        let _ = writeln!(text, "{label}");
    }
    track(written, &a.out);
    fs::write(&a.out, text).map_err(|e| Error::io(&a.out, e))?;
    println!("wrote {} feature rows to {}", mask.len(), a.out.display());
    Ok(())
}
