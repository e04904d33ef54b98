use std::f64::consts::TAU;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use humanfield::body::{deform, load_body, make_toy_body, save_body, BodyModel, Pose, Shape};
use humanfield::error::{Error, Result};
use humanfield::fields::{load_checkpoint, FieldConfig, Generator, Template};
use humanfield::geometry::{boxes_to_obj, canonical_part_boxes, pose_boxes, Camera, DEFAULT_BOX_MARGIN};
use humanfield::io::{write_atomic, write_pfm, write_png};
use humanfield::math::Vec3;
use humanfield::render::{render_gradcheck, render_plan, RenderConfig, RenderOutput, RenderPlan, Scene};
use humanfield::sampler::{
    bin_histogram, histogram_csv, load_metadata, pose_guided_weights, sample_batch, sample_latent, DatasetMeta,
    MetaCamera, SamplerConfig, SamplingMode, DEFAULT_BINS, DEFAULT_SIGMA_DEG,
};
use humanfield::train::{synthetic_set, DiscConfig, Discriminator, TrainConfig, Trainer, TrainingSet};

/// Posable human neural fields: rendering, pose sampling and toy training.
#[derive(Parser)]
#[command(name = "humanfield", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a checkpoint to PNG (and optionally PFM depth).
    Render(RenderArgs),
    /// Train on a small synthetic (or supplied) dataset.
    TrainToy(TrainArgs),
    /// Pose-guided sampling histogram of a metadata file.
    SamplePoses(SampleArgs),
    /// Finite-difference check of render gradients on a fresh network.
    Gradcheck(GradcheckArgs),
    /// Export posed part boxes as Wavefront OBJ.
    InspectBoxes(BoxArgs),
    /// Render frames along a straight line between two latent codes.
    Interpolate(InterpolateArgs),
    /// Write the procedural toy body as JSON.
    MakeBody(MakeBodyArgs),
}

#[derive(Args)]
struct SceneArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    body: PathBuf,
    /// JSON file {"theta": [[x, y, z], ...], "translation": [x, y, z]}.
    #[arg(long)]
    pose: Option<PathBuf>,
    /// JSON file {"beta": [...]}.
    #[arg(long)]
    shape: Option<PathBuf>,
    /// JSON camera {"fx", "fy", "cx", "cy", "R", "t"} with world-to-camera R, t.
    #[arg(long)]
    camera: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 512)]
    height: usize,
    /// Seeds the stratified ray samples.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Bin-center ray samples instead of stratified jitter.
    #[arg(long)]
    midpoint: bool,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    scene: SceneArgs,
    /// Seeds the latent code; defaults to --seed.
    #[arg(long)]
    z_seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    depth_out: Option<PathBuf>,
    /// Per-pixel accumulated opacity as PFM.
    #[arg(long)]
    opacity_out: Option<PathBuf>,
}

#[derive(Args)]
struct InterpolateArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[arg(long)]
    z1_seed: u64,
    #[arg(long)]
    z2_seed: u64,
    #[arg(long, default_value_t = 8)]
    steps: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    out_dir: PathBuf,
    /// JSON training configuration; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Metadata with image paths; without it a synthetic set is rendered.
    #[arg(long)]
    meta: Option<PathBuf>,
    /// Body model JSON; without it the toy body is generated.
    #[arg(long)]
    body: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    parts: usize,
    #[arg(long, default_value_t = 256)]
    verts_per_part: usize,
    /// Synthetic views, evenly spaced in yaw.
    #[arg(long, default_value_t = 4)]
    views: usize,
    #[arg(long, default_value_t = 32)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Full-width networks instead of the narrow toy variant.
    #[arg(long)]
    full: bool,
    #[arg(long)]
    alpha_init: Option<f64>,
    /// Template SDF grid side; 0 queries the mesh directly.
    #[arg(long)]
    sdf_grid: Option<usize>,
    #[arg(long, default_value_t = 0)]
    checkpoint_every: u64,
    /// Use the R1 weights as given instead of rescaling them from 512x256
    /// to the training resolution.
    #[arg(long)]
    native_r1: bool,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    meta: PathBuf,
    /// Body model JSON used to find head directions; defaults to the toy body.
    #[arg(long)]
    body: Option<PathBuf>,
    #[arg(long, default_value = "gaussian")]
    mode: SamplingMode,
    #[arg(long, default_value_t = DEFAULT_SIGMA_DEG)]
    sigma_deg: f64,
    #[arg(long, default_value_t = 0.0)]
    mu_deg: f64,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long, default_value_t = 100_000)]
    draws: usize,
    #[arg(long)]
    out_csv: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-3)]
    threshold: f64,
    #[arg(long, default_value_t = 2)]
    parts: usize,
    #[arg(long, default_value_t = 8)]
    width: usize,
    #[arg(long, default_value_t = 16)]
    height: usize,
    /// Hit pixels in the objective.
    #[arg(long, default_value_t = 12)]
    pixels: usize,
    /// Entries checked per parameter family.
    #[arg(long, default_value_t = 3)]
    per_group: usize,
    #[arg(long, default_value_t = 1e-6)]
    step: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BoxArgs {
    #[arg(long)]
    body: Option<PathBuf>,
    #[arg(long)]
    pose: Option<PathBuf>,
    #[arg(long)]
    shape: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BOX_MARGIN)]
    margin: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MakeBodyArgs {
    #[arg(long, default_value_t = 16)]
    parts: usize,
    #[arg(long, default_value_t = 256)]
    verts_per_part: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseFile {
    theta: Vec<[f64; 3]>,
    #[serde(default)]
    translation: [f64; 3],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ShapeFile {
    beta: Vec<f64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Render(a) => cmd_render(a),
        Command::TrainToy(a) => cmd_train(a),
        Command::SamplePoses(a) => cmd_sample(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::InspectBoxes(a) => cmd_boxes(a),
        Command::Interpolate(a) => cmd_interpolate(a),
        Command::MakeBody(a) => cmd_make_body(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) => 1,
        Error::Data(_) | Error::Io { .. } | Error::Json(_) => 2,
        Error::Numeric(_) => 3,
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn load_pose(path: Option<&Path>, model: &BodyModel) -> Result<Pose> {
    let Some(path) = path else { return Ok(Pose::zero(model.joint_count())) };
    let f: PoseFile = read_json(path)?;
    let pose = Pose { axis_angle: f.theta.into_iter().map(Vec3::from).collect(), global_translation: Vec3::from(f.translation) };
    pose.validate(model).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(pose)
}

fn load_shape(path: Option<&Path>, model: &BodyModel) -> Result<Shape> {
    let Some(path) = path else { return Ok(Shape::zero(model.shape_dim())) };
    let f: ShapeFile = read_json(path)?;
    let shape = Shape { coefficients: f.beta };
    shape.validate(model).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(shape)
}

fn body_or_toy(path: Option<&Path>, parts: usize, verts_per_part: usize) -> Result<BodyModel> {
    match path {
        Some(p) => load_body(p),
        None => make_toy_body(parts, verts_per_part, 0),
    }
}

fn latent(seed: u64, dim: usize) -> Result<Vec<f64>> {
    sample_latent(&mut ChaCha8Rng::seed_from_u64(seed), dim)
}

/// Everything a render needs except the latent code.
struct Loaded {
    gen: Generator,
    model: BodyModel,
    template: Template,
    plan: RenderPlan,
}

fn load_scene(a: &SceneArgs) -> Result<Loaded> {
    if a.width == 0 || a.height == 0 {
        return Err(Error::InvalidArgument("image size must be positive".into()));
    }
    let gen = load_checkpoint(&a.checkpoint)?.generator()?;
    let model = load_body(&a.body)?;
    if model.part_count() != gen.config.part_count {
        return Err(Error::Data(format!("body has {} parts, checkpoint {}", model.part_count(), gen.config.part_count)));
    }
    let pose = load_pose(a.pose.as_deref(), &model)?;
    let shape = load_shape(a.shape.as_deref(), &model)?;
    let camera = match &a.camera {
        Some(p) => read_json::<MetaCamera>(p)?.to_camera(a.width, a.height)?,
        None => Camera::full_body(a.width, a.height),
    };
    let template = Template::new(&model, &gen.config)?;
    let cfg = RenderConfig { deterministic_midpoint: a.midpoint, ..RenderConfig::default() };
    let scene = Scene { shape, pose, camera };
    let plan = RenderPlan::build(&model, &template, &scene, &cfg, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    Ok(Loaded { gen, model, template, plan })
}

fn draw(l: &Loaded, z: &[f64]) -> Result<RenderOutput> {
    render_plan(&l.gen, &l.template, &l.plan, &l.gen.film(z)?)
}

fn cmd_render(a: RenderArgs) -> Result<ExitCode> {
    let start = Instant::now();
    let l = load_scene(&a.scene)?;
    let z = latent(a.z_seed.unwrap_or(a.scene.seed), l.gen.config.latent_dim)?;
    let out = draw(&l, &z)?;
    write_png(&a.out, &out.to_image())?;
    if let Some(p) = &a.depth_out {
        write_pfm(p, out.width, out.height, &out.depth)?;
    }
    if let Some(p) = &a.opacity_out {
        write_pfm(p, out.width, out.height, &out.opacity)?;
    }
    println!(
        "query_count {} hit_rays {} body_vertices {} seconds {:.3}",
        out.query_count,
        out.hit_rays,
        l.model.vertices.len(),
        start.elapsed().as_secs_f64()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_interpolate(a: InterpolateArgs) -> Result<ExitCode> {
    if a.steps < 2 {
        return Err(Error::InvalidArgument(format!("--steps must be at least 2, got {}", a.steps)));
    }
    let l = load_scene(&a.scene)?;
    let dim = l.gen.config.latent_dim;
    let (z1, z2) = (latent(a.z1_seed, dim)?, latent(a.z2_seed, dim)?);
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let digits = (a.steps - 1).to_string().len().max(3);
    for i in 0..a.steps {
        let t = i as f64 / (a.steps - 1) as f64;
        // the endpoints are exactly z1 and z2
        let z: Vec<f64> = match i {
            0 => z1.clone(),
            _ if i == a.steps - 1 => z2.clone(),
            _ => z1.iter().zip(&z2).map(|(x, y)| (1.0 - t) * x + t * y).collect(),
        };
        let out = draw(&l, &z)?;
        write_png(&a.out_dir.join(format!("frame_{i:0digits$}.png")), &out.to_image())?;
    }
    println!("frames {}", a.steps);
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(a: TrainArgs) -> Result<ExitCode> {
    let mut config: TrainConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = a.iters {
        config.iters = v;
    }
    if let Some(v) = a.batch {
        config.batch = v;
    }
    if let Some(v) = a.seed {
        config.seed = v;
    }
    config.validate()?;
    let model = body_or_toy(a.body.as_deref(), a.parts, a.verts_per_part)?;
    let data = match &a.meta {
        Some(p) => TrainingSet::load(&model, p, config.sampler.bins)?,
        None => {
            if a.views == 0 {
                return Err(Error::InvalidArgument("--views must be positive".into()));
            }
            let yaws: Vec<f64> = (0..a.views).map(|i| TAU * i as f64 / a.views as f64).collect();
            synthetic_set(&model, &yaws, a.width, a.height, config.sampler.bins)?
        }
    };
    if !a.native_r1 {
        config = config.with_r1_scaled_to(data.height, data.width);
    }
    let part_count = model.part_count();
    let mut fc = if a.full { FieldConfig::new(part_count) } else { FieldConfig::small(part_count) };
    if let Some(v) = a.alpha_init {
        fc.alpha_init = v;
    }
    if let Some(v) = a.sdf_grid {
        fc.sdf_grid = (v > 0).then_some(v);
    }
    let gen = Generator::new(fc, config.seed)?;
    let dc = if a.full { DiscConfig::desk(data.height, data.width) } else { DiscConfig::toy(data.height, data.width) };
    let disc = Discriminator::new(dc, config.seed.wrapping_add(1))?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    save_body(&model, &a.out_dir.join("body.json"))?;
    let iters = config.iters;
    let mut trainer = Trainer::new(gen, disc, model, data, config)?;
    let log_path = a.out_dir.join("log.jsonl");
    let mut log = Vec::new();
    let ckpt = a.out_dir.join("checkpoint.hfck");
    let run = trainer.run(iters, &mut log, Some((&ckpt, a.checkpoint_every)));
    // keep whatever was logged even when a step fails
    write_atomic(&log_path, &log)?;
    let reports = run?;
    if let Some(r) = reports.last() {
        println!("iter {} d_loss {:.6} g_loss {:.6}", r.iter, r.d_loss, r.g_loss);
    }
    println!("checkpoint {}", ckpt.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_sample(a: SampleArgs) -> Result<ExitCode> {
    let cfg = SamplerConfig {
        bins: a.bins,
        mu_theta: a.mu_deg.to_radians(),
        sigma_theta: a.sigma_deg.to_radians(),
        mode: a.mode,
    };
    cfg.validate()?;
    let model = body_or_toy(a.body.as_deref(), 16, 256)?;
    let meta = DatasetMeta::new(&model, load_metadata(&a.meta)?, a.bins)?;
    let weights = pose_guided_weights(&meta, &cfg)?;
    let draws = sample_batch(&weights, a.draws, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    let rows = bin_histogram(&meta.bins, &weights, &draws, &cfg)?;
    write_atomic(&a.out_csv, histogram_csv(&rows).as_bytes())?;
    println!("records {} draws {}", meta.len(), draws.len());
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    if !(a.threshold > 0.0) {
        return Err(Error::InvalidArgument("--threshold must be positive".into()));
    }
    let model = make_toy_body(a.parts, 24, 0)?;
    let config = FieldConfig { sdf_grid: Some(24), alpha_init: 0.01, ..FieldConfig::small(a.parts) };
    let gen = Generator::new(config.clone(), a.seed)?;
    let template = Template::new(&model, &config)?;
    let scene = Scene {
        shape: Shape::zero(model.shape_dim()),
        pose: Pose::zero(model.joint_count()),
        camera: Camera::full_body(a.width, a.height),
    };
    let cfg = RenderConfig::default();
    let plan = RenderPlan::build(&model, &template, &scene, &cfg, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    let pixels: Vec<(usize, usize)> = plan.hit_pixels.iter().map(|&p| (p / a.width, p % a.width)).take(a.pixels.min(64)).collect();
    if pixels.is_empty() {
        return Err(Error::InvalidArgument("no ray hits the body at this resolution".into()));
    }
    let z = latent(a.seed, config.latent_dim)?;
    let report = render_gradcheck(&gen, &template, &model, &scene, &z, &cfg, a.seed, &pixels, a.per_group, a.step)?;
    for g in &report.groups {
        println!("{:<12} checked {:>3} max_rel_error {:.3e}", g.group, g.checked, g.max_rel_error);
    }
    println!("max_rel_error {:.3e} seconds {:.2}", report.max_rel_error, report.elapsed_secs);
    if report.max_rel_error > a.threshold {
        eprintln!("gradient check failed: {:.3e} > {:.3e}", report.max_rel_error, a.threshold);
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_boxes(a: BoxArgs) -> Result<ExitCode> {
    let model = body_or_toy(a.body.as_deref(), 16, 256)?;
    let pose = load_pose(a.pose.as_deref(), &model)?;
    let shape = load_shape(a.shape.as_deref(), &model)?;
    let posed = deform(&model, &shape, &pose)?;
    let boxes = pose_boxes(&canonical_part_boxes(&model, a.margin)?, &posed, &model)?;
    write_atomic(&a.out, boxes_to_obj(&boxes)?.as_bytes())?;
    println!("boxes {}", boxes.len());
    Ok(ExitCode::SUCCESS)
}

fn cmd_make_body(a: MakeBodyArgs) -> Result<ExitCode> {
    let model = make_toy_body(a.parts, a.verts_per_part, a.seed)?;
    save_body(&model, &a.out)?;
    println!("vertices {} faces {} parts {}", model.vertices.len(), model.faces.len(), model.part_count());
    Ok(ExitCode::SUCCESS)
}
