//! `rtnerf`: scene generation, rendering, pipeline comparison, codec
//! statistics, and accelerator simulation with machine-readable outputs.
//!
//! Exit codes: 0 success, 2 usage or validation error, 1 internal error.

mod manifest;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use manifest::RunManifest;
use rtnerf_core::accel_sim::{self, HardwareConfig};
use rtnerf_core::features::TransmittanceConvention;
use rtnerf_core::geometry::Camera;
use rtnerf_core::math::Vec3;
use rtnerf_core::renderer::{
    self, compare_access_counts, render, Image, Pipeline, RenderOptions, Schedule, StepTrace,
};
use rtnerf_core::scene::{generate_synthetic_scene, load_scene, save_scene, Scene, SceneGenConfig};
use rtnerf_core::sparse::{self, Variant};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "rtnerf",
    version,
    about = "Sparse-grid radiance field rendering toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic scene file.
    GenScene(GenSceneArgs),
    /// Render a scene to an image plus an instrumented trace.
    Render(RenderArgs),
    /// Render with two pipelines and report pixel deltas and access counts.
    Compare(CompareArgs),
    /// Sparsity census, hybrid encodings, sizes, and query-latency histograms.
    CodecStats(CodecStatsArgs),
    /// Turn a trace into a per-step cycle report under a hardware config.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct GenSceneArgs {
    /// Grid resolution: one value for a cubic grid or "nx,ny,nz".
    #[arg(long, default_value = "64")]
    res: String,
    /// Target occupancy fraction in (0, 1].
    #[arg(long, default_value_t = 0.01)]
    occupancy: f64,
    #[arg(long, default_value_t = 4)]
    rank: usize,
    #[arg(long, default_value_t = 3)]
    channels: usize,
    /// Comma-separated per-factor zero fractions, cycled over the factors.
    #[arg(long, default_value = "0.04,0.46,0.88,0.92")]
    factor_sparsity: String,
    /// Scales density factor entries (larger values mean more opaque cells).
    #[arg(long, default_value_t = 1.0)]
    density_scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    manifest_out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct CameraArgs {
    /// Camera position "x,y,z".
    #[arg(long, default_value = "0.5,0.5,-2.5")]
    cam_pos: String,
    /// Look-at target "x,y,z".
    #[arg(long, default_value = "0.5,0.5,0.5")]
    cam_look_at: String,
    /// Up hint "x,y,z".
    #[arg(long, default_value = "0,1,0")]
    cam_up: String,
    /// Horizontal field of view in degrees.
    #[arg(long, default_value_t = 24.0)]
    fov_deg: f64,
    #[arg(long, default_value_t = 128)]
    width: u32,
    #[arg(long, default_value_t = 128)]
    height: u32,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum PipelineArg {
    Uniform,
    Rt,
}

impl From<PipelineArg> for Pipeline {
    fn from(p: PipelineArg) -> Pipeline {
        match p {
            PipelineArg::Uniform => Pipeline::Uniform,
            PipelineArg::Rt => Pipeline::Rt,
        }
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ScheduleArg {
    Octant,
    Global,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, value_enum, default_value_t = PipelineArg::Rt)]
    pipeline: PipelineArg,
    /// Clip ray segments to cubes (exact mode) instead of keeping ball spans.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    exact: bool,
    /// Early-termination transmittance threshold in [0, 1).
    #[arg(long, default_value_t = 1e-4)]
    tau: f64,
    /// Samples per ray for the uniform pipeline.
    #[arg(long, default_value_t = 128)]
    n_samples: usize,
    /// Evaluate factors through the hybrid sparse codec.
    #[arg(long, default_value_t = false)]
    codec: bool,
    /// Shading schedule for the rt pipeline.
    #[arg(long, value_enum, default_value_t = ScheduleArg::Octant)]
    schedule: ScheduleArg,
    #[command(flatten)]
    camera: CameraArgs,
    /// Image output: .png for PNG, anything else is binary PPM.
    #[arg(long)]
    image_out: PathBuf,
    #[arg(long)]
    trace_out: Option<PathBuf>,
    #[arg(long)]
    manifest_out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, value_enum, default_value_t = PipelineArg::Rt)]
    pipeline_a: PipelineArg,
    #[arg(long, value_enum, default_value_t = PipelineArg::Uniform)]
    pipeline_b: PipelineArg,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    exact: bool,
    #[arg(long, default_value_t = 1e-4)]
    tau: f64,
    #[arg(long, default_value_t = 128)]
    n_samples: usize,
    #[command(flatten)]
    camera: CameraArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    manifest_out: Option<PathBuf>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    Bitmap,
    Coo,
}

#[derive(Args)]
struct CodecStatsArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Force one encoding for every factor instead of the 0.80 policy.
    #[arg(long, value_enum)]
    force_variant: Option<VariantArg>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    manifest_out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Hardware config JSON (see configs/rt-nerf-edge.json).
    #[arg(long)]
    config: PathBuf,
    /// Trace JSON produced by `render --trace-out`.
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    manifest_out: Option<PathBuf>,
}

/// Usage/validation failures exit 2; anything else exits 1.
enum CliError {
    Usage(String),
    Internal(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Internal(e)
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenScene(args) => cmd_gen_scene(args),
        Command::Render(args) => cmd_render(args),
        Command::Compare(args) => cmd_compare(args),
        Command::CodecStats(args) => cmd_codec_stats(args),
        Command::Simulate(args) => cmd_simulate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Internal(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn parse_triple(s: &str, flag: &str) -> Result<Vec3, CliError> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(usage(format!("{flag}: expected \"x,y,z\", got {s:?}")));
    }
    let mut v = [0.0f64; 3];
    for (slot, part) in v.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|_| usage(format!("{flag}: {part:?} is not a number")))?;
    }
    Ok(Vec3::new(v[0], v[1], v[2]))
}

fn parse_resolution(s: &str) -> Result<[usize; 3], CliError> {
    let parts: Vec<&str> = s.split(',').collect();
    let parse = |p: &str| {
        p.trim()
            .parse::<usize>()
            .map_err(|_| usage(format!("--res: {p:?} is not a positive integer")))
    };
    match parts.as_slice() {
        [one] => {
            let n = parse(one)?;
            Ok([n, n, n])
        }
        [x, y, z] => Ok([parse(x)?, parse(y)?, parse(z)?]),
        _ => Err(usage(format!(
            "--res: expected one value or \"nx,ny,nz\", got {s:?}"
        ))),
    }
}

fn build_camera(args: &CameraArgs) -> Result<Camera, CliError> {
    let pos = parse_triple(&args.cam_pos, "--cam-pos")?;
    let look = parse_triple(&args.cam_look_at, "--cam-look-at")?;
    let up = parse_triple(&args.cam_up, "--cam-up")?;
    if !(args.fov_deg > 0.0 && args.fov_deg < 180.0) {
        return Err(usage(format!(
            "--fov-deg must be in (0, 180), got {}",
            args.fov_deg
        )));
    }
    if args.width == 0 || args.height == 0 {
        return Err(usage("--width and --height must be positive"));
    }
    Camera::look_at(pos, look, up, args.fov_deg, args.width, args.height)
        .map_err(|e| usage(format!("camera: {e}")))
}

fn check_tau(tau: f64) -> Result<(), CliError> {
    if !(0.0..1.0).contains(&tau) {
        return Err(usage(format!("--tau must be in [0, 1), got {tau}")));
    }
    Ok(())
}

fn load_scene_arg(path: &Path) -> Result<Scene, CliError> {
    load_scene(path).map_err(|e| usage(format!("--scene {}: {e}", path.display())))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let doc = serde_json::to_string_pretty(value)
        .context("serializing output")
        .map_err(CliError::Internal)?;
    std::fs::write(path, doc + "\n")
        .with_context(|| format!("writing {}", path.display()))
        .map_err(CliError::Internal)?;
    Ok(())
}

fn write_image(image: &Image, path: &Path) -> Result<(), CliError> {
    let is_png = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        let mut rgb = image::RgbImage::new(image.width, image.height);
        for y in 0..image.height {
            for x in 0..image.width {
                let px = image.pixel(x, y);
                let mut out = [0u8; 3];
                for (c, slot) in out.iter_mut().enumerate() {
                    let v = px[c.min(image.channels - 1)];
                    *slot = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                }
                rgb.put_pixel(x, y, image::Rgb(out));
            }
        }
        rgb.save(path)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(CliError::Internal)?;
    } else {
        std::fs::write(path, image.to_ppm())
            .with_context(|| format!("writing {}", path.display()))
            .map_err(CliError::Internal)?;
    }
    Ok(())
}

fn cmd_gen_scene(args: GenSceneArgs) -> Result<(), CliError> {
    let resolution = parse_resolution(&args.res)?;
    if !(args.occupancy > 0.0 && args.occupancy <= 1.0) {
        return Err(usage(format!(
            "--occupancy must be in (0, 1], got {}",
            args.occupancy
        )));
    }
    let mut factor_sparsity = Vec::new();
    for part in args.factor_sparsity.split(',') {
        let v: f64 = part
            .trim()
            .parse()
            .map_err(|_| usage(format!("--factor-sparsity: {part:?} is not a number")))?;
        if !(0.0..=1.0).contains(&v) {
            return Err(usage(format!(
                "--factor-sparsity values must be in [0, 1], got {v}"
            )));
        }
        factor_sparsity.push(v);
    }
    if args.density_scale <= 0.0 {
        return Err(usage(format!(
            "--density-scale must be positive, got {}",
            args.density_scale
        )));
    }
    let cfg = SceneGenConfig {
        resolution,
        target_occupancy: args.occupancy,
        rank: args.rank,
        channels: args.channels,
        seed: args.seed,
        factor_sparsity,
        density_scale: args.density_scale,
        ..Default::default()
    };
    let scene = generate_synthetic_scene(&cfg).map_err(|e| usage(e.to_string()))?;
    save_scene(&scene, &args.out)
        .with_context(|| format!("writing {}", args.out.display()))
        .map_err(CliError::Internal)?;

    let mut manifest = RunManifest::new("gen-scene");
    manifest.seed = Some(args.seed);
    manifest.record_output(&args.out);
    manifest
        .write(args.manifest_out.as_deref(), &args.out)
        .map_err(CliError::Internal)?;
    Ok(())
}

fn render_options(
    pipeline: Pipeline,
    exact: bool,
    tau: f64,
    n_samples: usize,
    codec: bool,
    schedule: Schedule,
) -> RenderOptions {
    RenderOptions {
        pipeline,
        exact_mode: exact,
        tau,
        n_samples,
        convention: TransmittanceConvention::Printed,
        use_codec: codec,
        schedule,
    }
}

fn cmd_render(args: RenderArgs) -> Result<(), CliError> {
    check_tau(args.tau)?;
    if args.n_samples == 0 {
        return Err(usage("--n-samples must be at least 1"));
    }
    let scene = load_scene_arg(&args.scene)?;
    let camera = build_camera(&args.camera)?;
    let opts = render_options(
        args.pipeline.into(),
        args.exact,
        args.tau,
        args.n_samples,
        args.codec,
        match args.schedule {
            ScheduleArg::Octant => Schedule::OctantOrdered,
            ScheduleArg::Global => Schedule::GlobalSort,
        },
    );
    let (image, trace) = render(&scene, &camera, &opts);
    write_image(&image, &args.image_out)?;
    if let Some(trace_out) = &args.trace_out {
        write_json(&trace, trace_out)?;
    }

    let mut manifest = RunManifest::new("render");
    manifest.seed = Some(scene.seed);
    manifest
        .hash_input(&args.scene)
        .map_err(CliError::Internal)?;
    manifest.record_output(&args.image_out);
    if let Some(t) = &args.trace_out {
        manifest.record_output(t);
    }
    manifest
        .write(args.manifest_out.as_deref(), &args.image_out)
        .map_err(CliError::Internal)?;
    Ok(())
}

#[derive(Serialize)]
struct PixelDelta {
    max: f64,
    mean: f64,
}

#[derive(Serialize)]
struct CompareReport {
    pipeline_a: &'static str,
    pipeline_b: &'static str,
    pixel_delta: PixelDelta,
    access: renderer::AccessReport,
    trace_a: StepTrace,
    trace_b: StepTrace,
}

fn pixel_delta(a: &Image, b: &Image) -> PixelDelta {
    let mut max = 0.0f64;
    let mut sum = 0.0f64;
    for (x, y) in a.data.iter().zip(&b.data) {
        let d = (*x as f64 - *y as f64).abs();
        max = max.max(d);
        sum += d;
    }
    PixelDelta {
        max,
        mean: sum / a.data.len() as f64,
    }
}

fn cmd_compare(args: CompareArgs) -> Result<(), CliError> {
    check_tau(args.tau)?;
    if args.n_samples == 0 {
        return Err(usage("--n-samples must be at least 1"));
    }
    let scene = load_scene_arg(&args.scene)?;
    let camera = build_camera(&args.camera)?;
    let name = |p: PipelineArg| match p {
        PipelineArg::Uniform => "uniform",
        PipelineArg::Rt => "rt",
    };
    let run = |p: PipelineArg| {
        let opts = render_options(
            p.into(),
            args.exact,
            args.tau,
            args.n_samples,
            false,
            Schedule::OctantOrdered,
        );
        render(&scene, &camera, &opts)
    };
    let (img_a, trace_a) = run(args.pipeline_a);
    let (img_b, trace_b) = run(args.pipeline_b);
    let report = CompareReport {
        pipeline_a: name(args.pipeline_a),
        pipeline_b: name(args.pipeline_b),
        pixel_delta: pixel_delta(&img_a, &img_b),
        access: compare_access_counts(&scene, &camera, args.n_samples),
        trace_a,
        trace_b,
    };
    write_json(&report, &args.out)?;

    let mut manifest = RunManifest::new("compare");
    manifest.seed = Some(scene.seed);
    manifest
        .hash_input(&args.scene)
        .map_err(CliError::Internal)?;
    manifest.record_output(&args.out);
    manifest
        .write(args.manifest_out.as_deref(), &args.out)
        .map_err(CliError::Internal)?;
    Ok(())
}

#[derive(Serialize)]
struct FactorStats {
    label: String,
    rows: usize,
    cols: usize,
    sparsity: f64,
    variant: Variant,
    encoded_bytes: u64,
    bitmap_bytes: u64,
    coo_bytes: u64,
    tree_height: Option<usize>,
    roundtrip_exact: bool,
    cycle_histogram: std::collections::BTreeMap<u32, u64>,
}

#[derive(Serialize)]
struct CodecStatsReport {
    census: sparse::Census,
    forced_variant: Option<&'static str>,
    factors: Vec<FactorStats>,
    total_encoded_bytes: u64,
    total_dense_bytes: u64,
}

fn cmd_codec_stats(args: CodecStatsArgs) -> Result<(), CliError> {
    let scene = load_scene_arg(&args.scene)?;
    let census = sparse::sparsity_census(&scene.decomp);
    let forced = args.force_variant.map(|v| match v {
        VariantArg::Bitmap => Variant::Bitmap,
        VariantArg::Coo => Variant::Coo,
    });

    let mut factors = Vec::new();
    let mut total_encoded = 0u64;
    let mut total_dense = 0u64;
    for (label, view) in scene.decomp.labeled_factors() {
        let matrix = rtnerf_core::Matrix::from_vec(view.rows, view.cols, view.data.to_vec());
        let enc = match forced {
            Some(v) => sparse::encode_forced(&matrix, v),
            None => sparse::encode(&matrix),
        }
        .map_err(|e| CliError::Internal(anyhow::anyhow!("{label}: {e}")))?;
        let bitmap_bytes = sparse::encoded_size(
            &sparse::encode_forced(&matrix, Variant::Bitmap).unwrap(),
            &sparse::SizeModel::default(),
        );
        let coo_bytes = sparse::encoded_size(
            &sparse::encode_forced(&matrix, Variant::Coo).unwrap(),
            &sparse::SizeModel::default(),
        );
        let mut histogram = std::collections::BTreeMap::new();
        let mut roundtrip_exact = true;
        for x in 0..view.rows {
            for y in 0..view.cols {
                let q = enc.query(x, y).unwrap();
                *histogram.entry(q.cycles).or_insert(0u64) += 1;
                if q.value != matrix.at(x, y) {
                    roundtrip_exact = false;
                }
            }
        }
        total_encoded += enc.encoded_bytes;
        total_dense += (view.rows * view.cols * 4) as u64;
        factors.push(FactorStats {
            label,
            rows: view.rows,
            cols: view.cols,
            sparsity: enc.sparsity,
            variant: enc.variant,
            encoded_bytes: enc.encoded_bytes,
            bitmap_bytes,
            coo_bytes,
            tree_height: enc.tree_height(),
            roundtrip_exact,
            cycle_histogram: histogram,
        });
    }
    let report = CodecStatsReport {
        census,
        forced_variant: forced.map(|v| match v {
            Variant::Bitmap => "bitmap",
            Variant::Coo => "coo",
        }),
        factors,
        total_encoded_bytes: total_encoded,
        total_dense_bytes: total_dense,
    };
    write_json(&report, &args.out)?;

    let mut manifest = RunManifest::new("codec-stats");
    manifest.seed = Some(scene.seed);
    manifest
        .hash_input(&args.scene)
        .map_err(CliError::Internal)?;
    manifest.record_output(&args.out);
    manifest
        .write(args.manifest_out.as_deref(), &args.out)
        .map_err(CliError::Internal)?;
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let config_text = std::fs::read_to_string(&args.config)
        .map_err(|e| usage(format!("--config {}: {e}", args.config.display())))?;
    let config: HardwareConfig = serde_json::from_str(&config_text)
        .map_err(|e| usage(format!("--config {}: {e}", args.config.display())))?;
    let trace_text = std::fs::read_to_string(&args.trace)
        .map_err(|e| usage(format!("--trace {}: {e}", args.trace.display())))?;
    let trace: StepTrace = serde_json::from_str(&trace_text)
        .map_err(|e| usage(format!("--trace {}: {e}", args.trace.display())))?;

    let report = accel_sim::simulate(&trace, &trace.codec_cycles, &config)
        .map_err(|e| usage(format!("--config {}: {e}", args.config.display())))?;
    write_json(&report, &args.out)?;

    let mut manifest = RunManifest::new("simulate");
    manifest
        .hash_input(&args.config)
        .map_err(CliError::Internal)?;
    manifest
        .hash_input(&args.trace)
        .map_err(CliError::Internal)?;
    manifest.record_output(&args.out);
    manifest
        .write(args.manifest_out.as_deref(), &args.out)
        .map_err(CliError::Internal)?;
    Ok(())
}
