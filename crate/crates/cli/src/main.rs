//! Command line front end for streaming RGBD video segmentation.
//!
//! Subcommands: `segment` streams a sequence through the two-stage
//! segmenter, `baseline` through the single-stage alpha blend, `recut`
//! re-cuts saved window state at a new zeta, `eval` runs parameter
//! sweeps and metrics on synthetic scenes, `synth` renders such a scene
//! to disk, and `calibrate-match` estimates matching gates from a
//! sequence's own matched pairs.
//!
//! Configuration goes from defaults, to an optional `--config` key=value
//! file, to flags named exactly like the config keys, in that order.

use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use toxelseg::eval::{
    chamfer_error, extract_boundaries, generate_scene, random_blocks_scene, run_sweep,
    temporal_consistency, two_plane_scene, write_sweep_csv, BoundaryDistance, GeneratedScene,
    SceneGenerator, SceneSpec, SweepGrid,
};
use toxelseg::pipeline::{
    calibrate_gates, load_states, recut_states, run_baseline, run_stream, GateStat, OutputWriter,
    PipelineConfig, RunSummary, SegMethod, StreamEngine,
};
use toxelseg::rgbd_io::{
    image_io, load_sequence, CameraIntrinsics, FrameSequence, LoadOptions, ManifestFormat,
    RgbdFrame,
};

#[derive(Parser)]
#[command(name = "toxelseg", version, about = "Streaming RGBD video segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment an RGBD sequence with the two-stage streaming pipeline.
    Segment(SegmentArgs),
    /// Segment with the single-stage alpha-blend segmenter instead.
    Baseline(SegmentArgs),
    /// Re-cut saved window state at a new zeta and replay the matching.
    Recut(RecutArgs),
    /// Parameter sweeps and metrics on synthetic scenes.
    Eval(EvalArgs),
    /// Render a synthetic RGBD scene to disk as a loadable sequence.
    Synth(SynthArgs),
    /// Estimate matching gates from the pairs an ungated dry run finds.
    CalibrateMatch(CalibrateArgs),
}

#[derive(Args)]
struct SegmentArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    overrides: ConfigArgs,
}

#[derive(Args)]
struct RecutArgs {
    /// Directory holding state_*.bin files from a save_state=true run.
    #[arg(long)]
    states: PathBuf,
    #[command(flatten)]
    overrides: ConfigArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Scene preset, repeatable: `two-plane` or `blocks:<objects>[:<seed>]`.
    #[arg(long = "scene", required = true)]
    scenes: Vec<String>,
    /// Print boundary error, explained variation, and temporal
    /// consistency of a default two-stage run per scene.
    #[arg(long)]
    metrics: bool,
    /// Sweep this parameter over --values (needs --values and --out).
    #[arg(long, value_enum)]
    grid: Option<GridKind>,
    /// Comma-separated sweep values.
    #[arg(long)]
    values: Option<String>,
    /// Sweep CSV destination.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 48)]
    height: usize,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    /// Seed for presets that do not carry their own.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use the 3-4 mask approximation instead of exact distances
    /// (metrics mode).
    #[arg(long)]
    chamfer_mask: bool,
    #[command(flatten)]
    overrides: ConfigArgs,
}

#[derive(Args)]
struct SynthArgs {
    /// Scene preset: `two-plane` or `blocks:<objects>[:<seed>]`.
    #[arg(long)]
    preset: String,
    #[arg(long, default_value_t = 96)]
    width: usize,
    #[arg(long, default_value_t = 72)]
    height: usize,
    #[arg(long, default_value_t = 16)]
    frames: usize,
    /// Gaussian depth noise sigma, meters.
    #[arg(long, default_value_t = 0.0)]
    noise_sigma_m: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Destination for color_*.ppm, depth_*.pgm, gt_*.pgm, manifest.txt.
    #[arg(long = "out_dir")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    overrides: ConfigArgs,
}

#[derive(Args)]
struct InputArgs {
    /// Manifest: one `timestamp color_path depth_path` line per frame,
    /// paths relative to the manifest's directory.
    #[arg(long)]
    manifest: PathBuf,
    /// Manifest is TUM association output: `ts color_path ts depth_path`.
    #[arg(long)]
    tum: bool,
    #[command(flatten)]
    intrinsics: IntrinsicsArgs,
}

#[derive(Args)]
struct IntrinsicsArgs {
    /// Focal length, pixels, horizontal. Defaults to a synthetic camera
    /// sized from the first frame.
    #[arg(long)]
    fx: Option<f64>,
    /// Focal length, pixels, vertical.
    #[arg(long)]
    fy: Option<f64>,
    /// Principal point, horizontal.
    #[arg(long)]
    cx: Option<f64>,
    /// Principal point, vertical.
    #[arg(long)]
    cy: Option<f64>,
    /// Raw depth units per meter.
    #[arg(long = "depth_scale")]
    depth_scale: Option<f64>,
}

impl IntrinsicsArgs {
    fn resolve(&self, manifest: &Path, tum: bool) -> Result<CameraIntrinsics> {
        let (width, height) = peek_dimensions(manifest, tum)?;
        let mut k = CameraIntrinsics::synthetic(width, height);
        if let Some(v) = self.fx {
            k.fx = v;
        }
        if let Some(v) = self.fy {
            k.fy = v;
        }
        if let Some(v) = self.cx {
            k.cx = v;
        }
        if let Some(v) = self.cy {
            k.cy = v;
        }
        if let Some(v) = self.depth_scale {
            k.depth_scale = v;
        }
        Ok(k)
    }
}

/// Config overrides, one flag per config key. Values are parsed by the
/// same code that reads the config file, so the syntax is identical.
#[derive(Args, Default)]
struct ConfigArgs {
    /// Flat key=value config file; the flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Frames per window.
    #[arg(long)]
    window: Option<String>,
    /// Frames shared with the previous window.
    #[arg(long)]
    overlap: Option<String>,
    /// Depth-stage merge scale.
    #[arg(long = "k_depth")]
    k_depth: Option<String>,
    /// Color-stage merge scale.
    #[arg(long = "k_color")]
    k_color: Option<String>,
    /// Minimum region size, toxels.
    #[arg(long = "min_size")]
    min_size: Option<String>,
    /// Dendrogram cut fraction in [0, 1].
    #[arg(long)]
    zeta: Option<String>,
    /// Baseline depth/color mixing weight in [0, 1].
    #[arg(long)]
    alpha: Option<String>,
    /// Baseline merge scale.
    #[arg(long = "k_baseline")]
    k_baseline: Option<String>,
    /// Baseline meters-to-color scale on the depth term.
    #[arg(long = "depth_weight_scale")]
    depth_weight_scale: Option<String>,
    /// Histogram-distance weight in the matching score.
    #[arg(long)]
    beta: Option<String>,
    /// Centroid-distance weight.
    #[arg(long)]
    gamma: Option<String>,
    /// Size-difference weight.
    #[arg(long)]
    epsilon: Option<String>,
    /// Histogram distance gate.
    #[arg(long = "hist_gate")]
    hist_gate: Option<String>,
    /// Advected centroid distance gate.
    #[arg(long = "centroid_gate")]
    centroid_gate: Option<String>,
    /// Size difference gate, fraction of the larger region.
    #[arg(long = "size_gate_frac")]
    size_gate_frac: Option<String>,
    /// Prefilter candidates by advected bounding-box overlap.
    #[arg(long = "bbox_filter")]
    bbox_filter: Option<String>,
    /// Lightness histogram range, `lo:hi`.
    #[arg(long = "range_l")]
    range_l: Option<String>,
    /// a/b channel histogram range, `lo:hi`.
    #[arg(long = "range_ab")]
    range_ab: Option<String>,
    /// x/y position histogram range, meters, `lo:hi`.
    #[arg(long = "range_xy")]
    range_xy: Option<String>,
    /// z position histogram range, meters, `lo:hi`.
    #[arg(long = "range_z")]
    range_z: Option<String>,
    /// Flow component histogram range, meters/frame, `lo:hi`.
    #[arg(long = "range_uvw")]
    range_uvw: Option<String>,
    /// Flow matching patch half-width, pixels.
    #[arg(long = "patch_radius")]
    patch_radius: Option<String>,
    /// Flow search radius per pyramid level, pixels.
    #[arg(long = "search_radius")]
    search_radius: Option<String>,
    /// Flow pyramid levels.
    #[arg(long)]
    levels: Option<String>,
    /// Patch variance below which flow is considered textureless.
    #[arg(long = "flat_variance")]
    flat_variance: Option<String>,
    /// Output directory.
    #[arg(long = "out_dir")]
    out_dir: Option<String>,
    /// Write colorized renders (true/false).
    #[arg(long)]
    render: Option<String>,
    /// Write per-window dendrograms and re-cut state (true/false).
    #[arg(long = "save_state")]
    save_state: Option<String>,
    /// Treat depths beyond this as invalid, meters; `none` keeps all.
    #[arg(long = "max_depth_m")]
    max_depth_m: Option<String>,
}

impl ConfigArgs {
    fn build(&self) -> Result<PipelineConfig> {
        let mut config = match &self.config {
            Some(path) => PipelineConfig::from_file(path)?,
            None => PipelineConfig::default(),
        };
        let overrides: [(&str, &Option<String>); 29] = [
            ("window", &self.window),
            ("overlap", &self.overlap),
            ("k_depth", &self.k_depth),
            ("k_color", &self.k_color),
            ("min_size", &self.min_size),
            ("zeta", &self.zeta),
            ("alpha", &self.alpha),
            ("k_baseline", &self.k_baseline),
            ("depth_weight_scale", &self.depth_weight_scale),
            ("beta", &self.beta),
            ("gamma", &self.gamma),
            ("epsilon", &self.epsilon),
            ("hist_gate", &self.hist_gate),
            ("centroid_gate", &self.centroid_gate),
            ("size_gate_frac", &self.size_gate_frac),
            ("bbox_filter", &self.bbox_filter),
            ("range_l", &self.range_l),
            ("range_ab", &self.range_ab),
            ("range_xy", &self.range_xy),
            ("range_z", &self.range_z),
            ("range_uvw", &self.range_uvw),
            ("patch_radius", &self.patch_radius),
            ("search_radius", &self.search_radius),
            ("levels", &self.levels),
            ("flat_variance", &self.flat_variance),
            ("out_dir", &self.out_dir),
            ("render", &self.render),
            ("save_state", &self.save_state),
            ("max_depth_m", &self.max_depth_m),
        ];
        for (key, value) in overrides {
            if let Some(value) = value {
                config.apply_key(key, value)?;
            }
        }
        config.validate()?;
        Ok(config)
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Segment(args) => segment(args, SegMethod::Multistage),
        Command::Baseline(args) => segment(args, SegMethod::Baseline),
        Command::Recut(args) => recut(args),
        Command::Eval(args) => eval(args),
        Command::Synth(args) => synth(args),
        Command::CalibrateMatch(args) => calibrate(args),
    }
}

fn segment(args: SegmentArgs, method: SegMethod) -> Result<()> {
    let config = args.overrides.build()?;
    let seq = open_sequence(&args.input, &config)?;
    let frames = decode_ahead(seq);
    let summary = match method {
        SegMethod::Multistage => run_stream(&config, frames)?,
        SegMethod::Baseline => run_baseline(&config, frames)?,
    };
    report(&summary, &config);
    Ok(())
}

fn recut(args: RecutArgs) -> Result<()> {
    let config = args.overrides.build()?;
    let states = load_states(&args.states)?;
    let frames = recut_states(&states, config.zeta, &config.matching)?;
    let mut writer = OutputWriter::create(&config.out_dir, config.render)?;
    for frame in &frames {
        writer.write_frame(frame)?;
    }
    writer.finish()?;
    println!(
        "re-cut {} windows at zeta {} -> {} frames in {}",
        states.len(),
        config.zeta,
        frames.len(),
        config.out_dir.display()
    );
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let scenes: Vec<(String, GeneratedScene)> = args
        .scenes
        .iter()
        .map(|preset| {
            let spec =
                scene_from_preset(preset, args.width, args.height, args.frames, args.seed)?;
            Ok((preset.clone(), generate_scene(&spec)?))
        })
        .collect::<Result<_>>()?;
    let mode = if args.chamfer_mask {
        BoundaryDistance::Chamfer34
    } else {
        BoundaryDistance::Exact
    };
    if args.metrics {
        let config = args.overrides.build()?;
        metrics_report(&config, &scenes, mode)?;
    }
    match (&args.grid, &args.values, &args.out) {
        (Some(grid), Some(values), Some(out)) => {
            let values: Vec<f64> = values
                .split(',')
                .map(|v| v.trim().parse().with_context(|| format!("grid value {v:?}")))
                .collect::<Result<_>>()?;
            let grid = match grid {
                GridKind::Alpha => SweepGrid::Alpha(values),
                GridKind::KDepth => SweepGrid::KDepth(values),
                GridKind::KColor => SweepGrid::KColor(values),
                GridKind::Zeta => SweepGrid::Zeta(values),
            };
            let rows = run_sweep(&scenes, &grid)?;
            let file = std::fs::File::create(out)
                .with_context(|| format!("creating {}", out.display()))?;
            write_sweep_csv(&rows, BufWriter::new(file))?;
            println!("wrote {} sweep rows to {}", rows.len(), out.display());
        }
        (None, None, None) if args.metrics => {}
        _ => bail!("eval needs --metrics and/or all three of --grid, --values, --out"),
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let mut spec = scene_from_preset(&args.preset, args.width, args.height, args.frames, args.seed)?;
    spec.depth_noise_sigma_m = args.noise_sigma_m;
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let mut gen = SceneGenerator::new(spec)?;
    let mut manifest = String::new();
    let mut count = 0usize;
    while let Some((frame, labels)) = gen.next_frame() {
        let color = format!("color_{count:06}.ppm");
        let depth = format!("depth_{count:06}.pgm");
        image_io::write_ppm(&args.out_dir.join(&color), frame.width, frame.height, &frame.color)?;
        image_io::write_pgm16(
            &args.out_dir.join(&depth),
            frame.width,
            frame.height,
            &frame.depth,
        )?;
        let gt: Vec<u16> = labels.iter().map(|&l| l as u16).collect();
        image_io::write_pgm16(
            &args.out_dir.join(format!("gt_{count:06}.pgm")),
            frame.width,
            frame.height,
            &gt,
        )?;
        manifest.push_str(&format!("{} {} {}\n", frame.timestamp, color, depth));
        count += 1;
    }
    let path = args.out_dir.join("manifest.txt");
    std::fs::write(&path, manifest).with_context(|| format!("writing {}", path.display()))?;
    println!(
        "wrote {count} frames at {}x{} to {}",
        args.width,
        args.height,
        args.out_dir.display()
    );
    Ok(())
}

fn calibrate(args: CalibrateArgs) -> Result<()> {
    let mut config = args.overrides.build()?;
    config.save_state = true;
    let seq = open_sequence(&args.input, &config)?;
    let mut engine = StreamEngine::new(config.clone(), SegMethod::Multistage)?;
    let mut states = Vec::new();
    for frame in decode_ahead(seq) {
        states.extend(engine.push(frame?)?.states);
    }
    states.extend(engine.finish()?.states);
    let cal = calibrate_gates(&states, config.zeta, &config.matching)?;
    println!("matched pairs: {}", cal.pairs);
    println!("suggested gates (mean + 3 sigma):");
    print_gate("hist_gate", &cal.hist);
    print_gate("centroid_gate", &cal.centroid);
    print_gate("size_gate_frac", &cal.size_frac);
    Ok(())
}

fn print_gate(name: &str, stat: &GateStat) {
    println!(
        "  {name:<15}= {:.6}   (mean {:.6}, std {:.6})",
        stat.three_sigma(),
        stat.mean,
        stat.std
    );
}

#[derive(Clone, Copy, ValueEnum)]
enum GridKind {
    Alpha,
    #[value(name = "k_depth")]
    KDepth,
    #[value(name = "k_color")]
    KColor,
    Zeta,
}

fn scene_from_preset(
    preset: &str,
    width: usize,
    height: usize,
    frames: usize,
    seed: u64,
) -> Result<SceneSpec> {
    if preset == "two-plane" {
        return Ok(two_plane_scene(width, height, frames, seed));
    }
    if let Some(rest) = preset.strip_prefix("blocks:") {
        let (objects, seed) = match rest.split_once(':') {
            Some((n, s)) => (
                n.parse().with_context(|| format!("object count in {preset:?}"))?,
                s.parse().with_context(|| format!("seed in {preset:?}"))?,
            ),
            None => (
                rest.parse().with_context(|| format!("object count in {preset:?}"))?,
                seed,
            ),
        };
        return Ok(random_blocks_scene(width, height, frames, objects, 0.3, seed));
    }
    bail!("unknown scene preset {preset:?}; use two-plane or blocks:<objects>[:<seed>]")
}

fn open_sequence(input: &InputArgs, config: &PipelineConfig) -> Result<FrameSequence> {
    let format = if input.tum {
        ManifestFormat::TumAssociate
    } else {
        ManifestFormat::Simple
    };
    let intrinsics = input.intrinsics.resolve(&input.manifest, input.tum)?;
    Ok(load_sequence(
        &input.manifest,
        LoadOptions {
            format,
            intrinsics,
            max_depth_m: config.max_depth_m,
        },
    )?)
}

/// Finds the frame size by reading the first color image the manifest
/// names, so default intrinsics can be centered without loading the
/// whole sequence.
fn peek_dimensions(manifest: &Path, tum: bool) -> Result<(usize, usize)> {
    let text = std::fs::read_to_string(manifest)
        .with_context(|| format!("reading {}", manifest.display()))?;
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let color = match (tum, fields.as_slice()) {
            (false, [_, color, _]) => color,
            (true, [_, color, _, _]) => color,
            _ => bail!("{}: malformed manifest line {line:?}", manifest.display()),
        };
        let (w, h, _) = image_io::read_color(&base.join(color))?;
        return Ok((w, h));
    }
    bail!("{}: no frames in manifest", manifest.display())
}

/// Reads frames on a separate thread through a bounded queue, so
/// decoding the next window overlaps segmentation of the current one.
/// Order is preserved, so results do not depend on queue timing.
fn decode_ahead(
    seq: FrameSequence,
) -> impl Iterator<Item = toxelseg::error::Result<RgbdFrame>> {
    let (tx, rx) = mpsc::sync_channel(16);
    std::thread::spawn(move || {
        for item in seq {
            if tx.send(item).is_err() {
                break;
            }
        }
    });
    rx.into_iter()
}

/// Runs frames already in memory through an engine and returns the
/// emitted frames in order.
fn drive_in_memory(
    config: &PipelineConfig,
    frames: &[RgbdFrame],
) -> Result<Vec<toxelseg::pipeline::EmittedFrame>> {
    let mut engine = StreamEngine::new(config.clone(), SegMethod::Multistage)?;
    let mut emitted = Vec::new();
    for frame in frames {
        emitted.extend(engine.push(frame.clone())?.frames);
    }
    emitted.extend(engine.finish()?.frames);
    Ok(emitted)
}

fn metrics_report(
    config: &PipelineConfig,
    scenes: &[(String, GeneratedScene)],
    mode: BoundaryDistance,
) -> Result<()> {
    for (name, scene) in scenes {
        let emitted = drive_in_memory(config, &scene.frames)?;
        let mut boundary_error = 0.0;
        for (frame, gt) in emitted.iter().zip(&scene.gt_boundaries) {
            let dense = densify(&frame.labels);
            boundary_error +=
                chamfer_error(&extract_boundaries(&dense, frame.width, frame.height), gt, mode)?;
        }
        boundary_error /= emitted.len() as f64;
        let ev = emitted.iter().filter_map(|f| f.window_ev).sum::<f64>() / emitted.len() as f64;
        let labels: Vec<Vec<u64>> = emitted.into_iter().map(|f| f.labels).collect();
        let tc = temporal_consistency(&scene.gt_labels, &labels);
        println!(
            "{name}: E_bound {boundary_error:.6}  explained_variation {ev:.4}  temporal_consistency {tc:.4}"
        );
    }
    Ok(())
}

/// Remaps sparse global ids to dense u32 labels, keeping 0 at 0.
fn densify(ids: &[u64]) -> Vec<u32> {
    let mut map = std::collections::BTreeMap::new();
    ids.iter()
        .map(|&id| {
            if id == 0 {
                0
            } else {
                let next = map.len() as u32 + 1;
                *map.entry(id).or_insert(next)
            }
        })
        .collect()
}

fn report(summary: &RunSummary, config: &PipelineConfig) {
    let rss = summary
        .peak_rss_bytes
        .map(|b| format!("{:.1} MiB", b as f64 / (1024.0 * 1024.0)))
        .unwrap_or_else(|| "unknown".into());
    println!(
        "{} frames in {} windows -> {} (peak RSS {})",
        summary.frames_emitted,
        summary.windows,
        config.out_dir.display(),
        rss
    );
}
