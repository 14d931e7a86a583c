//! `olsd`: run the online detector, generate synthetic sequences, score detections.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use olsd::detection::{BoxesByFrame, Connectivity, DetectionConfig, Evaluator, Matching, Segmentation};
use olsd::io::{
    format_boxes, read_boxes, read_checkpoint, synth_sequence, write_sequence, FrameReader, MetricsWriter,
    RunSink, SynthSpec,
};
use olsd::pipeline::{run_sequence, RunConfig};
use olsd::{default_hyperparams, HyperParams};

#[derive(Parser, Debug)]
#[command(name = "olsd", version, about = "Online low-rank and structured-sparse moving-object detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Decompose a frame sequence and detect moving objects.
    Run(RunArgs),
    /// Write a synthetic sequence with groundtruth boxes.
    Synth(SynthArgs),
    /// Score a detections file against groundtruth.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Directory of frame_%06d.pgm files, or a manifest file.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 25)]
    rank: usize,
    /// Defaults to 1/sqrt(pixels).
    #[arg(long)]
    lambda1: Option<f64>,
    /// Defaults to 10 * lambda1.
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long, default_value_t = 1e-5)]
    tau: f64,
    #[arg(long, default_value_t = 100)]
    max_sep_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    prox_tol: f64,
    #[arg(long, default_value_t = 200)]
    max_prox_iters: usize,
    #[arg(long, default_value_t = 1)]
    basis_passes: usize,
    /// Start each separation from the previous frame's solution.
    #[arg(long)]
    warm_start: bool,
    /// Process one frame out of every T.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    downsample: u64,
    /// Process frames whose index is congruent to this offset.
    #[arg(long, default_value_t = 0)]
    phase: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Record surrogate cost and basis change per frame.
    #[arg(long)]
    diagnostics: bool,
    /// Final model file; defaults to <out>/model.ckpt.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Start from a saved model instead of a random basis.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Groundtruth boxes; defaults to groundtruth.csv next to the frames if present.
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long, default_value_t = 0.3)]
    iou_thresh: f64,
    /// fixed:THETA or quantile:Q.
    #[arg(long, default_value = "quantile:0.995")]
    seg: Segmentation,
    #[arg(long, default_value = "8")]
    connectivity: Connectivity,
    #[arg(long, default_value_t = 2)]
    min_area: usize,
    /// greedy or optimal.
    #[arg(long, default_value = "greedy")]
    matching: Matching,
    /// Frames in the windowed metrics.
    #[arg(long, default_value_t = 5)]
    window: usize,
    /// Write background and foreground PGMs for every processed frame.
    #[arg(long)]
    dump_frames: bool,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("`{s}` is not of the form HxW"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height in `{s}`"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width in `{s}`"))?;
    if h == 0 || w == 0 {
        return Err("frame dimensions must be positive".into());
    }
    Ok((h, w))
}

fn parse_range<T: std::str::FromStr + PartialOrd + Copy>(s: &str) -> Result<(T, T), String> {
    let (lo, hi) = match s.split_once('-') {
        Some((a, b)) => (a, b),
        None => (s, s),
    };
    let lo: T = lo.trim().parse().map_err(|_| format!("bad range `{s}`"))?;
    let hi: T = hi.trim().parse().map_err(|_| format!("bad range `{s}`"))?;
    if lo > hi {
        return Err(format!("empty range `{s}`"));
    }
    Ok((lo, hi))
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 500)]
    frames: usize,
    /// Frame size as HxW.
    #[arg(long, default_value = "64x64", value_parser = parse_size)]
    size: (usize, usize),
    /// Background rank.
    #[arg(long, default_value_t = 2)]
    rank: usize,
    #[arg(long, default_value_t = 3)]
    blobs: usize,
    /// Blob side lengths as MIN-MAX pixels.
    #[arg(long, default_value = "5-8", value_parser = parse_range::<usize>)]
    blob_size: (usize, usize),
    /// Blob speeds as MIN-MAX pixels per frame.
    #[arg(long, default_value = "1-2", value_parser = parse_range::<f64>)]
    speed: (f64, f64),
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    dets: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value_t = 0.3)]
    iou_thresh: f64,
    #[arg(long, default_value_t = 5)]
    window: usize,
    #[arg(long, default_value = "greedy")]
    matching: Matching,
}

fn resolve_params(args: &RunArgs, pixels: usize) -> anyhow::Result<HyperParams> {
    let defaults = default_hyperparams(pixels)?;
    let lambda1 = args.lambda1.unwrap_or(defaults.lambda1);
    let params = HyperParams {
        lambda1,
        lambda2: args.lambda2.unwrap_or(lambda1 * 10.0),
        rank: args.rank,
        tau: args.tau,
        max_sep_iters: args.max_sep_iters,
        prox_tol: args.prox_tol,
        max_prox_iters: args.max_prox_iters,
        basis_passes: args.basis_passes,
        warm_start: args.warm_start,
    };
    params.validate()?;
    Ok(params)
}

fn groundtruth_path(args: &RunArgs) -> Option<PathBuf> {
    if args.gt.is_some() {
        return args.gt.clone();
    }
    let dir = if args.input.is_dir() { args.input.as_path() } else { args.input.parent()? };
    let candidate = dir.join("groundtruth.csv");
    candidate.is_file().then_some(candidate)
}

fn cmd_run(args: RunArgs) -> anyhow::Result<()> {
    let mut reader = FrameReader::open(&args.input)
        .with_context(|| format!("cannot open sequence {}", args.input.display()))?;
    let first = match reader.next() {
        Some(frame) => frame?,
        None => bail!("{} contains no frames", args.input.display()),
    };
    let (height, width) = (first.height, first.width);
    let params = resolve_params(&args, height * width)?;

    let detection = DetectionConfig {
        segmentation: args.seg,
        connectivity: args.connectivity,
        min_area: args.min_area,
        iou_thresh: args.iou_thresh,
        matching: args.matching,
        window: args.window,
    };
    let gt_path = groundtruth_path(&args);
    let evaluator = match &gt_path {
        Some(p) => Some(
            Evaluator::new(detection, read_boxes(p).with_context(|| format!("cannot read {}", p.display()))?)?,
        ),
        None => None,
    };

    let initial_model = match &args.resume {
        Some(p) => {
            let ck = read_checkpoint(p).with_context(|| format!("cannot read {}", p.display()))?;
            if (ck.height, ck.width) != (height, width) {
                bail!("checkpoint is {}x{}, frames are {height}x{width}", ck.height, ck.width);
            }
            Some(ck.model)
        }
        None => None,
    };

    std::fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    let checkpoint = args.checkpoint.clone().unwrap_or_else(|| args.out.join("model.ckpt"));
    let preamble = vec![
        format!("input={}", args.input.display()),
        format!("frame_size={height}x{width}"),
        format!("rank={}", params.rank),
        format!("lambda1={}", params.lambda1),
        format!("lambda2={}", params.lambda2),
        format!("tau={}", params.tau),
        format!("max_sep_iters={}", params.max_sep_iters),
        format!("prox_tol={}", params.prox_tol),
        format!("max_prox_iters={}", params.max_prox_iters),
        format!("basis_passes={}", params.basis_passes),
        format!("warm_start={}", params.warm_start),
        format!("downsample={}", args.downsample),
        format!("phase={}", args.phase),
        format!("seed={}", args.seed),
        format!("diagnostics={}", args.diagnostics),
        format!("resume={}", args.resume.as_ref().map_or("none".into(), |p| p.display().to_string())),
        format!("groundtruth={}", gt_path.as_ref().map_or("none".into(), |p| p.display().to_string())),
        format!("seg={}", args.seg),
        format!("connectivity={}", if args.connectivity == Connectivity::Four { 4 } else { 8 }),
        format!("min_area={}", args.min_area),
        format!("iou_thresh={}", args.iou_thresh),
        format!("matching={:?}", args.matching).to_lowercase(),
        format!("window={}", args.window),
    ];
    let metrics_file = File::create(args.out.join("metrics.csv")).context("cannot create metrics.csv")?;
    let metrics = MetricsWriter::new(BufWriter::new(metrics_file), &preamble)?;
    let detections = BufWriter::new(File::create(args.out.join("detections.csv")).context("cannot create detections.csv")?);
    let mut sink = RunSink::new(metrics);
    sink = match evaluator {
        Some(ev) => sink.with_evaluator(ev),
        None => sink.with_detector(detection),
    };
    sink = sink.with_detections(Box::new(detections))?;
    if args.dump_frames {
        sink = sink.with_frame_dumps(&args.out.join("frames"))?;
    }

    let config = RunConfig {
        downsample: args.downsample as usize,
        phase: args.phase,
        diagnostics: args.diagnostics,
        seed: args.seed,
        checkpoint: Some(checkpoint),
        initial_model,
    };
    let source = std::iter::once(Ok(first)).chain(reader);
    let summary = run_sequence(source, &params, &config, &mut sink)?;

    print!(
        "processed {} of {} frames, {:.1} ms per frame",
        summary.frames_processed,
        summary.frames_read,
        summary.mean_wall_time.as_secs_f64() * 1e3
    );
    if let Some(ev) = sink.evaluator() {
        let m = ev.metrics_in(0..usize::MAX);
        print!(", accumulated recall {:.4} precision {:.4} F1 {:.4}", m.recall, m.precision, m.f1);
    }
    println!();
    if let Some(p) = summary.checkpoint {
        println!("model written to {}", p.display());
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> anyhow::Result<()> {
    let spec = SynthSpec {
        height: args.size.0,
        width: args.size.1,
        frames: args.frames,
        rank: args.rank,
        blobs: args.blobs,
        blob_size: args.blob_size,
        speed: args.speed,
        noise: args.noise,
        ..Default::default()
    };
    let (stream, gt) = synth_sequence(spec, args.seed)?;
    let written = write_sequence(&args.out, stream).with_context(|| format!("cannot write {}", args.out.display()))?;
    std::fs::write(args.out.join("groundtruth.csv"), format_boxes(&gt))?;
    println!("wrote {written} frames of {}x{} to {}", spec.height, spec.width, args.out.display());
    Ok(())
}

fn read_box_file(path: &Path) -> anyhow::Result<BoxesByFrame> {
    read_boxes(path).with_context(|| format!("{}", path.display()))
}

fn cmd_eval(args: EvalArgs) -> anyhow::Result<()> {
    let dets = read_box_file(&args.dets)?;
    let gt = read_box_file(&args.gt)?;
    let config = DetectionConfig { iou_thresh: args.iou_thresh, matching: args.matching, window: args.window, ..Default::default() };
    let mut evaluator = Evaluator::new(config, gt.clone())?;
    let last = dets.keys().chain(gt.keys()).max().copied();
    let mut latest = None;
    if let Some(last) = last {
        for frame in 0..=last {
            latest = Some(evaluator.evaluate_boxes(frame, dets.get(&frame).cloned().unwrap_or_default()));
        }
    }
    let (acc, win) = match latest {
        Some(e) => (e.accumulated, e.windowed),
        None => Default::default(),
    };
    println!(
        "{:?},{:?},{:?},{:?},{:?},{:?}",
        acc.recall, acc.precision, acc.f1, win.recall, win.precision, win.f1
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Eval(args) => cmd_eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
