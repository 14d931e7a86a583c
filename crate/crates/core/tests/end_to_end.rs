use std::fs::File;
use std::io::BufWriter;

use nalgebra::DVector;
use olsd::detection::{DetectionConfig, Evaluator, Segmentation};
use olsd::io::sink::mask_wall_time;
use olsd::io::{
    format_boxes, read_boxes, read_checkpoint, synth_sequence, write_sequence, FrameReader, MetricsWriter,
    RunSink, SynthSpec, METRICS_HEADER,
};
use olsd::pipeline::{batch_decompose, default_groups, run_sequence, CollectSink, OnlineLsd, RunConfig};
use olsd::{default_hyperparams, Frame, HyperParams};

fn small_spec() -> SynthSpec {
    SynthSpec { height: 24, width: 32, frames: 30, blob_size: (4, 6), ..Default::default() }
}

#[test]
fn disk_round_trip_matches_in_memory_run() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec();
    let (stream, gt) = synth_sequence(spec, 3).unwrap();
    let frames: Vec<Frame> = stream.collect();
    write_sequence(&dir.path().join("seq"), frames.clone()).unwrap();
    std::fs::write(dir.path().join("gt.csv"), format_boxes(&gt)).unwrap();
    assert_eq!(read_boxes(&dir.path().join("gt.csv")).unwrap().values().flatten().count(), 3 * 30);

    let params = HyperParams { rank: 5, ..default_hyperparams(spec.height * spec.width).unwrap() };
    let from_disk = FrameReader::open(&dir.path().join("seq")).unwrap();
    let mut a = CollectSink::default();
    run_sequence(from_disk, &params, &RunConfig::default(), &mut a).unwrap();

    // disk frames are quantized to 8 bits, so compare against requantized frames
    let requantized: Vec<Frame> = frames
        .iter()
        .map(|f| {
            let px = f.pixels.iter().map(|v| (255.0 * v + 0.5).floor() / 255.0).collect();
            Frame::new(px, f.height, f.width, f.index).unwrap()
        })
        .collect();
    let mut b = CollectSink::default();
    run_sequence(requantized.into_iter().map(Ok), &params, &RunConfig::default(), &mut b).unwrap();
    assert_eq!(a.outputs.len(), 30);
    for (x, y) in a.outputs.iter().zip(&b.outputs) {
        assert_eq!(x.separation, y.separation);
    }
}

#[test]
fn metrics_file_and_checkpoint_resume() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec();
    let (stream, gt) = synth_sequence(spec, 4).unwrap();
    let frames: Vec<Frame> = stream.collect();
    let params = HyperParams { rank: 4, ..default_hyperparams(spec.height * spec.width).unwrap() };
    let config = DetectionConfig { segmentation: Segmentation::Fixed(0.1), ..Default::default() };

    let metrics_path = dir.path().join("metrics.csv");
    let ck_path = dir.path().join("model.ckpt");
    let writer = MetricsWriter::new(BufWriter::new(File::create(&metrics_path).unwrap()), &[]).unwrap();
    let sink = RunSink::new(writer)
        .with_evaluator(Evaluator::new(config, gt.clone()).unwrap())
        .with_detections(Box::new(File::create(dir.path().join("dets.csv")).unwrap()))
        .unwrap()
        .with_frame_dumps(&dir.path().join("frames"))
        .unwrap();
    let run = RunConfig { downsample: 2, checkpoint: Some(ck_path.clone()), ..Default::default() };
    let summary = run_sequence(frames[..20].iter().cloned().map(Ok), &params, &run, sink).unwrap();
    assert_eq!(summary.frames_processed, 10);
    assert_eq!(summary.checkpoint.as_deref(), Some(ck_path.as_path()));

    let text = std::fs::read_to_string(&metrics_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert_eq!(lines.len(), 11);
    assert!(lines[1].starts_with("0,"));
    assert!(lines[2].starts_with("2,"));
    assert!(read_boxes(&dir.path().join("dets.csv")).is_ok());
    assert!(dir.path().join("frames/background_000018.pgm").is_file());
    assert!(dir.path().join("frames/foreground_000018.pgm").is_file());

    let ck = read_checkpoint(&ck_path).unwrap();
    assert_eq!((ck.height, ck.width), (24, 32));
    assert_eq!(ck.lambda1, params.lambda1);
    assert_eq!(ck.model, summary.model.clone().unwrap());
    assert_eq!(ck.model.frames_seen, 10);

    // resuming from the checkpoint continues exactly where an uninterrupted run would be
    let full = RunConfig { downsample: 2, ..Default::default() };
    let whole = run_sequence(frames.iter().cloned().map(Ok), &params, &full, CollectSink::default()).unwrap();
    let resumed_cfg = RunConfig { downsample: 2, initial_model: Some(ck.model), ..Default::default() };
    let resumed = run_sequence(frames[20..].iter().cloned().map(Ok), &params, &resumed_cfg, CollectSink::default()).unwrap();
    assert_eq!(resumed.model, whole.model);
}

#[test]
fn repeated_runs_differ_only_in_timing() {
    let spec = small_spec();
    let params = HyperParams { rank: 3, ..default_hyperparams(spec.height * spec.width).unwrap() };
    let run = || {
        let (stream, gt) = synth_sequence(spec, 8).unwrap();
        let config = DetectionConfig { segmentation: Segmentation::Fixed(0.1), ..Default::default() };
        let mut sink = RunSink::new(MetricsWriter::new(Vec::new(), &[]).unwrap())
            .with_evaluator(Evaluator::new(config, gt).unwrap());
        let cfg = RunConfig { diagnostics: true, seed: 1, ..Default::default() };
        run_sequence(stream.map(Ok), &params, &cfg, &mut sink).unwrap();
        String::from_utf8(sink.into_parts().0.into_inner()).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(mask_wall_time(&a), mask_wall_time(&b));
    assert_eq!(a.lines().count(), 31);
    // diagnostics fill the basis_delta column
    assert!(a.lines().skip(1).all(|l| !l.split(',').nth(4).unwrap().is_empty()));
}

#[test]
fn stationary_scene_online_and_batch_agree() {
    let (h, w) = (12, 12);
    let pattern: Vec<f64> = (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            0.3 + 0.4 * (0.5 + 0.5 * (y / 3.0).sin() * (x / 4.0).cos())
        })
        .collect();
    let d = DVector::from_vec(pattern.clone());
    let frames: Vec<Frame> = (0..50).map(|t| Frame::new(pattern.clone(), h, w, t).unwrap()).collect();
    let params = HyperParams { rank: 3, ..default_hyperparams(h * w).unwrap() };

    let mut lsd = OnlineLsd::new(h, w, params, 2).unwrap();
    let mut energies = Vec::new();
    for f in &frames {
        energies.push(lsd.process(f).unwrap().separation.foreground.norm() / d.norm());
    }
    let groups = default_groups(h, w).unwrap();
    let batch = batch_decompose(&frames, &groups, &params, 2, 10).unwrap();
    let batch_energy = batch.separations.last().unwrap().foreground.norm() / d.norm();
    assert!(batch_energy <= 0.05, "batch foreground energy {batch_energy}");
    assert!(energies[40..].iter().all(|&e| e <= 0.05), "{:?}", &energies[40..]);
}

#[test]
fn moving_blobs_are_found() {
    let spec = SynthSpec { height: 48, width: 48, frames: 120, ..Default::default() };
    let (stream, gt) = synth_sequence(spec, 5).unwrap();
    let params = HyperParams { rank: 10, ..default_hyperparams(spec.height * spec.width).unwrap() };
    let config = DetectionConfig { segmentation: Segmentation::Fixed(0.1), ..Default::default() };
    let mut sink = RunSink::new(MetricsWriter::new(std::io::sink(), &[]).unwrap())
        .with_evaluator(Evaluator::new(config, gt).unwrap());
    run_sequence(stream.map(Ok), &params, &RunConfig::default(), &mut sink).unwrap();
    let f1 = sink.evaluator().unwrap().metrics_in(40..120).f1;
    assert!(f1 >= 0.7, "F1 {f1}");
}
