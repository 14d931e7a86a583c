//! Runs O-LSD on the default synthetic benchmark and prints detection scores.
//!
//! Usage: `cargo run --release --example benchmark -- [T] [seed] [theta...]`
//!
//! With `OLSD_BATCH_EPOCHS=n` set, the batch alternating solver is scored too.

use std::time::Instant;

use olsd::detection::{DetectionConfig, Evaluator, Segmentation};
use olsd::io::{synth_sequence, SynthSpec};
use olsd::pipeline::{batch_decompose, default_groups, run_sequence, CollectSink, RunConfig};
use olsd::{default_hyperparams, Frame};

fn main() -> olsd::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let t: usize = args.first().and_then(|s| s.parse().ok()).unwrap_or(1);
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let thetas: Vec<f64> = if args.len() > 2 {
        args[2..].iter().filter_map(|s| s.parse().ok()).collect()
    } else {
        vec![0.05, 0.1, 0.15, 0.2]
    };

    let spec = SynthSpec::default();
    let (stream, gt) = synth_sequence(spec, seed)?;
    let frames: Vec<Frame> = stream.collect();
    let params = default_hyperparams(spec.height * spec.width)?;
    let config = RunConfig { downsample: t, seed, ..Default::default() };
    let mut sink = CollectSink::default();
    let started = Instant::now();
    let summary = run_sequence(frames.iter().cloned().map(Ok), &params, &config, &mut sink)?;
    println!(
        "T={t} processed={} total={:.2?} per_frame={:.2?}",
        summary.frames_processed,
        started.elapsed(),
        summary.mean_wall_time
    );
    let iters: usize = sink.outputs.iter().map(|o| o.separation.iters).sum();
    println!("mean separation iterations {:.2}", iters as f64 / sink.outputs.len() as f64);

    let mut segs: Vec<Segmentation> = thetas.iter().map(|&th| Segmentation::Fixed(th)).collect();
    segs.push(Segmentation::default());
    for seg in segs {
        let cfg = DetectionConfig { segmentation: seg, ..Default::default() };
        let mut ev = Evaluator::new(cfg, gt.clone())?;
        for o in &sink.outputs {
            ev.evaluate(o.index, o.separation.foreground.as_slice(), spec.height, spec.width)?;
        }
        let all = ev.metrics_in(0..usize::MAX);
        let late = ev.metrics_in(100..500);
        println!(
            "{seg}: acc F1 {:.4} (R {:.3} P {:.3}), frames 100-500 F1 {:.4}",
            all.f1, all.recall, all.precision, late.f1
        );
    }
    if let Some(epochs) = std::env::var("OLSD_BATCH_EPOCHS").ok().and_then(|v| v.parse().ok()) {
        let groups = default_groups(spec.height, spec.width)?;
        let started = Instant::now();
        let batch = batch_decompose(&frames, &groups, &params, seed, epochs)?;
        println!("batch: {epochs} epochs in {:.2?}, costs {:?}", started.elapsed(), batch.costs);
        for &th in &thetas {
            let cfg = DetectionConfig { segmentation: Segmentation::Fixed(th), ..Default::default() };
            let mut ev = Evaluator::new(cfg, gt.clone())?;
            for (f, res) in frames.iter().zip(&batch.separations) {
                ev.evaluate(f.index, res.foreground.as_slice(), spec.height, spec.width)?;
            }
            println!("batch fixed:{th}: frames 100-500 F1 {:.4}", ev.metrics_in(100..500).f1);
        }
    }
    Ok(())
}
