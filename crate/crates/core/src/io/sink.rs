//! Per-frame metrics CSV and the composite sink used by command-line runs.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::boxfile::BOX_HEADER;
use super::pgm::write_frame_pgm;
use crate::detection::{DetectionConfig, Evaluator, FrameEvaluation};
use crate::error::Result;
use crate::model::Frame;
use crate::pipeline::{FrameOutput, FrameSink};

pub const METRICS_HEADER: &str =
    "frame_index,iters,final_delta,fg_energy,basis_delta,recall5,precision5,f1_5,recall_acc,precision_acc,f1_acc,wall_ms";

/// Index of the `wall_ms` column, the only field that varies between identical runs.
pub const WALL_MS_COLUMN: usize = 11;

fn opt(out: &mut String, v: Option<f64>) {
    out.push(',');
    if let Some(v) = v {
        let _ = write!(out, "{v}");
    }
}

/// One CSV row; detection metrics are empty when no evaluation was made.
pub fn format_metrics_row(frame: &Frame, output: &FrameOutput, eval: Option<&FrameEvaluation>) -> String {
    let s = &output.separation;
    let d_norm = frame.pixels.norm();
    let fg_energy = if d_norm > 0.0 { s.foreground.norm() / d_norm } else { 0.0 };
    let mut row = format!("{},{},{},{}", output.index, s.iters, s.final_delta, fg_energy);
    opt(&mut row, output.basis_delta);
    let w = eval.map(|e| e.windowed);
    let a = eval.map(|e| e.accumulated);
    for v in [w.map(|m| m.recall), w.map(|m| m.precision), w.map(|m| m.f1)] {
        opt(&mut row, v);
    }
    for v in [a.map(|m| m.recall), a.map(|m| m.precision), a.map(|m| m.f1)] {
        opt(&mut row, v);
    }
    let _ = write!(row, ",{:.3}", output.wall_time.as_secs_f64() * 1e3);
    row
}

/// Streams the metrics CSV: optional `#` comment lines, the header, one row per frame.
#[derive(Debug)]
pub struct MetricsWriter<W: Write> {
    out: W,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(mut out: W, preamble: &[String]) -> Result<Self> {
        for line in preamble {
            writeln!(out, "# {line}")?;
        }
        writeln!(out, "{METRICS_HEADER}")?;
        Ok(Self { out })
    }

    pub fn write_row(&mut self, frame: &Frame, output: &FrameOutput, eval: Option<&FrameEvaluation>) -> Result<()> {
        writeln!(self.out, "{}", format_metrics_row(frame, output, eval))?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> FrameSink for MetricsWriter<W> {
    fn record(&mut self, frame: &Frame, output: &FrameOutput) -> Result<()> {
        self.write_row(frame, output, None)
    }

    fn finish(&mut self) -> Result<()> {
        self.flush()
    }
}

/// Drops the `wall_ms` field from every data row so runs can be compared byte for byte.
pub fn mask_wall_time(csv: &str) -> String {
    csv.lines()
        .map(|l| {
            if l.starts_with('#') {
                l.to_string()
            } else {
                let mut fields: Vec<&str> = l.split(',').collect();
                if fields.len() > WALL_MS_COLUMN {
                    fields.remove(WALL_MS_COLUMN);
                }
                fields.join(",")
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Metrics CSV plus optional detection scoring, detections file and PGM dumps.
pub struct RunSink<W: Write> {
    metrics: MetricsWriter<W>,
    evaluator: Option<Evaluator>,
    detector: Option<DetectionConfig>,
    detections: Option<Box<dyn Write>>,
    dump_dir: Option<PathBuf>,
}

impl<W: Write> RunSink<W> {
    pub fn new(metrics: MetricsWriter<W>) -> Self {
        Self { metrics, evaluator: None, detector: None, detections: None, dump_dir: None }
    }

    /// Detects and scores every foreground with `evaluator`.
    pub fn with_evaluator(mut self, evaluator: Evaluator) -> Self {
        self.evaluator = Some(evaluator);
        self
    }

    /// Detects without scoring, for runs that have no groundtruth.
    pub fn with_detector(mut self, config: DetectionConfig) -> Self {
        self.detector = Some(config);
        self
    }

    /// Writes the detected boxes in box-file format; needs an evaluator or a detector.
    pub fn with_detections(mut self, out: Box<dyn Write>) -> Result<Self> {
        let mut out = out;
        writeln!(out, "{BOX_HEADER}")?;
        self.detections = Some(out);
        Ok(self)
    }

    /// Writes `background_%06d.pgm` and `foreground_%06d.pgm` per frame into `dir`.
    pub fn with_frame_dumps(mut self, dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        self.dump_dir = Some(dir.to_path_buf());
        Ok(self)
    }

    pub fn evaluator(&self) -> Option<&Evaluator> {
        self.evaluator.as_ref()
    }

    pub fn into_parts(self) -> (MetricsWriter<W>, Option<Evaluator>) {
        (self.metrics, self.evaluator)
    }
}

impl<W: Write> FrameSink for RunSink<W> {
    fn record(&mut self, frame: &Frame, output: &FrameOutput) -> Result<()> {
        let s = &output.separation;
        let eval = match &mut self.evaluator {
            Some(ev) => Some(ev.evaluate(frame.index, s.foreground.as_slice(), frame.height, frame.width)?),
            None => None,
        };
        self.metrics.write_row(frame, output, eval.as_ref())?;
        let boxes = match (&eval, &self.detector, &self.detections) {
            (Some(e), _, Some(_)) => Some(e.detections.clone()),
            (None, Some(cfg), Some(_)) => Some(cfg.detect(s.foreground.as_slice(), frame.height, frame.width)?),
            _ => None,
        };
        if let (Some(out), Some(boxes)) = (&mut self.detections, boxes) {
            for b in &boxes {
                writeln!(out, "{},{},{},{},{}", frame.index, b.x, b.y, b.w, b.h)?;
            }
        }
        if let Some(dir) = &self.dump_dir {
            let (h, w) = (frame.height, frame.width);
            let fg: Vec<f64> = s.foreground.iter().map(|v| v.abs()).collect();
            std::fs::write(dir.join(format!("background_{:06}.pgm", frame.index)), write_frame_pgm(s.background.as_slice(), h, w))?;
            std::fs::write(dir.join(format!("foreground_{:06}.pgm", frame.index)), write_frame_pgm(&fg, h, w))?;
        }
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        if let Some(out) = &mut self.detections {
            out.flush()?;
        }
        self.metrics.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::{BoundingBox, BoxesByFrame, Segmentation};
    use crate::model::SeparationResult;
    use nalgebra::DVector;
    use std::time::Duration;

    fn output(index: usize, fg: Vec<f64>, delta: Option<f64>) -> FrameOutput {
        let p = fg.len();
        FrameOutput {
            index,
            separation: SeparationResult {
                coeffs: DVector::zeros(1),
                foreground: DVector::from_vec(fg),
                background: DVector::zeros(p),
                iters: 3,
                final_delta: 1e-6,
                objective_trace: vec![],
            },
            g_cost: None,
            basis_delta: delta,
            wall_time: Duration::from_micros(1500),
        }
    }

    #[test]
    fn header_only_without_frames() {
        let w = MetricsWriter::new(Vec::new(), &[]).unwrap();
        assert_eq!(String::from_utf8(w.into_inner()).unwrap(), format!("{METRICS_HEADER}\n"));
    }

    #[test]
    fn one_line_per_frame_with_empty_fields() {
        let mut w = MetricsWriter::new(Vec::new(), &[]).unwrap();
        let frame = Frame::new(vec![0.0, 0.0, 3.0, 4.0], 2, 2, 0).unwrap();
        for t in 0..4 {
            w.record(&frame, &output(t, vec![0.0, 0.0, 0.0, 2.5], None)).unwrap();
        }
        let text = String::from_utf8(w.into_inner()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[1], "0,3,0.000001,0.5,,,,,,,,1.500");
        assert_eq!(lines[1].split(',').count(), METRICS_HEADER.split(',').count());
    }

    #[test]
    fn preamble_is_commented() {
        let w = MetricsWriter::new(Vec::new(), &["lambda1=0.015625".into()]).unwrap();
        let text = String::from_utf8(w.into_inner()).unwrap();
        assert!(text.starts_with("# lambda1=0.015625\nframe_index,"));
    }

    #[test]
    fn run_sink_scores_frames() {
        let mut gt = BoxesByFrame::new();
        gt.insert(0, vec![BoundingBox::new(1, 1, 2, 2).unwrap()]);
        let config = DetectionConfig { segmentation: Segmentation::Fixed(0.5), ..Default::default() };
        let mut fg = vec![0.0; 16];
        for (y, x) in [(1, 1), (1, 2), (2, 1), (2, 2)] {
            fg[y * 4 + x] = 1.0;
        }
        let frame = Frame::new(vec![1.0; 16], 4, 4, 0).unwrap();
        let mut sink = RunSink::new(MetricsWriter::new(Vec::new(), &[]).unwrap())
            .with_evaluator(Evaluator::new(config, gt).unwrap());
        sink.record(&frame, &output(0, fg, Some(0.25))).unwrap();
        sink.finish().unwrap();
        let (metrics, _) = sink.into_parts();
        let text = String::from_utf8(metrics.into_inner()).unwrap();
        let row = text.lines().nth(1).unwrap();
        assert!(row.starts_with("0,3,0.000001,0.5,0.25,1,1,1,1,1,1,"), "{row}");
    }

    #[test]
    fn masking_removes_only_timing() {
        let a = "# x\nframe_index,iters,final_delta,fg_energy,basis_delta,recall5,precision5,f1_5,recall_acc,precision_acc,f1_acc,wall_ms\n0,1,2,3,,,,,,,,9.000";
        let b = a.replace("9.000", "12.500");
        assert_eq!(mask_wall_time(a), mask_wall_time(&b));
        assert_ne!(mask_wall_time(a), mask_wall_time(&a.replace(",1,2,", ",1,3,")));
    }
}
