//! Frame ingestion, output sinks, checkpoints and synthetic sequences.

pub mod boxfile;
pub mod checkpoint;
pub mod pgm;
pub mod sequence;
pub mod sink;
pub mod synth;

pub use boxfile::{format_boxes, parse_boxes, read_boxes};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use pgm::{read_frame_pgm, write_frame_pgm};
pub use sequence::{write_sequence, FrameReader};
pub use sink::{MetricsWriter, RunSink, METRICS_HEADER};
pub use synth::{synth_sequence, SynthSpec, SynthStream};
