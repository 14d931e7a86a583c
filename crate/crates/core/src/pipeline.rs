//! The online loop: separate each frame against the previous basis, fold it
//! into the accumulators, then refresh the basis.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use nalgebra::DVector;

use crate::error::{invalid, Result};
use crate::groups::{build_grid_groups, GroupStructure};
use crate::io::checkpoint::{write_checkpoint, Checkpoint};
use crate::model::{init_subspace, Frame, HyperParams, SeparationResult, SubspaceModel};
use crate::separation::{joint_objective, separate, separate_from};
use crate::subspace::{closed_form_basis, update_accumulators, update_basis, update_basis_traced, SurrogateTally};

/// Per-frame output of the online loop.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub index: usize,
    pub separation: SeparationResult,
    /// Surrogate `g_t(L_t)`, diagnostics only.
    pub g_cost: Option<f64>,
    /// `‖L_t − L_{t−1}‖_F`, diagnostics only.
    pub basis_delta: Option<f64>,
    pub wall_time: Duration,
}

/// Overlapping 3×3 windows with stride 1 and unit weights.
pub fn default_groups(height: usize, width: usize) -> Result<GroupStructure> {
    build_grid_groups(height, width, 3, 1)
}

/// State of an O-LSD run over frames of a fixed size.
#[derive(Debug, Clone)]
pub struct OnlineLsd {
    height: usize,
    width: usize,
    params: HyperParams,
    groups: GroupStructure,
    model: SubspaceModel,
    diagnostics: bool,
    tally: SurrogateTally,
    previous: Option<(DVector<f64>, DVector<f64>)>,
}

impl OnlineLsd {
    /// Fresh state with a seeded random basis and the default group structure.
    pub fn new(height: usize, width: usize, params: HyperParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let model = init_subspace(height * width, &params, seed)?;
        Self::with_model(height, width, params, model)
    }

    pub fn with_model(height: usize, width: usize, params: HyperParams, model: SubspaceModel) -> Result<Self> {
        let groups = default_groups(height, width)?;
        Self::with_groups(height, width, params, model, groups)
    }

    pub fn with_groups(
        height: usize,
        width: usize,
        params: HyperParams,
        model: SubspaceModel,
        groups: GroupStructure,
    ) -> Result<Self> {
        params.validate()?;
        let p = height * width;
        if model.pixels() != p || groups.p() != p {
            return Err(invalid(format!(
                "model has {} pixels and groups cover {}, frames have {p}",
                model.pixels(),
                groups.p()
            )));
        }
        if model.rank() != params.rank {
            return Err(invalid(format!("model rank {} differs from rank {}", model.rank(), params.rank)));
        }
        Ok(Self {
            height,
            width,
            params,
            groups,
            model,
            diagnostics: false,
            tally: SurrogateTally::default(),
            previous: None,
        })
    }

    /// Enables the surrogate cost and basis-change diagnostics.
    pub fn with_diagnostics(mut self, on: bool) -> Self {
        self.diagnostics = on;
        self
    }

    pub fn model(&self) -> &SubspaceModel {
        &self.model
    }

    pub fn into_model(self) -> SubspaceModel {
        self.model
    }

    pub fn params(&self) -> &HyperParams {
        &self.params
    }

    pub fn groups(&self) -> &GroupStructure {
        &self.groups
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn process(&mut self, d: &Frame) -> Result<FrameOutput> {
        self.step(d, false).map(|(out, _)| out)
    }

    /// Like [`OnlineLsd::process`], also returning the basis objective before
    /// the basis update and after each of its column steps.
    pub fn process_traced(&mut self, d: &Frame) -> Result<(FrameOutput, Vec<f64>)> {
        self.step(d, true)
    }

    fn step(&mut self, d: &Frame, traced: bool) -> Result<(FrameOutput, Vec<f64>)> {
        if d.height != self.height || d.width != self.width {
            return Err(invalid(format!(
                "frame {} is {}x{}, expected {}x{}",
                d.index, d.height, d.width, self.height, self.width
            )));
        }
        let started = Instant::now();
        let start = match (&self.previous, self.params.warm_start) {
            (Some((r, s)), true) => Some((r, s)),
            _ => None,
        };
        let separation = separate_from(d, &self.model.basis, &self.groups, &self.params, start)?;
        update_accumulators(&mut self.model, d, &separation)?;
        let before = self.diagnostics.then(|| self.model.basis.clone());
        let basis_trace = if traced {
            update_basis_traced(&mut self.model, self.params.lambda1, self.params.basis_passes)?
        } else {
            update_basis(&mut self.model, self.params.lambda1, self.params.basis_passes)?;
            Vec::new()
        };

        let (g_cost, basis_delta) = match before {
            Some(before) => {
                self.tally.record(d, &separation, &self.groups, &self.params);
                let g = self.tally.evaluate(&self.model, self.params.lambda1)?;
                (Some(g), Some((&self.model.basis - before).norm()))
            }
            None => (None, None),
        };
        if self.params.warm_start {
            self.previous = Some((separation.coeffs.clone(), separation.foreground.clone()));
        }
        let out = FrameOutput { index: d.index, separation, g_cost, basis_delta, wall_time: started.elapsed() };
        Ok((out, basis_trace))
    }
}

/// Receives the output of every processed frame, in frame order.
pub trait FrameSink {
    fn record(&mut self, frame: &Frame, output: &FrameOutput) -> Result<()>;

    /// Flushes buffered output; called once, also when the run fails.
    fn finish(&mut self) -> Result<()> {
        Ok(())
    }
}

/// Discards everything.
#[derive(Debug, Default)]
pub struct NullSink;

impl FrameSink for NullSink {
    fn record(&mut self, _: &Frame, _: &FrameOutput) -> Result<()> {
        Ok(())
    }
}

/// Keeps every output in memory.
#[derive(Debug, Default)]
pub struct CollectSink {
    pub outputs: Vec<FrameOutput>,
}

impl FrameSink for CollectSink {
    fn record(&mut self, _: &Frame, output: &FrameOutput) -> Result<()> {
        self.outputs.push(output.clone());
        Ok(())
    }
}

impl<S: FrameSink + ?Sized> FrameSink for &mut S {
    fn record(&mut self, frame: &Frame, output: &FrameOutput) -> Result<()> {
        (**self).record(frame, output)
    }

    fn finish(&mut self) -> Result<()> {
        (**self).finish()
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Process one frame out of every `downsample`.
    pub downsample: usize,
    /// Frames with `index % downsample == phase % downsample` are processed.
    pub phase: usize,
    pub diagnostics: bool,
    pub seed: u64,
    /// Where the final model is written, if anywhere.
    pub checkpoint: Option<PathBuf>,
    /// Resume from this model instead of a random basis.
    pub initial_model: Option<SubspaceModel>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { downsample: 1, phase: 0, diagnostics: false, seed: 0, checkpoint: None, initial_model: None }
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub frames_read: usize,
    pub frames_processed: usize,
    /// Mean over processed frames.
    pub mean_wall_time: Duration,
    pub dims: Option<(usize, usize)>,
    /// `None` when no frame was processed and no initial model was given.
    pub model: Option<SubspaceModel>,
    pub checkpoint: Option<PathBuf>,
}

/// Runs the online loop over `source`, streaming outputs to `sink`.
///
/// The state is sized from the first processed frame. On failure the sink is
/// still finished, so partial outputs reach disk, and the error is returned.
pub fn run_sequence<I, S>(source: I, params: &HyperParams, config: &RunConfig, mut sink: S) -> Result<RunSummary>
where
    I: IntoIterator<Item = Result<Frame>>,
    S: FrameSink,
{
    let result = drive(source, params, config, &mut sink);
    let finished = sink.finish();
    let summary = result?;
    finished?;
    Ok(summary)
}

fn drive<I, S>(source: I, params: &HyperParams, config: &RunConfig, sink: &mut S) -> Result<RunSummary>
where
    I: IntoIterator<Item = Result<Frame>>,
    S: FrameSink,
{
    params.validate()?;
    if config.downsample == 0 {
        return Err(invalid("down-sampling factor must be at least 1"));
    }
    let phase = config.phase % config.downsample;
    let mut state: Option<OnlineLsd> = None;
    let mut frames_read = 0;
    let mut processed = 0;
    let mut total_time = Duration::ZERO;
    for frame in source {
        let frame = frame?;
        frames_read += 1;
        if frame.index % config.downsample != phase {
            continue;
        }
        if state.is_none() {
            let fresh = match &config.initial_model {
                Some(m) => OnlineLsd::with_model(frame.height, frame.width, *params, m.clone())?,
                None => OnlineLsd::new(frame.height, frame.width, *params, config.seed)?,
            };
            state = Some(fresh.with_diagnostics(config.diagnostics));
        }
        let lsd = state.as_mut().expect("state initialized above");
        let output = lsd.process(&frame)?;
        total_time += output.wall_time;
        processed += 1;
        sink.record(&frame, &output)?;
    }

    let dims = state.as_ref().map(OnlineLsd::dims);
    let model = state.map(OnlineLsd::into_model).or_else(|| config.initial_model.clone());
    let mut checkpoint = None;
    if let (Some(path), Some(m), Some((height, width))) = (&config.checkpoint, &model, dims) {
        let ck = Checkpoint { height, width, lambda1: params.lambda1, lambda2: params.lambda2, model: m.clone() };
        write_checkpoint(path, &ck)?;
        checkpoint = Some(path.clone());
    }
    let mean_wall_time = if processed > 0 { total_time / processed as u32 } else { Duration::ZERO };
    Ok(RunSummary { frames_read, frames_processed: processed, mean_wall_time, dims, model, checkpoint })
}

#[derive(Debug, Clone)]
pub struct BatchResult {
    pub model: SubspaceModel,
    pub separations: Vec<SeparationResult>,
    /// Full-sequence cost after each epoch's basis step.
    pub costs: Vec<f64>,
}

/// Batch alternating minimization of the full-sequence cost
/// `Σ_i ℓ̂(d_i, L, r_i, s_i) + (λ1/2)‖L‖²_F`: every epoch re-separates all
/// frames against the current basis, then sets `L` to the exact minimizer.
pub fn batch_decompose(
    frames: &[Frame],
    groups: &GroupStructure,
    params: &HyperParams,
    seed: u64,
    epochs: usize,
) -> Result<BatchResult> {
    let first = frames.first().ok_or_else(|| invalid("batch decomposition needs at least one frame"))?;
    if epochs == 0 {
        return Err(invalid("batch decomposition needs at least one epoch"));
    }
    let p = first.len();
    let mut basis = init_subspace(p, params, seed)?.basis;
    let mut costs = Vec::with_capacity(epochs);
    let mut separations = Vec::new();
    let mut model = SubspaceModel::from_basis(basis.clone());
    for _ in 0..epochs {
        model = SubspaceModel::from_basis(basis.clone());
        // warm starts keep the epoch costs non-increasing
        separations = if separations.is_empty() {
            frames.iter().map(|f| separate(f, &basis, groups, params)).collect::<Result<Vec<_>>>()?
        } else {
            frames
                .iter()
                .zip(&separations)
                .map(|(f, prev)| separate_from(f, &basis, groups, params, Some((&prev.coeffs, &prev.foreground))))
                .collect::<Result<Vec<_>>>()?
        };
        for (f, res) in frames.iter().zip(&separations) {
            update_accumulators(&mut model, f, res)?;
        }
        basis = closed_form_basis(&model, params.lambda1)?;
        model.basis = basis.clone();
        let cost: f64 = frames
            .iter()
            .zip(&separations)
            .map(|(f, res)| {
                joint_objective(&f.pixels, &basis, &res.coeffs, &res.foreground, groups, params)
            })
            .sum::<f64>()
            + 0.5 * params.lambda1 * basis.norm_squared();
        costs.push(cost);
    }
    Ok(BatchResult { model, separations, costs })
}
