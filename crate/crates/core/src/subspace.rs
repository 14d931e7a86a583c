//! Online subspace maintenance.
//!
//! The basis minimizes the surrogate
//!
//! ```text
//! g_t(L) = (1/t) Σ_{i≤t} ℓ̂(d_i, L, r_i, s_i) + (λ1 / 2t) ‖L‖²_F
//! ```
//!
//! whose `L`-dependent part only involves `A_t = Σ r_i r_iᵀ` and
//! `B_t = Σ (d_i − s_i) r_iᵀ`. Column-wise block coordinate descent on
//! `tr(Lᵀ(A_t + λ1 I)L) − 2 tr(LᵀB_t)` avoids inverting anything.

use nalgebra::{Cholesky, DMatrix};

use crate::error::{invalid, Result};
use crate::groups::{omega_unchecked, GroupStructure};
use crate::model::{Frame, HyperParams, SeparationResult, SubspaceModel};
use crate::separation::{joint_objective, separate};

/// Folds one separated frame into the accumulators.
pub fn update_accumulators(model: &mut SubspaceModel, d: &Frame, res: &SeparationResult) -> Result<()> {
    let (p, r) = model.basis.shape();
    if d.len() != p || res.foreground.len() != p || res.coeffs.len() != r {
        return Err(invalid("frame, separation and model dimensions disagree"));
    }
    model.acc_a.ger(1.0, &res.coeffs, &res.coeffs, 1.0);
    let target = &d.pixels - &res.foreground;
    model.acc_b.ger(1.0, &target, &res.coeffs, 1.0);
    model.frames_seen += 1;
    Ok(())
}

fn shifted_gram(acc_a: &DMatrix<f64>, lambda1: f64) -> DMatrix<f64> {
    let mut shifted = acc_a.clone();
    for i in 0..shifted.nrows() {
        shifted[(i, i)] += lambda1;
    }
    shifted
}

/// `tr(Lᵀ(A + λ1 I)L) − 2 tr(LᵀB)`.
pub fn basis_objective(basis: &DMatrix<f64>, acc_a: &DMatrix<f64>, acc_b: &DMatrix<f64>, lambda1: f64) -> f64 {
    let shifted = shifted_gram(acc_a, lambda1);
    let quad = (basis.tr_mul(basis) * shifted).trace();
    let lin = basis.dot(acc_b);
    quad - 2.0 * lin
}

/// `passes` sweeps of column-wise block coordinate descent on the basis.
pub fn update_basis(model: &mut SubspaceModel, lambda1: f64, passes: usize) -> Result<()> {
    sweep_columns(model, lambda1, passes, |_| ())
}

/// Like [`update_basis`], additionally returning the basis objective before
/// the first step and after every column step.
pub fn update_basis_traced(model: &mut SubspaceModel, lambda1: f64, passes: usize) -> Result<Vec<f64>> {
    let mut trace = vec![basis_objective(&model.basis, &model.acc_a, &model.acc_b, lambda1)];
    sweep_columns(model, lambda1, passes, |m| {
        trace.push(basis_objective(&m.basis, &m.acc_a, &m.acc_b, lambda1))
    })?;
    Ok(trace)
}

/// Sweeps until a full pass moves the basis by at most `tol` (max-abs entry)
/// or `max_passes` is reached; returns the number of passes run.
pub fn update_basis_until(model: &mut SubspaceModel, lambda1: f64, tol: f64, max_passes: usize) -> Result<usize> {
    for pass in 1..=max_passes {
        let before = model.basis.clone();
        update_basis(model, lambda1, 1)?;
        if (&model.basis - before).amax() <= tol {
            return Ok(pass);
        }
    }
    Ok(max_passes)
}

fn sweep_columns(
    model: &mut SubspaceModel,
    lambda1: f64,
    passes: usize,
    mut after_column: impl FnMut(&SubspaceModel),
) -> Result<()> {
    if !(lambda1 > 0.0 && lambda1.is_finite()) {
        return Err(invalid("lambda1 must be positive"));
    }
    if model.frames_seen == 0 {
        return Err(invalid("basis update needs at least one accumulated frame"));
    }
    let shifted = shifted_gram(&model.acc_a, lambda1);
    for _ in 0..passes {
        for i in 0..model.rank() {
            let fitted = &model.basis * shifted.column(i);
            let step = (model.acc_b.column(i) - fitted) / shifted[(i, i)];
            let mut col = model.basis.column_mut(i);
            col += step;
            after_column(model);
        }
    }
    Ok(())
}

/// Exact minimizer `B (A + λ1 I)⁻¹` of the basis objective.
pub fn closed_form_basis(model: &SubspaceModel, lambda1: f64) -> Result<DMatrix<f64>> {
    if !(lambda1 > 0.0 && lambda1.is_finite()) {
        return Err(invalid("lambda1 must be positive"));
    }
    let factor = Cholesky::new(shifted_gram(&model.acc_a, lambda1))
        .ok_or_else(|| invalid("accumulator A is not positive semi-definite"))?;
    Ok(factor.solve(&model.acc_b.transpose()).transpose())
}

/// Surrogate `g_t(L_t)` evaluated term by term over the retained history.
pub fn surrogate_cost(
    model: &SubspaceModel,
    history: &[(Frame, SeparationResult)],
    groups: &GroupStructure,
    params: &HyperParams,
) -> Result<f64> {
    if history.is_empty() {
        return Err(invalid("surrogate needs a nonempty history"));
    }
    let t = history.len() as f64;
    let mut total = 0.0;
    for (frame, res) in history {
        if frame.len() != model.pixels() {
            return Err(invalid("history frame does not match the model"));
        }
        total += joint_objective(&frame.pixels, &model.basis, &res.coeffs, &res.foreground, groups, params);
    }
    Ok(total / t + 0.5 * params.lambda1 / t * model.basis.norm_squared())
}

/// Running scalars that, together with the accumulators, give `g_t(L)` for
/// any `L` without keeping the history:
/// `Σ‖d_i − L r_i − s_i‖² = Σ‖d_i − s_i‖² − 2 tr(LᵀB) + tr(LᵀL A)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SurrogateTally {
    target_sq: f64,
    penalties: f64,
    frames: u64,
}

impl SurrogateTally {
    pub fn record(&mut self, d: &Frame, res: &SeparationResult, groups: &GroupStructure, params: &HyperParams) {
        self.target_sq += (&d.pixels - &res.foreground).norm_squared();
        self.penalties += 0.5 * params.lambda1 * res.coeffs.norm_squared()
            + params.lambda2 * omega_unchecked(res.foreground.as_slice(), groups);
        self.frames += 1;
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    pub fn evaluate(&self, model: &SubspaceModel, lambda1: f64) -> Result<f64> {
        if self.frames == 0 {
            return Err(invalid("surrogate needs at least one frame"));
        }
        let l = &model.basis;
        let fit = self.target_sq - 2.0 * l.dot(&model.acc_b) + (l.tr_mul(l) * &model.acc_a).trace();
        let t = self.frames as f64;
        Ok((0.5 * fit.max(0.0) + self.penalties) / t + 0.5 * lambda1 / t * l.norm_squared())
    }
}

/// Empirical cost `f_n(L)`: every frame is re-separated against `basis` with
/// the stop tolerance tightened to `τ/10`.
pub fn empirical_cost(
    basis: &DMatrix<f64>,
    frames: &[Frame],
    groups: &GroupStructure,
    params: &HyperParams,
) -> Result<f64> {
    if frames.is_empty() {
        return Err(invalid("empirical cost needs at least one frame"));
    }
    let tight = HyperParams { tau: params.tau / 10.0, ..*params };
    let mut total = 0.0;
    for frame in frames {
        let res = separate(frame, basis, groups, &tight)?;
        total += res.objective_trace.last().copied().unwrap_or(0.0);
    }
    let n = frames.len() as f64;
    Ok(total / n + 0.5 * params.lambda1 / n * basis.norm_squared())
}
