//! Shared domain types and subspace initialization.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{ensure_finite, invalid, Result};

/// One grayscale frame stored as a flat, row-major intensity vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub pixels: DVector<f64>,
    pub height: usize,
    pub width: usize,
    /// Position in the source sequence.
    pub index: usize,
}

impl Frame {
    pub fn new(pixels: Vec<f64>, height: usize, width: usize, index: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid("frame dimensions must be positive"));
        }
        if pixels.len() != height * width {
            return Err(invalid(format!(
                "frame has {} pixels, expected {}x{} = {}",
                pixels.len(),
                height,
                width,
                height * width
            )));
        }
        ensure_finite(&pixels, "frame")?;
        Ok(Self { pixels: DVector::from_vec(pixels), height, width, index })
    }

    pub fn zeros(height: usize, width: usize, index: usize) -> Self {
        Self { pixels: DVector::zeros(height * width), height, width, index }
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// Weights, tolerances and iteration budgets of the decomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    /// Weight of the low-rank (ridge / Frobenius) terms.
    pub lambda1: f64,
    /// Weight of the structured sparsity norm.
    pub lambda2: f64,
    pub rank: usize,
    /// Separation stop tolerance on `max(|Δr|, |Δs|) / p`.
    pub tau: f64,
    pub max_sep_iters: usize,
    /// Stop tolerance of the dual prox solver (∞-norm change per sweep).
    pub prox_tol: f64,
    pub max_prox_iters: usize,
    /// Column sweeps of the basis update per frame.
    pub basis_passes: usize,
    /// Seed separation with the previous frame's `(r, s)` instead of zeros.
    pub warm_start: bool,
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 > 0.0 && self.lambda1.is_finite()) {
            return Err(invalid("lambda1 must be positive"));
        }
        if !(self.lambda2 > 0.0 && self.lambda2.is_finite()) {
            return Err(invalid("lambda2 must be positive"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(invalid("tau must be positive"));
        }
        if !(self.prox_tol > 0.0 && self.prox_tol.is_finite()) {
            return Err(invalid("prox_tol must be positive"));
        }
        if self.rank == 0
            || self.max_sep_iters == 0
            || self.max_prox_iters == 0
            || self.basis_passes == 0
        {
            return Err(invalid("rank and iteration budgets must be at least 1"));
        }
        Ok(())
    }
}

/// Defaults for a frame of `p` pixels: `λ1 = 1/√p`, `λ2 = 10·λ1`, rank 25, `τ = 1e-5`.
pub fn default_hyperparams(p: usize) -> Result<HyperParams> {
    if p == 0 {
        return Err(invalid("pixel count must be positive"));
    }
    let lambda1 = 1.0 / (p as f64).sqrt();
    Ok(HyperParams {
        lambda1,
        // λ1/λ2 = 0.1, written as a product so that e.g. p = 160000 gives 0.025 exactly
        lambda2: lambda1 * 10.0,
        rank: 25,
        tau: 1e-5,
        max_sep_iters: 100,
        prox_tol: 1e-8,
        max_prox_iters: 200,
        basis_passes: 1,
        warm_start: false,
    })
}

/// Basis `L_t` together with the sufficient statistics of all frames seen so far.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceModel {
    /// `p × r` basis.
    pub basis: DMatrix<f64>,
    /// `Σ r_i r_iᵀ`, `r × r`.
    pub acc_a: DMatrix<f64>,
    /// `Σ (d_i − s_i) r_iᵀ`, `p × r`.
    pub acc_b: DMatrix<f64>,
    pub frames_seen: u64,
}

impl SubspaceModel {
    /// A model with the given basis and empty accumulators.
    pub fn from_basis(basis: DMatrix<f64>) -> Self {
        let (p, r) = basis.shape();
        Self { basis, acc_a: DMatrix::zeros(r, r), acc_b: DMatrix::zeros(p, r), frames_seen: 0 }
    }

    pub fn pixels(&self) -> usize {
        self.basis.nrows()
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }
}

/// Scale applied to the standard-normal entries of the initial basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitScale {
    /// `1/√p`, which gives unit expected column norm.
    InvSqrtPixels,
    Fixed(f64),
}

/// Random initial basis with i.i.d. `N(0,1)/√p` entries and zero accumulators.
///
/// The generator is ChaCha8 seeded from `seed`, filled column-major, so the
/// basis is bit-identical across runs and platforms.
pub fn init_subspace(p: usize, params: &HyperParams, seed: u64) -> Result<SubspaceModel> {
    init_subspace_scaled(p, params.rank, seed, InitScale::InvSqrtPixels)
}

pub fn init_subspace_scaled(p: usize, rank: usize, seed: u64, scale: InitScale) -> Result<SubspaceModel> {
    if rank == 0 {
        return Err(invalid("rank must be at least 1"));
    }
    if p < rank {
        return Err(invalid(format!("pixel count {p} is smaller than rank {rank}")));
    }
    let scale = match scale {
        InitScale::InvSqrtPixels => 1.0 / (p as f64).sqrt(),
        InitScale::Fixed(s) => s,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis = DMatrix::from_iterator(
        p,
        rank,
        (0..p * rank).map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        }),
    );
    Ok(SubspaceModel::from_basis(basis))
}

/// Output of separating one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationResult {
    /// Subspace coefficients `r_t`.
    pub coeffs: DVector<f64>,
    /// Structured-sparse foreground `s_t`.
    pub foreground: DVector<f64>,
    /// `L · r_t`.
    pub background: DVector<f64>,
    pub iters: usize,
    /// Last value of the stop criterion.
    pub final_delta: f64,
    /// Joint objective at the start and after each block step (r, then s).
    pub objective_trace: Vec<f64>,
}

impl SeparationResult {
    pub fn converged(&self, tau: f64) -> bool {
        self.final_delta <= tau
    }
}
