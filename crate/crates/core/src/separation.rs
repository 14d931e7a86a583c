//! Per-frame foreground/background separation.
//!
//! Minimizes the joint reconstruction cost
//!
//! ```text
//! ℓ̂(d, L, r, s) = ½‖d − L·r − s‖² + (λ1/2)‖r‖² + λ2·Ω(s)
//! ```
//!
//! by alternating an exact ridge solve for `r` with the structured prox for
//! `s`, until `max(‖Δr‖₂, ‖Δs‖₂) / p ≤ τ`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{ensure_finite, invalid, Result};
use crate::groups::{omega_unchecked, GroupStructure};
use crate::model::{Frame, HyperParams, SeparationResult};
use crate::prox::{ProxOptions, StructuredProx, SweepOrder};

/// Cholesky factor of `LᵀL + λ1·I` for a fixed basis.
#[derive(Debug, Clone)]
pub struct RidgeSystem {
    factor: Cholesky<f64, Dyn>,
}

impl RidgeSystem {
    pub fn new(basis: &DMatrix<f64>, lambda1: f64) -> Result<Self> {
        if !(lambda1 > 0.0 && lambda1.is_finite()) {
            return Err(invalid("lambda1 must be positive"));
        }
        ensure_finite(basis.as_slice(), "basis")?;
        let r = basis.ncols();
        let gram = basis.tr_mul(basis) + DMatrix::identity(r, r) * lambda1;
        let factor = Cholesky::new(gram).ok_or_else(|| invalid("ridge system is not positive definite"))?;
        Ok(Self { factor })
    }

    /// `(LᵀL + λ1·I)⁻¹ Lᵀ target`.
    pub fn solve(&self, basis: &DMatrix<f64>, target: &DVector<f64>) -> DVector<f64> {
        self.factor.solve(&basis.tr_mul(target))
    }
}

/// Minimizer of `½‖d − s − L·r‖² + (λ1/2)‖r‖²` over `r`.
pub fn ridge_solve(
    d: &DVector<f64>,
    s: &DVector<f64>,
    basis: &DMatrix<f64>,
    lambda1: f64,
) -> Result<DVector<f64>> {
    if d.len() != basis.nrows() || s.len() != basis.nrows() {
        return Err(invalid("frame, foreground and basis dimensions disagree"));
    }
    ensure_finite(d.as_slice(), "frame")?;
    ensure_finite(s.as_slice(), "foreground")?;
    let system = RidgeSystem::new(basis, lambda1)?;
    Ok(system.solve(basis, &(d - s)))
}

/// `ℓ̂(d, L, r, s)`.
pub fn joint_objective(
    d: &DVector<f64>,
    basis: &DMatrix<f64>,
    coeffs: &DVector<f64>,
    foreground: &DVector<f64>,
    groups: &GroupStructure,
    params: &HyperParams,
) -> f64 {
    let residual = d - basis * coeffs - foreground;
    0.5 * residual.norm_squared()
        + 0.5 * params.lambda1 * coeffs.norm_squared()
        + params.lambda2 * omega_unchecked(foreground.as_slice(), groups)
}

/// Separates `d` against `basis`, starting from `r = 0`, `s = 0`.
pub fn separate(
    d: &Frame,
    basis: &DMatrix<f64>,
    groups: &GroupStructure,
    params: &HyperParams,
) -> Result<SeparationResult> {
    separate_from(d, basis, groups, params, None)
}

/// Separates `d` against `basis`, optionally starting from a previous `(r, s)`.
///
/// The first stop test compares against the starting point. A prox candidate
/// that would raise the joint objective (possible only through the dual
/// solver's finite tolerance) is rejected in favour of the current `s`, so the
/// objective trace is non-increasing.
pub fn separate_from(
    d: &Frame,
    basis: &DMatrix<f64>,
    groups: &GroupStructure,
    params: &HyperParams,
    start: Option<(&DVector<f64>, &DVector<f64>)>,
) -> Result<SeparationResult> {
    params.validate()?;
    let p = d.len();
    if basis.nrows() != p || groups.p() != p {
        return Err(invalid(format!(
            "frame has {p} pixels, basis has {} rows, groups cover {}",
            basis.nrows(),
            groups.p()
        )));
    }
    if basis.ncols() != params.rank {
        return Err(invalid(format!("basis has {} columns, rank is {}", basis.ncols(), params.rank)));
    }
    ensure_finite(d.pixels.as_slice(), "frame")?;

    let rank = basis.ncols();
    let (mut coeffs, mut foreground) = match start {
        Some((r, s)) => {
            if r.len() != rank || s.len() != p {
                return Err(invalid("warm start has the wrong dimensions"));
            }
            (r.clone(), s.clone())
        }
        None => (DVector::zeros(rank), DVector::zeros(p)),
    };

    let ridge = RidgeSystem::new(basis, params.lambda1)?;
    let mut prox = StructuredProx::new(
        groups,
        params.lambda2,
        ProxOptions { tol: params.prox_tol, max_iters: params.max_prox_iters, order: SweepOrder::Ascending },
    )?;

    let d = &d.pixels;
    let mut omega = omega_unchecked(foreground.as_slice(), groups);
    let mut background = basis * &coeffs;
    let half_l1 = 0.5 * params.lambda1;
    let mut trace = vec![
        0.5 * (d - &background - &foreground).norm_squared()
            + half_l1 * coeffs.norm_squared()
            + params.lambda2 * omega,
    ];

    let mut iters = 0;
    let mut final_delta = f64::INFINITY;
    while iters < params.max_sep_iters {
        iters += 1;

        let new_coeffs = ridge.solve(basis, &(d - &foreground));
        background = basis * &new_coeffs;
        let u = d - &background;
        let ridge_term = half_l1 * new_coeffs.norm_squared();
        let after_r = 0.5 * (&u - &foreground).norm_squared() + ridge_term + params.lambda2 * omega;
        trace.push(after_r);

        prox.solve(u.as_slice())?;
        let candidate = DVector::from_column_slice(prox.solution());
        let candidate_omega = omega_unchecked(candidate.as_slice(), groups);
        let after_s =
            0.5 * (&u - &candidate).norm_squared() + ridge_term + params.lambda2 * candidate_omega;

        let delta_r = (&new_coeffs - &coeffs).norm();
        coeffs = new_coeffs;
        let delta_s = if after_s <= after_r {
            let ds = (&candidate - &foreground).norm();
            foreground = candidate;
            omega = candidate_omega;
            trace.push(after_s);
            ds
        } else {
            trace.push(after_r);
            0.0
        };

        final_delta = delta_r.max(delta_s) / p as f64;
        if final_delta <= params.tau {
            break;
        }
    }

    Ok(SeparationResult { coeffs, foreground, background, iters, final_delta, objective_trace: trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::groups::build_grid_groups;
    use crate::model::default_hyperparams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
    }

    fn ridge_objective(d: &DVector<f64>, s: &DVector<f64>, l: &DMatrix<f64>, r: &DVector<f64>, lambda1: f64) -> f64 {
        0.5 * (d - s - l * r).norm_squared() + 0.5 * lambda1 * r.norm_squared()
    }

    #[test]
    fn ridge_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = random_vector(&mut rng, 6);
        let s = random_vector(&mut rng, 6);
        let r = ridge_solve(&d, &s, &DMatrix::zeros(6, 2), 0.5).unwrap();
        assert_eq!(r, DVector::zeros(2));
        let l = random_matrix(&mut rng, 6, 2);
        let r = ridge_solve(&d, &d, &l, 0.5).unwrap();
        assert!(r.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn ridge_satisfies_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let l = random_matrix(&mut rng, 6, 2);
        let d = random_vector(&mut rng, 6);
        let s = random_vector(&mut rng, 6);
        let r = ridge_solve(&d, &s, &l, 0.5).unwrap();
        let lhs = (l.tr_mul(&l) + DMatrix::identity(2, 2) * 0.5) * &r;
        let rhs = l.tr_mul(&(&d - &s));
        assert!((lhs - rhs).amax() <= 1e-10);
        let base = ridge_objective(&d, &s, &l, &r, 0.5);
        for i in 0..2 {
            for sign in [-1.0, 1.0] {
                let mut moved = r.clone();
                moved[i] += sign * 1e-3;
                assert!(ridge_objective(&d, &s, &l, &moved, 0.5) >= base);
            }
        }
    }

    #[test]
    fn ridge_rejects_bad_input() {
        let l = DMatrix::zeros(3, 1);
        let d = DVector::from_vec(vec![0.0, f64::INFINITY, 0.0]);
        assert!(ridge_solve(&d, &DVector::zeros(3), &l, 0.1).is_err());
        assert!(ridge_solve(&DVector::zeros(4), &DVector::zeros(3), &l, 0.1).is_err());
    }

    fn params(p: usize, rank: usize) -> HyperParams {
        HyperParams { rank, ..default_hyperparams(p).unwrap() }
    }

    #[test]
    fn zero_frame_converges_immediately() {
        let g = build_grid_groups(4, 4, 3, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = random_matrix(&mut rng, 16, 2);
        let res = separate(&Frame::zeros(4, 4, 0), &l, &g, &params(16, 2)).unwrap();
        assert_eq!(res.iters, 1);
        assert!(res.coeffs.iter().all(|&x| x == 0.0));
        assert!(res.foreground.iter().all(|&x| x == 0.0));
        assert_eq!(res.final_delta, 0.0);
    }

    #[test]
    fn huge_lambda2_reduces_to_ridge() {
        let g = build_grid_groups(4, 4, 3, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let l = random_matrix(&mut rng, 16, 2);
        let r0 = random_vector(&mut rng, 2);
        let d = &l * &r0;
        let frame = Frame::new(d.as_slice().to_vec(), 4, 4, 0).unwrap();
        let hp = HyperParams { lambda2: 1e6, ..params(16, 2) };
        let res = separate(&frame, &l, &g, &hp).unwrap();
        assert!(res.foreground.iter().all(|&x| x == 0.0));
        let ridge = ridge_solve(&d, &DVector::zeros(16), &l, hp.lambda1).unwrap();
        assert!((&res.coeffs - &ridge).amax() <= 1e-12);
        assert!((&res.background - &l * &ridge).amax() <= 1e-12);
    }

    #[test]
    fn tiny_lambda2_assigns_residual_to_foreground() {
        let g = build_grid_groups(4, 4, 3, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let l = random_matrix(&mut rng, 16, 2);
        let d: Vec<f64> = (0..16).map(|_| rng.random_range(0.0..1.0)).collect();
        let frame = Frame::new(d, 4, 4, 0).unwrap();
        let eps = 1e-8;
        let hp = HyperParams { lambda2: eps, ..params(16, 2) };
        let res = separate(&frame, &l, &g, &hp).unwrap();
        let gap = (&frame.pixels - &l * &res.coeffs - &res.foreground).amax();
        assert!(gap <= 10.0 * eps, "{gap}");
    }

    #[test]
    fn objective_trace_is_monotone_and_consistent() {
        let g = build_grid_groups(6, 6, 3, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let l = random_matrix(&mut rng, 36, 3) * 0.3;
        let d: Vec<f64> = (0..36).map(|_| rng.random_range(0.0..1.0)).collect();
        let frame = Frame::new(d, 6, 6, 0).unwrap();
        let hp = HyperParams { lambda2: 0.05, lambda1: 0.2, tau: 1e-9, ..params(36, 3) };
        let res = separate(&frame, &l, &g, &hp).unwrap();
        for w in res.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-10, "{} -> {}", w[0], w[1]);
        }
        let last = *res.objective_trace.last().unwrap();
        let direct = joint_objective(&frame.pixels, &l, &res.coeffs, &res.foreground, &g, &hp);
        assert!((last - direct).abs() <= 1e-12);
        assert_eq!(res.background, &l * &res.coeffs);
    }

    #[test]
    fn warm_restart_is_a_fixed_point() {
        let g = build_grid_groups(5, 5, 3, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let l = random_matrix(&mut rng, 25, 2) * 0.5;
        let d: Vec<f64> = (0..25).map(|_| rng.random_range(0.0..1.0)).collect();
        let frame = Frame::new(d, 5, 5, 0).unwrap();
        let hp = HyperParams { lambda2: 0.1, ..params(25, 2) };
        let first = separate(&frame, &l, &g, &hp).unwrap();
        let again = separate_from(&frame, &l, &g, &hp, Some((&first.coeffs, &first.foreground))).unwrap();
        assert_eq!(again.iters, 1);
        assert!(again.final_delta <= hp.tau);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let g = build_grid_groups(4, 4, 3, 1).unwrap();
        let l = DMatrix::zeros(16, 3);
        assert!(separate(&Frame::zeros(4, 4, 0), &l, &g, &params(16, 2)).is_err());
        let l = DMatrix::zeros(9, 2);
        assert!(separate(&Frame::zeros(4, 4, 0), &l, &g, &params(16, 2)).is_err());
    }
}
