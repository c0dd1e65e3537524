//! Dense conic feasibility solver for the assembled LMI problems:
//! maximize t subject to `F0 + sum x_i F_i + t I <= 0` and linear
//! inequality rows, over one PSD block plus a nonnegative-orthant block.
//!
//! The engine is a homogeneous self-dual embedding interior-point method
//! with Nesterov-Todd scaling and Mehrotra predictor-corrector steps (see
//! [`ipm`]). Homogeneous embedding keeps infeasibility detection robust,
//! which the outer rho bisection relies on. Everything is dense and
//! deterministic: fixed iteration schedule, no randomized pivoting, so
//! identical inputs produce identical outputs on one platform.
//!
//! A `Feasible` answer is never taken from solver internals alone: the
//! returned point is re-validated by [`eig_max`] on `F(x) + t I` and by the
//! linear rows before being reported.

mod ipm;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::lmi::LmiProblem;

#[derive(Debug, Error)]
pub enum SdpError {
    #[error("matrix is not symmetric (asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("problem has no variables")]
    Empty,
}

/// Solver options. `tol` bounds the relative primal/dual residuals and gap.
#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-9,
        }
    }
}

/// Outcome classification of a margin-maximization solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// Converged with margin at or above the problem's feasibility
    /// threshold; the point passed re-validation.
    Feasible,
    /// Converged with margin below the threshold.
    Infeasible,
    /// No trustworthy answer: iteration limit, unbounded margin, or a
    /// converged point that failed re-validation.
    Numerical,
}

/// Final residuals of the interior-point iteration, relative scaling.
#[derive(Debug, Clone, Copy, Default)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

/// Solution of a margin-maximization problem.
#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SolveStatus,
    /// Decision vector in the problem's variable order (margin included).
    pub x: DVector<f64>,
    /// Achieved margin t.
    pub t: f64,
    pub iterations: usize,
    pub residuals: Residuals,
    /// Diagnostic note for Numerical outcomes.
    pub note: Option<String>,
}

/// Solves the margin maximization for an assembled LMI problem.
pub fn solve(problem: &LmiProblem, opts: &SolveOptions) -> Result<SdpSolution, SdpError> {
    if problem.num_vars() == 0 {
        return Err(SdpError::Empty);
    }
    if !problem.f0.iter().all(|v| v.is_finite()) {
        return Err(SdpError::NonFinite);
    }
    let asym = (&problem.f0 - problem.f0.transpose()).norm();
    if asym > 1e-10 * (1.0 + problem.f0.norm()) {
        return Err(SdpError::NotSymmetric(asym));
    }

    let raw = ipm::run(problem, opts);
    let mut status = raw.status;
    let mut note = raw.note;
    if status == SolveStatus::Feasible {
        // Certificate soundness: never trust solver internals.
        let scale = 1.0 + problem.f0.norm();
        let lmi_val = problem.eval_lmi(&raw.x);
        let top = eig_max(&lmi_val)?;
        let lin_viol = problem.linear_violation(&raw.x);
        if top > 1e-8 * scale || lin_viol > 1e-9 {
            status = SolveStatus::Numerical;
            note = Some(format!(
                "re-validation failed: eig {top:.3e} (scale {scale:.3e}), linear violation {lin_viol:.3e}"
            ));
        }
    }
    Ok(SdpSolution {
        status,
        x: raw.x,
        t: raw.t,
        iterations: raw.iterations,
        residuals: raw.residuals,
        note,
    })
}

/// Largest eigenvalue of a symmetric real matrix.
pub fn eig_max(m: &DMatrix<f64>) -> Result<f64, SdpError> {
    if m.nrows() == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(SdpError::NonFinite);
    }
    let asym = (m - m.transpose()).norm();
    if asym > 1e-10 * (1.0 + m.norm()) {
        return Err(SdpError::NotSymmetric(asym));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    Ok(eig.eigenvalues.max())
}
