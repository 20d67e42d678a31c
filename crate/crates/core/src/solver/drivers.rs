//! Drivers on top of Newton: solve from the constructed subsolution, the
//! continuity path in `psi`, the degenerate `psi + eps` ladder and the
//! boundary-shift identity.

use serde::{Deserialize, Serialize};

use super::diagnostics::{hoelder_quotient, laplacian};
use super::{newton_with, NewtonOptions, Problem, SolverState};
use crate::error::{Error, Result};
use crate::grid::GridField;
use crate::subsolution::{construct, harmonic_extension, StripData, Subsolution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub t: f64,
    pub iterations: usize,
    pub start_residual: f64,
    pub end_residual: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct ContinuityOutcome {
    /// Last converged stage (or the failing one if none converged).
    pub state: SolverState,
    pub stages: Vec<StageRecord>,
    pub completed: bool,
}

/// Solves along `psi_t = (1 - t) f(lambda(M[ubar])) + t psi` for
/// `t = 1/steps, .., 1`, warm-starting each stage.
pub fn continuity_path(problem: &Problem, ubar: &GridField, steps: usize, opts: &NewtonOptions) -> Result<ContinuityOutcome> {
    let steps = steps.max(1);
    let psi0 = problem.operator_values(ubar)?;
    let mut u = ubar.clone();
    let mut stages = Vec::with_capacity(steps);
    let mut last: Option<SolverState> = None;
    for k in 1..=steps {
        let t = k as f64 / steps as f64;
        let grid = u.grid.clone();
        let mut psi_t = psi0.axpy(0.0, &psi0);
        for node in grid.interior_nodes() {
            psi_t.values[node] = (1.0 - t) * psi0.values[node] + t * problem.psi.values[node];
        }
        let mut state = newton_with(problem, &psi_t, &u, opts)?;
        state.t = t;
        stages.push(StageRecord {
            t,
            iterations: state.iterations,
            start_residual: state.history[0].residual_sup,
            end_residual: state.residual_sup(),
            converged: state.converged(),
        });
        if !state.converged() {
            let completed = false;
            return Ok(ContinuityOutcome {
                state: last.unwrap_or(state),
                stages,
                completed,
            });
        }
        u = state.u.clone();
        last = Some(state);
    }
    Ok(ContinuityOutcome {
        state: last.expect("at least one stage"),
        stages,
        completed: true,
    })
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub sub: Subsolution,
    pub state: SolverState,
    pub stages: Vec<StageRecord>,
}

/// Builds the subsolution, then runs Newton from it (`homotopy_steps = 0`)
/// or the continuity path.
pub fn solve_from_subsolution(
    problem: &Problem,
    strip: &StripData,
    margin: f64,
    homotopy_steps: usize,
    opts: &NewtonOptions,
) -> Result<SolveOutcome> {
    let sub = construct(&problem.op, &problem.f, strip, &problem.phi, &problem.psi, margin)?;
    if homotopy_steps == 0 {
        let state = newton_with(problem, &problem.psi, &sub.ubar, opts)?;
        let stages = vec![StageRecord {
            t: 1.0,
            iterations: state.iterations,
            start_residual: state.history[0].residual_sup,
            end_residual: state.residual_sup(),
            converged: state.converged(),
        }];
        return Ok(SolveOutcome { sub, state, stages });
    }
    let out = continuity_path(problem, &sub.ubar, homotopy_steps, opts)?;
    Ok(SolveOutcome {
        sub,
        state: out.state,
        stages: out.stages,
    })
}

#[derive(Debug, Clone)]
pub struct DegenerateStage {
    pub eps: f64,
    pub converged: bool,
    pub iterations: usize,
    pub sup_laplacian: f64,
    pub hoelder: f64,
    /// `sup |u_k - u_(k-1)|`.
    pub distance_to_previous: Option<f64>,
    /// `eps_(k-1) - eps_k`.
    pub shift_gap: Option<f64>,
    pub state: SolverState,
}

/// Solves `f(lambda(M[u])) = psi + eps` along the ladder, starting from the
/// subsolution for the first rung and warm-starting every later one (a
/// solution for a larger shift is a subsolution for a smaller one). Stops
/// at the first failing rung.
pub fn degenerate_limit(
    problem: &Problem,
    strip: &StripData,
    eps_ladder: &[f64],
    margin: f64,
    opts: &NewtonOptions,
    alpha: f64,
) -> Result<Vec<DegenerateStage>> {
    let grid = problem.op.grid().clone();
    let mut out: Vec<DegenerateStage> = Vec::new();
    for (k, &eps) in eps_ladder.iter().enumerate() {
        if !(eps > 0.0) {
            return Err(Error::Validation(format!("ladder shifts must be positive, got {eps}")));
        }
        let mut shifted = problem.clone();
        for node in grid.interior_nodes() {
            shifted.psi.values[node] += eps;
        }
        let start = match out.last() {
            Some(prev) => prev.state.u.clone(),
            None => construct(&shifted.op, &shifted.f, strip, &shifted.phi, &shifted.psi, margin)?.ubar,
        };
        let mut state = newton_with(&shifted, &shifted.psi, &start, opts)?;
        state.eps = eps;
        let interior = grid.interior_nodes();
        let lap = laplacian(&problem.op, &state.u);
        let sup_laplacian = interior.iter().fold(0.0f64, |m, &i| m.max(lap[i].abs()));
        let stage = DegenerateStage {
            eps,
            converged: state.converged(),
            iterations: state.iterations,
            sup_laplacian,
            hoelder: hoelder_quotient(&state.u, alpha),
            distance_to_previous: out.last().map(|p| p.state.u.max_abs_diff(&state.u)),
            shift_gap: (k > 0).then(|| eps_ladder[k - 1] - eps),
            state,
        };
        let ok = stage.converged;
        out.push(stage);
        if !ok {
            break;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    /// `sup |(u_shifted - u) - v|`.
    pub difference: f64,
    pub h: f64,
    pub converged: bool,
}

/// Solves with `phi` and with `phi + shift` (strip data on the two slices)
/// and compares the difference of solutions with the harmonic extension.
pub fn boundary_shift_check(
    problem: &Problem,
    strip: &StripData,
    lower: &[f64],
    upper: &[f64],
    margin: f64,
    opts: &NewtonOptions,
) -> Result<ShiftReport> {
    let v = harmonic_extension(strip, lower, upper)?;
    let base = solve_from_subsolution(problem, strip, margin, 0, opts)?;
    let mut shifted = problem.clone();
    shifted.phi = problem.phi.add(&v);
    let moved = solve_from_subsolution(&shifted, strip, margin, 0, opts)?;
    let difference = moved.state.u.axpy(-1.0, &base.state.u).max_abs_diff(&v);
    Ok(ShiftReport {
        difference,
        h: problem.op.grid().h(),
        converged: base.state.converged() && moved.state.converged(),
    })
}
