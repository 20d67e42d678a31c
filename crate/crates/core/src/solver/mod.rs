//! Damped Newton for `f(lambda(M[u])) = psi` in the interior, `u = phi` on the
//! boundary, with an admissibility-preserving line search.

mod diagnostics;
mod drivers;
mod manufactured;

pub use diagnostics::{diagnostics_update, gradient_norms, hoelder_quotient, laplacian, DiagnosticsLedger};
pub use drivers::{
    boundary_shift_check, continuity_path, degenerate_limit, solve_from_subsolution, ContinuityOutcome,
    DegenerateStage, ShiftReport, SolveOutcome, StageRecord,
};
pub use manufactured::{default_terms, manufactured_problem, Factor, Manufactured, ManufacturedSpec, Separable, StructureKind};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cone::SpectralFunction;
use crate::equation::{NodeOperator, Spectral};
use crate::error::{Error, Result};
use crate::grid::GridField;
use crate::sparse::{self, CsrMatrix};

/// Operator, spectral function, right side and boundary data.
#[derive(Debug, Clone)]
pub struct Problem {
    pub op: NodeOperator,
    pub f: Spectral,
    pub psi: GridField,
    /// Boundary values; only boundary nodes are read.
    pub phi: GridField,
}

impl Problem {
    pub fn new(op: NodeOperator, f: Spectral, psi: GridField, phi: GridField) -> Result<Self> {
        let len = op.grid().len();
        if psi.len() != len || phi.len() != len {
            return Err(Error::Validation("psi/phi do not match the grid".into()));
        }
        if f.dim() != op.n() {
            return Err(Error::Validation(format!(
                "spectral function has dimension {}, grid has n = {}",
                f.dim(),
                op.n()
            )));
        }
        Ok(Self { op, f, psi, phi })
    }

    /// Node-wise `f(lambda(M[u]))` at interior nodes (boundary nodes: 0).
    pub fn operator_values(&self, u: &GridField) -> Result<GridField> {
        let evals = evaluate(self, u, false);
        let bad: Vec<usize> = evals.iter().filter(|e| !e.admissible).map(|e| e.node).collect();
        if !bad.is_empty() {
            return Err(Error::Admissibility { nodes: bad });
        }
        let mut values = vec![0.0; u.len()];
        for e in evals {
            values[e.node] = e.value;
        }
        GridField::new(u.grid.clone(), values)
    }
}

#[derive(Debug, Clone)]
struct NodeEval {
    node: usize,
    admissible: bool,
    value: f64,
    lambda: Vec<f64>,
    b: Option<DMatrix<Complex64>>,
}

fn evaluate(problem: &Problem, u: &GridField, with_b: bool) -> Vec<NodeEval> {
    let op = &problem.op;
    let grid = op.grid();
    let interior = grid.interior_nodes();
    interior
        .par_iter()
        .map(|&node| {
            let m = op.matrix(node, &op.jet(u, node));
            let spec = op.spectrum(node, &m, &problem.f);
            let value = if spec.admissible() {
                problem.f.value(&spec.lambda).ok()
            } else {
                None
            };
            let admissible = value.is_some_and(f64::is_finite);
            let b = if with_b && admissible {
                op.chain_matrix(node, &spec, &problem.f).ok()
            } else {
                None
            };
            NodeEval {
                node,
                admissible: admissible && (!with_b || b.is_some()),
                value: value.unwrap_or(f64::NAN),
                lambda: spec.lambda,
                b,
            }
        })
        .collect()
}

/// `f(lambda(M[u])) - psi` inside, `u - phi` on the boundary.
pub fn residual(problem: &Problem, u: &GridField) -> Result<GridField> {
    residual_with(problem, &problem.psi, u)
}

fn residual_with(problem: &Problem, psi: &GridField, u: &GridField) -> Result<GridField> {
    Ok(assemble_residual(problem, psi, u, &evaluate(problem, u, false))?.0)
}

fn assemble_residual(
    problem: &Problem,
    psi: &GridField,
    u: &GridField,
    evals: &[NodeEval],
) -> Result<(GridField, Vec<Vec<f64>>)> {
    let grid = u.grid.clone();
    let bad: Vec<usize> = evals.iter().filter(|e| !e.admissible).map(|e| e.node).collect();
    if !bad.is_empty() {
        return Err(Error::Admissibility { nodes: bad });
    }
    let mut r = vec![0.0; grid.len()];
    let mut lambda = vec![Vec::new(); grid.len()];
    for node in grid.boundary_nodes() {
        r[node] = u.values[node] - problem.phi.values[node];
    }
    for e in evals {
        r[e.node] = e.value - psi.values[e.node];
        lambda[e.node] = e.lambda.clone();
    }
    Ok((GridField { grid, values: r }, lambda))
}

/// Jacobian of the residual at `u`: stencil rows inside, identity rows on
/// the boundary.
pub fn linearize(problem: &Problem, u: &GridField) -> Result<CsrMatrix> {
    let evals = evaluate(problem, u, true);
    jacobian_from(problem, &evals)
}

fn jacobian_from(problem: &Problem, evals: &[NodeEval]) -> Result<CsrMatrix> {
    let op = &problem.op;
    let grid = op.grid();
    let bad: Vec<usize> = evals.iter().filter(|e| !e.admissible).map(|e| e.node).collect();
    if !bad.is_empty() {
        return Err(Error::Admissibility { nodes: bad });
    }
    let mut rows: Vec<Vec<(usize, f64)>> = (0..grid.len()).map(|i| vec![(i, 1.0)]).collect();
    let interior_rows: Vec<(usize, Vec<(usize, f64)>)> = evals
        .par_iter()
        .map(|e| {
            let b = e.b.as_ref().expect("admissible nodes carry B");
            (e.node, op.dual(e.node, b).row(grid, e.node))
        })
        .collect();
    for (node, row) in interior_rows {
        rows[node] = row;
    }
    let a = CsrMatrix::from_rows(rows);
    // every row needs its diagonal slot for ILU
    for i in 0..a.n {
        if !a.row(i).any(|(j, _)| j == i) {
            let mut rows: Vec<Vec<(usize, f64)>> = (0..a.n).map(|k| a.row(k).collect()).collect();
            for (k, r) in rows.iter_mut().enumerate() {
                if !r.iter().any(|&(j, _)| j == k) {
                    r.push((k, 0.0));
                }
            }
            return Ok(CsrMatrix::from_rows(rows));
        }
    }
    Ok(a)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonOptions {
    /// Sup-norm residual tolerance.
    pub tol: f64,
    pub max_iter: usize,
    /// Smallest line-search step before declaring stagnation.
    pub min_step: f64,
    /// Armijo constant on the Euclidean residual norm.
    pub armijo: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 60,
            min_step: 1e-14,
            armijo: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub residual_sup: f64,
    pub residual_l2: f64,
    /// Accepted step length (0 for the initial record).
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "detail", rename_all = "kebab-case")]
pub enum Status {
    Converged,
    Stagnated(String),
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct SolverState {
    pub u: GridField,
    /// Sorted eigenvalues of `M[u]` per interior node (empty on the boundary).
    pub lambda: Vec<Vec<f64>>,
    pub residual: GridField,
    pub t: f64,
    pub eps: f64,
    pub iterations: usize,
    pub history: Vec<IterationRecord>,
    pub status: Status,
}

impl SolverState {
    pub fn converged(&self) -> bool {
        self.status == Status::Converged
    }

    pub fn residual_sup(&self) -> f64 {
        self.residual.sup_norm()
    }

    /// Smallest residual the stencils can resolve: `10 eps (1 + |u|_inf) / h_min^2`.
    pub fn residual_floor(&self) -> f64 {
        let grid = &self.u.grid;
        let h = grid.active_axes().map(|a| grid.spacing(a)).fold(f64::INFINITY, f64::min);
        10.0 * f64::EPSILON * (1.0 + self.u.sup_norm()) / (h * h)
    }

    /// Whether the last two contractions satisfy `r_(k+1) <= 0.5 r_k^2`,
    /// counting a residual at or below `floor` as contracted. At least one
    /// of the two must hold above the floor.
    pub fn quadratic_tail(&self, floor: f64) -> bool {
        let r: Vec<f64> = self.history.iter().map(|h| h.residual_sup).collect();
        if r.len() < 3 {
            return false;
        }
        let k = r.len();
        let genuine = (k - 2..k).any(|i| r[i] <= 0.5 * r[i - 1] * r[i - 1] && r[i - 1] > floor);
        genuine && (k - 2..k).all(|i| r[i] <= (0.5 * r[i - 1] * r[i - 1]).max(floor))
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Damped Newton from `u0` (which must be admissible) on `problem`.
pub fn newton_solve(problem: &Problem, u0: &GridField, opts: &NewtonOptions) -> Result<SolverState> {
    newton_with(problem, &problem.psi, u0, opts)
}

pub(crate) fn newton_with(problem: &Problem, psi: &GridField, u0: &GridField, opts: &NewtonOptions) -> Result<SolverState> {
    let mut u = u0.clone();
    let mut evals = evaluate(problem, &u, true);
    let (mut r, mut lambda) = assemble_residual(problem, psi, &u, &evals)?;
    let mut history = vec![IterationRecord {
        iteration: 0,
        residual_sup: r.sup_norm(),
        residual_l2: norm2(&r.values),
        step: 0.0,
    }];
    let mut status = Status::MaxIterations;
    for it in 1..=opts.max_iter {
        if r.sup_norm() < opts.tol {
            status = Status::Converged;
            break;
        }
        let jac = jacobian_from(problem, &evals)?;
        let rhs: Vec<f64> = r.values.iter().map(|x| -x).collect();
        let delta = sparse::solve(&jac, &rhs)?;
        let r_norm = norm2(&r.values);
        let mut alpha = 1.0;
        let accepted = loop {
            let trial = GridField {
                grid: u.grid.clone(),
                values: u.values.iter().zip(&delta).map(|(a, d)| a + alpha * d).collect(),
            };
            let trial_evals = evaluate(problem, &trial, true);
            if trial_evals.iter().all(|e| e.admissible) {
                let (tr, tl) = assemble_residual(problem, psi, &trial, &trial_evals)?;
                if norm2(&tr.values) <= (1.0 - opts.armijo * alpha) * r_norm {
                    break Some((trial, trial_evals, tr, tl));
                }
            }
            alpha *= 0.5;
            if alpha < opts.min_step {
                break None;
            }
        };
        match accepted {
            Some((nu, ne, nr, nl)) => {
                u = nu;
                evals = ne;
                r = nr;
                lambda = nl;
                history.push(IterationRecord {
                    iteration: it,
                    residual_sup: r.sup_norm(),
                    residual_l2: norm2(&r.values),
                    step: alpha,
                });
            }
            None => {
                status = Status::Stagnated(format!(
                    "line search stalled at iteration {it} with residual {:e}",
                    r.sup_norm()
                ));
                break;
            }
        }
    }
    if status == Status::MaxIterations && r.sup_norm() < opts.tol {
        status = Status::Converged;
    }
    let iterations = history.len() - 1;
    Ok(SolverState {
        u,
        lambda,
        residual: r,
        t: 1.0,
        eps: 0.0,
        iterations,
        history,
        status,
    })
}
