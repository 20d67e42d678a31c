//! Monitored quantities of a solution: Laplacian and gradient bounds, a
//! discrete Hoelder quotient of the gradient, the sub/supersolution sandwich
//! and boundary ratios.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::Problem;
use crate::equation::NodeOperator;
use crate::grid::{hessian_from_jet, holomorphic_gradient, GridField, NodeJet};
use crate::linalg::reduce_by_metric;

/// `tr_omega (u_(i jbar))` per node.
pub fn laplacian(op: &NodeOperator, u: &GridField) -> Vec<f64> {
    (0..u.len())
        .map(|node| {
            let h = hessian_from_jet(&op.jet(u, node));
            (&op.metric.g_inv[node] * h).trace().re
        })
        .collect()
}

/// `|grad u| = 2 sqrt(g^(i jbar) u_i conj(u_j))` per node.
pub fn gradient_norms(op: &NodeOperator, u: &GridField) -> Vec<f64> {
    let n = op.n();
    (0..u.len())
        .map(|node| {
            let du = holomorphic_gradient(&op.jet(u, node));
            let g_inv = &op.metric.g_inv[node];
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    acc += g_inv[(j, i)] * du[i] * du[j].conj();
                }
            }
            2.0 * acc.re.max(0.0).sqrt()
        })
        .collect()
}

/// `max |Du(p) - Du(q)| / |p - q|^alpha` over axis-neighbour pairs, with
/// `Du` the real gradient.
pub fn hoelder_quotient(u: &GridField, alpha: f64) -> f64 {
    let grid = &u.grid;
    let grads: Vec<Vec<f64>> = (0..grid.len())
        .map(|node| NodeJet::at(grid, &u.values, node).d)
        .collect();
    let mut worst = 0.0f64;
    for node in 0..grid.len() {
        for a in grid.active_axes() {
            if let Some(q) = grid.neighbor(node, a, 1) {
                let diff = grads[node]
                    .iter()
                    .zip(&grads[q])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                worst = worst.max(diff / grid.spacing(a).powf(alpha));
            }
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsLedger {
    pub sup_laplacian_interior: f64,
    pub sup_laplacian_boundary: f64,
    pub sup_gradient: f64,
    pub hoelder_alpha: f64,
    pub hoelder_quotient: f64,
    /// `min (u - ubar)`; `None` without a subsolution.
    pub sandwich_lower: Option<f64>,
    /// `min (w - u)`; `None` without a supersolution.
    pub sandwich_upper: Option<f64>,
    pub sandwich_tolerance: f64,
    pub sandwich_ok: bool,
    /// `max over boundary nodes of g_(n nbar) / (1 + sum_alpha |g_(alpha nbar)|^2)`
    /// in the metric-orthonormal frame.
    pub boundary_normal_ratio: f64,
    /// `sup_(boundary) Delta u / (1 + sup |grad u|^2)`.
    pub boundary_estimate_ratio: f64,
}

impl DiagnosticsLedger {
    pub fn is_finite(&self) -> bool {
        [
            self.sup_laplacian_interior,
            self.sup_laplacian_boundary,
            self.sup_gradient,
            self.hoelder_quotient,
            self.boundary_normal_ratio,
            self.boundary_estimate_ratio,
        ]
        .iter()
        .all(|x| x.is_finite())
    }
}

/// Computes the ledger for `u`; the sandwich `ubar - tol <= u <= w + tol`
/// uses `tol = 10 h^2`.
pub fn diagnostics_update(
    problem: &Problem,
    u: &GridField,
    ubar: Option<&GridField>,
    upper: Option<&GridField>,
    alpha: f64,
) -> DiagnosticsLedger {
    let op = &problem.op;
    let grid = op.grid();
    let n = grid.n;
    let lap = laplacian(op, u);
    let grad = gradient_norms(op, u);
    let (mut lap_in, mut lap_bd) = (0.0f64, 0.0f64);
    for (node, l) in lap.iter().enumerate() {
        if grid.is_boundary(node) {
            lap_bd = lap_bd.max(l.abs());
        } else {
            lap_in = lap_in.max(l.abs());
        }
    }
    let sup_gradient = grad.iter().fold(0.0f64, |m, x| m.max(*x));
    let tol = 10.0 * grid.h() * grid.h();
    let min_diff = |a: &GridField, b: &GridField| {
        a.values.iter().zip(&b.values).map(|(x, y)| x - y).fold(f64::INFINITY, f64::min)
    };
    let sandwich_lower = ubar.map(|ub| min_diff(u, ub));
    let sandwich_upper = upper.map(|w| min_diff(w, u));
    let sandwich_ok = sandwich_lower.is_none_or(|d| d >= -tol) && sandwich_upper.is_none_or(|d| d >= -tol);
    let mut ratio = 0.0f64;
    for node in grid.boundary_nodes() {
        let m = op.matrix(node, &op.jet(u, node));
        let mt = reduce_by_metric(&m, &op.metric.l_inv[node]);
        let off: f64 = (0..n - 1).map(|a| mt[(a, n - 1)].norm_sqr()).sum();
        ratio = ratio.max(mt[(n - 1, n - 1)].re / (1.0 + off));
    }
    DiagnosticsLedger {
        sup_laplacian_interior: lap_in,
        sup_laplacian_boundary: lap_bd,
        sup_gradient,
        hoelder_alpha: alpha,
        hoelder_quotient: hoelder_quotient(u, alpha),
        sandwich_lower,
        sandwich_upper,
        sandwich_tolerance: tol,
        sandwich_ok,
        boundary_normal_ratio: ratio,
        boundary_estimate_ratio: lap_bd / (1.0 + sup_gradient * sup_gradient),
    }
}
