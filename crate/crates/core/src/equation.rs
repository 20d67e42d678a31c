//! The node-level structure of the discrete equation `f(lambda(M[u])) = psi`:
//! which Hermitian matrix `M` is built from the 2-jet of `u`, its eigenvalues
//! with respect to the metric, and the exact jet-linear form of
//! `dM -> Re tr(B dM)` used for linear solves and Jacobians.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cone::{ConeFunction, Limit, Membership, QPullback, SpectralFunction};
use crate::error::{Error, Result};
use crate::grid::{
    gauduchon_at, gfield_at, holomorphic_gradient, z_at, GridField, HermitianField, MetricField, NodeJet,
    OneForm, ProductGrid,
};
use crate::linalg::{eigh_sorted, reduce_by_metric};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Which form of the `(n-1)`-plurisubharmonic operator is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GauduchonForm {
    /// `log det` of the eigenvalues of `U[u]`.
    ViaU,
    /// `log det o Q` of the eigenvalues of `g_gaud[u]`.
    ViaGTilde,
}

/// How `M[u]` is assembled at a node.
#[derive(Debug, Clone)]
pub enum Structure {
    /// `M = chi~ + u_(i jbar) + u_i conj(eta_j) + eta_i conj(u_j)`.
    Standard { chi_tilde: HermitianField, eta: OneForm },
    /// `M = U[u]` or `M = g_gaud[u]`.
    Gauduchon {
        chi: HermitianField,
        rho: GridField,
        form: GauduchonForm,
    },
}

/// Spectral function applied to `lambda(M)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Spectral {
    Cone(ConeFunction),
    Pullback(QPullback),
}

impl Spectral {
    /// The function a structure is solved with by default.
    pub fn for_gauduchon(n: usize, form: GauduchonForm) -> Result<Self> {
        let base = ConeFunction::log_ma(n);
        Ok(match form {
            GauduchonForm::ViaU => Spectral::Cone(base),
            GauduchonForm::ViaGTilde => Spectral::Pullback(QPullback::new(base)?),
        })
    }

    pub fn name(&self) -> String {
        match self {
            Spectral::Cone(f) => f.family.name().to_string(),
            Spectral::Pullback(q) => format!("{}-of-q", q.base.family.name()),
        }
    }
}

impl SpectralFunction for Spectral {
    fn dim(&self) -> usize {
        match self {
            Spectral::Cone(f) => f.dim(),
            Spectral::Pullback(q) => q.dim(),
        }
    }
    fn value(&self, lambda: &[f64]) -> Result<f64> {
        match self {
            Spectral::Cone(f) => f.value(lambda),
            Spectral::Pullback(q) => q.value(lambda),
        }
    }
    fn gradient(&self, lambda: &[f64]) -> Result<Vec<f64>> {
        match self {
            Spectral::Cone(f) => f.gradient(lambda),
            Spectral::Pullback(q) => q.gradient(lambda),
        }
    }
    fn membership(&self, lambda: &[f64]) -> Membership {
        match self {
            Spectral::Cone(f) => f.membership(lambda),
            Spectral::Pullback(q) => q.membership(lambda),
        }
    }
    fn limit_with_infinite(&self, fixed: &[f64], r: usize) -> Limit {
        match self {
            Spectral::Cone(f) => f.limit_with_infinite(fixed, r),
            Spectral::Pullback(q) => q.limit_with_infinite(fixed, r),
        }
    }
}

/// Coefficients of a linear functional of the jet: `sum d_a D_a + sum dd_ab D_a D_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct JetCoefficients {
    pub n: usize,
    pub d: Vec<f64>,
    /// Row-major `2n x 2n`, not necessarily symmetric.
    pub dd: Vec<f64>,
}

impl JetCoefficients {
    pub fn zero(n: usize) -> Self {
        Self {
            n,
            d: vec![0.0; 2 * n],
            dd: vec![0.0; 4 * n * n],
        }
    }

    /// Adds the coefficients of `jet -> Re tr(B u_(k lbar)(jet))`.
    pub fn add_hessian_dual(&mut self, b: &DMatrix<Complex64>) {
        let n = self.n;
        let m = 2 * n;
        for k in 0..n {
            for l in 0..n {
                let (re, im) = (0.25 * b[(l, k)].re, 0.25 * b[(l, k)].im);
                let (xk, yk, xl, yl) = (2 * k, 2 * k + 1, 2 * l, 2 * l + 1);
                self.dd[xk * m + xl] += re;
                self.dd[yk * m + yl] += re;
                self.dd[xk * m + yl] -= im;
                self.dd[yk * m + xl] += im;
            }
        }
    }

    pub fn apply(&self, jet: &NodeJet) -> f64 {
        let a: f64 = self.d.iter().zip(&jet.d).map(|(c, x)| c * x).sum();
        let b: f64 = self.dd.iter().zip(&jet.dd).map(|(c, x)| c * x).sum();
        a + b
    }

    /// The functional as a stencil row at `node`.
    pub fn row(&self, grid: &ProductGrid, node: usize) -> Vec<(usize, f64)> {
        let m = 2 * self.n;
        let mut row = Vec::with_capacity(40);
        let active: Vec<usize> = grid.active_axes().collect();
        for &a in &active {
            if self.d[a] != 0.0 {
                row.extend(grid.d1(node, a).iter().map(|(j, w)| (j, w * self.d[a])));
            }
            for &b in active.iter().filter(|&&b| b >= a) {
                let c = if a == b {
                    self.dd[a * m + a]
                } else {
                    self.dd[a * m + b] + self.dd[b * m + a]
                };
                if c != 0.0 {
                    row.extend(grid.d2(node, a, b).iter().map(|(j, w)| (j, w * c)));
                }
            }
        }
        row
    }
}

/// Eigen-data of `M` at a node, reduced by the metric.
#[derive(Debug, Clone)]
pub struct NodeSpectrum {
    pub lambda: Vec<f64>,
    /// Eigenvectors of `L^{-1} M L^{-*}`.
    pub vectors: DMatrix<Complex64>,
    pub membership: Membership,
}

impl NodeSpectrum {
    /// Strict admissibility with the solver margin `1e-8 (1 + max |lambda|)`.
    pub fn admissible(&self) -> bool {
        let scale = self.lambda.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        self.membership.inside && self.membership.scaled_margin > 1e-8 * (1.0 + scale)
    }
}

/// Gap below which eigenvalues are treated as one cluster.
pub const CLUSTER_GAP: f64 = 1e-8;

/// Averages `grad` over clusters of (nearly) equal eigenvalues.
pub fn cluster_average(lambda: &[f64], grad: &[f64]) -> Vec<f64> {
    let n = lambda.len();
    let mut out = grad.to_vec();
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && lambda[end] - lambda[end - 1] <= CLUSTER_GAP * (1.0 + lambda[end].abs()) {
            end += 1;
        }
        if end - start > 1 {
            let mean = grad[start..end].iter().sum::<f64>() / (end - start) as f64;
            out[start..end].iter_mut().for_each(|g| *g = mean);
        }
        start = end;
    }
    out
}

/// Metric plus structure: the map `jet -> M` at every node.
#[derive(Debug, Clone)]
pub struct NodeOperator {
    pub metric: MetricField,
    pub structure: Structure,
}

impl NodeOperator {
    pub fn new(metric: MetricField, structure: Structure) -> Result<Self> {
        let len = metric.grid.len();
        let n = metric.grid.n;
        let ok = match &structure {
            Structure::Standard { chi_tilde, eta } => {
                chi_tilde.data.len() == len && eta.data.len() == len && eta.data.iter().all(|v| v.len() == n)
            }
            Structure::Gauduchon { chi, rho, .. } => chi.data.len() == len && rho.len() == len,
        };
        if !ok {
            return Err(Error::Validation("structure fields do not match the grid".into()));
        }
        let (Structure::Standard { chi_tilde: form, .. } | Structure::Gauduchon { chi: form, .. }) = &structure;
        let asym = form.max_asymmetry();
        if asym > 1e-12 {
            return Err(Error::NotHermitian {
                asymmetry: asym,
                tolerance: 1e-12,
            });
        }
        Ok(Self { metric, structure })
    }

    pub fn grid(&self) -> &Arc<ProductGrid> {
        &self.metric.grid
    }

    pub fn n(&self) -> usize {
        self.metric.grid.n
    }

    pub fn jet(&self, u: &GridField, node: usize) -> NodeJet {
        NodeJet::at(self.grid(), &u.values, node)
    }

    pub fn matrix(&self, node: usize, jet: &NodeJet) -> DMatrix<Complex64> {
        let m = &self.metric;
        match &self.structure {
            Structure::Standard { chi_tilde, eta } => gfield_at(&chi_tilde.data[node], &eta.data[node], jet),
            Structure::Gauduchon { chi, rho, form } => {
                let (u, g) = gauduchon_at(
                    &chi.data[node],
                    rho.values[node],
                    &m.g[node],
                    &m.g_inv[node],
                    &m.torsion[node],
                    jet,
                );
                match form {
                    GauduchonForm::ViaU => u,
                    GauduchonForm::ViaGTilde => g,
                }
            }
        }
    }

    pub fn matrix_field(&self, u: &GridField) -> HermitianField {
        let data = (0..u.len()).map(|i| self.matrix(i, &self.jet(u, i))).collect();
        HermitianField {
            grid: u.grid.clone(),
            data,
        }
    }

    /// The first-order part of `M`: `M(jet with only d = D u) - M(0)`.
    fn gradient_part(&self, node: usize, du: &[Complex64]) -> DMatrix<Complex64> {
        let n = self.n();
        let m = &self.metric;
        match &self.structure {
            Structure::Standard { eta, .. } => {
                let e = &eta.data[node];
                DMatrix::from_fn(n, n, |i, j| du[i] * e[j].conj() + e[i] * du[j].conj())
            }
            Structure::Gauduchon { rho, form, .. } => {
                let r = rho.values[node];
                if r == 0.0 {
                    return DMatrix::from_element(n, n, ZERO);
                }
                let z = z_at(&m.g[node], &m.g_inv[node], &m.torsion[node], du);
                match form {
                    GauduchonForm::ViaU => z * Complex64::new(r, 0.0),
                    GauduchonForm::ViaGTilde => {
                        let nm1 = n as f64 - 1.0;
                        let tr = (&m.g_inv[node] * &z).trace().re;
                        let w = &m.g[node] * Complex64::new(tr, 0.0) - z * Complex64::new(nm1, 0.0);
                        w * Complex64::new(r / nm1, 0.0)
                    }
                }
            }
        }
    }

    /// Coefficients of the linear functional `jet -> Re tr(B (M(jet) - M(0)))`.
    pub fn dual(&self, node: usize, b: &DMatrix<Complex64>) -> JetCoefficients {
        let n = self.n();
        let mut coeffs = JetCoefficients::zero(n);
        let hess_b = match &self.structure {
            Structure::Gauduchon {
                form: GauduchonForm::ViaU,
                ..
            } => {
                // tr(G^{-1} H) Re tr(B G) - Re tr(B H)
                let c = (b * &self.metric.g[node]).trace().re;
                &self.metric.g_inv[node] * Complex64::new(c, 0.0) - b
            }
            _ => b.clone(),
        };
        coeffs.add_hessian_dual(&hess_b);
        let mut jet = NodeJet::zero(n);
        for a in self.grid().active_axes() {
            jet.d.iter_mut().for_each(|x| *x = 0.0);
            jet.d[a] = 1.0;
            let part = self.gradient_part(node, &holomorphic_gradient(&jet));
            coeffs.d[a] = (b * part).trace().re;
        }
        coeffs
    }

    pub fn spectrum(&self, node: usize, m: &DMatrix<Complex64>, f: &Spectral) -> NodeSpectrum {
        let reduced = reduce_by_metric(m, &self.metric.l_inv[node]);
        let (lambda, vectors) = eigh_sorted(&reduced);
        let membership = f.membership(&lambda);
        NodeSpectrum {
            lambda,
            vectors,
            membership,
        }
    }

    /// `B` with `dF = Re tr(B dM)` for `F = f(lambda(M))`, from the
    /// cluster-averaged spectral gradient.
    pub fn chain_matrix(&self, node: usize, spec: &NodeSpectrum, f: &Spectral) -> Result<DMatrix<Complex64>> {
        let grad = cluster_average(&spec.lambda, &f.gradient(&spec.lambda)?);
        let n = self.n();
        let v = &spec.vectors;
        let mut inner = DMatrix::from_element(n, n, ZERO);
        for (k, gk) in grad.iter().enumerate() {
            let col = v.column(k);
            inner += col * col.adjoint() * Complex64::new(*gk, 0.0);
        }
        let l_inv = &self.metric.l_inv[node];
        Ok(l_inv.adjoint() * inner * l_inv)
    }

    /// `Re tr(G^{-1} dM)` dual: the trace operator used for supersolutions.
    pub fn trace_dual(&self, node: usize) -> JetCoefficients {
        self.dual(node, &self.metric.g_inv[node])
    }
}
