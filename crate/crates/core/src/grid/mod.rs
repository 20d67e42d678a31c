//! The model manifold `T^(n-1) x strip`, its uniform grid, node fields and
//! finite-difference stencils.
//!
//! Real axis `2k` is `x_(k+1)` and `2k+1` is `y_(k+1)`; the last complex
//! coordinate is the strip coordinate `w = s + i theta`, so axis `2n-2` is `s`
//! (the only non-periodic axis) and `2n-1` is `theta`. A periodic axis with
//! resolution 1 is frozen: fields are constant along it and all of its
//! difference operators vanish.

mod metric;
mod operators;

pub use metric::{MetricField, MetricPreset};
pub use operators::{
    complex_hessian, d_dz, d_dzbar, eig_wrt_metric, gauduchon_at, gauduchon_fields, gfield,
    gfield_at, hessian_from_jet, holomorphic_gradient, torsion, z_at, z_tensor, NodeJet,
};

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid on `T^(n-1) x [s0, s1] x (R / theta_period)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductGrid {
    pub n: usize,
    /// `(x period, y period)` for each torus factor.
    pub torus_periods: Vec<(f64, f64)>,
    pub s0: f64,
    pub s1: f64,
    pub theta_period: f64,
    /// Resolution per real axis; the `s` entry counts intervals.
    pub resolution: Vec<usize>,
    #[serde(skip)]
    dims: Vec<usize>,
    #[serde(skip)]
    spacing: Vec<f64>,
    #[serde(skip)]
    strides: Vec<usize>,
}

/// Fixed-capacity list of `(target, weight)` pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    pts: [(usize, f64); 9],
    len: usize,
}

impl Stencil {
    pub fn empty() -> Self {
        Self { pts: [(0, 0.0); 9], len: 0 }
    }

    fn from_slice(items: &[(usize, f64)]) -> Self {
        let mut s = Self::empty();
        for &p in items {
            s.push(p);
        }
        s
    }

    pub fn push(&mut self, p: (usize, f64)) {
        self.pts[self.len] = p;
        self.len += 1;
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.pts[..self.len].iter().copied()
    }
}

impl IntoIterator for Stencil {
    type Item = (usize, f64);
    type IntoIter = std::iter::Take<std::array::IntoIter<(usize, f64), 9>>;
    fn into_iter(self) -> Self::IntoIter {
        self.pts.into_iter().take(self.len)
    }
}

/// Which strip boundary slice a node lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Lower,
    Upper,
}

impl ProductGrid {
    pub fn new(
        n: usize,
        torus_periods: Vec<(f64, f64)>,
        s0: f64,
        s1: f64,
        theta_period: f64,
        resolution: Vec<usize>,
    ) -> Result<Self> {
        let mut problems = Vec::new();
        if n < 2 {
            problems.push(format!("complex dimension must be at least 2, got {n}"));
        }
        if torus_periods.len() + 1 != n {
            problems.push(format!(
                "expected {} torus period pairs, got {}",
                n.saturating_sub(1),
                torus_periods.len()
            ));
        }
        if resolution.len() != 2 * n {
            problems.push(format!("expected {} resolutions, got {}", 2 * n, resolution.len()));
        }
        if !(s1 > s0) {
            problems.push(format!("strip bounds must satisfy s0 < s1, got [{s0}, {s1}]"));
        }
        if !(theta_period > 0.0) {
            problems.push("theta period must be positive".into());
        }
        for (k, &(px, py)) in torus_periods.iter().enumerate() {
            if !(px > 0.0 && py > 0.0) {
                problems.push(format!("torus factor {k} has non-positive period"));
            }
        }
        if problems.is_empty() {
            let s_axis = 2 * n - 2;
            for (a, &r) in resolution.iter().enumerate() {
                if a == s_axis {
                    if r < 8 {
                        problems.push(format!("strip axis resolution must be >= 8, got {r}"));
                    }
                } else if r != 1 && r < 8 {
                    problems.push(format!(
                        "axis {a} resolution must be 1 (frozen) or >= 8, got {r}"
                    ));
                }
            }
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems.join("; ")));
        }
        let mut g = Self {
            n,
            torus_periods,
            s0,
            s1,
            theta_period,
            resolution,
            dims: vec![],
            spacing: vec![],
            strides: vec![],
        };
        g.derive();
        Ok(g)
    }

    /// Unit strip `[0, 1]`, torus periods `2 pi`, and the given resolutions.
    pub fn unit(n: usize, resolution: Vec<usize>) -> Result<Self> {
        let tau = 2.0 * std::f64::consts::PI;
        Self::new(n, vec![(tau, tau); n.saturating_sub(1)], 0.0, 1.0, tau, resolution)
    }

    fn derive(&mut self) {
        let n2 = 2 * self.n;
        let s_axis = self.s_axis();
        self.dims = (0..n2)
            .map(|a| if a == s_axis { self.resolution[a] + 1 } else { self.resolution[a] })
            .collect();
        self.spacing = (0..n2)
            .map(|a| self.period_or_length(a) / self.resolution[a] as f64)
            .collect();
        // fastest axes first, theta next to last, s slowest
        let mut order: Vec<usize> = (0..n2).filter(|&a| a != s_axis).collect();
        order.push(s_axis);
        self.strides = vec![0; n2];
        let mut stride = 1;
        for a in order {
            self.strides[a] = stride;
            stride *= self.dims[a];
        }
    }

    /// Restores derived data after deserialization.
    pub fn rebuild(mut self) -> Result<Self> {
        let g = Self::new(
            self.n,
            std::mem::take(&mut self.torus_periods),
            self.s0,
            self.s1,
            self.theta_period,
            std::mem::take(&mut self.resolution),
        )?;
        Ok(g)
    }

    fn period_or_length(&self, a: usize) -> f64 {
        let n = self.n;
        if a == 2 * n - 2 {
            self.s1 - self.s0
        } else if a == 2 * n - 1 {
            self.theta_period
        } else {
            let (px, py) = self.torus_periods[a / 2];
            if a % 2 == 0 {
                px
            } else {
                py
            }
        }
    }

    pub fn s_axis(&self) -> usize {
        2 * self.n - 2
    }

    pub fn theta_axis(&self) -> usize {
        2 * self.n - 1
    }

    pub fn real_dim(&self) -> usize {
        2 * self.n
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn spacing(&self, a: usize) -> f64 {
        self.spacing[a]
    }

    pub fn stride(&self, a: usize) -> usize {
        self.strides[a]
    }

    /// Mesh width: the largest spacing over non-frozen axes.
    pub fn h(&self) -> f64 {
        self.active_axes().map(|a| self.spacing[a]).fold(0.0, f64::max)
    }

    pub fn is_frozen(&self, a: usize) -> bool {
        a != self.s_axis() && self.resolution[a] == 1
    }

    pub fn active_axes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..2 * self.n).filter(move |&a| !self.is_frozen(a))
    }

    pub fn coord(&self, idx: usize, a: usize) -> usize {
        (idx / self.strides[a]) % self.dims[a]
    }

    pub fn coords(&self, idx: usize) -> Vec<usize> {
        (0..2 * self.n).map(|a| self.coord(idx, a)).collect()
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords.iter().zip(&self.strides).map(|(c, s)| c * s).sum()
    }

    /// Real coordinates of a node.
    pub fn position(&self, idx: usize) -> Vec<f64> {
        (0..2 * self.n)
            .map(|a| {
                let c = self.coord(idx, a) as f64 * self.spacing[a];
                if a == self.s_axis() {
                    self.s0 + c
                } else {
                    c
                }
            })
            .collect()
    }

    /// Normalized strip coordinate `(s - s0)/(s1 - s0)` of a node.
    pub fn sigma(&self, idx: usize) -> f64 {
        self.coord(idx, self.s_axis()) as f64 / self.resolution[self.s_axis()] as f64
    }

    pub fn boundary_side(&self, idx: usize) -> Option<Side> {
        let c = self.coord(idx, self.s_axis());
        if c == 0 {
            Some(Side::Lower)
        } else if c == self.resolution[self.s_axis()] {
            Some(Side::Upper)
        } else {
            None
        }
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        self.boundary_side(idx).is_some()
    }

    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.is_boundary(i)).collect()
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_boundary(i)).collect()
    }

    /// Index of the node's projection in the `(s, theta)` strip grid.
    pub fn strip_index(&self, idx: usize) -> usize {
        idx / self.strides[self.theta_axis()]
    }

    /// Number of nodes in the strip factor.
    pub fn strip_len(&self) -> usize {
        self.dims[self.s_axis()] * self.dims[self.theta_axis()]
    }

    /// The strip factor as a one-dimensional-torus grid (`n = 1` chart):
    /// `(s coordinate, theta coordinate)` of a strip index.
    pub fn strip_coords(&self, strip_idx: usize) -> (usize, usize) {
        let nt = self.dims[self.theta_axis()];
        (strip_idx / nt, strip_idx % nt)
    }

    /// Neighbor along axis `a` shifted by `offset`; wraps on periodic axes,
    /// `None` past a strip boundary.
    pub fn neighbor(&self, idx: usize, a: usize, offset: isize) -> Option<usize> {
        let c = self.coord(idx, a) as isize;
        let d = self.dims[a] as isize;
        let t = c + offset;
        let t = if a == self.s_axis() {
            if t < 0 || t >= d {
                return None;
            }
            t
        } else {
            t.rem_euclid(d)
        };
        Some((idx as isize + (t - c) * self.strides[a] as isize) as usize)
    }

    /// First-derivative stencil along `a` at coordinate `i`: `(coordinate, weight)`.
    pub fn first_stencil(&self, a: usize, i: usize) -> Stencil {
        if self.is_frozen(a) {
            return Stencil::empty();
        }
        let h = self.spacing[a];
        let d = self.dims[a];
        if a == self.s_axis() {
            let last = d - 1;
            if i == 0 {
                return Stencil::from_slice(&[(0, -1.5 / h), (1, 2.0 / h), (2, -0.5 / h)]);
            }
            if i == last {
                return Stencil::from_slice(&[(last, 1.5 / h), (last - 1, -2.0 / h), (last - 2, 0.5 / h)]);
            }
            Stencil::from_slice(&[(i - 1, -0.5 / h), (i + 1, 0.5 / h)])
        } else {
            Stencil::from_slice(&[((i + d - 1) % d, -0.5 / h), ((i + 1) % d, 0.5 / h)])
        }
    }

    /// Second-derivative stencil along `a` at coordinate `i`.
    pub fn second_stencil(&self, a: usize, i: usize) -> Stencil {
        if self.is_frozen(a) {
            return Stencil::empty();
        }
        let h2 = self.spacing[a] * self.spacing[a];
        let d = self.dims[a];
        if a == self.s_axis() {
            let last = d - 1;
            if i == 0 {
                return Stencil::from_slice(&[(0, 2.0 / h2), (1, -5.0 / h2), (2, 4.0 / h2), (3, -1.0 / h2)]);
            }
            if i == last {
                return Stencil::from_slice(&[
                    (last, 2.0 / h2),
                    (last - 1, -5.0 / h2),
                    (last - 2, 4.0 / h2),
                    (last - 3, -1.0 / h2),
                ]);
            }
            Stencil::from_slice(&[(i - 1, 1.0 / h2), (i, -2.0 / h2), (i + 1, 1.0 / h2)])
        } else {
            Stencil::from_slice(&[((i + d - 1) % d, 1.0 / h2), (i, -2.0 / h2), ((i + 1) % d, 1.0 / h2)])
        }
    }

    fn along(&self, idx: usize, a: usize, stencil: Stencil) -> Stencil {
        let c = self.coord(idx, a) as isize;
        let s = self.strides[a] as isize;
        let mut out = Stencil::empty();
        for (t, w) in stencil {
            out.push(((idx as isize + (t as isize - c) * s) as usize, w));
        }
        out
    }

    /// Node-level stencil of `D_a`.
    pub fn d1(&self, idx: usize, a: usize) -> Stencil {
        self.along(idx, a, self.first_stencil(a, self.coord(idx, a)))
    }

    /// Node-level stencil of `D_a D_b` (`D_aa` uses the three-point second
    /// difference; mixed pairs are the tensor product of first differences).
    pub fn d2(&self, idx: usize, a: usize, b: usize) -> Stencil {
        if a == b {
            return self.along(idx, a, self.second_stencil(a, self.coord(idx, a)));
        }
        let mut out = Stencil::empty();
        for (na, wa) in self.d1(idx, a) {
            for (nb, wb) in self.d1(na, b) {
                out.push((nb, wa * wb));
            }
        }
        out
    }

    /// Applies a stencil to node values.
    pub fn apply(values: &[f64], stencil: &Stencil) -> f64 {
        stencil.iter().map(|(j, w)| w * values[j]).sum()
    }

    pub fn apply_complex(values: &[Complex64], stencil: &Stencil) -> Complex64 {
        stencil.iter().map(|(j, w)| values[j] * w).sum()
    }
}

/// Real scalar per node.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub grid: Arc<ProductGrid>,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn new(grid: Arc<ProductGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Validation(format!(
                "field has {} values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite value at node {i}")));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Arc<ProductGrid>) -> Self {
        let len = grid.len();
        Self { grid, values: vec![0.0; len] }
    }

    pub fn constant(grid: Arc<ProductGrid>, c: f64) -> Self {
        let len = grid.len();
        Self { grid, values: vec![c; len] }
    }

    /// Samples `f(position)` at every node.
    pub fn from_fn(grid: Arc<ProductGrid>, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.position(i))).collect();
        Self { grid, values }
    }

    /// Pulls a strip-factor field back through the projection to the strip.
    pub fn pull_back_strip(grid: Arc<ProductGrid>, strip_values: &[f64]) -> Result<Self> {
        if strip_values.len() != grid.strip_len() {
            return Err(Error::Validation("strip field has the wrong length".into()));
        }
        let values = (0..grid.len()).map(|i| strip_values[grid.strip_index(i)]).collect();
        Ok(Self { grid, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &GridField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn add(&self, other: &GridField) -> GridField {
        self.axpy(1.0, other)
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &GridField) -> GridField {
        GridField {
            grid: self.grid.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + alpha * b).collect(),
        }
    }

    pub fn scale(&self, alpha: f64) -> GridField {
        GridField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|a| alpha * a).collect(),
        }
    }

    /// `D_a u` at every node.
    pub fn derivative(&self, a: usize) -> Vec<f64> {
        (0..self.len()).map(|i| ProductGrid::apply(&self.values, &self.grid.d1(i, a))).collect()
    }
}

/// Complex scalar per node.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    pub grid: Arc<ProductGrid>,
    pub values: Vec<Complex64>,
}

/// Hermitian `n x n` matrix per node.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianField {
    pub grid: Arc<ProductGrid>,
    pub data: Vec<DMatrix<Complex64>>,
}

impl HermitianField {
    pub fn constant(grid: Arc<ProductGrid>, m: &DMatrix<Complex64>) -> Self {
        let len = grid.len();
        Self { grid, data: vec![m.clone(); len] }
    }

    /// `c * I` at every node.
    pub fn scaled_identity(grid: Arc<ProductGrid>, c: f64) -> Self {
        let n = grid.n;
        let m = DMatrix::from_diagonal_element(n, n, Complex64::new(c, 0.0));
        Self::constant(grid, &m)
    }

    pub fn zeros(grid: Arc<ProductGrid>) -> Self {
        Self::scaled_identity(grid, 0.0)
    }

    /// Largest `|H_ij - conj(H_ji)|` over all nodes.
    pub fn max_asymmetry(&self) -> f64 {
        self.data.iter().map(crate::linalg::asymmetry).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &HermitianField) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max))
            .fold(0.0, f64::max)
    }
}

/// A `(1,0)`-form: `n` complex components per node.
#[derive(Debug, Clone, PartialEq)]
pub struct OneForm {
    pub grid: Arc<ProductGrid>,
    pub data: Vec<Vec<Complex64>>,
}

impl OneForm {
    pub fn zeros(grid: Arc<ProductGrid>) -> Self {
        let (len, n) = (grid.len(), grid.n);
        Self { grid, data: vec![vec![Complex64::new(0.0, 0.0); n]; len] }
    }

    /// Pull-back of a strip form `eta_S dw`: only the last component is set.
    pub fn from_strip(grid: Arc<ProductGrid>, eta_s: impl Fn(f64, f64) -> Complex64) -> Self {
        let n = grid.n;
        let data = (0..grid.len())
            .map(|i| {
                let p = grid.position(i);
                let mut v = vec![Complex64::new(0.0, 0.0); n];
                v[n - 1] = eta_s(p[2 * n - 2], p[2 * n - 1]);
                v
            })
            .collect();
        Self { grid, data }
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| v.iter().all(|z| *z == Complex64::new(0.0, 0.0)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid2() -> ProductGrid {
        ProductGrid::unit(2, vec![16, 1, 10, 8]).unwrap()
    }

    #[test]
    fn layout_and_indexing() {
        let g = grid2();
        assert_eq!(g.dims(), &[16, 1, 11, 8]);
        assert_eq!(g.len(), 16 * 11 * 8);
        assert_eq!(g.stride(0), 1);
        assert_eq!(g.stride(3), 16);
        assert_eq!(g.stride(2), 128);
        for idx in [0, 17, 300, g.len() - 1] {
            assert_eq!(g.index(&g.coords(idx)), idx);
        }
        assert_eq!(g.strip_len(), 88);
        let idx = g.index(&[5, 0, 3, 2]);
        assert_eq!(g.strip_coords(g.strip_index(idx)), (3, 2));
        assert!(g.is_boundary(g.index(&[5, 0, 10, 2])));
        assert!(!g.is_boundary(idx));
        assert!((g.h() - 2.0 * std::f64::consts::PI / 8.0).abs() < 1e-15);
    }

    #[test]
    fn neighbors_wrap() {
        let g = grid2();
        let idx = g.index(&[0, 0, 0, 7]);
        assert_eq!(g.coords(g.neighbor(idx, 0, -1).unwrap()), vec![15, 0, 0, 7]);
        assert_eq!(g.coords(g.neighbor(idx, 3, 1).unwrap()), vec![0, 0, 0, 0]);
        assert_eq!(g.neighbor(idx, 2, -1), None);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(ProductGrid::unit(1, vec![8, 8]).is_err());
        assert!(ProductGrid::unit(2, vec![4, 1, 8, 8]).is_err());
        assert!(ProductGrid::unit(2, vec![8, 1, 1, 8]).is_err());
        assert!(ProductGrid::new(2, vec![(1.0, 1.0)], 1.0, 0.0, 1.0, vec![8; 4]).is_err());
    }

    #[test]
    fn stencils_exact_on_quadratics() {
        let g = grid2();
        let gr = Arc::new(g);
        let u = GridField::from_fn(gr.clone(), |p| p[2] * p[2] + 3.0 * p[2]);
        for idx in [0, gr.index(&[3, 0, 5, 1]), gr.index(&[3, 0, 10, 1])] {
            let s = gr.position(idx)[2];
            let d = ProductGrid::apply(&u.values, &gr.d1(idx, 2));
            let dd = ProductGrid::apply(&u.values, &gr.d2(idx, 2, 2));
            assert!((d - (2.0 * s + 3.0)).abs() < 1e-12);
            assert!((dd - 2.0).abs() < 1e-10);
        }
        assert!(gr.d1(0, 1).is_empty());
    }

    #[test]
    fn pull_back_is_constant_on_fibres() {
        let gr = Arc::new(grid2());
        let strip: Vec<f64> = (0..gr.strip_len()).map(|i| i as f64).collect();
        let f = GridField::pull_back_strip(gr.clone(), &strip).unwrap();
        let a = gr.index(&[0, 0, 4, 3]);
        let b = gr.index(&[9, 0, 4, 3]);
        assert_eq!(f.values[a], f.values[b]);
        assert_eq!(f.values[a], (4 * 8 + 3) as f64);
    }
}
