use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ProductGrid;
use crate::error::{Error, Result};
use crate::linalg::{asymmetry, cholesky_inverse_factor};

/// Named metric presets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case")]
pub enum MetricPreset {
    /// `omega = I`.
    Flat,
    /// `omega = exp(eps cos x_1) I`.
    Conformal { eps: f64 },
    /// `omega = diag(1, .., 1, g_S(s))` with `g_S` a polynomial in `s`
    /// (coefficients in increasing degree).
    Product { profile: Vec<f64> },
}

/// Hermitian metric per node with cached inverse, Cholesky factor inverse
/// and Chern torsion.
#[derive(Debug, Clone)]
pub struct MetricField {
    pub grid: Arc<ProductGrid>,
    pub g: Vec<DMatrix<Complex64>>,
    pub g_inv: Vec<DMatrix<Complex64>>,
    /// `L^{-1}` with `g = L L*`.
    pub l_inv: Vec<DMatrix<Complex64>>,
    /// `T^k_ij` stored at `k n^2 + i n + j`.
    pub torsion: Vec<Vec<Complex64>>,
}

fn eval_poly(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

impl MetricPreset {
    pub fn matrix_at(&self, n: usize, position: &[f64]) -> DMatrix<Complex64> {
        let one = Complex64::new(1.0, 0.0);
        match self {
            MetricPreset::Flat => DMatrix::from_diagonal_element(n, n, one),
            MetricPreset::Conformal { eps } => {
                DMatrix::from_diagonal_element(n, n, one * (eps * position[0].cos()).exp())
            }
            MetricPreset::Product { profile } => {
                let mut m = DMatrix::from_diagonal_element(n, n, one);
                m[(n - 1, n - 1)] = one * eval_poly(profile, position[2 * n - 2]);
                m
            }
        }
    }

    pub fn is_product(&self) -> bool {
        matches!(self, MetricPreset::Flat | MetricPreset::Product { .. })
    }

    /// Strip metric profile `g_S(s)` when the preset is a product.
    pub fn strip_profile(&self, s: f64) -> f64 {
        match self {
            MetricPreset::Product { profile } => eval_poly(profile, s),
            _ => 1.0,
        }
    }
}

impl MetricField {
    pub fn from_preset(grid: Arc<ProductGrid>, preset: &MetricPreset) -> Result<Self> {
        let g = (0..grid.len()).map(|i| preset.matrix_at(grid.n, &grid.position(i))).collect();
        Self::from_nodes(grid, g)
    }

    pub fn flat(grid: Arc<ProductGrid>) -> Self {
        Self::from_preset(grid, &MetricPreset::Flat).expect("flat metric is positive")
    }

    /// Validates positivity and Hermiticity at every node and derives the
    /// inverse, Cholesky factor and torsion.
    pub fn from_nodes(grid: Arc<ProductGrid>, g: Vec<DMatrix<Complex64>>) -> Result<Self> {
        if g.len() != grid.len() {
            return Err(Error::Validation("metric has the wrong number of nodes".into()));
        }
        let n = grid.n;
        let factors: Vec<Result<(DMatrix<Complex64>, DMatrix<Complex64>)>> = g
            .par_iter()
            .enumerate()
            .map(|(node, m)| {
                if m.nrows() != n || m.ncols() != n {
                    return Err(Error::Validation(format!("metric at node {node} is not {n}x{n}")));
                }
                if asymmetry(m) > 1e-12 * m.norm() {
                    return Err(Error::NotHermitian {
                        asymmetry: asymmetry(m),
                        tolerance: 1e-12 * m.norm(),
                    });
                }
                let l_inv = cholesky_inverse_factor(m).ok_or(Error::MetricNotPositive { node })?;
                let g_inv = l_inv.adjoint() * &l_inv;
                Ok((g_inv, l_inv))
            })
            .collect();
        let mut g_inv = Vec::with_capacity(g.len());
        let mut l_inv = Vec::with_capacity(g.len());
        for f in factors {
            let (a, b) = f?;
            g_inv.push(a);
            l_inv.push(b);
        }
        let mut field = Self {
            grid,
            g,
            g_inv,
            l_inv,
            torsion: vec![],
        };
        field.torsion = field.compute_torsion();
        Ok(field)
    }

    /// Overrides entries from CSV rows `node,i,j,re,im` (the `(j,i)` entry is
    /// set to the conjugate). Lines starting with `#` and a header are skipped.
    pub fn with_overrides(self, csv: &str) -> Result<Self> {
        let mut g = self.g;
        let n = self.grid.n;
        let mut errors = Vec::new();
        for (line_no, line) in csv.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("node") {
                continue;
            }
            let parts: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed = (|| -> Option<(usize, usize, usize, f64, f64)> {
                if parts.len() != 5 {
                    return None;
                }
                Some((
                    parts[0].parse().ok()?,
                    parts[1].parse().ok()?,
                    parts[2].parse().ok()?,
                    parts[3].parse().ok()?,
                    parts[4].parse().ok()?,
                ))
            })();
            match parsed {
                Some((node, i, j, re, im)) if node < g.len() && i < n && j < n => {
                    if i == j && im != 0.0 {
                        errors.push(format!("line {}: diagonal entry must be real", line_no + 1));
                        continue;
                    }
                    g[node][(i, j)] = Complex64::new(re, im);
                    g[node][(j, i)] = Complex64::new(re, -im);
                }
                _ => errors.push(format!("line {}: expected node,i,j,re,im in range", line_no + 1)),
            }
        }
        if !errors.is_empty() {
            return Err(Error::Config(errors));
        }
        Self::from_nodes(self.grid, g)
    }

    pub fn n(&self) -> usize {
        self.grid.n
    }

    /// Holomorphic derivative `d_i g_(j lbar)` at a node, by differences of
    /// the node values.
    pub fn dg(&self, node: usize) -> Vec<DMatrix<Complex64>> {
        let n = self.grid.n;
        (0..n)
            .map(|i| {
                let dx = self.grid.d1(node, 2 * i);
                let dy = self.grid.d1(node, 2 * i + 1);
                let mut out = DMatrix::zeros(n, n);
                for (m, w) in dx {
                    out += &self.g[m] * Complex64::new(0.5 * w, 0.0);
                }
                for (m, w) in dy {
                    out += &self.g[m] * Complex64::new(0.0, -0.5 * w);
                }
                out
            })
            .collect()
    }

    fn compute_torsion(&self) -> Vec<Vec<Complex64>> {
        let n = self.grid.n;
        (0..self.grid.len())
            .into_par_iter()
            .map(|node| {
                let dg = self.dg(node);
                let ginv = &self.g_inv[node];
                let mut t = vec![Complex64::new(0.0, 0.0); n * n * n];
                for k in 0..n {
                    for i in 0..n {
                        for j in 0..n {
                            let mut acc = Complex64::new(0.0, 0.0);
                            for l in 0..n {
                                // g^{k lbar} = (G^{-1})_{l k}
                                acc += ginv[(l, k)] * (dg[i][(j, l)] - dg[j][(i, l)]);
                            }
                            t[k * n * n + i * n + j] = acc;
                        }
                    }
                }
                t
            })
            .collect()
    }

    /// `T^k_ij` at a node.
    pub fn t(&self, node: usize, k: usize, i: usize, j: usize) -> Complex64 {
        let n = self.grid.n;
        self.torsion[node][k * n * n + i * n + j]
    }

    pub fn max_torsion(&self) -> f64 {
        self.torsion
            .iter()
            .flat_map(|t| t.iter().map(|z| z.norm()))
            .fold(0.0, f64::max)
    }

    /// Smallest eigenvalue of the metric over all nodes.
    pub fn min_eigenvalue(&self) -> f64 {
        self.g
            .iter()
            .map(|m| crate::linalg::eigh_sorted(m).0[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// Chern curvature `R_(i jbar k lbar) = -d_k dbar_l g_(i jbar)
    /// + g^(p qbar) d_k g_(i qbar) dbar_l g_(p jbar)` at a node, stored at
    /// `((i n + j) n + k) n + l`. A diagnostic only.
    pub fn curvature(&self, node: usize) -> Vec<Complex64> {
        let n = self.grid.n;
        let grid = &self.grid;
        let dg = self.dg(node);
        let ginv = &self.g_inv[node];
        let half = Complex64::new(0.5, 0.0);
        let ihalf = Complex64::new(0.0, 0.5);
        let mut r = vec![Complex64::new(0.0, 0.0); n * n * n * n];
        for i in 0..n {
            for j in 0..n {
                let vals: Vec<Complex64> = self.g.iter().map(|m| m[(i, j)]).collect();
                for k in 0..n {
                    for l in 0..n {
                        // d_k dbar_l = 1/4 (D_xk - i D_yk)(D_xl + i D_yl)
                        let xx = ProductGrid::apply_complex(&vals, &grid.d2(node, 2 * k, 2 * l));
                        let yy = ProductGrid::apply_complex(&vals, &grid.d2(node, 2 * k + 1, 2 * l + 1));
                        let xy = ProductGrid::apply_complex(&vals, &grid.d2(node, 2 * k, 2 * l + 1));
                        let yx = ProductGrid::apply_complex(&vals, &grid.d2(node, 2 * k + 1, 2 * l));
                        let ddbar = (xx + yy) * half * half + (xy - yx) * ihalf * half;
                        let mut quad = Complex64::new(0.0, 0.0);
                        for p in 0..n {
                            for q in 0..n {
                                // dbar_l g_(p jbar) = conj(d_l g_(j pbar))
                                quad += ginv[(q, p)] * dg[k][(i, q)] * dg[l][(j, p)].conj();
                            }
                        }
                        r[((i * n + j) * n + k) * n + l] = -ddbar + quad;
                    }
                }
            }
        }
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid3() -> Arc<ProductGrid> {
        Arc::new(ProductGrid::unit(3, vec![32, 1, 8, 1, 8, 1]).unwrap())
    }

    #[test]
    fn flat_and_product_are_torsion_free() {
        let g = grid3();
        assert_eq!(MetricField::flat(g.clone()).max_torsion(), 0.0);
        let p = MetricField::from_preset(g, &MetricPreset::Product { profile: vec![1.0, 0.5, 0.25] })
            .unwrap();
        assert!(p.max_torsion() < 1e-12);
    }

    #[test]
    fn conformal_torsion_matches_closed_form() {
        // g = e^rho I gives T^k_ij = d_i rho delta_jk - d_j rho delta_ik,
        // with d_1 rho = -(eps/2) sin x_1
        let eps = 0.1;
        let errs: Vec<f64> = [32usize, 64]
            .iter()
            .map(|&r| {
                let g = Arc::new(ProductGrid::unit(3, vec![r, 1, 8, 1, 8, 1]).unwrap());
                let m = MetricField::from_preset(g.clone(), &MetricPreset::Conformal { eps }).unwrap();
                let mut worst = 0.0f64;
                for node in 0..g.len() {
                    let x = g.position(node)[0];
                    let d1 = Complex64::new(-0.5 * eps * x.sin(), 0.0);
                    let dr = [d1, Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)];
                    for k in 0..3 {
                        for i in 0..3 {
                            for j in 0..3 {
                                let mut e = Complex64::new(0.0, 0.0);
                                if j == k {
                                    e += dr[i];
                                }
                                if i == k {
                                    e -= dr[j];
                                }
                                worst = worst.max((m.t(node, k, i, j) - e).norm());
                                let anti = m.t(node, k, i, j) + m.t(node, k, j, i);
                                assert!(anti.norm() < 1e-15);
                            }
                        }
                    }
                }
                let idx = g.index(&[r / 4, 0, 0, 0, 3, 0]);
                assert!(m.t(idx, 2, 0, 2).norm() > 0.01);
                worst
            })
            .collect();
        let ratio = errs[0] / errs[1];
        assert!((ratio - 4.0).abs() < 0.8, "ratio {ratio}");
    }

    #[test]
    fn rejects_indefinite_and_bad_overrides() {
        let g = grid3();
        let m = MetricField::flat(g.clone());
        let bad = m.clone().with_overrides("node,i,j,re,im\n5,1,1,-1.0,0.0\n");
        assert!(matches!(bad, Err(Error::MetricNotPositive { node: 5 })));
        assert!(matches!(m.clone().with_overrides("5,1\n"), Err(Error::Config(_))));
        let ok = m.with_overrides("7,0,1,0.1,0.2\n").unwrap();
        assert_eq!(ok.g[7][(1, 0)], Complex64::new(0.1, -0.2));
    }

    #[test]
    fn flat_curvature_vanishes() {
        let g = grid3();
        let m = MetricField::flat(g.clone());
        assert!(m.curvature(g.len() / 2).iter().all(|z| z.norm() < 1e-12));
        let c = MetricField::from_preset(g.clone(), &MetricPreset::Conformal { eps: 0.2 }).unwrap();
        // conformal: R_(1 1bar 1 1bar) = -e^rho d_1 dbar_1 rho at x_1 = 0
        let node = g.index(&[0, 0, 0, 0, 4, 0]);
        let r = c.curvature(node)[0];
        let expected = -(0.2f64).exp() * (-0.2 / 4.0);
        assert!((r.re - expected).abs() < 5e-3, "{r} vs {expected}");
    }
}
