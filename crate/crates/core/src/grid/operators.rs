use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use super::{ComplexField, GridField, HermitianField, MetricField, OneForm, ProductGrid};
use crate::error::{Error, Result};
use crate::linalg::{eigh_sorted, reduce_by_metric};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// First and second real derivatives of a field at one node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeJet {
    pub n: usize,
    /// `D_a u`, length `2n`.
    pub d: Vec<f64>,
    /// `D_a D_b u`, row-major `2n x 2n`, symmetric.
    pub dd: Vec<f64>,
}

impl NodeJet {
    pub fn zero(n: usize) -> Self {
        Self {
            n,
            d: vec![0.0; 2 * n],
            dd: vec![0.0; 4 * n * n],
        }
    }

    pub fn at(grid: &ProductGrid, values: &[f64], node: usize) -> Self {
        let n = grid.n;
        let m = 2 * n;
        let mut jet = Self::zero(n);
        for a in grid.active_axes() {
            jet.d[a] = ProductGrid::apply(values, &grid.d1(node, a));
            for b in grid.active_axes().filter(|&b| b >= a) {
                let v = ProductGrid::apply(values, &grid.d2(node, a, b));
                jet.dd[a * m + b] = v;
                jet.dd[b * m + a] = v;
            }
        }
        jet
    }

    pub fn second(&self, a: usize, b: usize) -> f64 {
        self.dd[a * 2 * self.n + b]
    }
}

/// `u_k = d_k u = (D_xk - i D_yk) u / 2` for each complex coordinate.
pub fn holomorphic_gradient(jet: &NodeJet) -> Vec<Complex64> {
    (0..jet.n)
        .map(|k| Complex64::new(0.5 * jet.d[2 * k], -0.5 * jet.d[2 * k + 1]))
        .collect()
}

/// `u_(k lbar) = 1/4 [(D_xk xl + D_yk yl) + i (D_xk yl - D_yk xl)]`.
pub fn hessian_from_jet(jet: &NodeJet) -> DMatrix<Complex64> {
    let n = jet.n;
    let mut h = DMatrix::from_element(n, n, ZERO);
    for k in 0..n {
        for l in 0..n {
            let (xk, yk, xl, yl) = (2 * k, 2 * k + 1, 2 * l, 2 * l + 1);
            h[(k, l)] = Complex64::new(
                0.25 * (jet.second(xk, xl) + jet.second(yk, yl)),
                0.25 * (jet.second(xk, yl) - jet.second(yk, xl)),
            );
        }
    }
    h
}

/// `chi~ + u_(i jbar) + u_i conj(eta_j) + eta_i conj(u_j)` at a node.
pub fn gfield_at(chi_tilde: &DMatrix<Complex64>, eta: &[Complex64], jet: &NodeJet) -> DMatrix<Complex64> {
    let du = holomorphic_gradient(jet);
    let mut m = chi_tilde + hessian_from_jet(jet);
    for i in 0..jet.n {
        for j in 0..jet.n {
            m[(i, j)] += du[i] * eta[j].conj() + eta[i] * du[j].conj();
        }
    }
    m
}

/// The gradient tensor `Z(du, dbar u)` at a node, in matrix form:
/// with `tau_p = T^k_(pk)`, `v_l = g^(k lbar) u_k` and
/// `A_(qj) = T^q_(lj) conj(v_l)`,
/// `2(n-1) Z = 2 Re(g^(p qbar) conj(tau_q) u_p) G + X + X*`,
/// `X = -G conj(A) - u tau*`.
pub fn z_at(
    g: &DMatrix<Complex64>,
    g_inv: &DMatrix<Complex64>,
    torsion: &[Complex64],
    du: &[Complex64],
) -> DMatrix<Complex64> {
    let n = g.nrows();
    let t = |k: usize, i: usize, j: usize| torsion[k * n * n + i * n + j];
    let tau: Vec<Complex64> = (0..n).map(|p| (0..n).map(|k| t(k, p, k)).sum()).collect();
    // g^(p qbar) = g_inv[(q, p)]
    let mut s = ZERO;
    for p in 0..n {
        for q in 0..n {
            s += g_inv[(q, p)] * tau[q].conj() * du[p];
        }
    }
    let v: Vec<Complex64> = (0..n).map(|l| (0..n).map(|k| g_inv[(l, k)] * du[k]).sum()).collect();
    let a = DMatrix::from_fn(n, n, |q, j| (0..n).map(|l| t(q, l, j) * v[l].conj()).sum::<Complex64>());
    let u_col = DMatrix::from_fn(n, 1, |i, _| du[i]);
    let tau_col = DMatrix::from_fn(n, 1, |i, _| tau[i]);
    let x = -(g * a.map(|z| z.conj())) - &u_col * tau_col.adjoint();
    let scale = Complex64::new(1.0 / (2.0 * (n as f64 - 1.0)), 0.0);
    (g * Complex64::new(2.0 * s.re, 0.0) + &x + x.adjoint()) * scale
}

/// `U = chi + (Delta u) G - u_(i jbar) + rho Z` and
/// `g_gaud = u_(i jbar) + chi_check + rho W / (n-1)` at a node, with
/// `chi_check = tr chi / (n-1) G - chi` and `W = (tr Z) G - (n-1) Z`.
pub fn gauduchon_at(
    chi: &DMatrix<Complex64>,
    rho: f64,
    g: &DMatrix<Complex64>,
    g_inv: &DMatrix<Complex64>,
    torsion: &[Complex64],
    jet: &NodeJet,
) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
    let n = jet.n;
    let nm1 = n as f64 - 1.0;
    let hess = hessian_from_jet(jet);
    let du = holomorphic_gradient(jet);
    let z = z_at(g, g_inv, torsion, &du);
    let tr = |m: &DMatrix<Complex64>| (g_inv * m).trace().re;
    let lap = tr(&hess);
    let re = |x: f64| Complex64::new(x, 0.0);
    let u_mat = chi + g * re(lap) - &hess + &z * re(rho);
    let chi_check = g * re(tr(chi) / nm1) - chi;
    let w = g * re(tr(&z)) - &z * re(nm1);
    let g_gaud = &hess + chi_check + w * re(rho / nm1);
    (u_mat, g_gaud)
}

fn jets(u: &GridField) -> Vec<NodeJet> {
    let grid = &u.grid;
    (0..grid.len())
        .into_par_iter()
        .map(|i| NodeJet::at(grid, &u.values, i))
        .collect()
}

/// `d_i u` per node.
pub fn d_dz(u: &GridField, i: usize) -> ComplexField {
    let grid = &u.grid;
    let dx = u.derivative(2 * i);
    let dy = u.derivative(2 * i + 1);
    ComplexField {
        grid: grid.clone(),
        values: dx.iter().zip(&dy).map(|(x, y)| Complex64::new(0.5 * x, -0.5 * y)).collect(),
    }
}

/// `dbar_i u` per node.
pub fn d_dzbar(u: &GridField, i: usize) -> ComplexField {
    let mut f = d_dz(u, i);
    for z in f.values.iter_mut() {
        *z = z.conj();
    }
    f
}

pub fn complex_hessian(u: &GridField) -> HermitianField {
    let data = jets(u).iter().map(hessian_from_jet).map(|m| crate::linalg::symmetrize(&m)).collect();
    HermitianField { grid: u.grid.clone(), data }
}

pub fn gfield(u: &GridField, chi_tilde: &HermitianField, eta: &OneForm) -> Result<HermitianField> {
    if chi_tilde.data.len() != u.len() || eta.data.len() != u.len() {
        return Err(Error::Validation("gfield: inconsistent field shapes".into()));
    }
    let data = jets(u)
        .par_iter()
        .enumerate()
        .map(|(i, jet)| gfield_at(&chi_tilde.data[i], &eta.data[i], jet))
        .collect();
    Ok(HermitianField { grid: u.grid.clone(), data })
}

/// The Chern torsion `T^k_ij` per node (index `k n^2 + i n + j`).
pub fn torsion(metric: &MetricField) -> &[Vec<Complex64>] {
    &metric.torsion
}

pub fn z_tensor(metric: &MetricField, u: &GridField) -> HermitianField {
    let data = jets(u)
        .par_iter()
        .enumerate()
        .map(|(i, jet)| {
            z_at(&metric.g[i], &metric.g_inv[i], &metric.torsion[i], &holomorphic_gradient(jet))
        })
        .collect();
    HermitianField { grid: u.grid.clone(), data }
}

pub fn gauduchon_fields(
    u: &GridField,
    chi: &HermitianField,
    rho: &GridField,
    metric: &MetricField,
) -> Result<(HermitianField, HermitianField)> {
    if u.grid.n < 2 {
        return Err(Error::Validation("the Gauduchon operator needs n >= 2".into()));
    }
    let pairs: Vec<_> = jets(u)
        .par_iter()
        .enumerate()
        .map(|(i, jet)| {
            gauduchon_at(
                &chi.data[i],
                rho.values[i],
                &metric.g[i],
                &metric.g_inv[i],
                &metric.torsion[i],
                jet,
            )
        })
        .collect();
    let (a, b): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    Ok((
        HermitianField { grid: u.grid.clone(), data: a },
        HermitianField { grid: u.grid.clone(), data: b },
    ))
}

/// Ascending eigenvalues of `g^{-1} H` per node.
pub fn eig_wrt_metric(h: &HermitianField, metric: &MetricField) -> Result<Vec<Vec<f64>>> {
    if h.data.len() != metric.g.len() {
        return Err(Error::Validation("eig_wrt_metric: inconsistent field shapes".into()));
    }
    Ok(h
        .data
        .par_iter()
        .zip(metric.l_inv.par_iter())
        .map(|(m, l)| eigh_sorted(&reduce_by_metric(m, l)).0)
        .collect())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::grid::MetricPreset;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn grid(n: usize, r: usize) -> Arc<ProductGrid> {
        Arc::new(ProductGrid::unit(n, vec![r; 2 * n]).unwrap())
    }

    #[test]
    fn d_dz_examples() {
        let g = grid(2, 16);
        let u = GridField::from_fn(g.clone(), |p| p[2]);
        assert!(d_dz(&u, 1).values.iter().all(|z| (*z - c(0.5, 0.0)).norm() < 1e-12));
        let k = GridField::constant(g.clone(), 3.0);
        assert!(d_dz(&k, 0).values.iter().all(|z| z.norm() == 0.0));

        // u = sin(2 pi x / L), L = 2 pi: d_1 u = cos(x) / 2 + O(h^2)
        let errs: Vec<f64> = [16usize, 32]
            .iter()
            .map(|&r| {
                let g = grid(2, r);
                let u = GridField::from_fn(g.clone(), |p| p[0].sin());
                let du = d_dz(&u, 0);
                (0..g.len())
                    .map(|i| (du.values[i] - c(0.5 * g.position(i)[0].cos(), 0.0)).norm())
                    .fold(0.0, f64::max)
            })
            .collect();
        assert!((errs[0] / errs[1] - 4.0).abs() < 0.8);
    }

    #[test]
    fn hessian_examples() {
        let g = grid(2, 16);
        let u = GridField::from_fn(g.clone(), |p| p[2] * p[2] + p[3] * p[3]);
        let h = complex_hessian(&u);
        // theta is periodic, so theta^2 only has the right second difference
        // away from the wrap; check an interior node with theta in the middle
        let node = g.index(&[3, 4, 5, 8]);
        assert!((h.data[node][(1, 1)] - c(1.0, 0.0)).norm() < 1e-10);
        assert!(h.data[node][(0, 0)].norm() < 1e-12);
        assert!(h.data[node][(0, 1)].norm() < 1e-12);

        // Re(w^2) = s^2 - theta^2 is pluriharmonic
        let u = GridField::from_fn(g.clone(), |p| p[2] * p[2] - p[3] * p[3]);
        let h = complex_hessian(&u);
        assert!(h.data[node].iter().all(|z| z.norm() < 1e-10));
        assert!(h.max_asymmetry() < 1e-12);
    }

    #[test]
    fn hessian_second_order_on_trig() {
        // u = cos(x1) cos(y1 + theta) sin(pi s) has an analytic d dbar
        let errs: Vec<f64> = [16usize, 32]
            .iter()
            .map(|&r| {
                let g = Arc::new(ProductGrid::unit(2, vec![r, r, r, r]).unwrap());
                let f = |p: &[f64]| p[0].cos() * (p[1] + p[3]).cos() * (std::f64::consts::PI * p[2]).sin();
                let u = GridField::from_fn(g.clone(), f);
                let h = complex_hessian(&u);
                let pi = std::f64::consts::PI;
                let mut worst = 0.0f64;
                for node in g.interior_nodes() {
                    let p = g.position(node);
                    let (cx, sx) = (p[0].cos(), p[0].sin());
                    let (ct, st) = ((p[1] + p[3]).cos(), (p[1] + p[3]).sin());
                    let (cs, ss) = ((pi * p[2]).cos(), (pi * p[2]).sin());
                    // real second derivatives
                    let uxx = -cx * ct * ss;
                    let uyy = -cx * ct * ss;
                    let uxy = sx * st * ss;
                    let uss = -pi * pi * cx * ct * ss;
                    let utt = -cx * ct * ss;
                    let uxs = -pi * sx * ct * cs;
                    let uxt = sx * st * ss;
                    let uys = -pi * cx * st * cs;
                    let uyt = -cx * ct * ss;
                    let h00 = c(0.25 * (uxx + uyy), 0.25 * (uxy - uxy));
                    let h01 = c(0.25 * (uxs + uyt), 0.25 * (uxt - uys));
                    let h11 = c(0.25 * (uss + utt), 0.0);
                    worst = worst
                        .max((h.data[node][(0, 0)] - h00).norm())
                        .max((h.data[node][(0, 1)] - h01).norm())
                        .max((h.data[node][(1, 1)] - h11).norm());
                }
                worst
            })
            .collect();
        let ratio = errs[0] / errs[1];
        assert!((ratio - 4.0).abs() < 0.8, "ratio {ratio}, errors {errs:?}");
    }

    #[test]
    fn gfield_examples() {
        let g = grid(2, 8);
        let chi = HermitianField::scaled_identity(g.clone(), 2.5);
        let zero = OneForm::zeros(g.clone());
        let u = GridField::zeros(g.clone());
        let m = gfield(&u, &chi, &zero).unwrap();
        assert_eq!(m.data[10], DMatrix::from_diagonal_element(2, 2, c(2.5, 0.0)));

        // eta = dz_2, u = Re w: g_(2 2bar) = chi + 1/2 + 1/2
        let eta = OneForm::from_strip(g.clone(), |_, _| c(1.0, 0.0));
        let u = GridField::from_fn(g.clone(), |p| p[2]);
        let m = gfield(&u, &chi, &eta).unwrap();
        for node in [0, 17, 100] {
            assert!((m.data[node][(1, 1)] - c(3.5, 0.0)).norm() < 1e-12);
            assert!(m.data[node][(0, 1)].norm() < 1e-12);
        }
    }

    /// Direct transcription of the six-term torsion contraction.
    fn z_oracle(metric: &MetricField, node: usize, du: &[Complex64]) -> DMatrix<Complex64> {
        let n = metric.n();
        let g = &metric.g[node];
        let gi = |p: usize, q: usize| metric.g_inv[node][(q, p)];
        let t = |k, i, j| metric.t(node, k, i, j);
        let ub: Vec<Complex64> = du.iter().map(|z| z.conj()).collect();
        let mut z = DMatrix::from_element(n, n, ZERO);
        for i in 0..n {
            for j in 0..n {
                let mut acc = ZERO;
                for p in 0..n {
                    for q in 0..n {
                        for l in 0..n {
                            acc += gi(p, q) * t(l, q, l).conj() * g[(i, j)] * du[p];
                            acc += gi(p, q) * t(l, p, l) * g[(i, j)] * ub[q];
                        }
                    }
                }
                for k in 0..n {
                    for l in 0..n {
                        for q in 0..n {
                            acc -= gi(k, l) * g[(i, q)] * t(q, l, j).conj() * du[k];
                            acc -= gi(k, l) * g[(q, j)] * t(q, k, i) * ub[l];
                        }
                    }
                }
                for l in 0..n {
                    acc -= t(l, j, l).conj() * du[i];
                    acc -= t(l, i, l) * ub[j];
                }
                z[(i, j)] = acc / (2.0 * (n as f64 - 1.0));
            }
        }
        z
    }

    #[test]
    fn z_tensor_matches_index_loop_and_closed_form() {
        let g = Arc::new(ProductGrid::unit(3, vec![16, 8, 16, 1, 8, 8]).unwrap());
        let metric = MetricField::from_preset(g.clone(), &MetricPreset::Conformal { eps: 0.1 }).unwrap();
        let u = GridField::from_fn(g.clone(), |p| p[0] + 0.3 * p[2].sin() * p[4] + 0.2 * p[1].cos());
        let z = z_tensor(&metric, &u);
        assert!(z.max_asymmetry() < 1e-14);
        let mut worst = 0.0f64;
        let mut worst_closed = 0.0f64;
        for node in (0..g.len()).step_by(7) {
            let jet = NodeJet::at(&g, &u.values, node);
            let du = holomorphic_gradient(&jet);
            let oracle = z_oracle(&metric, node, &du);
            worst = worst.max((&z.data[node] - &oracle).iter().map(|x| x.norm()).fold(0.0, f64::max));

            // conformal metric: T^k_ij = r_i delta_jk - r_j delta_ik with the
            // discrete r_i = e^-rho D_i e^rho, so Z has a closed form
            let n = 3;
            let r: Vec<Complex64> = (0..n).map(|i| metric.t(node, (i + 1) % n, i, (i + 1) % n)).collect();
            let dot: Complex64 = (0..n).map(|p| r[p].conj() * du[p]).sum();
            let k = (n as f64 - 2.0) / (2.0 * (n as f64 - 1.0));
            let closed = DMatrix::from_fn(n, n, |i, j| {
                let diag = if i == j { c(2.0 * dot.re, 0.0) } else { ZERO };
                (diag - du[i] * r[j].conj() - r[i] * du[j].conj()) * k
            });
            worst_closed = worst_closed.max((&z.data[node] - &closed).iter().map(|x| x.norm()).fold(0.0, f64::max));
        }
        assert!(worst < 1e-12, "worst {worst}");
        assert!(worst_closed < 1e-12, "closed form {worst_closed}");
        assert!(z.data.iter().any(|m| m.norm() > 1e-3));
    }

    #[test]
    fn z_vanishes_and_is_linear() {
        let g = Arc::new(ProductGrid::unit(3, vec![8, 1, 8, 8, 8, 8]).unwrap());
        let flat = MetricField::flat(g.clone());
        let u = GridField::from_fn(g.clone(), |p| p[0].sin() + p[4] * p[3].cos());
        assert!(z_tensor(&flat, &u).data.iter().all(|m| m.iter().all(|z| z.norm() == 0.0)));

        let conf = MetricField::from_preset(g.clone(), &MetricPreset::Conformal { eps: 0.3 }).unwrap();
        let k = GridField::constant(g.clone(), 4.0);
        assert!(z_tensor(&conf, &k).data.iter().all(|m| m.iter().all(|z| z.norm() < 1e-14)));
        let v = GridField::from_fn(g.clone(), |p| p[2].cos() * p[4]);
        let lhs = z_tensor(&conf, &u.add(&v));
        let zu = z_tensor(&conf, &u);
        let zv = z_tensor(&conf, &v);
        let sum = HermitianField {
            grid: g.clone(),
            data: zu.data.iter().zip(&zv.data).map(|(a, b)| a + b).collect(),
        };
        assert!(lhs.max_abs_diff(&sum) < 1e-12);

        // n = 2: the conformal Z vanishes identically
        let g2 = grid(2, 8);
        let conf2 = MetricField::from_preset(g2.clone(), &MetricPreset::Conformal { eps: 0.3 }).unwrap();
        let u2 = GridField::from_fn(g2.clone(), |p| p[0].sin() + p[2]);
        assert!(z_tensor(&conf2, &u2).data.iter().all(|m| m.iter().all(|z| z.norm() < 1e-14)));
    }

    #[test]
    fn gauduchon_examples() {
        let g = Arc::new(ProductGrid::unit(3, vec![8, 1, 8, 8, 8, 8]).unwrap());
        let flat = MetricField::flat(g.clone());
        let chi = HermitianField::scaled_identity(g.clone(), 1.0);
        let zero = GridField::zeros(g.clone());
        let (u, gg) = gauduchon_fields(&zero, &chi, &zero, &flat).unwrap();
        assert!((&u.data[5] - DMatrix::identity(3, 3)).iter().all(|z| z.norm() < 1e-15));
        assert!((&gg.data[5] - DMatrix::identity(3, 3) * c(0.5, 0.0)).iter().all(|z| z.norm() < 1e-15));

        // tr U = (n-1) Delta u + tr chi on flat data with rho = 0
        let v = GridField::from_fn(g.clone(), |p| p[0].cos() * p[4] + p[3].sin());
        let chi0 = HermitianField::zeros(g.clone());
        let (u, gg) = gauduchon_fields(&v, &chi0, &zero, &flat).unwrap();
        let lap = complex_hessian(&v);
        for node in g.interior_nodes().into_iter().step_by(5) {
            let tr_u = u.data[node].trace().re;
            assert!((tr_u - 2.0 * lap.data[node].trace().re).abs() < 1e-10);
            // mu = lambda Q: eigenvalues of U are deleted sums of those of g_gaud
            let mut lam = eigh_sorted(&gg.data[node]).0;
            let total: f64 = lam.iter().sum();
            lam.iter_mut().for_each(|x| *x = total - *x);
            lam.sort_by(f64::total_cmp);
            let mu = eigh_sorted(&u.data[node]).0;
            for (a, b) in lam.iter().zip(&mu) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn u_is_trace_minus_gaud_on_conformal_data() {
        let g = Arc::new(ProductGrid::unit(3, vec![16, 1, 8, 8, 8, 8]).unwrap());
        let metric = MetricField::from_preset(g.clone(), &MetricPreset::Conformal { eps: 0.2 }).unwrap();
        let chi = HermitianField::scaled_identity(g.clone(), 1.5);
        let rho = GridField::constant(g.clone(), 0.7);
        let u = GridField::from_fn(g.clone(), |p| p[0].sin() * p[4] + 0.2 * p[5].cos());
        let (uu, gg) = gauduchon_fields(&u, &chi, &rho, &metric).unwrap();
        for node in (0..g.len()).step_by(11) {
            let tr = (&metric.g_inv[node] * &gg.data[node]).trace().re;
            let expect = &metric.g[node] * c(tr, 0.0) - &gg.data[node];
            assert!((&uu.data[node] - expect).iter().all(|z| z.norm() < 1e-12));
        }
        let lam = eig_wrt_metric(&gg, &metric).unwrap();
        let mu = eig_wrt_metric(&uu, &metric).unwrap();
        let node = 123;
        let total: f64 = lam[node].iter().sum();
        let mut q: Vec<f64> = lam[node].iter().map(|x| total - x).collect();
        q.sort_by(f64::total_cmp);
        for (a, b) in q.iter().zip(&mu[node]) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn eig_wrt_metric_examples() {
        let g = grid(2, 8);
        let m = MetricField::from_preset(g.clone(), &MetricPreset::Product { profile: vec![2.0] }).unwrap();
        let h = HermitianField::scaled_identity(g.clone(), 1.0);
        let e = eig_wrt_metric(&h, &m).unwrap();
        assert!((e[3][0] - 0.5).abs() < 1e-15 && (e[3][1] - 1.0).abs() < 1e-15);
    }
}
