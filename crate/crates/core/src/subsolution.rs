//! Subsolutions, supersolutions and harmonic extensions on `X x strip`.
//!
//! Strip-factor problems are solved on the `(s, theta)` grid with exactly the
//! stencils the full grid uses, so pulled-back solutions satisfy the
//! corresponding identities on `M` to round-off.

use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::cone::SpectralFunction;
use crate::equation::{NodeOperator, Spectral};
use crate::error::{Error, Result};
use crate::grid::{GridField, NodeJet, OneForm, ProductGrid, Side};
use crate::linalg::{eigh_sorted, reduce_by_metric};
use crate::sparse::{self, CsrMatrix};

/// `eta_S` and the metric profile `g_S` sampled on the strip factor.
#[derive(Debug, Clone)]
pub struct StripData {
    pub grid: Arc<ProductGrid>,
    pub eta: Vec<Complex64>,
    pub profile: Vec<f64>,
}

impl StripData {
    pub fn new(
        grid: Arc<ProductGrid>,
        eta_s: impl Fn(f64, f64) -> Complex64,
        g_s: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        let len = grid.strip_len();
        let mut eta = Vec::with_capacity(len);
        let mut profile = Vec::with_capacity(len);
        for k in 0..len {
            let (s, t) = strip_position(&grid, k);
            eta.push(eta_s(s, t));
            let g = g_s(s);
            if !(g > 0.0) {
                return Err(Error::Validation(format!("strip metric profile must be positive, got {g} at s = {s}")));
            }
            profile.push(g);
        }
        Ok(Self { grid, eta, profile })
    }

    pub fn flat(grid: Arc<ProductGrid>) -> Self {
        Self::new(grid, |_, _| Complex64::new(0.0, 0.0), |_| 1.0).expect("flat profile is positive")
    }

    /// Reads `eta_S` off a pulled-back form; rejects forms with torus
    /// components or torus dependence.
    pub fn from_one_form(eta: &OneForm, g_s: impl Fn(f64) -> f64) -> Result<Self> {
        let grid = eta.grid.clone();
        let n = grid.n;
        let rep = representative_nodes(&grid);
        for (node, v) in eta.data.iter().enumerate() {
            let base = &eta.data[rep[grid.strip_index(node)]];
            if v[..n - 1].iter().any(|z| z.norm() > 0.0) || (v[n - 1] - base[n - 1]).norm() > 1e-14 {
                return Err(Error::Validation(format!(
                    "eta is not pulled back from the strip (node {node})"
                )));
            }
        }
        let data = Self::new(grid.clone(), |_, _| Complex64::new(0.0, 0.0), g_s)?;
        let eta_vals = rep.iter().map(|&node| eta.data[node][n - 1]).collect();
        Ok(Self { eta: eta_vals, ..data })
    }
}

fn strip_position(grid: &ProductGrid, k: usize) -> (f64, f64) {
    let (sc, tc) = grid.strip_coords(k);
    (
        grid.s0 + sc as f64 * grid.spacing(grid.s_axis()),
        tc as f64 * grid.spacing(grid.theta_axis()),
    )
}

/// For each strip index, the node with all torus coordinates zero.
fn representative_nodes(grid: &ProductGrid) -> Vec<usize> {
    let stride = grid.stride(grid.theta_axis());
    (0..grid.strip_len()).map(|k| k * stride).collect()
}

/// `1/4 (D_ss + D_tt) + Re(eta) D_s - Im(eta) D_t` with identity rows on the
/// two boundary slices.
fn strip_matrix(data: &StripData) -> CsrMatrix {
    let grid = &data.grid;
    let (sa, ta) = (grid.s_axis(), grid.theta_axis());
    let nt = grid.dims()[ta];
    let last = grid.dims()[sa] - 1;
    let rows = (0..grid.strip_len())
        .map(|k| {
            let (sc, tc) = grid.strip_coords(k);
            if sc == 0 || sc == last {
                return vec![(k, 1.0)];
            }
            let eta = data.eta[k];
            let mut row = Vec::with_capacity(10);
            for (c, w) in grid.second_stencil(sa, sc) {
                row.push((c * nt + tc, 0.25 * w));
            }
            for (c, w) in grid.second_stencil(ta, tc) {
                row.push((sc * nt + c, 0.25 * w));
            }
            for (c, w) in grid.first_stencil(sa, sc) {
                row.push((c * nt + tc, eta.re * w));
            }
            for (c, w) in grid.first_stencil(ta, tc) {
                row.push((sc * nt + c, -eta.im * w));
            }
            row
        })
        .collect();
    CsrMatrix::from_rows(rows)
}

/// Solves the strip equation with interior right side `rhs` and boundary
/// values `lower`, `upper` (one per theta node).
pub fn solve_strip(data: &StripData, rhs: &[f64], lower: &[f64], upper: &[f64]) -> Result<Vec<f64>> {
    let grid = &data.grid;
    let nt = grid.dims()[grid.theta_axis()];
    let last = grid.dims()[grid.s_axis()] - 1;
    if rhs.len() != grid.strip_len() || lower.len() != nt || upper.len() != nt {
        return Err(Error::Validation("strip data has the wrong length".into()));
    }
    let a = strip_matrix(data);
    let mut b = rhs.to_vec();
    for t in 0..nt {
        b[t] = lower[t];
        b[last * nt + t] = upper[t];
    }
    let x = sparse::solve(&a, &b)?;
    let res = a.mul(&x).iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    let scale = 1.0 + b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if res > 1e-10 * scale {
        return Err(Error::LinearSolve(format!("strip residual {res:e}")));
    }
    Ok(x)
}

/// Solution of the strip Poisson problem with right side `g_S` and zero
/// boundary values.
#[derive(Debug, Clone)]
pub struct PoissonSolution {
    pub h: GridField,
    pub strip: Vec<f64>,
    /// Inward normal derivative at each theta node of the lower slice.
    pub normal_lower: Vec<f64>,
    pub normal_upper: Vec<f64>,
    pub interior_max: f64,
    pub residual: f64,
}

impl PoissonSolution {
    /// `h < 0` inside and both inward normal derivatives `< 0`.
    pub fn signs_hold(&self) -> bool {
        self.interior_max < 0.0
            && self.normal_lower.iter().all(|&d| d < 0.0)
            && self.normal_upper.iter().all(|&d| d < 0.0)
    }
}

pub fn solve_poisson_strip(data: &StripData) -> Result<PoissonSolution> {
    let grid = data.grid.clone();
    let (sa, ta) = (grid.s_axis(), grid.theta_axis());
    let nt = grid.dims()[ta];
    let last = grid.dims()[sa] - 1;
    let zeros = vec![0.0; nt];
    let strip = solve_strip(data, &data.profile, &zeros, &zeros)?;
    let a = strip_matrix(data);
    let residual = a
        .mul(&strip)
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let sc = k / nt;
            if sc == 0 || sc == last {
                v.abs()
            } else {
                (v - data.profile[k]).abs()
            }
        })
        .fold(0.0, f64::max);
    let normal = |sc: usize, sign: f64| -> Vec<f64> {
        (0..nt)
            .map(|t| sign * grid.first_stencil(sa, sc).iter().map(|(c, w)| w * strip[c * nt + t]).sum::<f64>())
            .collect()
    };
    let normal_lower = normal(0, 1.0);
    let normal_upper = normal(last, -1.0);
    let interior_max = (nt..last * nt).map(|k| strip[k]).fold(f64::NEG_INFINITY, f64::max);
    let h = GridField::pull_back_strip(grid, &strip)?;
    Ok(PoissonSolution {
        h,
        strip,
        normal_lower,
        normal_upper,
        interior_max,
        residual,
    })
}

/// Extension of strip boundary data solving the homogeneous strip equation.
pub fn harmonic_extension(data: &StripData, lower: &[f64], upper: &[f64]) -> Result<GridField> {
    let strip = solve_strip(data, &vec![0.0; data.grid.strip_len()], lower, upper)?;
    GridField::pull_back_strip(data.grid.clone(), &strip)
}

/// `w + N h`.
pub fn build_subsolution(w: &GridField, h: &PoissonSolution, n_scale: f64) -> Result<GridField> {
    if !(n_scale >= 0.0) {
        return Err(Error::Validation(format!("N must be non-negative, got {n_scale}")));
    }
    Ok(w.axpy(n_scale, &h.h))
}

/// `v + A h` for the `(n-1)`-plurisubharmonic equation on a balanced product.
pub fn build_subsolution_balanced(v_under: &GridField, h: &PoissonSolution, a_scale: f64) -> Result<GridField> {
    build_subsolution(v_under, h, a_scale)
}

/// Node on the lower (`side = Lower`) or upper slice above `node`.
pub fn slice_node(grid: &ProductGrid, node: usize, side: Side) -> usize {
    let sa = grid.s_axis();
    let base = node - grid.coord(node, sa) * grid.stride(sa);
    match side {
        Side::Lower => base,
        Side::Upper => base + (grid.dims()[sa] - 1) * grid.stride(sa),
    }
}

/// The blend `(1 - sigma) phi(lower) + sigma phi(upper)` of boundary data.
pub fn boundary_blend(phi: &GridField) -> GridField {
    let grid = &phi.grid;
    let values = (0..grid.len())
        .map(|i| {
            let s = grid.sigma(i);
            (1.0 - s) * phi.values[slice_node(grid, i, Side::Lower)] + s * phi.values[slice_node(grid, i, Side::Upper)]
        })
        .collect();
    GridField {
        grid: grid.clone(),
        values,
    }
}

/// Solves the linear problem `tr_omega M[w] = 0` with `w = phi` on the boundary.
pub fn supersolution(op: &NodeOperator, phi: &GridField) -> Result<GridField> {
    let grid = op.grid().clone();
    let n = grid.n;
    let zero = NodeJet::zero(n);
    let mut rhs = vec![0.0; grid.len()];
    let rows = (0..grid.len())
        .map(|node| {
            if grid.is_boundary(node) {
                rhs[node] = phi.values[node];
                return vec![(node, 1.0)];
            }
            rhs[node] = -(&op.metric.g_inv[node] * op.matrix(node, &zero)).trace().re;
            op.trace_dual(node).row(&grid, node)
        })
        .collect();
    let a = CsrMatrix::from_rows(rows);
    let w = sparse::solve(&a, &rhs)?;
    GridField::new(grid, w)
}

/// Default admissibility margin `0.1 (1 + |psi|_inf)`.
pub fn default_margin(psi: &GridField) -> f64 {
    0.1 * (1.0 + psi.sup_norm())
}

/// Outcome of the `N` ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NChoice {
    pub n_scale: f64,
    pub rung: u32,
    /// `min (lim_t f(lambda(M[w] + t D)) - psi)` over certified nodes.
    pub limit_slack: f64,
    /// Interior nodes where the direction was not semidefinite (no closed form).
    pub uncertified: usize,
    /// `min (f(lambda(M[w + N h])) - psi)` over interior nodes, re-evaluated.
    pub min_slack: f64,
}

/// Largest ladder exponent: `N <= 2^30`.
pub const N_LADDER_CAP: u32 = 30;

/// Limit of `f(lambda(Mt + t Dt))` as `t -> inf` for reduced matrices with
/// `Dt >= 0`; `None` if `Dt` has a negative direction.
fn direction_limit(f: &Spectral, mt: &DMatrix<Complex64>, dt: &DMatrix<Complex64>) -> Option<f64> {
    let (d_eig, d_vec) = eigh_sorted(dt);
    let scale = d_eig.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let tol = 1e-10 * (1.0 + scale);
    if d_eig[0] < -tol {
        return None;
    }
    let kernel: Vec<usize> = (0..d_eig.len()).filter(|&i| d_eig[i] <= tol).collect();
    let r = d_eig.len() - kernel.len();
    let fixed = if kernel.is_empty() {
        vec![]
    } else {
        let k = DMatrix::from_fn(dt.nrows(), kernel.len(), |i, j| d_vec[(i, kernel[j])]);
        eigh_sorted(&(k.adjoint() * mt * &k)).0
    };
    Some(f.limit_with_infinite(&fixed, r).as_f64())
}

/// Smallest `N = 2^k` with `f(lambda(M[w + N h])) >= psi + margin` at every
/// interior node; certified first through the closed-form limit along the
/// direction `M[h] - M[0]`.
pub fn choose_n(
    op: &NodeOperator,
    f: &Spectral,
    w: &GridField,
    h: &GridField,
    psi: &GridField,
    margin: f64,
) -> Result<NChoice> {
    let grid = op.grid().clone();
    let n = grid.n;
    let interior = grid.interior_nodes();
    let mut base = Vec::with_capacity(interior.len());
    let mut dirs = Vec::with_capacity(interior.len());
    let mut limit_slack = f64::INFINITY;
    let mut uncertified = 0;
    for &node in &interior {
        let m0 = op.matrix(node, &NodeJet::zero(n));
        let mw = op.matrix(node, &op.jet(w, node));
        let d = op.matrix(node, &op.jet(h, node)) - &m0;
        let l_inv = &op.metric.l_inv[node];
        let (mt, dt) = (reduce_by_metric(&mw, l_inv), reduce_by_metric(&d, l_inv));
        match direction_limit(f, &mt, &dt) {
            Some(lim) => {
                if !(lim > psi.values[node]) {
                    return Err(Error::Infeasible(format!(
                        "at node {node} the limit along the strip direction is {lim} <= psi = {}",
                        psi.values[node]
                    )));
                }
                limit_slack = limit_slack.min(lim - psi.values[node]);
            }
            None => uncertified += 1,
        }
        base.push(mt);
        dirs.push(dt);
    }
    let slack_at = |scale: f64| -> (f64, Option<usize>) {
        let mut worst = f64::INFINITY;
        let mut worst_node = None;
        for (k, &node) in interior.iter().enumerate() {
            let m = &base[k] + &dirs[k] * Complex64::new(scale, 0.0);
            let (lambda, _) = eigh_sorted(&m);
            let v = match f.value(&lambda) {
                Ok(v) if f.membership(&lambda).inside => v - psi.values[node],
                _ => f64::NEG_INFINITY,
            };
            if v < worst {
                worst = v;
                worst_node = Some(node);
            }
        }
        (worst, worst_node)
    };
    let mut last_node = None;
    for rung in 0..=N_LADDER_CAP {
        let scale = 2f64.powi(rung as i32);
        let (worst, node) = slack_at(scale);
        last_node = node;
        if worst >= margin {
            let ubar = w.axpy(scale, h);
            let mut min_slack = f64::INFINITY;
            for &node in &interior {
                let m = op.matrix(node, &op.jet(&ubar, node));
                let spec = op.spectrum(node, &m, f);
                let v = if spec.membership.inside {
                    f.value(&spec.lambda).unwrap_or(f64::NEG_INFINITY)
                } else {
                    f64::NEG_INFINITY
                };
                min_slack = min_slack.min(v - psi.values[node]);
            }
            if min_slack < 0.5 * margin {
                return Err(Error::Infeasible(format!(
                    "re-evaluated subsolution slack {min_slack} below margin/2 at N = {scale}"
                )));
            }
            return Ok(NChoice {
                n_scale: scale,
                rung,
                limit_slack,
                uncertified,
                min_slack,
            });
        }
    }
    Err(Error::Infeasible(format!(
        "no N <= 2^{N_LADDER_CAP} reaches psi + {margin}; worst node {last_node:?}"
    )))
}

/// A constructed subsolution with its ingredients.
#[derive(Debug, Clone)]
pub struct Subsolution {
    pub w: GridField,
    pub poisson: PoissonSolution,
    pub choice: NChoice,
    pub ubar: GridField,
}

/// `w` = boundary blend of `phi`, `h` = strip Poisson solution, `N` from the ladder.
pub fn construct(
    op: &NodeOperator,
    f: &Spectral,
    strip: &StripData,
    phi: &GridField,
    psi: &GridField,
    margin: f64,
) -> Result<Subsolution> {
    let w = boundary_blend(phi);
    let poisson = solve_poisson_strip(strip)?;
    let choice = choose_n(op, f, &w, &poisson.h, psi, margin)?;
    let ubar = build_subsolution(&w, &poisson, choice.n_scale)?;
    Ok(Subsolution {
        w,
        poisson,
        choice,
        ubar,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone::{ConeFunction, Family};
    use crate::equation::{GauduchonForm, Structure};
    use crate::grid::{HermitianField, MetricField};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize, res: usize, theta: usize) -> Arc<ProductGrid> {
        let mut r = vec![1; 2 * n];
        r[0] = 8;
        r[2 * n - 2] = res;
        r[2 * n - 1] = theta;
        Arc::new(ProductGrid::unit(n, r).unwrap())
    }

    fn standard(grid: &Arc<ProductGrid>, c: f64, eta: OneForm) -> NodeOperator {
        NodeOperator::new(
            MetricField::flat(grid.clone()),
            Structure::Standard {
                chi_tilde: HermitianField::scaled_identity(grid.clone(), c),
                eta,
            },
        )
        .unwrap()
    }

    #[test]
    fn flat_poisson_oracle() {
        let g = grid(2, 16, 8);
        let p = solve_poisson_strip(&StripData::flat(g.clone())).unwrap();
        for node in 0..g.len() {
            let s = g.sigma(node);
            assert!((p.h.values[node] - 2.0 * s * (s - 1.0)).abs() < 1e-12);
        }
        let mid = g.index(&[0, 0, 8, 0]);
        assert!((p.h.values[mid] + 0.5).abs() < 1e-12);
        assert!(p.signs_hold());
        assert!(p.normal_lower.iter().all(|d| (d + 2.0).abs() < 1e-10));
        assert!(p.residual < 1e-10);
        assert!(p.h.sup_norm() > 0.0);
    }

    #[test]
    fn drift_oracle_second_order() {
        // 1/4 h'' + c h' = 1, h(0) = h(1) = 0
        let c = 0.8;
        let exact = |s: f64| s / c - (1.0 - (-4.0 * c * s).exp()) / (c * (1.0 - (-4.0 * c).exp()));
        let errs: Vec<f64> = [16, 32, 64]
            .iter()
            .map(|&r| {
                let g = grid(2, r, 1);
                let data = StripData::new(g.clone(), |_, _| Complex64::new(c, 0.0), |_| 1.0).unwrap();
                let p = solve_poisson_strip(&data).unwrap();
                (0..g.len()).map(|i| (p.h.values[i] - exact(g.sigma(i))).abs()).fold(0.0, f64::max)
            })
            .collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((ratio - 4.0).abs() < 0.8, "{errs:?}");
        }
    }

    #[test]
    fn harmonic_extension_examples() {
        let g = grid(2, 12, 8);
        let data = StripData::flat(g.clone());
        let c = harmonic_extension(&data, &[1.5; 8], &[1.5; 8]).unwrap();
        assert!(c.values.iter().all(|v| (v - 1.5).abs() < 1e-13));
        let lin = harmonic_extension(&data, &[0.0; 8], &[1.0; 8]).unwrap();
        assert!((0..g.len()).all(|i| (lin.values[i] - g.sigma(i)).abs() < 1e-13));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let eta_data = StripData::new(g.clone(), |s, t| Complex64::new(s, t.cos()), |s| 1.0 + s).unwrap();
        let r = |rng: &mut ChaCha8Rng| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (a1, a2, b1, b2) = (r(&mut rng), r(&mut rng), r(&mut rng), r(&mut rng));
        let sum = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p + q).collect::<Vec<f64>>();
        let e1 = harmonic_extension(&eta_data, &a1, &b1).unwrap();
        let e2 = harmonic_extension(&eta_data, &a2, &b2).unwrap();
        let e12 = harmonic_extension(&eta_data, &sum(&a1, &a2), &sum(&b1, &b2)).unwrap();
        assert!(e12.max_abs_diff(&e1.add(&e2)) < 1e-12);
        // discrete maximum principle
        let lo = a1.iter().chain(&b1).fold(f64::INFINITY, |m, v| m.min(*v));
        let hi = a1.iter().chain(&b1).fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        assert!(e1.values.iter().all(|v| *v >= lo - 1e-12 && *v <= hi + 1e-12));
    }

    #[test]
    fn subsolution_shift_identity() {
        let g = grid(2, 10, 8);
        let eta = OneForm::from_strip(g.clone(), |s, t| Complex64::new(0.4 * s, 0.3 * t.sin()));
        let profile = |s: f64| 1.0 + 0.5 * s;
        let data = StripData::from_one_form(&eta, profile).unwrap();
        let op = standard(&g, 2.0, eta);
        let p = solve_poisson_strip(&data).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = GridField::new(g.clone(), (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let nn = 3.5;
        let ubar = build_subsolution(&w, &p, nn).unwrap();
        assert_eq!(build_subsolution(&w, &p, 0.0).unwrap(), w);
        for node in g.interior_nodes() {
            let diff = op.matrix(node, &op.jet(&ubar, node)) - op.matrix(node, &op.jet(&w, node));
            let s = g.position(node)[2];
            for i in 0..2 {
                for j in 0..2 {
                    let expected = if i == 1 && j == 1 { nn * profile(s) } else { 0.0 };
                    assert!((diff[(i, j)] - Complex64::new(expected, 0.0)).norm() < 1e-11, "{diff}");
                }
            }
        }
    }

    #[test]
    fn balanced_shift_identity() {
        let g = grid(3, 10, 8);
        let op = NodeOperator::new(
            MetricField::flat(g.clone()),
            Structure::Gauduchon {
                chi: HermitianField::scaled_identity(g.clone(), 1.0),
                rho: GridField::constant(g.clone(), 0.7),
                form: GauduchonForm::ViaU,
            },
        )
        .unwrap();
        let p = solve_poisson_strip(&StripData::flat(g.clone())).unwrap();
        let v = GridField::from_fn(g.clone(), |x| x[0].sin() * x[4]);
        let ubar = build_subsolution_balanced(&v, &p, 2.0).unwrap();
        assert_eq!(build_subsolution_balanced(&v, &p, 0.0).unwrap(), v);
        for node in g.interior_nodes() {
            let d = op.matrix(node, &op.jet(&ubar, node)) - op.matrix(node, &op.jet(&v, node));
            let expected = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
                Complex64::new(2.0, 0.0),
                Complex64::new(2.0, 0.0),
                Complex64::new(0.0, 0.0),
            ]));
            assert!((d - expected).norm() < 1e-11);
        }
    }

    #[test]
    fn supersolution_examples() {
        let g = grid(2, 16, 1);
        let zero_op = standard(&g, 0.0, OneForm::zeros(g.clone()));
        let w0 = supersolution(&zero_op, &GridField::zeros(g.clone())).unwrap();
        assert!(w0.sup_norm() < 1e-14);
        let c = 1.5;
        let op = standard(&g, c, OneForm::zeros(g.clone()));
        let w = supersolution(&op, &GridField::zeros(g.clone())).unwrap();
        for i in 0..g.len() {
            let s = g.sigma(i);
            assert!((w.values[i] + 2.0 * 2.0 * c * s * (s - 1.0)).abs() < 1e-11);
        }
    }

    #[test]
    fn choose_n_examples() {
        let g = grid(2, 12, 1);
        let op = standard(&g, 1.0, OneForm::zeros(g.clone()));
        let f = Spectral::Cone(ConeFunction::log_ma(2));
        let p = solve_poisson_strip(&StripData::flat(g.clone())).unwrap();
        let w = GridField::zeros(g.clone());
        let psi = GridField::zeros(g.clone());
        let choice = choose_n(&op, &f, &w, &p.h, &psi, 0.1).unwrap();
        // log(1 + N) >= 0.1 first holds at N = 1
        assert_eq!(choice.n_scale, 1.0);
        assert!(choice.limit_slack.is_infinite());
        assert!((choice.min_slack - 2f64.ln()).abs() < 1e-10);
        let low = GridField::constant(g.clone(), -1e6);
        assert_eq!(choose_n(&op, &f, &w, &p.h, &low, 0.1).unwrap().rung, 0);
        let high = GridField::constant(g.clone(), 5.0);
        assert_eq!(choose_n(&op, &f, &w, &p.h, &high, 0.1).unwrap().n_scale, 256.0);
        // sigma_2 / sigma_1 along e_n tends to lambda_1 = 1
        let q = Spectral::Cone(ConeFunction::new(Family::QuotientRoot { k: 2, l: 1 }, 2).unwrap());
        let above = GridField::constant(g.clone(), 1.5);
        assert!(matches!(choose_n(&op, &q, &w, &p.h, &above, 0.1), Err(Error::Infeasible(_))));
        let below = GridField::constant(g.clone(), 0.5);
        assert!(choose_n(&op, &q, &w, &p.h, &below, 0.1).unwrap().limit_slack > 0.49);
    }

    #[test]
    fn strip_data_rejects_torus_eta() {
        let g = grid(2, 8, 8);
        let mut eta = OneForm::zeros(g.clone());
        eta.data[3][0] = Complex64::new(1.0, 0.0);
        assert!(StripData::from_one_form(&eta, |_| 1.0).is_err());
        assert!(StripData::new(g, |_, _| Complex64::new(0.0, 0.0), |_| -1.0).is_err());
    }
}
