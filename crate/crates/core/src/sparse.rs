//! Sparse real matrices and the two linear solvers used by the PDE layer:
//! banded LU with partial pivoting, and ILU(0)-preconditioned restarted GMRES.

use crate::error::{Error, Result};

/// Compressed sparse row matrix with sorted, de-duplicated columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(column, value)` lists; duplicates are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let start = cols.len();
            for (c, v) in row {
                if cols.len() > start && *cols.last().unwrap() == c {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self { n, row_ptr, cols, vals }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |p| (self.cols[p], self.vals[p]))
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut acc = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[p] * x[self.cols[p]];
            }
            y[i] = acc;
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    /// `(lower, upper)` bandwidths.
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut kl = 0;
        let mut ku = 0;
        for i in 0..self.n {
            for (j, _) in self.row(i) {
                if j < i {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        (kl, ku)
    }
}

/// LU factors of a banded matrix with row pivoting.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    width: usize,
    /// Row `i` holds columns `i - kl .. i - kl + width`.
    rows: Vec<f64>,
    piv: Vec<usize>,
}

impl BandedLu {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.n;
        let (kl, ku) = a.bandwidths();
        let width = 2 * kl + ku + 1;
        let mut rows = vec![0.0; n * width];
        for i in 0..n {
            for (j, v) in a.row(i) {
                rows[i * width + (j + kl - i)] = v;
            }
        }
        let at = |i: usize, j: usize| i * width + (j + kl - i);
        let mut piv = vec![0; n];
        let mut scratch = vec![0.0; width];
        let scale = a.vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = rows[at(k, k)].abs();
            for i in k + 1..=last_row {
                let v = rows[at(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > 1e-300 && best > 1e-15 * scale * f64::EPSILON) {
                return Err(Error::LinearSolve(format!("zero pivot in column {k}")));
            }
            piv[k] = p;
            let hi = (k + kl + (width - 2 * kl - 1)).min(n - 1);
            if p != k {
                // columns k..=hi fit in both rows' frames
                for j in k..=hi {
                    scratch[j - k] = rows[at(k, j)];
                }
                for j in k..=hi {
                    rows[at(k, j)] = rows[at(p, j)];
                }
                for j in k..=hi {
                    rows[at(p, j)] = scratch[j - k];
                }
            }
            let pivot = rows[at(k, k)];
            for i in k + 1..=last_row {
                let m = rows[at(i, k)] / pivot;
                if m == 0.0 {
                    continue;
                }
                rows[at(i, k)] = m;
                let (ri, rk) = (i * width, k * width);
                let off_i = kl + k - i;
                let off_k = kl;
                for j in 1..=(hi - k) {
                    rows[ri + off_i + j] -= m * rows[rk + off_k + j];
                }
            }
        }
        Ok(Self { n, kl, width, rows, piv })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, kl, width) = (self.n, self.kl, self.width);
        let at = |i: usize, j: usize| i * width + (j + kl - i);
        let mut x = b.to_vec();
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            if xk != 0.0 {
                for i in k + 1..=(k + kl).min(n - 1) {
                    x[i] -= self.rows[at(i, k)] * xk;
                }
            }
        }
        let ku_total = width - kl - 1;
        for k in (0..n).rev() {
            let mut acc = x[k];
            for j in k + 1..=(k + ku_total).min(n - 1) {
                acc -= self.rows[at(k, j)] * x[j];
            }
            x[k] = acc / self.rows[at(k, k)];
        }
        x
    }
}

/// Incomplete LU with the sparsity of `A`.
#[derive(Debug, Clone)]
pub struct Ilu0 {
    m: CsrMatrix,
    diag: Vec<usize>,
}

impl Ilu0 {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let mut m = a.clone();
        let n = m.n;
        let mut diag = vec![usize::MAX; n];
        for i in 0..n {
            for p in m.row_ptr[i]..m.row_ptr[i + 1] {
                if m.cols[p] == i {
                    diag[i] = p;
                }
            }
            if diag[i] == usize::MAX {
                return Err(Error::LinearSolve(format!("missing diagonal in row {i}")));
            }
        }
        let mut iw = vec![usize::MAX; n];
        for i in 0..n {
            let (lo, hi) = (m.row_ptr[i], m.row_ptr[i + 1]);
            for p in lo..hi {
                iw[m.cols[p]] = p;
            }
            for p in lo..diag[i] {
                let k = m.cols[p];
                let piv = m.vals[diag[k]];
                if piv == 0.0 {
                    return Err(Error::LinearSolve(format!("zero ILU pivot in row {k}")));
                }
                let lik = m.vals[p] / piv;
                m.vals[p] = lik;
                for q in diag[k] + 1..m.row_ptr[k + 1] {
                    let slot = iw[m.cols[q]];
                    if slot != usize::MAX {
                        m.vals[slot] -= lik * m.vals[q];
                    }
                }
            }
            for p in lo..hi {
                iw[m.cols[p]] = usize::MAX;
            }
            if m.vals[diag[i]] == 0.0 {
                return Err(Error::LinearSolve(format!("zero ILU pivot in row {i}")));
            }
        }
        Ok(Self { m, diag })
    }

    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        let m = &self.m;
        let n = m.n;
        for i in 0..n {
            let mut acc = r[i];
            for p in m.row_ptr[i]..self.diag[i] {
                acc -= m.vals[p] * z[m.cols[p]];
            }
            z[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = z[i];
            for p in self.diag[i] + 1..m.row_ptr[i + 1] {
                acc -= m.vals[p] * z[m.cols[p]];
            }
            z[i] = acc / m.vals[self.diag[i]];
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Right-preconditioned restarted GMRES; stops at `||b - Ax|| <= rtol ||b||`.
pub fn gmres(a: &CsrMatrix, pre: &Ilu0, b: &[f64], rtol: f64, restart: usize, max_iter: usize) -> Result<Vec<f64>> {
    let n = a.n;
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let target = rtol * bnorm;
    let mut total = 0;
    let mut r = b.to_vec();
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    loop {
        a.matvec(&x, &mut w);
        for i in 0..n {
            r[i] = b[i] - w[i];
        }
        let beta = norm(&r);
        if beta <= target {
            return Ok(x);
        }
        if total >= max_iter {
            return Err(Error::LinearSolve(format!(
                "GMRES stalled after {total} iterations, relative residual {:e}",
                beta / bnorm
            )));
        }
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|x| x / beta).collect()];
        let mut h = vec![vec![0.0; restart]; restart + 1];
        let (mut cs, mut sn) = (vec![0.0; restart], vec![0.0; restart]);
        let mut g = vec![0.0; restart + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..restart {
            pre.apply(&v[k], &mut z);
            a.matvec(&z, &mut w);
            for (j, vj) in v.iter().enumerate() {
                let hj = dot(&w, vj);
                h[j][k] = hj;
                for i in 0..n {
                    w[i] -= hj * vj[i];
                }
            }
            let hn = norm(&w);
            h[k + 1][k] = hn;
            for j in 0..k {
                let t = cs[j] * h[j][k] + sn[j] * h[j + 1][k];
                h[j + 1][k] = -sn[j] * h[j][k] + cs[j] * h[j + 1][k];
                h[j][k] = t;
            }
            let d = (h[k][k] * h[k][k] + h[k + 1][k] * h[k + 1][k]).sqrt();
            cs[k] = h[k][k] / d;
            sn[k] = h[k + 1][k] / d;
            h[k][k] = d;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            total += 1;
            if g[k + 1].abs() <= 0.5 * target || hn == 0.0 || total >= max_iter {
                break;
            }
            v.push(w.iter().map(|x| x / hn).collect());
        }
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut acc = g[i];
            for j in i + 1..k_used {
                acc -= h[i][j] * y[j];
            }
            y[i] = acc / h[i][i];
        }
        let mut update = vec![0.0; n];
        for (j, yj) in y.iter().enumerate() {
            for i in 0..n {
                update[i] += yj * v[j][i];
            }
        }
        pre.apply(&update, &mut z);
        for i in 0..n {
            x[i] += z[i];
        }
    }
}

/// Estimated banded-LU work, `n * kl * (kl + ku)`.
pub fn banded_cost(a: &CsrMatrix) -> f64 {
    let (kl, ku) = a.bandwidths();
    a.n as f64 * kl as f64 * (kl + ku) as f64
}

/// Work threshold above which the iterative solver is used.
pub const DIRECT_WORK_LIMIT: f64 = 1.5e9;

/// Solves `A x = b`: banded LU when cheap, otherwise ILU(0) GMRES to a
/// relative residual of `1e-12`.
pub fn solve(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if banded_cost(a) <= DIRECT_WORK_LIMIT {
        Ok(BandedLu::factor(a)?.solve(b))
    } else {
        let pre = Ilu0::factor(a)?;
        gmres(a, &pre, b, 1e-12, 60, 6000)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn laplace_1d(n: usize, shift: f64) -> CsrMatrix {
        let rows = (0..n)
            .map(|i| {
                let mut r = vec![(i, 2.0 + shift)];
                if i > 0 {
                    r.push((i - 1, -1.0));
                }
                if i + 1 < n {
                    r.push((i + 1, -1.0));
                }
                r
            })
            .collect();
        CsrMatrix::from_rows(rows)
    }

    fn residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
        let ax = a.mul(x);
        ax.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn csr_merges_duplicates() {
        let a = CsrMatrix::from_rows(vec![vec![(1, 1.0), (0, 2.0), (1, 3.0)], vec![(1, 1.0)]]);
        assert_eq!(a.cols, vec![0, 1, 1]);
        assert_eq!(a.vals, vec![2.0, 4.0, 1.0]);
        assert_eq!(a.bandwidths(), (0, 1));
    }

    #[test]
    fn banded_lu_needs_pivoting() {
        // zero leading diagonal forces a row swap
        let a = CsrMatrix::from_rows(vec![
            vec![(0, 0.0), (1, 1.0)],
            vec![(0, 1.0), (1, 1.0), (2, 2.0)],
            vec![(1, 3.0), (2, 1.0)],
        ]);
        let b = vec![1.0, 2.0, 3.0];
        let x = BandedLu::factor(&a).unwrap().solve(&b);
        assert!(residual(&a, &x, &b) < 1e-14);
    }

    #[test]
    fn random_banded_nonsymmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 200;
        let rows = (0..n)
            .map(|i| {
                let mut r = vec![(i, rng.random_range(-1.0..1.0))];
                for off in [1usize, 7, 13] {
                    if i >= off {
                        r.push((i - off, rng.random_range(-1.0..1.0)));
                    }
                    if i + off < n {
                        r.push((i + off, rng.random_range(-1.0..1.0)));
                    }
                }
                r
            })
            .collect();
        let a = CsrMatrix::from_rows(rows);
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = BandedLu::factor(&a).unwrap().solve(&b);
        assert!(residual(&a, &x, &b) < 1e-9);
    }

    #[test]
    fn singular_detected() {
        let a = CsrMatrix::from_rows(vec![vec![(0, 1.0), (1, 1.0)], vec![(0, 1.0), (1, 1.0)]]);
        assert!(BandedLu::factor(&a).is_err());
    }

    #[test]
    fn gmres_matches_direct() {
        // 2-d convection-diffusion on a 30 x 30 grid
        let m = 30;
        let idx = |i: usize, j: usize| i * m + j;
        let mut rows = Vec::new();
        for i in 0..m {
            for j in 0..m {
                let mut r = vec![(idx(i, j), 4.2)];
                if i > 0 {
                    r.push((idx(i - 1, j), -1.3));
                }
                if i + 1 < m {
                    r.push((idx(i + 1, j), -0.7));
                }
                if j > 0 {
                    r.push((idx(i, j - 1), -1.0));
                }
                if j + 1 < m {
                    r.push((idx(i, j + 1), -1.0));
                }
                rows.push(r);
            }
        }
        let a = CsrMatrix::from_rows(rows);
        let b: Vec<f64> = (0..m * m).map(|k| ((k * 7) % 11) as f64 - 5.0).collect();
        let direct = BandedLu::factor(&a).unwrap().solve(&b);
        let pre = Ilu0::factor(&a).unwrap();
        let it = gmres(&a, &pre, &b, 1e-12, 30, 1000).unwrap();
        let diff = direct.iter().zip(&it).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-9, "{diff}");
        let x = solve(&laplace_1d(50, 0.01), &vec![1.0; 50]).unwrap();
        assert!(residual(&laplace_1d(50, 0.01), &x, &vec![1.0; 50]) < 1e-10);
    }
}
