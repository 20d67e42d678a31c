//! Dense Hermitian eigen-computations and the bordered-matrix
//! eigenvalue concentration lemmas.

mod bordered;

pub use bordered::{
    concentration_report, count_stability_scan, growth_threshold_main, growth_threshold_refined,
    lemma_check, random_bordered, BorderedSpec, ConcentrationReport, LemmaCheckReport,
};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Relative tolerance on `max |A_ij - conj(A_ji)|` accepted as Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// A dense n x n complex Hermitian matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix {
    data: DMatrix<Complex64>,
}

impl HermitianMatrix {
    /// Validates Hermiticity and stores the symmetrized matrix `(A + A*)/2`.
    pub fn new(data: DMatrix<Complex64>) -> Result<Self> {
        if data.nrows() != data.ncols() || data.nrows() == 0 {
            return Err(Error::Validation(format!(
                "Hermitian matrix must be square and non-empty, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        let asym = asymmetry(&data);
        let tol = HERMITIAN_TOL * data.norm();
        if asym > tol {
            return Err(Error::NotHermitian {
                asymmetry: asym,
                tolerance: tol,
            });
        }
        Ok(Self {
            data: symmetrize(&data),
        })
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        let data = DMatrix::from_fn(n, n, |i, j| Complex64::new(rows[i][j], 0.0));
        Self::new(data)
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        Self {
            data: DMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    Complex64::new(diag[i], 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            }),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diag(&vec![1.0; n])
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[(i, j)]
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.data.norm()
    }

    pub fn trace(&self) -> f64 {
        (0..self.n()).map(|i| self.data[(i, i)].re).sum()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        eigh_sorted(&self.data).0
    }
}

/// Ascending eigenvalues of a Hermitian matrix.
pub fn eigh(a: &HermitianMatrix) -> Vec<f64> {
    a.eigenvalues()
}

/// Largest entry of `A - A*` in modulus.
pub fn asymmetry(a: &DMatrix<Complex64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn symmetrize(a: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    (a + a.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Eigen-decomposition of a (numerically) Hermitian matrix with eigenvalues
/// sorted ascending and eigenvector columns permuted to match.
pub fn eigh_sorted(a: &DMatrix<Complex64>) -> (Vec<f64>, DMatrix<Complex64>) {
    let eig = SymmetricEigen::new(symmetrize(a));
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Inverse of the Cholesky factor `L` of a positive definite Hermitian
/// matrix `G = L L*`. Returns `None` when `G` is not positive definite.
pub fn cholesky_inverse_factor(g: &DMatrix<Complex64>) -> Option<DMatrix<Complex64>> {
    let chol = g.clone().cholesky()?;
    let l = chol.l();
    // complex square roots do not fail on negative pivots
    if (0..l.nrows()).any(|i| !(l[(i, i)].re > 0.0) || l[(i, i)].im.abs() > 1e-12 * l[(i, i)].re) {
        return None;
    }
    let n = g.nrows();
    l.solve_lower_triangular(&DMatrix::identity(n, n))
}

/// Reduces `H` to `L^{-1} H L^{-*}`, whose eigenvalues are those of `G^{-1} H`.
pub fn reduce_by_metric(h: &DMatrix<Complex64>, l_inv: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    symmetrize(&(l_inv * h * l_inv.adjoint()))
}

/// Eigenvalues of `H` with respect to the positive definite `G`, i.e. the
/// roots of `det(H - lambda G) = 0`, ascending.
pub fn generalized_eigh(h: &HermitianMatrix, g: &HermitianMatrix) -> Result<Vec<f64>> {
    if h.n() != g.n() {
        return Err(Error::Validation("dimension mismatch in generalized eigenproblem".into()));
    }
    let l_inv = cholesky_inverse_factor(g.matrix()).ok_or(Error::MetricNotPositive { node: 0 })?;
    Ok(eigh_sorted(&reduce_by_metric(h.matrix(), &l_inv)).0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn diagonal_sorted() {
        let a = HermitianMatrix::from_diag(&[3.0, 1.0, 2.0]);
        assert_eq!(eigh(&a), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn two_by_two_closed_form() {
        let a = HermitianMatrix::from_real_rows(&[&[1.0, 1.0], &[1.0, 11.0]]).unwrap();
        let l = eigh(&a);
        let r = 26f64.sqrt();
        assert!((l[0] - (6.0 - r)).abs() < 1e-12);
        assert!((l[1] - (6.0 + r)).abs() < 1e-12);
        assert!((l[0] - 0.90098).abs() < 1e-5);
    }

    #[test]
    fn rejects_non_hermitian() {
        let m = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(2.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
        assert!(matches!(HermitianMatrix::new(m), Err(Error::NotHermitian { .. })));
        let m = DMatrix::from_row_slice(2, 3, &[c(1.0, 0.0); 6]);
        assert!(matches!(HermitianMatrix::new(m), Err(Error::Validation(_))));
    }

    #[test]
    fn complex_entries_trace_preserved() {
        let m = DMatrix::from_row_slice(
            3,
            3,
            &[
                c(2.0, 0.0),
                c(1.0, 1.0),
                c(0.0, -0.5),
                c(1.0, -1.0),
                c(-1.0, 0.0),
                c(0.3, 0.0),
                c(0.0, 0.5),
                c(0.3, 0.0),
                c(4.0, 0.0),
            ],
        );
        let a = HermitianMatrix::new(m).unwrap();
        let l = eigh(&a);
        assert!((l.iter().sum::<f64>() - a.trace()).abs() < 1e-10 * a.norm());
        assert!(l.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn generalized_scaled_identity() {
        let g = HermitianMatrix::from_diag(&[2.0, 2.0, 2.0]);
        let h = HermitianMatrix::identity(3);
        let l = generalized_eigh(&h, &g).unwrap();
        assert!(l.iter().all(|&x| (x - 0.5).abs() < 1e-14));
        let bad = HermitianMatrix::from_diag(&[1.0, -1.0, 1.0]);
        assert!(generalized_eigh(&h, &bad).is_err());
    }
}
