//! The deleted-sum map `mu_i = sum_(j != i) lambda_j` and the star power.

use num_rational::Rational64;
use num_traits::{Num, One, Zero};

use super::{in_cone, ConeFunction, Limit, Membership, SpectralFunction};
use crate::error::{Error, Result};

/// `mu = lambda Q` with `Q = J - I`; `mu_i = sum_(j != i) lambda_j`.
pub fn q_transform<T: Num + Copy>(lambda: &[T]) -> Vec<T> {
    let total = lambda.iter().fold(T::zero(), |a, &b| a + b);
    lambda.iter().map(|&x| total - x).collect()
}

/// Inverse map: `lambda_i = (sum mu) / (n - 1) - mu_i`. Needs `n >= 2`.
pub fn q_inverse<T: Num + Copy>(mu: &[T]) -> Result<Vec<T>> {
    let n = mu.len();
    if n < 2 {
        return Err(Error::Validation("the deleted-sum map needs n >= 2".into()));
    }
    let mut nm1 = T::zero();
    for _ in 0..n - 1 {
        nm1 = nm1 + T::one();
    }
    let total = mu.iter().fold(T::zero(), |a, &b| a + b) / nm1;
    Ok(mu.iter().map(|&m| total - m).collect())
}

/// Exact integer `Q` and rational `Q^{-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTransform {
    pub n: usize,
    pub q: Vec<Vec<i64>>,
    pub q_inv: Vec<Vec<Rational64>>,
}

impl QTransform {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Validation("the deleted-sum map needs n >= 2".into()));
        }
        let q = (0..n)
            .map(|i| (0..n).map(|j| i64::from(i != j)).collect())
            .collect();
        let d = Rational64::new(1, n as i64 - 1);
        let q_inv = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| if i == j { d - Rational64::one() } else { d })
                    .collect()
            })
            .collect();
        Ok(Self { n, q, q_inv })
    }

    /// Determinant of `Q` by fraction-free elimination; equals `(-1)^(n-1) (n-1)`.
    pub fn det(&self) -> i128 {
        bareiss_det(&self.q)
    }

    /// `Q Q^{-1}` computed exactly.
    pub fn product_with_inverse(&self) -> Vec<Vec<Rational64>> {
        let n = self.n;
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        (0..n).fold(Rational64::zero(), |acc, k| {
                            acc + Rational64::from_integer(self.q[i][k]) * self.q_inv[k][j]
                        })
                    })
                    .collect()
            })
            .collect()
    }
}

fn bareiss_det(m: &[Vec<i64>]) -> i128 {
    let n = m.len();
    let mut a: Vec<Vec<i128>> = m.iter().map(|r| r.iter().map(|&x| x as i128).collect()).collect();
    let mut sign = 1i128;
    let mut prev = 1i128;
    for k in 0..n {
        if a[k][k] == 0 {
            match (k + 1..n).find(|&r| a[r][k] != 0) {
                Some(r) => {
                    a.swap(k, r);
                    sign = -sign;
                }
                None => return 0,
            }
        }
        for i in k + 1..n {
            for j in k + 1..n {
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) / prev;
            }
        }
        prev = a[k][k];
    }
    sign * a[n - 1][n - 1]
}

/// Eigenvalues of `lambda^{*(n-1)}`: `prod_(j != i) lambda_j`, via prefix and
/// suffix products (no division, so zero entries are fine).
pub fn star_power_eigs(lambda: &[f64]) -> Vec<f64> {
    let n = lambda.len();
    let mut prefix = vec![1.0; n + 1];
    let mut suffix = vec![1.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] * lambda[i];
        suffix[n - 1 - i] = suffix[n - i] * lambda[n - 1 - i];
    }
    (0..n).map(|i| prefix[i] * suffix[i + 1]).collect()
}

/// `f o Q`: a family evaluated on the deleted sums of its argument.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QPullback {
    pub base: ConeFunction,
}

impl QPullback {
    pub fn new(base: ConeFunction) -> Result<Self> {
        if base.n < 2 {
            return Err(Error::Validation("the deleted-sum map needs n >= 2".into()));
        }
        Ok(Self { base })
    }
}

impl SpectralFunction for QPullback {
    fn dim(&self) -> usize {
        self.base.n
    }

    fn value(&self, lambda: &[f64]) -> Result<f64> {
        self.base.eval(&q_transform(lambda))
    }

    fn gradient(&self, lambda: &[f64]) -> Result<Vec<f64>> {
        let g = self.base.grad(&q_transform(lambda))?;
        Ok(q_transform(&g))
    }

    fn membership(&self, lambda: &[f64]) -> Membership {
        in_cone(&q_transform(lambda), self.base.cone())
    }

    fn limit_with_infinite(&self, fixed: &[f64], r: usize) -> Limit {
        // every deleted sum contains at least r - 1 infinite entries; with r = 1
        // only the deleted sum of the infinite slot stays finite
        let n = self.base.n;
        if r == 0 {
            return match self.value(fixed) {
                Ok(v) => Limit::Finite(v),
                Err(_) => Limit::Outside,
            };
        }
        if r >= 2 {
            return self.base.limit(&[], n);
        }
        let total: f64 = fixed.iter().sum();
        self.base.limit(&[total], n - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone::Family;

    #[test]
    fn q_examples() {
        assert_eq!(q_transform(&[1.0, 2.0, 3.0]), vec![5.0, 4.0, 3.0]);
        assert_eq!(q_inverse(&[5.0, 4.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(q_inverse(&[1.0]).is_err());
        let r: Vec<Rational64> = [1, -7, 3, 11].iter().map(|&x| Rational64::new(x, 3)).collect();
        assert_eq!(q_inverse(&q_transform(&r)).unwrap(), r);
    }

    #[test]
    fn determinant_exact() {
        for n in 2..=12 {
            let q = QTransform::new(n).unwrap();
            let expected = if n % 2 == 0 { -(n as i128 - 1) } else { n as i128 - 1 };
            assert_eq!(q.det(), expected, "n = {n}");
            let id = q.product_with_inverse();
            for (i, row) in id.iter().enumerate() {
                for (j, x) in row.iter().enumerate() {
                    assert_eq!(*x, Rational64::from_integer(i64::from(i == j)));
                }
            }
        }
        assert_eq!(bareiss_det(&[vec![0, 1], vec![1, 0]]), -1);
        assert_eq!(bareiss_det(&[vec![1, 2], vec![2, 4]]), 0);
    }

    #[test]
    fn star_power() {
        assert_eq!(star_power_eigs(&[2.0, 3.0, 5.0]), vec![15.0, 10.0, 6.0]);
        assert_eq!(star_power_eigs(&[0.0, 3.0, 5.0]), vec![15.0, 0.0, 0.0]);
    }

    #[test]
    fn pullback_of_log_ma_is_log_p() {
        let lp = ConeFunction::log_p(4);
        let pb = QPullback::new(ConeFunction::log_ma(4)).unwrap();
        let x = [-0.5, 1.0, 2.0, 0.75];
        assert!((lp.eval(&x).unwrap() - pb.value(&x).unwrap()).abs() < 1e-14);
        let (a, b) = (lp.grad(&x).unwrap(), pb.gradient(&x).unwrap());
        for i in 0..4 {
            assert!((a[i] - b[i]).abs() < 1e-14);
        }
        assert!(pb.membership(&x).inside);
        assert_eq!(pb.limit_with_infinite(&x[..3], 1), Limit::PlusInfinity);
        let root = QPullback::new(ConeFunction::new(Family::SigmaKRoot { k: 1 }, 3).unwrap()).unwrap();
        assert_eq!(root.limit_with_infinite(&[1.0, 1.0], 1), Limit::PlusInfinity);
    }
}
