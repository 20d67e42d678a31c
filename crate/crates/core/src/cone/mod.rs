//! Symmetric concave functions of eigenvalues and their cones.
//!
//! Every built-in family is elliptic (all partials positive) and concave on
//! its cone, and grows without bound along rays (`f(t lambda) -> sup f`).

mod probe;
mod qtransform;

pub use probe::{cone_probe, random_cone_point, InvariantOutcome, ProbeLedger};
pub use qtransform::{q_inverse, q_transform, star_power_eigs, QPullback, QTransform};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Elementary symmetric polynomials `sigma_0 ..= sigma_n` of `lambda`, by the
/// incremental product recurrence `e_j <- e_j + x e_{j-1}`.
pub fn elementary_symmetric(lambda: &[f64]) -> Vec<f64> {
    let n = lambda.len();
    let mut e = vec![0.0; n + 1];
    e[0] = 1.0;
    for (count, &x) in lambda.iter().enumerate() {
        for j in (1..=count + 1).rev() {
            e[j] += x * e[j - 1];
        }
    }
    e
}

/// `sigma_k(lambda)` for `1 <= k <= n`.
pub fn sigma_k(lambda: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k > lambda.len() {
        return Err(Error::Validation(format!(
            "sigma_k needs 1 <= k <= n, got k = {k}, n = {}",
            lambda.len()
        )));
    }
    Ok(elementary_symmetric(lambda)[k])
}

/// `sigma_j` of `lambda` with entry `i` deleted, for all `j`; index `j < 0`
/// is treated as zero by callers.
fn deleted_symmetric(lambda: &[f64], i: usize) -> Vec<f64> {
    let rest: Vec<f64> = lambda
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &x)| x)
        .collect();
    elementary_symmetric(&rest)
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

/// The cones the built-in families live on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cone {
    /// Garding cone `{sigma_j > 0, j <= k}`.
    Garding(usize),
    /// `{every deleted sum lambda_1 + .. ^lambda_i .. + lambda_n > 0}`.
    DeletedSums,
}

impl std::fmt::Display for Cone {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Cone::Garding(k) => write!(f, "Gamma_{k}"),
            Cone::DeletedSums => write!(f, "P_(n-1)"),
        }
    }
}

/// Cone membership with the smallest slack of the defining inequalities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub inside: bool,
    /// Smallest raw slack: `min_j sigma_j` or the smallest deleted sum.
    pub margin: f64,
    /// Slack normalized to homogeneity one, equal to `c` at `c * (1, .., 1)`.
    pub scaled_margin: f64,
    /// First violated inequality, if any.
    pub violated: Option<String>,
}

pub fn in_cone(lambda: &[f64], cone: Cone) -> Membership {
    in_cone_with_margin(lambda, cone, 0.0)
}

/// Strict membership with all raw slacks above `margin`.
pub fn in_cone_with_margin(lambda: &[f64], cone: Cone, margin: f64) -> Membership {
    let n = lambda.len();
    let mut raw = f64::INFINITY;
    let mut scaled = f64::INFINITY;
    let mut violated = None;
    match cone {
        Cone::Garding(k) => {
            let e = elementary_symmetric(lambda);
            for j in 1..=k.min(n) {
                raw = raw.min(e[j]);
                let s = e[j] / binomial(n, j);
                scaled = scaled.min(s.signum() * s.abs().powf(1.0 / j as f64));
                if e[j] <= margin && violated.is_none() {
                    violated = Some(format!("sigma_{j} = {:e} <= {margin:e}", e[j]));
                }
            }
        }
        Cone::DeletedSums => {
            let total: f64 = lambda.iter().sum();
            for (i, &x) in lambda.iter().enumerate() {
                let mu = total - x;
                raw = raw.min(mu);
                scaled = scaled.min(mu / (n as f64 - 1.0).max(1.0));
                if mu <= margin && violated.is_none() {
                    violated = Some(format!("deleted sum {i} = {mu:e} <= {margin:e}"));
                }
            }
        }
    }
    Membership {
        inside: violated.is_none(),
        margin: raw,
        scaled_margin: scaled,
        violated,
    }
}

/// Built-in symmetric function families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Family {
    /// `sum log lambda_i` on `Gamma_n`.
    LogMa,
    /// `sigma_k^(1/k)` on `Gamma_k`.
    SigmaKRoot { k: usize },
    /// `log sigma_k` on `Gamma_k`.
    LogSigmaK { k: usize },
    /// `(sigma_k / sigma_l)^(1/(k-l))` on `Gamma_k`, `0 <= l < k`.
    QuotientRoot { k: usize, l: usize },
    /// `sum log(deleted sums)` on `P_(n-1)`.
    LogP,
}

impl Family {
    /// Parses the kebab-case family name used by the CLI and configs.
    pub fn parse(name: &str, k: Option<usize>, l: Option<usize>) -> Result<Self> {
        let need_k = || k.ok_or_else(|| Error::Validation(format!("family {name} needs k")));
        match name {
            "log-ma" => Ok(Family::LogMa),
            "log-p" => Ok(Family::LogP),
            "sigma-k-root" => Ok(Family::SigmaKRoot { k: need_k()? }),
            "log-sigma-k" => Ok(Family::LogSigmaK { k: need_k()? }),
            "quotient-root" => Ok(Family::QuotientRoot {
                k: need_k()?,
                l: l.ok_or_else(|| Error::Validation("quotient-root needs l".into()))?,
            }),
            other => Err(Error::Validation(format!("unknown family '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::LogMa => "log-ma",
            Family::SigmaKRoot { .. } => "sigma-k-root",
            Family::LogSigmaK { .. } => "log-sigma-k",
            Family::QuotientRoot { .. } => "quotient-root",
            Family::LogP => "log-p",
        }
    }
}

/// Limit of `f` when some eigenvalues are sent to `+infinity`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Limit {
    PlusInfinity,
    Finite(f64),
    /// The ray never enters the cone.
    Outside,
}

impl Limit {
    pub fn as_f64(&self) -> f64 {
        match self {
            Limit::PlusInfinity => f64::INFINITY,
            Limit::Finite(v) => *v,
            Limit::Outside => f64::NEG_INFINITY,
        }
    }
}

/// Common interface of spectral functions the solver evaluates.
pub trait SpectralFunction: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, lambda: &[f64]) -> Result<f64>;
    fn gradient(&self, lambda: &[f64]) -> Result<Vec<f64>>;
    fn membership(&self, lambda: &[f64]) -> Membership;
    /// Limit of the value when `r` eigenvalues go to `+infinity` and the
    /// remaining ones equal `fixed`.
    fn limit_with_infinite(&self, fixed: &[f64], r: usize) -> Limit;
}

/// A family together with its dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConeFunction {
    pub family: Family,
    pub n: usize,
}

impl ConeFunction {
    pub fn new(family: Family, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Validation("dimension must be positive".into()));
        }
        match family {
            Family::SigmaKRoot { k } | Family::LogSigmaK { k } if k == 0 || k > n => Err(
                Error::Validation(format!("order k = {k} out of range 1..={n}")),
            ),
            Family::QuotientRoot { k, l } if k == 0 || k > n || l >= k => Err(Error::Validation(
                format!("quotient orders need 0 <= l < k <= n, got k = {k}, l = {l}"),
            )),
            Family::LogP if n < 2 => Err(Error::Validation("log-P needs n >= 2".into())),
            _ => Ok(Self { family, n }),
        }
    }

    pub fn log_ma(n: usize) -> Self {
        Self { family: Family::LogMa, n }
    }

    pub fn log_p(n: usize) -> Self {
        Self { family: Family::LogP, n }
    }

    pub fn cone(&self) -> Cone {
        match self.family {
            Family::LogMa => Cone::Garding(self.n),
            Family::SigmaKRoot { k } | Family::LogSigmaK { k } | Family::QuotientRoot { k, .. } => {
                Cone::Garding(k)
            }
            Family::LogP => Cone::DeletedSums,
        }
    }

    /// `sup` of `f` over the boundary of its cone.
    pub fn sup_boundary(&self) -> f64 {
        match self.family {
            Family::LogMa | Family::LogSigmaK { .. } | Family::LogP => f64::NEG_INFINITY,
            Family::SigmaKRoot { .. } | Family::QuotientRoot { .. } => 0.0,
        }
    }

    /// `sup` of `f` over its cone; every built-in family is unbounded along rays.
    pub fn sup_cone(&self) -> f64 {
        f64::INFINITY
    }

    /// Nondegeneracy constant `inf psi - sup_(boundary) f`.
    pub fn nondegeneracy(&self, inf_psi: f64) -> f64 {
        inf_psi - self.sup_boundary()
    }

    fn check_dim(&self, lambda: &[f64]) -> Result<()> {
        if lambda.len() != self.n {
            return Err(Error::Validation(format!(
                "expected {} eigenvalues, got {}",
                self.n,
                lambda.len()
            )));
        }
        Ok(())
    }

    fn check_domain(&self, lambda: &[f64]) -> Result<()> {
        self.check_dim(lambda)?;
        let m = in_cone(lambda, self.cone());
        match m.violated {
            None => Ok(()),
            Some(v) => Err(Error::Domain {
                cone: self.cone().to_string(),
                violated: v,
            }),
        }
    }

    pub fn eval(&self, lambda: &[f64]) -> Result<f64> {
        self.check_domain(lambda)?;
        Ok(match self.family {
            Family::LogMa => lambda.iter().map(|x| x.ln()).sum(),
            Family::SigmaKRoot { k } => elementary_symmetric(lambda)[k].powf(1.0 / k as f64),
            Family::LogSigmaK { k } => elementary_symmetric(lambda)[k].ln(),
            Family::QuotientRoot { k, l } => {
                let e = elementary_symmetric(lambda);
                (e[k] / e[l]).powf(1.0 / (k - l) as f64)
            }
            Family::LogP => {
                let total: f64 = lambda.iter().sum();
                lambda.iter().map(|x| (total - x).ln()).sum()
            }
        })
    }

    pub fn grad(&self, lambda: &[f64]) -> Result<Vec<f64>> {
        self.check_domain(lambda)?;
        let n = self.n;
        Ok(match self.family {
            Family::LogMa => lambda.iter().map(|x| 1.0 / x).collect(),
            Family::SigmaKRoot { k } => {
                let sk = elementary_symmetric(lambda)[k];
                let outer = sk.powf(1.0 / k as f64 - 1.0) / k as f64;
                (0..n).map(|i| outer * deleted_symmetric(lambda, i)[k - 1]).collect()
            }
            Family::LogSigmaK { k } => {
                let sk = elementary_symmetric(lambda)[k];
                (0..n).map(|i| deleted_symmetric(lambda, i)[k - 1] / sk).collect()
            }
            Family::QuotientRoot { k, l } => {
                let e = elementary_symmetric(lambda);
                let q = e[k] / e[l];
                let p = 1.0 / (k - l) as f64;
                let outer = p * q.powf(p - 1.0);
                (0..n)
                    .map(|i| {
                        let del = deleted_symmetric(lambda, i);
                        let dl = if l == 0 { 0.0 } else { del[l - 1] };
                        outer * (del[k - 1] * e[l] - e[k] * dl) / (e[l] * e[l])
                    })
                    .collect()
            }
            Family::LogP => {
                let total: f64 = lambda.iter().sum();
                let inv: Vec<f64> = lambda.iter().map(|x| 1.0 / (total - x)).collect();
                let s: f64 = inv.iter().sum();
                inv.iter().map(|v| s - v).collect()
            }
        })
    }

    /// Closed-form limit when `r` entries go to `+infinity`; the other
    /// entries are `fixed`.
    pub fn limit(&self, fixed: &[f64], r: usize) -> Limit {
        assert_eq!(fixed.len() + r, self.n, "limit: dimension mismatch");
        if r == 0 {
            return match self.eval(fixed) {
                Ok(v) => Limit::Finite(v),
                Err(_) => Limit::Outside,
            };
        }
        match self.cone() {
            Cone::Garding(k) => {
                for m in 1..=k {
                    if ray_polynomial(fixed, r, m).leading_sign() <= 0.0 {
                        return Limit::Outside;
                    }
                }
            }
            Cone::DeletedSums => {
                if r == 1 && fixed.iter().sum::<f64>() <= 0.0 {
                    return Limit::Outside;
                }
            }
        }
        match self.family {
            Family::LogMa | Family::LogP | Family::LogSigmaK { .. } | Family::SigmaKRoot { .. } => {
                // Garding membership at infinity forces positive degree of sigma_k
                Limit::PlusInfinity
            }
            Family::QuotientRoot { k, l } => {
                let num = ray_polynomial(fixed, r, k);
                let den = ray_polynomial(fixed, r, l);
                let (dn, cn) = num.leading();
                let (dd, cd) = den.leading();
                if dn > dd {
                    Limit::PlusInfinity
                } else if dn < dd {
                    Limit::Finite(0.0)
                } else {
                    Limit::Finite((cn / cd).powf(1.0 / (k - l) as f64))
                }
            }
        }
    }
}

impl SpectralFunction for ConeFunction {
    fn dim(&self) -> usize {
        self.n
    }
    fn value(&self, lambda: &[f64]) -> Result<f64> {
        self.eval(lambda)
    }
    fn gradient(&self, lambda: &[f64]) -> Result<Vec<f64>> {
        self.grad(lambda)
    }
    fn membership(&self, lambda: &[f64]) -> Membership {
        in_cone(lambda, self.cone())
    }
    fn limit_with_infinite(&self, fixed: &[f64], r: usize) -> Limit {
        self.limit(fixed, r)
    }
}

/// `sigma_m(fixed, R, .., R)` with `r` copies of `R`, as a polynomial in `R`.
struct RayPolynomial {
    coeffs: Vec<f64>,
}

fn ray_polynomial(fixed: &[f64], r: usize, m: usize) -> RayPolynomial {
    let e = elementary_symmetric(fixed);
    let coeffs = (0..=r.min(m))
        .map(|j| {
            let idx = m - j;
            let s = if idx < e.len() { e[idx] } else { 0.0 };
            binomial(r, j) * s
        })
        .collect();
    RayPolynomial { coeffs }
}

impl RayPolynomial {
    fn leading(&self) -> (usize, f64) {
        let scale: f64 = 1.0 + self.coeffs.iter().map(|c| c.abs()).sum::<f64>();
        for (j, &c) in self.coeffs.iter().enumerate().rev() {
            if c.abs() > 1e-13 * scale {
                return (j, c);
            }
        }
        (0, 0.0)
    }

    fn leading_sign(&self) -> f64 {
        let (_, c) = self.leading();
        if c > 0.0 {
            1.0
        } else if c < 0.0 {
            -1.0
        } else {
            0.0
        }
    }
}

/// Margin of the asymptotic subsolution condition in direction `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginReport {
    pub direction: usize,
    pub limit: f64,
    pub margin: f64,
    pub satisfied: bool,
}

/// `lim_(t -> inf) f(lambda + t e_i) - psi`, from the closed-form limit table.
pub fn c_subsolution_margin(f: &ConeFunction, lambda: &[f64], psi: f64, i: usize) -> Result<MarginReport> {
    f.check_domain(lambda)?;
    if i >= f.n {
        return Err(Error::Validation(format!("direction {i} out of range")));
    }
    let fixed: Vec<f64> = lambda
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &x)| x)
        .collect();
    let limit = f.limit(&fixed, 1).as_f64();
    let margin = limit - psi;
    Ok(MarginReport {
        direction: i,
        limit,
        margin,
        satisfied: margin > 0.0,
    })
}

/// Numeric estimate of the same limit along `t = 2^j`; a cross-check only.
pub fn ladder_limit_estimate(f: &ConeFunction, lambda: &[f64], i: usize, rungs: u32) -> Result<f64> {
    let mut last = f.eval(lambda)?;
    for j in 0..rungs {
        let mut x = lambda.to_vec();
        x[i] += 2f64.powi(j as i32);
        last = f.eval(&x)?;
    }
    Ok(last)
}

/// Sampled certificate of unbounded growth along rays: `sum f_i(lambda) mu_i > 0`.
pub fn addistruc_probe(f: &ConeFunction, lambda: &[f64], mu: &[f64]) -> Result<bool> {
    f.check_domain(mu)?;
    let g = f.grad(lambda)?;
    Ok(g.iter().zip(mu).map(|(a, b)| a * b).sum::<f64>() > 0.0)
}

/// `f(lambda) - f(mu) - sum f_i(lambda)(lambda_i - mu_i)`; nonnegative for
/// concave `f` up to rounding.
pub fn concavity_probe(f: &ConeFunction, lambda: &[f64], mu: &[f64]) -> Result<f64> {
    let fl = f.eval(lambda)?;
    let fm = f.eval(mu)?;
    let g = f.grad(lambda)?;
    let lin: f64 = g.iter().zip(lambda.iter().zip(mu)).map(|(gi, (l, m))| gi * (l - m)).sum();
    Ok(fl - fm - lin)
}

/// Result of a geometric ladder search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderMembership {
    pub member: bool,
    /// The ladder reached its cap without entering the cone.
    pub inconclusive: bool,
    pub rung: Option<f64>,
}

/// Membership of `lambda'` in the projection of `cone` onto the first `n-1`
/// coordinates: does `(lambda', R)` enter the cone for some `R` on the ladder
/// `1, 2, 4, .., r_max`?
pub fn gamma_infinity_member(lambda_prime: &[f64], cone: Cone, r_max: f64) -> LadderMembership {
    let mut r = 1.0;
    let mut x = lambda_prime.to_vec();
    x.push(0.0);
    let last = x.len() - 1;
    while r <= r_max {
        x[last] = r;
        if in_cone(&x, cone).inside {
            return LadderMembership {
                member: true,
                inconclusive: false,
                rung: Some(r),
            };
        }
        r *= 2.0;
    }
    LadderMembership {
        member: false,
        inconclusive: true,
        rung: None,
    }
}

/// Scalar analogue: is `(t, .., t, c)` in the cone for some `t` on the ladder?
pub fn gamma_r1_member(c: f64, n: usize, cone: Cone, t_max: f64) -> LadderMembership {
    let mut t = 1.0;
    while t <= t_max {
        let mut x = vec![t; n];
        x[n - 1] = c;
        if in_cone(&x, cone).inside {
            return LadderMembership {
                member: true,
                inconclusive: false,
                rung: Some(t),
            };
        }
        t *= 2.0;
    }
    LadderMembership {
        member: false,
        inconclusive: true,
        rung: None,
    }
}

/// The scalar `c` with `f(c (1, .., 1)) = sigma`, by bisection on the ray.
pub fn c_sigma(f: &ConeFunction, sigma: f64) -> Result<f64> {
    let ray = |c: f64| f.eval(&vec![c; f.n]);
    if !(sigma > f.sup_boundary()) || !sigma.is_finite() {
        return Err(Error::Domain {
            cone: f.cone().to_string(),
            violated: format!("level {sigma} is not attained on the diagonal ray"),
        });
    }
    let mut hi = 1.0;
    while ray(hi)? < sigma {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::Domain {
                cone: f.cone().to_string(),
                violated: format!("level {sigma} exceeds the ray supremum"),
            });
        }
    }
    let mut lo = hi;
    while ray(lo)? > sigma {
        lo *= 0.5;
        if lo < 1e-300 {
            return Err(Error::Domain {
                cone: f.cone().to_string(),
                violated: format!("level {sigma} below the ray infimum"),
            });
        }
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        let v = ray(mid)?;
        if (v - sigma).abs() < 1e-12 * (1.0 + sigma.abs()) || mid == lo || mid == hi {
            return Ok(mid);
        }
        if v < sigma {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_values() {
        assert_eq!(sigma_k(&[1.0, 2.0, 3.0], 2).unwrap(), 11.0);
        assert_eq!(sigma_k(&[1.0, 2.0, 3.0], 3).unwrap(), 6.0);
        let l = [0.3, -1.2, 4.5, 2.0];
        assert!((sigma_k(&l, 1).unwrap() - l.iter().sum::<f64>()).abs() < 1e-15);
        assert!(sigma_k(&l, 0).is_err());
        assert!(sigma_k(&l, 5).is_err());
    }

    #[test]
    fn membership_examples() {
        let m = in_cone(&[-1.0, 2.0, 2.0], Cone::DeletedSums);
        assert!(m.inside);
        assert_eq!(m.margin, 1.0);
        assert!(!in_cone(&[1.0, 1.0, -1.0], Cone::Garding(3)).inside);
        let m = in_cone(&[1.0, 1.0, 1.0], Cone::Garding(3));
        assert!(m.inside);
        assert_eq!(m.margin, 1.0);
        assert!((m.scaled_margin - 1.0).abs() < 1e-15);
        assert!(!in_cone_with_margin(&[1.0, 1.0, 1.0], Cone::Garding(3), 2.0).inside);
    }

    #[test]
    fn eval_and_grad_examples() {
        let f = ConeFunction::log_ma(3);
        assert!((f.eval(&[1.0, 2.0, 3.0]).unwrap() - 6f64.ln()).abs() < 1e-15);
        let g = f.grad(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(g, vec![1.0, 0.5, 1.0 / 3.0]);

        let p = ConeFunction::log_p(3);
        assert!((p.eval(&[1.0, 1.0, 1.0]).unwrap() - 3.0 * 2f64.ln()).abs() < 1e-15);
        let v = p.eval(&[1.0, 2.0, 3.0]).unwrap();
        assert!((v - 60f64.ln()).abs() < 1e-14);
        assert!((v - 4.09434).abs() < 1e-5);

        let err = f.eval(&[1.0, -2.0, 3.0]).unwrap_err();
        assert!(matches!(err, Error::Domain { .. }));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let families = [
            Family::LogMa,
            Family::SigmaKRoot { k: 2 },
            Family::LogSigmaK { k: 3 },
            Family::QuotientRoot { k: 3, l: 1 },
            Family::QuotientRoot { k: 2, l: 0 },
            Family::LogP,
        ];
        let lambda = [0.7, 1.3, 2.2, 0.9];
        for fam in families {
            let f = ConeFunction::new(fam, 4).unwrap();
            let g = f.grad(&lambda).unwrap();
            for i in 0..4 {
                let h = 1e-5;
                let mut p = lambda;
                let mut m = lambda;
                p[i] += h;
                m[i] -= h;
                let fd = (f.eval(&p).unwrap() - f.eval(&m).unwrap()) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1e-3), "{fam:?} {i}");
                assert!(g[i] > 0.0);
            }
        }
    }

    #[test]
    fn subsolution_margins() {
        let f = ConeFunction::log_ma(3);
        let r = c_subsolution_margin(&f, &[0.5, 2.0, 1.0], 100.0, 1).unwrap();
        assert_eq!(r.limit, f64::INFINITY);
        assert!(r.satisfied);

        // lambda_1 lambda_2 / (lambda_1 + lambda_2) -> lambda_2 as lambda_1 -> inf
        let q = ConeFunction::new(Family::QuotientRoot { k: 2, l: 1 }, 2).unwrap();
        let r = c_subsolution_margin(&q, &[1.0, 1.0], 0.5, 0).unwrap();
        assert!((r.limit - 1.0).abs() < 1e-15);
        assert!((r.margin - 0.5).abs() < 1e-15);
        let est = ladder_limit_estimate(&q, &[1.0, 1.0], 0, 40).unwrap();
        assert!((est - 1.0).abs() < 1e-9);
        assert!(!c_subsolution_margin(&q, &[1.0, 1.0], 1.5, 0).unwrap().satisfied);

        let p = ConeFunction::log_p(3);
        let r = c_subsolution_margin(&p, &[1.0, 1.0, 1.0], 0.0, 0).unwrap();
        assert_eq!(r.limit, f64::INFINITY);

        assert!(c_subsolution_margin(&f, &[-1.0, 1.0, 1.0], 0.0, 0).is_err());
    }

    #[test]
    fn quotient_limit_three_dims() {
        // (sigma_3 / sigma_1)^(1/2) along e_3 -> (sigma_2(l') / sigma_0)^(1/2)
        let q = ConeFunction::new(Family::QuotientRoot { k: 3, l: 1 }, 3).unwrap();
        let lam = [1.5, 0.5, 2.0];
        let r = c_subsolution_margin(&q, &lam, 0.0, 2).unwrap();
        // both numerator and denominator are linear in R: sigma_2(l') / sigma_0(l') = 0.75
        assert!((r.limit - 0.75f64.sqrt()).abs() < 1e-14);
        let est = ladder_limit_estimate(&q, &lam, 2, 45).unwrap();
        assert!((est - r.limit).abs() < 1e-6);
    }

    #[test]
    fn addistruc_and_concavity() {
        let f = ConeFunction::log_ma(3);
        assert!(addistruc_probe(&f, &[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap());
        let p = ConeFunction::log_p(3);
        assert!(addistruc_probe(&p, &[-1.0, 2.0, 2.0], &[1.0, 1.0, 1.0]).unwrap());

        assert!(concavity_probe(&f, &[1.0, 2.0], &[1.0, 2.0]).is_err());
        let f2 = ConeFunction::log_ma(2);
        assert_eq!(concavity_probe(&f2, &[1.5, 2.0], &[1.5, 2.0]).unwrap(), 0.0);
        // f(1,1) - f(2,2) - (1,1).(-1,-1) = 2 - 2 log 2 > 0
        let s = concavity_probe(&f2, &[1.0, 1.0], &[2.0, 2.0]).unwrap();
        assert!((s - (2.0 - 2.0 * 2f64.ln())).abs() < 1e-15);
        assert!(s > 0.0);

        let lin = ConeFunction::new(Family::SigmaKRoot { k: 1 }, 3).unwrap();
        let s = concavity_probe(&lin, &[1.0, -0.5, 2.0], &[0.1, 3.0, -1.0]).unwrap();
        assert!(s.abs() < 1e-14);
    }

    #[test]
    fn projection_membership() {
        // Gamma_1 has the full projection R^(n-1)
        for lp in [[-1.0, -1.0], [-100.0, 3.0], [0.0, 0.0]] {
            assert!(gamma_infinity_member(&lp, Cone::Garding(1), 1e6).member);
        }
        // Gamma_2 in R^3 projects onto {sigma_1 > 0}
        assert!(!gamma_infinity_member(&[-1.0, -1.0], Cone::Garding(2), 1e6).member);
        assert!(gamma_infinity_member(&[1.0, -0.5], Cone::Garding(2), 1e6).member);
        let m = gamma_infinity_member(&[-1.0, 1.0], Cone::Garding(3), 1e6);
        assert!(!m.member && m.inconclusive);
        let m = gamma_infinity_member(&[1.0, 1.0], Cone::Garding(3), 1e6);
        assert_eq!(m.rung, Some(1.0));

        assert!(gamma_r1_member(-50.0, 3, Cone::Garding(1), 1e6).member);
        assert!(!gamma_r1_member(-1.0, 3, Cone::Garding(3), 1e6).member);
        assert!(gamma_r1_member(-1.0, 3, Cone::DeletedSums, 1e6).member);
    }

    #[test]
    fn c_sigma_examples() {
        let f = ConeFunction::log_ma(3);
        assert!((c_sigma(&f, 0.0).unwrap() - 1.0).abs() < 1e-10);
        assert!((c_sigma(&f, 3.0 * 2f64.ln()).unwrap() - 2.0).abs() < 1e-10);
        let p = ConeFunction::log_p(3);
        let c = c_sigma(&p, 3.0 * 4f64.ln()).unwrap();
        assert!((c - 2.0).abs() < 1e-10);
        assert!((p.eval(&[c; 3]).unwrap() - 3.0 * 4f64.ln()).abs() < 1e-10);

        let root = ConeFunction::new(Family::SigmaKRoot { k: 2 }, 3).unwrap();
        assert!(c_sigma(&root, -1.0).is_err());
        assert!(c_sigma(&root, 0.0).is_err());
    }

    #[test]
    fn family_validation() {
        assert!(ConeFunction::new(Family::SigmaKRoot { k: 4 }, 3).is_err());
        assert!(ConeFunction::new(Family::QuotientRoot { k: 2, l: 2 }, 3).is_err());
        assert!(ConeFunction::new(Family::LogP, 1).is_err());
        assert_eq!(Family::parse("log-p", None, None).unwrap(), Family::LogP);
        assert!(Family::parse("sigma-k-root", None, None).is_err());
        assert!(Family::parse("lagrangian", None, None).is_err());
    }

    #[test]
    fn nondegeneracy_constant() {
        let root = ConeFunction::new(Family::SigmaKRoot { k: 2 }, 2).unwrap();
        assert_eq!(root.nondegeneracy(0.0), 0.0);
        assert_eq!(root.nondegeneracy(0.5), 0.5);
        assert_eq!(ConeFunction::log_ma(2).nondegeneracy(-3.0), f64::INFINITY);
    }
}
