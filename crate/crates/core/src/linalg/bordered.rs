use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{eigh_sorted, HermitianMatrix};
use crate::error::{Error, Result};

/// The bordered family: diagonal block `diag(d)`, border column `a`,
/// corner entry `aa`, and tolerance `eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct BorderedSpec {
    pub d: Vec<f64>,
    pub a: Vec<Complex64>,
    pub aa: f64,
    pub eps: f64,
}

impl BorderedSpec {
    pub fn new(d: Vec<f64>, a: Vec<Complex64>, aa: f64, eps: f64) -> Result<Self> {
        let spec = Self { d, a, aa, eps };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d.is_empty() {
            return Err(Error::Validation("bordered matrix needs n >= 2".into()));
        }
        if self.d.len() != self.a.len() {
            return Err(Error::Validation(format!(
                "diagonal block has {} entries but border has {}",
                self.d.len(),
                self.a.len()
            )));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::Validation(format!("eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }

    /// Full dimension `n` (one more than the diagonal block).
    pub fn n(&self) -> usize {
        self.d.len() + 1
    }

    pub fn with_corner(&self, aa: f64) -> Self {
        Self { aa, ..self.clone() }
    }

    pub fn matrix(&self) -> HermitianMatrix {
        bordered(self)
    }
}

/// Assembles the bordered Hermitian matrix.
pub fn bordered(spec: &BorderedSpec) -> HermitianMatrix {
    let n = spec.n();
    let m = n - 1;
    let data = DMatrix::from_fn(n, n, |i, j| {
        if i < m && j < m {
            if i == j {
                Complex64::new(spec.d[i], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        } else if i < m {
            spec.a[i]
        } else if j < m {
            spec.a[j].conj()
        } else {
            Complex64::new(spec.aa, 0.0)
        }
    });
    HermitianMatrix::new(data).expect("bordered assembly is Hermitian by construction")
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::Validation(format!("eps must be positive, got {eps}")))
    }
}

fn border_mass(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum()
}

/// Corner threshold of the main concentration lemma:
/// `(2n-3)/eps * sum|a_i|^2 + (n-1) * sum|d_i| + (n-2) eps/(2n-3)`.
pub fn growth_threshold_main(eps: f64, d: &[f64], a: &[Complex64]) -> Result<f64> {
    check_eps(eps)?;
    let n = d.len() as f64 + 1.0;
    let k = 2.0 * n - 3.0;
    let abs_d: f64 = d.iter().map(|x| x.abs()).sum();
    Ok(k / eps * border_mass(a) + (n - 1.0) * abs_d + (n - 2.0) * eps / k)
}

/// Corner threshold of the refinement lemma:
/// `1/eps * sum|a_i|^2 + sum [d_i + (n-2)|d_i|] + (n-2) eps`.
pub fn growth_threshold_refined(eps: f64, d: &[f64], a: &[Complex64]) -> Result<f64> {
    check_eps(eps)?;
    let n = d.len() as f64 + 1.0;
    let diag: f64 = d.iter().map(|&x| x + (n - 2.0) * x.abs()).sum();
    Ok(border_mass(a) / eps + diag + (n - 2.0) * eps)
}

/// Eigenvalue concentration diagnostics for one bordered matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    /// Ascending eigenvalues.
    pub eigenvalues: Vec<f64>,
    /// `|d_alpha - lambda_alpha|` with both sorted ascending.
    pub deviations: Vec<f64>,
    /// `lambda_n - aa`.
    pub corner_excess: f64,
    pub passed_main: bool,
    pub passed_refined: bool,
    /// Eigenvalues `lambda_1..lambda_(n-1)` counted in each connected component
    /// of the union of intervals `(d_alpha - r, d_alpha + r)`, `r = eps/(2n-3)`.
    pub component_counts: Vec<usize>,
    /// Number of diagonal entries generating each component.
    pub component_sizes: Vec<usize>,
}

/// Rounding allowance for the sign test `lambda_n - aa >= 0`: the exact
/// value can be far below the eigensolver's absolute accuracy.
fn corner_floor(spec: &BorderedSpec) -> f64 {
    let scale = spec.d.iter().map(|x| x * x).sum::<f64>() + 2.0 * border_mass(&spec.a) + spec.aa * spec.aa;
    16.0 * f64::EPSILON * scale.sqrt() * spec.n() as f64
}

/// Sorted-diagonal components `(lo, hi, size)` for interval radius `r`.
fn components(d_sorted: &[f64], r: f64) -> Vec<(f64, f64, usize)> {
    let mut out: Vec<(f64, f64, usize)> = Vec::new();
    for &x in d_sorted {
        match out.last_mut() {
            // open intervals: touching endpoints stay separate
            Some(last) if x - r < last.1 => {
                last.1 = x + r;
                last.2 += 1;
            }
            _ => out.push((x - r, x + r, 1)),
        }
    }
    out
}

pub fn concentration_report(spec: &BorderedSpec) -> Result<ConcentrationReport> {
    spec.validate()?;
    let n = spec.n();
    let m = n - 1;
    let eps = spec.eps;
    let (lambda, _) = eigh_sorted(bordered(spec).matrix());
    let mut d = spec.d.clone();
    d.sort_by(f64::total_cmp);

    let deviations: Vec<f64> = (0..m).map(|i| (d[i] - lambda[i]).abs()).collect();
    let corner_excess = lambda[m] - spec.aa;
    let floor = corner_floor(spec);
    let corner_nonneg = corner_excess >= -floor;

    let passed_main = deviations.iter().all(|&x| x < eps)
        && corner_nonneg
        && corner_excess < (n as f64 - 1.0) * eps;

    // refinement: each lambda_alpha near some d_i, with i_alpha the nearest
    let mut drift = 0.0;
    let mut near = true;
    for (alpha, &l) in lambda[..m].iter().enumerate() {
        let nearest = d
            .iter()
            .copied()
            .min_by(|x, y| (x - l).abs().total_cmp(&(y - l).abs()))
            .expect("non-empty diagonal");
        if (nearest - l).abs() >= eps {
            near = false;
        }
        drift += d[alpha] - nearest;
    }
    let passed_refined =
        near && corner_nonneg && corner_excess < (n as f64 - 1.0) * eps + drift.abs();

    let r = eps / (2.0 * n as f64 - 3.0);
    let comps = components(&d, r);
    let component_counts = comps
        .iter()
        .map(|&(lo, hi, _)| lambda[..m].iter().filter(|&&l| l > lo && l < hi).count())
        .collect();
    let component_sizes = comps.iter().map(|c| c.2).collect();

    Ok(ConcentrationReport {
        eigenvalues: lambda,
        deviations,
        corner_excess,
        passed_main,
        passed_refined,
        component_counts,
        component_sizes,
    })
}

/// Component counts along a list of corner values. Every corner value must
/// meet the main threshold; rows are returned in grid order.
pub fn count_stability_scan(spec: &BorderedSpec, aa_grid: &[f64]) -> Result<Vec<Vec<usize>>> {
    spec.validate()?;
    let threshold = growth_threshold_main(spec.eps, &spec.d, &spec.a)?;
    if let Some((i, &bad)) = aa_grid.iter().enumerate().find(|(_, &x)| x < threshold) {
        return Err(Error::Validation(format!(
            "corner value {bad} at grid index {i} is below the growth threshold {threshold}"
        )));
    }
    aa_grid
        .iter()
        .map(|&aa| Ok(concentration_report(&spec.with_corner(aa))?.component_counts))
        .collect()
}

/// Summary of a randomized run of the concentration lemma.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheckReport {
    pub n: usize,
    pub eps: f64,
    pub refined: bool,
    pub seed: u64,
    pub trials: usize,
    pub violations: usize,
    pub worst_deviation: f64,
    pub worst_corner_excess: f64,
}

/// Random bordered data: diagonal in [-5, 5] (a quarter of the draws are
/// clustered so that interval components merge), border in [-2, 2]^2.
pub fn random_bordered(rng: &mut impl Rng, n: usize, eps: f64) -> BorderedSpec {
    let m = n - 1;
    let clustered = rng.random_bool(0.25);
    let centre = rng.random_range(-5.0..5.0);
    let d = (0..m)
        .map(|_| {
            if clustered {
                centre + rng.random_range(-eps..eps)
            } else {
                rng.random_range(-5.0..5.0)
            }
        })
        .collect();
    let scale = if rng.random_bool(0.1) { 1e-4 } else { 2.0 };
    let a = (0..m)
        .map(|_| Complex64::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale)))
        .collect();
    BorderedSpec { d, a, aa: 0.0, eps }
}

/// Checks the concentration lemma on `trials` random bordered matrices, each
/// at the threshold and at a random larger corner value.
pub fn lemma_check(n: usize, eps: f64, trials: usize, seed: u64, refined: bool) -> Result<LemmaCheckReport> {
    if n < 2 {
        return Err(Error::Validation(format!("lemma-check needs n >= 2, got {n}")));
    }
    check_eps(eps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    let mut worst_deviation = 0.0f64;
    let mut worst_corner_excess = f64::NEG_INFINITY;
    for _ in 0..trials {
        let spec = random_bordered(&mut rng, n, eps);
        let threshold = if refined {
            growth_threshold_refined(eps, &spec.d, &spec.a)?
        } else {
            growth_threshold_main(eps, &spec.d, &spec.a)?
        };
        let stretch = rng.random_range(0.0..3.0);
        let above = threshold + threshold.abs() * stretch + rng.random_range(0.0..1.0);
        let mut failed = false;
        for aa in [threshold, above] {
            let report = concentration_report(&spec.with_corner(aa))?;
            failed |= if refined { !report.passed_refined } else { !report.passed_main };
            worst_deviation = report.deviations.iter().copied().fold(worst_deviation, f64::max);
            worst_corner_excess = worst_corner_excess.max(report.corner_excess);
        }
        violations += usize::from(failed);
    }
    Ok(LemmaCheckReport {
        n,
        eps,
        refined,
        seed,
        trials,
        violations,
        worst_deviation,
        worst_corner_excess,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn assembly() {
        let s = BorderedSpec::new(vec![1.0], vec![c(1.0, 0.0)], 11.0, 0.1).unwrap();
        let m = s.matrix();
        assert_eq!(m.get(0, 0), c(1.0, 0.0));
        assert_eq!(m.get(0, 1), c(1.0, 0.0));
        assert_eq!(m.get(1, 1), c(11.0, 0.0));

        let s = BorderedSpec::new(vec![1.0, -1.0], vec![c(1.0, 0.0), c(0.0, 1.0)], 24.1, 0.3).unwrap();
        let m = s.matrix();
        assert_eq!(m.get(0, 2), c(1.0, 0.0));
        assert_eq!(m.get(1, 2), c(0.0, 1.0));
        assert_eq!(m.get(2, 1), c(0.0, -1.0));
        assert_eq!(m.get(0, 1), c(0.0, 0.0));

        let z = BorderedSpec::new(vec![0.0, 0.0], vec![c(0.0, 0.0); 2], 0.0, 1.0).unwrap();
        assert_eq!(z.matrix().norm(), 0.0);
    }

    #[test]
    fn zero_border_eigenvalues() {
        let s = BorderedSpec::new(vec![1.0, 2.0], vec![c(0.0, 0.0); 2], 5.0, 0.1).unwrap();
        assert_eq!(s.matrix().eigenvalues(), vec![1.0, 2.0, 5.0]);
    }

    #[test]
    fn thresholds_match_hand_arithmetic() {
        let t = growth_threshold_main(0.1, &[1.0], &[c(1.0, 0.0)]).unwrap();
        assert!((t - 11.0).abs() < 1e-12);
        let t = growth_threshold_main(0.3, &[1.0, -1.0], &[c(1.0, 0.0), c(0.0, 1.0)]).unwrap();
        assert!((t - 24.1).abs() < 1e-12);
        let t = growth_threshold_main(0.7, &[0.0; 3], &[c(0.0, 0.0); 3]).unwrap();
        assert!((t - 2.0 * 0.7 / 5.0).abs() < 1e-15);

        let t = growth_threshold_refined(0.3, &[1.0, -1.0], &[c(1.0, 0.0), c(0.0, 1.0)]).unwrap();
        assert!((t - (2.0 / 0.3 + 2.0 + 0.3)).abs() < 1e-12);
        assert!((t - 8.9667).abs() < 1e-4);
        let t = growth_threshold_refined(0.1, &[1.0], &[c(1.0, 0.0)]).unwrap();
        assert!((t - 11.0).abs() < 1e-12);
        let t = growth_threshold_refined(0.4, &[0.0; 3], &[c(0.0, 0.0); 3]).unwrap();
        assert!((t - 2.0 * 0.4).abs() < 1e-15);

        assert!(growth_threshold_main(0.0, &[1.0], &[c(1.0, 0.0)]).is_err());
        assert!(growth_threshold_refined(-1.0, &[1.0], &[c(1.0, 0.0)]).is_err());
    }

    #[test]
    fn two_by_two_report() {
        // eigenvalues 6 -+ sqrt(26)
        let s = BorderedSpec::new(vec![1.0], vec![c(1.0, 0.0)], 11.0, 0.1).unwrap();
        let r = concentration_report(&s).unwrap();
        let expected = 1.0 - (6.0 - 26f64.sqrt());
        assert!((r.deviations[0] - expected).abs() < 1e-12);
        assert!((r.deviations[0] - 0.09902).abs() < 1e-5);
        assert!((r.corner_excess - expected).abs() < 1e-12);
        // d_1 - lambda_1 = lambda_2 - aa by the trace
        assert!((r.deviations[0] - r.corner_excess).abs() < 1e-12);
        assert!(r.passed_main && r.passed_refined);
    }

    #[test]
    fn zero_border_report_exact() {
        let s = BorderedSpec::new(vec![3.0, -1.0, 0.5], vec![c(0.0, 0.0); 3], 40.0, 0.2).unwrap();
        let r = concentration_report(&s).unwrap();
        assert!(r.deviations.iter().all(|&x| x == 0.0));
        assert_eq!(r.corner_excess, 0.0);
        assert_eq!(r.component_counts, vec![1, 1, 1]);
        assert_eq!(r.component_sizes, vec![1, 1, 1]);
    }

    #[test]
    fn scan_separated_and_merged() {
        let s = BorderedSpec::new(vec![0.0, 5.0], vec![c(1.0, 0.0), c(1.0, 0.0)], 0.0, 0.5).unwrap();
        let t = growth_threshold_main(0.5, &s.d, &s.a).unwrap();
        let rows = count_stability_scan(&s, &[t, 2.0 * t, 10.0 * t]).unwrap();
        assert_eq!(rows, vec![vec![1, 1]; 3]);
        assert_eq!(count_stability_scan(&s, &[t]).unwrap().len(), 1);
        assert!(count_stability_scan(&s, &[t, 0.5 * t]).is_err());

        let s = BorderedSpec::new(vec![1.0, 1.01], vec![c(0.3, 0.1), c(-0.2, 0.4)], 0.0, 0.5).unwrap();
        let t = growth_threshold_main(0.5, &s.d, &s.a).unwrap();
        let rows = count_stability_scan(&s, &[t, 3.0 * t, 50.0 * t]).unwrap();
        assert_eq!(rows, vec![vec![2]; 3]);
    }

    #[test]
    fn lemma_check_small_run() {
        for n in 2..=5 {
            let r = lemma_check(n, 0.1, 300, 11, false).unwrap();
            assert_eq!(r.violations, 0, "{r:?}");
            let r = lemma_check(n, 0.1, 300, 12, true).unwrap();
            assert_eq!(r.violations, 0, "{r:?}");
        }
        assert!(lemma_check(1, 0.1, 1, 0, false).is_err());
    }
}
