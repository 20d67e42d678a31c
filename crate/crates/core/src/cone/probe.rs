//! Randomized structural checks of a family on its cone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    addistruc_probe, concavity_probe, elementary_symmetric, in_cone, q_inverse, q_transform, Cone, ConeFunction,
    Family,
};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantOutcome {
    pub name: String,
    pub checked: usize,
    pub failures: usize,
    /// Largest violation seen (0 if none).
    pub worst: f64,
}

impl InvariantOutcome {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            checked: 0,
            failures: 0,
            worst: 0.0,
        }
    }

    fn record(&mut self, violation: f64) {
        self.checked += 1;
        if violation > 0.0 {
            self.failures += 1;
            self.worst = self.worst.max(violation);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeLedger {
    pub family: String,
    pub n: usize,
    pub samples: usize,
    pub seed: u64,
    pub outcomes: Vec<InvariantOutcome>,
}

impl ProbeLedger {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.failures == 0)
    }
}

/// Rejection sample of a point in `cone`, log-uniform in scale.
pub fn random_cone_point<R: Rng>(rng: &mut R, cone: Cone, n: usize) -> Vec<f64> {
    loop {
        let scale = rng.random_range(-2.0f64..2.0).exp();
        let x: Vec<f64> = (0..n).map(|_| scale * rng.random_range(-1.0..3.0)).collect();
        if in_cone(&x, cone).inside {
            return x;
        }
    }
}

fn central(f: &ConeFunction, lambda: &[f64], i: usize, h: f64) -> Option<f64> {
    let mut p = lambda.to_vec();
    let mut m = lambda.to_vec();
    p[i] += h;
    m[i] -= h;
    Some((f.eval(&p).ok()? - f.eval(&m).ok()?) / (2.0 * h))
}

/// Richardson-extrapolated central differences on a shrinking step, stopped
/// once two successive estimates agree.
fn settled_derivative(f: &ConeFunction, lambda: &[f64], i: usize) -> Option<f64> {
    let mut h = 1e-2 * (1.0 + lambda[i].abs());
    let mut prev: Option<f64> = None;
    for _ in 0..24 {
        let est = match (central(f, lambda, i, h), central(f, lambda, i, h / 2.0)) {
            (Some(c), Some(fine)) => Some((4.0 * fine - c) / 3.0),
            _ => None,
        };
        if let (Some(a), Some(b)) = (prev, est) {
            if (a - b).abs() <= 1e-7 * b.abs().max(1e-8) {
                return Some(b);
            }
        }
        prev = est;
        h /= 4.0;
    }
    prev
}

/// Cancellation factor of an evaluation: the same sums taken over `|lambda|`
/// relative to the signed ones.
fn evaluation_condition(f: &ConeFunction, lambda: &[f64]) -> f64 {
    let abs: Vec<f64> = lambda.iter().map(|x| x.abs()).collect();
    let ratio = |k: usize| {
        if k == 0 {
            return 1.0;
        }
        elementary_symmetric(&abs)[k] / elementary_symmetric(lambda)[k].abs()
    };
    match f.family {
        Family::LogMa => 1.0,
        Family::SigmaKRoot { k } | Family::LogSigmaK { k } => ratio(k),
        Family::QuotientRoot { k, l } => ratio(k).max(ratio(l)),
        Family::LogP => {
            let (total, total_abs): (f64, f64) = (lambda.iter().sum(), abs.iter().sum());
            lambda
                .iter()
                .map(|x| (total_abs - x.abs()) / (total - x).abs())
                .fold(1.0, f64::max)
        }
    }
}

/// Runs every structural invariant on `samples` random pairs of cone points.
pub fn cone_probe(f: &ConeFunction, samples: usize, seed: u64) -> Result<ProbeLedger> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cone = f.cone();
    let n = f.n;
    let mut ellipticity = InvariantOutcome::new("ellipticity");
    let mut symmetry = InvariantOutcome::new("symmetry");
    let mut concavity = InvariantOutcome::new("concavity");
    let mut addistruc = InvariantOutcome::new("addistruc");
    let mut gradient = InvariantOutcome::new("gradient-vs-differences");
    let mut nesting = InvariantOutcome::new("cone-nesting");
    let mut homogeneity = InvariantOutcome::new("monotone-along-cone");
    let mut qround = InvariantOutcome::new("q-round-trip");

    for s in 0..samples {
        let lambda = random_cone_point(&mut rng, cone, n);
        let mu = random_cone_point(&mut rng, cone, n);
        let fl = f.eval(&lambda)?;
        let g = f.grad(&lambda)?;

        let worst_neg = g.iter().fold(0.0f64, |w, &x| w.max(-x));
        ellipticity.record(if g.iter().all(|&x| x > 0.0) { 0.0 } else { worst_neg.max(f64::MIN_POSITIVE) });

        let mut perm = lambda.clone();
        perm.rotate_left(1 + s % n.max(1));
        perm.reverse();
        let fp = f.eval(&perm)?;
        let tol = 1e-12 * (1.0 + fl.abs()) * evaluation_condition(f, &lambda);
        symmetry.record(((fp - fl).abs() - tol).max(0.0));

        let fm = f.eval(&mu)?;
        let slack = concavity_probe(f, &lambda, &mu)?;
        let tol = 1e-9 * (1.0 + fl.abs() + fm.abs());
        concavity.record((-slack - tol).max(0.0));

        addistruc.record(if addistruc_probe(f, &lambda, &mu)? { 0.0 } else { 1.0 });

        if s % 16 == 0 {
            let mut worst = 0.0f64;
            for i in 0..n {
                if let Some(fd) = settled_derivative(f, &lambda, i) {
                    let rel = (fd - g[i]).abs() / g[i].abs().max(1e-8);
                    worst = worst.max(rel);
                }
            }
            gradient.record((worst - 1e-4).max(0.0));
        }

        // Gamma_n inside Gamma_k inside Gamma_1; Gamma_n inside P_(n-1)
        let in_n = in_cone(&lambda, Cone::Garding(n)).inside;
        let in_1 = in_cone(&lambda, Cone::Garding(1)).inside;
        let in_p = n >= 2 && in_cone(&lambda, Cone::DeletedSums).inside;
        let mut nest_bad = false;
        if let Cone::Garding(k) = cone {
            nest_bad |= !in_1;
            nest_bad |= in_n && !in_cone(&lambda, Cone::Garding(k)).inside;
        }
        nest_bad |= n >= 2 && in_n && !in_p;
        nesting.record(if nest_bad { 1.0 } else { 0.0 });

        let shifted: Vec<f64> = lambda.iter().zip(&mu).map(|(a, b)| a + b).collect();
        let fs = f.eval(&shifted)?;
        homogeneity.record((fl - fs - 1e-12 * (1.0 + fl.abs())).max(0.0));

        if n >= 2 {
            let back = q_inverse(&q_transform(&lambda))?;
            let err = back
                .iter()
                .zip(&lambda)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            let scale = lambda.iter().map(|x| x.abs()).fold(1.0f64, f64::max);
            qround.record((err - 1e-13 * scale).max(0.0));
        }
    }

    Ok(ProbeLedger {
        family: f.family.name().to_string(),
        n,
        samples,
        seed,
        outcomes: vec![
            ellipticity,
            symmetry,
            concavity,
            addistruc,
            gradient,
            nesting,
            homogeneity,
            qround,
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_probe_passes() {
        for fam in [
            Family::LogMa,
            Family::SigmaKRoot { k: 2 },
            Family::LogSigmaK { k: 2 },
            Family::QuotientRoot { k: 3, l: 1 },
            Family::LogP,
        ] {
            let f = ConeFunction::new(fam, 3).unwrap();
            let ledger = cone_probe(&f, 500, 11).unwrap();
            assert!(ledger.passed(), "{ledger:?}");
        }
    }
}
