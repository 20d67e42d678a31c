//! Manufactured problems: a smooth `u*` with analytic 2-jet, `psi` defined
//! by the node operator on that jet, and `phi = u*`.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::Problem;
use crate::cone::{ConeFunction, Family, SpectralFunction};
use crate::equation::{GauduchonForm, NodeOperator, Spectral, Structure};
use crate::error::{Error, Result};
use crate::grid::{GridField, HermitianField, MetricField, MetricPreset, NodeJet, OneForm, ProductGrid};
use crate::subsolution::StripData;

/// One-variable factor of a separable term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Factor {
    Cos(f64),
    Sin(f64),
    /// Polynomial coefficients in increasing degree.
    Poly(Vec<f64>),
}

impl Factor {
    /// `(value, first, second)` derivative at `x`.
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        match self {
            Factor::Cos(k) => {
                let (s, c) = (k * x).sin_cos();
                (c, -k * s, -k * k * c)
            }
            Factor::Sin(k) => {
                let (s, c) = (k * x).sin_cos();
                (s, k * c, -k * k * s)
            }
            Factor::Poly(a) => {
                let mut v = (0.0, 0.0, 0.0);
                for &c in a.iter().rev() {
                    v.2 = v.2 * x + 2.0 * v.1;
                    v.1 = v.1 * x + v.0;
                    v.0 = v.0 * x + c;
                }
                v
            }
        }
    }
}

/// `coeff * prod_a f_a(x_a)` over distinct real axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Separable {
    pub coeff: f64,
    pub factors: Vec<(usize, Factor)>,
}

impl Separable {
    pub fn value(&self, p: &[f64]) -> f64 {
        self.coeff * self.factors.iter().map(|(a, f)| f.eval(p[*a]).0).product::<f64>()
    }

    /// Adds this term's exact 2-jet at `p` to `jet`.
    pub fn add_jet(&self, p: &[f64], jet: &mut NodeJet) {
        let m = 2 * jet.n;
        let vals: Vec<(f64, f64, f64)> = self.factors.iter().map(|(a, f)| f.eval(p[*a])).collect();
        let prod_except = |skip: &[usize]| -> f64 {
            vals.iter()
                .enumerate()
                .filter(|(i, _)| !skip.contains(i))
                .map(|(_, v)| v.0)
                .product::<f64>()
        };
        for (i, (a, _)) in self.factors.iter().enumerate() {
            jet.d[*a] += self.coeff * vals[i].1 * prod_except(&[i]);
            jet.dd[a * m + a] += self.coeff * vals[i].2 * prod_except(&[i]);
            for (j, (b, _)) in self.factors.iter().enumerate().skip(i + 1) {
                let v = self.coeff * vals[i].1 * vals[j].1 * prod_except(&[i, j]);
                jet.dd[a * m + b] += v;
                jet.dd[b * m + a] += v;
            }
        }
    }

    fn axes_ok(&self, grid: &ProductGrid) -> bool {
        let mut seen = Vec::new();
        self.factors.iter().all(|(a, _)| {
            let fresh = !seen.contains(a);
            seen.push(*a);
            fresh && *a < grid.real_dim()
        })
    }
}

/// Operator family of a manufactured problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StructureKind {
    /// `chi~ = chi I`, `eta = (eta_re + i eta_im) dw`.
    Standard {
        family: Family,
        chi: f64,
        eta_re: f64,
        eta_im: f64,
    },
    /// `chi = chi I`, constant `rho`.
    Gauduchon { chi: f64, rho: f64, form: GauduchonForm },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManufacturedSpec {
    pub n: usize,
    pub resolution: Vec<usize>,
    pub metric: MetricPreset,
    pub structure: StructureKind,
    /// Overrides the built-in solution terms.
    #[serde(default)]
    pub terms: Option<Vec<Separable>>,
}

impl ManufacturedSpec {
    /// Standard equation with the given family; `x_1, s` active for `n = 2`
    /// and `x_1, x_2, s, theta` active for `n = 3`.
    pub fn standard(n: usize, res: usize, family: Family, metric: MetricPreset) -> Self {
        Self {
            n,
            resolution: default_resolution(n, res),
            metric,
            structure: StructureKind::Standard {
                family,
                chi: 2.0,
                eta_re: 0.2,
                eta_im: 0.0,
            },
            terms: None,
        }
    }

    pub fn gauduchon(n: usize, res: usize, form: GauduchonForm, metric: MetricPreset, rho: f64) -> Self {
        Self {
            n,
            resolution: default_resolution(n, res),
            metric,
            structure: StructureKind::Gauduchon { chi: 2.0, rho, form },
            terms: None,
        }
    }
}

fn default_resolution(n: usize, res: usize) -> Vec<usize> {
    let mut r = vec![1; 2 * n];
    r[0] = res;
    r[2 * n - 2] = res;
    if n >= 3 {
        r[2] = res;
        r[2 * n - 1] = res;
    }
    r
}

/// The built-in smooth solution, restricted to terms along active axes.
pub fn default_terms(grid: &ProductGrid) -> Vec<Separable> {
    let (s, t) = (grid.s_axis(), grid.theta_axis());
    let n = grid.n;
    let mut terms = vec![
        Separable {
            coeff: 0.25,
            factors: vec![(0, Factor::Cos(1.0)), (s, Factor::Cos(1.0))],
        },
        Separable {
            coeff: 0.2,
            factors: vec![(s, Factor::Poly(vec![0.0, 0.0, 1.0]))],
        },
        Separable {
            coeff: 0.1,
            factors: vec![(t, Factor::Cos(1.0)), (s, Factor::Poly(vec![0.0, 1.0]))],
        },
        Separable {
            coeff: 0.05,
            factors: vec![(0, Factor::Sin(1.0)), (t, Factor::Sin(1.0))],
        },
    ];
    if n >= 3 {
        terms.push(Separable {
            coeff: 0.1,
            factors: vec![(2, Factor::Sin(1.0)), (s, Factor::Poly(vec![1.0, 1.0]))],
        });
    }
    terms
        .into_iter()
        .filter(|term| term.factors.iter().all(|(a, _)| !grid.is_frozen(*a)))
        .collect()
}

/// A manufactured problem with its exact solution.
#[derive(Debug, Clone)]
pub struct Manufactured {
    pub spec: ManufacturedSpec,
    pub problem: Problem,
    pub exact: GridField,
    pub strip: StripData,
}

impl Manufactured {
    pub fn build(spec: &ManufacturedSpec) -> Result<Self> {
        let grid = Arc::new(ProductGrid::unit(spec.n, spec.resolution.clone())?);
        let metric = MetricField::from_preset(grid.clone(), &spec.metric)?;
        let profile = {
            let preset = spec.metric.clone();
            move |s: f64| preset.strip_profile(s)
        };
        let (structure, f, eta) = match &spec.structure {
            StructureKind::Standard {
                family,
                chi,
                eta_re,
                eta_im,
            } => {
                let eta = OneForm::from_strip(grid.clone(), |_, _| Complex64::new(*eta_re, *eta_im));
                (
                    Structure::Standard {
                        chi_tilde: HermitianField::scaled_identity(grid.clone(), *chi),
                        eta: eta.clone(),
                    },
                    Spectral::Cone(ConeFunction::new(*family, spec.n)?),
                    eta,
                )
            }
            StructureKind::Gauduchon { chi, rho, form } => (
                Structure::Gauduchon {
                    chi: HermitianField::scaled_identity(grid.clone(), *chi),
                    rho: GridField::constant(grid.clone(), *rho),
                    form: *form,
                },
                Spectral::for_gauduchon(spec.n, *form)?,
                OneForm::zeros(grid.clone()),
            ),
        };
        let strip = StripData::from_one_form(&eta, profile)?;
        let op = NodeOperator::new(metric, structure)?;
        let terms = spec.terms.clone().unwrap_or_else(|| default_terms(&grid));
        let (problem, exact) = manufactured_problem(op, f, &terms)?;
        Ok(Self {
            spec: spec.clone(),
            problem,
            exact,
            strip,
        })
    }
}

/// The manufactured problem for any operator: `psi = f(lambda(M[u*]))` from
/// the exact jet of `u*`, `phi = u*`. Returns the problem and `u*`.
pub fn manufactured_problem(op: NodeOperator, f: Spectral, terms: &[Separable]) -> Result<(Problem, GridField)> {
    let grid = op.grid().clone();
    let n = grid.n;
    if let Some(bad) = terms.iter().position(|t| !t.axes_ok(&grid)) {
        return Err(Error::Validation(format!("manufactured term {bad} repeats or misnames an axis")));
    }
    let exact = GridField::from_fn(grid.clone(), |p| terms.iter().map(|t| t.value(p)).sum());
    let mut psi = vec![0.0; grid.len()];
    for node in grid.interior_nodes() {
        let p = grid.position(node);
        let mut jet = NodeJet::zero(n);
        for t in terms {
            t.add_jet(&p, &mut jet);
        }
        let m = op.matrix(node, &jet);
        let spec_node = op.spectrum(node, &m, &f);
        if !spec_node.admissible() {
            return Err(Error::Validation(format!(
                "manufactured solution is not admissible at node {node}"
            )));
        }
        psi[node] = f.value(&spec_node.lambda)?;
    }
    let psi = GridField::new(grid.clone(), psi)?;
    let problem = Problem::new(op, f, psi, exact.clone())?;
    Ok((problem, exact))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_derivatives() {
        let p = Factor::Poly(vec![1.0, -2.0, 3.0]);
        assert_eq!(p.eval(2.0), (9.0, 10.0, 6.0));
        let (v, d, dd) = Factor::Sin(2.0).eval(0.3);
        assert!((v - 0.6f64.sin()).abs() < 1e-15);
        assert!((d - 2.0 * 0.6f64.cos()).abs() < 1e-15);
        assert!((dd + 4.0 * 0.6f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn analytic_jet_matches_stencils() {
        let spec = ManufacturedSpec::standard(3, 16, Family::LogMa, MetricPreset::Flat);
        let m = Manufactured::build(&spec).unwrap();
        let grid = m.exact.grid.clone();
        let terms = default_terms(&grid);
        assert_eq!(terms.len(), 5);
        let node = grid.index(&[5, 0, 7, 0, 11, 3]);
        let mut exact = NodeJet::zero(3);
        for t in &terms {
            t.add_jet(&grid.position(node), &mut exact);
        }
        let discrete = NodeJet::at(&grid, &m.exact.values, node);
        let err = exact
            .dd
            .iter()
            .zip(&discrete.dd)
            .chain(exact.d.iter().zip(&discrete.d))
            .fold(0.0f64, |w, (a, b)| w.max((a - b).abs()));
        assert!(err < 0.02, "{err}");
        for a in 0..6 {
            for b in 0..6 {
                assert_eq!(exact.second(a, b), exact.second(b, a));
            }
        }
    }
}
