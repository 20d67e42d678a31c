//! Python bindings: cone functions, the deleted-sum map, the bordered-matrix
//! lemma, configured runs and the acceptance criteria.

use std::path::PathBuf;

use num_complex::Complex64;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use hessian_forge::cli_io::{self, exit_code_for};
use hessian_forge::cone::{self as cone_mod, in_cone, ConeFunction, Family, SpectralFunction};
use hessian_forge::linalg::{self, BorderedSpec};
use hessian_forge::verify::{self, VerifyOptions};
use hessian_forge::Error;

create_exception!(hessian_forge, HessianForgeError, PyException);
create_exception!(hessian_forge, InvariantViolation, HessianForgeError);
create_exception!(hessian_forge, NonConvergence, HessianForgeError);

fn to_py(err: Error) -> PyErr {
    match exit_code_for(&err) {
        2 => InvariantViolation::new_err(err.to_string()),
        3 => NonConvergence::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

/// Serializable value to a plain Python object via JSON.
fn to_object<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A symmetric function family on its cone, e.g. `Cone("sigma-k-root", 4, k=2)`.
#[pyclass(name = "Cone", module = "hessian_forge", frozen)]
struct PyCone {
    inner: ConeFunction,
}

#[pymethods]
impl PyCone {
    #[new]
    #[pyo3(signature = (family, n, k=None, l=None))]
    fn new(family: &str, n: usize, k: Option<usize>, l: Option<usize>) -> PyResult<Self> {
        let family = Family::parse(family, k, l).map_err(to_py)?;
        Ok(Self { inner: ConeFunction::new(family, n).map_err(to_py)? })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn family(&self) -> &'static str {
        self.inner.family.name()
    }

    fn __call__(&self, lambda: Vec<f64>) -> PyResult<f64> {
        self.inner.eval(&lambda).map_err(to_py)
    }

    fn grad(&self, lambda: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.grad(&lambda).map_err(to_py)
    }

    fn contains(&self, lambda: Vec<f64>) -> bool {
        in_cone(&lambda, self.inner.cone()).inside
    }

    /// `f` on the deleted sums of `lambda`.
    fn pullback(&self, lambda: Vec<f64>) -> PyResult<f64> {
        cone_mod::QPullback::new(self.inner).map_err(to_py)?.value(&lambda).map_err(to_py)
    }

    /// Structural probe over random cone points.
    #[pyo3(signature = (samples=1000, seed=0))]
    fn probe<'py>(&self, py: Python<'py>, samples: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        let ledger = cone_mod::cone_probe(&self.inner, samples, seed).map_err(to_py)?;
        to_object(py, &ledger)
    }

    fn __repr__(&self) -> String {
        format!("Cone({:?}, n={})", self.inner.family, self.inner.n)
    }
}

#[pyfunction]
fn q_transform(lambda: Vec<f64>) -> Vec<f64> {
    cone_mod::q_transform(&lambda)
}

#[pyfunction]
fn q_inverse(mu: Vec<f64>) -> PyResult<Vec<f64>> {
    cone_mod::q_inverse(&mu).map_err(to_py)
}

#[pyfunction]
fn star_power_eigs(lambda: Vec<f64>) -> Vec<f64> {
    cone_mod::star_power_eigs(&lambda)
}

/// Eigenvalue concentration report of the bordered matrix with diagonal `d`,
/// border `a` (complex), corner `aa`.
#[pyfunction]
fn concentration_report<'py>(
    py: Python<'py>,
    d: Vec<f64>,
    a: Vec<Complex64>,
    aa: f64,
    eps: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let spec = BorderedSpec::new(d, a, aa, eps).map_err(to_py)?;
    to_object(py, &linalg::concentration_report(&spec).map_err(to_py)?)
}

/// Corner threshold; `refined` selects the refinement lemma.
#[pyfunction]
#[pyo3(signature = (eps, d, a, refined=false))]
fn growth_threshold(eps: f64, d: Vec<f64>, a: Vec<Complex64>, refined: bool) -> PyResult<f64> {
    if refined {
        linalg::growth_threshold_refined(eps, &d, &a)
    } else {
        linalg::growth_threshold_main(eps, &d, &a)
    }
    .map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (n, eps, trials=10000, seed=0, refined=false))]
fn lemma_check<'py>(
    py: Python<'py>,
    n: usize,
    eps: f64,
    trials: usize,
    seed: u64,
    refined: bool,
) -> PyResult<Bound<'py, PyAny>> {
    to_object(py, &linalg::lemma_check(n, eps, trials, seed, refined).map_err(to_py)?)
}

/// Parses and validates a TOML run configuration; returns it with defaults filled in.
#[pyfunction]
fn parse_config<'py>(py: Python<'py>, toml: &str) -> PyResult<Bound<'py, PyAny>> {
    to_object(py, &cli_io::parse_config(toml).map_err(to_py)?)
}

/// Runs a TOML configuration, writing artifacts to `out`; returns the run record.
#[pyfunction]
fn run<'py>(py: Python<'py>, toml: &str, out: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let config = cli_io::parse_config(toml).map_err(to_py)?;
    let record = py.detach(|| cli_io::run(&config, &out)).map_err(to_py)?;
    to_object(py, &record)
}

/// Runs one acceptance criterion (1..=9).
#[pyfunction]
#[pyo3(signature = (id, seed=20240601, trials=None, samples=None))]
fn run_criterion<'py>(
    py: Python<'py>,
    id: u8,
    seed: u64,
    trials: Option<usize>,
    samples: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut opts = VerifyOptions { seed, ..VerifyOptions::default() };
    if let Some(t) = trials {
        opts.lemma_trials = t;
        opts.ladder_trials = t;
    }
    if let Some(s) = samples {
        opts.cone_samples = s;
    }
    let result = py.detach(|| verify::run_criterion(id, &opts));
    to_object(py, &result)
}

#[pymodule]
#[pyo3(name = "hessian_forge")]
fn init_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("HessianForgeError", m.py().get_type::<HessianForgeError>())?;
    m.add("InvariantViolation", m.py().get_type::<InvariantViolation>())?;
    m.add("NonConvergence", m.py().get_type::<NonConvergence>())?;
    m.add("CRITERIA", verify::CRITERIA.to_vec())?;
    m.add_class::<PyCone>()?;
    m.add_function(wrap_pyfunction!(q_transform, m)?)?;
    m.add_function(wrap_pyfunction!(q_inverse, m)?)?;
    m.add_function(wrap_pyfunction!(star_power_eigs, m)?)?;
    m.add_function(wrap_pyfunction!(concentration_report, m)?)?;
    m.add_function(wrap_pyfunction!(growth_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(lemma_check, m)?)?;
    m.add_function(wrap_pyfunction!(parse_config, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(run_criterion, m)?)?;
    Ok(())
}
