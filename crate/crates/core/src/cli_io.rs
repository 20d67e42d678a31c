//! Run configuration, module dispatch and artifact persistence.
//!
//! A run reads a TOML config, validates it completely before computing,
//! writes CSV fields and JSON ledgers to an output directory and finishes
//! with `record.json`: config hash, timestamps, stage status and a SHA-256
//! manifest of every other file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cone::{cone_probe, ConeFunction, Family};
use crate::equation::{GauduchonForm, NodeOperator, Spectral, Structure};
use crate::error::{Error, Result};
use crate::grid::{GridField, HermitianField, MetricField, MetricPreset, OneForm, ProductGrid};
use crate::linalg::lemma_check;
use crate::solver::{
    default_terms, degenerate_limit, diagnostics_update, manufactured_problem, solve_from_subsolution,
    NewtonOptions, Problem, SolverState, StageRecord,
};
use crate::subsolution::{construct, default_margin, supersolution, StripData};
use crate::verify::{run_criterion, VerifyOptions, VerifyReport};

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "HESSIAN_FORGE_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Module {
    LemmaCheck,
    Cone,
    Subsolution,
    Solve,
    VerifyAll,
}

impl Module {
    pub fn name(&self) -> &'static str {
        match self {
            Module::LemmaCheck => "lemma-check",
            Module::Cone => "cone",
            Module::Subsolution => "subsolution",
            Module::Solve => "solve",
            Module::VerifyAll => "verify-all",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub module: Module,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub lemma: LemmaConfig,
    #[serde(default)]
    pub cone: ConeConfig,
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

impl RunConfig {
    /// Defaults for `module`; `solve` and `subsolution` get the bundled
    /// manufactured problem.
    pub fn for_module(module: Module) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            module,
            seed: 0,
            output: None,
            lemma: LemmaConfig::default(),
            cone: ConeConfig::default(),
            problem: ProblemConfig::default(),
            solver: SolverConfig::default(),
            verify: VerifyConfig::default(),
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(&json))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LemmaConfig {
    pub n: Vec<usize>,
    pub eps: Vec<f64>,
    pub trials: usize,
    pub refined: bool,
}

impl Default for LemmaConfig {
    fn default() -> Self {
        Self {
            n: (2..=8).collect(),
            eps: vec![0.5, 0.1, 0.01],
            trials: 10_000,
            refined: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConeConfig {
    pub family: String,
    pub k: Option<usize>,
    pub l: Option<usize>,
    pub n: usize,
    pub samples: usize,
}

impl Default for ConeConfig {
    fn default() -> Self {
        Self {
            family: "log-ma".into(),
            k: None,
            l: None,
            n: 4,
            samples: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EquationKind {
    Standard,
    Gauduchon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PsiSpec {
    Constant { value: f64 },
    /// `psi` of the built-in smooth solution.
    Manufactured,
    /// CSV with a `node` column first and the value last.
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BoundarySpec {
    /// Traces of the built-in smooth solution.
    Manufactured,
    /// `lower` on `s = s0`, `upper` on `s = s1`.
    Constant { lower: f64, upper: f64 },
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub n: usize,
    /// Points per real axis; frozen axes use 1. Defaults to 32 on `x_1, s`
    /// (`n = 2`) or 8 on `x_1, x_2, s, theta` (`n >= 3`).
    pub resolution: Option<Vec<usize>>,
    pub metric: MetricPreset,
    /// CSV rows `node,i,j,re,im` replacing metric entries.
    pub metric_overrides: Option<PathBuf>,
    pub equation: EquationKind,
    pub family: String,
    pub k: Option<usize>,
    pub l: Option<usize>,
    /// `chi~ = chi I` (standard) or `chi = chi I` (Gauduchon).
    pub chi: f64,
    /// Constant `eta_S` as `[re, im]`.
    pub eta: [f64; 2],
    pub rho: f64,
    pub form: GauduchonForm,
    pub psi: PsiSpec,
    pub boundary: BoundarySpec,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            n: 2,
            resolution: None,
            metric: MetricPreset::Flat,
            metric_overrides: None,
            equation: EquationKind::Standard,
            family: "log-ma".into(),
            k: None,
            l: None,
            chi: 2.0,
            eta: [0.2, 0.0],
            rho: 0.5,
            form: GauduchonForm::ViaU,
            psi: PsiSpec::Manufactured,
            boundary: BoundarySpec::Manufactured,
        }
    }
}

impl ProblemConfig {
    pub fn resolution(&self) -> Vec<usize> {
        if let Some(r) = &self.resolution {
            return r.clone();
        }
        let n = self.n.max(1);
        let res = if n == 2 { 32 } else { 8 };
        let mut r = vec![1; 2 * n];
        r[0] = res;
        r[2 * n - 2] = res;
        if n >= 3 {
            r[2] = res;
            r[2 * n - 1] = res;
        }
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub min_step: f64,
    pub armijo: f64,
    pub homotopy_steps: usize,
    /// Non-empty: solve `psi + eps` down this ladder instead.
    pub eps_ladder: Vec<f64>,
    /// Subsolution margin; `0.1 (1 + |psi|_inf)` when absent.
    pub margin: Option<f64>,
    pub alpha: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let o = NewtonOptions::default();
        Self {
            tol: o.tol,
            max_iter: o.max_iter,
            min_step: o.min_step,
            armijo: o.armijo,
            homotopy_steps: 0,
            eps_ladder: Vec::new(),
            margin: None,
            alpha: 0.5,
        }
    }
}

impl SolverConfig {
    pub fn newton(&self) -> NewtonOptions {
        NewtonOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            min_step: self.min_step,
            armijo: self.armijo,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub criteria: Vec<u8>,
    pub lemma_trials: usize,
    pub ladder_trials: usize,
    pub cone_samples: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        let o = VerifyOptions::default();
        Self {
            criteria: (1..=9).collect(),
            lemma_trials: o.lemma_trials,
            ladder_trials: o.ladder_trials,
            cone_samples: o.cone_samples,
        }
    }
}

const TOP_KEYS: &[&str] = &["schema_version", "module", "seed", "output", "lemma", "cone", "problem", "solver", "verify"];

fn section_keys(section: &str) -> &'static [&'static str] {
    match section {
        "lemma" => &["n", "eps", "trials", "refined"],
        "cone" => &["family", "k", "l", "n", "samples"],
        "problem" => &[
            "n",
            "resolution",
            "metric",
            "metric_overrides",
            "equation",
            "family",
            "k",
            "l",
            "chi",
            "eta",
            "rho",
            "form",
            "psi",
            "boundary",
        ],
        "solver" => &["tol", "max_iter", "min_step", "armijo", "homotopy_steps", "eps_ladder", "margin", "alpha"],
        "verify" => &["criteria", "lemma_trials", "ladder_trials", "cone_samples"],
        _ => &[],
    }
}

fn nested_keys(key: &str, tag: Option<&str>) -> Option<&'static [&'static str]> {
    match (key, tag) {
        ("metric", Some("flat")) => Some(&["preset"]),
        ("metric", Some("conformal")) => Some(&["preset", "eps"]),
        ("metric", Some("product")) => Some(&["preset", "profile"]),
        ("psi", Some("constant")) => Some(&["kind", "value"]),
        ("psi", Some("manufactured")) | ("boundary", Some("manufactured")) => Some(&["kind"]),
        ("psi", Some("file")) | ("boundary", Some("file")) => Some(&["kind", "path"]),
        ("boundary", Some("constant")) => Some(&["kind", "lower", "upper"]),
        _ => None,
    }
}

/// 1-based line of the first assignment to `key` (or `[key]` header),
/// including keys inside inline tables.
fn line_of(src: &str, key: &str) -> Option<usize> {
    let assigns = |l: &str| {
        l.match_indices(key).any(|(i, _)| {
            let before = l[..i].trim_end();
            let after = l[i + key.len()..].trim_start();
            (before.is_empty() || before.ends_with('{') || before.ends_with(',')) && after.starts_with('=')
        })
    };
    src.lines()
        .position(|l| {
            let t = l.trim_start();
            assigns(t) || t.strip_prefix('[').and_then(|r| r.strip_prefix(key)).is_some_and(|r| r.starts_with(']'))
        })
        .map(|i| i + 1)
}

fn at_line(src: &str, key: &str) -> String {
    line_of(src, key).map(|l| format!(" (line {l})")).unwrap_or_default()
}

/// Parses and validates a config; every problem found is listed.
pub fn parse_config(src: &str) -> Result<RunConfig> {
    let table: toml::Table = src.parse().map_err(|e: toml::de::Error| Error::Config(vec![e.to_string()]))?;
    let mut errors = Vec::new();

    for (key, value) in &table {
        if !TOP_KEYS.contains(&key.as_str()) {
            errors.push(format!("unknown key `{key}`{}", at_line(src, key)));
            continue;
        }
        let allowed = section_keys(key);
        if allowed.is_empty() {
            continue;
        }
        let Some(section) = value.as_table() else {
            errors.push(format!("`{key}` must be a table{}", at_line(src, key)));
            continue;
        };
        for (sub, v) in section {
            if !allowed.contains(&sub.as_str()) {
                errors.push(format!("unknown key `{key}.{sub}`{}", at_line(src, sub)));
                continue;
            }
            if let Some(inner) = v.as_table() {
                let tag = inner.get("preset").or_else(|| inner.get("kind")).and_then(|t| t.as_str());
                if let Some(keys) = nested_keys(sub, tag) {
                    for k in inner.keys().filter(|k| !keys.contains(&k.as_str())) {
                        errors.push(format!("unknown key `{key}.{sub}.{k}`{}", at_line(src, k)));
                    }
                }
            }
        }
    }
    if !errors.is_empty() {
        return Err(Error::Config(errors));
    }

    // field-level type errors, one per section
    for key in ["lemma", "cone", "problem", "solver", "verify"] {
        if let Some(v) = table.get(key) {
            let res = match key {
                "lemma" => v.clone().try_into::<LemmaConfig>().map(drop),
                "cone" => v.clone().try_into::<ConeConfig>().map(drop),
                "problem" => v.clone().try_into::<ProblemConfig>().map(drop),
                "solver" => v.clone().try_into::<SolverConfig>().map(drop),
                _ => v.clone().try_into::<VerifyConfig>().map(drop),
            };
            if let Err(e) = res {
                errors.push(format!("[{key}]{}: {}", at_line(src, key), e.message()));
            }
        }
    }
    for key in ["schema_version", "module"] {
        if !table.contains_key(key) {
            errors.push(format!("missing required key `{key}`"));
        }
    }
    if !errors.is_empty() {
        return Err(Error::Config(errors));
    }
    let config: RunConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(vec![e.message().to_string()]))?;
    let semantic = validate(&config, src);
    if !semantic.is_empty() {
        return Err(Error::Config(semantic));
    }
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let src = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config(&src).map_err(|e| match e {
        Error::Config(list) => Error::Config(list.into_iter().map(|m| format!("{}: {m}", path.display())).collect()),
        other => other,
    })
}

/// Range and consistency checks on a deserialized config.
pub fn validate(c: &RunConfig, src: &str) -> Vec<String> {
    let mut e = Vec::new();
    if c.schema_version != SCHEMA_VERSION {
        e.push(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", c.schema_version));
    }
    let l = &c.lemma;
    if let Some(bad) = l.n.iter().find(|&&n| n < 2) {
        e.push(format!("lemma.n = {bad}: complex dimension n >= 2 required{}", at_line(src, "n")));
    }
    if l.eps.iter().any(|&x| !(x > 0.0)) || l.eps.is_empty() || l.n.is_empty() {
        e.push("lemma.n and lemma.eps must be non-empty with eps > 0".into());
    }
    if c.cone.n < 2 {
        e.push(format!("cone.n = {}: complex dimension n >= 2 required", c.cone.n));
    } else if let Err(err) = Family::parse(&c.cone.family, c.cone.k, c.cone.l).and_then(|f| ConeFunction::new(f, c.cone.n))
    {
        e.push(format!("cone: {err}"));
    }
    let p = &c.problem;
    if p.n < 2 {
        e.push(format!("problem.n = {}: complex dimension n >= 2 required{}", p.n, at_line(src, "n")));
    } else {
        let r = p.resolution();
        if r.len() != 2 * p.n {
            e.push(format!("problem.resolution has {} entries, expected 2n = {}", r.len(), 2 * p.n));
        }
        match p.equation {
            EquationKind::Standard => {
                if let Err(err) = Family::parse(&p.family, p.k, p.l).and_then(|f| ConeFunction::new(f, p.n)) {
                    e.push(format!("problem: {err}"));
                }
            }
            EquationKind::Gauduchon => {
                if p.family != "log-ma" {
                    e.push(format!("problem.family = {}: the Gauduchon equation uses log-ma", p.family));
                }
            }
        }
        if matches!(p.boundary, BoundarySpec::Manufactured) != matches!(p.psi, PsiSpec::Manufactured) {
            e.push("problem.psi and problem.boundary must both be manufactured or neither".into());
        }
    }
    let s = &c.solver;
    if !(s.tol > 0.0) || s.max_iter == 0 || !(s.min_step > 0.0) || !(s.armijo > 0.0 && s.armijo < 1.0) {
        e.push("solver: tol, min_step > 0, max_iter >= 1, 0 < armijo < 1 required".into());
    }
    if s.eps_ladder.iter().any(|&x| !(x > 0.0)) {
        e.push("solver.eps_ladder entries must be positive".into());
    }
    if s.margin.is_some_and(|m| !(m > 0.0)) {
        e.push("solver.margin must be positive".into());
    }
    if !(s.alpha > 0.0 && s.alpha <= 1.0) {
        e.push("solver.alpha must lie in (0, 1]".into());
    }
    if let Some(bad) = c.verify.criteria.iter().find(|&&id| !(1..=9).contains(&id)) {
        e.push(format!("verify.criteria: no criterion {bad}"));
    }
    e
}

/// Outcome of a module beyond success.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "detail", rename_all = "kebab-case")]
pub enum Verdict {
    Ok,
    InvariantViolation(String),
    NonConvergence(String),
}

impl Verdict {
    pub fn exit_code(&self) -> i32 {
        match self {
            Verdict::Ok => 0,
            Verdict::InvariantViolation(_) => 2,
            Verdict::NonConvergence(_) => 3,
        }
    }
}

/// 1 for configuration, input and i/o problems, 2 for invariant violations,
/// 3 for non-convergence.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Io(_) | Error::Validation(_) => 1,
        Error::NotHermitian { .. }
        | Error::Domain { .. }
        | Error::MetricNotPositive { .. }
        | Error::Admissibility { .. }
        | Error::Infeasible(_) => 2,
        Error::LinearSolve(_) | Error::NonConvergence(_) => 3,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStatus {
    pub name: String,
    pub status: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub module: Module,
    pub config_hash: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub verdict: Verdict,
    pub stages: Vec<StageStatus>,
    /// File name to SHA-256 digest.
    pub artifacts: BTreeMap<String, String>,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes files into one directory and keeps their digests.
pub struct Artifacts {
    pub dir: PathBuf,
    pub manifest: BTreeMap<String, String>,
}

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: BTreeMap::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        self.manifest.insert(name.to_string(), hex(&Sha256::digest(bytes)));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }
}

fn axis_names(n: usize) -> Vec<String> {
    let mut names = Vec::with_capacity(2 * n);
    for k in 1..n {
        names.push(format!("x{k}"));
        names.push(format!("y{k}"));
    }
    names.push("s".into());
    names.push("theta".into());
    names
}

/// CSV with `node`, the real coordinates and the given value columns; one
/// row per grid node.
pub fn field_csv(grid: &ProductGrid, columns: &[&str], row: impl Fn(usize) -> Vec<f64>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["node".to_string()];
    header.extend(axis_names(grid.n));
    header.extend(columns.iter().map(|c| c.to_string()));
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(&header).map_err(io)?;
    for node in 0..grid.len() {
        let mut rec = vec![node.to_string()];
        rec.extend(grid.position(node).iter().map(|x| x.to_string()));
        rec.extend(row(node).iter().map(|x| x.to_string()));
        w.write_record(&rec).map_err(io)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.to_string()))
}

/// Reads a field written by [`field_csv`] (the last column is the value).
/// The row count must equal the node count.
pub fn read_field_csv(grid: &Arc<ProductGrid>, path: &Path) -> Result<GridField> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut values = vec![f64::NAN; grid.len()];
    let mut rows = 0;
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let bad = || Error::Validation(format!("{} row {}: expected node index and value", path.display(), line + 1));
        let node: usize = rec.get(0).and_then(|x| x.trim().parse().ok()).ok_or_else(bad)?;
        let value: f64 = rec.iter().last().and_then(|x| x.trim().parse().ok()).ok_or_else(bad)?;
        if node >= grid.len() {
            return Err(Error::Validation(format!("{}: node {node} outside the grid", path.display())));
        }
        values[node] = value;
        rows += 1;
    }
    if rows != grid.len() || values.iter().any(|v| v.is_nan()) {
        return Err(Error::Validation(format!(
            "{}: {rows} rows for {} grid nodes",
            path.display(),
            grid.len()
        )));
    }
    GridField::new(grid.clone(), values)
}

/// A problem assembled from `[problem]`.
#[derive(Debug, Clone)]
pub struct ProblemSetup {
    pub problem: Problem,
    pub strip: StripData,
    /// Exact solution when manufactured.
    pub exact: Option<GridField>,
}

pub fn build_problem(p: &ProblemConfig) -> Result<ProblemSetup> {
    let grid = Arc::new(ProductGrid::unit(p.n, p.resolution())?);
    let mut metric = MetricField::from_preset(grid.clone(), &p.metric)?;
    if let Some(path) = &p.metric_overrides {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        metric = metric.with_overrides(&text)?;
    }
    let profile = {
        let preset = p.metric.clone();
        move |s: f64| preset.strip_profile(s)
    };
    let (structure, f, strip) = match p.equation {
        EquationKind::Standard => {
            let eta = OneForm::from_strip(grid.clone(), |_, _| Complex64::new(p.eta[0], p.eta[1]));
            let strip = StripData::from_one_form(&eta, profile)?;
            let f = Spectral::Cone(ConeFunction::new(Family::parse(&p.family, p.k, p.l)?, p.n)?);
            (
                Structure::Standard {
                    chi_tilde: HermitianField::scaled_identity(grid.clone(), p.chi),
                    eta,
                },
                f,
                strip,
            )
        }
        EquationKind::Gauduchon => {
            let strip = StripData::from_one_form(&OneForm::zeros(grid.clone()), profile)?;
            (
                Structure::Gauduchon {
                    chi: HermitianField::scaled_identity(grid.clone(), p.chi),
                    rho: GridField::constant(grid.clone(), p.rho),
                    form: p.form,
                },
                Spectral::for_gauduchon(p.n, p.form)?,
                strip,
            )
        }
    };
    let op = NodeOperator::new(metric, structure)?;
    if let PsiSpec::Manufactured = p.psi {
        let (problem, exact) = manufactured_problem(op, f, &default_terms(&grid))?;
        return Ok(ProblemSetup {
            problem,
            strip,
            exact: Some(exact),
        });
    }
    let psi = match &p.psi {
        PsiSpec::Constant { value } => GridField::constant(grid.clone(), *value),
        PsiSpec::File { path } => read_field_csv(&grid, path)?,
        PsiSpec::Manufactured => unreachable!("handled above"),
    };
    let phi = match &p.boundary {
        BoundarySpec::Constant { lower, upper } => GridField::from_fn(grid.clone(), |x| {
            let s = x[grid.s_axis()];
            lower * (1.0 - s) + upper * s
        }),
        BoundarySpec::File { path } => read_field_csv(&grid, path)?,
        BoundarySpec::Manufactured => unreachable!("rejected by validation"),
    };
    Ok(ProblemSetup {
        problem: Problem::new(op, f, psi, phi)?,
        strip,
        exact: None,
    })
}

/// Output directory: explicit path, then the config, then `$HESSIAN_FORGE_OUT/<module>`,
/// then `hessian-forge-out/<module>`.
pub fn resolve_output(explicit: Option<&Path>, config: &RunConfig, env_root: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit.or(config.output.as_deref()) {
        return p.to_path_buf();
    }
    env_root
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("hessian-forge-out"))
        .join(config.module.name())
}

struct Stages(Vec<StageStatus>);

impl Stages {
    fn push(&mut self, name: &str, ok: bool, detail: impl Into<String>) {
        self.0.push(StageStatus {
            name: name.to_string(),
            status: if ok { "ok" } else { "failed" }.to_string(),
            detail: detail.into(),
        });
    }
}

/// Runs the configured module, writing artifacts and `record.json` to `out`.
/// Errors abort before `record.json` is written.
pub fn run(config: &RunConfig, out: &Path) -> Result<RunRecord> {
    let started = now();
    let mut art = Artifacts::create(out)?;
    let mut stages = Stages(Vec::new());
    art.write_json("config.json", config)?;
    let verdict = match config.module {
        Module::LemmaCheck => run_lemma(config, &mut art, &mut stages)?,
        Module::Cone => run_cone(config, &mut art, &mut stages)?,
        Module::Subsolution => run_subsolution(config, &mut art, &mut stages)?,
        Module::Solve => run_solve(config, &mut art, &mut stages)?,
        Module::VerifyAll => run_verify(config, &mut art, &mut stages)?,
    };
    let record = RunRecord {
        schema_version: SCHEMA_VERSION,
        module: config.module,
        config_hash: config.hash(),
        started_unix: started,
        finished_unix: now(),
        verdict,
        stages: stages.0,
        artifacts: art.manifest.clone(),
    };
    let bytes = serde_json::to_vec_pretty(&record).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(out.join("record.json"), bytes)?;
    Ok(record)
}

/// `verify-all` on a config: the selected criteria.
pub fn verify_all(config: &RunConfig) -> VerifyReport {
    let opts = VerifyOptions {
        seed: config.seed,
        lemma_trials: config.verify.lemma_trials,
        ladder_trials: config.verify.ladder_trials,
        cone_samples: config.verify.cone_samples,
    };
    let criteria: Vec<_> = config.verify.criteria.iter().map(|&id| run_criterion(id, &opts)).collect();
    VerifyReport {
        passed: criteria.iter().all(|c| c.passed),
        criteria,
    }
}

fn run_lemma(c: &RunConfig, art: &mut Artifacts, stages: &mut Stages) -> Result<Verdict> {
    let mut reports = Vec::new();
    let mut violations = 0;
    for &n in &c.lemma.n {
        for (e, &eps) in c.lemma.eps.iter().enumerate() {
            let seed = c.seed.wrapping_add(100 * n as u64 + e as u64);
            let r = lemma_check(n, eps, c.lemma.trials, seed, c.lemma.refined)?;
            stages.push(&format!("n={n} eps={eps}"), r.violations == 0, format!("{} violations", r.violations));
            violations += r.violations;
            reports.push(r);
        }
    }
    art.write_json("lemma.json", &reports)?;
    Ok(if violations == 0 {
        Verdict::Ok
    } else {
        Verdict::InvariantViolation(format!("{violations} lemma violations"))
    })
}

fn run_cone(c: &RunConfig, art: &mut Artifacts, stages: &mut Stages) -> Result<Verdict> {
    let f = ConeFunction::new(Family::parse(&c.cone.family, c.cone.k, c.cone.l)?, c.cone.n)?;
    let ledger = cone_probe(&f, c.cone.samples, c.seed)?;
    for o in &ledger.outcomes {
        stages.push(&o.name, o.failures == 0, format!("{} of {} failed", o.failures, o.checked));
    }
    art.write_json("cone.json", &ledger)?;
    Ok(if ledger.passed() {
        Verdict::Ok
    } else {
        Verdict::InvariantViolation(format!("{} invariant(s) failed", ledger.outcomes.iter().filter(|o| o.failures > 0).count()))
    })
}

fn run_subsolution(c: &RunConfig, art: &mut Artifacts, stages: &mut Stages) -> Result<Verdict> {
    let setup = build_problem(&c.problem)?;
    let p = &setup.problem;
    let margin = c.solver.margin.unwrap_or_else(|| default_margin(&p.psi));
    let sub = construct(&p.op, &p.f, &setup.strip, &p.phi, &p.psi, margin)?;
    let grid = p.op.grid().clone();
    art.write("h.csv", &field_csv(&grid, &["h"], |i| vec![sub.poisson.h.values[i]])?)?;
    art.write("ubar.csv", &field_csv(&grid, &["ubar"], |i| vec![sub.ubar.values[i]])?)?;
    let signs = sub.poisson.signs_hold();
    let slack_ok = sub.choice.min_slack >= margin / 2.0;
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let certificate = serde_json::json!({
        "margin": margin,
        "choice": sub.choice,
        "poisson": {
            "interior_max": sub.poisson.interior_max,
            "residual": sub.poisson.residual,
            "max_normal_lower": max(&sub.poisson.normal_lower),
            "max_normal_upper": max(&sub.poisson.normal_upper),
            "signs_hold": signs,
        },
        "slack_ok": slack_ok,
    });
    art.write_json("certificate.json", &certificate)?;
    stages.push("poisson", signs, format!("max h = {:e}", sub.poisson.interior_max));
    stages.push("choose-n", slack_ok, format!("N = {}, min slack {:e}", sub.choice.n_scale, sub.choice.min_slack));
    Ok(if signs && slack_ok {
        Verdict::Ok
    } else {
        Verdict::InvariantViolation("subsolution certificate failed".into())
    })
}

#[derive(Debug, Clone, Serialize)]
struct LadderEntry {
    eps: f64,
    converged: bool,
    iterations: usize,
    sup_laplacian: f64,
    hoelder: f64,
    distance_to_previous: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct SolveLedger {
    equation: String,
    n: usize,
    resolution: Vec<usize>,
    status: crate::solver::Status,
    iterations: usize,
    residual_sup: f64,
    error_vs_exact: Option<f64>,
    margin: f64,
    n_choice: Option<crate::subsolution::NChoice>,
    stages: Vec<StageRecord>,
    ladder: Vec<LadderEntry>,
    diagnostics: crate::solver::DiagnosticsLedger,
}

fn run_solve(c: &RunConfig, art: &mut Artifacts, stages: &mut Stages) -> Result<Verdict> {
    let setup = build_problem(&c.problem)?;
    let p = &setup.problem;
    let opts = c.solver.newton();
    let margin = c.solver.margin.unwrap_or_else(|| default_margin(&p.psi));
    let (state, n_choice, ubar, path, ladder): (SolverState, _, _, _, Vec<LadderEntry>) = if c.solver.eps_ladder.is_empty() {
        let out = solve_from_subsolution(p, &setup.strip, margin, c.solver.homotopy_steps, &opts)?;
        (out.state, Some(out.sub.choice), Some(out.sub.ubar), out.stages, Vec::new())
    } else {
        let rungs = degenerate_limit(p, &setup.strip, &c.solver.eps_ladder, margin, &opts, c.solver.alpha)?;
        let ladder = rungs
            .iter()
            .map(|r| LadderEntry {
                eps: r.eps,
                converged: r.converged,
                iterations: r.iterations,
                sup_laplacian: r.sup_laplacian,
                hoelder: r.hoelder,
                distance_to_previous: r.distance_to_previous,
            })
            .collect();
        let last = rungs.into_iter().last().expect("non-empty ladder").state;
        (last, None, None, Vec::new(), ladder)
    };
    for s in &path {
        stages.push(&format!("t={}", s.t), s.converged, format!("{} iterations", s.iterations));
    }
    for r in &ladder {
        stages.push(&format!("eps={:e}", r.eps), r.converged, format!("{} iterations", r.iterations));
    }

    let grid = p.op.grid().clone();
    let n = grid.n;
    art.write("u.csv", &field_csv(&grid, &["u"], |i| vec![state.u.values[i]])?)?;
    let cols: Vec<String> = (1..=n).map(|i| format!("lambda{i}")).collect();
    let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let lambda_csv = field_csv(&grid, &col_refs, |i| {
        let m = p.op.matrix(i, &p.op.jet(&state.u, i));
        p.op.spectrum(i, &m, &p.f).lambda
    })?;
    art.write("lambda.csv", &lambda_csv)?;
    let mut conv = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(e.to_string());
    conv.write_record(["iteration", "residual_sup", "residual_l2", "step"]).map_err(io)?;
    for h in &state.history {
        conv.write_record([
            h.iteration.to_string(),
            h.residual_sup.to_string(),
            h.residual_l2.to_string(),
            h.step.to_string(),
        ])
        .map_err(io)?;
    }
    art.write("convergence.csv", &conv.into_inner().map_err(|e| Error::Io(e.to_string()))?)?;

    let upper = supersolution(&p.op, &p.phi)?;
    let diagnostics = diagnostics_update(p, &state.u, ubar.as_ref(), Some(&upper), c.solver.alpha);
    let ledger = SolveLedger {
        equation: p.f.name(),
        n,
        resolution: c.problem.resolution(),
        status: state.status.clone(),
        iterations: state.iterations,
        residual_sup: state.residual_sup(),
        error_vs_exact: setup.exact.as_ref().map(|e| state.u.max_abs_diff(e)),
        margin,
        n_choice,
        stages: path,
        ladder,
        diagnostics: diagnostics.clone(),
    };
    art.write_json("ledger.json", &ledger)?;
    stages.push("newton", state.converged(), format!("{:?} after {} iterations", state.status, state.iterations));
    stages.push("sandwich", diagnostics.sandwich_ok, format!(
        "min(u - ubar) = {:?}, min(w - u) = {:?}",
        diagnostics.sandwich_lower, diagnostics.sandwich_upper
    ));
    Ok(if !state.converged() {
        Verdict::NonConvergence(format!("{:?}", state.status))
    } else if !diagnostics.sandwich_ok || !diagnostics.is_finite() {
        Verdict::InvariantViolation("sandwich or diagnostics check failed".into())
    } else {
        Verdict::Ok
    })
}

fn run_verify(c: &RunConfig, art: &mut Artifacts, stages: &mut Stages) -> Result<Verdict> {
    let report = verify_all(c);
    for r in &report.criteria {
        stages.push(
            &format!("{}. {}", r.id, r.name),
            r.passed,
            format!("{} ({:.1} s)", r.summary, r.seconds),
        );
    }
    art.write_json("verify.json", &report)?;
    Ok(if report.passed {
        Verdict::Ok
    } else {
        let failed: Vec<String> = report.criteria.iter().filter(|r| !r.passed).map(|r| r.id.to_string()).collect();
        Verdict::InvariantViolation(format!("criteria {} failed", failed.join(", ")))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "schema_version = 1\nmodule = \"solve\"\n";

    #[test]
    fn minimal_solve_config() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.module, Module::Solve);
        assert_eq!(c.problem.resolution(), vec![32, 1, 32, 1]);
        assert_eq!(c.problem.psi, PsiSpec::Manufactured);
    }

    #[test]
    fn misspelled_keys_are_all_named() {
        let src = format!("{MINIMAL}sede = 3\n[problem]\nfamly = \"log-ma\"\nmetric = {{ preset = \"conformal\", epz = 0.1 }}\n");
        let Err(Error::Config(list)) = parse_config(&src) else {
            panic!("accepted")
        };
        assert_eq!(list.len(), 3, "{list:?}");
        assert!(list.iter().any(|m| m.contains("`sede`") && m.contains("line 3")), "{list:?}");
        assert!(list.iter().any(|m| m.contains("`problem.famly`") && m.contains("line 5")));
        assert!(list.iter().any(|m| m.contains("`problem.metric.epz`") && m.contains("line 6")));
    }

    #[test]
    fn dimension_one_rejected() {
        let src = format!("{MINIMAL}[problem]\nn = 1\n");
        let Err(Error::Config(list)) = parse_config(&src) else {
            panic!("accepted")
        };
        assert!(list.iter().any(|m| m.contains("complex dimension n >= 2")), "{list:?}");
    }

    #[test]
    fn type_errors_and_semantic_errors_listed() {
        let src = format!("{MINIMAL}[solver]\ntol = \"small\"\n[cone]\nn = \"four\"\n");
        let Err(Error::Config(list)) = parse_config(&src) else {
            panic!("accepted")
        };
        assert_eq!(list.len(), 2, "{list:?}");
        let src = "schema_version = 2\nmodule = \"cone\"\n[lemma]\neps = [0.0]\n";
        let Err(Error::Config(list)) = parse_config(src) else {
            panic!("accepted")
        };
        assert_eq!(list.len(), 2, "{list:?}");
        assert!(matches!(parse_config("module = \"solve\""), Err(Error::Config(_))));
        assert!(matches!(parse_config("schema_version = 1\nmodule = \"solv\""), Err(Error::Config(_))));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code_for(&Error::Config(vec![])), 1);
        assert_eq!(exit_code_for(&Error::Infeasible("x".into())), 2);
        assert_eq!(exit_code_for(&Error::Admissibility { nodes: vec![1] }), 2);
        assert_eq!(exit_code_for(&Error::NonConvergence("x".into())), 3);
        assert_eq!(Verdict::NonConvergence(String::new()).exit_code(), 3);
    }

    #[test]
    fn output_resolution_order() {
        let c = RunConfig::for_module(Module::Cone);
        let env = PathBuf::from("/tmp/root");
        assert_eq!(resolve_output(None, &c, Some(&env)), PathBuf::from("/tmp/root/cone"));
        assert_eq!(resolve_output(Some(Path::new("x")), &c, Some(&env)), PathBuf::from("x"));
        assert_eq!(resolve_output(None, &c, None), PathBuf::from("hessian-forge-out/cone"));
    }

    #[test]
    fn field_csv_round_trip() {
        let grid = Arc::new(ProductGrid::unit(2, vec![8, 1, 8, 1]).unwrap());
        let f = GridField::from_fn(grid.clone(), |p| p[0].sin() + p[2]);
        let bytes = field_csv(&grid, &["u"], |i| vec![f.values[i]]).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("node,x1,y1,s,theta,u\n"));
        assert_eq!(text.lines().count(), grid.len() + 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        std::fs::write(&path, &bytes).unwrap();
        assert_eq!(read_field_csv(&grid, &path).unwrap(), f);
        std::fs::write(&path, text.lines().take(10).collect::<Vec<_>>().join("\n")).unwrap();
        assert!(read_field_csv(&grid, &path).is_err());
    }
}
