//! Config-driven experiment runner and report writer.
//!
//! A config has three sections:
//!
//! ```toml
//! [problem]
//! kind = "quadratic"        # quadratic | logistic | ridge | tv
//! dim = 100
//! condition = 1e3
//!
//! [algorithm]
//! base = "gradient"         # gradient | nesterov | lbfgs | pdgm | pdgm_momentum | cp_constant
//! mode = "online"           # none | offline | restart | online | guarded
//! window = 10
//!
//! [run]
//! iterations = 500
//! tolerances = [1e-2, 1e-4, 1e-6]
//! ```
//!
//! Logged values are `f` and `resid` at the point the mode would return:
//! the base iterate for `none` and `guarded`, the extrapolation for
//! `offline` and `online`, and either one for `restart`. For objectives
//! `resid` is `||grad f||`; for saddle-point problems it is the fixed-point
//! residual `||z_i - z_{i-1}||` of the base step.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::drivers::{
    chambolle_pock_step, lbfgs_baseline_step, CPParams, ConvergenceLog, CpState, DriverError,
    LbfgsState, LogRecord, NesterovParams, Stopwatch,
};
use crate::extrapolate::{self, IterateWindow};
use crate::linalg::{self, DenseMatrix, DenseVector};
use crate::numrange::{self, BlockOperator, NumRangeError, NumericalRangeBoundary};
use crate::online::{coefficients_with_retry, AdaptiveNesterov};
use crate::problems::{
    self, DataError, LoadOptions, LogisticProblem, Objective, QuadraticProblem, RidgeProblem,
    SaddlePointProblem, TVDenoiseProblem,
};

/// Multiple of the configured iterations used for the reference optimum.
pub const REFERENCE_FACTOR: usize = 5;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("cannot parse config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    NumRange(#[from] NumRangeError),
}

pub type Result<T> = std::result::Result<T, BenchError>;

fn config_err(msg: impl Into<String>) -> BenchError {
    BenchError::Config(msg.into())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Quadratic,
    Logistic,
    Ridge,
    Tv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseKind {
    Gradient,
    Nesterov,
    Lbfgs,
    Pdgm,
    PdgmMomentum,
    CpConstant,
}

impl BaseKind {
    fn needs_objective(self) -> bool {
        matches!(
            self,
            BaseKind::Gradient | BaseKind::Nesterov | BaseKind::Lbfgs
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    None,
    Offline,
    Restart,
    Online,
    Guarded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub dim: usize,
    /// Samples for logistic and ridge problems.
    pub samples: usize,
    /// `L / mu`; for logistic problems sets `mu` from the data.
    pub condition: Option<f64>,
    pub mu: f64,
    /// Noise level of the synthetic TV image.
    pub zeta: f64,
    pub height: usize,
    pub width: usize,
    /// LIBSVM-style file for logistic problems.
    pub dataset: Option<PathBuf>,
    /// PGM file used as the noisy TV input.
    pub image: Option<PathBuf>,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        Self {
            kind: ProblemKind::Quadratic,
            dim: 50,
            samples: 200,
            condition: None,
            mu: 1e-2,
            zeta: 0.1,
            height: 64,
            width: 64,
            dataset: None,
            image: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgorithmSpec {
    pub base: BaseKind,
    pub mode: Mode,
    pub window: usize,
    pub lambda_rel: f64,
    pub eta: f64,
    /// Use CNA with this budget instead of RNA.
    pub tau: Option<f64>,
}

impl Default for AlgorithmSpec {
    fn default() -> Self {
        Self {
            base: BaseKind::Gradient,
            mode: Mode::None,
            window: extrapolate::DEFAULT_WINDOW,
            lambda_rel: extrapolate::DEFAULT_LAMBDA,
            eta: 1.0,
            tau: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    pub name: Option<String>,
    pub iterations: usize,
    pub tolerances: Vec<f64>,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Record wall-clock milliseconds (off keeps outputs byte-identical).
    pub timing: bool,
    /// Stop once `resid` falls to this level.
    pub stop_resid: Option<f64>,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            name: None,
            iterations: 200,
            tolerances: vec![1e-2, 1e-4, 1e-6],
            seed: 0,
            output_dir: PathBuf::from("out"),
            timing: false,
            stop_resid: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub algorithm: AlgorithmSpec,
    pub run: RunSpec,
}

/// Parses a dotted-key override value as a TOML value, falling back to a
/// plain string.
fn parse_override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets `section.key = value` in a parsed config table.
pub fn apply_override(table: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let (section, field) = key
        .split_once('.')
        .ok_or_else(|| config_err(format!("override key `{key}` must be `section.key`")))?;
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let toml::Value::Table(inner) = entry else {
        return Err(config_err(format!("`{section}` is not a section")));
    };
    inner.insert(field.to_string(), parse_override_value(raw));
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with(text, &[])
    }

    /// Parses `text`, applies `(section.key, value)` overrides, validates.
    pub fn from_toml_with(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = text.parse()?;
        for (k, v) in overrides {
            apply_override(&mut table, k, v)?;
        }
        let cfg: ExperimentConfig = toml::Value::Table(table).try_into()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml_with(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let (p, a, r) = (&self.problem, &self.algorithm, &self.run);
        if r.iterations == 0 {
            return Err(config_err("run.iterations must be positive"));
        }
        if r.tolerances.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(config_err("run.tolerances must be positive"));
        }
        if r.stop_resid.is_some_and(|t| !(t > 0.0)) {
            return Err(config_err("run.stop_resid must be positive"));
        }
        if a.window == 0 {
            return Err(config_err("algorithm.window must be positive"));
        }
        if !(a.lambda_rel >= 0.0 && a.lambda_rel.is_finite()) {
            return Err(config_err("algorithm.lambda_rel must be nonnegative"));
        }
        if !a.eta.is_finite() {
            return Err(config_err("algorithm.eta must be finite"));
        }
        if a.tau.is_some_and(|t| !(t >= 0.0)) {
            return Err(config_err("algorithm.tau must be nonnegative"));
        }
        if p.dim == 0 || p.samples == 0 {
            return Err(config_err(
                "problem.dim and problem.samples must be positive",
            ));
        }
        if !(p.mu > 0.0 && p.mu.is_finite()) {
            return Err(config_err("problem.mu must be positive"));
        }
        if !(p.zeta >= 0.0) {
            return Err(config_err("problem.zeta must be nonnegative"));
        }
        match (p.kind, p.condition) {
            (ProblemKind::Quadratic, Some(c)) if !(c >= 1.0 && c.is_finite()) => {
                return Err(config_err("problem.condition must be at least 1"));
            }
            (ProblemKind::Logistic, Some(c)) if !(c > 1.0 && c.is_finite()) => {
                return Err(config_err("problem.condition must exceed 1"));
            }
            _ => {}
        }
        if p.kind == ProblemKind::Tv && (p.height < 2 || p.width < 2) {
            return Err(config_err(
                "problem.height and problem.width must be at least 2",
            ));
        }
        if a.base.needs_objective()
            && !matches!(p.kind, ProblemKind::Quadratic | ProblemKind::Logistic)
        {
            return Err(config_err(format!(
                "base {:?} needs a quadratic or logistic problem",
                a.base
            )));
        }
        if !a.base.needs_objective() && p.kind == ProblemKind::Quadratic {
            return Err(config_err(format!(
                "base {:?} needs a ridge, logistic or tv problem",
                a.base
            )));
        }
        if a.base == BaseKind::CpConstant && p.kind == ProblemKind::Tv {
            return Err(config_err(
                "cp_constant needs a strongly convex dual; use pdgm on tv",
            ));
        }
        if a.mode == Mode::Guarded && a.base != BaseKind::Nesterov {
            return Err(config_err("mode guarded requires base nesterov"));
        }
        if a.base == BaseKind::Lbfgs && a.mode != Mode::None {
            return Err(config_err("lbfgs runs without acceleration (mode none)"));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        hex_digest(self.to_toml().as_bytes())
    }

    /// Hash of the problem section plus seed; runs sharing it share an optimum.
    pub fn problem_hash(&self) -> String {
        let key = format!(
            "{}\nseed = {}",
            toml::to_string(&self.problem).expect("serializes"),
            self.run.seed
        );
        hex_digest(key.as_bytes())
    }

    pub fn display_name(&self) -> String {
        self.run.name.clone().unwrap_or_else(|| {
            format!("{:?}-{:?}", self.algorithm.base, self.algorithm.mode).to_lowercase()
        })
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// Problem instance built from a [`ProblemSpec`].
#[derive(Debug, Clone)]
pub enum BuiltProblem {
    Quadratic(QuadraticProblem),
    Logistic(LogisticProblem),
    Ridge(RidgeProblem),
    Tv(TVDenoiseProblem),
}

impl BuiltProblem {
    pub fn objective(&self) -> Option<&dyn Objective> {
        match self {
            BuiltProblem::Quadratic(p) => Some(p),
            BuiltProblem::Logistic(p) => Some(p),
            _ => None,
        }
    }

    pub fn saddle(&self) -> Option<&dyn SaddlePointProblem> {
        match self {
            BuiltProblem::Logistic(p) => Some(p),
            BuiltProblem::Ridge(p) => Some(p),
            BuiltProblem::Tv(p) => Some(p),
            BuiltProblem::Quadratic(_) => None,
        }
    }
}

pub fn build_problem(spec: &ProblemSpec, seed: u64) -> Result<BuiltProblem> {
    Ok(match spec.kind {
        ProblemKind::Quadratic => BuiltProblem::Quadratic(problems::synthetic_quadratic(
            spec.dim,
            spec.condition.unwrap_or(100.0),
            seed,
        )),
        ProblemKind::Logistic => {
            let (data, labels) = match &spec.dataset {
                Some(path) => {
                    let p = problems::load_dataset(
                        path,
                        LoadOptions {
                            mu: spec.mu,
                            ..LoadOptions::default()
                        },
                    )?;
                    (p.data, p.labels)
                }
                None => problems::synthetic_logistic_data(spec.samples, spec.dim, seed),
            };
            BuiltProblem::Logistic(match spec.condition {
                Some(c) => LogisticProblem::with_kappa(data, labels, 1.0 / c),
                None => LogisticProblem::new(data, labels, spec.mu),
            })
        }
        ProblemKind::Ridge => BuiltProblem::Ridge(problems::synthetic_ridge(
            spec.samples,
            spec.dim,
            spec.mu,
            seed,
        )),
        ProblemKind::Tv => BuiltProblem::Tv(match &spec.image {
            Some(path) => TVDenoiseProblem::new(problems::read_pgm(path)?, spec.mu),
            None => problems::noisy_image(seed, spec.height, spec.width, spec.zeta, spec.mu),
        }),
    })
}

/// Result of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub name: String,
    pub config_hash: String,
    pub log: ConvergenceLog,
    /// SHA-256 over the base iterates `x_i` in order.
    pub base_digest: String,
    /// The run hit a non-finite value or a numerical failure.
    pub aborted: bool,
    pub final_point: DenseVector,
}

/// A base method seen as `x_i = g(y_{i-1})` plus its own combination rule.
trait Method {
    fn y(&self) -> &[f64];
    /// Computes `x_i` from the current `y_{i-1}`.
    fn step(&mut self) -> DenseVector;
    /// Advances with the base rule's `y_i`.
    fn accept_base(&mut self, x: DenseVector);
    /// Advances with an externally chosen `y_i`.
    fn feed_back(&mut self, y: DenseVector);
    /// `(f, resid)` at a point; `None` means use the step residual.
    fn measure(&self, point: &[f64]) -> (f64, Option<f64>);
}

struct GradientMethod<'a> {
    problem: &'a dyn Objective,
    inv_l: f64,
    beta: f64,
    y: DenseVector,
    x_prev: DenseVector,
}

impl Method for GradientMethod<'_> {
    fn y(&self) -> &[f64] {
        &self.y
    }

    fn step(&mut self) -> DenseVector {
        let mut x = self.y.clone();
        linalg::axpy(-self.inv_l, &self.problem.gradient(&self.y), &mut x);
        x
    }

    fn accept_base(&mut self, x: DenseVector) {
        let b = self.beta;
        self.y = x
            .iter()
            .zip(&self.x_prev)
            .map(|(xi, xp)| (1.0 + b) * xi - b * xp)
            .collect();
        self.x_prev = x;
    }

    fn feed_back(&mut self, y: DenseVector) {
        // momentum restarts from the fed-back point
        self.x_prev = y.clone();
        self.y = y;
    }

    fn measure(&self, point: &[f64]) -> (f64, Option<f64>) {
        (
            self.problem.value(point),
            Some(linalg::norm(&self.problem.gradient(point))),
        )
    }
}

struct PrimalDualMethod<'a> {
    problem: &'a dyn SaddlePointProblem,
    params: CPParams,
    state: CpState,
    pending: Option<CpState>,
    y: DenseVector,
}

impl Method for PrimalDualMethod<'_> {
    fn y(&self) -> &[f64] {
        &self.y
    }

    fn step(&mut self) -> DenseVector {
        let next = chambolle_pock_step(&self.state, &mut self.params, self.problem);
        let z = next.stacked();
        self.pending = Some(next);
        z
    }

    fn accept_base(&mut self, x: DenseVector) {
        self.state = self.pending.take().expect("step before accept");
        self.y = x;
    }

    fn feed_back(&mut self, y: DenseVector) {
        self.pending = None;
        self.state = CpState::from_stacked(&y, self.problem.dual_dim());
        self.y = y;
    }

    fn measure(&self, point: &[f64]) -> (f64, Option<f64>) {
        (
            self.problem.primal_value(&point[self.problem.dual_dim()..]),
            None,
        )
    }
}

fn extrapolate_window(
    window: &IterateWindow,
    algo: &AlgorithmSpec,
) -> extrapolate::Result<DenseVector> {
    let r = extrapolate::residuals(window)?;
    let c = match algo.tau {
        Some(t) => extrapolate::cna_coefficients(&r, t)?,
        None => coefficients_with_retry(&r, algo.lambda_rel)?.0,
    };
    extrapolate::extrapolate_point(window, &c.with_eta(algo.eta))
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn hash_vector(h: &mut Sha256, v: &[f64]) {
    for x in v {
        h.update(x.to_le_bytes());
    }
}

struct Recorder {
    log: ConvergenceLog,
    hasher: Sha256,
    clock: Stopwatch,
    stop: Option<f64>,
}

impl Recorder {
    fn new(run: &RunSpec) -> Self {
        Self {
            log: ConvergenceLog::default(),
            hasher: Sha256::new(),
            clock: Stopwatch::new(run.timing),
            stop: run.stop_resid,
        }
    }

    /// Returns true when the run should stop.
    fn record(&mut self, iter: usize, f: f64, resid: f64, branch: Option<bool>) -> bool {
        self.log.push(LogRecord {
            iter,
            f,
            resid,
            ms: self.clock.ms(),
            branch,
        });
        if !(f.is_finite() || f.is_nan()) || !resid.is_finite() {
            self.log.termination = Some(format!("non-finite value at iteration {iter}"));
            return true;
        }
        if self.stop.is_some_and(|t| resid <= t) {
            self.log.termination = Some(format!("resid below stop level at iteration {iter}"));
            return true;
        }
        false
    }

    fn finish(self, cfg: &ExperimentConfig, aborted: bool, final_point: DenseVector) -> RunOutput {
        RunOutput {
            name: cfg.display_name(),
            config_hash: cfg.hash(),
            log: self.log,
            base_digest: hex_digest(&self.hasher.finalize()),
            aborted,
            final_point,
        }
    }
}

fn run_method(m: &mut dyn Method, cfg: &ExperimentConfig) -> RunOutput {
    let algo = &cfg.algorithm;
    let mut rec = Recorder::new(&cfg.run);
    let mut window = IterateWindow::new(algo.window);
    let mut aborted = false;
    let mut point = m.y().to_vec();
    for i in 1..=cfg.run.iterations {
        let y_prev = m.y().to_vec();
        let x = m.step();
        if !all_finite(&x) {
            rec.log.termination = Some(format!("non-finite iterate at iteration {i}"));
            aborted = true;
            break;
        }
        hash_vector(&mut rec.hasher, &x);
        let step_resid = linalg::distance(&x, &y_prev);
        let extrapolated = match algo.mode {
            Mode::None | Mode::Guarded => {
                m.accept_base(x.clone());
                Ok(x)
            }
            Mode::Offline => {
                window.push(x.clone(), y_prev);
                m.accept_base(x);
                extrapolate_window(&window, algo)
            }
            Mode::Online => {
                window.push(x, y_prev);
                extrapolate_window(&window, algo).inspect(|y| m.feed_back(y.clone()))
            }
            Mode::Restart => {
                window.push(x.clone(), y_prev);
                if window.is_full() {
                    let y = extrapolate_window(&window, algo);
                    window.clear();
                    y.inspect(|y| m.feed_back(y.clone()))
                } else {
                    m.accept_base(x.clone());
                    Ok(x)
                }
            }
        };
        point = match extrapolated {
            Ok(p) if all_finite(&p) => p,
            Ok(_) => {
                rec.log.termination = Some(format!("non-finite extrapolation at iteration {i}"));
                aborted = true;
                break;
            }
            Err(e) => {
                rec.log.termination = Some(format!("extrapolation failed at iteration {i}: {e}"));
                aborted = true;
                break;
            }
        };
        let (f, r) = m.measure(&point);
        if rec.record(i, f, r.unwrap_or(step_resid), None) {
            aborted = !rec
                .log
                .termination
                .as_deref()
                .is_some_and(|t| t.starts_with("resid"));
            break;
        }
    }
    rec.finish(cfg, aborted, point)
}

fn run_guarded(problem: &dyn Objective, cfg: &ExperimentConfig) -> RunOutput {
    let d = problem.dim();
    let mut state = AdaptiveNesterov::new(
        NesterovParams::for_problem(problem),
        vec![0.0; d],
        cfg.algorithm.window,
        cfg.algorithm.lambda_rel,
    );
    let mut rec = Recorder::new(&cfg.run);
    let mut aborted = false;
    let mut point = vec![0.0; d];
    for i in 1..=cfg.run.iterations {
        match state.step(problem) {
            Ok(diag) if all_finite(&diag.x) => {
                hash_vector(&mut rec.hasher, &diag.x);
                let f = problem.value(&diag.x);
                let g = linalg::norm(&problem.gradient(&diag.x));
                point = diag.x;
                if rec.record(i, f, g, Some(diag.branch_taken)) {
                    aborted = !rec
                        .log
                        .termination
                        .as_deref()
                        .is_some_and(|t| t.starts_with("resid"));
                    break;
                }
            }
            Ok(_) => {
                rec.log.termination = Some(format!("non-finite iterate at iteration {i}"));
                aborted = true;
                break;
            }
            Err(e) => {
                rec.log.termination = Some(format!("extrapolation failed at iteration {i}: {e}"));
                aborted = true;
                break;
            }
        }
    }
    rec.finish(cfg, aborted, point)
}

fn run_lbfgs(problem: &dyn Objective, cfg: &ExperimentConfig) -> RunOutput {
    let mut state = LbfgsState::new(vec![0.0; problem.dim()], problem);
    let mut rec = Recorder::new(&cfg.run);
    let mut aborted = false;
    for i in 1..=cfg.run.iterations {
        match lbfgs_baseline_step(&mut state, problem) {
            Ok(()) => {}
            Err(DriverError::LineSearchFailure { halvings }) => {
                rec.log.termination = Some(format!(
                    "line search failed after {halvings} halvings at iteration {i}"
                ));
                aborted = true;
                break;
            }
            Err(e) => {
                rec.log.termination = Some(format!("{e} at iteration {i}"));
                aborted = true;
                break;
            }
        }
        hash_vector(&mut rec.hasher, &state.x);
        if rec.record(i, state.f, linalg::norm(&state.grad), None) {
            aborted = !rec
                .log
                .termination
                .as_deref()
                .is_some_and(|t| t.starts_with("resid"));
            break;
        }
        if state.converged {
            rec.log.termination = Some(format!("zero gradient at iteration {i}"));
            break;
        }
    }
    rec.finish(cfg, aborted, state.x)
}

fn cp_params(base: BaseKind, problem: &dyn SaddlePointProblem) -> CPParams {
    let norm_k = problem.operator_norm();
    let mu = problem.primal_strong_convexity();
    match base {
        BaseKind::Pdgm => CPParams::pdgm(mu, norm_k * norm_k),
        BaseKind::PdgmMomentum => CPParams::pdgm_momentum(mu, norm_k * norm_k),
        BaseKind::CpConstant => CPParams::constant(norm_k, mu, problem.dual_strong_convexity()),
        _ => unreachable!("not a primal-dual base"),
    }
}

/// Runs an experiment on an already built problem.
pub fn run_on(problem: &BuiltProblem, cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let base = cfg.algorithm.base;
    if base.needs_objective() {
        let obj = problem
            .objective()
            .ok_or_else(|| config_err("problem has no objective form"))?;
        return Ok(match (base, cfg.algorithm.mode) {
            (BaseKind::Lbfgs, _) => run_lbfgs(obj, cfg),
            (_, Mode::Guarded) => run_guarded(obj, cfg),
            _ => {
                let beta = match base {
                    BaseKind::Nesterov => NesterovParams::for_problem(obj).beta_momentum,
                    _ => 0.0,
                };
                let x0 = vec![0.0; obj.dim()];
                let mut m = GradientMethod {
                    problem: obj,
                    inv_l: 1.0 / obj.smoothness(),
                    beta,
                    y: x0.clone(),
                    x_prev: x0,
                };
                run_method(&mut m, cfg)
            }
        });
    }
    let sp = problem
        .saddle()
        .ok_or_else(|| config_err("problem has no saddle-point form"))?;
    let state = CpState::zeros(sp);
    let mut m = PrimalDualMethod {
        problem: sp,
        params: cp_params(base, sp),
        y: state.stacked(),
        state,
        pending: None,
    };
    Ok(run_method(&mut m, cfg))
}

/// Builds the problem and runs the experiment; deterministic for a fixed
/// config.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let problem = build_problem(&cfg.problem, cfg.run.seed)?;
    run_on(&problem, cfg)
}

/// Runs independent experiments in parallel; results keep the input order.
pub fn run_all(configs: &[ExperimentConfig]) -> Vec<Result<RunOutput>> {
    configs.par_iter().map(run_experiment).collect()
}

/// Minimum objective of the base method without acceleration over
/// `REFERENCE_FACTOR` times the configured iterations.
pub fn reference_value(cfg: &ExperimentConfig) -> Result<f64> {
    let mut long = cfg.clone();
    long.algorithm.mode = Mode::None;
    long.run.iterations = cfg.run.iterations * REFERENCE_FACTOR;
    long.run.stop_resid = None;
    long.run.timing = false;
    let out = run_experiment(&long)?;
    Ok(min_value(std::slice::from_ref(&out.log)))
}

/// Reference optima keyed by [`ExperimentConfig::problem_hash`].
#[derive(Debug, Default)]
pub struct ReferenceCache {
    values: HashMap<String, f64>,
}

impl ReferenceCache {
    pub fn get_or_compute(&mut self, cfg: &ExperimentConfig) -> Result<f64> {
        let key = cfg.problem_hash();
        if let Some(&v) = self.values.get(&key) {
            return Ok(v);
        }
        let v = reference_value(cfg)?;
        self.values.insert(key, v);
        Ok(v)
    }
}

/// Smallest finite `f` over all records.
pub fn min_value(logs: &[ConvergenceLog]) -> f64 {
    logs.iter()
        .flat_map(|l| l.records.iter().map(|r| r.f))
        .filter(|f| f.is_finite())
        .fold(f64::INFINITY, f64::min)
}

/// Iterations needed to reach each tolerance, per algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct ToleranceTable {
    pub tolerances: Vec<f64>,
    pub f_opt: f64,
    pub rows: Vec<(String, Vec<Option<usize>>)>,
}

/// First iteration with `f - f_opt <= eps`, per log and tolerance.
pub fn tolerance_table(
    logs: &[(String, ConvergenceLog)],
    tolerances: &[f64],
    f_opt: f64,
) -> ToleranceTable {
    let rows = logs
        .iter()
        .map(|(name, log)| {
            let counts = tolerances
                .iter()
                .map(|&eps| log.first_value_within(f_opt, eps))
                .collect();
            (name.clone(), counts)
        })
        .collect();
    ToleranceTable {
        tolerances: tolerances.to_vec(),
        f_opt,
        rows,
    }
}

impl ToleranceTable {
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| algorithm |");
        for t in &self.tolerances {
            let _ = write!(s, " {t:e} |");
        }
        s.push_str("\n|---|");
        for _ in &self.tolerances {
            s.push_str("---|");
        }
        s.push('\n');
        for (name, counts) in &self.rows {
            let _ = write!(s, "| {name} |");
            for c in counts {
                match c {
                    Some(n) => {
                        let _ = write!(s, " {n} |");
                    }
                    None => s.push_str(" N/A |"),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Writes `iter,f,resid,ms[,branch]`.
pub fn write_log_csv<W: Write>(out: W, log: &ConvergenceLog) -> csv::Result<()> {
    let with_branch = log.records.iter().any(|r| r.branch.is_some());
    let mut w = csv::Writer::from_writer(out);
    if with_branch {
        w.write_record(["iter", "f", "resid", "ms", "branch"])?;
    } else {
        w.write_record(["iter", "f", "resid", "ms"])?;
    }
    for r in &log.records {
        let mut row = vec![
            r.iter.to_string(),
            r.f.to_string(),
            r.resid.to_string(),
            r.ms.to_string(),
        ];
        if with_branch {
            row.push(match r.branch {
                Some(true) => "1".into(),
                Some(false) => "0".into(),
                None => String::new(),
            });
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Inverse of [`write_log_csv`].
pub fn read_log_csv<R: Read>(input: R) -> std::result::Result<ConvergenceLog, csv::Error> {
    let mut rd = csv::Reader::from_reader(input);
    let mut log = ConvergenceLog::default();
    let parse_err =
        |msg: String| csv::Error::from(std::io::Error::new(std::io::ErrorKind::InvalidData, msg));
    for rec in rd.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num =
            |i: usize| f64::from_str(field(i)).map_err(|e| parse_err(format!("column {i}: {e}")));
        let iter = field(0)
            .parse::<usize>()
            .map_err(|e| parse_err(format!("column 0: {e}")))?;
        let branch = match rec.get(4) {
            Some("1") => Some(true),
            Some("0") => Some(false),
            _ => None,
        };
        if log
            .records
            .last()
            .is_some_and(|l: &LogRecord| l.iter >= iter)
        {
            return Err(parse_err(format!("iteration {iter} out of order")));
        }
        log.records.push(LogRecord {
            iter,
            f: num(1)?,
            resid: num(2)?,
            ms: num(3)?,
            branch,
        });
    }
    Ok(log)
}

pub fn load_log_csv(path: &Path) -> Result<ConvergenceLog> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    read_log_csv(file).map_err(|source| BenchError::Csv {
        path: path.display().to_string(),
        source,
    })
}

/// Short stable file stem for a run.
pub fn run_file_stem(out: &RunOutput) -> String {
    format!("run-{}", &out.config_hash[..16])
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(io_err(path))
}

/// Summary markdown over the runs.
pub fn summary_markdown(runs: &[RunOutput]) -> String {
    let mut s = String::from(
        "| run | file | iterations | final f | final resid | status |\n|---|---|---|---|---|---|\n",
    );
    for r in runs {
        let (it, f, res) = r
            .log
            .last()
            .map(|l| {
                (
                    l.iter.to_string(),
                    format!("{:.6e}", l.f),
                    format!("{:.3e}", l.resid),
                )
            })
            .unwrap_or(("0".into(), "-".into(), "-".into()));
        let status = match (&r.log.termination, r.aborted) {
            (Some(t), true) => format!("aborted: {t}"),
            (Some(t), false) => t.clone(),
            (None, _) => "completed".into(),
        };
        let _ = writeln!(
            s,
            "| {} | {}.csv | {it} | {f} | {res} | {status} |",
            r.name,
            run_file_stem(r)
        );
    }
    s
}

/// Writes one CSV per run, one CSV per boundary and `summary.md`; returns the
/// written paths.
pub fn emit_reports(
    runs: &[RunOutput],
    boundaries: &[(String, NumericalRangeBoundary)],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut written = Vec::new();
    for r in runs {
        let path = out_dir.join(format!("{}.csv", run_file_stem(r)));
        let mut buf = Vec::new();
        write_log_csv(&mut buf, &r.log).map_err(|source| BenchError::Csv {
            path: path.display().to_string(),
            source,
        })?;
        write_file(&path, &buf)?;
        written.push(path);
    }
    for (name, b) in boundaries {
        let path = out_dir.join(format!("range-{name}.csv"));
        let mut buf = Vec::new();
        b.write_csv(&mut buf).map_err(|source| BenchError::Csv {
            path: path.display().to_string(),
            source,
        })?;
        write_file(&path, &buf)?;
        written.push(path);
    }
    let path = out_dir.join("summary.md");
    write_file(&path, summary_markdown(runs).as_bytes())?;
    written.push(path);
    Ok(written)
}

/// Operators accepted by the `range` command:
///
/// - `nesterov:ratio=R` the largest eigen-block at `L/mu = R`
/// - `nesterov-full:dim=D,ratio=R,seed=S` the full operator on a random quadratic
/// - `cp:rows=M,dim=D,sigma=S,tau=T,mu=U,seed=S` the primal-dual operator
/// - `gradient:dim=D,ratio=R,seed=S` the gradient step `I - A/L`
/// - `matrix:PATH` a dense matrix from a headerless CSV file
#[derive(Debug, Clone, PartialEq)]
pub enum OperatorSpec {
    NesterovBlock {
        ratio: f64,
    },
    NesterovFull {
        dim: usize,
        ratio: f64,
        seed: u64,
    },
    ChambollePock {
        rows: usize,
        dim: usize,
        sigma: f64,
        tau: f64,
        mu: f64,
        seed: u64,
    },
    Gradient {
        dim: usize,
        ratio: f64,
        seed: u64,
    },
    Matrix(PathBuf),
}

impl FromStr for OperatorSpec {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        if kind == "matrix" {
            return Ok(OperatorSpec::Matrix(PathBuf::from(rest)));
        }
        let mut kv = HashMap::new();
        for part in rest.split(',').filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| config_err(format!("expected key=value in `{part}`")))?;
            let v: f64 = v
                .parse()
                .map_err(|_| config_err(format!("`{k}` is not a number")))?;
            kv.insert(k.to_string(), v);
        }
        let get = |k: &str, default: Option<f64>| {
            kv.get(k)
                .copied()
                .or(default)
                .ok_or_else(|| config_err(format!("operator `{kind}` needs `{k}`")))
        };
        let positive = |k: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(config_err(format!("`{k}` must be positive")))
            }
        };
        let ratio = |default| -> Result<f64> {
            let r = get("ratio", default)?;
            if r >= 1.0 && r.is_finite() {
                Ok(r)
            } else {
                Err(config_err("`ratio` must be at least 1"))
            }
        };
        let count = |k: &str, default| -> Result<usize> {
            let v = get(k, Some(default))?;
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(config_err(format!("`{k}` must be a positive integer")))
            }
        };
        let seed = get("seed", Some(0.0))? as u64;
        Ok(match kind {
            "nesterov" => OperatorSpec::NesterovBlock {
                ratio: ratio(None)?,
            },
            "nesterov-full" => OperatorSpec::NesterovFull {
                dim: count("dim", 5.0)?,
                ratio: ratio(None)?,
                seed,
            },
            "gradient" => OperatorSpec::Gradient {
                dim: count("dim", 5.0)?,
                ratio: ratio(None)?,
                seed,
            },
            "cp" => OperatorSpec::ChambollePock {
                rows: count("rows", 8.0)?,
                dim: count("dim", 5.0)?,
                sigma: positive("sigma", get("sigma", Some(1.0))?)?,
                tau: positive("tau", get("tau", Some(1.0))?)?,
                mu: get("mu", Some(0.0))?.max(0.0),
                seed,
            },
            other => return Err(config_err(format!("unknown operator `{other}`"))),
        })
    }
}

fn read_matrix_csv(path: &Path) -> Result<DenseMatrix> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
        })
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    if rows.is_empty() || rows.iter().any(|r| r.len() != rows.len()) {
        return Err(config_err(format!(
            "{}: matrix must be square",
            path.display()
        )));
    }
    Ok(DenseMatrix::from_rows(&rows))
}

/// Gradient-step operator `I - A / L` of a random quadratic.
fn gradient_matrix(dim: usize, ratio: f64, seed: u64) -> DenseMatrix {
    let q = problems::synthetic_quadratic(dim, ratio, seed);
    q.gradient_iteration_matrix(1.0 / q.l_smooth)
}

impl OperatorSpec {
    pub fn build(&self) -> Result<BlockOperator> {
        Ok(match self {
            OperatorSpec::NesterovBlock { ratio } => {
                let p = NesterovParams::new(1.0, 1.0 / ratio);
                numrange::nesterov_blocks(&[1.0 - 1.0 / ratio], p.beta_momentum)?.remove(0)
            }
            OperatorSpec::NesterovFull { dim, ratio, seed } => {
                let p = NesterovParams::new(1.0, 1.0 / ratio);
                numrange::nesterov_operator(&gradient_matrix(*dim, *ratio, *seed), p.beta_momentum)?
            }
            OperatorSpec::Gradient { dim, ratio, seed } => {
                BlockOperator::generic(gradient_matrix(*dim, *ratio, *seed))
            }
            OperatorSpec::ChambollePock {
                rows,
                dim,
                sigma,
                tau,
                mu,
                seed,
            } => {
                let r = problems::synthetic_ridge(*rows, *dim, *mu, *seed);
                numrange::cp_operator(&r.a, *sigma, *tau, *mu)
            }
            OperatorSpec::Matrix(path) => BlockOperator::generic(read_matrix_csv(path)?),
        })
    }
}
