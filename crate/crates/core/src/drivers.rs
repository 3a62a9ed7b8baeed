//! Base algorithms that produce the `(X, Y)` sequences fed to extrapolation:
//! fixed-point operators, gradient descent and Nesterov momentum in the
//! `x_i = g(y_{i-1})`, `y_i = sum alpha_j x_j + beta_j y_{j-1}` template,
//! Chambolle-Pock primal-dual steps, an L-BFGS baseline, and noisy runs for
//! the perturbation analysis.

use std::collections::VecDeque;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::extrapolate::IterateWindow;
use crate::linalg::{self, DenseMatrix, DenseVector};
use crate::problems::{Objective, SaddlePointProblem};

/// Tolerance on `sum(alpha) + sum(beta) = 1`.
const CONSISTENCY_TOL: f64 = 1e-10;
pub const LBFGS_MEMORY: usize = 10;
const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 50;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DriverError {
    #[error("combination row {iteration} sums to {sum} instead of 1")]
    InconsistentCoefficients { iteration: usize, sum: f64 },
    #[error("leading coefficient of row {iteration} is zero")]
    ZeroLeadingCoefficient { iteration: usize },
    #[error("line search failed after {halvings} halvings")]
    LineSearchFailure { halvings: usize },
    #[error("non-finite iterate at iteration {iteration}")]
    NonFiniteIterate { iteration: usize },
}

pub type Result<T> = std::result::Result<T, DriverError>;

/// Affine map `g(x) = G (x - x*) + x*`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearForm {
    pub g: DenseMatrix,
    pub x_star: DenseVector,
}

impl LinearForm {
    pub fn apply(&self, x: &[f64]) -> DenseVector {
        let e = linalg::sub(x, &self.x_star);
        linalg::add(&self.g.matvec(&e), &self.x_star)
    }
}

/// The update `g` of a fixed-point iteration.
pub trait FixedPointOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> DenseVector;

    /// `(G, x*)` when `g` is affine.
    fn linear_form(&self) -> Option<&LinearForm> {
        None
    }

    /// Objective value at `x`, when the operator comes from a minimization.
    fn value(&self, _x: &[f64]) -> Option<f64> {
        None
    }
}

impl FixedPointOperator for LinearForm {
    fn dim(&self) -> usize {
        self.x_star.len()
    }

    fn apply(&self, x: &[f64]) -> DenseVector {
        LinearForm::apply(self, x)
    }

    fn linear_form(&self) -> Option<&LinearForm> {
        Some(self)
    }
}

/// `g(x) = x - step grad f(x)`.
pub struct GradientOperator<'a, P: Objective + ?Sized> {
    pub problem: &'a P,
    pub step: f64,
    linear: Option<LinearForm>,
}

impl<P: Objective + ?Sized> FixedPointOperator for GradientOperator<'_, P> {
    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn apply(&self, x: &[f64]) -> DenseVector {
        let mut out = x.to_vec();
        linalg::axpy(-self.step, &self.problem.gradient(x), &mut out);
        out
    }

    fn linear_form(&self) -> Option<&LinearForm> {
        self.linear.as_ref()
    }

    fn value(&self, x: &[f64]) -> Option<f64> {
        Some(self.problem.value(x))
    }
}

/// Gradient step operator; for quadratics the linear form `G = I - step A` is
/// filled in.
pub fn gradient_operator<P: Objective + ?Sized>(problem: &P, step: f64) -> GradientOperator<'_, P> {
    assert!(step > 0.0, "step must be positive");
    let linear = match (problem.hessian(), problem.minimizer()) {
        (Some(a), Some(x_star)) => Some(LinearForm {
            g: DenseMatrix::identity(a.rows()).sub(&a.scale(step)),
            x_star: x_star.to_vec(),
        }),
        _ => None,
    };
    GradientOperator {
        problem,
        step,
        linear,
    }
}

/// One row of the iteration template: `y_i = sum_j alpha_j x_j + beta_j y_{j-1}`,
/// stored sparsely as `(j, coefficient)` with `j` 1-based for both vectors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CombinationRow {
    pub iteration: usize,
    pub alpha: Vec<(usize, f64)>,
    pub beta: Vec<(usize, f64)>,
}

impl CombinationRow {
    pub fn sum(&self) -> f64 {
        self.alpha.iter().chain(&self.beta).map(|&(_, v)| v).sum()
    }

    /// `alpha_i^{(i)}`, the weight on the newest iterate.
    pub fn leading(&self) -> f64 {
        self.alpha
            .iter()
            .filter(|&&(j, _)| j == self.iteration)
            .map(|&(_, v)| v)
            .sum()
    }

    pub fn check(&self) -> Result<()> {
        let sum = self.sum();
        if (sum - 1.0).abs() > CONSISTENCY_TOL {
            return Err(DriverError::InconsistentCoefficients {
                iteration: self.iteration,
                sum,
            });
        }
        if self.leading() == 0.0 {
            return Err(DriverError::ZeroLeadingCoefficient {
                iteration: self.iteration,
            });
        }
        Ok(())
    }
}

/// Combination rule of a base method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaseRule {
    /// `y_i = x_i`
    Gradient,
    /// `y_i = (1 + beta) x_i - beta x_{i-1}`, with `x_0 = y_0`.
    Momentum { beta: f64 },
}

impl BaseRule {
    pub fn row(&self, i: usize) -> CombinationRow {
        assert!(i >= 1);
        match *self {
            BaseRule::Gradient => CombinationRow {
                iteration: i,
                alpha: vec![(i, 1.0)],
                beta: vec![],
            },
            BaseRule::Momentum { beta } if i == 1 => CombinationRow {
                iteration: 1,
                alpha: vec![(1, 1.0 + beta)],
                beta: vec![(1, -beta)],
            },
            BaseRule::Momentum { beta } => CombinationRow {
                iteration: i,
                alpha: vec![(i - 1, -beta), (i, 1.0 + beta)],
                beta: vec![],
            },
        }
    }
}

/// Nesterov's constants for an `L`-smooth, `mu`-strongly convex function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NesterovParams {
    pub l_smooth: f64,
    pub mu: f64,
    pub beta_momentum: f64,
}

impl NesterovParams {
    pub fn new(l_smooth: f64, mu: f64) -> Self {
        assert!(l_smooth > 0.0 && mu > 0.0 && mu <= l_smooth);
        let (sl, sm) = (l_smooth.sqrt(), mu.sqrt());
        Self {
            l_smooth,
            mu,
            beta_momentum: (sl - sm) / (sl + sm),
        }
    }

    pub fn for_problem<P: Objective + ?Sized>(p: &P) -> Self {
        Self::new(p.smoothness(), p.strong_convexity())
    }

    pub fn rule(&self) -> BaseRule {
        BaseRule::Momentum {
            beta: self.beta_momentum,
        }
    }
}

/// One step of Nesterov's method from `(x_{i-1}, y_{i-1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct NesterovStep {
    pub x: DenseVector,
    pub y: DenseVector,
    pub row: CombinationRow,
}

pub fn nesterov_step<P: Objective + ?Sized>(
    iteration: usize,
    x_prev: &[f64],
    y_prev: &[f64],
    params: &NesterovParams,
    problem: &P,
) -> NesterovStep {
    let mut x = y_prev.to_vec();
    linalg::axpy(-1.0 / params.l_smooth, &problem.gradient(y_prev), &mut x);
    let b = params.beta_momentum;
    let y: DenseVector = x
        .iter()
        .zip(x_prev)
        .map(|(xi, xp)| (1.0 + b) * xi - b * xp)
        .collect();
    NesterovStep {
        x,
        y,
        row: params.rule().row(iteration),
    }
}

/// Upper-triangular matrix with `[y_0, .., y_k] = [x_0, .., x_k] L`.
#[derive(Debug, Clone, PartialEq)]
pub struct LMatrix(pub DenseMatrix);

impl LMatrix {
    pub fn size(&self) -> usize {
        self.0.rows()
    }

    pub fn norm(&self) -> f64 {
        linalg::spectral_norm(&self.0)
    }
}

/// Builds `L` from the first `rows.len()` combination rows; the result has
/// size `rows.len() + 1` (the leading `1` is `y_0 = x_0`).
pub fn build_l(rows: &[CombinationRow]) -> Result<LMatrix> {
    let k = rows.len();
    let mut l = DenseMatrix::zeros(k + 1, k + 1);
    l[(0, 0)] = 1.0;
    for (idx, row) in rows.iter().enumerate() {
        let i = idx + 1;
        assert_eq!(row.iteration, i, "rows must be in iteration order");
        row.check()?;
        for &(j, a) in &row.alpha {
            l[(j, i)] += a;
        }
        // beta_j multiplies y_{j-1}, whose expansion is column j-1
        for &(j, b) in &row.beta {
            for r in 0..j {
                l[(r, i)] += b * l[(r, j - 1)];
            }
        }
        let col_sum: f64 = (0..=i).map(|r| l[(r, i)]).sum();
        if (col_sum - 1.0).abs() > CONSISTENCY_TOL {
            return Err(DriverError::InconsistentCoefficients {
                iteration: i,
                sum: col_sum,
            });
        }
    }
    Ok(LMatrix(l))
}

/// `L_bar_j = ||L_1|| .. ||L_j||` for `j = 1..=rows.len()`.
pub fn l_bar_products(rows: &[CombinationRow]) -> Result<Vec<f64>> {
    let full = build_l(rows)?;
    let mut acc = 1.0;
    Ok((1..=rows.len())
        .map(|j| {
            let sub = DenseMatrix::from_fn(j + 1, j + 1, |r, c| full.0[(r, c)]);
            acc *= linalg::spectral_norm(&sub);
            acc
        })
        .collect())
}

/// Per-iteration metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub iter: usize,
    pub f: f64,
    pub resid: f64,
    pub ms: f64,
    pub branch: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvergenceLog {
    pub records: Vec<LogRecord>,
    /// Set when the run stopped before its iteration budget.
    pub termination: Option<String>,
}

impl ConvergenceLog {
    pub fn push(&mut self, rec: LogRecord) {
        if let Some(last) = self.records.last() {
            assert!(rec.iter > last.iter, "log iterations must increase");
        }
        self.records.push(rec);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// First iteration whose residual is at most `tol`.
    pub fn first_resid_below(&self, tol: f64) -> Option<usize> {
        self.records.iter().find(|r| r.resid <= tol).map(|r| r.iter)
    }

    /// First iteration whose value is within `eps` of `f_opt`.
    pub fn first_value_within(&self, f_opt: f64, eps: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.f - f_opt <= eps)
            .map(|r| r.iter)
    }

    pub fn last(&self) -> Option<&LogRecord> {
        self.records.last()
    }
}

/// Wall clock for log records; disabled clocks report 0 so logs stay
/// reproducible.
#[derive(Debug, Clone, Copy)]
pub struct Stopwatch(Option<Instant>);

impl Stopwatch {
    pub fn new(enabled: bool) -> Self {
        Self(enabled.then(Instant::now))
    }

    pub fn ms(&self) -> f64 {
        self.0.map_or(0.0, |t| t.elapsed().as_secs_f64() * 1e3)
    }
}

/// I.i.d. Gaussian perturbations with `E ||e||^2 = sigma^2`.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    pub sigma: f64,
    rng: ChaCha8Rng,
}

impl NoiseModel {
    pub fn new(sigma: f64, seed: u64) -> Self {
        assert!(sigma >= 0.0);
        Self {
            sigma,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn sample(&mut self, d: usize) -> DenseVector {
        let s = self.sigma / (d as f64).sqrt();
        (0..d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                s * z
            })
            .collect()
    }
}

/// Full history of a run of the template.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `x_1 .. x_k`
    pub xs: Vec<DenseVector>,
    /// `y_0 .. y_k`
    pub ys: Vec<DenseVector>,
    pub rows: Vec<CombinationRow>,
    /// Injected `e_1 .. e_k` (all zero without noise).
    pub noise: Vec<DenseVector>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// Window over the last `n` pairs `(x_i, y_{i-1})`.
    pub fn window(&self, n: usize) -> IterateWindow {
        let k = self.len();
        let n = n.min(k).max(1);
        let mut w = IterateWindow::new(n);
        for i in (k + 1 - n)..=k {
            w.push(self.xs[i - 1].clone(), self.ys[i - 1].clone());
        }
        w
    }

    /// `R = X - Y` over all iterations.
    pub fn residual_matrix(&self) -> DenseMatrix {
        let cols: Vec<DenseVector> = self
            .xs
            .iter()
            .zip(&self.ys)
            .map(|(x, y)| linalg::sub(x, y))
            .collect();
        let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
        DenseMatrix::from_columns(&refs)
    }

    pub fn noise_matrix(&self) -> DenseMatrix {
        let refs: Vec<&[f64]> = self.noise.iter().map(Vec::as_slice).collect();
        DenseMatrix::from_columns(&refs)
    }
}

/// Runs `k` iterations of `x_i = g(y_{i-1}) + e_i`, `y_i` from `rule`.
pub fn run_iterations<O: FixedPointOperator + ?Sized>(
    op: &O,
    rule: BaseRule,
    x0: &[f64],
    k: usize,
    mut noise: Option<&mut NoiseModel>,
    timing: bool,
) -> Result<(Trajectory, ConvergenceLog)> {
    assert!(k >= 1, "need at least one iteration");
    let d = op.dim();
    assert_eq!(x0.len(), d);
    let clock = Stopwatch::new(timing);
    let mut traj = Trajectory {
        xs: Vec::with_capacity(k),
        ys: vec![x0.to_vec()],
        rows: Vec::with_capacity(k),
        noise: Vec::with_capacity(k),
    };
    let mut log = ConvergenceLog::default();
    for i in 1..=k {
        let y_prev = &traj.ys[i - 1];
        let mut x = op.apply(y_prev);
        let e = match noise.as_deref_mut() {
            Some(n) => n.sample(d),
            None => vec![0.0; d],
        };
        linalg::axpy(1.0, &e, &mut x);
        if x.iter().any(|v| !v.is_finite()) {
            log.termination = Some(format!("non-finite iterate at iteration {i}"));
            return Err(DriverError::NonFiniteIterate { iteration: i });
        }
        let resid = linalg::distance(&x, y_prev);
        let f = op.value(&x).unwrap_or(f64::NAN);
        traj.xs.push(x);
        traj.noise.push(e);
        let row = rule.row(i);
        let y = combine(&row, &traj.xs, &traj.ys, d);
        traj.ys.push(y);
        traj.rows.push(row);
        log.push(LogRecord {
            iter: i,
            f,
            resid,
            ms: clock.ms(),
            branch: None,
        });
    }
    Ok((traj, log))
}

/// `sum_j alpha_j x_j + beta_j y_{j-1}` with 1-based `j`.
pub fn combine(
    row: &CombinationRow,
    xs: &[DenseVector],
    ys: &[DenseVector],
    d: usize,
) -> DenseVector {
    let mut y = vec![0.0; d];
    for &(j, a) in &row.alpha {
        linalg::axpy(a, &xs[j - 1], &mut y);
    }
    for &(j, b) in &row.beta {
        linalg::axpy(b, &ys[j - 1], &mut y);
    }
    y
}

/// Matched clean and noisy runs of an affine operator.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationRecord {
    /// `E = [e_1 .. e_k]`
    pub e: DenseMatrix,
    /// `P = R_noisy - R_clean`
    pub p: DenseMatrix,
    pub sigma_noise: f64,
    pub rows: Vec<CombinationRow>,
}

pub fn perturbation_record(
    op: &LinearForm,
    rule: BaseRule,
    x0: &[f64],
    k: usize,
    noise: &mut NoiseModel,
) -> Result<PerturbationRecord> {
    let (clean, _) = run_iterations(op, rule, x0, k, None, false)?;
    let (noisy, _) = run_iterations(op, rule, x0, k, Some(noise), false)?;
    Ok(PerturbationRecord {
        e: noisy.noise_matrix(),
        p: noisy.residual_matrix().sub(&clean.residual_matrix()),
        sigma_noise: noise.sigma,
        rows: noisy.rows,
    })
}

fn leading_columns(m: &DenseMatrix, i: usize) -> DenseMatrix {
    DenseMatrix::from_fn(m.rows(), i, |r, c| m[(r, c)])
}

/// Checks `||P_i|| <= 2 ||E_i|| L_bar_i sum_{j=1..i} ||G||^j` for every `i`.
pub fn perturbation_bound_check(record: &PerturbationRecord, g_norm: f64, l_bars: &[f64]) -> bool {
    let k = record.e.cols();
    assert!(l_bars.len() >= k);
    let mut geometric = 0.0;
    let mut power = 1.0;
    (1..=k).all(|i| {
        power *= g_norm;
        geometric += power;
        let p = linalg::spectral_norm(&leading_columns(&record.p, i));
        let e = linalg::spectral_norm(&leading_columns(&record.e, i));
        p <= 2.0 * e * l_bars[i - 1] * geometric * (1.0 + 1e-12) + 1e-300
    })
}

/// Step parameters of the primal-dual method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CPParams {
    pub sigma: f64,
    pub tau_step: f64,
    /// Extrapolation weight on `x_{k+1} - x_k`.
    pub theta: f64,
    /// Strong convexity used by the adaptive rule.
    pub gamma: f64,
    pub delta: f64,
    /// Update `(sigma, tau)` after every step.
    pub adaptive: bool,
    /// In adaptive mode, also use the schedule's `theta_k` as momentum.
    pub adaptive_theta: bool,
}

impl CPParams {
    /// Constant optimal parameters when `g` and `f*` are `gamma`- and
    /// `delta`-strongly convex.
    pub fn constant(norm_k: f64, gamma: f64, delta: f64) -> Self {
        assert!(norm_k > 0.0 && gamma > 0.0 && delta > 0.0);
        Self {
            sigma: (gamma / delta).sqrt() / norm_k,
            tau_step: (delta / gamma).sqrt() / norm_k,
            theta: 1.0 / (1.0 + 2.0 * (gamma * delta).sqrt() / norm_k),
            gamma,
            delta,
            adaptive: false,
            adaptive_theta: false,
        }
    }

    /// Adaptive steps without momentum: `gamma = 0.2 mu`, `tau_0 = 0.02`,
    /// `sigma_0 = 4 / (tau_0 ||K||^2)`.
    pub fn pdgm(mu: f64, norm_k_sq: f64) -> Self {
        let tau0 = 0.02;
        Self {
            sigma: 4.0 / (tau0 * norm_k_sq),
            tau_step: tau0,
            theta: 0.0,
            gamma: 0.2 * mu,
            delta: 0.0,
            adaptive: true,
            adaptive_theta: false,
        }
    }

    /// Adaptive steps with momentum: `gamma = 0.7 mu`,
    /// `sigma_0 = tau_0 = 1 / ||K||`.
    pub fn pdgm_momentum(mu: f64, norm_k_sq: f64) -> Self {
        let s = 1.0 / norm_k_sq.sqrt();
        Self {
            sigma: s,
            tau_step: s,
            theta: 1.0,
            gamma: 0.7 * mu,
            delta: 0.0,
            adaptive: true,
            adaptive_theta: true,
        }
    }

    /// Applies `theta_k = (1 + 2 gamma tau_k)^{-1/2}`, `sigma /= theta_k`,
    /// `tau *= theta_k`; returns `theta_k`.
    pub fn advance(&mut self) -> f64 {
        let t = 1.0 / (1.0 + 2.0 * self.gamma * self.tau_step).sqrt();
        self.sigma /= t;
        self.tau_step *= t;
        t
    }
}

/// Primal-dual state `(y, x, x_bar)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CpState {
    pub y: DenseVector,
    pub x: DenseVector,
    pub x_bar: DenseVector,
    /// Inexact dual prox coordinates so far.
    pub prox_failures: usize,
}

impl CpState {
    pub fn new(y: DenseVector, x: DenseVector) -> Self {
        Self {
            x_bar: x.clone(),
            y,
            x,
            prox_failures: 0,
        }
    }

    pub fn zeros<P: SaddlePointProblem + ?Sized>(p: &P) -> Self {
        Self::new(vec![0.0; p.dual_dim()], vec![0.0; p.primal_dim()])
    }

    /// Concatenation `(y, x)`, the vector extrapolated by RNA.
    pub fn stacked(&self) -> DenseVector {
        let mut z = self.y.clone();
        z.extend_from_slice(&self.x);
        z
    }

    /// Inverse of [`CpState::stacked`]; `x_bar` is reset to `x`.
    pub fn from_stacked(z: &[f64], dual_dim: usize) -> Self {
        Self::new(z[..dual_dim].to_vec(), z[dual_dim..].to_vec())
    }
}

/// `y+ = Prox_{f*}^sigma(y + sigma K x_bar)`, `x+ = Prox_g^tau(x - tau K^T y+)`,
/// `x_bar+ = x+ + theta (x+ - x)`; adaptive parameters are advanced afterwards.
pub fn chambolle_pock_step<P: SaddlePointProblem + ?Sized>(
    state: &CpState,
    params: &mut CPParams,
    problem: &P,
) -> CpState {
    let (sigma, tau) = (params.sigma, params.tau_step);
    let mut v = state.y.clone();
    linalg::axpy(sigma, &problem.apply_k(&state.x_bar), &mut v);
    let (y, failures) = problem.prox_dual(&v, sigma);
    let mut u = state.x.clone();
    linalg::axpy(-tau, &problem.apply_kt(&y), &mut u);
    let x = problem.prox_primal(&u, tau);
    let theta = if params.adaptive {
        let t = params.advance();
        if params.adaptive_theta {
            t
        } else {
            params.theta
        }
    } else {
        params.theta
    };
    let x_bar = x
        .iter()
        .zip(&state.x)
        .map(|(a, b)| a + theta * (a - b))
        .collect();
    CpState {
        y,
        x,
        x_bar,
        prox_failures: state.prox_failures + failures,
    }
}

/// Prox of the conjugate through Moreau's identity:
/// `Prox_{f*}^{1/tau}(y / tau) = (y - Prox_f^tau(y)) / tau`.
pub fn moreau_conjugate_prox(
    prox_f: impl Fn(&[f64], f64) -> DenseVector,
    tau_step: f64,
    y: &[f64],
) -> DenseVector {
    assert!(tau_step > 0.0);
    let p = prox_f(y, tau_step);
    y.iter().zip(&p).map(|(a, b)| (a - b) / tau_step).collect()
}

/// L-BFGS iterate with its curvature memory.
#[derive(Debug, Clone)]
pub struct LbfgsState {
    pub x: DenseVector,
    pub f: f64,
    pub grad: DenseVector,
    pub converged: bool,
    s: VecDeque<DenseVector>,
    y: VecDeque<DenseVector>,
}

impl LbfgsState {
    pub fn new<P: Objective + ?Sized>(x: DenseVector, problem: &P) -> Self {
        let f = problem.value(&x);
        let grad = problem.gradient(&x);
        Self {
            x,
            f,
            grad,
            converged: false,
            s: VecDeque::new(),
            y: VecDeque::new(),
        }
    }

    pub fn memory_len(&self) -> usize {
        self.s.len()
    }

    /// Two-loop recursion for `-H grad`.
    pub fn direction(&self) -> DenseVector {
        let m = self.s.len();
        let mut q = self.grad.clone();
        let mut alphas = vec![0.0; m];
        let rho: Vec<f64> = (0..m)
            .map(|i| 1.0 / linalg::dot(&self.y[i], &self.s[i]))
            .collect();
        for i in (0..m).rev() {
            alphas[i] = rho[i] * linalg::dot(&self.s[i], &q);
            linalg::axpy(-alphas[i], &self.y[i], &mut q);
        }
        if m > 0 {
            let gamma = linalg::dot(&self.s[m - 1], &self.y[m - 1])
                / linalg::dot(&self.y[m - 1], &self.y[m - 1]);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for i in 0..m {
            let b = rho[i] * linalg::dot(&self.y[i], &q);
            linalg::axpy(alphas[i] - b, &self.s[i], &mut q);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }
}

/// One L-BFGS step with Armijo backtracking
/// `f(x + t d) <= f(x) + c t grad^T d`, halving `t` from 1.
pub fn lbfgs_baseline_step<P: Objective + ?Sized>(
    state: &mut LbfgsState,
    problem: &P,
) -> Result<()> {
    if linalg::norm(&state.grad) == 0.0 {
        state.converged = true;
        return Ok(());
    }
    let mut d = state.direction();
    let mut slope = linalg::dot(&state.grad, &d);
    if slope >= 0.0 {
        // memory produced a non-descent direction; restart from steepest descent
        state.s.clear();
        state.y.clear();
        d = state.grad.iter().map(|v| -v).collect();
        slope = -linalg::dot(&state.grad, &state.grad);
    }
    let mut t = 1.0;
    for _ in 0..=MAX_HALVINGS {
        let mut x_new = state.x.clone();
        linalg::axpy(t, &d, &mut x_new);
        let f_new = problem.value(&x_new);
        if f_new <= state.f + ARMIJO_C * t * slope {
            let g_new = problem.gradient(&x_new);
            let s = linalg::sub(&x_new, &state.x);
            let yv = linalg::sub(&g_new, &state.grad);
            if linalg::dot(&s, &yv) > 1e-16 * linalg::norm(&s) * linalg::norm(&yv) {
                if state.s.len() == LBFGS_MEMORY {
                    state.s.pop_front();
                    state.y.pop_front();
                }
                state.s.push_back(s);
                state.y.push_back(yv);
            }
            state.x = x_new;
            state.f = f_new;
            state.grad = g_new;
            return Ok(());
        }
        t *= 0.5;
    }
    Err(DriverError::LineSearchFailure {
        halvings: MAX_HALVINGS,
    })
}
