//! Test problems with their oracles: quadratics with a prescribed spectrum,
//! l2-regularized logistic regression, ridge regression in saddle-point form
//! and total-variation denoising.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::linalg::{self, DenseMatrix, DenseVector};

/// Newton iterations allowed per coordinate in [`logistic_dual_prox`].
pub const DUAL_PROX_MAX_ITER: usize = 100;
/// `||grad||^2` of the forward-difference operator on images.
pub const TV_GRAD_NORM_SQ: f64 = 8.0;
/// Strong convexity of the ridge loss conjugate.
pub const RIDGE_DUAL_STRONG_CONVEXITY: f64 = 1.0;
/// Strong convexity of the logistic loss conjugate.
pub const LOGISTIC_DUAL_STRONG_CONVEXITY: f64 = 4.0;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("dataset has no samples")]
    EmptyDataset,
}

/// Smooth, strongly convex objective with first-order oracles.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> DenseVector;
    /// Lipschitz constant of the gradient.
    fn smoothness(&self) -> f64;
    /// Strong convexity parameter.
    fn strong_convexity(&self) -> f64;

    /// Constant Hessian, for quadratics.
    fn hessian(&self) -> Option<&DenseMatrix> {
        None
    }

    /// Known minimizer, when available in closed form.
    fn minimizer(&self) -> Option<&[f64]> {
        None
    }
}

/// `f(x) = 1/2 (x - x*)^T A (x - x*)`.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    pub a: DenseMatrix,
    /// `b = A x*`, so that `grad f(x) = A x - b`.
    pub b: DenseVector,
    pub mu: f64,
    pub l_smooth: f64,
    pub x_star: DenseVector,
}

impl QuadraticProblem {
    /// Builds the problem from an SPD `A` and its minimizer.
    pub fn new(a: DenseMatrix, x_star: DenseVector) -> linalg::Result<Self> {
        let ext = linalg::sym_eig_extreme(&a)?;
        let b = a.matvec(&x_star);
        Ok(Self {
            a,
            b,
            mu: ext.min,
            l_smooth: ext.max,
            x_star,
        })
    }

    /// `A = Q diag(spectrum) Q^T` with a random orthogonal `Q`.
    pub fn from_spectrum(spectrum: &[f64], x_star: DenseVector, rng: &mut impl Rng) -> Self {
        let d = spectrum.len();
        assert_eq!(x_star.len(), d);
        let q = random_orthogonal(d, rng);
        let mut a = DenseMatrix::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let v: f64 = (0..d).map(|k| q[(i, k)] * spectrum[k] * q[(j, k)]).sum();
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        let b = a.matvec(&x_star);
        let (mu, l) = spectrum
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| {
                (lo.min(s), hi.max(s))
            });
        Self {
            a,
            b,
            mu,
            l_smooth: l,
            x_star,
        }
    }

    /// `mu / L`.
    pub fn kappa(&self) -> f64 {
        self.mu / self.l_smooth
    }

    /// `I - step A`.
    pub fn gradient_iteration_matrix(&self, step: f64) -> DenseMatrix {
        DenseMatrix::identity(self.a.rows()).sub(&self.a.scale(step))
    }
}

impl Objective for QuadraticProblem {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let e = linalg::sub(x, &self.x_star);
        0.5 * linalg::dot(&e, &self.a.matvec(&e))
    }

    fn gradient(&self, x: &[f64]) -> DenseVector {
        let e = linalg::sub(x, &self.x_star);
        self.a.matvec(&e)
    }

    fn smoothness(&self) -> f64 {
        self.l_smooth
    }

    fn strong_convexity(&self) -> f64 {
        self.mu
    }

    fn hessian(&self) -> Option<&DenseMatrix> {
        Some(&self.a)
    }

    fn minimizer(&self) -> Option<&[f64]> {
        Some(&self.x_star)
    }
}

/// Haar-ish random orthogonal matrix: Gram-Schmidt on a Gaussian matrix.
pub fn random_orthogonal(d: usize, rng: &mut impl Rng) -> DenseMatrix {
    let mut cols: Vec<DenseVector> = Vec::with_capacity(d);
    while cols.len() < d {
        let mut v: DenseVector = (0..d)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        // two passes keep the basis orthogonal to working precision
        for _ in 0..2 {
            for c in &cols {
                let p = linalg::dot(c, &v);
                linalg::axpy(-p, c, &mut v);
            }
        }
        let n = linalg::norm(&v);
        if n > 1e-8 {
            cols.push(linalg::scaled(&v, 1.0 / n));
        }
    }
    let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    DenseMatrix::from_columns(&refs)
}

fn random_unit(d: usize, rng: &mut impl Rng) -> DenseVector {
    loop {
        let v: DenseVector = (0..d)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let n = linalg::norm(&v);
        if n > 1e-12 {
            return linalg::scaled(&v, 1.0 / n);
        }
    }
}

/// Quadratic with `L = 1` and spectrum log-uniform in `[1/condition, 1]`,
/// both endpoints included; `x*` is a random unit vector.
pub fn synthetic_quadratic(d: usize, condition: f64, seed: u64) -> QuadraticProblem {
    assert!(condition >= 1.0, "condition must be at least 1");
    assert!(d >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = (1.0 / condition).ln();
    let mut spectrum: Vec<f64> = (0..d)
        .map(|i| match i {
            0 => 1.0 / condition,
            1 => 1.0,
            _ if lo == 0.0 => 1.0,
            _ => rng.random_range(lo..0.0).exp(),
        })
        .collect();
    if d == 1 {
        spectrum[0] = 1.0;
    }
    let x_star = random_unit(d, &mut rng);
    let mut p = QuadraticProblem::from_spectrum(&spectrum, x_star, &mut rng);
    if condition == 1.0 {
        p.a = DenseMatrix::identity(d);
        p.b = p.x_star.clone();
    }
    p
}

/// `f(x) = sum_i log(1 + exp(-b_i a_i^T x)) + mu/2 ||x||^2`.
#[derive(Debug, Clone)]
pub struct LogisticProblem {
    pub data: DenseMatrix,
    pub labels: DenseVector,
    pub mu: f64,
    l_smooth: f64,
}

/// `log(1 + exp(t))` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// `1 / (1 + exp(-t))` without overflow.
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl LogisticProblem {
    pub fn new(data: DenseMatrix, labels: DenseVector, mu: f64) -> Self {
        assert_eq!(data.rows(), labels.len());
        assert!(
            labels.iter().all(|&b| b == 1.0 || b == -1.0),
            "labels must be +1 or -1"
        );
        assert!(mu >= 0.0);
        let s = linalg::spectral_norm(&data);
        Self {
            data,
            labels,
            mu,
            l_smooth: s * s / 4.0 + mu,
        }
    }

    /// Same data, with `mu` chosen so that `mu / L` equals `kappa`.
    pub fn with_kappa(data: DenseMatrix, labels: DenseVector, kappa: f64) -> Self {
        assert!(kappa > 0.0 && kappa < 1.0);
        let s = linalg::spectral_norm(&data);
        let mu = kappa * s * s / 4.0 / (1.0 - kappa);
        Self::new(data, labels, mu)
    }

    pub fn samples(&self) -> usize {
        self.data.rows()
    }

    /// Margins `b_i a_i^T x`.
    fn margins(&self, x: &[f64]) -> DenseVector {
        let ax = self.data.matvec(x);
        ax.iter().zip(&self.labels).map(|(v, b)| v * b).collect()
    }

    /// The data term alone, `f(Ax)`.
    pub fn loss(&self, x: &[f64]) -> f64 {
        self.margins(x).iter().map(|&m| softplus(-m)).sum()
    }
}

impl Objective for LogisticProblem {
    fn dim(&self) -> usize {
        self.data.cols()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.loss(x) + 0.5 * self.mu * linalg::dot(x, x)
    }

    fn gradient(&self, x: &[f64]) -> DenseVector {
        let w: DenseVector = self
            .margins(x)
            .iter()
            .zip(&self.labels)
            .map(|(&m, &b)| -b * sigmoid(-m))
            .collect();
        let mut g = self.data.tmatvec(&w);
        linalg::axpy(self.mu, x, &mut g);
        g
    }

    fn smoothness(&self) -> f64 {
        self.l_smooth
    }

    fn strong_convexity(&self) -> f64 {
        self.mu
    }
}

/// Gaussian features with rows scaled to unit norm; labels from a random
/// linear model with 10% label noise.
pub fn synthetic_logistic_data(n: usize, d: usize, seed: u64) -> (DenseMatrix, DenseVector) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random_unit(d, &mut rng);
    let mut data = DenseMatrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let row = random_unit(d, &mut rng);
        let mut b = if linalg::dot(&row, &w) >= 0.0 {
            1.0
        } else {
            -1.0
        };
        if rng.random::<f64>() < 0.1 {
            b = -b;
        }
        labels.push(b);
        for j in 0..d {
            data[(i, j)] = row[j];
        }
    }
    (data, labels)
}

/// Options for [`load_dataset`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadOptions {
    /// Scale each sample to unit norm.
    pub normalize_rows: bool,
    /// Rescale the whole matrix so that `||A^T A|| = 1`.
    pub unit_spectral_norm: bool,
    pub mu: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            normalize_rows: true,
            unit_spectral_norm: false,
            mu: 1e-2,
        }
    }
}

/// Parses `label idx:val ...` lines with 1-based feature indices. Blank lines
/// and `#` comments are skipped.
pub fn parse_dataset(text: &str) -> Result<(DenseMatrix, DenseVector), DataError> {
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut width = 0;
    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| DataError::Parse {
            line: line_no,
            message,
        };
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().expect("nonempty line has a token");
        let label: f64 = label_tok
            .parse()
            .map_err(|_| err(format!("bad label {label_tok:?}")))?;
        let label = if label > 0.0 {
            1.0
        } else if label < 0.0 {
            -1.0
        } else {
            return Err(err("label must be nonzero".into()));
        };
        let mut entries: Vec<(usize, f64)> = Vec::new();
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| err(format!("expected idx:val, got {tok:?}")))?;
            let idx: usize = idx.parse().map_err(|_| err(format!("bad index {idx:?}")))?;
            if idx == 0 {
                return Err(err("feature indices are 1-based".into()));
            }
            let val: f64 = val.parse().map_err(|_| err(format!("bad value {val:?}")))?;
            if !val.is_finite() {
                return Err(err(format!("non-finite value {val}")));
            }
            if entries.iter().any(|&(i, _)| i == idx - 1) {
                return Err(err(format!("duplicate feature index {idx}")));
            }
            entries.push((idx - 1, val));
            width = width.max(idx);
        }
        rows.push(entries);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    let mut data = DenseMatrix::zeros(rows.len(), width);
    for (i, entries) in rows.iter().enumerate() {
        for &(j, v) in entries {
            data[(i, j)] = v;
        }
    }
    Ok((data, labels))
}

/// Reads a sparse classification text file into a [`LogisticProblem`].
pub fn load_dataset(path: &Path, opts: LoadOptions) -> Result<LogisticProblem, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let (mut data, labels) = parse_dataset(&text)?;
    if opts.normalize_rows {
        for i in 0..data.rows() {
            let n = linalg::norm(data.row(i));
            if n > 0.0 {
                for j in 0..data.cols() {
                    data[(i, j)] /= n;
                }
            }
        }
    }
    if opts.unit_spectral_norm {
        let s = linalg::spectral_norm(&data);
        if s > 0.0 {
            data = data.scale(1.0 / s);
        }
    }
    Ok(LogisticProblem::new(data, labels, opts.mu))
}

/// Inverse of [`parse_dataset`]; zero entries are omitted.
pub fn format_dataset(data: &DenseMatrix, labels: &[f64]) -> String {
    let mut out = String::new();
    for (i, &b) in labels.iter().enumerate() {
        out.push_str(if b > 0.0 { "+1" } else { "-1" });
        for (j, &v) in data.row(i).iter().enumerate() {
            if v != 0.0 {
                write!(out, " {}:{:?}", j + 1, v).expect("writing to a String");
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_dataset(path: &Path, data: &DenseMatrix, labels: &[f64]) -> Result<(), DataError> {
    fs::write(path, format_dataset(data, labels)).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Result of [`logistic_dual_prox`].
#[derive(Debug, Clone, PartialEq)]
pub struct DualProx {
    pub value: DenseVector,
    /// Coordinates whose Newton solve missed the tolerance.
    pub failures: usize,
}

/// `Prox_{sigma f*}(z)` for `f(u) = sum_i log(1 + exp(-b_i u_i))`.
///
/// Writing `s_i = -b_i t_i` with `t_i` in `(0, 1)`, each coordinate solves
/// `sigma logit(t) + t + b z = 0`, which is increasing in `t`. Newton steps
/// that leave the current bracket are replaced by bisection.
pub fn logistic_dual_prox(z: &[f64], labels: &[f64], sigma: f64, tol: f64) -> DualProx {
    assert_eq!(z.len(), labels.len());
    assert!(sigma > 0.0);
    let mut failures = 0;
    let value = z
        .iter()
        .zip(labels)
        .map(|(&zi, &b)| {
            let (t, ok) = logistic_dual_coordinate(b * zi, sigma, tol);
            if !ok {
                failures += 1;
            }
            -b * t
        })
        .collect();
    DualProx { value, failures }
}

fn logistic_dual_coordinate(bz: f64, sigma: f64, tol: f64) -> (f64, bool) {
    let phi = |t: f64| sigma * (t / (1.0 - t)).ln() + t + bz;
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut t = (-bz).clamp(1e-3, 1.0 - 1e-3);
    for _ in 0..DUAL_PROX_MAX_ITER {
        let f = phi(t);
        if f.abs() <= tol {
            return (t, true);
        }
        if f > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let df = sigma / (t * (1.0 - t)) + 1.0;
        let newton = t - f / df;
        t = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= f64::EPSILON {
            return (t, phi(t).abs() <= tol.max(1e-8));
        }
    }
    (t, phi(t).abs() <= tol)
}

/// Minimization problem `min_x f(K x) + g(x)` with proximal oracles for `f*`
/// and `g`, as used by the primal-dual driver.
pub trait SaddlePointProblem: Sync {
    fn primal_dim(&self) -> usize;
    fn dual_dim(&self) -> usize;
    /// `K x`
    fn apply_k(&self, x: &[f64]) -> DenseVector;
    /// `K^T y`
    fn apply_kt(&self, y: &[f64]) -> DenseVector;
    /// `Prox_{sigma f*}(y)`; the count is the number of inexact coordinates.
    fn prox_dual(&self, y: &[f64], sigma: f64) -> (DenseVector, usize);
    /// `Prox_{tau g}(x)`
    fn prox_primal(&self, x: &[f64], tau: f64) -> DenseVector;
    fn primal_value(&self, x: &[f64]) -> f64;
    /// `||K||`
    fn operator_norm(&self) -> f64;
    /// Strong convexity of `g`.
    fn primal_strong_convexity(&self) -> f64;
    /// Strong convexity of `f*`.
    fn dual_strong_convexity(&self) -> f64;
}

/// Ridge regression `min_x 1/2 ||A x - b||^2 + mu/2 ||x||^2`.
#[derive(Debug, Clone)]
pub struct RidgeProblem {
    pub a: DenseMatrix,
    pub b: DenseVector,
    pub mu: f64,
    norm_a: f64,
}

impl RidgeProblem {
    pub fn new(a: DenseMatrix, b: DenseVector, mu: f64) -> Self {
        assert_eq!(a.rows(), b.len());
        let norm_a = linalg::spectral_norm(&a);
        Self { a, b, mu, norm_a }
    }

    /// Solves `(A^T A + mu I) x = A^T b`.
    pub fn solution(&self) -> linalg::Result<DenseVector> {
        linalg::sym_solve_shifted(&self.a.gram(), self.mu, &self.a.tmatvec(&self.b))
    }
}

/// Gaussian `A` (`m x d`) scaled to `||A||_2 = 1` and a Gaussian `b`.
pub fn synthetic_ridge(m: usize, d: usize, mu: f64, seed: u64) -> RidgeProblem {
    assert!(m >= 1 && d >= 1 && mu >= 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DenseMatrix::from_fn(m, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let a = a.scale(1.0 / linalg::spectral_norm(&a));
    let b: DenseVector = (0..m)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    RidgeProblem::new(a, b, mu)
}

impl SaddlePointProblem for RidgeProblem {
    fn primal_dim(&self) -> usize {
        self.a.cols()
    }

    fn dual_dim(&self) -> usize {
        self.a.rows()
    }

    fn apply_k(&self, x: &[f64]) -> DenseVector {
        self.a.matvec(x)
    }

    fn apply_kt(&self, y: &[f64]) -> DenseVector {
        self.a.tmatvec(y)
    }

    fn prox_dual(&self, y: &[f64], sigma: f64) -> (DenseVector, usize) {
        let v = y
            .iter()
            .zip(&self.b)
            .map(|(yi, bi)| (yi - sigma * bi) / (1.0 + sigma))
            .collect();
        (v, 0)
    }

    fn prox_primal(&self, x: &[f64], tau: f64) -> DenseVector {
        linalg::scaled(x, 1.0 / (1.0 + tau * self.mu))
    }

    fn primal_value(&self, x: &[f64]) -> f64 {
        let r = linalg::sub(&self.a.matvec(x), &self.b);
        0.5 * linalg::dot(&r, &r) + 0.5 * self.mu * linalg::dot(x, x)
    }

    fn operator_norm(&self) -> f64 {
        self.norm_a
    }

    fn primal_strong_convexity(&self) -> f64 {
        self.mu
    }

    fn dual_strong_convexity(&self) -> f64 {
        RIDGE_DUAL_STRONG_CONVEXITY
    }
}

impl SaddlePointProblem for LogisticProblem {
    fn primal_dim(&self) -> usize {
        self.data.cols()
    }

    fn dual_dim(&self) -> usize {
        self.data.rows()
    }

    fn apply_k(&self, x: &[f64]) -> DenseVector {
        self.data.matvec(x)
    }

    fn apply_kt(&self, y: &[f64]) -> DenseVector {
        self.data.tmatvec(y)
    }

    fn prox_dual(&self, y: &[f64], sigma: f64) -> (DenseVector, usize) {
        let p = logistic_dual_prox(y, &self.labels, sigma, 1e-12);
        (p.value, p.failures)
    }

    fn prox_primal(&self, x: &[f64], tau: f64) -> DenseVector {
        linalg::scaled(x, 1.0 / (1.0 + tau * self.mu))
    }

    fn primal_value(&self, x: &[f64]) -> f64 {
        self.value(x)
    }

    fn operator_norm(&self) -> f64 {
        linalg::spectral_norm(&self.data)
    }

    fn primal_strong_convexity(&self) -> f64 {
        self.mu
    }

    fn dual_strong_convexity(&self) -> f64 {
        LOGISTIC_DUAL_STRONG_CONVEXITY
    }
}

/// Grayscale image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub h: usize,
    pub w: usize,
    pub data: DenseVector,
}

impl Image {
    pub fn new(h: usize, w: usize, data: DenseVector) -> Self {
        assert_eq!(data.len(), h * w);
        Self { h, w, data }
    }

    pub fn filled(h: usize, w: usize, v: f64) -> Self {
        Self::new(h, w, vec![v; h * w])
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.w + j]
    }
}

/// Two-channel field on an `h x w` grid, stored as `[dx..., dy...]` where
/// `dx` differences along rows (`j`) and `dy` along columns (`i`).
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub h: usize,
    pub w: usize,
    pub data: DenseVector,
}

impl GradientField {
    pub fn new(h: usize, w: usize, data: DenseVector) -> Self {
        assert_eq!(data.len(), 2 * h * w);
        Self { h, w, data }
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self::new(h, w, vec![0.0; 2 * h * w])
    }
}

/// Forward differences with Neumann boundary.
pub fn tv_gradient_raw(h: usize, w: usize, x: &[f64]) -> DenseVector {
    let n = h * w;
    let mut out = vec![0.0; 2 * n];
    for i in 0..h {
        for j in 0..w {
            let k = i * w + j;
            if j + 1 < w {
                out[k] = x[k + 1] - x[k];
            }
            if i + 1 < h {
                out[n + k] = x[k + w] - x[k];
            }
        }
    }
    out
}

/// Negative adjoint of [`tv_gradient_raw`].
pub fn tv_divergence_raw(h: usize, w: usize, p: &[f64]) -> DenseVector {
    let n = h * w;
    let mut out = vec![0.0; n];
    for i in 0..h {
        for j in 0..w {
            let k = i * w + j;
            let mut v = 0.0;
            if j + 1 < w {
                v += p[k];
            }
            if j > 0 {
                v -= p[k - 1];
            }
            if i + 1 < h {
                v += p[n + k];
            }
            if i > 0 {
                v -= p[n + k - w];
            }
            out[k] = v;
        }
    }
    out
}

pub fn tv_gradient(image: &Image) -> GradientField {
    assert!(image.h >= 2 && image.w >= 2);
    GradientField::new(
        image.h,
        image.w,
        tv_gradient_raw(image.h, image.w, &image.data),
    )
}

pub fn tv_divergence(field: &GradientField) -> Image {
    Image::new(
        field.h,
        field.w,
        tv_divergence_raw(field.h, field.w, &field.data),
    )
}

/// Pointwise projection `p_ij / max(1, |p_ij|)`.
pub fn tv_dual_prox_raw(n: usize, p: &[f64]) -> DenseVector {
    let mut out = p.to_vec();
    for k in 0..n {
        let m = (p[k] * p[k] + p[n + k] * p[n + k]).sqrt();
        if m > 1.0 {
            out[k] /= m;
            out[n + k] /= m;
        }
    }
    out
}

pub fn tv_dual_prox(field: &GradientField) -> GradientField {
    GradientField::new(
        field.h,
        field.w,
        tv_dual_prox_raw(field.h * field.w, &field.data),
    )
}

/// `sum_ij |(grad x)_ij|`
pub fn total_variation(h: usize, w: usize, x: &[f64]) -> f64 {
    let g = tv_gradient_raw(h, w, x);
    let n = h * w;
    (0..n)
        .map(|k| (g[k] * g[k] + g[n + k] * g[n + k]).sqrt())
        .sum()
}

/// `min_x ||grad x||_1 + mu/2 ||x - b||^2`.
#[derive(Debug, Clone)]
pub struct TVDenoiseProblem {
    pub noisy: Image,
    pub mu: f64,
    pub truth: Option<Image>,
}

impl TVDenoiseProblem {
    pub fn new(noisy: Image, mu: f64) -> Self {
        assert!(noisy.h >= 2 && noisy.w >= 2);
        Self {
            noisy,
            mu,
            truth: None,
        }
    }

    pub fn grad_norm_sq(&self) -> f64 {
        TV_GRAD_NORM_SQ
    }
}

pub fn tv_primal_value(x: &Image, problem: &TVDenoiseProblem) -> f64 {
    assert_eq!((x.h, x.w), (problem.noisy.h, problem.noisy.w));
    let d = linalg::sub(&x.data, &problem.noisy.data);
    total_variation(x.h, x.w, &x.data) + 0.5 * problem.mu * linalg::dot(&d, &d)
}

impl SaddlePointProblem for TVDenoiseProblem {
    fn primal_dim(&self) -> usize {
        self.noisy.data.len()
    }

    fn dual_dim(&self) -> usize {
        2 * self.noisy.data.len()
    }

    fn apply_k(&self, x: &[f64]) -> DenseVector {
        tv_gradient_raw(self.noisy.h, self.noisy.w, x)
    }

    fn apply_kt(&self, y: &[f64]) -> DenseVector {
        let mut d = tv_divergence_raw(self.noisy.h, self.noisy.w, y);
        d.iter_mut().for_each(|v| *v = -*v);
        d
    }

    fn prox_dual(&self, y: &[f64], _sigma: f64) -> (DenseVector, usize) {
        (tv_dual_prox_raw(self.noisy.data.len(), y), 0)
    }

    fn prox_primal(&self, x: &[f64], tau: f64) -> DenseVector {
        let s = tau * self.mu;
        x.iter()
            .zip(&self.noisy.data)
            .map(|(xi, bi)| (xi + s * bi) / (1.0 + s))
            .collect()
    }

    fn primal_value(&self, x: &[f64]) -> f64 {
        let d = linalg::sub(x, &self.noisy.data);
        total_variation(self.noisy.h, self.noisy.w, x) + 0.5 * self.mu * linalg::dot(&d, &d)
    }

    fn operator_norm(&self) -> f64 {
        TV_GRAD_NORM_SQ.sqrt()
    }

    fn primal_strong_convexity(&self) -> f64 {
        self.mu
    }

    fn dual_strong_convexity(&self) -> f64 {
        0.0
    }
}

/// Piecewise-constant test image (two to four rectangles on a dark
/// background) plus `N(0, zeta^2)` noise, clipped to `[0, 1]`.
pub fn noisy_image(seed: u64, h: usize, w: usize, zeta: f64, mu: f64) -> TVDenoiseProblem {
    assert!(zeta >= 0.0);
    assert!(h >= 2 && w >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut truth = Image::filled(h, w, 0.1);
    let count = rng.random_range(2..=4);
    for _ in 0..count {
        let i0 = rng.random_range(0..h - 1);
        let j0 = rng.random_range(0..w - 1);
        let i1 = rng.random_range(i0 + 1..=h);
        let j1 = rng.random_range(j0 + 1..=w);
        let level = rng.random_range(0.3..0.9);
        for i in i0..i1 {
            for j in j0..j1 {
                truth.data[i * w + j] = level;
            }
        }
    }
    let noisy: DenseVector = truth
        .data
        .iter()
        .map(|&v| {
            if zeta == 0.0 {
                v
            } else {
                (v + zeta * rng.sample::<f64, _>(StandardNormal)).clamp(0.0, 1.0)
            }
        })
        .collect();
    TVDenoiseProblem {
        noisy: Image::new(h, w, noisy),
        mu,
        truth: Some(truth),
    }
}

/// Reads a PGM image (`P2` or `P5`, 8-bit) scaled to `[0, 1]`.
pub fn read_pgm(path: &Path) -> Result<Image, DataError> {
    let bytes = fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_pgm(&bytes)
}

pub fn parse_pgm(bytes: &[u8]) -> Result<Image, DataError> {
    let perr = |message: &str| DataError::Parse {
        line: 0,
        message: message.to_string(),
    };
    let mut pos = 0;
    let mut header = Vec::new();
    while header.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(perr("truncated PGM header"));
        }
        header.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    let magic = header[0].as_str();
    let parse = |s: &str| s.parse::<usize>().map_err(|_| perr("bad PGM header field"));
    let (w, h, maxval) = (parse(&header[1])?, parse(&header[2])?, parse(&header[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(perr("only 8-bit PGM is supported"));
    }
    let scale = maxval as f64;
    let data: DenseVector = match magic {
        "P5" => {
            pos += 1;
            let raw = bytes
                .get(pos..pos + w * h)
                .ok_or_else(|| perr("truncated P5 data"))?;
            raw.iter().map(|&b| b as f64 / scale).collect()
        }
        "P2" => {
            let text = String::from_utf8_lossy(&bytes[pos..]);
            let vals: Result<Vec<f64>, _> = text
                .split_whitespace()
                .take(w * h)
                .map(|t| t.parse::<f64>().map(|v| v / scale))
                .collect();
            let vals = vals.map_err(|_| perr("bad P2 sample"))?;
            if vals.len() != w * h {
                return Err(perr("truncated P2 data"));
            }
            vals
        }
        _ => return Err(perr("not a P2/P5 PGM file")),
    };
    Ok(Image::new(h, w, data))
}

/// Writes a binary (`P5`) PGM, clipping to `[0, 1]`.
pub fn write_pgm(path: &Path, image: &Image) -> Result<(), DataError> {
    let mut bytes = format!("P5\n{} {}\n255\n", image.w, image.h).into_bytes();
    bytes.extend(
        image
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    fs::write(path, bytes).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> DenseVector {
        (0..x.len())
            .map(|i| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += h;
                xm[i] -= h;
                (f(&xp) - f(&xm)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn quadratic_condition_one_is_scaled_identity() {
        let p = synthetic_quadratic(4, 1.0, 0);
        assert_eq!(p.a, DenseMatrix::identity(4));
    }

    #[test]
    fn quadratic_two_dim_hits_endpoints() {
        let p = synthetic_quadratic(2, 4.0, 3);
        let e = linalg::sym_eigen(&p.a).unwrap();
        assert!((e.values[0] - 0.25).abs() < 1e-14);
        assert!((e.values[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn quadratic_gradient_vanishes_at_minimizer() {
        let p = synthetic_quadratic(12, 100.0, 7);
        assert!(linalg::norm(&p.gradient(&p.x_star)) < 1e-15);
        let e = linalg::sym_eigen(&p.a).unwrap();
        assert!((p.kappa() - e.values[0] / e.values[11]).abs() < 1e-10);
    }

    #[test]
    fn quadratic_gradient_matches_finite_differences() {
        let p = synthetic_quadratic(6, 10.0, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fd = central_difference(|v| p.value(v), &x, 1e-5);
            let g = p.gradient(&x);
            assert!(linalg::distance(&fd, &g) <= 1e-6 * linalg::norm(&g).max(1.0));
        }
    }

    #[test]
    fn logistic_value_at_zero() {
        let (a, b) = synthetic_logistic_data(30, 5, 2);
        let p = LogisticProblem::new(a, b, 0.1);
        assert!((p.value(&[0.0; 5]) - 30.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn logistic_symmetric_labels_zero_gradient() {
        let (a, _) = synthetic_logistic_data(10, 4, 9);
        let mut data = DenseMatrix::zeros(20, 4);
        let mut labels = vec![0.0; 20];
        for i in 0..10 {
            for j in 0..4 {
                data[(2 * i, j)] = a[(i, j)];
                data[(2 * i + 1, j)] = a[(i, j)];
            }
            labels[2 * i] = 1.0;
            labels[2 * i + 1] = -1.0;
        }
        let p = LogisticProblem::new(data, labels, 0.5);
        assert!(linalg::norm(&p.gradient(&[0.0; 4])) < 1e-15);
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        let (a, b) = synthetic_logistic_data(40, 6, 4);
        let p = LogisticProblem::new(a, b, 0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let fd = central_difference(|v| p.value(v), &x, 1e-5);
            let g = p.gradient(&x);
            let err = fd
                .iter()
                .zip(&g)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err <= 1e-6, "fd error {err:e}");
        }
    }

    #[test]
    fn logistic_kappa_is_respected() {
        let (a, b) = synthetic_logistic_data(50, 8, 1);
        let p = LogisticProblem::with_kappa(a, b, 1e-3);
        assert!((p.mu / p.smoothness() - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn parse_single_line() {
        let (a, b) = parse_dataset("+1 1:1.0\n").unwrap();
        assert_eq!((a.rows(), a.cols()), (1, 1));
        assert_eq!(a[(0, 0)], 1.0);
        assert_eq!(b, vec![1.0]);
    }

    #[test]
    fn parse_rejects_duplicate_index() {
        let err = parse_dataset("+1 1:1.0\n-1 2:1 2:3\n").unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn parse_rejects_empty() {
        assert!(matches!(
            parse_dataset("# nothing\n\n"),
            Err(DataError::EmptyDataset)
        ));
    }

    #[test]
    fn dataset_round_trip() {
        let (a, b) = synthetic_logistic_data(7, 5, 11);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.txt");
        write_dataset(&path, &a, &b).unwrap();
        let (a2, b2) = parse_dataset(&fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);
    }

    #[test]
    fn load_normalizes_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.txt");
        fs::write(&path, "+1 1:3 2:4\n-1 2:2\n").unwrap();
        let p = load_dataset(&path, LoadOptions::default()).unwrap();
        assert_eq!(p.data.row(0), &[0.6, 0.8]);
        assert_eq!(p.data.row(1), &[0.0, 1.0]);
    }

    /// `Prox_{f/sigma}(z/sigma)` for one coordinate by dense grid search.
    fn primal_prox_grid(b: f64, z: f64, sigma: f64) -> f64 {
        // argmin_u log(1+exp(-b u)) + sigma/2 (u - z/sigma)^2
        let c = z / sigma;
        let obj = |u: f64| softplus(-b * u) + 0.5 * sigma * (u - c).powi(2);
        let (mut lo, mut hi) = (c - 10.0, c + 10.0);
        for _ in 0..6 {
            let n = 2000;
            let (mut best, mut bu) = (f64::INFINITY, lo);
            for k in 0..=n {
                let u = lo + (hi - lo) * k as f64 / n as f64;
                let v = obj(u);
                if v < best {
                    best = v;
                    bu = u;
                }
            }
            let step = (hi - lo) / n as f64;
            lo = bu - 2.0 * step;
            hi = bu + 2.0 * step;
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn dual_prox_satisfies_moreau_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..30 {
            let sigma = rng.random_range(0.05..5.0);
            let z = rng.random_range(-3.0..3.0);
            let b = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let p = logistic_dual_prox(&[z], &[b], sigma, 1e-12);
            assert_eq!(p.failures, 0);
            let u = primal_prox_grid(b, z, sigma);
            // Prox_{sigma f*}(z) + sigma Prox_{f/sigma}(z/sigma) = z
            assert!(
                (p.value[0] + sigma * u - z).abs() <= 1e-6,
                "z={z} sigma={sigma}"
            );
        }
    }

    #[test]
    fn dual_prox_small_sigma_is_near_projection() {
        // the dual domain is -b s in [0, 1]; interior points barely move
        let p = logistic_dual_prox(&[-0.4], &[1.0], 1e-9, 1e-14);
        assert!((p.value[0] + 0.4).abs() < 1e-6);
    }

    #[test]
    fn constant_image_has_zero_gradient() {
        let g = tv_gradient(&Image::filled(5, 7, 0.3));
        assert!(g.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn divergence_is_negative_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Image::new(8, 8, (0..64).map(|_| rng.random_range(-1.0..1.0)).collect());
        let p = GradientField::new(
            8,
            8,
            (0..128).map(|_| rng.random_range(-1.0..1.0)).collect(),
        );
        let lhs = linalg::dot(&tv_gradient(&x).data, &p.data);
        let rhs = linalg::dot(&x.data, &tv_divergence(&p).data);
        assert!((lhs + rhs).abs() <= 1e-12);
    }

    #[test]
    fn gradient_operator_norm_approaches_eight() {
        let (h, w) = (64, 64);
        let apply = |x: &[f64]| tv_gradient_raw(h, w, x);
        let apply_t = |y: &[f64]| {
            let mut d = tv_divergence_raw(h, w, y);
            d.iter_mut().for_each(|v| *v = -*v);
            d
        };
        let n = linalg::operator_norm(h * w, apply, apply_t, 2000, 1e-10);
        assert!(n * n <= 8.0 + 1e-9);
        assert!(n * n > 7.9, "{}", n * n);
    }

    #[test]
    fn dual_projection_cases() {
        let n = 4;
        let half = GradientField::new(2, 2, vec![0.3, 0.0, 0.5, 0.4, 0.4, 0.5, 0.0, 0.3]);
        assert_eq!(tv_dual_prox(&half), half);
        let big = GradientField::new(1, 1, vec![2.0, 0.0]);
        assert_eq!(tv_dual_prox(&big).data, vec![1.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let once = tv_dual_prox_raw(n, &p);
        assert_eq!(tv_dual_prox_raw(n, &once), once);
    }

    #[test]
    fn primal_value_at_data() {
        let p = noisy_image(1, 16, 16, 0.1, 8.0);
        let v = tv_primal_value(&p.noisy, &p);
        assert!((v - total_variation(16, 16, &p.noisy.data)).abs() < 1e-12);
        let c = TVDenoiseProblem::new(Image::filled(4, 4, 0.5), 3.0);
        assert_eq!(tv_primal_value(&c.noisy, &c), 0.0);
    }

    #[test]
    fn proximal_gradient_decreases_value() {
        // smoothed check: gradient steps on the dual, primal recovered in closed form
        let p = noisy_image(4, 16, 16, 0.1, 8.0);
        let n = 256;
        let mut y = vec![0.0; 2 * n];
        let mut last = f64::INFINITY;
        let step = p.mu / TV_GRAD_NORM_SQ;
        for _ in 0..50 {
            let x = linalg::sub(&p.noisy.data, &linalg::scaled(&p.apply_kt(&y), 1.0 / p.mu));
            let v = p.primal_value(&x);
            assert!(v <= last + 1e-6, "{v} > {last}");
            last = v;
            let g = p.apply_k(&x);
            y = tv_dual_prox_raw(n, &linalg::add(&y, &linalg::scaled(&g, step)));
        }
    }

    #[test]
    fn noisy_image_statistics() {
        let clean = noisy_image(3, 64, 64, 0.0, 8.0);
        assert_eq!(&clean.noisy, clean.truth.as_ref().unwrap());
        for zeta in [0.1, 0.05] {
            let p = noisy_image(3, 64, 64, zeta, 8.0);
            let t = p.truth.as_ref().unwrap();
            // clipping only bites near 0 and 1; the background sits at 0.1
            let diffs: Vec<f64> = p
                .noisy
                .data
                .iter()
                .zip(&t.data)
                .filter(|(_, &tv)| tv > 3.0 * zeta && tv < 1.0 - 3.0 * zeta)
                .map(|(a, b)| a - b)
                .collect();
            let m = diffs.iter().sum::<f64>() / diffs.len() as f64;
            let sd =
                (diffs.iter().map(|d| (d - m).powi(2)).sum::<f64>() / diffs.len() as f64).sqrt();
            assert!((sd / zeta - 1.0).abs() < 0.1, "zeta {zeta}: sd {sd}");
        }
        assert_eq!(
            noisy_image(9, 8, 8, 0.1, 1.0).noisy,
            noisy_image(9, 8, 8, 0.1, 1.0).noisy
        );
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        let img = Image::new(2, 3, vec![0.0, 1.0, 51.0 / 255.0, 0.2, 0.4, 1.0]);
        write_pgm(&path, &img).unwrap();
        let back = read_pgm(&path).unwrap();
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() <= 0.5 / 255.0);
        }
        let ascii = parse_pgm(b"P2\n# c\n2 1\n255\n0 255\n").unwrap();
        assert_eq!(ascii.data, vec![0.0, 1.0]);
    }
}
