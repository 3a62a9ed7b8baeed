//! Regularized and constrained nonlinear acceleration.
//!
//! Given iterates `x_1..x_N` and the points `y_0..y_{N-1}` they were computed
//! from (`x_i = g(y_{i-1})`), the extrapolation weights `c` minimize the
//! combined residual `||R c||` subject to `sum(c) = 1`, where `R = X - Y`.
//! RNA penalizes `||c||^2` with a Tikhonov term scaled by `||R||_2^2`; CNA puts
//! an explicit ball constraint `||c|| <= (1 + tau) / sqrt(N)` on it. The two
//! are related through the Lagrange multiplier of the ball, see
//! [`lambda_from_tau`].
//!
//! The extrapolated point is `Y c + eta R c`; `eta = 1` recombines the images,
//! `X c`.

use std::collections::VecDeque;

use thiserror::Error;

use crate::linalg::{self, DenseMatrix, DenseVector, LinalgError};

/// Default regularization, relative to `||R||_2^2`.
pub const DEFAULT_LAMBDA: f64 = 1e-8;
/// Default window width.
pub const DEFAULT_WINDOW: usize = 10;
/// Lower end of the bracket searched by [`lambda_from_tau`].
pub const LAMBDA_FLOOR: f64 = 1e-16;
/// Upper end of the bracket; reaching it means the weights are averaging.
pub const LAMBDA_CAP: f64 = 1e12;
const LAMBDA_BISECTION_STEPS: usize = 200;
/// `lambda = 0` systems whose smallest normalized pivot falls below this are
/// treated as singular.
const SINGULAR_PIVOT: f64 = 1e-14;
/// Relative singular-value cutoff for the minimal-residual route.
const NULL_SINGULAR_VALUE: f64 = 1e-12;
/// Below this `|1^T v|` a null direction `v` is treated as orthogonal to `1`.
const NULL_SUM: f64 = 100.0 * f64::EPSILON;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExtrapolationError {
    #[error("iterate window is empty")]
    EmptyWindow,
    #[error("residual Gram matrix is singular (min pivot {min_pivot:e}); use lambda > 0")]
    SingularSystem { min_pivot: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, ExtrapolationError>;

/// Bounded FIFO history of pairs `(x_i, y_{i-1})`.
#[derive(Debug, Clone)]
pub struct IterateWindow {
    capacity: usize,
    xs: VecDeque<DenseVector>,
    ys: VecDeque<DenseVector>,
}

impl IterateWindow {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "window capacity must be positive");
        Self {
            capacity,
            xs: VecDeque::with_capacity(capacity),
            ys: VecDeque::with_capacity(capacity),
        }
    }

    /// Appends `x_i = g(y_{i-1})` together with `y_{i-1}`; evicts the oldest
    /// pair once the window is full.
    pub fn push(&mut self, x: DenseVector, y_prev: DenseVector) {
        assert_eq!(x.len(), y_prev.len(), "x and y must have equal length");
        if let Some(first) = self.xs.front() {
            assert_eq!(first.len(), x.len(), "iterate dimension changed");
        }
        if self.xs.len() == self.capacity {
            self.xs.pop_front();
            self.ys.pop_front();
        }
        self.xs.push_back(x);
        self.ys.push_back(y_prev);
    }

    pub fn clear(&mut self) {
        self.xs.clear();
        self.ys.clear();
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.xs.len() == self.capacity
    }

    pub fn dim(&self) -> Option<usize> {
        self.xs.front().map(Vec::len)
    }

    pub fn xs(&self) -> impl ExactSizeIterator<Item = &DenseVector> {
        self.xs.iter()
    }

    pub fn ys(&self) -> impl ExactSizeIterator<Item = &DenseVector> {
        self.ys.iter()
    }

    pub fn last_x(&self) -> Option<&DenseVector> {
        self.xs.back()
    }

    pub fn last_y(&self) -> Option<&DenseVector> {
        self.ys.back()
    }

    /// `X = [x_1 .. x_N]`
    pub fn x_matrix(&self) -> DenseMatrix {
        let cols: Vec<&[f64]> = self.xs.iter().map(Vec::as_slice).collect();
        DenseMatrix::from_columns(&cols)
    }

    /// `Y = [y_0 .. y_{N-1}]`
    pub fn y_matrix(&self) -> DenseMatrix {
        let cols: Vec<&[f64]> = self.ys.iter().map(Vec::as_slice).collect();
        DenseMatrix::from_columns(&cols)
    }
}

/// Residual matrix `R = X - Y`, one column per pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMatrix(DenseMatrix);

impl ResidualMatrix {
    pub fn from_matrix(r: DenseMatrix) -> Self {
        Self(r)
    }

    pub fn from_columns(columns: &[&[f64]]) -> Self {
        Self(DenseMatrix::from_columns(columns))
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.0
    }

    pub fn width(&self) -> usize {
        self.0.cols()
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    /// `R c`
    pub fn combine(&self, c: &[f64]) -> DenseVector {
        self.0.matvec(c)
    }

    /// `||R||_2^2`, i.e. the largest eigenvalue of `R^T R`.
    pub fn squared_norm(&self) -> f64 {
        let n = linalg::spectral_norm(&self.0);
        n * n
    }
}

/// How a coefficient vector was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoefficientRegime {
    /// Regularized system with `lambda > 0`.
    Regularized,
    /// `lambda = 0` on a full-rank residual matrix.
    Exact,
    /// `lambda -> 0` limit on a rank-deficient residual matrix: a combination
    /// in the null space of `R` when one with nonzero sum exists.
    MinimalResidual,
    /// The norm constraint pins the weights to the averaging limit.
    Averaging,
    /// `R = 0`: the window already sits on a fixed point.
    Converged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtrapolationCoefficients {
    pub c: DenseVector,
    /// Regularization relative to `||R||_2^2`.
    pub lambda: f64,
    /// Norm budget `(1 + tau) / sqrt(N)`; for RNA this is the budget the
    /// weights actually use.
    pub tau: f64,
    /// Mixing parameter used by [`extrapolate_point`].
    pub eta: f64,
    pub regime: CoefficientRegime,
}

impl ExtrapolationCoefficients {
    fn new(c: DenseVector, lambda: f64, regime: CoefficientRegime) -> Self {
        let n = c.len() as f64;
        let tau = (n.sqrt() * linalg::norm(&c) - 1.0).max(0.0);
        Self {
            c,
            lambda,
            tau,
            eta: 1.0,
            regime,
        }
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }

    pub fn norm(&self) -> f64 {
        linalg::norm(&self.c)
    }

    pub fn last(&self) -> f64 {
        *self.c.last().expect("coefficients are never empty")
    }
}

/// Column `j` of the result is `x_j - y_{j-1}`.
pub fn residuals(window: &IterateWindow) -> Result<ResidualMatrix> {
    if window.is_empty() {
        return Err(ExtrapolationError::EmptyWindow);
    }
    let cols: Vec<DenseVector> = window
        .xs()
        .zip(window.ys())
        .map(|(x, y)| linalg::sub(x, y))
        .collect();
    let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    Ok(ResidualMatrix::from_columns(&refs))
}

fn uniform(n: usize) -> DenseVector {
    vec![1.0 / n as f64; n]
}

/// `R^T R / ||R||_2^2`, or `None` when `R = 0`.
fn normalized_gram(r: &ResidualMatrix) -> Result<Option<DenseMatrix>> {
    let gram = r.matrix().gram();
    if gram.max_abs() == 0.0 {
        return Ok(None);
    }
    let scale = linalg::sym_eig_extreme(&gram)?.max;
    Ok(Some(gram.scale(1.0 / scale)))
}

fn normalize_sum(z: DenseVector) -> DenseVector {
    let s: f64 = z.iter().sum();
    z.into_iter().map(|v| v / s).collect()
}

/// RNA weights `(R^T R + lambda ||R||^2 I)^{-1} 1`, normalized to sum to one.
///
/// `lambda` is relative to `||R||_2^2` (which equals `||R^T R||_2`). With
/// `lambda = 0` a numerically rank-deficient `R` is reported as
/// [`ExtrapolationError::SingularSystem`]; retry with `lambda > 0` or use
/// [`min_residual_coefficients`].
pub fn rna_coefficients(r: &ResidualMatrix, lambda: f64) -> Result<ExtrapolationCoefficients> {
    assert!(lambda >= 0.0, "lambda must be nonnegative");
    let n = r.width();
    if n == 0 {
        return Err(ExtrapolationError::EmptyWindow);
    }
    if lambda == 0.0 {
        return exact_coefficients(r);
    }
    let Some(m) = normalized_gram(r)? else {
        return Ok(ExtrapolationCoefficients::new(
            uniform(n),
            lambda,
            CoefficientRegime::Converged,
        ));
    };
    let c = normalize_sum(linalg::Cholesky::factor(&m, lambda)?.solve(&vec![1.0; n]));
    Ok(ExtrapolationCoefficients::new(
        c,
        lambda,
        CoefficientRegime::Regularized,
    ))
}

/// `lambda = 0` weights from a QR factorization `R = Q T`: `c ~ T^-1 T^-T 1`.
/// Forming `R^T R` would square the condition number of Krylov-like windows.
fn exact_coefficients(r: &ResidualMatrix) -> Result<ExtrapolationCoefficients> {
    let n = r.width();
    if r.matrix().frobenius_norm() == 0.0 {
        return Ok(ExtrapolationCoefficients::new(
            uniform(n),
            0.0,
            CoefficientRegime::Converged,
        ));
    }
    if r.matrix().rows() < n {
        return Err(ExtrapolationError::SingularSystem { min_pivot: 0.0 });
    }
    let t = linalg::householder_r(r.matrix());
    let svd = linalg::thin_svd(&t)?;
    let smax = svd.sigma[0];
    if smax == 0.0 {
        return Ok(ExtrapolationCoefficients::new(
            uniform(n),
            0.0,
            CoefficientRegime::Converged,
        ));
    }
    let pivot = (svd.sigma[n - 1] / smax).powi(2);
    if pivot <= SINGULAR_PIVOT {
        return Err(ExtrapolationError::SingularSystem { min_pivot: pivot });
    }
    Ok(ExtrapolationCoefficients::new(
        triangular_weights(&t, smax),
        0.0,
        CoefficientRegime::Exact,
    ))
}

fn triangular_weights(t: &DenseMatrix, scale: f64) -> DenseVector {
    let t = t.scale(1.0 / scale);
    let z = linalg::solve_upper_transposed(&t, &vec![1.0; t.rows()]);
    normalize_sum(linalg::solve_upper(&t, &z))
}

/// `c ~ V S^+^2 V^T 1` over singular values above `null_level * sigma_max`.
fn pseudo_inverse_weights(svd: &linalg::ThinSvd, null_level: f64) -> ExtrapolationCoefficients {
    let n = svd.sigma.len();
    let smax = svd.sigma[0];
    let w = svd.v.tmatvec(&vec![1.0; n]);
    let mut a = vec![0.0; n];
    let mut truncated = false;
    for k in 0..n {
        if svd.sigma[k] <= null_level * smax {
            truncated = true;
        } else {
            a[k] = w[k] / (svd.sigma[k] / smax).powi(2);
        }
    }
    let regime = if truncated {
        CoefficientRegime::MinimalResidual
    } else {
        CoefficientRegime::Exact
    };
    ExtrapolationCoefficients::new(normalize_sum(svd.v.matvec(&a)), 0.0, regime)
}

/// Exact minimizer of `||R c||` over `sum(c) = 1` that stays well defined when
/// `R` is rank-deficient.
///
/// Numerically null directions of `R` whose sum vanishes are dropped (the
/// pseudo-inverse weighting `V S^+^2 V^T 1`). Otherwise the weights are
/// `T^-1 T^-T 1` from a QR factorization `R = Q T`, or the minimum-norm
/// combination with `R c = 0` when `T` has an exactly zero pivot. This is
/// the `lambda -> 0` limit of [`rna_coefficients`].
pub fn min_residual_coefficients(r: &ResidualMatrix) -> Result<ExtrapolationCoefficients> {
    let n = r.width();
    if n == 0 {
        return Err(ExtrapolationError::EmptyWindow);
    }
    let tall = r.matrix().rows() >= n;
    let t = if tall {
        linalg::householder_r(r.matrix())
    } else {
        r.matrix().clone()
    };
    let svd = linalg::thin_svd(&t)?;
    let smax = svd.sigma[0];
    if smax == 0.0 {
        return Ok(ExtrapolationCoefficients::new(
            uniform(n),
            0.0,
            CoefficientRegime::Converged,
        ));
    }
    let w = svd.v.tmatvec(&vec![1.0; n]);
    let null: Vec<usize> = (0..n)
        .filter(|&k| svd.sigma[k] <= NULL_SINGULAR_VALUE * smax)
        .collect();
    let null_weight: f64 = null.iter().map(|&k| w[k] * w[k]).sum();
    if !null.is_empty() && null_weight <= NULL_SUM * NULL_SUM * n as f64 {
        // null directions carry no sum: they cannot lower the residual
        return Ok(pseudo_inverse_weights(&svd, NULL_SINGULAR_VALUE));
    }
    let mut c = if tall && (0..n).all(|i| t[(i, i)] != 0.0) {
        ExtrapolationCoefficients::new(
            triangular_weights(&t, smax),
            0.0,
            CoefficientRegime::MinimalResidual,
        )
    } else {
        let zeros: Vec<usize> = null
            .iter()
            .copied()
            .filter(|&k| svd.sigma[k] == 0.0)
            .collect();
        let zero_weight: f64 = zeros.iter().map(|&k| w[k] * w[k]).sum();
        if zero_weight > 0.0 {
            let mut a = vec![0.0; n];
            for &k in &zeros {
                a[k] = w[k] / zero_weight;
            }
            ExtrapolationCoefficients::new(
                normalize_sum(svd.v.matvec(&a)),
                0.0,
                CoefficientRegime::MinimalResidual,
            )
        } else {
            pseudo_inverse_weights(&svd, 0.0)
        }
    };
    c.regime = CoefficientRegime::MinimalResidual;
    Ok(c)
}

/// RNA weights, falling back to the minimal-residual limit when `lambda = 0`
/// and the system is singular.
pub fn rna_coefficients_or_limit(
    r: &ResidualMatrix,
    lambda: f64,
) -> Result<ExtrapolationCoefficients> {
    match rna_coefficients(r, lambda) {
        Err(ExtrapolationError::SingularSystem { .. }) => min_residual_coefficients(r),
        other => other,
    }
}

/// `y_extr = Y c + eta R c`.
pub fn extrapolate_point(
    window: &IterateWindow,
    coeffs: &ExtrapolationCoefficients,
) -> Result<DenseVector> {
    if window.is_empty() {
        return Err(ExtrapolationError::EmptyWindow);
    }
    if coeffs.len() != window.len() {
        return Err(ExtrapolationError::DimensionMismatch {
            expected: window.len(),
            got: coeffs.len(),
        });
    }
    let d = window.dim().unwrap_or(0);
    let eta = coeffs.eta;
    let mut out = vec![0.0; d];
    for ((x, y), &c) in window.xs().zip(window.ys()).zip(&coeffs.c) {
        // y + eta (x - y) = (1 - eta) y + eta x
        linalg::axpy(c * (1.0 - eta), y, &mut out);
        linalg::axpy(c * eta, x, &mut out);
    }
    Ok(out)
}

/// Outcome of [`lambda_from_tau`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaSolution {
    pub lambda: f64,
    pub regime: LambdaRegime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaRegime {
    /// The unregularized weights already satisfy the norm budget.
    Inactive,
    /// `||c^lambda||^2 = (1 + tau)^2 / N` was solved for.
    Active,
    /// The budget is at (or numerically below) the averaging limit; the cap
    /// [`LAMBDA_CAP`] is returned.
    Averaging,
}

fn coefficient_norm_sq_at(r: &ResidualMatrix, lambda: f64) -> Result<f64> {
    let c = if lambda == 0.0 {
        rna_coefficients_or_limit(r, 0.0)?
    } else {
        rna_coefficients(r, lambda)?
    };
    Ok(linalg::dot(&c.c, &c.c))
}

/// `||c^lambda||^2` from an already normalized Gram matrix, `lambda > 0`.
fn coefficient_norm_sq_gram(m: &DenseMatrix, lambda: f64) -> Result<f64> {
    let c = normalize_sum(linalg::Cholesky::factor(m, lambda)?.solve(&vec![1.0; m.rows()]));
    Ok(linalg::dot(&c, &c))
}

/// Regularization `lambda` whose RNA weights have norm exactly
/// `(1 + tau) / sqrt(N)`.
///
/// `||c^lambda||` is nonincreasing in `lambda`, so the root is found by
/// bisection on `log(lambda)` over `[LAMBDA_FLOOR, LAMBDA_CAP]`. The returned
/// value sits on the feasible side of the root.
pub fn lambda_from_tau(r: &ResidualMatrix, tau: f64) -> Result<LambdaSolution> {
    assert!(tau >= 0.0, "tau must be nonnegative");
    let n = r.width();
    if n == 0 {
        return Err(ExtrapolationError::EmptyWindow);
    }
    if tau == 0.0 {
        return Ok(LambdaSolution {
            lambda: LAMBDA_CAP,
            regime: LambdaRegime::Averaging,
        });
    }
    let target = (1.0 + tau).powi(2) / n as f64;
    if tau.is_infinite() || coefficient_norm_sq_at(r, 0.0)? <= target {
        return Ok(LambdaSolution {
            lambda: 0.0,
            regime: LambdaRegime::Inactive,
        });
    }
    let Some(m) = normalized_gram(r)? else {
        return Ok(LambdaSolution {
            lambda: 0.0,
            regime: LambdaRegime::Inactive,
        });
    };
    if coefficient_norm_sq_gram(&m, LAMBDA_CAP)? > target {
        return Ok(LambdaSolution {
            lambda: LAMBDA_CAP,
            regime: LambdaRegime::Averaging,
        });
    }
    let (mut lo, mut hi) = (LAMBDA_FLOOR.ln(), LAMBDA_CAP.ln());
    if coefficient_norm_sq_gram(&m, LAMBDA_FLOOR)? <= target {
        // root lies in (0, LAMBDA_FLOOR]; the floor is feasible and close enough
        return Ok(LambdaSolution {
            lambda: LAMBDA_FLOOR,
            regime: LambdaRegime::Active,
        });
    }
    for _ in 0..LAMBDA_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= 1e-15 * hi.abs().max(1.0) {
            break;
        }
        if coefficient_norm_sq_gram(&m, mid.exp())? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(LambdaSolution {
        lambda: hi.exp(),
        regime: LambdaRegime::Active,
    })
}

/// CNA weights: minimize `||R c||` subject to `sum(c) = 1` and
/// `||c|| <= (1 + tau) / sqrt(N)`.
pub fn cna_coefficients(r: &ResidualMatrix, tau: f64) -> Result<ExtrapolationCoefficients> {
    assert!(tau >= 0.0, "tau must be nonnegative");
    let n = r.width();
    if n == 0 {
        return Err(ExtrapolationError::EmptyWindow);
    }
    let mut out = if tau == 0.0 {
        ExtrapolationCoefficients::new(uniform(n), LAMBDA_CAP, CoefficientRegime::Averaging)
    } else {
        let sol = lambda_from_tau(r, tau)?;
        match sol.regime {
            LambdaRegime::Inactive => rna_coefficients_or_limit(r, 0.0)?,
            LambdaRegime::Active => rna_coefficients(r, sol.lambda)?,
            LambdaRegime::Averaging => {
                let mut c = rna_coefficients(r, sol.lambda)?;
                c.regime = CoefficientRegime::Averaging;
                c
            }
        }
    };
    out.tau = tau;
    Ok(out)
}

/// Upper bound `sqrt(1 + 1/lambda) / sqrt(N)` on `||c^lambda||`.
pub fn coefficient_norm_bound(lambda: f64, n: usize) -> f64 {
    assert!(lambda > 0.0 && n >= 1);
    (1.0 + 1.0 / lambda).sqrt() / (n as f64).sqrt()
}

/// Convenience: residuals, RNA weights (with the singular fallback) and the
/// extrapolated point in one call.
pub fn rna_extrapolate(
    window: &IterateWindow,
    lambda: f64,
    eta: f64,
) -> Result<(DenseVector, ExtrapolationCoefficients)> {
    let r = residuals(window)?;
    let c = rna_coefficients_or_limit(&r, lambda)?.with_eta(eta);
    let y = extrapolate_point(window, &c)?;
    Ok((y, c))
}
