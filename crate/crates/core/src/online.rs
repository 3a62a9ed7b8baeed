//! Online acceleration: extrapolating at every step and feeding the result
//! back into the iteration, either unconditionally or behind a sufficient
//! descent test that keeps the base method's worst-case rate.

use crate::drivers::{combine, CombinationRow, FixedPointOperator, NesterovParams};
use crate::extrapolate::{
    self, CoefficientRegime, ExtrapolationCoefficients, ExtrapolationError, IterateWindow,
    ResidualMatrix,
};
use crate::linalg::{self, DenseVector};
use crate::problems::Objective;

/// Relative singular-value cutoff used for rank estimates.
const RANK_TOL: f64 = 1e-10;

/// `lambda = D^r`, with `D` estimated from the newest residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizationSchedule {
    pub exponent_r: f64,
    pub exponent_s: f64,
    pub distance_proxy: DistanceProxy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceProxy {
    /// `||x_N - y_{N-1}||`
    LastResidual,
    /// `||R||_2`
    ResidualNorm,
}

impl RegularizationSchedule {
    pub fn new(exponent_r: f64) -> Self {
        assert!(exponent_r >= 0.0);
        Self {
            exponent_r,
            exponent_s: 0.0,
            distance_proxy: DistanceProxy::LastResidual,
        }
    }

    pub fn estimate_distance(&self, r: &ResidualMatrix) -> f64 {
        match self.distance_proxy {
            DistanceProxy::LastResidual => linalg::norm(&r.matrix().column(r.width() - 1)),
            DistanceProxy::ResidualNorm => r.squared_norm().sqrt(),
        }
    }
}

pub fn schedule_lambda(schedule: &RegularizationSchedule, d_estimate: f64) -> f64 {
    assert!(d_estimate > 0.0, "distance estimate must be positive");
    d_estimate.powf(schedule.exponent_r)
}

/// State of online RNA on a fixed-point iteration.
#[derive(Debug, Clone)]
pub struct OnlineState {
    pub window: IterateWindow,
    /// Regularization relative to `||R||_2^2`; ignored when a schedule is set.
    pub lambda_rel: f64,
    pub eta: f64,
    pub schedule: Option<RegularizationSchedule>,
    /// Current point `y_{N-1}`.
    pub y: DenseVector,
}

impl OnlineState {
    pub fn new(x0: DenseVector, window: usize, lambda_rel: f64, eta: f64) -> Self {
        Self {
            window: IterateWindow::new(window),
            lambda_rel,
            eta,
            schedule: None,
            y: x0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineDiagnostics {
    /// The new base iterate `x_N = g(y_{N-1})`.
    pub x: DenseVector,
    /// `||x_N - y_{N-1}||`
    pub resid: f64,
    pub c_last: f64,
    pub rank: usize,
    pub lambda: f64,
    pub retried: bool,
    pub regime: CoefficientRegime,
}

/// Numerical column rank of `R`.
pub fn window_rank(r: &ResidualMatrix) -> usize {
    match linalg::thin_svd(r.matrix()) {
        Ok(svd) => {
            let top = svd.sigma[0];
            svd.sigma.iter().filter(|&&s| s > RANK_TOL * top).count()
        }
        Err(_) => 0,
    }
}

/// Coefficients at `lambda`; a singular `lambda = 0` system falls back to the
/// minimal-residual limit and a failing `lambda > 0` system is retried once at
/// `10 lambda`.
pub(crate) fn coefficients_with_retry(
    r: &ResidualMatrix,
    lambda: f64,
) -> extrapolate::Result<(ExtrapolationCoefficients, bool)> {
    match extrapolate::rna_coefficients(r, lambda) {
        Ok(c) => Ok((c, false)),
        Err(ExtrapolationError::SingularSystem { .. }) => {
            Ok((extrapolate::min_residual_coefficients(r)?, true))
        }
        Err(ExtrapolationError::Linalg(_)) if lambda > 0.0 => {
            Ok((extrapolate::rna_coefficients(r, 10.0 * lambda)?, true))
        }
        Err(e) => Err(e),
    }
}

/// `x_N = g(y_{N-1})`, then `y_N` = RNA over the current window.
pub fn online_rna_step<O: FixedPointOperator + ?Sized>(
    state: &mut OnlineState,
    op: &O,
) -> extrapolate::Result<(DenseVector, OnlineDiagnostics)> {
    let x = op.apply(&state.y);
    let resid = linalg::distance(&x, &state.y);
    state.window.push(x.clone(), std::mem::take(&mut state.y));
    let r = extrapolate::residuals(&state.window)?;
    let lambda = match &state.schedule {
        Some(s) => {
            let d = s.estimate_distance(&r);
            if d > 0.0 {
                schedule_lambda(s, d)
            } else {
                state.lambda_rel
            }
        }
        None => state.lambda_rel,
    };
    let (c, retried) = coefficients_with_retry(&r, lambda)?;
    let c = c.with_eta(state.eta);
    let y = extrapolate::extrapolate_point(&state.window, &c)?;
    state.y = y.clone();
    let diag = OnlineDiagnostics {
        x,
        resid,
        c_last: c.last(),
        rank: window_rank(&r),
        lambda: c.lambda,
        retried,
        regime: c.regime,
    };
    Ok((y, diag))
}

/// Structure of unregularized coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LastCoefficient {
    /// Full column rank and `c_N != 0`.
    NonzeroLast,
    /// Rank-deficient window whose combination already annihilates `R`.
    RankDeficientConverged,
    /// Neither of the above.
    Violated,
}

pub fn last_coefficient_check(
    r: &ResidualMatrix,
    c: &ExtrapolationCoefficients,
) -> LastCoefficient {
    let n = r.width();
    let full_rank = window_rank(r) == n;
    if full_rank {
        if c.last().abs() > 1e-12 * c.norm() {
            LastCoefficient::NonzeroLast
        } else {
            LastCoefficient::Violated
        }
    } else {
        let rn = r.squared_norm().sqrt();
        if linalg::norm(&r.combine(&c.c)) <= 1e-8 * rn {
            LastCoefficient::RankDeficientConverged
        } else {
            LastCoefficient::Violated
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuardedOutcome {
    pub y: DenseVector,
    /// True when the extrapolated point was accepted.
    pub branch_taken: bool,
    /// Conditional point `z_k`.
    pub z: DenseVector,
}

/// Accepts `x_extr` when the conditional point that reproduces it through
/// `row` passes `condition(z) <= 0`; otherwise returns the base combination.
///
/// `xs` holds `x_1 .. x_k` and `ys` holds `y_0 .. y_{k-1}`.
pub fn guarded_momentum_step(
    xs: &[DenseVector],
    ys: &[DenseVector],
    row: &CombinationRow,
    x_extr: &[f64],
    condition: impl FnOnce(&[f64]) -> f64,
) -> Result<GuardedOutcome, crate::drivers::DriverError> {
    let k = row.iteration;
    let lead = row.leading();
    if lead == 0.0 {
        return Err(crate::drivers::DriverError::ZeroLeadingCoefficient { iteration: k });
    }
    let d = x_extr.len();
    let rest = CombinationRow {
        iteration: k,
        alpha: row.alpha.iter().copied().filter(|&(j, _)| j != k).collect(),
        beta: row.beta.clone(),
    };
    let others = combine(&rest, xs, ys, d);
    let z: DenseVector = x_extr
        .iter()
        .zip(&others)
        .map(|(e, o)| (e - o) / lead)
        .collect();
    if condition(&z) <= 0.0 {
        Ok(GuardedOutcome {
            y: x_extr.to_vec(),
            branch_taken: true,
            z,
        })
    } else {
        Ok(GuardedOutcome {
            y: combine(row, xs, ys, d),
            branch_taken: false,
            z,
        })
    }
}

/// Nesterov's method with RNA replacing the momentum step whenever the
/// conditional point satisfies the sufficient descent test.
#[derive(Debug, Clone)]
pub struct AdaptiveNesterov {
    pub params: NesterovParams,
    pub window: IterateWindow,
    pub lambda_rel: f64,
    /// `x_{i-1}`
    pub x_prev: DenseVector,
    /// `y_{i-1}`
    pub y: DenseVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveDiagnostics {
    pub x: DenseVector,
    /// `f(y_{i-1})`, the descent test's reference value.
    pub f_reference: f64,
    pub grad_norm: f64,
    pub branch_taken: bool,
    pub z: DenseVector,
    pub y_extr: DenseVector,
}

impl AdaptiveNesterov {
    pub fn new(params: NesterovParams, x0: DenseVector, window: usize, lambda_rel: f64) -> Self {
        Self {
            params,
            window: IterateWindow::new(window),
            lambda_rel,
            x_prev: x0.clone(),
            y: x0,
        }
    }

    /// One step; the descent reference is `y_{i-1}`, where the gradient was
    /// just evaluated.
    pub fn step<P: Objective + ?Sized>(
        &mut self,
        problem: &P,
    ) -> extrapolate::Result<AdaptiveDiagnostics> {
        let l = self.params.l_smooth;
        let b = self.params.beta_momentum;
        let g = problem.gradient(&self.y);
        let f_ref = problem.value(&self.y);
        let gn = linalg::norm(&g);
        let mut x = self.y.clone();
        linalg::axpy(-1.0 / l, &g, &mut x);
        self.window.push(x.clone(), self.y.clone());
        let r = extrapolate::residuals(&self.window)?;
        let (c, _) = coefficients_with_retry(&r, self.lambda_rel)?;
        let y_extr = extrapolate::extrapolate_point(&self.window, &c.with_eta(1.0))?;
        let z: DenseVector = y_extr
            .iter()
            .zip(&self.x_prev)
            .map(|(e, xp)| (e + b * xp) / (1.0 + b))
            .collect();
        let taken = problem.value(&z) <= f_ref - gn * gn / (2.0 * l);
        let y_next = if taken {
            y_extr.clone()
        } else {
            x.iter()
                .zip(&self.x_prev)
                .map(|(xi, xp)| (1.0 + b) * xi - b * xp)
                .collect()
        };
        self.x_prev = x.clone();
        self.y = y_next;
        Ok(AdaptiveDiagnostics {
            x,
            f_reference: f_ref,
            grad_norm: gn,
            branch_taken: taken,
            z,
            y_extr,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::{gradient_operator, nesterov_step, BaseRule, LinearForm};
    use crate::linalg::DenseMatrix;
    use crate::problems::{synthetic_quadratic, QuadraticProblem};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scalar_affine_map_is_solved_in_two_steps() {
        // g(x) = 0.5 (x - 3) + 3
        let op = LinearForm {
            g: DenseMatrix::from_diag(&[0.5]),
            x_star: vec![3.0],
        };
        let mut st = OnlineState::new(vec![0.0], 5, 0.0, 1.0);
        let (y1, _) = online_rna_step(&mut st, &op).unwrap();
        assert_eq!(y1, vec![1.5]);
        let (y2, d) = online_rna_step(&mut st, &op).unwrap();
        assert!((y2[0] - 3.0).abs() < 1e-14, "{y2:?}");
        assert_eq!(d.rank, 1);
    }

    #[test]
    fn width_one_window_returns_base_iterate() {
        let p = synthetic_quadratic(4, 10.0, 1);
        let op = gradient_operator(&p, 1.0);
        let x0 = vec![1.0; 4];
        let mut st = OnlineState::new(x0.clone(), 1, 0.0, 1.0);
        let (y1, _) = online_rna_step(&mut st, &op).unwrap();
        assert_eq!(y1, op.apply(&x0));
    }

    #[test]
    fn schedule_power_law() {
        let s0 = RegularizationSchedule::new(0.0);
        assert_eq!(schedule_lambda(&s0, 0.3), 1.0);
        let s1 = RegularizationSchedule::new(1.0);
        assert!((schedule_lambda(&s1, 0.2) / schedule_lambda(&s1, 0.4) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn full_rank_window_has_nonzero_last() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = ResidualMatrix::from_matrix(DenseMatrix::from_fn(10, 4, |_, _| {
            rng.random_range(-1.0..1.0)
        }));
        let c = extrapolate::rna_coefficients(&r, 0.0).unwrap();
        assert_eq!(last_coefficient_check(&r, &c), LastCoefficient::NonzeroLast);
        let one = ResidualMatrix::from_columns(&[&[0.5, 1.0]]);
        let c = extrapolate::rna_coefficients(&one, 0.0).unwrap();
        assert_eq!(
            last_coefficient_check(&one, &c),
            LastCoefficient::NonzeroLast
        );
    }

    #[test]
    fn three_eigenvalue_quadratic_window_is_converged() {
        let spectrum = [0.2, 0.2, 0.5, 0.5, 0.9, 0.9];
        let p = QuadraticProblem::from_spectrum(
            &spectrum,
            vec![0.1; 6],
            &mut ChaCha8Rng::seed_from_u64(2),
        );
        let op = gradient_operator(&p, 1.0);
        let (traj, _) =
            crate::drivers::run_iterations(&op, BaseRule::Gradient, &[1.0; 6], 5, None, false)
                .unwrap();
        let r = ResidualMatrix::from_matrix(traj.residual_matrix());
        let c = extrapolate::rna_coefficients_or_limit(&r, 0.0).unwrap();
        assert_eq!(
            last_coefficient_check(&r, &c),
            LastCoefficient::RankDeficientConverged
        );
    }

    fn momentum_history(beta: f64) -> (Vec<DenseVector>, Vec<DenseVector>, CombinationRow) {
        let xs = vec![vec![1.0, 0.0], vec![0.5, 0.5]];
        let ys = vec![vec![2.0, 0.0], vec![0.8, 0.2]];
        (xs, ys, BaseRule::Momentum { beta }.row(2))
    }

    #[test]
    fn guard_never_passing_is_base_step() {
        let (xs, ys, row) = momentum_history(0.3);
        let out = guarded_momentum_step(&xs, &ys, &row, &[9.0, 9.0], |_| 1.0).unwrap();
        assert!(!out.branch_taken);
        assert_eq!(out.y, combine(&row, &xs, &ys, 2));
    }

    #[test]
    fn guard_always_passing_is_extrapolation() {
        let (xs, ys, row) = momentum_history(0.3);
        let out = guarded_momentum_step(&xs, &ys, &row, &[9.0, 9.0], |_| -1.0).unwrap();
        assert!(out.branch_taken);
        assert_eq!(out.y, vec![9.0, 9.0]);
        // recombining z through the row reproduces x_extr
        let mut xs2 = xs.clone();
        xs2[1] = out.z.clone();
        let back = combine(&row, &xs2, &ys, 2);
        assert!(linalg::distance(&back, &[9.0, 9.0]) < 1e-12);
    }

    #[test]
    fn guard_rejects_zero_leading_coefficient() {
        let (xs, ys, _) = momentum_history(0.3);
        let row = CombinationRow {
            iteration: 2,
            alpha: vec![(1, 1.0)],
            beta: vec![],
        };
        assert!(guarded_momentum_step(&xs, &ys, &row, &[0.0, 0.0], |_| -1.0).is_err());
    }

    #[test]
    fn guard_accepts_exact_extrapolation_on_quadratic() {
        let p = QuadraticProblem::from_spectrum(
            &[0.3, 1.0],
            vec![0.5, -0.5],
            &mut ChaCha8Rng::seed_from_u64(1),
        );
        let l = p.l_smooth;
        let op = gradient_operator(&p, 1.0 / l);
        let (traj, _) =
            crate::drivers::run_iterations(&op, BaseRule::Gradient, &[2.0, 1.0], 3, None, false)
                .unwrap();
        let w = traj.window(3);
        let (x_extr, _) = extrapolate::rna_extrapolate(&w, 0.0, 1.0).unwrap();
        let y_prev = traj.ys[2].clone();
        let g = p.gradient(&y_prev);
        let thresh = p.value(&y_prev) - linalg::dot(&g, &g) / (2.0 * l);
        let out = guarded_momentum_step(&traj.xs, &traj.ys, &traj.rows[2], &x_extr, |z| {
            p.value(z) - thresh
        })
        .unwrap();
        assert!(out.branch_taken);
        assert!(linalg::distance(&out.y, &p.x_star) < 1e-10);
    }

    #[test]
    fn adaptive_nesterov_reconstruction_and_fallback() {
        let p = synthetic_quadratic(10, 100.0, 4);
        let params = NesterovParams::for_problem(&p);
        let x0 = vec![1.0; 10];
        let mut alg = AdaptiveNesterov::new(params, x0.clone(), 10, 1e-8);
        let mut x_prev = x0.clone();
        let mut y = x0;
        for i in 1..=30 {
            let before_x_prev = alg.x_prev.clone();
            let d = alg.step(&p).unwrap();
            let b = params.beta_momentum;
            if d.branch_taken {
                let rebuilt: DenseVector =
                    d.z.iter()
                        .zip(&before_x_prev)
                        .map(|(z, xp)| (1.0 + b) * z - b * xp)
                        .collect();
                assert!(
                    linalg::distance(&rebuilt, &d.y_extr)
                        <= 1e-12 * linalg::norm(&d.y_extr).max(1.0)
                );
                assert_eq!(alg.y, d.y_extr);
            } else {
                let s = nesterov_step(i, &x_prev, &y, &params, &p);
                assert!(linalg::distance(&alg.y, &s.y) < 1e-12);
            }
            x_prev = alg.x_prev.clone();
            y = alg.y.clone();
        }
    }
}
