//! Chebyshev minimax values that predict extrapolation rates: the real
//! segment `[0, 1 - kappa]`, ellipses, and a constrained version on a
//! sampled numerical range. Also a numerical check of Crouzeix's bound
//! `||p(G)|| <= 11.08 max_{W(G)} |p|`.

use std::io::Write;

use num_complex::Complex64;
use thiserror::Error;

use crate::extrapolate::{self, ExtrapolationError, ResidualMatrix};
use crate::linalg::{self, ComplexScalar, DenseMatrix};
use crate::numrange::{EllipseRegion, NumericalRangeBoundary};

/// Best known constant in Crouzeix's inequality.
pub const CROUZEIX_CONSTANT: f64 = 11.08;

const LAWSON_MAX_ITER: usize = 3000;
const LAWSON_GAP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChebyshevError {
    #[error("the normalization point 1 lies inside the region")]
    NormalizationInsideRegion,
    #[error("kappa must lie in (0, 1], got {0}")]
    InvalidKappa(f64),
    #[error("empty boundary")]
    EmptyBoundary,
    #[error(transparent)]
    Extrapolation(#[from] ExtrapolationError),
}

pub type Result<T> = std::result::Result<T, ChebyshevError>;

/// Monomial coefficients `c_0 .. c_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialCoeffs {
    pub coeffs: Vec<ComplexScalar>,
}

impl PolynomialCoeffs {
    pub fn from_real(c: &[f64]) -> Self {
        Self {
            coeffs: c.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn eval(&self, z: ComplexScalar) -> ComplexScalar {
        self.coeffs
            .iter()
            .rev()
            .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
    }

    /// `p(1) = sum c_i`.
    pub fn sum(&self) -> ComplexScalar {
        self.coeffs.iter().sum()
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        (self.sum() - 1.0).norm() <= tol
    }

    pub fn coefficient_norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `max |p(z)|` over the given points.
    pub fn max_abs_on(&self, points: &[ComplexScalar]) -> f64 {
        points
            .iter()
            .map(|&z| self.eval(z).norm())
            .fold(0.0, f64::max)
    }

    /// `p(G)` by Horner, returned as the real and imaginary parts.
    pub fn eval_matrix(&self, g: &DenseMatrix) -> (DenseMatrix, DenseMatrix) {
        let n = g.rows();
        let mut re = DenseMatrix::zeros(n, n);
        let mut im = DenseMatrix::zeros(n, n);
        for c in self.coeffs.iter().rev() {
            re = re.matmul(g).add(&DenseMatrix::identity(n).scale(c.re));
            im = im.matmul(g).add(&DenseMatrix::identity(n).scale(c.im));
        }
        (re, im)
    }

    /// Spectral norm of `p(G)`.
    pub fn matrix_norm(&self, g: &DenseMatrix) -> f64 {
        let (re, im) = self.eval_matrix(g);
        if im.max_abs() == 0.0 {
            return linalg::spectral_norm(&re);
        }
        let n = g.rows();
        let doubled = DenseMatrix::from_fn(2 * n, 2 * n, |i, j| match (i < n, j < n) {
            (true, true) => re[(i, j)],
            (true, false) => -im[(i, j - n)],
            (false, true) => im[(i - n, j)],
            (false, false) => re[(i - n, j - n)],
        });
        linalg::spectral_norm(&doubled)
    }

    /// Writes `re,im,abs_p` over an `n x n` grid of the given box.
    pub fn write_surface_csv<W: Write>(
        &self,
        out: W,
        re_range: (f64, f64),
        im_range: (f64, f64),
        n: usize,
    ) -> csv::Result<()> {
        assert!(n >= 2);
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["re", "im", "abs_p"])?;
        for i in 0..n {
            let x = re_range.0 + (re_range.1 - re_range.0) * i as f64 / (n - 1) as f64;
            for j in 0..n {
                let y = im_range.0 + (im_range.1 - im_range.0) * j as f64 / (n - 1) as f64;
                let v = self.eval(Complex64::new(x, y)).norm();
                w.write_record([x.to_string(), y.to_string(), v.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Region over which a Chebyshev problem is posed.
#[derive(Debug, Clone, PartialEq)]
pub enum ChebyshevRegion {
    /// `[0, 1 - kappa]`.
    Segment,
    Ellipse(EllipseRegion),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChebyshevQuery {
    pub degree_k: usize,
    pub kappa: f64,
    pub region: ChebyshevRegion,
    pub tau_bound: Option<f64>,
}

impl ChebyshevQuery {
    /// Unconstrained value of the query.
    pub fn value(&self) -> Result<f64> {
        match &self.region {
            ChebyshevRegion::Segment => {
                if !(self.kappa > 0.0 && self.kappa <= 1.0) {
                    return Err(ChebyshevError::InvalidKappa(self.kappa));
                }
                Ok(segment_minmax(self.kappa, self.degree_k))
            }
            ChebyshevRegion::Ellipse(e) => Ok(ellipse_minmax(e, self.degree_k)?.value),
        }
    }
}

/// `1 / T_k((1 + kappa) / (1 - kappa))`, the minimax of `|p|` on
/// `[0, 1 - kappa]` over degree-`k` polynomials with `p(1) = 1`.
pub fn segment_minmax(kappa: f64, k: usize) -> f64 {
    assert!(kappa > 0.0 && kappa <= 1.0, "kappa must lie in (0, 1]");
    if k == 0 {
        return 1.0;
    }
    if kappa == 1.0 {
        return 0.0;
    }
    let t0 = (1.0 + kappa) / (1.0 - kappa);
    let (mut prev, mut cur) = (1.0, t0);
    for _ in 1..k {
        let next = 2.0 * t0 * cur - prev;
        prev = cur;
        cur = next;
    }
    1.0 / cur
}

/// `2 rho^k / (1 + rho^{2k})` with `rho = (1 - sqrt kappa) / (1 + sqrt kappa)`.
pub fn segment_minmax_closed_form(kappa: f64, k: usize) -> f64 {
    let s = kappa.sqrt();
    let rho = (1.0 - s) / (1.0 + s);
    let rk = rho.powi(k as i32);
    2.0 * rk / (1.0 + rk * rk)
}

/// Joukowski inverse of `z = (v + 1/v) / 2` on the branch `|v| >= 1`.
fn joukowski_inverse(z: ComplexScalar) -> ComplexScalar {
    let s = (z * z - 1.0).sqrt();
    let (v1, v2) = (z + s, z - s);
    if v1.norm() >= v2.norm() {
        v1
    } else {
        v2
    }
}

/// `T_k(z) = (v^k + v^{-k}) / 2` with `z = (v + 1/v) / 2`.
pub fn complex_chebyshev(z: ComplexScalar, k: usize) -> ComplexScalar {
    if k == 0 {
        return Complex64::new(1.0, 0.0);
    }
    let v = joukowski_inverse(z);
    let vk = v.powu(k as u32);
    0.5 * (vk + vk.inv())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipseMinmax {
    pub value: f64,
    /// The normalized Chebyshev polynomial is provably optimal here: the
    /// normalization point lies on the major axis beyond the sufficient
    /// threshold of Fischer and Freund. When false the value is still an
    /// upper bound on the minimax.
    pub optimal: bool,
}

/// Value of the normalized Chebyshev polynomial `T_k((c - z)/d) / T_k((c - 1)/d)`
/// over the ellipse, i.e. `T_k(w(a)) / |T_k(w(1))|` where `a` is the major
/// axis endpoint. Circles (`d = 0`) give `(radius / |1 - c|)^k`.
pub fn ellipse_minmax(region: &EllipseRegion, k: usize) -> Result<EllipseMinmax> {
    let one = Complex64::new(1.0, 0.0);
    if region.contains(one, 0.0) {
        return Err(ChebyshevError::NormalizationInsideRegion);
    }
    if k == 0 {
        return Ok(EllipseMinmax {
            value: 1.0,
            optimal: true,
        });
    }
    let a = region.semi_major_a;
    if region.focal_d <= 1e-14 * a.max(1e-300) {
        let value = (a / (one - region.center).norm()).powi(k as i32);
        return Ok(EllipseMinmax {
            value,
            optimal: true,
        });
    }
    let d = region.focal_d;
    let u = region.major_direction();
    let w1 = (one - region.center) / (u * d);
    let top = complex_chebyshev(Complex64::new(a / d, 0.0), k).re;
    let value = top / complex_chebyshev(w1, k).norm();
    let r = a / d + ((a / d).powi(2) - 1.0).max(0.0).sqrt();
    let threshold = 0.5 * (r.powf(2f64.sqrt()) + r.powf(-(2f64.sqrt())));
    let optimal = w1.im.abs() <= 1e-12 * w1.norm() && w1.re.abs() >= threshold;
    Ok(EllipseMinmax { value, optimal })
}

/// Result of [`constrained_minmax`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedMinmax {
    /// `max |p|` over the boundary for the returned polynomial.
    pub value: f64,
    /// Certified lower bound on the optimum over the sampled points.
    pub lower_bound: f64,
    pub poly: PolynomialCoeffs,
    pub iterations: usize,
}

/// Real monomial columns `z^i` stacked as `[re; im]` with per-point weights.
fn weighted_vandermonde(points: &[ComplexScalar], weights: &[f64], k: usize) -> DenseMatrix {
    let m = points.len();
    let mut out = DenseMatrix::zeros(2 * m, k + 1);
    let mut cols = vec![vec![0.0; 2 * m]; k + 1];
    for (j, (&z, &w)) in points.iter().zip(weights).enumerate() {
        let s = w.sqrt();
        let mut zp = Complex64::new(1.0, 0.0);
        for col in cols.iter_mut() {
            col[j] = s * zp.re;
            col[m + j] = s * zp.im;
            zp *= z;
        }
    }
    for (i, col) in cols.iter().enumerate() {
        out.set_column(i, col);
    }
    out
}

fn weighted_solve(
    points: &[ComplexScalar],
    weights: &[f64],
    k: usize,
    tau: f64,
) -> Result<Vec<f64>> {
    let r = ResidualMatrix::from_matrix(weighted_vandermonde(points, weights, k));
    let c = if tau.is_infinite() {
        extrapolate::rna_coefficients_or_limit(&r, 0.0)?
    } else {
        extrapolate::cna_coefficients(&r, tau)?
    };
    Ok(c.c)
}

/// Minimizes `max |p(z)|` over the sampled boundary among real polynomials
/// of degree `k` with `p(1) = 1` and `||c|| <= (1 + tau) / sqrt(k + 1)`.
///
/// Lawson iteration: reweight the points by `|p(z_j)|`, re-solving the
/// weighted constrained least-squares problem each time. The weighted
/// optimum is a lower bound on the minimax, which gives a stopping gap.
pub fn constrained_minmax(
    boundary: &NumericalRangeBoundary,
    k: usize,
    tau: f64,
) -> Result<ConstrainedMinmax> {
    constrained_minmax_on(&boundary.points, k, tau)
}

pub fn constrained_minmax_on(
    points: &[ComplexScalar],
    k: usize,
    tau: f64,
) -> Result<ConstrainedMinmax> {
    assert!(tau >= 0.0, "tau must be nonnegative");
    if points.is_empty() {
        return Err(ChebyshevError::EmptyBoundary);
    }
    let m = points.len();
    let mut weights = vec![1.0 / m as f64; m];
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut lower = 0.0f64;
    let mut iterations = 0;
    for it in 0..LAWSON_MAX_ITER {
        iterations = it + 1;
        let c = weighted_solve(points, &weights, k, tau)?;
        let poly = PolynomialCoeffs::from_real(&c);
        let abs: Vec<f64> = points.iter().map(|&z| poly.eval(z).norm()).collect();
        let weighted: f64 = abs.iter().zip(&weights).map(|(a, w)| w * a * a).sum();
        lower = lower.max(weighted.sqrt());
        let upper = abs.iter().cloned().fold(0.0, f64::max);
        if best.as_ref().is_none_or(|(v, _)| upper < *v) {
            best = Some((upper, c));
        }
        let best_val = best.as_ref().map(|b| b.0).unwrap_or(upper);
        if best_val - lower <= LAWSON_GAP * best_val.max(1e-300) || best_val == 0.0 {
            break;
        }
        let total: f64 = abs.iter().zip(&weights).map(|(a, w)| a * w).sum();
        if total == 0.0 {
            break;
        }
        for (w, a) in weights.iter_mut().zip(&abs) {
            *w *= a / total;
        }
    }
    let (value, c) = best.expect("at least one iteration");
    Ok(ConstrainedMinmax {
        value,
        lower_bound: lower.min(value),
        poly: PolynomialCoeffs::from_real(&c),
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrouzeixCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// `||p(G)||_2` against `11.08 max |p|` over the sampled boundary of `W(G)`.
pub fn crouzeix_check(
    g: &DenseMatrix,
    poly: &PolynomialCoeffs,
    boundary: &NumericalRangeBoundary,
) -> CrouzeixCheck {
    let lhs = poly.matrix_norm(g);
    let rhs = CROUZEIX_CONSTANT * poly.max_abs_on(&boundary.points);
    CrouzeixCheck {
        lhs,
        rhs,
        holds: lhs <= rhs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numrange::{boundary_points, convex_hull};

    /// Minimax of `|p|` on a segment by grid search over degree-1 and degree-2
    /// polynomials with `p(1) = 1`.
    fn grid_minimax(lo: f64, hi: f64, k: usize) -> f64 {
        let xs: Vec<f64> = (0..=400)
            .map(|i| lo + (hi - lo) * i as f64 / 400.0)
            .collect();
        let eval = |c: &[f64]| {
            xs.iter()
                .map(|&x| c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci).abs())
                .fold(0.0, f64::max)
        };
        let mut best = f64::INFINITY;
        match k {
            1 => {
                for i in 0..=200_000 {
                    let c1 = -3.0 + 6.0 * i as f64 / 200_000.0;
                    best = best.min(eval(&[1.0 - c1, c1]));
                }
            }
            2 => {
                // p(x) = 1 + a (x - 1) + b (x - 1)^2, zooming grid on the convex objective
                let (mut ca, mut cb, mut half) = (0.0, 0.0, 16.0);
                for _ in 0..40 {
                    let n = 40;
                    let (mut ba, mut bb) = (ca, cb);
                    for i in 0..=n {
                        let a = ca - half + 2.0 * half * i as f64 / n as f64;
                        for j in 0..=n {
                            let b = cb - half + 2.0 * half * j as f64 / n as f64;
                            let v = eval(&[1.0 - a + b, a - 2.0 * b, b]);
                            if v < best {
                                best = v;
                                (ba, bb) = (a, b);
                            }
                        }
                    }
                    (ca, cb, half) = (ba, bb, half * 0.7);
                }
            }
            _ => unreachable!(),
        }
        best
    }

    #[test]
    fn segment_values() {
        assert_eq!(segment_minmax(1.0, 1), 0.0);
        assert_eq!(segment_minmax(0.3, 0), 1.0);
        assert!((segment_minmax(0.25, 1) - 0.6).abs() < 1e-12);
        assert!((segment_minmax(1.0 / 9.0, 2) - 8.0 / 17.0).abs() < 1e-12);
        assert!((grid_minimax(0.0, 0.75, 1) - 0.6).abs() < 1e-4);
        assert!((grid_minimax(0.0, 8.0 / 9.0, 2) - 8.0 / 17.0).abs() < 1e-6);
    }

    #[test]
    fn segment_matches_closed_form() {
        for &kappa in &[0.9, 0.5, 0.1, 0.01] {
            for k in 0..=10 {
                let (a, b) = (
                    segment_minmax(kappa, k),
                    segment_minmax_closed_form(kappa, k),
                );
                assert!((a - b).abs() <= 1e-12, "kappa {kappa} k {k}: {a} vs {b}");
                let s = kappa.sqrt();
                assert!(a <= 2.0 * ((1.0 - s) / (1.0 + s)).powi(k as i32) + 1e-15);
            }
        }
    }

    #[test]
    fn complex_chebyshev_values() {
        for k in 0..6 {
            assert!((complex_chebyshev(Complex64::new(1.0, 0.0), k) - 1.0).norm() < 1e-12);
        }
        assert!(
            (complex_chebyshev(Complex64::new(5.0 / 3.0, 0.0), 1).re - 5.0 / 3.0).abs() < 1e-14
        );
        assert!((complex_chebyshev(Complex64::new(1.25, 0.0), 2).re - 17.0 / 8.0).abs() < 1e-14);
        // on [-1, 1], T_k(cos t) = cos(k t)
        let t: f64 = 0.7;
        let v = complex_chebyshev(Complex64::new(t.cos(), 0.0), 5);
        assert!((v.re - (5.0 * t).cos()).abs() < 1e-12 && v.im.abs() < 1e-12);
        // recurrence on a complex argument
        let z = Complex64::new(0.3, 0.8);
        let t3 = 4.0 * z * z * z - 3.0 * z;
        assert!((complex_chebyshev(z, 3) - t3).norm() < 1e-12);
    }

    #[test]
    fn degenerate_ellipse_equals_segment() {
        for &kappa in &[0.5, 0.1, 0.01] {
            let h = (1.0 - kappa) / 2.0;
            let e = EllipseRegion::real_axis(h, h, h);
            for k in 0..8 {
                let v = ellipse_minmax(&e, k).unwrap().value;
                assert!((v - segment_minmax(kappa, k)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn ellipse_monotone_in_eccentricity() {
        let a = 0.8;
        let mut prev = f64::INFINITY;
        for i in 0..10 {
            let d = a * i as f64 / 9.0;
            let v = ellipse_minmax(&EllipseRegion::real_axis(0.0, d, a), 6)
                .unwrap()
                .value;
            assert!(v <= prev + 1e-14, "d {d}: {v} > {prev}");
            prev = v;
        }
    }

    #[test]
    fn ellipse_rejects_one_inside() {
        let e = EllipseRegion::real_axis(0.5, 0.2, 0.6);
        assert_eq!(
            ellipse_minmax(&e, 3),
            Err(ChebyshevError::NormalizationInsideRegion)
        );
    }

    #[test]
    fn ellipse_value_attained_on_boundary() {
        let e = EllipseRegion::real_axis(0.1, 0.3, 0.5);
        let k = 4;
        let v = ellipse_minmax(&e, k).unwrap().value;
        let d = e.focal_d;
        let norm = complex_chebyshev(Complex64::new((1.0 - 0.1) / d, 0.0), k);
        let m = e
            .boundary(2000)
            .into_iter()
            .map(|z| (complex_chebyshev((z - 0.1) / d, k) / norm).norm())
            .fold(0.0, f64::max);
        assert!((m - v).abs() < 1e-6 * v);
    }

    #[test]
    fn constrained_tau_zero_is_uniform() {
        let g = DenseMatrix::from_rows(&[vec![0.2, 0.5], vec![-0.3, 0.4]]);
        let b = boundary_points(&g, 128).unwrap();
        let k = 3;
        let r = constrained_minmax(&b, k, 0.0).unwrap();
        for c in &r.poly.coeffs {
            assert!((c.re - 0.25).abs() < 1e-6);
        }
        let expected = b
            .points
            .iter()
            .map(|&z| (1.0 + z + z * z + z * z * z).norm() / 4.0)
            .fold(0.0, f64::max);
        assert!((r.value - expected).abs() < 1e-6);
    }

    #[test]
    fn constrained_unbounded_tau_matches_segment() {
        let kappa = 0.1;
        let pts: Vec<ComplexScalar> = (0..=400)
            .map(|i| Complex64::new((1.0 - kappa) * i as f64 / 400.0, 0.0))
            .collect();
        for k in 1..=4 {
            let r = constrained_minmax_on(&pts, k, f64::INFINITY).unwrap();
            assert!(r.poly.is_normalized(1e-10));
            assert!(
                (r.value - segment_minmax(kappa, k)).abs() < 1e-3,
                "k {k}: {}",
                r.value
            );
        }
    }

    #[test]
    fn constrained_nonincreasing_in_tau() {
        let g = DenseMatrix::from_rows(&[vec![0.3, 0.6], vec![-0.2, 0.5]]);
        let b = boundary_points(&g, 256).unwrap();
        let mut prev = f64::INFINITY;
        for &tau in &[0.0, 0.1, 0.5, 2.0, 10.0, f64::INFINITY] {
            let r = constrained_minmax(&b, 3, tau).unwrap();
            assert!(r.poly.coefficient_norm() <= (1.0 + tau) / 2.0 + 1e-8);
            assert!(r.value <= prev + 1e-3, "tau {tau}: {} > {prev}", r.value);
            prev = prev.min(r.value);
        }
    }

    #[test]
    fn crouzeix_trivial_cases() {
        let g = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]);
        let b = boundary_points(&g, 256).unwrap();
        let one = PolynomialCoeffs::from_real(&[1.0]);
        let c = crouzeix_check(&g, &one, &b);
        assert!((c.lhs - 1.0).abs() < 1e-12 && (c.rhs - 11.08).abs() < 1e-12 && c.holds);
        // normal matrix, p(z) = z: ||G|| equals max |z| on the hull
        let n = DenseMatrix::from_diag(&[-0.4, 0.3, 0.9]);
        let bn = boundary_points(&n, 64).unwrap();
        let z = PolynomialCoeffs::from_real(&[0.0, 1.0]);
        let c = crouzeix_check(&n, &z, &bn);
        let hull_max = convex_hull(&bn.points)
            .iter()
            .map(|p| p.norm())
            .fold(0.0, f64::max);
        assert!(c.lhs <= hull_max + 1e-12);
    }

    #[test]
    fn matrix_eval_with_complex_coefficients() {
        let g = DenseMatrix::from_diag(&[2.0]);
        let p = PolynomialCoeffs {
            coeffs: vec![Complex64::new(0.0, 1.0), Complex64::new(1.0, 0.0)],
        };
        assert!((p.matrix_norm(&g) - 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn surface_csv_shape() {
        let p = PolynomialCoeffs::from_real(&[0.5, 0.5]);
        let mut buf = Vec::new();
        p.write_surface_csv(&mut buf, (-1.0, 1.0), (-1.0, 1.0), 5)
            .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 26);
        assert!(text.starts_with("re,im,abs_p\n"));
    }
}
