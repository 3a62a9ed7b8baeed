//! Numerical range (field of values) of real matrices, the block operators of
//! Nesterov's method and of the primal-dual method on quadratics, and the
//! test `max re W(G) < 1` that decides whether extrapolation can help.
//!
//! For each angle `theta` the top eigenpair of
//! `H_theta = (e^{i theta} G + e^{-i theta} G^T) / 2` gives a supporting line
//! `re(e^{i theta} z) <= lambda_max` of `W(G)` and a boundary point
//! `p_theta = v^* G v`. The Hermitian problem `C + iS` (with `C` symmetric
//! and `S` skew) is solved as the real symmetric `[[C, -S], [S, C]]`.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{self, ComplexScalar, DenseMatrix, LinalgError};

/// Angle grid used when the caller does not pick one.
pub const DEFAULT_ANGLES: usize = 256;
pub const MIN_ANGLES: usize = 8;
const MAX_ANGLES: usize = 8192;
const AREA_TOL: f64 = 1e-8;
const FEASIBILITY_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumRangeError {
    #[error("eigenvalue {value} of A lies outside [0, 1)")]
    SpectrumOutOfRange { value: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, NumRangeError>;

/// Sampled boundary of `W(G)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericalRangeBoundary {
    pub thetas: Vec<f64>,
    /// `p_theta`, one per angle.
    pub points: Vec<ComplexScalar>,
    /// `lambda_max(H_theta)`, the support function of `W(G)` in direction
    /// `e^{-i theta}`.
    pub support: Vec<f64>,
    /// Convex hull of `points`, counter-clockwise; two points for a segment.
    pub hull: Vec<ComplexScalar>,
    pub max_real: f64,
}

impl NumericalRangeBoundary {
    /// True when `z` satisfies every sampled supporting half-plane up to `tol`.
    /// This is an outer approximation, so points of `W(G)` always pass.
    pub fn contains(&self, z: ComplexScalar, tol: f64) -> bool {
        self.thetas
            .iter()
            .zip(&self.support)
            .all(|(&t, &h)| (Complex64::from_polar(1.0, t) * z).re <= h + tol)
    }

    pub fn area(&self) -> f64 {
        polygon_area(&self.hull)
    }

    /// Largest modulus over the sampled points.
    pub fn radius(&self) -> f64 {
        self.points.iter().map(|p| p.norm()).fold(0.0, f64::max)
    }

    /// Writes `theta,re,im` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["theta", "re", "im"])?;
        for (t, p) in self.thetas.iter().zip(&self.points) {
            w.write_record([t.to_string(), p.re.to_string(), p.im.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Real embedding of `H_theta`.
fn doubled_hermitian(g: &DenseMatrix, theta: f64) -> DenseMatrix {
    let n = g.rows();
    let (s, c) = theta.sin_cos();
    DenseMatrix::from_fn(2 * n, 2 * n, |i, j| {
        let (bi, ii) = (i / n, i % n);
        let (bj, jj) = (j / n, j % n);
        let sym = 0.5 * (g[(ii, jj)] + g[(jj, ii)]);
        let skew = 0.5 * (g[(ii, jj)] - g[(jj, ii)]);
        match (bi, bj) {
            (0, 0) | (1, 1) => c * sym,
            (0, 1) => -s * skew,
            _ => s * skew,
        }
    })
}

/// `v^* G v / v^* v` for a complex `v`.
pub fn rayleigh_quotient(g: &DenseMatrix, v: &[ComplexScalar]) -> ComplexScalar {
    let n = g.rows();
    let mut num = Complex64::new(0.0, 0.0);
    let mut den = 0.0;
    for i in 0..n {
        let mut gv = Complex64::new(0.0, 0.0);
        for j in 0..n {
            gv += v[j] * g[(i, j)];
        }
        num += v[i].conj() * gv;
        den += v[i].norm_sqr();
    }
    num / den
}

/// `(lambda_max(H_theta), p_theta)`.
pub fn support_point(g: &DenseMatrix, theta: f64) -> Result<(f64, ComplexScalar)> {
    let n = g.rows();
    let e = linalg::sym_eig_extreme(&doubled_hermitian(g, theta))?;
    let v: Vec<ComplexScalar> = (0..n)
        .map(|i| Complex64::new(e.max_vector[i], e.max_vector[n + i]))
        .collect();
    Ok((e.max, rayleigh_quotient(g, &v)))
}

fn cross(o: ComplexScalar, a: ComplexScalar, b: ComplexScalar) -> f64 {
    (a.re - o.re) * (b.im - o.im) - (a.im - o.im) * (b.re - o.re)
}

/// Monotone-chain convex hull, counter-clockwise, collinear points dropped.
/// Collinear input collapses to its two extreme points.
pub fn convex_hull(points: &[ComplexScalar]) -> Vec<ComplexScalar> {
    let mut pts: Vec<ComplexScalar> = points.to_vec();
    pts.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    pts.dedup_by(|a, b| (*a - *b).norm() <= 1e-14 * (1.0 + b.norm()));
    if pts.len() <= 2 {
        return pts;
    }
    let scale = pts.iter().map(|p| p.norm()).fold(0.0, f64::max).max(1e-300);
    let eps = 1e-13 * scale * scale;
    let mut lower: Vec<ComplexScalar> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= eps {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<ComplexScalar> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= eps {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    if lower.len() == 2 && (lower[0] - lower[1]).norm() == 0.0 {
        lower.truncate(1);
    }
    lower
}

pub fn polygon_area(hull: &[ComplexScalar]) -> f64 {
    if hull.len() < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..hull.len() {
        let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
        s += a.re * b.im - b.re * a.im;
    }
    0.5 * s.abs()
}

/// `max re(e^{i phi} z)` over the vertices.
pub fn support_of(points: &[ComplexScalar], phi: f64) -> f64 {
    let r = Complex64::from_polar(1.0, phi);
    points
        .iter()
        .map(|&p| (r * p).re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Hausdorff distance between the convex hulls of two point sets, computed
/// as the largest support-function gap over `directions` evenly spaced
/// angles.
pub fn hausdorff_distance(a: &[ComplexScalar], b: &[ComplexScalar], directions: usize) -> f64 {
    (0..directions)
        .map(|k| {
            let phi = 2.0 * PI * k as f64 / directions as f64;
            (support_of(a, phi) - support_of(b, phi)).abs()
        })
        .fold(0.0, f64::max)
}

fn angle_grid(n: usize) -> Vec<f64> {
    (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect()
}

fn boundary_on_grid(g: &DenseMatrix, thetas: Vec<f64>) -> Result<NumericalRangeBoundary> {
    let samples: Vec<(f64, ComplexScalar)> = thetas
        .par_iter()
        .map(|&t| support_point(g, t))
        .collect::<Result<_>>()?;
    let support: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let points: Vec<ComplexScalar> = samples.iter().map(|s| s.1).collect();
    let hull = convex_hull(&points);
    // theta = 0 is always on the grid, and its support value is max re W(G)
    let max_real = support[0].max(hull.iter().map(|p| p.re).fold(f64::NEG_INFINITY, f64::max));
    Ok(NumericalRangeBoundary {
        thetas,
        points,
        support,
        hull,
        max_real,
    })
}

/// Boundary sampled at `n_angles` evenly spaced angles starting at 0.
pub fn boundary_points(g: &DenseMatrix, n_angles: usize) -> Result<NumericalRangeBoundary> {
    assert!(g.is_square(), "numerical range needs a square matrix");
    assert!(n_angles >= MIN_ANGLES, "need at least {MIN_ANGLES} angles");
    boundary_on_grid(g, angle_grid(n_angles))
}

/// Boundary with the angle grid doubled from [`DEFAULT_ANGLES`] until the hull
/// area changes by less than `1e-8` (relative to the area) or 8192 angles.
pub fn numerical_range(g: &DenseMatrix) -> Result<NumericalRangeBoundary> {
    let mut n = DEFAULT_ANGLES;
    let mut b = boundary_points(g, n)?;
    while n < MAX_ANGLES {
        n *= 2;
        let next = boundary_points(g, n)?;
        let (a0, a1) = (b.area(), next.area());
        b = next;
        if (a1 - a0).abs() <= AREA_TOL * a1.max(1e-300) || a1 == 0.0 {
            break;
        }
    }
    Ok(b)
}

/// `lambda_max((G + G^T) / 2)`.
pub fn max_real_part(g: &DenseMatrix) -> Result<f64> {
    Ok(linalg::sym_eig_extreme(&g.symmetric_part())?.max)
}

/// Ellipse given by its two axes `x <-> y` and `w <-> z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipseRegion {
    pub x_end: ComplexScalar,
    pub y_end: ComplexScalar,
    pub w_end: ComplexScalar,
    pub z_end: ComplexScalar,
    pub center: ComplexScalar,
    /// Half the distance between the foci.
    pub focal_d: f64,
    pub semi_major_a: f64,
    /// `(a + b) / d`, the parameter `r` of `|z - 1| + |z + 1| <= r + 1/r`
    /// after mapping the foci to `-1, 1`; infinite for circles.
    pub ratio_r: f64,
}

impl EllipseRegion {
    pub fn from_axes(
        x: ComplexScalar,
        y: ComplexScalar,
        w: ComplexScalar,
        z: ComplexScalar,
    ) -> Self {
        let center = 0.5 * (x + y);
        let h1 = 0.5 * (y - x).norm();
        let h2 = 0.5 * (z - w).norm();
        let (a, b) = if h1 >= h2 { (h1, h2) } else { (h2, h1) };
        let d = (a * a - b * b).max(0.0).sqrt();
        let ratio_r = if d > 0.0 { (a + b) / d } else { f64::INFINITY };
        Self {
            x_end: x,
            y_end: y,
            w_end: w,
            z_end: z,
            center,
            focal_d: d,
            semi_major_a: a,
            ratio_r,
        }
    }

    /// Ellipse centered at real `c` with its major axis (semi-length `a`) on
    /// the real line and foci at `c +- d`.
    pub fn real_axis(c: f64, d: f64, a: f64) -> Self {
        assert!(d >= 0.0 && a >= d);
        let b = (a * a - d * d).sqrt();
        Self::from_axes(
            Complex64::new(c - a, 0.0),
            Complex64::new(c + a, 0.0),
            Complex64::new(c, -b),
            Complex64::new(c, b),
        )
    }

    pub fn semi_minor(&self) -> f64 {
        (self.semi_major_a.powi(2) - self.focal_d.powi(2))
            .max(0.0)
            .sqrt()
    }

    /// Unit vector along the major axis.
    pub fn major_direction(&self) -> ComplexScalar {
        let h1 = self.y_end - self.x_end;
        let h2 = self.z_end - self.w_end;
        let v = if h1.norm() >= h2.norm() { h1 } else { h2 };
        if v.norm() == 0.0 {
            Complex64::new(1.0, 0.0)
        } else {
            v / v.norm()
        }
    }

    /// Foci `center -+ d u`.
    pub fn foci(&self) -> (ComplexScalar, ComplexScalar) {
        let u = self.major_direction() * self.focal_d;
        (self.center - u, self.center + u)
    }

    pub fn contains(&self, p: ComplexScalar, tol: f64) -> bool {
        let (f1, f2) = self.foci();
        (p - f1).norm() + (p - f2).norm() <= 2.0 * self.semi_major_a + tol
    }

    /// `n` points on the boundary.
    pub fn boundary(&self, n: usize) -> Vec<ComplexScalar> {
        let u = self.major_direction();
        let v = u * Complex64::new(0.0, 1.0);
        let (a, b) = (self.semi_major_a, self.semi_minor());
        (0..n)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / n as f64;
                self.center + u * (a * t.cos()) + v * (b * t.sin())
            })
            .collect()
    }
}

/// Boundary ellipse of the numerical range of `[[a, b], [c, d]]`.
pub fn ellipse_2x2(a: f64, b: f64, c: f64, d: f64) -> EllipseRegion {
    let mid = 0.5 * (a + d);
    let rad = 0.5 * ((a - d).powi(2) + (b + c).powi(2)).sqrt();
    let half = 0.5 * (b - c).abs();
    EllipseRegion::from_axes(
        Complex64::new(mid - rad, 0.0),
        Complex64::new(mid + rad, 0.0),
        Complex64::new(mid, -half),
        Complex64::new(mid, half),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    NesterovFull,
    NesterovEigenBlock,
    ChambollePockQuadratic,
    Generic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockOperator {
    pub g: DenseMatrix,
    pub kind: OperatorKind,
}

impl BlockOperator {
    pub fn generic(g: DenseMatrix) -> Self {
        Self {
            g,
            kind: OperatorKind::Generic,
        }
    }

    pub fn power(&self, p: usize) -> DenseMatrix {
        assert!(p >= 1);
        let mut out = self.g.clone();
        for _ in 1..p {
            out = out.matmul(&self.g);
        }
        out
    }
}

fn check_spectrum(values: &[f64]) -> Result<()> {
    for &v in values {
        if !(-1e-12..1.0).contains(&v) {
            return Err(NumRangeError::SpectrumOutOfRange { value: v });
        }
    }
    Ok(())
}

/// `[[0, A], [-beta I, (1 + beta) A]]` for symmetric `A` with spectrum in
/// `[0, 1)`.
pub fn nesterov_operator(a: &DenseMatrix, beta: f64) -> Result<BlockOperator> {
    let ev = linalg::sym_eigen(a)?;
    check_spectrum(&ev.values)?;
    let n = a.rows();
    let g = DenseMatrix::from_fn(2 * n, 2 * n, |i, j| match (i / n, j / n) {
        (0, 0) => 0.0,
        (0, 1) => a[(i, j - n)],
        (1, 0) => {
            if i - n == j {
                -beta
            } else {
                0.0
            }
        }
        _ => (1.0 + beta) * a[(i - n, j - n)],
    });
    Ok(BlockOperator {
        g,
        kind: OperatorKind::NesterovFull,
    })
}

/// The 2x2 blocks `[[0, lambda], [-beta, (1 + beta) lambda]]`, one per
/// eigenvalue of `A`.
pub fn nesterov_blocks(spectrum: &[f64], beta: f64) -> Result<Vec<BlockOperator>> {
    check_spectrum(spectrum)?;
    Ok(spectrum
        .iter()
        .map(|&l| BlockOperator {
            g: DenseMatrix::from_rows(&[vec![0.0, l], vec![-beta, (1.0 + beta) * l]]),
            kind: OperatorKind::NesterovEigenBlock,
        })
        .collect())
}

/// `re W(G)` for Nesterov's operator at condition ratio `L / mu`, from the
/// largest eigen-block.
pub fn nesterov_max_real(ratio: f64) -> f64 {
    assert!(ratio >= 1.0, "L / mu must be at least 1");
    let kappa = 1.0 / ratio;
    let beta = (1.0 - kappa.sqrt()) / (1.0 + kappa.sqrt());
    let ln = 1.0 - kappa;
    let t = (1.0 + beta) * ln;
    0.5 * (t + (t * t + (ln - beta).powi(2)).sqrt())
}

/// The ratio `L / mu` at which [`nesterov_max_real`] crosses 1, by bisection
/// on `[1, hi]`.
pub fn nesterov_feasibility_threshold(hi: f64) -> f64 {
    let (mut lo, mut hi) = (1.0, hi);
    assert!(nesterov_max_real(hi) > 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if nesterov_max_real(mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Primal-dual iteration operator on `(y, x)` for
/// `min 1/2 ||A x - b||^2 + mu/2 ||x||^2`.
pub fn cp_operator(a: &DenseMatrix, sigma: f64, tau: f64, mu: f64) -> BlockOperator {
    assert!(sigma > 0.0 && tau > 0.0 && mu >= 0.0);
    let (m, n) = (a.rows(), a.cols());
    let s1 = 1.0 + sigma;
    let t1 = 1.0 + tau * mu;
    let ata = a.gram();
    let g = DenseMatrix::from_fn(m + n, m + n, |i, j| match (i < m, j < m) {
        (true, true) => {
            if i == j {
                1.0 / s1
            } else {
                0.0
            }
        }
        (true, false) => sigma * a[(i, j - m)] / s1,
        (false, true) => tau * a[(j, i - m)] / (s1 * t1),
        (false, false) => {
            let (r, c) = (i - m, j - m);
            let diag = if r == c { 1.0 / t1 } else { 0.0 };
            diag - tau * sigma * ata[(r, c)] / (s1 * t1)
        }
    });
    BlockOperator {
        g,
        kind: OperatorKind::ChambollePockQuadratic,
    }
}

/// Numerical range of `G^p`.
pub fn power_range(g: &BlockOperator, p: usize, n_angles: usize) -> Result<NumericalRangeBoundary> {
    boundary_points(&g.power(p), n_angles)
}

/// Smallest `p <= max_p` with `max re W(G^p) < 1`.
pub fn first_feasible_power(g: &BlockOperator, max_p: usize) -> Result<Option<usize>> {
    let mut gp = g.g.clone();
    for p in 1..=max_p {
        if p > 1 {
            gp = gp.matmul(&g.g);
        }
        if max_real_part(&gp)? < 1.0 - FEASIBILITY_MARGIN {
            return Ok(Some(p));
        }
    }
    Ok(None)
}

/// `1` lies strictly outside `W(G)` on the right.
pub fn acceleration_feasible(boundary: &NumericalRangeBoundary) -> bool {
    boundary.max_real < 1.0 - FEASIBILITY_MARGIN
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn jordan() -> DenseMatrix {
        DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]])
    }

    /// Rayleigh quotients of many random complex unit vectors.
    fn rayleigh_cloud(g: &DenseMatrix, n: usize, seed: u64) -> Vec<ComplexScalar> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let v: Vec<ComplexScalar> = (0..g.rows())
                    .map(|_| {
                        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                    })
                    .collect();
                rayleigh_quotient(g, &v)
            })
            .collect()
    }

    #[test]
    fn symmetric_matrix_gives_segment() {
        let b = boundary_points(&DenseMatrix::from_diag(&[1.0, 3.0]), 64).unwrap();
        assert_eq!(b.hull.len(), 2);
        assert!((b.hull[0].re - 1.0).abs() < 1e-12 && (b.hull[1].re - 3.0).abs() < 1e-12);
        assert!((b.max_real - 3.0).abs() < 1e-12);
        assert!(b.points.iter().all(|p| p.im.abs() < 1e-12));
    }

    #[test]
    fn jordan_block_is_disc_of_radius_half() {
        let b = boundary_points(&jordan(), 256).unwrap();
        assert!((b.max_real - 0.5).abs() < 1e-12);
        for p in &b.points {
            assert!((p.norm() - 0.5).abs() < 1e-10);
        }
        // dense Rayleigh sampling never exceeds the computed boundary
        let cloud = rayleigh_cloud(&jordan(), 20_000, 1);
        let rmax = cloud.iter().map(|p| p.norm()).fold(0.0, f64::max);
        assert!(rmax <= 0.5 + 1e-12 && rmax > 0.49);
    }

    #[test]
    fn real_matrix_range_is_conjugate_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = DenseMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
        let b = boundary_points(&g, 128).unwrap();
        let conj: Vec<ComplexScalar> = b.hull.iter().map(|p| p.conj()).collect();
        assert!(hausdorff_distance(&b.hull, &conj, 720) < 1e-8);
    }

    #[test]
    fn max_real_part_cases() {
        assert!(
            (max_real_part(&DenseMatrix::from_diag(&[-1.0, 2.0])).unwrap() - 2.0).abs() < 1e-14
        );
        assert!((max_real_part(&jordan()).unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn nesterov_full_max_real_agrees_with_boundary() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let spectrum: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..0.95)).collect();
        let a = DenseMatrix::from_diag(&spectrum);
        let g = nesterov_operator(&a, 0.5).unwrap();
        let b = boundary_points(&g.g, 256).unwrap();
        assert!((b.max_real - max_real_part(&g.g).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn ellipse_of_diagonal_and_jordan() {
        let e = ellipse_2x2(1.0, 0.0, 0.0, 3.0);
        assert_eq!((e.x_end.re, e.y_end.re), (1.0, 3.0));
        assert_eq!(e.w_end, e.z_end);
        let j = ellipse_2x2(0.0, 1.0, 0.0, 0.0);
        assert_eq!((j.x_end.re, j.y_end.re), (-0.5, 0.5));
        assert_eq!((j.w_end.im, j.z_end.im), (-0.5, 0.5));
        assert_eq!(j.focal_d, 0.0);
        let j2 = ellipse_2x2(0.0, 2.0, 0.0, 0.0);
        assert_eq!((j2.x_end.re, j2.y_end.re, j2.z_end.im), (-1.0, 1.0, 1.0));
    }

    #[test]
    fn ellipse_matches_sampled_boundary() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let v: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g = DenseMatrix::from_rows(&[vec![v[0], v[1]], vec![v[2], v[3]]]);
            let e = ellipse_2x2(v[0], v[1], v[2], v[3]);
            let b = boundary_points(&g, 256).unwrap();
            let pts = e.boundary(512);
            assert!(hausdorff_distance(&b.hull, &pts, 720) < 1e-3);
        }
    }

    #[test]
    fn nesterov_block_substitution() {
        let blocks = nesterov_blocks(&[0.75], 1.0 / 3.0).unwrap();
        let g = &blocks[0].g;
        assert_eq!(g.row(0), &[0.0, 0.75]);
        assert!((g[(1, 0)] + 1.0 / 3.0).abs() < 1e-16 && (g[(1, 1)] - 1.0).abs() < 1e-15);
        assert!(matches!(
            nesterov_blocks(&[1.0], 0.1),
            Err(NumRangeError::SpectrumOutOfRange { .. })
        ));
    }

    #[test]
    fn nesterov_closed_form_values() {
        assert_eq!(nesterov_max_real(1.0), 0.0);
        assert!((nesterov_max_real(4.0) - 25.0 / 24.0).abs() < 1e-14);
        let blocks = nesterov_blocks(&[0.75], 1.0 / 3.0).unwrap();
        assert!((max_real_part(&blocks[0].g).unwrap() - 25.0 / 24.0).abs() < 1e-12);
        let t = nesterov_feasibility_threshold(10.0);
        assert!((t - 3.678_677_812_942_9).abs() < 1e-9);
        assert!(nesterov_max_real(2.0) < 1.0);
    }

    #[test]
    fn cp_operator_scalar_case() {
        let a = DenseMatrix::from_rows(&[vec![1.0]]);
        let g = cp_operator(&a, 1.0, 1.0, 0.0).g;
        assert_eq!(g, DenseMatrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]));
    }

    #[test]
    fn cp_operator_symmetric_on_balanced_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = DenseMatrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
        let (tau, mu) = (0.7, 0.3);
        let g = cp_operator(&a, tau / (1.0 + tau * mu), tau, mu).g;
        assert!(g.asymmetry() <= 1e-12);
        let g2 = cp_operator(&a, 0.9, tau, mu).g;
        assert!(g2.asymmetry() > 1e-3);
    }

    #[test]
    fn power_one_and_contraction_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = DenseMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let g = BlockOperator::generic(m.scale(0.8 / linalg::spectral_norm(&m)));
        assert_eq!(
            power_range(&g, 1, 64).unwrap(),
            boundary_points(&g.g, 64).unwrap()
        );
        let norm = linalg::spectral_norm(&g.g);
        for p in 1..6 {
            let b = power_range(&g, p, 64).unwrap();
            assert!(b.max_real <= norm.powi(p as i32) + 1e-12);
        }
    }

    #[test]
    fn feasibility_cases() {
        let gd = BlockOperator::generic(DenseMatrix::from_diag(&[0.0, 0.5, 0.9]));
        assert!(acceleration_feasible(&boundary_points(&gd.g, 64).unwrap()));
        let k4 = nesterov_blocks(&[0.75], 1.0 / 3.0).unwrap();
        assert!(!acceleration_feasible(
            &boundary_points(&k4[0].g, 256).unwrap()
        ));
        let kappa: f64 = 0.5;
        let beta = (1.0 - kappa.sqrt()) / (1.0 + kappa.sqrt());
        let k2 = nesterov_blocks(&[1.0 - kappa], beta).unwrap();
        assert!(acceleration_feasible(
            &boundary_points(&k2[0].g, 256).unwrap()
        ));
    }

    #[test]
    fn random_rayleigh_quotients_are_contained() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let g = DenseMatrix::from_fn(5, 5, |_, _| rng.random_range(-1.0..1.0));
        let b = boundary_points(&g, 256).unwrap();
        for z in rayleigh_cloud(&g, 1000, 5) {
            assert!(b.contains(z, 1e-6));
        }
    }

    #[test]
    fn rotation_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let g = DenseMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let b = boundary_points(&g, 512).unwrap();
        for (t, h) in b.thetas.iter().zip(&b.support).step_by(17) {
            assert!((support_of(&b.points, *t) - h).abs() < 1e-6);
        }
    }

    #[test]
    fn boundary_csv_has_header_and_rows() {
        let b = boundary_points(&jordan(), 8).unwrap();
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("theta,re,im\n"));
        assert_eq!(text.lines().count(), 9);
    }
}
