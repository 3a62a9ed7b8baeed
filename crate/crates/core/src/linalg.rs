//! Small dense linear-algebra kernels.
//!
//! Everything in the crate works on short, dense problems: extrapolation
//! systems are `N x N` with `N <= ~20`, numerical-range eigenproblems are a
//! few dozen rows. Storage is a plain row-major `Vec<f64>`; vectors are
//! `Vec<f64>` / `&[f64]`.

use std::fmt;
use std::ops::{Index, IndexMut};

use thiserror::Error;

/// Complex scalar used for points of the numerical range.
pub type ComplexScalar = num_complex::Complex64;

/// Dense real vector.
pub type DenseVector = Vec<f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {index} = {pivot:e})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("eigen iteration did not converge within {iterations} sweeps")]
    ConvergenceFailure { iterations: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Builds a matrix from row-major data. Panics if the length is wrong.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data has wrong length");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * m);
        for r in rows {
            assert_eq!(r.len(), m, "ragged rows");
            data.extend_from_slice(r);
        }
        Self::from_row_major(n, m, data)
    }

    /// Builds a `d x columns.len()` matrix whose columns are the given vectors.
    pub fn from_columns(columns: &[&[f64]]) -> Self {
        let cols = columns.len();
        let rows = columns.first().map_or(0, |c| c.len());
        let mut m = Self::zeros(rows, cols);
        for (j, c) in columns.iter().enumerate() {
            assert_eq!(c.len(), rows, "columns of unequal length");
            for (i, &v) in c.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> DenseVector {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[f64]) {
        assert_eq!(values.len(), self.rows);
        for (i, &v) in values.iter().enumerate() {
            self[(i, j)] = v;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        out
    }

    /// `M x`
    pub fn matvec(&self, x: &[f64]) -> DenseVector {
        assert_eq!(x.len(), self.cols, "matvec shape mismatch");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `M^T x`
    pub fn tmatvec(&self, x: &[f64]) -> DenseVector {
        assert_eq!(x.len(), self.rows, "tmatvec shape mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, &m) in out.iter_mut().zip(self.row(i)) {
                *o += m * xi;
            }
        }
        out
    }

    /// `M^T M`
    pub fn gram(&self) -> Self {
        let n = self.cols;
        let mut g = Self::zeros(n, n);
        for r in 0..self.rows {
            let row = self.row(r);
            for i in 0..n {
                let a = row[i];
                if a == 0.0 {
                    continue;
                }
                for j in i..n {
                    g.data[i * n + j] += a * row[j];
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                g.data[i * n + j] = g.data[j * n + i];
            }
        }
        g
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Symmetric part `(M + M^T) / 2`.
    pub fn symmetric_part(&self) -> Self {
        assert!(self.is_square());
        Self::from_fn(self.rows, self.cols, |i, j| {
            0.5 * (self[(i, j)] + self[(j, i)])
        })
    }

    /// Relative asymmetry `max |M - M^T| / max(1, max |M|)`.
    pub fn asymmetry(&self) -> f64 {
        assert!(self.is_square());
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst / self.max_abs().max(1.0)
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        self.is_square() && self.asymmetry() <= rel_tol
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> DenseVector {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> DenseVector {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scaled(a: &[f64], s: f64) -> DenseVector {
    a.iter().map(|x| x * s).collect()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Lower-triangular Cholesky factor of `M + shift I`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: DenseMatrix,
}

impl Cholesky {
    pub fn factor(m: &DenseMatrix, shift: f64) -> Result<Self> {
        assert!(m.is_square(), "Cholesky needs a square matrix");
        let n = m.rows();
        let mut l = DenseMatrix::zeros(n, n);
        for j in 0..n {
            let mut diag = m[(j, j)] + shift;
            for k in 0..j {
                diag -= l[(j, k)] * l[(j, k)];
            }
            if !(diag > 0.0) {
                return Err(LinalgError::NotPositiveDefinite {
                    index: j,
                    pivot: diag,
                });
            }
            let ljj = diag.sqrt();
            l[(j, j)] = ljj;
            for i in (j + 1)..n {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / ljj;
            }
        }
        Ok(Self { l })
    }

    /// Smallest squared pivot, i.e. the smallest `L_jj^2`.
    pub fn min_pivot(&self) -> f64 {
        (0..self.l.rows())
            .map(|j| self.l[(j, j)] * self.l[(j, j)])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn solve(&self, rhs: &[f64]) -> DenseVector {
        let n = self.l.rows();
        assert_eq!(rhs.len(), n);
        let l = &self.l;
        let mut z = rhs.to_vec();
        for i in 0..n {
            let mut s = z[i];
            for k in 0..i {
                s -= l[(i, k)] * z[k];
            }
            z[i] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in (i + 1)..n {
                s -= l[(k, i)] * z[k];
            }
            z[i] = s / l[(i, i)];
        }
        z
    }
}

/// Solves `(M + shift I) v = rhs` for symmetric positive definite `M + shift I`.
pub fn sym_solve_shifted(m: &DenseMatrix, shift: f64, rhs: &[f64]) -> Result<DenseVector> {
    if rhs.len() != m.rows() {
        return Err(LinalgError::DimensionMismatch {
            expected: m.rows(),
            got: rhs.len(),
        });
    }
    Ok(Cholesky::factor(m, shift)?.solve(rhs))
}

/// Full eigendecomposition of a symmetric matrix. Eigenvalues ascend; column
/// `j` of `vectors` is the unit eigenvector for `values[j]`.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: DenseVector,
    pub vectors: DenseMatrix,
}

const QL_MAX_ITERATIONS: usize = 60;

/// Householder tridiagonalization followed by implicit QL (EISPACK
/// `tred2`/`tql2`). Only the lower triangle is read.
pub fn sym_eigen(m: &DenseMatrix) -> Result<SymmetricEigen> {
    assert!(m.is_square(), "eigendecomposition needs a square matrix");
    let n = m.rows();
    if n == 0 {
        return Ok(SymmetricEigen {
            values: Vec::new(),
            vectors: DenseMatrix::zeros(0, 0),
        });
    }
    let mut v = m.symmetric_part();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalize(&mut v, &mut d, &mut e);
    tridiagonal_ql(&mut v, &mut d, &mut e)?;
    Ok(SymmetricEigen {
        values: d,
        vectors: v,
    })
}

fn tridiagonalize(v: &mut DenseMatrix, d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    for j in 0..n {
        d[j] = v[(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for k in 0..i {
            scale += d[k].abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[(i - 1, j)];
                v[(i, j)] = 0.0;
                v[(j, i)] = 0.0;
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[(j, i)] = f;
                g = e[j] + v[(j, j)] * f;
                for k in (j + 1)..i {
                    g += v[(k, j)] * d[k];
                    e[k] += v[(k, j)] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[(i - 1, j)];
                v[(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }

    for i in 0..n - 1 {
        v[(n - 1, i)] = v[(i, i)];
        v[(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[(k, i + 1)] * v[(k, j)];
                }
                for k in 0..=i {
                    v[(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[(n - 1, j)];
        v[(n - 1, j)] = 0.0;
    }
    v[(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

fn tridiagonal_ql(v: &mut DenseMatrix, d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let mut f = 0.0;
    let mut tst1 = 0.0_f64;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > QL_MAX_ITERATIONS {
                    return Err(LinalgError::ConvergenceFailure {
                        iterations: QL_MAX_ITERATIONS,
                    });
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().take(n).skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        h = v[(k, i + 1)];
                        v[(k, i + 1)] = s * v[(k, i)] + c * h;
                        v[(k, i)] = c * v[(k, i)] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }

    // selection sort, ascending
    for i in 0..n.saturating_sub(1) {
        let mut k = i;
        let mut p = d[i];
        for (j, &dj) in d.iter().enumerate().skip(i + 1) {
            if dj < p {
                k = j;
                p = dj;
            }
        }
        if k != i {
            d[k] = d[i];
            d[i] = p;
            for j in 0..n {
                let t = v[(j, i)];
                v[(j, i)] = v[(j, k)];
                v[(j, k)] = t;
            }
        }
    }
    Ok(())
}

/// Extreme eigenpairs of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct ExtremeEigen {
    pub min: f64,
    pub max: f64,
    /// Unit eigenvector for `max`.
    pub max_vector: DenseVector,
}

pub fn sym_eig_extreme(m: &DenseMatrix) -> Result<ExtremeEigen> {
    let eig = sym_eigen(m)?;
    let n = eig.values.len();
    assert!(n > 0, "empty matrix has no eigenvalues");
    let mut vec = eig.vectors.column(n - 1);
    let nv = norm(&vec);
    vec.iter_mut().for_each(|x| *x /= nv);
    Ok(ExtremeEigen {
        min: eig.values[0],
        max: eig.values[n - 1],
        max_vector: vec,
    })
}

/// Largest singular value.
///
/// Computed from the eigendecomposition of the smaller Gram matrix. The zero
/// matrix returns 0.
pub fn spectral_norm(m: &DenseMatrix) -> f64 {
    assert!(
        m.rows() > 0 && m.cols() > 0,
        "spectral norm of an empty matrix"
    );
    let gram = if m.cols() <= m.rows() {
        m.gram()
    } else {
        m.transpose().gram()
    };
    if gram.max_abs() == 0.0 {
        return 0.0;
    }
    match sym_eig_extreme(&gram) {
        Ok(e) => e.max.max(0.0).sqrt(),
        // QL on a symmetric PSD matrix this small does not fail in practice;
        // fall back to power iteration if it ever does.
        Err(_) => power_spectral_norm(m),
    }
}

fn power_spectral_norm(m: &DenseMatrix) -> f64 {
    operator_norm(m.cols(), |x| m.matvec(x), |y| m.tmatvec(y), 10_000, 1e-14)
}

/// Operator norm of a matrix-free linear map by power iteration on `A^T A`.
///
/// The starting vector is deterministic.
pub fn operator_norm(
    dim: usize,
    apply: impl Fn(&[f64]) -> DenseVector,
    apply_t: impl Fn(&[f64]) -> DenseVector,
    max_iter: usize,
    rel_tol: f64,
) -> f64 {
    let mut x: DenseVector = (0..dim)
        .map(|i| 1.0 + ((i * 7919) % 104_729) as f64 / 104_729.0)
        .collect();
    let nx = norm(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    let mut estimate = 0.0;
    for _ in 0..max_iter {
        let ax = apply(&x);
        let mut y = apply_t(&ax);
        let ny = norm(&y);
        if ny == 0.0 {
            return 0.0;
        }
        y.iter_mut().for_each(|v| *v /= ny);
        let converged = (ny - estimate).abs() <= rel_tol * ny;
        estimate = ny;
        x = y;
        if converged {
            break;
        }
    }
    estimate.sqrt()
}

/// Thin singular value decomposition `M = U diag(sigma) V^T` of a tall or
/// square matrix, by one-sided Jacobi rotations on the columns. Only `sigma`
/// and `V` are returned; singular values are sorted in decreasing order.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub sigma: DenseVector,
    pub v: DenseMatrix,
}

const JACOBI_MAX_SWEEPS: usize = 80;

/// Upper-triangular `R` (`n x n`) of a Householder QR of `m`, which must
/// have at least as many rows as columns.
pub fn householder_r(m: &DenseMatrix) -> DenseMatrix {
    assert!(m.rows() >= m.cols(), "householder_r needs rows >= cols");
    let n = m.cols();
    let mut cols: Vec<DenseVector> = (0..n).map(|j| m.column(j)).collect();
    for k in 0..n {
        let norm_k = norm(&cols[k][k..]);
        if norm_k == 0.0 {
            continue;
        }
        let alpha = if cols[k][k] > 0.0 { -norm_k } else { norm_k };
        let mut v = cols[k][k..].to_vec();
        v[0] -= alpha;
        let vv = dot(&v, &v);
        if vv == 0.0 {
            continue;
        }
        for col in cols.iter_mut().skip(k) {
            let s = 2.0 * dot(&v, &col[k..]) / vv;
            for (c, vi) in col[k..].iter_mut().zip(&v) {
                *c -= s * vi;
            }
        }
    }
    DenseMatrix::from_fn(n, n, |i, j| if i <= j { cols[j][i] } else { 0.0 })
}

/// Solves `T x = b` for upper-triangular `T`.
pub fn solve_upper(t: &DenseMatrix, b: &[f64]) -> DenseVector {
    let n = t.rows();
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in (i + 1)..n {
            s -= t[(i, j)] * x[j];
        }
        x[i] = s / t[(i, i)];
    }
    x
}

/// Solves `T^T x = b` for upper-triangular `T`.
pub fn solve_upper_transposed(t: &DenseMatrix, b: &[f64]) -> DenseVector {
    let n = t.rows();
    let mut x = b.to_vec();
    for i in 0..n {
        let mut s = x[i];
        for j in 0..i {
            s -= t[(j, i)] * x[j];
        }
        x[i] = s / t[(i, i)];
    }
    x
}

pub fn thin_svd(m: &DenseMatrix) -> Result<ThinSvd> {
    if m.rows() > m.cols() {
        return jacobi_svd(&householder_r(m));
    }
    jacobi_svd(m)
}

fn jacobi_svd(m: &DenseMatrix) -> Result<ThinSvd> {
    let n = m.cols();
    let rows = m.rows();
    let mut cols: Vec<DenseVector> = (0..n).map(|j| m.column(j)).collect();
    let mut v = DenseMatrix::identity(n);
    let mut converged = n < 2;
    let floor = (f64::EPSILON * m.frobenius_norm()).powi(2);
    let orth_tol = f64::EPSILON * (rows.max(1) as f64).sqrt();
    for _ in 0..JACOBI_MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if alpha <= floor
                    || beta <= floor
                    || gamma.abs() <= orth_tol * (alpha * beta).sqrt()
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let (a, b) = (cols[p][i], cols[q][i]);
                    cols[p][i] = c * a - s * b;
                    cols[q][i] = s * a + c * b;
                }
                for i in 0..n {
                    let (a, b) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = c * a - s * b;
                    v[(i, q)] = s * a + c * b;
                }
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(LinalgError::ConvergenceFailure {
            iterations: JACOBI_MAX_SWEEPS,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let sig: Vec<f64> = cols.iter().map(|c| norm(c)).collect();
    order.sort_by(|&a, &b| sig[b].total_cmp(&sig[a]));
    let sigma = order.iter().map(|&j| sig[j]).collect();
    let v = DenseMatrix::from_fn(n, n, |i, k| v[(i, order[k])]);
    Ok(ThinSvd { sigma, v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DenseMatrix {
        DenseMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn householder_r_preserves_gram_and_solves_invert_it() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_matrix(&mut rng, 9, 5);
        let t = householder_r(&m);
        let gram = m.transpose().matmul(&m);
        let tt = t.transpose().matmul(&t);
        for i in 0..5 {
            for j in 0..5 {
                assert!((gram[(i, j)] - tt[(i, j)]).abs() < 1e-12);
                if i > j {
                    assert_eq!(t[(i, j)], 0.0);
                }
            }
        }
        let b: DenseVector = (0..5).map(|i| i as f64 - 2.0).collect();
        let x = solve_upper(&t, &b);
        let y = solve_upper_transposed(&t, &b);
        let (tx, ty) = (t.matvec(&x), t.transpose().matvec(&y));
        for i in 0..5 {
            assert!((tx[i] - b[i]).abs() < 1e-10 && (ty[i] - b[i]).abs() < 1e-10);
        }
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DenseMatrix {
        let b = random_matrix(rng, n, n);
        b.gram().add(&DenseMatrix::identity(n).scale(0.1))
    }

    fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> DenseMatrix {
        random_matrix(rng, n, n).symmetric_part()
    }

    #[test]
    fn solve_identity_and_diagonal() {
        let v = sym_solve_shifted(&DenseMatrix::identity(2), 0.0, &[1.0, 2.0]).unwrap();
        assert_eq!(v, vec![1.0, 2.0]);
        let v = sym_solve_shifted(&DenseMatrix::from_diag(&[1.0, 4.0]), 1.0, &[2.0, 10.0]).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-15 && (v[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn solve_random_spd_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for shift in [0.0, 0.5, 3.0] {
            let m = random_spd(&mut rng, 5);
            let rhs: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v = sym_solve_shifted(&m, shift, &rhs).unwrap();
            let mut res = m.matvec(&v);
            axpy(shift, &v, &mut res);
            let r = sub(&res, &rhs);
            assert!(norm(&r) <= 1e-10 * norm(&rhs));
        }
    }

    #[test]
    fn solve_rejects_indefinite() {
        let m = DenseMatrix::from_diag(&[1.0, -2.0]);
        let err = sym_solve_shifted(&m, 0.0, &[1.0, 1.0]).unwrap_err();
        assert!(matches!(
            err,
            LinalgError::NotPositiveDefinite { index: 1, .. }
        ));
        assert!(sym_solve_shifted(&m, 3.0, &[1.0, 1.0]).is_ok());
    }

    #[test]
    fn eig_extreme_small_cases() {
        let e = sym_eig_extreme(&DenseMatrix::from_diag(&[1.0, 3.0])).unwrap();
        assert_eq!((e.min, e.max), (1.0, 3.0));
        assert!((e.max_vector[1].abs() - 1.0).abs() < 1e-15);

        let m = DenseMatrix::from_rows(&[vec![0.0, 0.5], vec![0.5, 0.0]]);
        let e = sym_eig_extreme(&m).unwrap();
        assert!((e.min + 0.5).abs() < 1e-15 && (e.max - 0.5).abs() < 1e-15);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((e.max_vector[0].abs() - s).abs() < 1e-12);
        assert!((e.max_vector[0] - e.max_vector[1]).abs() < 1e-12);
    }

    /// Determinant of `M - t I` by Gaussian elimination with partial pivoting.
    fn char_poly(m: &DenseMatrix, t: f64) -> f64 {
        let n = m.rows();
        let mut a = m.sub(&DenseMatrix::identity(n).scale(t));
        let mut det = 1.0;
        for c in 0..n {
            let p = (c..n)
                .max_by(|&i, &j| a[(i, c)].abs().total_cmp(&a[(j, c)].abs()))
                .unwrap();
            if a[(p, c)] == 0.0 {
                return 0.0;
            }
            if p != c {
                for j in 0..n {
                    let tmp = a[(p, j)];
                    a[(p, j)] = a[(c, j)];
                    a[(c, j)] = tmp;
                }
                det = -det;
            }
            det *= a[(c, c)];
            for i in (c + 1)..n {
                let f = a[(i, c)] / a[(c, c)];
                for j in c..n {
                    a[(i, j)] -= f * a[(c, j)];
                }
            }
        }
        det
    }

    /// Brackets every sign change of the characteristic polynomial on a fine
    /// grid and refines by bisection.
    fn char_poly_roots(m: &DenseMatrix) -> Vec<f64> {
        let bound = (0..m.rows())
            .map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
            + 1e-3;
        let steps = 20_000;
        let mut roots = Vec::new();
        let mut prev_t = -bound;
        let mut prev = char_poly(m, prev_t);
        for s in 1..=steps {
            let t = -bound + 2.0 * bound * s as f64 / steps as f64;
            let v = char_poly(m, t);
            if prev.signum() != v.signum() {
                let (mut lo, mut hi) = (prev_t, t);
                let flo = prev;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if char_poly(m, mid).signum() == flo.signum() {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                roots.push(0.5 * (lo + hi));
            }
            prev_t = t;
            prev = v;
        }
        roots
    }

    #[test]
    fn eig_extreme_matches_root_bracketing() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..3 {
            let m = random_symmetric(&mut rng, 6);
            let roots = char_poly_roots(&m);
            assert_eq!(roots.len(), 6, "random symmetric matrix has distinct roots");
            let e = sym_eig_extreme(&m).unwrap();
            assert!((e.min - roots[0]).abs() < 1e-9);
            assert!((e.max - roots[5]).abs() < 1e-9);
            let rq = dot(&e.max_vector, &m.matvec(&e.max_vector));
            assert!((rq - e.max).abs() < 1e-10);
            assert!((norm(&e.max_vector) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn full_eigen_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_symmetric(&mut rng, 9);
        let eig = sym_eigen(&m).unwrap();
        let v = &eig.vectors;
        let rebuilt = v
            .matmul(&DenseMatrix::from_diag(&eig.values))
            .matmul(&v.transpose());
        assert!(rebuilt.sub(&m).max_abs() < 1e-12);
        assert!(
            v.transpose()
                .matmul(v)
                .sub(&DenseMatrix::identity(9))
                .max_abs()
                < 1e-12
        );
        assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn eig_extreme_antisymmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for n in [1, 2, 5, 8] {
            let m = random_symmetric(&mut rng, n);
            let a = sym_eig_extreme(&m).unwrap();
            let b = sym_eig_extreme(&m.scale(-1.0)).unwrap();
            assert!((a.min + b.max).abs() < 1e-12);
            assert!((a.max + b.min).abs() < 1e-12);
        }
    }

    #[test]
    fn spectral_norm_cases() {
        assert_eq!(spectral_norm(&DenseMatrix::zeros(3, 3)), 0.0);
        assert!((spectral_norm(&DenseMatrix::from_diag(&[2.0, -5.0])) - 5.0).abs() < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m = random_matrix(&mut rng, 4, 3);
        let expected = sym_eig_extreme(&m.gram()).unwrap().max.sqrt();
        assert!((spectral_norm(&m) - expected).abs() <= 1e-8 * expected);
        assert!((spectral_norm(&m) - spectral_norm(&m.transpose())).abs() < 1e-10);
        assert!((power_spectral_norm(&m) - expected).abs() <= 1e-6 * expected);
    }

    #[test]
    fn cholesky_min_pivot_tracks_conditioning() {
        let m = DenseMatrix::from_diag(&[1.0, 1e-6]);
        let c = Cholesky::factor(&m, 0.0).unwrap();
        assert!((c.min_pivot() - 1e-6).abs() < 1e-18);
    }
    #[test]
    fn thin_svd_matches_gram_eigen() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let m = random_matrix(&mut rng, 7, 4);
        let svd = thin_svd(&m).unwrap();
        let eig = sym_eigen(&m.gram()).unwrap();
        for (k, s) in svd.sigma.iter().enumerate() {
            assert!((s * s - eig.values[3 - k]).abs() < 1e-12);
        }
        // M V has orthogonal columns with norms sigma
        let mv = m.matmul(&svd.v);
        let g = mv.gram();
        for i in 0..4 {
            for j in 0..4 {
                let expected = if i == j {
                    svd.sigma[i] * svd.sigma[i]
                } else {
                    0.0
                };
                assert!((g[(i, j)] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn thin_svd_detects_rank_deficiency() {
        let a = vec![1.0, 2.0, 3.0];
        let b = vec![0.0, 1.0, -1.0];
        let c: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - y).collect();
        let m = DenseMatrix::from_columns(&[&a, &b, &c]);
        let svd = thin_svd(&m).unwrap();
        assert!(svd.sigma[2] < 1e-14 * svd.sigma[0]);
        let null = svd.v.column(2);
        assert!(norm(&m.matvec(&null)) < 1e-14);
    }
}
