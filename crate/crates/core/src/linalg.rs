//! Dense real matrices, stochastic matrices and the skew projection along
//! the synchronization direction `e0 = [1, ..., 1]`.
//!
//! Everything here is immutable after construction. Matrices serialize as
//! `{"rows": r, "cols": c, "data": [...]}` with row-major `data`.

use std::fmt;
use std::ops::{Deref, Index};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on unit row sums when validating a stochastic matrix.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Tolerance on the spread of row sums for membership in the constant
/// row-sum class, relative to `max(1, ||L||_inf)`.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Induced matrix norm / vector norm selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    #[default]
    Inf,
    One,
    Two,
}

impl NormKind {
    pub fn vector_norm(self, v: &[f64]) -> f64 {
        match self {
            NormKind::Inf => v.iter().fold(0.0, |acc: f64, x| acc.max(x.abs())),
            NormKind::One => v.iter().map(|x| x.abs()).sum(),
            NormKind::Two => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        }
    }
}

impl std::str::FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inf" => Ok(NormKind::Inf),
            "one" | "1" => Ok(NormKind::One),
            "two" | "2" => Ok(NormKind::Two),
            other => Err(Error::UnknownVariant {
                kind: "norm",
                name: other.to_string(),
            }),
        }
    }
}

#[derive(Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Dense row-major real matrix with finite entries.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix {
    type Error = Error;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        Matrix::new(raw.rows, raw.cols, raw.data)
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyMatrix);
        }
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                rows,
                cols,
                got: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(pos / cols, pos % cols));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from nested rows. All rows must have equal length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::ShapeMismatch {
                    rows: rows.len(),
                    cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Matrix::new(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix::new(rows, cols, data)
    }

    /// Unchecked constructor for internal arithmetic whose inputs are
    /// already finite and correctly shaped.
    pub(crate) fn from_parts(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "zero-sized matrix");
        Matrix::from_parts(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        let n = diag.len();
        Matrix::from_fn(n, n, |i, j| if i == j { diag[i] } else { 0.0 })
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn require_square(&self) -> Result<usize> {
        if self.is_square() {
            Ok(self.rows)
        } else {
            Err(Error::NotSquare {
                rows: self.rows,
                cols: self.cols,
            })
        }
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: rhs.rows,
            });
        }
        Ok(self.mul_unchecked(rhs))
    }

    /// `self * rhs`; zero entries of `self` are skipped, which makes sparse
    /// coupling matrices cheap.
    pub(crate) fn mul_unchecked(&self, rhs: &Matrix) -> Matrix {
        let (n, k, p) = (self.rows, self.cols, rhs.cols);
        let mut out = vec![0.0; n * p];
        for i in 0..n {
            let out_row = &mut out[i * p..(i + 1) * p];
            for (l, &a) in self.row(i).iter().enumerate().take(k) {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(rhs.row(l)) {
                    *o += a * b;
                }
            }
        }
        Matrix::from_parts(n, p, out)
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "matvec dimension mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Matrix::from_parts(self.cols, self.rows, out)
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix::from_parts(self.rows, self.cols, self.data.iter().map(|x| x * c).collect())
    }

    pub(crate) fn scale_in_place(&mut self, c: f64) {
        self.data.iter_mut().for_each(|x| *x *= c);
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(Error::DimensionMismatch {
                expected: self.rows * self.cols,
                got: rhs.rows * rhs.cols,
            });
        }
        Ok(Matrix::from_parts(
            self.rows,
            self.cols,
            self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        ))
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc: f64, x| acc.max(x.abs()))
    }

    pub fn norm(&self, kind: NormKind) -> f64 {
        matrix_norm(self, kind)
    }

    /// Spectral radius by Gelfand's formula `rho = lim ||M^n||^(1/n)`,
    /// evaluated along `n = 2^k` with renormalized repeated squaring.
    pub fn spectral_radius(&self) -> Result<f64> {
        self.require_square()?;
        let n0 = self.norm(NormKind::Inf);
        if n0 == 0.0 {
            return Ok(0.0);
        }
        let mut b = self.scale(1.0 / n0);
        // log rho estimate: (1/2^k) log ||M^(2^k)||
        let mut log_rho = n0.ln();
        let mut weight = 1.0;
        for _ in 0..80 {
            let mut c = b.mul_unchecked(&b);
            let nc = c.norm(NormKind::Inf);
            if nc == 0.0 {
                return Ok(0.0);
            }
            c.scale_in_place(1.0 / nc);
            weight *= 0.5;
            let step = weight * nc.ln();
            log_rho += step;
            b = c;
            if step.abs() < 1e-17 && weight < 1e-12 {
                break;
            }
        }
        Ok(log_rho.exp())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Induced matrix norm: `inf` is the max absolute row sum, `one` the max
/// absolute column sum, `two` the largest singular value.
pub fn matrix_norm(m: &Matrix, kind: NormKind) -> f64 {
    match kind {
        NormKind::Inf => (0..m.rows)
            .map(|i| m.row(i).iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max),
        NormKind::One => {
            let mut sums = vec![0.0; m.cols];
            for i in 0..m.rows {
                for (s, x) in sums.iter_mut().zip(m.row(i)) {
                    *s += x.abs();
                }
            }
            sums.into_iter().fold(0.0, f64::max)
        }
        NormKind::Two => spectral_norm(m),
    }
}

/// Largest singular value via the top eigenvalue of `M^T M`, computed with
/// cyclic Jacobi rotations.
pub fn spectral_norm(m: &Matrix) -> f64 {
    let scale = m.max_abs();
    if scale == 0.0 {
        return 0.0;
    }
    let a = m.scale(1.0 / scale);
    let gram = a.transpose().mul_unchecked(&a);
    let top = symmetric_eigenvalues(&gram).into_iter().fold(0.0, f64::max);
    top.max(0.0).sqrt() * scale
}

/// Eigenvalues of a symmetric matrix by the cyclic Jacobi method.
pub(crate) fn symmetric_eigenvalues(s: &Matrix) -> Vec<f64> {
    let n = s.rows;
    let mut a = s.data.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        let diag: f64 = (0..n).map(|i| a[i * n + i] * a[i * n + i]).sum();
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - sn * akq;
                    a[k * n + q] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - sn * aqk;
                    a[q * n + k] = sn * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).collect()
}

/// Square nonnegative matrix with unit row sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Matrix", into = "Matrix")]
pub struct StochasticMatrix(Matrix);

impl TryFrom<Matrix> for StochasticMatrix {
    type Error = Error;

    fn try_from(m: Matrix) -> Result<Self> {
        StochasticMatrix::new(m)
    }
}

impl From<StochasticMatrix> for Matrix {
    fn from(s: StochasticMatrix) -> Matrix {
        s.0
    }
}

impl Deref for StochasticMatrix {
    type Target = Matrix;

    fn deref(&self) -> &Matrix {
        &self.0
    }
}

impl AsRef<Matrix> for StochasticMatrix {
    fn as_ref(&self) -> &Matrix {
        &self.0
    }
}

impl StochasticMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        StochasticMatrix::with_tolerance(m, STOCHASTIC_TOL)
    }

    /// Validates with a custom row-sum tolerance (long products accumulate
    /// rounding proportional to their length).
    pub fn with_tolerance(m: Matrix, tol: f64) -> Result<Self> {
        let n = m.require_square()?;
        for i in 0..n {
            let row = m.row(i);
            if let Some(j) = row.iter().position(|&x| x < 0.0) {
                return Err(Error::NegativeEntry(i, j));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > tol {
                return Err(Error::NotStochastic { row: i, sum });
            }
        }
        Ok(StochasticMatrix(m))
    }

    pub fn identity(n: usize) -> Self {
        StochasticMatrix(Matrix::identity(n))
    }

    pub fn dim(&self) -> usize {
        self.0.rows
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_inner(self) -> Matrix {
        self.0
    }

    pub fn compose(&self, rhs: &StochasticMatrix) -> Result<StochasticMatrix> {
        let p = self.0.matmul(&rhs.0)?;
        Ok(StochasticMatrix(p))
    }
}

/// Divides each row by its sum.
pub fn make_stochastic(raw: &Matrix) -> Result<StochasticMatrix> {
    let n = raw.require_square()?;
    let mut out = raw.clone();
    for i in 0..n {
        let row = out.row_mut(i);
        if let Some(j) = row.iter().position(|&x| x < 0.0) {
            return Err(Error::NegativeEntry(i, j));
        }
        let sum: f64 = row.iter().sum();
        if sum <= 0.0 {
            return Err(Error::ZeroRow(i));
        }
        // Rows already normalized up to rounding are left untouched so that
        // normalization is idempotent bit for bit.
        if (sum - 1.0).abs() > 4.0 * f64::EPSILON * n as f64 {
            row.iter_mut().for_each(|x| *x /= sum);
        }
    }
    Ok(StochasticMatrix(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    /// Rows `e_i - e_{i+1}`.
    #[default]
    Difference,
    /// Helmert rows: an orthonormal basis of the complement of `e0`.
    Orthonormal,
}

impl std::str::FromStr for BasisKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "difference" => Ok(BasisKind::Difference),
            "orthonormal" => Ok(BasisKind::Orthonormal),
            other => Err(Error::UnknownVariant {
                kind: "basis",
                name: other.to_string(),
            }),
        }
    }
}

/// An `(m-1) x m` matrix `P` with kernel exactly `span{e0}`, together with a
/// right inverse `P+` (`P P+ = I`).
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionBasis {
    kind: BasisKind,
    m: usize,
    p: Matrix,
    p_plus: Matrix,
    /// `(H P+, P H^T)` mapping coordinates of this basis to the Helmert
    /// coordinates and back; `None` for the Helmert basis itself.
    canonical: Option<(Matrix, Matrix)>,
}

impl ProjectionBasis {
    pub fn new(m: usize, kind: BasisKind) -> Result<Self> {
        if m < 2 {
            return Err(Error::DimensionTooSmall(m));
        }
        let (p, p_plus) = match kind {
            BasisKind::Difference => {
                let p = Matrix::from_fn(m - 1, m, |i, j| {
                    if j == i {
                        1.0
                    } else if j == i + 1 {
                        -1.0
                    } else {
                        0.0
                    }
                })?;
                // cumulative sums from the right, last row zero
                let p_plus = Matrix::from_fn(m, m - 1, |i, k| if i <= k { 1.0 } else { 0.0 })?;
                (p, p_plus)
            }
            BasisKind::Orthonormal => {
                let h = helmert(m);
                let ht = h.transpose();
                (h, ht)
            }
        };
        let canonical = match kind {
            BasisKind::Orthonormal => None,
            _ => {
                let h = helmert(m);
                let to_canon = h.mul_unchecked(&p_plus);
                let from_canon = p.mul_unchecked(&h.transpose());
                Some((to_canon, from_canon))
            }
        };
        Ok(ProjectionBasis {
            kind,
            m,
            p,
            p_plus,
            canonical,
        })
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    /// Dimension `m` of the ambient space.
    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn p(&self) -> &Matrix {
        &self.p
    }

    pub fn p_plus(&self) -> &Matrix {
        &self.p_plus
    }

    /// `P u`: the class of `u` modulo `e0` in basis coordinates.
    pub fn reduce(&self, u: &[f64]) -> Vec<f64> {
        match self.kind {
            BasisKind::Difference => u.windows(2).map(|w| w[0] - w[1]).collect(),
            BasisKind::Orthonormal => self.p.matvec(u),
        }
    }

    /// `P+ v`: a representative in `R^m` of the class with coordinates `v`.
    pub fn lift(&self, v: &[f64]) -> Vec<f64> {
        match self.kind {
            BasisKind::Difference => {
                let mut u = vec![0.0; self.m];
                for i in (0..self.m - 1).rev() {
                    u[i] = u[i + 1] + v[i];
                }
                u
            }
            BasisKind::Orthonormal => self.p_plus.matvec(v),
        }
    }

    /// Applies `L_hat = P L P+` to `v` without forming `L_hat`.
    pub fn apply_projected(&self, l: &Matrix, v: &[f64]) -> Vec<f64> {
        self.reduce(&l.matvec(&self.lift(v)))
    }

    /// Rewrites a matrix acting on this basis' coordinates in the canonical
    /// (Helmert) coordinates: `S^-1 M S` with `S = P H^T`.
    pub fn to_canonical(&self, m: &Matrix) -> Matrix {
        match &self.canonical {
            None => m.clone(),
            Some((to, from)) => to.mul_unchecked(&m.mul_unchecked(from)),
        }
    }
}

fn helmert(m: usize) -> Matrix {
    let mut h = Matrix::zeros(m - 1, m);
    for k in 1..m {
        let norm = ((k * (k + 1)) as f64).sqrt();
        let row = h.row_mut(k - 1);
        for x in row.iter_mut().take(k) {
            *x = 1.0 / norm;
        }
        row[k] = -(k as f64) / norm;
    }
    h
}

/// Spread `max - min` of the row sums.
pub fn row_sum_spread(l: &Matrix) -> f64 {
    let sums = l.row_sums();
    let max = sums.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = sums.iter().cloned().fold(f64::INFINITY, f64::min);
    max - min
}

/// Skew projection `L_hat = P L P+`, the unique solution of `P L = L_hat P`
/// when `L` has constant row sums.
pub fn project(l: &Matrix, basis: &ProjectionBasis) -> Result<Matrix> {
    let n = l.require_square()?;
    if n != basis.m {
        return Err(Error::DimensionMismatch {
            expected: basis.m,
            got: n,
        });
    }
    let spread = row_sum_spread(l);
    if spread > ROW_SUM_TOL * l.norm(NormKind::Inf).max(1.0) {
        return Err(Error::NotRowSumConstant { spread });
    }
    Ok(basis.p.mul_unchecked(&l.mul_unchecked(&basis.p_plus)))
}
