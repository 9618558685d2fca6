//! Dense matrix helpers sized for extended-signal covariance work.
//!
//! The decomposition only needs a handful of operations: symmetric
//! eigendecomposition for whitening, Cholesky solves for the template
//! least-squares problem, and fast per-sample dot products. They are
//! hand-rolled here so the numeric core stays dependency-free and
//! deterministic across runs.

use alloc::vec;
use alloc::vec::Vec;

use crate::flt;

/// Row-major dense `f64` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                *out.at_mut(c, r) = self.at(r, c);
            }
        }
        out
    }

    /// `self * v`.
    pub fn mat_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), v)).collect()
    }

    /// `self^T * v`.
    pub fn transpose_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &vr) in v.iter().enumerate() {
            for (o, &m) in out.iter_mut().zip(self.row(r)) {
                *o += vr * m;
            }
        }
        out
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Four partial sums keep the loop vectorizable without changing results
    // between runs (the reduction order is fixed).
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in chunks * 4..a.len() {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn axpy(acc: &mut [f64], scale: f64, x: &[f64]) {
    debug_assert_eq!(acc.len(), x.len());
    for (a, &v) in acc.iter_mut().zip(x) {
        *a += scale * v;
    }
}

pub fn norm(v: &[f64]) -> f64 {
    flt::sqrt(dot(v, v))
}

pub fn normalize(v: &mut [f64]) -> f64 {
    let n = norm(v);
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    n
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LinalgError {
    /// Eigensolver failed to converge within the iteration budget.
    NoConvergence,
    /// Cholesky pivot went non-positive; matrix is not positive definite.
    NotPositiveDefinite { pivot: usize },
}

impl core::fmt::Display for LinalgError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            LinalgError::NoConvergence => write!(f, "eigensolver did not converge"),
            LinalgError::NotPositiveDefinite { pivot } => {
                write!(f, "matrix not positive definite at pivot {pivot}")
            }
        }
    }
}

impl core::error::Error for LinalgError {}

/// Eigendecomposition of a symmetric matrix.
///
/// Returns eigenvalues in descending order with matching eigenvectors as the
/// columns of the returned matrix. Eigenvector signs are fixed so the
/// component with the largest magnitude is positive, which keeps downstream
/// whitening transforms reproducible.
pub fn sym_eigen(a: &Mat) -> Result<(Vec<f64>, Mat), LinalgError> {
    assert_eq!(
        a.rows, a.cols,
        "symmetric eigensolver needs a square matrix"
    );
    let n = a.rows;
    if n == 0 {
        return Ok((Vec::new(), Mat::zeros(0, 0)));
    }
    let mut z = a.clone();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalize(&mut z, &mut d, &mut e);
    ql_implicit(&mut d, &mut e, &mut z)?;

    // Sort by descending eigenvalue and fix signs.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        d[j].partial_cmp(&d[i])
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    let mut values = Vec::with_capacity(n);
    let mut vectors = Mat::zeros(n, n);
    for (out_col, &src_col) in order.iter().enumerate() {
        values.push(d[src_col]);
        let mut pivot = 0usize;
        let mut best = 0.0f64;
        for r in 0..n {
            let v = z.at(r, src_col).abs();
            if v > best {
                best = v;
                pivot = r;
            }
        }
        let flip = if z.at(pivot, src_col) < 0.0 {
            -1.0
        } else {
            1.0
        };
        for r in 0..n {
            *vectors.at_mut(r, out_col) = flip * z.at(r, src_col);
        }
    }
    Ok((values, vectors))
}

/// Householder reduction of a symmetric matrix to tridiagonal form, with the
/// orthogonal transform accumulated in place.
fn tridiagonalize(a: &mut Mat, d: &mut [f64], e: &mut [f64]) {
    let n = a.rows;
    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = 0.0;
        if l > 0 {
            let scale: f64 = (0..=l).map(|k| a.at(i, k).abs()).sum();
            if scale == 0.0 {
                e[i] = a.at(i, l);
            } else {
                for k in 0..=l {
                    *a.at_mut(i, k) /= scale;
                    h += a.at(i, k) * a.at(i, k);
                }
                let f = a.at(i, l);
                let g = if f >= 0.0 {
                    -flt::sqrt(h)
                } else {
                    flt::sqrt(h)
                };
                e[i] = scale * g;
                h -= f * g;
                *a.at_mut(i, l) = f - g;
                let mut f_acc = 0.0;
                for j in 0..=l {
                    *a.at_mut(j, i) = a.at(i, j) / h;
                    let mut g_acc = 0.0;
                    for k in 0..=j {
                        g_acc += a.at(j, k) * a.at(i, k);
                    }
                    for k in j + 1..=l {
                        g_acc += a.at(k, j) * a.at(i, k);
                    }
                    e[j] = g_acc / h;
                    f_acc += e[j] * a.at(i, j);
                }
                let hh = f_acc / (h + h);
                for j in 0..=l {
                    let f = a.at(i, j);
                    let g = e[j] - hh * f;
                    e[j] = g;
                    for k in 0..=j {
                        *a.at_mut(j, k) -= f * e[k] + g * a.at(i, k);
                    }
                }
            }
        } else {
            e[i] = a.at(i, l);
        }
        d[i] = h;
    }
    d[0] = 0.0;
    e[0] = 0.0;
    for i in 0..n {
        if d[i] != 0.0 {
            for j in 0..i {
                let mut g = 0.0;
                for k in 0..i {
                    g += a.at(i, k) * a.at(k, j);
                }
                for k in 0..i {
                    *a.at_mut(k, j) -= g * a.at(k, i);
                }
            }
        }
        d[i] = a.at(i, i);
        *a.at_mut(i, i) = 1.0;
        for j in 0..i {
            *a.at_mut(j, i) = 0.0;
            *a.at_mut(i, j) = 0.0;
        }
    }
}

/// QL iteration with implicit shifts on a tridiagonal matrix, accumulating
/// eigenvectors into `z`.
fn ql_implicit(d: &mut [f64], e: &mut [f64], z: &mut Mat) -> Result<(), LinalgError> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    // Absolute deflation floor: off-diagonals this small are zero at the
    // scale of the matrix, which keeps clusters of near-null eigenvalues
    // (common after band-pass filtering) from stalling the iteration.
    let anorm = d
        .iter()
        .zip(e.iter())
        .map(|(&a, &b)| a.abs() + b.abs())
        .fold(0.0f64, f64::max);
    let floor = f64::EPSILON * anorm;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd + floor {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 64 {
                return Err(LinalgError::NoConvergence);
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = flt::hypot(g, 1.0);
            let denom = if g >= 0.0 { g + r } else { g - r };
            g = d[m] - d[l] + e[l] / denom;
            let (mut s, mut c) = (1.0, 1.0);
            let mut p = 0.0;
            let mut early_deflation = false;
            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                r = flt::hypot(f, g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    early_deflation = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for k in 0..n {
                    f = z.at(k, i + 1);
                    *z.at_mut(k, i + 1) = s * z.at(k, i) + c * f;
                    *z.at_mut(k, i) = c * z.at(k, i) - s * f;
                }
            }
            if early_deflation {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// Cholesky factorization of a symmetric positive-definite matrix.
///
/// Returns the lower-triangular factor `L` with `L·L^T = a`.
pub fn cholesky(a: &Mat) -> Result<Mat, LinalgError> {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let mut l = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a.at(i, j);
            for k in 0..j {
                sum -= l.at(i, k) * l.at(j, k);
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(LinalgError::NotPositiveDefinite { pivot: i });
                }
                *l.at_mut(i, j) = flt::sqrt(sum);
            } else {
                *l.at_mut(i, j) = sum / l.at(j, j);
            }
        }
    }
    Ok(l)
}

/// Solve `a·x = b` given the Cholesky factor `l` of `a`.
pub fn cholesky_solve(l: &Mat, b: &[f64]) -> Vec<f64> {
    let n = l.rows;
    assert_eq!(b.len(), n);
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l.at(i, k) * y[k];
        }
        y[i] = sum / l.at(i, i);
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= l.at(k, i) * x[k];
        }
        x[i] = sum / l.at(i, i);
    }
    x
}
