//! Thin SVD by one-sided (Hestenes) Jacobi, preceded by a Householder QR when
//! the matrix is tall, plus the tail-energy truncation rule used by TR-SVD.

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

/// Dense row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::DataLength {
                dims: vec![rows, cols],
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_tensor(t: &DenseTensor<f64>) -> Result<Self> {
        if t.ndim() != 2 {
            return Err(Error::Order {
                expected: 2,
                actual: t.ndim(),
            });
        }
        Self::new(t.dims()[0], t.dims()[1], t.data().to_vec())
    }

    pub fn into_tensor(self) -> DenseTensor<f64> {
        DenseTensor::new(vec![self.rows, self.cols], self.data).expect("valid matrix shape")
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = crate::tensor::matmul_acc(&self.data, &other.data, self.rows, self.cols, other.cols);
        Ok(Self {
            rows: self.rows,
            cols: other.cols,
            data,
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Truncated (or thin) SVD `A ≈ U · diag(S) · Vt`.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    /// `m x r`, orthonormal columns.
    pub u: Matrix,
    /// Non-increasing, length `r`.
    pub s: Vec<f64>,
    /// `r x n`, orthonormal rows.
    pub vt: Matrix,
    /// `Σ_{i>r} σ_i²` over the singular values that were dropped.
    pub discarded_energy: f64,
}

impl TruncatedSvd {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `diag(S) · Vt`, the factor carried forward by sequential decompositions.
    pub fn s_vt(&self) -> Matrix {
        let mut out = self.vt.clone();
        for (i, &sv) in self.s.iter().enumerate() {
            for v in &mut out.data[i * out.cols..(i + 1) * out.cols] {
                *v *= sv;
            }
        }
        out
    }

    pub fn reconstruct(&self) -> Matrix {
        self.u.matmul(&self.s_vt()).expect("consistent factor shapes")
    }
}

/// Full thin SVD with `k = min(m, n)` singular triplets, sorted non-increasingly.
pub fn thin_svd(a: &Matrix) -> Result<TruncatedSvd> {
    if a.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    if a.rows < a.cols {
        let t = thin_svd(&a.transpose())?;
        return Ok(TruncatedSvd {
            u: t.vt.transpose(),
            s: t.s,
            vt: t.u.transpose(),
            discarded_energy: 0.0,
        });
    }
    // m >= n. For clearly tall inputs, factor A = QR first and run Jacobi on
    // the n x n triangle.
    if a.rows > a.cols + a.cols / 2 {
        let (q, r) = householder_qr(a);
        let inner = jacobi_svd(&r);
        let u = q.matmul(&inner.u)?;
        return Ok(TruncatedSvd { u, ..inner });
    }
    Ok(jacobi_svd(a))
}

/// Thin Householder QR of an `m x n` matrix with `m >= n`: returns `Q` (m x n)
/// with orthonormal columns and upper-triangular `R` (n x n).
fn householder_qr(a: &Matrix) -> (Matrix, Matrix) {
    let (m, n) = (a.rows, a.cols);
    // column-major working copy
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..m).map(|i| a.at(i, j)).collect())
        .collect();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(n);
    for k in 0..n {
        let x = &cols[k][k..];
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut v = x.to_vec();
        if norm == 0.0 {
            reflectors.push(Vec::new());
            continue;
        }
        let alpha = if v[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|t| t * t).sum();
        if vnorm2 == 0.0 {
            reflectors.push(Vec::new());
            continue;
        }
        let scale = (2.0 / vnorm2).sqrt();
        v.iter_mut().for_each(|t| *t *= scale);
        for col in cols.iter_mut().skip(k) {
            let tail = &mut col[k..];
            let dot: f64 = tail.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (t, &vi) in tail.iter_mut().zip(&v) {
                *t -= dot * vi;
            }
        }
        reflectors.push(v);
    }
    let mut r = Matrix::zeros(n, n);
    for (j, col) in cols.iter().enumerate() {
        for i in 0..=j {
            r.data[i * n + j] = col[i];
        }
    }
    // Q = H_0 H_1 ... H_{n-1} applied to the first n identity columns
    let mut qcols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; m];
            e[j] = 1.0;
            e
        })
        .collect();
    for k in (0..n).rev() {
        let v = &reflectors[k];
        if v.is_empty() {
            continue;
        }
        for q in qcols.iter_mut() {
            let tail = &mut q[k..];
            let dot: f64 = tail.iter().zip(v).map(|(a, b)| a * b).sum();
            if dot != 0.0 {
                for (t, &vi) in tail.iter_mut().zip(v) {
                    *t -= dot * vi;
                }
            }
        }
    }
    let mut q = Matrix::zeros(m, n);
    for (j, col) in qcols.iter().enumerate() {
        for i in 0..m {
            q.data[i * n + j] = col[i];
        }
    }
    (q, r)
}

const MAX_SWEEPS: usize = 80;

/// One-sided Jacobi on `m x n`, `m >= n`.
fn jacobi_svd(a: &Matrix) -> TruncatedSvd {
    let (m, n) = (a.rows, a.cols);
    // columns of the working matrix and of V, stored contiguously
    let mut w: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..m).map(|i| a.at(i, j)).collect())
        .collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let tol = f64::EPSILON * (m as f64).sqrt();
    let mut norms: Vec<f64> = w.iter().map(|c| c.iter().map(|x| x * x).sum()).collect();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = norms[p];
                let beta = norms[q];
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let gamma: f64 = w[p].iter().zip(&w[q]).map(|(x, y)| x * y).sum();
                if gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (left, right) = w.split_at_mut(q);
                for (x, y) in left[p].iter_mut().zip(right[0].iter_mut()) {
                    let (xp, yq) = (*x, *y);
                    *x = c * xp - s * yq;
                    *y = s * xp + c * yq;
                }
                let (left, right) = v.split_at_mut(q);
                for (x, y) in left[p].iter_mut().zip(right[0].iter_mut()) {
                    let (xp, yq) = (*x, *y);
                    *x = c * xp - s * yq;
                    *y = s * xp + c * yq;
                }
                norms[p] = w[p].iter().map(|x| x * x).sum();
                norms[q] = w[q].iter().map(|x| x * x).sum();
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let sig: Vec<f64> = norms.iter().map(|x| x.sqrt()).collect();
    order.sort_by(|&i, &j| sig[j].total_cmp(&sig[i]).then(i.cmp(&j)));

    let mut u = Matrix::zeros(m, n);
    let mut vt = Matrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    for (k, &j) in order.iter().enumerate() {
        let sv = sig[j];
        s.push(sv);
        if sv > 0.0 {
            for i in 0..m {
                u.data[i * n + k] = w[j][i] / sv;
            }
        }
        for i in 0..n {
            vt.data[k * n + i] = v[j][i];
        }
    }
    TruncatedSvd {
        u,
        s,
        vt,
        discarded_energy: 0.0,
    }
}

/// Number of leading singular values to keep so that the discarded tail
/// energy is at most `delta²`. Values at the round-off floor
/// (`max(m, n) · ε · σ_max`) count as zero; at least one value is kept.
pub fn truncation_rank(s: &[f64], delta: f64, m: usize, n: usize) -> usize {
    if s.is_empty() {
        return 0;
    }
    let floor = (m.max(n) as f64) * f64::EPSILON * s[0];
    let budget = delta * delta;
    let mut tail = 0.0;
    let mut r = s.len();
    while r > 1 {
        let sv = s[r - 1];
        let e = if sv <= floor { 0.0 } else { sv * sv };
        if tail + e > budget {
            break;
        }
        tail += e;
        r -= 1;
    }
    r
}

/// SVD truncated at absolute threshold `delta` on the tail Frobenius energy.
pub fn truncated_svd(a: &Matrix, delta: f64) -> Result<TruncatedSvd> {
    if !delta.is_finite() || delta < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "truncation threshold must be finite and >= 0, got {delta}"
        )));
    }
    let full = thin_svd(a)?;
    let r = truncation_rank(&full.s, delta, a.rows, a.cols);
    Ok(truncate_to(full, r))
}

pub(crate) fn truncate_to(full: TruncatedSvd, r: usize) -> TruncatedSvd {
    let k = full.s.len();
    let discarded_energy = full.s[r..].iter().map(|x| x * x).sum();
    let m = full.u.rows;
    let n = full.vt.cols;
    let mut u = Matrix::zeros(m, r);
    for i in 0..m {
        u.data[i * r..(i + 1) * r].copy_from_slice(&full.u.data[i * k..i * k + r]);
    }
    // a single kept column of an all-zero matrix still needs to be a unit vector
    if full.s[0] == 0.0 && r == 1 {
        u.data[0] = 1.0;
    }
    let vt = Matrix {
        rows: r,
        cols: n,
        data: full.vt.data[..r * n].to_vec(),
    };
    TruncatedSvd {
        u,
        s: full.s[..r].to_vec(),
        vt,
        discarded_energy,
    }
}
