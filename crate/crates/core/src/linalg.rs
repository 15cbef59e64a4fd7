//! Small numerical kernels shared by the filters, the lasso and the diagnostics:
//! a banded Cholesky factorization, discrete difference operators and a
//! QR-based least-squares fit.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Dense row-major matrix used for designs and network parameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.data[i * self.cols + j]).collect()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Rows picked by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Columns picked by index, in the given order.
    pub fn select_columns(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.rows);
        for i in 0..self.rows {
            let r = self.row(i);
            data.extend(idx.iter().map(|&j| r[j]));
        }
        Matrix {
            rows: self.rows,
            cols: idx.len(),
            data,
        }
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

/// Cholesky factor of a symmetric positive definite band matrix.
///
/// Storage is by lower diagonals: `diag[d][i]` holds `L[i + d][i]`.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bandwidth: usize,
    diag: Vec<Vec<f64>>,
}

impl BandedCholesky {
    /// Factor the matrix whose lower band is given by `entry(i, d) = A[i + d][i]`
    /// for `d <= bandwidth`.
    pub fn factor(
        n: usize,
        bandwidth: usize,
        entry: impl Fn(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut diag: Vec<Vec<f64>> = (0..=bandwidth)
            .map(|d| (0..n.saturating_sub(d)).map(|i| entry(i, d)).collect())
            .collect();
        for j in 0..n {
            // L[j][j]
            let mut s = diag[0][j];
            for k in j.saturating_sub(bandwidth)..j {
                let l = diag[j - k][k];
                s -= l * l;
            }
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::Numeric(format!(
                    "band matrix not positive definite at pivot {j}"
                )));
            }
            let ljj = s.sqrt();
            diag[0][j] = ljj;
            // L[i][j] for i in j+1..=j+bandwidth
            for i in (j + 1)..(j + bandwidth + 1).min(n) {
                let mut s = diag[i - j][j];
                for k in i.saturating_sub(bandwidth)..j {
                    s -= diag[i - k][k] * diag[j - k][k];
                }
                diag[i - j][j] = s / ljj;
            }
        }
        Ok(Self { n, bandwidth, diag })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Solve `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        let m = self.bandwidth;
        // forward: L y = b
        for i in 0..self.n {
            let mut s = b[i];
            for k in i.saturating_sub(m)..i {
                s -= self.diag[i - k][k] * b[k];
            }
            b[i] = s / self.diag[0][i];
        }
        // backward: L^T x = y
        for i in (0..self.n).rev() {
            let mut s = b[i];
            for k in (i + 1)..(i + m + 1).min(self.n) {
                s -= self.diag[k - i][i] * b[k];
            }
            b[i] = s / self.diag[0][i];
        }
    }
}

/// Coefficients of one row of the difference operator of the given order:
/// `[1, -1]` for first differences, `[1, -2, 1]` for second differences.
pub fn difference_stencil(order: usize) -> Vec<f64> {
    let mut c = vec![1.0];
    for _ in 0..order {
        let mut next = vec![0.0; c.len() + 1];
        for (i, &v) in c.iter().enumerate() {
            next[i] += v;
            next[i + 1] -= v;
        }
        c = next;
    }
    c
}

/// `D f` for the difference operator of the given order; output length `len - order`.
pub fn apply_difference(order: usize, f: &[f64]) -> Vec<f64> {
    let c = difference_stencil(order);
    f.windows(order + 1)
        .map(|w| w.iter().zip(&c).map(|(a, b)| a * b).sum())
        .collect()
}

/// `D^T v`; `v` has length `n - order`, output length `n`.
pub fn apply_difference_transpose(order: usize, v: &[f64], n: usize) -> Vec<f64> {
    let c = difference_stencil(order);
    let mut out = vec![0.0; n];
    for (r, &vr) in v.iter().enumerate() {
        for (j, &cj) in c.iter().enumerate() {
            out[r + j] += cj * vr;
        }
    }
    out
}

/// Lower band of `D^T D` (length-`n` signal): `entry(i, d) = (D^T D)[i + d][i]`.
pub fn gram_dtd_entry(order: usize, n: usize, i: usize, d: usize) -> f64 {
    let c = difference_stencil(order);
    let rows = n - order;
    // (D^T D)[a][b] = sum_r c[a - r] c[b - r] over rows r with both indices in the stencil
    let a = i + d;
    let b = i;
    let lo = a.saturating_sub(order);
    let hi = b.min(rows.saturating_sub(1));
    if lo > hi || rows == 0 {
        return 0.0;
    }
    (lo..=hi).map(|r| c[a - r] * c[b - r]).sum()
}

/// Lower band of `D D^T` (size `n - order`), which is Toeplitz.
pub fn gram_ddt_entry(order: usize, d: usize) -> f64 {
    let c = difference_stencil(order);
    if d > order {
        return 0.0;
    }
    (0..c.len() - d).map(|j| c[j] * c[j + d]).sum()
}

/// Result of an ordinary least-squares fit.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub coefficients: DVector<f64>,
    pub residuals: DVector<f64>,
    /// Sum of squared residuals.
    pub sse: f64,
    /// Diagonal of `(ZᵀZ)⁻¹`; times `σ²` gives coefficient variances.
    pub inverse_gram_diagonal: DVector<f64>,
}

/// Least squares `min ||y - Z b||` via Householder QR. Fails when `Z` is
/// numerically rank deficient (|R_jj| below `1e-10 * max |R_jj|`).
pub fn least_squares(z: &DMatrix<f64>, y: &DVector<f64>) -> Result<LeastSquares> {
    let (n, p) = z.shape();
    if n != y.len() {
        return Err(Error::Dimension(format!(
            "design has {n} rows, response has {}",
            y.len()
        )));
    }
    if n < p {
        return Err(Error::RankDeficient(format!("{n} rows for {p} columns")));
    }
    let qr = z.clone().qr();
    let r = qr.r();
    let max_diag = (0..p).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    if p > 0 && (0..p).any(|j| r[(j, j)].abs() <= 1e-10 * max_diag.max(f64::MIN_POSITIVE)) {
        return Err(Error::RankDeficient(format!(
            "{p}-column design is numerically singular"
        )));
    }
    let qty = qr.q().transpose() * y;
    let coefficients = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient("triangular solve failed".into()))?;
    let residuals = y - z * &coefficients;
    let sse = residuals.norm_squared();
    // (ZᵀZ)⁻¹ = R⁻¹R⁻ᵀ, so its diagonal holds the squared row norms of R⁻¹
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::RankDeficient("triangular solve failed".into()))?;
    let inverse_gram_diagonal = DVector::from_iterator(p, (0..p).map(|j| r_inv.row(j).norm_squared()));
    Ok(LeastSquares {
        coefficients,
        residuals,
        sse,
        inverse_gram_diagonal,
    })
}

/// `C ← α·op(A)·op(B) + β·C` on row-major buffers; `op` transposes when the flag is set.
/// `op(A)` is `m × k`, `op(B)` is `k × n`, `C` is `m × n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the bounds above cover every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, alpha, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1,
        );
    }
}
