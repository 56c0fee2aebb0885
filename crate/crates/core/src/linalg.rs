//! Dense linear algebra kernels.
//!
//! Everything here works on column-major [`DenseMatrix`] values and is pure:
//! inputs are borrowed immutably and results are freshly allocated. The SVD is
//! a one-sided (Hestenes) Jacobi iteration, optionally preceded by a Householder
//! QR when the matrix is much taller than wide.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("SVD did not converge after {sweeps} sweeps for a {rows}x{cols} matrix")]
    NonConvergence { rows: usize, cols: usize, sweeps: usize },
    #[error("matrix not SPD: non-positive pivot {value:e} at index {pivot}")]
    NotSpd { pivot: usize, value: f64 },
    #[error("matrix not symmetric: |a_ij - a_ji| = {defect:e} at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize, defect: f64 },
    #[error("sampling matrix rank-deficient: sigma_min/sigma_max = {ratio:e} ({rows}x{cols})")]
    RankDeficient { rows: usize, cols: usize, ratio: f64 },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Relative cutoff below which a singular value counts as zero.
pub const RANK_TOL: f64 = 1e-12;

const JACOBI_MAX_SWEEPS: usize = 80;

/// Column-major dense matrix.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from column-major storage.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(LinalgError::Dimension(format!(
                "{} entries supplied for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from a row-major slice; convenient for literals in tests.
    pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(LinalgError::Dimension(format!(
                "{} entries supplied for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = data[i * cols + j];
            }
        }
        Ok(m)
    }

    pub fn from_columns(rows: usize, columns: &[Vec<f64>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * columns.len());
        for (j, c) in columns.iter().enumerate() {
            if c.len() != rows {
                return Err(LinalgError::Dimension(format!(
                    "column {j} has length {} instead of {rows}",
                    c.len()
                )));
            }
            data.extend_from_slice(c);
        }
        Ok(Self { rows, cols: columns.len(), data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(k) => Err(LinalgError::NonFinite { row: k % self.rows.max(1), col: k / self.rows.max(1) }),
            None => Ok(()),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for j in 0..self.cols {
            for i in 0..self.rows {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for j in 0..other.cols {
            let oc = other.col(j);
            let dst = &mut out.data[j * self.rows..(j + 1) * self.rows];
            for (k, &b) in oc.iter().enumerate() {
                if b != 0.0 {
                    axpy(b, self.col(k), dst);
                }
            }
        }
        out
    }

    /// `selfᵀ * other`.
    pub fn t_matmul(&self, other: &Self) -> Self {
        assert_eq!(self.rows, other.rows, "t_matmul dimension mismatch");
        let mut out = Self::zeros(self.cols, other.cols);
        for j in 0..other.cols {
            let oc = other.col(j);
            for i in 0..self.cols {
                out[(i, j)] = dot(self.col(i), oc);
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.rows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        assert_eq!(y.len(), self.rows, "matvec output mismatch");
        y.iter_mut().for_each(|v| *v = 0.0);
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                axpy(xj, self.col(j), y);
            }
        }
    }

    /// `selfᵀ x`.
    pub fn t_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows, "t_matvec dimension mismatch");
        (0..self.cols).map(|j| dot(self.col(j), x)).collect()
    }

    /// Rows `indices` of `self`, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut out = Self::zeros(indices.len(), self.cols);
        for j in 0..self.cols {
            let c = self.col(j);
            for (r, &i) in indices.iter().enumerate() {
                out[(r, j)] = c[i];
            }
        }
        out
    }

    /// The first `n` columns.
    pub fn leading_columns(&self, n: usize) -> Self {
        assert!(n <= self.cols);
        Self { rows: self.rows, cols: n, data: self.data[..n * self.rows].to_vec() }
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[j * self.rows + i]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[j * self.rows + i]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // Four accumulators; fixed order keeps results reproducible.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = 4 * c;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..a.len() {
        s += a[k] * b[k];
    }
    s
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Thin singular value decomposition `A = U diag(σ) Vt`.
#[derive(Clone, Debug)]
pub struct ThinSvd {
    pub u: DenseMatrix,
    pub singular_values: Vec<f64>,
    pub vt: DenseMatrix,
}

impl ThinSvd {
    pub fn reconstruct(&self) -> DenseMatrix {
        let mut us = self.u.clone();
        for (j, &s) in self.singular_values.iter().enumerate() {
            us.col_mut(j).iter_mut().for_each(|v| *v *= s);
        }
        us.matmul(&self.vt)
    }

    /// Number of singular values above `RANK_TOL * σ_max`.
    pub fn numerical_rank(&self) -> usize {
        let smax = self.singular_values.first().copied().unwrap_or(0.0);
        if smax == 0.0 {
            return 0;
        }
        self.singular_values.iter().filter(|&&s| s > RANK_TOL * smax).count()
    }
}

/// Thin SVD with `k = min(rows, cols)` singular triplets, σ non-increasing.
pub fn thin_svd(a: &DenseMatrix) -> Result<ThinSvd> {
    a.check_finite()?;
    if a.rows() < a.cols() {
        let t = thin_svd(&a.transpose())?;
        return Ok(ThinSvd { u: t.vt.transpose(), singular_values: t.singular_values, vt: t.u.transpose() });
    }
    if a.cols() == 0 {
        return Ok(ThinSvd {
            u: DenseMatrix::zeros(a.rows(), 0),
            singular_values: Vec::new(),
            vt: DenseMatrix::zeros(0, 0),
        });
    }
    // Column-pivoted QR first, then one-sided Jacobi on Rᵀ: A Π = Q R and
    // Rᵀ W = U_x Σ give A = (Q W) Σ (Π U_x)ᵀ. The pivoting makes Rᵀ strongly
    // diagonally graded, so few sweeps are needed.
    let (m, n) = (a.rows(), a.cols());
    let (mut q, mut r, piv) = qr_impl(a, true);
    // Flip signs so that diag(R) ≥ 0; the identity then factors as I·I·I.
    for i in 0..n {
        if r[(i, i)] < 0.0 {
            for j in i..n {
                r[(i, j)] = -r[(i, j)];
            }
            q.col_mut(i).iter_mut().for_each(|x| *x = -*x);
        }
    }
    let (xw, w) = jacobi_rotate(r.transpose(), m, n)?;
    let sigma: Vec<f64> = (0..n).map(|j| norm2(xw.col(j))).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps equal values in column order.
    order.sort_by(|&i, &j| sigma[j].partial_cmp(&sigma[i]).unwrap_or(std::cmp::Ordering::Equal));
    let mut w_sorted = DenseMatrix::zeros(n, n);
    let mut v = DenseMatrix::zeros(n, n);
    let mut sv = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        let s = sigma[src];
        sv.push(s);
        w_sorted.col_mut(dst).copy_from_slice(w.col(src));
        if s > 0.0 {
            let inv = 1.0 / s;
            let col = xw.col(src);
            for (k, &p) in piv.iter().enumerate() {
                v[(p, dst)] = col[k] * inv;
            }
        }
    }
    let mut u = q.matmul(&w_sorted);
    complete_orthonormal(&mut u, &sv);
    complete_orthonormal(&mut v, &sv);
    Ok(ThinSvd { u, singular_values: sv, vt: v.transpose() })
}

/// Cyclic one-sided Jacobi: returns `X W` with mutually orthogonal columns
/// and the accumulated rotation `W`.
fn jacobi_rotate(mut x: DenseMatrix, orig_rows: usize, orig_cols: usize) -> Result<(DenseMatrix, DenseMatrix)> {
    let n = x.cols();
    let mut w = DenseMatrix::identity(n);
    // A fixed `eps` threshold can leave a pair cycling at the roundoff floor.
    let tol = f64::EPSILON * (n as f64).sqrt().max(1.0);
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut norms: Vec<f64> = (0..n).map(|j| dot(x.col(j), x.col(j))).collect();
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = norms[p];
                let beta = norms[q];
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let gamma = dot(x.col(p), x.col(q));
                if gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_columns(&mut x, p, q, c, s);
                rotate_columns(&mut w, p, q, c, s);
                let (ap, bq) = (alpha - t * gamma, beta + t * gamma);
                // Cancellation makes the updated norm unreliable once it has
                // shrunk a lot; recompute it then.
                norms[p] = if ap > 0.1 * alpha { ap } else { dot(x.col(p), x.col(p)) };
                norms[q] = if bq > 0.1 * beta { bq } else { dot(x.col(q), x.col(q)) };
            }
        }
        if !rotated {
            return Ok((x, w));
        }
    }
    Err(LinalgError::NonConvergence { rows: orig_rows, cols: orig_cols, sweeps: JACOBI_MAX_SWEEPS })
}

#[inline]
fn rotate_columns(m: &mut DenseMatrix, p: usize, q: usize, c: f64, s: f64) {
    let rows = m.rows;
    let (lo, hi) = m.data.split_at_mut(q * rows);
    let cp = &mut lo[p * rows..(p + 1) * rows];
    let cq = &mut hi[..rows];
    for (a, b) in cp.iter_mut().zip(cq.iter_mut()) {
        let x = *a;
        let y = *b;
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

/// Replaces the columns of `u` belonging to zero singular values with an
/// orthonormal completion so that `uᵀu = I` always holds.
fn complete_orthonormal(u: &mut DenseMatrix, sigma: &[f64]) {
    let smax = sigma.first().copied().unwrap_or(0.0);
    let m = u.rows();
    let keep: Vec<bool> = sigma.iter().map(|&s| s > 0.0 && s > RANK_TOL * smax * 1e-4).collect();
    let mut unit = 0usize;
    for j in 0..u.cols() {
        if keep[j] {
            continue;
        }
        // Gram-Schmidt a unit vector against all columns before it, twice.
        loop {
            assert!(unit < m, "orthonormal completion ran out of unit vectors");
            let mut cand = vec![0.0; m];
            cand[unit] = 1.0;
            unit += 1;
            for _ in 0..2 {
                for k in 0..u.cols() {
                    if k == j || (k > j && !keep[k]) {
                        continue;
                    }
                    let c = dot(u.col(k), &cand);
                    axpy(-c, u.col(k), &mut cand);
                }
            }
            let nrm = norm2(&cand);
            if nrm > 1e-3 {
                cand.iter_mut().for_each(|v| *v /= nrm);
                u.col_mut(j).copy_from_slice(&cand);
                break;
            }
        }
    }
}

/// Householder QR without pivoting; returns thin `Q` (m×n) and `R` (n×n).
pub fn householder_qr(a: &DenseMatrix) -> (DenseMatrix, DenseMatrix) {
    let (q, r, _) = qr_impl(a, false);
    (q, r)
}

/// Column-pivoted Householder QR: `A Π = Q R` with `|R_ii|` non-increasing.
/// `pivots[k]` is the original column placed at position `k`. Ties are broken
/// toward the lowest column index.
pub fn pivoted_qr(a: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix, Vec<usize>)> {
    a.check_finite()?;
    if a.cols() == 0 {
        return Err(LinalgError::Dimension("pivoted QR needs at least one column".into()));
    }
    Ok(qr_impl(a, true))
}

fn qr_impl(a: &DenseMatrix, pivoting: bool) -> (DenseMatrix, DenseMatrix, Vec<usize>) {
    let m = a.rows();
    let n = a.cols();
    let k = m.min(n);
    let mut w = a.clone();
    let mut piv: Vec<usize> = (0..n).collect();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut betas = Vec::with_capacity(k);

    for step in 0..k {
        if pivoting {
            let mut best = step;
            let mut best_norm = -1.0;
            for j in step..n {
                let c = &w.col(j)[step..];
                let nj = dot(c, c);
                if nj > best_norm {
                    best_norm = nj;
                    best = j;
                }
            }
            if best != step {
                for i in 0..m {
                    let tmp = w[(i, step)];
                    w[(i, step)] = w[(i, best)];
                    w[(i, best)] = tmp;
                }
                piv.swap(step, best);
            }
        }
        let x = &w.col(step)[step..];
        let alpha = norm2(x);
        let mut vref = x.to_vec();
        let beta;
        if alpha == 0.0 {
            beta = 0.0;
        } else {
            let sign = if x[0] >= 0.0 { 1.0 } else { -1.0 };
            vref[0] += sign * alpha;
            let vn = dot(&vref, &vref);
            beta = if vn > 0.0 { 2.0 / vn } else { 0.0 };
        }
        if beta != 0.0 {
            for j in step..n {
                let c = &mut w.col_mut(j)[step..];
                let d = beta * dot(&vref, c);
                axpy(-d, &vref, c);
            }
        }
        reflectors.push(vref);
        betas.push(beta);
    }

    let mut r = DenseMatrix::zeros(k, n);
    for j in 0..n {
        for i in 0..=j.min(k - 1) {
            r[(i, j)] = w[(i, j)];
        }
    }
    // Accumulate the thin Q by applying reflectors to the first k unit vectors.
    let mut q = DenseMatrix::zeros(m, k);
    for j in 0..k {
        q[(j, j)] = 1.0;
    }
    for step in (0..k).rev() {
        let vref = &reflectors[step];
        let beta = betas[step];
        if beta == 0.0 {
            continue;
        }
        for j in 0..k {
            let c = &mut q.col_mut(j)[step..];
            let d = beta * dot(vref, c);
            axpy(-d, vref, c);
        }
    }
    (q, r, piv)
}

/// Dense Cholesky factor `L` with `L Lᵀ = M`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    l: DenseMatrix,
}

impl Cholesky {
    pub fn factor(m: &DenseMatrix) -> Result<Self> {
        let n = m.rows();
        if m.cols() != n {
            return Err(LinalgError::Dimension(format!("Cholesky needs a square matrix, got {}x{}", n, m.cols())));
        }
        m.check_finite()?;
        let scale = m.as_slice().iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
        for j in 0..n {
            for i in (j + 1)..n {
                let defect = (m[(i, j)] - m[(j, i)]).abs();
                if defect > 1e-12 * scale {
                    return Err(LinalgError::NotSymmetric { row: i, col: j, defect });
                }
            }
        }
        let mut l = DenseMatrix::zeros(n, n);
        for j in 0..n {
            let mut d = m[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > 0.0) {
                return Err(LinalgError::NotSpd { pivot: j, value: d });
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(Self { l })
    }

    pub fn factor_matrix(&self) -> &DenseMatrix {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    /// Solves `M x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.l.rows();
        assert_eq!(b.len(), n);
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[(i, k)] * b[k];
            }
            b[i] = s / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * b[k];
            }
            b[i] = s / self.l[(i, i)];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Solves `M X = B` column by column.
    pub fn solve_matrix(&self, b: &DenseMatrix) -> DenseMatrix {
        let mut x = b.clone();
        for j in 0..x.cols() {
            self.solve_in_place(x.col_mut(j));
        }
        x
    }
}

/// Convenience wrapper returning only the lower-triangular factor.
pub fn cholesky(m: &DenseMatrix) -> Result<DenseMatrix> {
    Cholesky::factor(m).map(|c| c.l)
}

/// Moore-Penrose pseudo-inverse of a full-column-rank matrix.
pub fn pinv_full_rank(b: &DenseMatrix) -> Result<DenseMatrix> {
    if b.rows() < b.cols() {
        return Err(LinalgError::RankDeficient { rows: b.rows(), cols: b.cols(), ratio: 0.0 });
    }
    let svd = thin_svd(b)?;
    let smax = svd.singular_values.first().copied().unwrap_or(0.0);
    let smin = svd.singular_values.last().copied().unwrap_or(0.0);
    if smax == 0.0 || smin < RANK_TOL * smax {
        let ratio = if smax > 0.0 { smin / smax } else { 0.0 };
        return Err(LinalgError::RankDeficient { rows: b.rows(), cols: b.cols(), ratio });
    }
    // B† = V Σ⁻¹ Uᵀ
    let k = b.cols();
    let mut out = DenseMatrix::zeros(k, b.rows());
    for r in 0..k {
        let inv = 1.0 / svd.singular_values[r];
        let ucol = svd.u.col(r);
        for j in 0..b.rows() {
            let coef = ucol[j] * inv;
            if coef == 0.0 {
                continue;
            }
            for i in 0..k {
                out[(i, j)] += svd.vt[(r, i)] * coef;
            }
        }
    }
    Ok(out)
}

/// Least-squares solution `B† y`; errors when `B` is numerically rank-deficient.
pub fn lstsq_pinv(b: &DenseMatrix, y: &[f64]) -> Result<Vec<f64>> {
    if y.len() != b.rows() {
        return Err(LinalgError::Dimension(format!("rhs length {} vs {} rows", y.len(), b.rows())));
    }
    Ok(pinv_full_rank(b)?.matvec(y))
}

/// Spectral norm via the largest singular value.
pub fn spectral_norm(a: &DenseMatrix) -> Result<f64> {
    Ok(thin_svd(a)?.singular_values.first().copied().unwrap_or(0.0))
}

/// Symmetric positive-definite banded matrix with an in-place Cholesky factor.
///
/// Storage keeps the lower band: `band[i * (bw + 1) + (i - j)]` holds `a_ij`
/// for `0 <= i - j <= bw`.
#[derive(Clone, Debug)]
pub struct SymBand {
    n: usize,
    bw: usize,
    matrix: Vec<f64>,
    factor: Vec<f64>,
}

impl SymBand {
    /// Assembles from lower-band entries and factors immediately.
    pub fn new(n: usize, bw: usize, lower_band: Vec<f64>) -> Result<Self> {
        if lower_band.len() != n * (bw + 1) {
            return Err(LinalgError::Dimension(format!(
                "band storage of length {} for n={n}, bw={bw}",
                lower_band.len()
            )));
        }
        let mut factor = lower_band.clone();
        let w = bw + 1;
        for j in 0..n {
            let mut d = factor[j * w];
            let kmin = j.saturating_sub(bw);
            for k in kmin..j {
                let l = factor[j * w + (j - k)];
                d -= l * l;
            }
            if !(d > 0.0) {
                return Err(LinalgError::NotSpd { pivot: j, value: d });
            }
            let djj = d.sqrt();
            factor[j * w] = djj;
            let imax = (j + bw).min(n - 1);
            for i in (j + 1)..=imax {
                let mut s = factor[i * w + (i - j)];
                let kmin = i.saturating_sub(bw);
                for k in kmin..j {
                    s -= factor[i * w + (i - k)] * factor[j * w + (j - k)];
                }
                factor[i * w + (i - j)] = s / djj;
            }
        }
        Ok(Self { n, bw, matrix: lower_band, factor })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.matrix[i * (self.bw + 1) + (i - j)]
        }
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        let w = self.bw + 1;
        y.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.n {
            let kmin = i.saturating_sub(self.bw);
            let mut s = self.matrix[i * w] * x[i];
            for k in kmin..i {
                let a = self.matrix[i * w + (i - k)];
                s += a * x[k];
                y[k] += a * x[i];
            }
            y[i] += s;
        }
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let w = self.bw + 1;
        for i in 0..self.n {
            let mut s = b[i];
            let kmin = i.saturating_sub(self.bw);
            for k in kmin..i {
                s -= self.factor[i * w + (i - k)] * b[k];
            }
            b[i] = s / self.factor[i * w];
        }
        for i in (0..self.n).rev() {
            let mut s = b[i];
            let kmax = (i + self.bw).min(self.n - 1);
            for k in (i + 1)..=kmax {
                s -= self.factor[k * w + (k - i)] * b[k];
            }
            b[i] = s / self.factor[i * w];
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                d[(i, j)] = self.entry(i, j);
            }
        }
        d
    }
}
