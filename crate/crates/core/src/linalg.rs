//! Dense kernels for the `m ≪ d` regime.
//!
//! Everything here works on [`DenseMatrix`], a plain row-major buffer. The
//! tall `d × m` blocks (sampled directions, Hessian products, orthonormal
//! bases) are only ever touched by `O(d·m)` or `O(d·m²)` loops; the `m × m`
//! kernels (symmetric eigensolver, pseudo-inverse) are cubic in `m` and
//! intended for `m ≤ 256`.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{mismatch, Error, Result};

/// Relative asymmetry accepted by [`sym_eig`] and [`pinv_sym`].
pub const SYMMETRY_TOL: f64 = 1e-8;

/// Default relative drop tolerance for [`pinv_sym`].
pub const PINV_DROP_TOL: f64 = 1e-12;

/// Default relative rank tolerance for [`thin_qr`].
pub const QR_RANK_TOL: f64 = 1e-12;

const JACOBI_MAX_SWEEPS: usize = 100;

/// Row-major dense matrix of finite `f64` entries.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Wraps a row-major buffer, checking its length and that every entry is finite.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(mismatch("DenseMatrix::new", rows * cols, data.len()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("DenseMatrix::new"));
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

    pub fn identity(n: usize) -> Self {
        let mut out = Self::zeros(n, n);
        for i in 0..n {
            out[(i, i)] = 1.0;
        }
        out
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut out = Self::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            out[(i, i)] = v;
        }
        out
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(mismatch("DenseMatrix::from_rows", cols, row.len()));
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Stacks vectors as the columns of a matrix.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        if let Some(c) = columns.iter().find(|c| c.len() != rows) {
            return Err(mismatch("DenseMatrix::from_columns", rows, c.len()));
        }
        let out = Self::from_fn(rows, columns.len(), |i, j| columns[j][i]);
        if !out.is_finite() {
            return Err(Error::NonFinite("DenseMatrix::from_columns"));
        }
        Ok(out)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[f64]) {
        assert_eq!(values.len(), self.rows, "set_column: length mismatch");
        for (i, &v) in values.iter().enumerate() {
            self[(i, j)] = v;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul: inner dimensions differ");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a != 0.0 {
                    axpy(a, other.row(k), out_row);
                }
            }
        }
        out
    }

    /// `selfᵀ · other` without forming the transpose.
    pub fn t_matmul(&self, other: &Self) -> Self {
        assert_eq!(self.rows, other.rows, "t_matmul: row counts differ");
        let mut out = Self::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let b = other.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                if a != 0.0 {
                    axpy(a, b, out.row_mut(i));
                }
            }
        }
        out
    }

    /// `self · otherᵀ` without forming the transpose.
    pub fn matmul_t(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.cols, "matmul_t: column counts differ");
        Self::from_fn(self.rows, other.rows, |i, j| dot(self.row(i), other.row(j)))
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "matvec: length mismatch");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `selfᵀ · x`.
    pub fn t_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, x.len(), "t_matvec: length mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                axpy(xi, self.row(i), &mut out);
            }
        }
        out
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| alpha * x).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.shape(), other.shape(), "add: shape mismatch");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.shape(), other.shape(), "sub: shape mismatch");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// `‖M − Mᵀ‖_F / max(1, ‖M‖_F)`; infinite for non-square input.
    pub fn relative_asymmetry(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut acc = 0.0;
        for i in 0..self.rows {
            for j in 0..self.cols {
                let d = self[(i, j)] - self[(j, i)];
                acc += d * d;
            }
        }
        acc.sqrt() / self.frobenius_norm().max(1.0)
    }

    /// `(M + Mᵀ) / 2`.
    pub fn symmetrized(&self) -> Self {
        assert!(self.is_square(), "symmetrized: matrix must be square");
        Self::from_fn(self.rows, self.cols, |i, j| 0.5 * (self[(i, j)] + self[(j, i)]))
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
        for i in 0..self.rows.min(12) {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        if self.rows > 12 {
            writeln!(f, "  ...")?;
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
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y ← y + alpha·x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Thin QR factors of a tall matrix.
#[derive(Debug, Clone)]
pub struct ThinQr {
    /// `d × m`, orthonormal columns.
    pub q: DenseMatrix,
    /// `m × m`, upper triangular.
    pub r: DenseMatrix,
    /// Columns whose residual fell below the rank tolerance.
    pub deficient: Vec<usize>,
}

/// Householder thin QR of a `d × m` matrix with `d ≥ m ≥ 1`.
///
/// A column whose remaining norm is at most `rank_tol·‖M‖_F` is treated as
/// numerically dependent: no reflector is generated for it, its diagonal
/// entry in `R` is set to zero, and the matching column of `Q` becomes the
/// image of the unit vector `e_k` under the preceding reflectors, which is
/// orthogonal to every other column by construction. `Q·R` still reproduces
/// `M` up to the dropped residual. Signs are normalized so that the
/// diagonal of `R` is nonnegative.
pub fn thin_qr(m: &DenseMatrix, rank_tol: f64) -> Result<ThinQr> {
    let (d, k_cols) = m.shape();
    if k_cols == 0 || d < k_cols {
        return Err(mismatch("thin_qr", "d >= m >= 1", format!("{d}x{k_cols}")));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("thin_qr input"));
    }
    let threshold = rank_tol.max(0.0) * m.frobenius_norm();

    let mut a = m.clone();
    let mut reflectors: Vec<Option<Vec<f64>>> = Vec::with_capacity(k_cols);
    let mut deficient = Vec::new();
    let mut x = vec![0.0; d];

    for k in 0..k_cols {
        let len = d - k;
        for i in 0..len {
            x[i] = a[(k + i, k)];
        }
        let norm = norm2(&x[..len]);
        if norm <= threshold || norm == 0.0 {
            for i in 0..len {
                a[(k + i, k)] = 0.0;
            }
            reflectors.push(None);
            deficient.push(k);
            continue;
        }
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        let mut v = x[..len].to_vec();
        v[0] -= alpha;
        let vnorm = norm2(&v);
        for vi in &mut v {
            *vi /= vnorm;
        }
        // Column k maps to alpha·e_k.
        a[(k, k)] = alpha;
        for i in 1..len {
            a[(k + i, k)] = 0.0;
        }
        for j in k + 1..k_cols {
            let s: f64 = (0..len).map(|i| v[i] * a[(k + i, j)]).sum();
            for i in 0..len {
                a[(k + i, j)] -= 2.0 * s * v[i];
            }
        }
        reflectors.push(Some(v));
    }

    let mut r = DenseMatrix::from_fn(k_cols, k_cols, |i, j| if j >= i { a[(i, j)] } else { 0.0 });

    // Q = H_0 ⋯ H_{m-1} [I_m; 0]
    let mut q = DenseMatrix::zeros(d, k_cols);
    for i in 0..k_cols {
        q[(i, i)] = 1.0;
    }
    for (k, v) in reflectors.iter().enumerate().rev() {
        let Some(v) = v else { continue };
        let len = d - k;
        for j in 0..k_cols {
            let s: f64 = (0..len).map(|i| v[i] * q[(k + i, j)]).sum();
            if s != 0.0 {
                for i in 0..len {
                    q[(k + i, j)] -= 2.0 * s * v[i];
                }
            }
        }
    }
    reorthogonalize(&mut q);

    // Unique factors for full-rank input: diag(R) ≥ 0.
    for k in 0..k_cols {
        if r[(k, k)] < 0.0 {
            for j in k..k_cols {
                r[(k, j)] = -r[(k, j)];
            }
            for i in 0..d {
                q[(i, k)] = -q[(i, k)];
            }
        }
    }

    Ok(ThinQr { q, r, deficient })
}

/// One modified Gram–Schmidt pass over the columns of `q`.
fn reorthogonalize(q: &mut DenseMatrix) {
    let (d, m) = q.shape();
    for j in 0..m {
        for i in 0..j {
            let proj: f64 = (0..d).map(|r| q[(r, i)] * q[(r, j)]).sum();
            for r in 0..d {
                let qi = q[(r, i)];
                q[(r, j)] -= proj * qi;
            }
        }
        let nrm: f64 = (0..d).map(|r| q[(r, j)] * q[(r, j)]).sum::<f64>().sqrt();
        if nrm > 0.0 {
            for r in 0..d {
                q[(r, j)] /= nrm;
            }
        }
    }
}

/// Eigendecomposition `M = V·diag(λ)·Vᵀ` of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymEig {
    /// Sorted descending.
    pub eigenvalues: Vec<f64>,
    /// Column `i` pairs with `eigenvalues[i]`; the first entry above
    /// round-off of each column is positive.
    pub eigenvectors: DenseMatrix,
}

impl SymEig {
    /// `V·diag(f(λ))·Vᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        let n = self.eigenvalues.len();
        let v = &self.eigenvectors;
        let scaled = DenseMatrix::from_fn(n, n, |i, j| v[(i, j)] * f(self.eigenvalues[j]));
        scaled.matmul_t(v)
    }
}

fn check_symmetric(m: &DenseMatrix, context: &'static str) -> Result<()> {
    if !m.is_square() {
        return Err(mismatch(context, "square matrix", format!("{}x{}", m.rows(), m.cols())));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite(context));
    }
    let asym = m.relative_asymmetry();
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

/// Cyclic Jacobi eigensolver for small symmetric matrices.
///
/// The input is symmetrized as `(M + Mᵀ)/2` first. Output is deterministic:
/// eigenvalues are sorted descending and each eigenvector is signed so its
/// first significant entry is positive.
pub fn sym_eig(m: &DenseMatrix) -> Result<SymEig> {
    check_symmetric(m, "sym_eig")?;
    let n = m.rows();
    let mut a = m.symmetrized();
    let mut v = DenseMatrix::identity(n);

    let scale = a.frobenius_norm();
    if n > 1 && scale > 0.0 {
        for _ in 0..JACOBI_MAX_SWEEPS {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[(i, j)] * a[(i, j)])
                .sum::<f64>()
                .sqrt();
            if off <= f64::EPSILON * 1e-2 * scale {
                break;
            }
            for p in 0..n - 1 {
                for q in p + 1..n {
                    let apq = a[(p, q)];
                    if apq == 0.0 {
                        continue;
                    }
                    let app = a[(p, p)];
                    let aqq = a[(q, q)];
                    // Skip entries that can no longer move the diagonal.
                    if apq.abs() < f64::EPSILON * 1e-3 * (app.abs() + aqq.abs()) {
                        a[(p, q)] = 0.0;
                        a[(q, p)] = 0.0;
                        continue;
                    }
                    let theta = (aqq - app) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        if k == p || k == q {
                            continue;
                        }
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        let new_kp = c * akp - s * akq;
                        let new_kq = s * akp + c * akq;
                        a[(k, p)] = new_kp;
                        a[(p, k)] = new_kp;
                        a[(k, q)] = new_kq;
                        a[(q, k)] = new_kq;
                    }
                    a[(p, p)] = app - t * apq;
                    a[(q, q)] = aqq + t * apq;
                    a[(p, q)] = 0.0;
                    a[(q, p)] = 0.0;
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
    let mut eigenvectors = DenseMatrix::from_fn(n, n, |i, j| v[(i, order[j])]);
    for j in 0..n {
        let lead = (0..n)
            .map(|i| eigenvectors[(i, j)])
            .find(|x| x.abs() > 64.0 * f64::EPSILON);
        if matches!(lead, Some(x) if x < 0.0) {
            for i in 0..n {
                eigenvectors[(i, j)] = -eigenvectors[(i, j)];
            }
        }
    }
    Ok(SymEig {
        eigenvalues,
        eigenvectors,
    })
}

/// Moore–Penrose pseudo-inverse of a symmetric matrix.
///
/// Eigenvalues with `|λ| ≤ drop_tol·max|λ|` are treated as zero.
pub fn pinv_sym(m: &DenseMatrix, drop_tol: f64) -> Result<DenseMatrix> {
    let eig = sym_eig(m)?;
    let max_abs = eig.eigenvalues.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    let cutoff = drop_tol * max_abs;
    Ok(eig.reconstruct_with(|l| if l.abs() > cutoff && l != 0.0 { 1.0 / l } else { 0.0 }))
}
