use crate::error::{mismatch, Error, Result};
use crate::linalg::{axpy, DenseMatrix};

/// Stored-entry fraction above which a sparse matrix is densified.
pub const DENSE_THRESHOLD: f64 = 0.25;

/// Compressed sparse row matrix with strictly increasing column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if indptr.len() != rows + 1 {
            return Err(mismatch("CsrMatrix indptr", rows + 1, indptr.len()));
        }
        if indices.len() != values.len() || indptr[rows] != indices.len() || indptr[0] != 0 {
            return Err(mismatch("CsrMatrix entries", indptr[rows], indices.len()));
        }
        for r in 0..rows {
            let (lo, hi) = (indptr[r], indptr[r + 1]);
            if lo > hi {
                return Err(Error::InvalidConfig(format!("row {r}: decreasing indptr")));
            }
            let row = &indices[lo..hi];
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidConfig(format!(
                    "row {r}: column indices not strictly increasing"
                )));
            }
            if let Some(&last) = row.last() {
                if last >= cols {
                    return Err(mismatch("CsrMatrix column index", format!("< {cols}"), last));
                }
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("CsrMatrix values"));
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    /// Builds from per-row `(column, value)` lists.
    pub fn from_rows(cols: usize, rows: &[Vec<(usize, f64)>]) -> Result<Self> {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in rows {
            for &(j, v) in row {
                indices.push(j);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Self::new(rows.len(), cols, indptr, indices, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[lo..hi], &self.values[lo..hi])
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let (idx, val) = self.row(i);
            for (&j, &v) in idx.iter().zip(val) {
                out[(i, j)] = v;
            }
        }
        out
    }
}

/// Feature storage for a dataset.
#[derive(Debug, Clone)]
pub enum Features {
    Sparse(CsrMatrix),
    Dense(DenseMatrix),
}

impl Features {
    /// Keeps CSR storage unless more than a quarter of the entries are stored.
    pub fn auto(csr: CsrMatrix) -> Self {
        let cells = (csr.rows() * csr.cols()).max(1) as f64;
        if csr.nnz() as f64 / cells > DENSE_THRESHOLD {
            Features::Dense(csr.to_dense())
        } else {
            Features::Sparse(csr)
        }
    }

    pub fn rows(&self) -> usize {
        match self {
            Features::Sparse(m) => m.rows(),
            Features::Dense(m) => m.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Features::Sparse(m) => m.cols(),
            Features::Dense(m) => m.cols(),
        }
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self, Features::Sparse(_))
    }

    /// Nonzero `(column, value)` pairs of row `i` in increasing column order.
    pub fn row_nonzeros(&self, i: usize) -> Vec<(usize, f64)> {
        match self {
            Features::Sparse(m) => {
                let (idx, val) = m.row(i);
                idx.iter().zip(val).filter(|(_, &v)| v != 0.0).map(|(&j, &v)| (j, v)).collect()
            }
            Features::Dense(m) => m
                .row(i)
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(j, &v)| (j, v))
                .collect(),
        }
    }

    /// `x_iᵀ w`.
    #[inline]
    pub fn row_dot(&self, i: usize, w: &[f64]) -> f64 {
        match self {
            Features::Sparse(m) => {
                let (idx, val) = m.row(i);
                idx.iter().zip(val).map(|(&j, &v)| v * w[j]).sum()
            }
            Features::Dense(m) => crate::linalg::dot(m.row(i), w),
        }
    }

    /// `out ← out + alpha·x_i`.
    #[inline]
    pub fn row_axpy(&self, i: usize, alpha: f64, out: &mut [f64]) {
        match self {
            Features::Sparse(m) => {
                let (idx, val) = m.row(i);
                for (&j, &v) in idx.iter().zip(val) {
                    out[j] += alpha * v;
                }
            }
            Features::Dense(m) => axpy(alpha, m.row(i), out),
        }
    }

    /// `out ← x_iᵀ S` for a `d × m` block `S`.
    #[inline]
    pub fn row_times_block(&self, i: usize, s: &DenseMatrix, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        match self {
            Features::Sparse(m) => {
                let (idx, val) = m.row(i);
                for (&j, &v) in idx.iter().zip(val) {
                    axpy(v, s.row(j), out);
                }
            }
            Features::Dense(m) => {
                for (j, &v) in m.row(i).iter().enumerate() {
                    if v != 0.0 {
                        axpy(v, s.row(j), out);
                    }
                }
            }
        }
    }

    /// `Y ← Y + x_i·uᵀ` for an `m`-vector `u`.
    #[inline]
    pub fn row_outer_add(&self, i: usize, u: &[f64], y: &mut DenseMatrix) {
        match self {
            Features::Sparse(m) => {
                let (idx, val) = m.row(i);
                for (&j, &v) in idx.iter().zip(val) {
                    axpy(v, u, y.row_mut(j));
                }
            }
            Features::Dense(m) => {
                for (j, &v) in m.row(i).iter().enumerate() {
                    if v != 0.0 {
                        axpy(v, u, y.row_mut(j));
                    }
                }
            }
        }
    }

    fn subset(&self, indices: &[usize]) -> Features {
        match self {
            Features::Sparse(m) => {
                let rows: Vec<Vec<(usize, f64)>> = indices
                    .iter()
                    .map(|&i| {
                        let (idx, val) = m.row(i);
                        idx.iter().copied().zip(val.iter().copied()).collect()
                    })
                    .collect();
                Features::Sparse(
                    CsrMatrix::from_rows(m.cols(), &rows).expect("rows of a valid matrix stay valid"),
                )
            }
            Features::Dense(m) => {
                Features::Dense(DenseMatrix::from_fn(indices.len(), m.cols(), |r, c| m[(indices[r], c)]))
            }
        }
    }
}

/// How binary labels are encoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum LabelEncoding {
    /// `−1 / +1`, used by logistic regression.
    PlusMinusOne,
    /// `0 / 1`, used by nonlinear least squares.
    ZeroOne,
}

impl LabelEncoding {
    pub fn negative(self) -> f64 {
        match self {
            LabelEncoding::PlusMinusOne => -1.0,
            LabelEncoding::ZeroOne => 0.0,
        }
    }

    pub fn positive(self) -> f64 {
        1.0
    }

    pub fn contains(self, y: f64) -> bool {
        y == self.negative() || y == self.positive()
    }
}

/// Feature matrix plus binary labels. Immutable once built.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Features,
    labels: Vec<f64>,
    encoding: LabelEncoding,
}

impl Dataset {
    pub fn new(features: Features, labels: Vec<f64>, encoding: LabelEncoding) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(mismatch("Dataset labels", features.rows(), labels.len()));
        }
        if let Some(bad) = labels.iter().find(|&&y| !encoding.contains(y)) {
            return Err(Error::InvalidConfig(format!(
                "label {bad} not allowed under {encoding:?}"
            )));
        }
        Ok(Self {
            features,
            labels,
            encoding,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn d(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Features {
        &self.features
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn encoding(&self) -> LabelEncoding {
        self.encoding
    }

    /// Same samples with labels re-encoded.
    pub fn with_encoding(&self, encoding: LabelEncoding) -> Dataset {
        let labels = self
            .labels
            .iter()
            .map(|&y| if y == self.encoding.positive() { encoding.positive() } else { encoding.negative() })
            .collect();
        Dataset {
            features: self.features.clone(),
            labels,
            encoding,
        }
    }

    /// Rows `indices` in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n()) {
            return Err(Error::IndexOutOfRange { index: bad, n: self.n() });
        }
        Ok(Dataset {
            features: self.features.subset(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            encoding: self.encoding,
        })
    }
}

/// Logical equality: same shape, labels, encoding and nonzero entries,
/// regardless of storage layout.
impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.n() == other.n()
            && self.d() == other.d()
            && self.encoding == other.encoding
            && self.labels == other.labels
            && (0..self.n()).all(|i| self.features.row_nonzeros(i) == other.features.row_nonzeros(i))
    }
}
