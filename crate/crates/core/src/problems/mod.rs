//! Objectives with value, gradient and Hessian–matrix products.
//!
//! Every evaluation optionally takes an index subset `idx` of the samples;
//! the result is then the mean over those samples (plus the regularizer),
//! which is what the stochastic drivers need. `None` means all samples.

mod dataset;
mod partition;

pub use dataset::{CsrMatrix, Dataset, Features, LabelEncoding, DENSE_THRESHOLD};
pub use partition::partitioned_hess_block;

use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::linalg::{axpy, dot, DenseMatrix};

/// A smooth finite-sum objective `F(w) = (1/n) Σ f_i(w) (+ regularizer)`.
pub trait Objective: Sync {
    fn dim(&self) -> usize;

    fn num_samples(&self) -> usize;

    fn value(&self, w: &[f64], idx: Option<&[usize]>) -> Result<f64>;

    fn gradient(&self, w: &[f64], idx: Option<&[usize]>) -> Result<Vec<f64>>;

    /// `∇²F_idx(w) · S` for a `d × m` block `S`.
    fn hess_mat(&self, w: &[f64], s: &DenseMatrix, idx: Option<&[usize]>) -> Result<DenseMatrix>;

    /// Classification accuracy on held-out data, when meaningful.
    fn accuracy(&self, _w: &[f64]) -> Option<f64> {
        None
    }

    /// True when the objective is known to be strongly convex.
    fn strongly_convex(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    /// ℓ2-regularized logistic loss, labels ±1.
    Logistic,
    /// Nonlinear least squares `(1/2n)‖y − φ(Xw)‖²`, labels 0/1.
    Nlls,
}

impl ProblemKind {
    pub fn encoding(self) -> LabelEncoding {
        match self {
            ProblemKind::Logistic => LabelEncoding::PlusMinusOne,
            ProblemKind::Nlls => LabelEncoding::ZeroOne,
        }
    }
}

impl std::str::FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(ProblemKind::Logistic),
            "nlls" => Ok(ProblemKind::Nlls),
            other => Err(Error::InvalidConfig(format!("unknown problem kind {other:?}"))),
        }
    }
}

/// Empirical risk over a borrowed [`Dataset`].
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    kind: ProblemKind,
    lambda: f64,
    data: &'a Dataset,
    holdout: Option<&'a Dataset>,
}

impl<'a> Problem<'a> {
    pub fn new(kind: ProblemKind, lambda: f64, data: &'a Dataset) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {lambda}")));
        }
        if kind == ProblemKind::Nlls && lambda != 0.0 {
            return Err(Error::InvalidConfig("nlls has no regularizer; lambda must be 0".into()));
        }
        if data.encoding() != kind.encoding() {
            return Err(Error::InvalidConfig(format!(
                "{kind:?} expects {:?} labels, dataset has {:?}",
                kind.encoding(),
                data.encoding()
            )));
        }
        if data.n() == 0 {
            return Err(Error::EmptyDataset);
        }
        Ok(Self {
            kind,
            lambda,
            data,
            holdout: None,
        })
    }

    pub fn logistic(data: &'a Dataset, lambda: f64) -> Result<Self> {
        Self::new(ProblemKind::Logistic, lambda, data)
    }

    pub fn nlls(data: &'a Dataset) -> Result<Self> {
        Self::new(ProblemKind::Nlls, 0.0, data)
    }

    /// Data used by [`Objective::accuracy`]; defaults to the training set.
    pub fn with_holdout(mut self, test: &'a Dataset) -> Result<Self> {
        if test.d() != self.data.d() {
            return Err(mismatch("holdout dimension", self.data.d(), test.d()));
        }
        self.holdout = Some(test);
        Ok(self)
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn data(&self) -> &'a Dataset {
        self.data
    }

    fn check(&self, w: &[f64], idx: Option<&[usize]>) -> Result<usize> {
        if w.len() != self.data.d() {
            return Err(mismatch("iterate length", self.data.d(), w.len()));
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("iterate"));
        }
        check_indices(idx, self.data.n())
    }

    fn for_each_sample(&self, idx: Option<&[usize]>, mut f: impl FnMut(usize)) {
        match idx {
            Some(idx) => idx.iter().for_each(|&i| f(i)),
            None => (0..self.data.n()).for_each(f),
        }
    }

    /// Per-sample loss as a function of the margin `z = x_iᵀw`.
    #[inline]
    fn loss(&self, z: f64, y: f64) -> f64 {
        match self.kind {
            ProblemKind::Logistic => log1p_exp(-y * z),
            ProblemKind::Nlls => {
                let r = y - sigmoid(z);
                0.5 * r * r
            }
        }
    }

    /// First derivative of the per-sample loss with respect to `z`.
    #[inline]
    fn loss_d1(&self, z: f64, y: f64) -> f64 {
        match self.kind {
            ProblemKind::Logistic => -y * sigmoid(-y * z),
            ProblemKind::Nlls => {
                let phi = sigmoid(z);
                -phi * (1.0 - phi) * (y - phi)
            }
        }
    }

    /// Second derivative of the per-sample loss with respect to `z`.
    #[inline]
    fn loss_d2(&self, z: f64, y: f64) -> f64 {
        match self.kind {
            ProblemKind::Logistic => {
                let t = y * z;
                y * y * sigmoid(t) * sigmoid(-t)
            }
            ProblemKind::Nlls => {
                let phi = sigmoid(z);
                -phi * (1.0 - phi) * (y - 2.0 * (1.0 + y) * phi + 3.0 * phi * phi)
            }
        }
    }
}

impl Objective for Problem<'_> {
    fn dim(&self) -> usize {
        self.data.d()
    }

    fn num_samples(&self) -> usize {
        self.data.n()
    }

    fn value(&self, w: &[f64], idx: Option<&[usize]>) -> Result<f64> {
        let b = self.check(w, idx)?;
        let x = self.data.features();
        let y = self.data.labels();
        let mut acc = 0.0;
        self.for_each_sample(idx, |i| acc += self.loss(x.row_dot(i, w), y[i]));
        Ok(acc / b as f64 + 0.5 * self.lambda * dot(w, w))
    }

    fn gradient(&self, w: &[f64], idx: Option<&[usize]>) -> Result<Vec<f64>> {
        let b = self.check(w, idx)?;
        let x = self.data.features();
        let y = self.data.labels();
        let mut g = vec![0.0; w.len()];
        self.for_each_sample(idx, |i| {
            let c = self.loss_d1(x.row_dot(i, w), y[i]);
            if c != 0.0 {
                x.row_axpy(i, c, &mut g);
            }
        });
        let inv_b = 1.0 / b as f64;
        for (gi, wi) in g.iter_mut().zip(w) {
            *gi = *gi * inv_b + self.lambda * wi;
        }
        Ok(g)
    }

    fn hess_mat(&self, w: &[f64], s: &DenseMatrix, idx: Option<&[usize]>) -> Result<DenseMatrix> {
        let b = self.check(w, idx)?;
        if s.rows() != w.len() {
            return Err(mismatch("hess_mat block rows", w.len(), s.rows()));
        }
        if !s.is_finite() {
            return Err(Error::NonFinite("hess_mat block"));
        }
        let m = s.cols();
        let x = self.data.features();
        let y = self.data.labels();
        let mut out = DenseMatrix::zeros(w.len(), m);
        let mut u = vec![0.0; m];
        self.for_each_sample(idx, |i| {
            let h = self.loss_d2(x.row_dot(i, w), y[i]);
            if h != 0.0 {
                x.row_times_block(i, s, &mut u);
                u.iter_mut().for_each(|v| *v *= h);
                x.row_outer_add(i, &u, &mut out);
            }
        });
        let inv_b = 1.0 / b as f64;
        for (o, si) in out.as_mut_slice().iter_mut().zip(s.as_slice()) {
            *o = *o * inv_b + self.lambda * si;
        }
        Ok(out)
    }

    fn accuracy(&self, w: &[f64]) -> Option<f64> {
        let data = self.holdout.unwrap_or(self.data);
        if w.len() != data.d() || data.n() == 0 {
            return None;
        }
        let enc = data.encoding();
        let correct = (0..data.n())
            .filter(|&i| {
                let z = data.features().row_dot(i, w);
                let predicted = if z >= 0.0 { enc.positive() } else { enc.negative() };
                predicted == data.labels()[i]
            })
            .count();
        Some(correct as f64 / data.n() as f64)
    }

    fn strongly_convex(&self) -> bool {
        self.kind == ProblemKind::Logistic && self.lambda > 0.0
    }
}

/// `F(w) = ½ wᵀHw − bᵀw` with a symmetric `H`; a single "sample".
#[derive(Debug, Clone)]
pub struct Quadratic {
    hessian: DenseMatrix,
    linear: Vec<f64>,
}

impl Quadratic {
    pub fn new(hessian: DenseMatrix, linear: Vec<f64>) -> Result<Self> {
        if !hessian.is_square() || hessian.rows() != linear.len() {
            return Err(mismatch(
                "Quadratic",
                format!("{0}x{0} Hessian", linear.len()),
                format!("{}x{}", hessian.rows(), hessian.cols()),
            ));
        }
        if hessian.relative_asymmetry() > crate::linalg::SYMMETRY_TOL {
            return Err(Error::NotSymmetric(hessian.relative_asymmetry()));
        }
        if linear.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("Quadratic linear term"));
        }
        Ok(Self {
            hessian: hessian.symmetrized(),
            linear,
        })
    }

    pub fn hessian(&self) -> &DenseMatrix {
        &self.hessian
    }

    pub fn linear(&self) -> &[f64] {
        &self.linear
    }

    fn check(&self, w: &[f64], idx: Option<&[usize]>) -> Result<()> {
        if w.len() != self.linear.len() {
            return Err(mismatch("iterate length", self.linear.len(), w.len()));
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("iterate"));
        }
        check_indices(idx, 1).map(|_| ())
    }
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.linear.len()
    }

    fn num_samples(&self) -> usize {
        1
    }

    fn value(&self, w: &[f64], idx: Option<&[usize]>) -> Result<f64> {
        self.check(w, idx)?;
        Ok(0.5 * dot(w, &self.hessian.matvec(w)) - dot(&self.linear, w))
    }

    fn gradient(&self, w: &[f64], idx: Option<&[usize]>) -> Result<Vec<f64>> {
        self.check(w, idx)?;
        let mut g = self.hessian.matvec(w);
        axpy(-1.0, &self.linear, &mut g);
        Ok(g)
    }

    fn hess_mat(&self, w: &[f64], s: &DenseMatrix, idx: Option<&[usize]>) -> Result<DenseMatrix> {
        self.check(w, idx)?;
        if s.rows() != w.len() {
            return Err(mismatch("hess_mat block rows", w.len(), s.rows()));
        }
        Ok(self.hessian.matmul(s))
    }

    fn strongly_convex(&self) -> bool {
        crate::linalg::sym_eig(&self.hessian).is_ok_and(|e| e.eigenvalues.last().is_some_and(|&l| l > 0.0))
    }
}

fn check_indices(idx: Option<&[usize]>, n: usize) -> Result<usize> {
    match idx {
        None => Ok(n),
        Some([]) => Err(Error::EmptyIndexSet),
        Some(idx) => {
            if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
                return Err(Error::IndexOutOfRange { index: bad, n });
            }
            Ok(idx.len())
        }
    }
}

/// `1 / (1 + e^{−z})` without overflow.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^{z})` without overflow.
#[inline]
pub fn log1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}
