//! The SONIA method: a truncated second-order step in a sampled
//! `m`-dimensional subspace and a scaled steepest-descent step in its
//! orthogonal complement.
//!
//! Each iteration samples `m` Gaussian directions `S`, forms the Hessian
//! product `Y = ∇²F(w)·S`, and builds the compact approximation
//! `B = Y (YᵀS)† Yᵀ`. Factoring `Y = QR` and diagonalizing the small matrix
//! `R (YᵀS)† Rᵀ = V Λ Vᵀ` gives `B = Ṽ Λ Ṽᵀ` with `Ṽ = QV` orthonormal. The
//! search direction applies
//!
//! ```text
//! 𝒜 = Ṽ |Λ|_ε⁻¹ Ṽᵀ + ρ (I − ṼṼᵀ),     (|Λ|_ε)_ii = max(|Λ_ii|, ε)
//! ```
//!
//! to the negative gradient. `𝒜` is never materialized: every product costs
//! `O(d·m)`.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::driver::{self, Direction, DirectionRequest, Limits, Observer, StochasticPlan};
use crate::error::{mismatch, Error, Result};
use crate::linalg::{dot, pinv_sym, sym_eig, thin_qr, DenseMatrix, PINV_DROP_TOL, QR_RANK_TOL, SYMMETRY_TOL};
use crate::problems::Objective;
use crate::stepsize::StepRule;
use crate::trace::{EvalCounters, RunResult};

/// Memory cap used by default.
pub const MAX_DEFAULT_MEMORY: usize = 64;
/// Default truncation threshold.
pub const DEFAULT_EPS: f64 = 1e-5;
/// Default gradient-norm stopping tolerance.
pub const DEFAULT_GTOL: f64 = 1e-8;

/// How the complement scale `ρ` is chosen from the truncated inverse spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoRule {
    /// `ρ = min_i invEig_i`; keeps `𝒜 ⪰ ρ I` as the convergence theory needs.
    TheoryMin,
    /// `ρ = max_i invEig_i`; the empirically faster choice.
    PaperMax,
}

impl fmt::Display for RhoRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RhoRule::TheoryMin => "theory_min",
            RhoRule::PaperMax => "paper_max",
        })
    }
}

impl FromStr for RhoRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theory_min" => Ok(RhoRule::TheoryMin),
            "paper_max" => Ok(RhoRule::PaperMax),
            other => Err(Error::InvalidConfig(format!("unknown rho rule {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoniaConfig {
    /// Number of sampled directions per iteration.
    pub memory: usize,
    pub eps: f64,
    pub rho_rule: RhoRule,
    pub step: StepRule,
    pub max_iters: usize,
    pub gtol: f64,
    /// Optional effective-pass budget for deterministic runs.
    pub max_passes: Option<f64>,
    /// Gradient batch size `|I|` for stochastic runs.
    pub batch_grad: usize,
    /// Hessian batch size `|J|` for stochastic runs.
    pub batch_hess: usize,
    /// Effective-pass budget for stochastic runs.
    pub epochs: f64,
    pub seed: u64,
}

impl SoniaConfig {
    /// Benchmark defaults for a `d`-dimensional problem with `n` samples.
    pub fn for_problem(d: usize, n: usize) -> Self {
        Self {
            memory: d.min(MAX_DEFAULT_MEMORY),
            eps: DEFAULT_EPS,
            rho_rule: RhoRule::PaperMax,
            step: StepRule::armijo(),
            max_iters: 1000,
            gtol: DEFAULT_GTOL,
            max_passes: None,
            batch_grad: n.min(256),
            batch_hess: n.min(256),
            epochs: 20.0,
            seed: 0,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.memory > d {
            return Err(Error::InvalidConfig(format!("memory {} exceeds dimension {d}", self.memory)));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidConfig(format!("eps must be positive, got {}", self.eps)));
        }
        self.step.validate()
    }
}

/// Sampled directions and their Hessian images.
#[derive(Debug, Clone)]
pub struct CurvatureBlock {
    s: DenseMatrix,
    y: DenseMatrix,
    sty: DenseMatrix,
}

impl CurvatureBlock {
    /// Computes and caches `SᵀY`.
    pub fn new(s: DenseMatrix, y: DenseMatrix) -> Result<Self> {
        let sty = if s.shape() == y.shape() { s.t_matmul(&y) } else { DenseMatrix::zeros(0, 0) };
        Self::from_parts(s, y, sty)
    }

    /// Uses a precomputed `SᵀY`, e.g. one reduced across shards.
    pub fn from_parts(s: DenseMatrix, y: DenseMatrix, sty: DenseMatrix) -> Result<Self> {
        if s.shape() != y.shape() {
            return Err(mismatch(
                "CurvatureBlock",
                format!("{}x{}", s.rows(), s.cols()),
                format!("{}x{}", y.rows(), y.cols()),
            ));
        }
        if sty.shape() != (s.cols(), s.cols()) {
            return Err(mismatch("CurvatureBlock SᵀY", s.cols(), format!("{}x{}", sty.rows(), sty.cols())));
        }
        if !(s.is_finite() && y.is_finite() && sty.is_finite()) {
            return Err(Error::NonFinite("CurvatureBlock"));
        }
        // Relative to the block's own scale: SᵀY inherits the symmetry of ∇²F.
        let asym = sty.sub(&sty.transpose()).frobenius_norm();
        if asym > SYMMETRY_TOL * sty.frobenius_norm().max(f64::MIN_POSITIVE) {
            return Err(Error::NotSymmetric(asym / sty.frobenius_norm().max(f64::MIN_POSITIVE)));
        }
        Ok(Self { s, y, sty })
    }

    pub fn s(&self) -> &DenseMatrix {
        &self.s
    }

    pub fn y(&self) -> &DenseMatrix {
        &self.y
    }

    pub fn sty(&self) -> &DenseMatrix {
        &self.sty
    }

    pub fn dim(&self) -> usize {
        self.s.rows()
    }

    pub fn memory(&self) -> usize {
        self.s.cols()
    }
}

/// Implicit representation of `𝒜 = Ṽ |Λ|_ε⁻¹ Ṽᵀ + ρ (I − ṼṼᵀ)`.
#[derive(Debug, Clone)]
pub struct TruncatedOperator {
    basis: DenseMatrix,
    eigenvalues: Vec<f64>,
    inv_eig: Vec<f64>,
    rho: f64,
    eps: f64,
}

impl TruncatedOperator {
    /// The `m = 0` operator `ρ·I`.
    pub fn scaled_identity(d: usize, rho: f64, eps: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidConfig(format!("rho must be positive, got {rho}")));
        }
        Ok(Self {
            basis: DenseMatrix::zeros(d, 0),
            eigenvalues: Vec::new(),
            inv_eig: Vec::new(),
            rho,
            eps,
        })
    }

    /// `Ṽ`, `d × m` with orthonormal columns.
    pub fn basis(&self) -> &DenseMatrix {
        &self.basis
    }

    /// Eigenvalues `Λ` of the (untruncated) approximation, descending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Diagonal of `|Λ|_ε⁻¹`.
    pub fn inv_eig(&self) -> &[f64] {
        &self.inv_eig
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn dim(&self) -> usize {
        self.basis.rows()
    }

    pub fn memory(&self) -> usize {
        self.basis.cols()
    }

    /// Smallest eigenvalue of `𝒜`: `min(ρ, min invEig)` when `m < d`.
    pub fn min_eigenvalue(&self) -> f64 {
        let inner = self.inv_eig.iter().copied().fold(f64::INFINITY, f64::min);
        if self.memory() < self.dim() {
            inner.min(self.rho)
        } else {
            inner
        }
    }

    /// `Ṽ diag(Λ) Ṽᵀ x`, the Hessian approximation `B` applied to `x`.
    pub fn apply_hessian_approx(&self, x: &[f64]) -> Vec<f64> {
        let mut coef = self.basis.t_matvec(x);
        coef.iter_mut().zip(&self.eigenvalues).for_each(|(c, l)| *c *= l);
        self.basis.matvec(&coef)
    }

    /// `𝒜 x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let (par, perp) = split(&self.basis, x);
        let coef = self.basis.t_matvec(x);
        let scaled: Vec<f64> = coef.iter().zip(&self.inv_eig).map(|(c, l)| c * l).collect();
        let inner = self.basis.matvec(&scaled);
        debug_assert_eq!(par.len(), inner.len());
        inner.iter().zip(&perp).map(|(a, b)| a + self.rho * b).collect()
    }

    /// Dense `d × d` expansion of `𝒜`; only for small-dimensional checks.
    pub fn to_dense(&self) -> DenseMatrix {
        let d = self.dim();
        let scaled = DenseMatrix::from_fn(d, self.memory(), |i, j| self.basis[(i, j)] * (self.inv_eig[j] - self.rho));
        let mut out = scaled.matmul_t(&self.basis);
        for i in 0..d {
            out[(i, i)] += self.rho;
        }
        out
    }

    /// Dense `d × d` expansion of `B = Ṽ Λ Ṽᵀ`; only for small-dimensional checks.
    pub fn hessian_approx_dense(&self) -> DenseMatrix {
        let scaled = DenseMatrix::from_fn(self.dim(), self.memory(), |i, j| self.basis[(i, j)] * self.eigenvalues[j]);
        scaled.matmul_t(&self.basis)
    }
}

/// `m` i.i.d. standard Gaussian directions in `ℝ^d`.
pub fn sample_directions(d: usize, m: usize, rng: &mut impl Rng) -> Result<DenseMatrix> {
    if m > d {
        return Err(Error::InvalidConfig(format!("cannot sample {m} directions in dimension {d}")));
    }
    Ok(DenseMatrix::from_fn(d, m, |_, _| rng.sample(StandardNormal)))
}

/// Builds the truncated inverse operator from a curvature block.
///
/// A rank-deficient `SᵀY` is handled through the pseudo-inverse and a
/// rank-deficient `Y` through basis completion in the QR step; truncation
/// keeps `𝒜` positive definite either way. An empty block (`m = 0`) yields
/// `𝒜 = I`.
pub fn build_operator(block: &CurvatureBlock, eps: f64, rho_rule: RhoRule) -> Result<TruncatedOperator> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidConfig(format!("eps must be positive, got {eps}")));
    }
    let d = block.dim();
    if block.memory() == 0 {
        return TruncatedOperator::scaled_identity(d, 1.0, eps);
    }
    let qr = thin_qr(block.y(), QR_RANK_TOL)?;
    let sty_pinv = pinv_sym(&block.sty().symmetrized(), PINV_DROP_TOL)?;
    let core = qr.r.matmul(&sty_pinv).matmul_t(&qr.r).symmetrized();
    let eig = sym_eig(&core)?;
    let basis = qr.q.matmul(&eig.eigenvectors);
    let inv_eig: Vec<f64> = eig.eigenvalues.iter().map(|l| 1.0 / l.abs().max(eps)).collect();
    let rho = match rho_rule {
        RhoRule::TheoryMin => inv_eig.iter().copied().fold(f64::INFINITY, f64::min),
        RhoRule::PaperMax => inv_eig.iter().copied().fold(0.0, f64::max),
    };
    Ok(TruncatedOperator {
        basis,
        eigenvalues: eig.eigenvalues,
        inv_eig,
        rho,
        eps,
    })
}

fn split(basis: &DenseMatrix, g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let coef = basis.t_matvec(g);
    let par = basis.matvec(&coef);
    let perp = g.iter().zip(&par).map(|(a, b)| a - b).collect();
    (par, perp)
}

/// `(ṼṼᵀ∇F, (I − ṼṼᵀ)∇F)`; the parts sum back to `∇F`.
pub fn decompose_gradient(op: &TruncatedOperator, grad: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_vector(op, grad)?;
    Ok(split(&op.basis, grad))
}

/// `p = −Ṽ |Λ|_ε⁻¹ Ṽᵀ∇F − ρ (I − ṼṼᵀ)∇F`.
pub fn search_direction(op: &TruncatedOperator, grad: &[f64]) -> Result<Vec<f64>> {
    check_vector(op, grad)?;
    let coef = op.basis.t_matvec(grad);
    let par = op.basis.matvec(&coef);
    let scaled: Vec<f64> = coef.iter().zip(&op.inv_eig).map(|(c, l)| c * l).collect();
    let second_order = op.basis.matvec(&scaled);
    Ok(second_order
        .iter()
        .zip(grad.iter().zip(&par))
        .map(|(so, (g, gp))| -so - op.rho * (g - gp))
        .collect())
}

fn check_vector(op: &TruncatedOperator, v: &[f64]) -> Result<()> {
    if v.len() != op.dim() {
        return Err(mismatch("gradient length", op.dim(), v.len()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    Ok(())
}

/// Relative check of `∇Fᵀp ≤ −μ‖∇F‖²` with `μ = min(ρ, min invEig)`.
pub fn satisfies_descent_bound(op: &TruncatedOperator, grad: &[f64], p: &[f64]) -> bool {
    let gg = dot(grad, grad);
    let bound = -op.min_eigenvalue() * gg;
    dot(grad, p) <= bound + 1e-12 * bound.abs()
}

struct SoniaDirection {
    memory: usize,
    eps: f64,
    rho_rule: RhoRule,
    last: Option<TruncatedOperator>,
}

impl<O: Objective + ?Sized> Direction<O> for SoniaDirection {
    fn compute(
        &mut self,
        objective: &O,
        request: &DirectionRequest<'_>,
        rng: &mut ChaCha8Rng,
        counters: &mut EvalCounters,
    ) -> Result<Vec<f64>> {
        let d = objective.dim();
        let n = objective.num_samples();
        let s = sample_directions(d, self.memory, rng)?;
        let block = if self.memory == 0 {
            CurvatureBlock::new(s, DenseMatrix::zeros(d, 0))?
        } else {
            let y = objective.hess_mat(request.w, &s, request.hess_sample)?;
            let batch = request.hess_sample.map_or(n, <[usize]>::len);
            counters.charge_hess(self.memory, batch, n);
            CurvatureBlock::new(s, y)?
        };
        let op = build_operator(&block, self.eps, self.rho_rule)?;
        let p = search_direction(&op, request.grad)?;
        self.last = Some(op);
        Ok(p)
    }

    fn operator(&self) -> Option<&TruncatedOperator> {
        self.last.as_ref()
    }
}

impl SoniaDirection {
    fn new(cfg: &SoniaConfig) -> Self {
        Self {
            memory: cfg.memory,
            eps: cfg.eps,
            rho_rule: cfg.rho_rule,
            last: None,
        }
    }
}

/// Deterministic SONIA with full gradients and Hessian products.
pub fn run_deterministic<O: Objective + ?Sized>(objective: &O, cfg: &SoniaConfig, w0: &[f64]) -> Result<RunResult> {
    run_deterministic_observed(objective, cfg, w0, None)
}

/// [`run_deterministic`] with a per-iteration observer.
pub fn run_deterministic_observed<O: Objective + ?Sized>(
    objective: &O,
    cfg: &SoniaConfig,
    w0: &[f64],
    observer: Option<Observer<'_>>,
) -> Result<RunResult> {
    cfg.validate(objective.dim())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let limits = Limits {
        max_iters: cfg.max_iters,
        gtol: cfg.gtol,
        max_passes: cfg.max_passes,
        stall_window: None,
    };
    driver::run_full_batch(objective, &mut SoniaDirection::new(cfg), &cfg.step, w0, limits, &mut rng, observer)
}

/// Stochastic SONIA: independent uniform batches `I` (gradient) and `J`
/// (Hessian product) each iteration, fixed step length, run for
/// `cfg.epochs` effective passes.
pub fn run_stochastic<O: Objective + ?Sized>(objective: &O, cfg: &SoniaConfig, w0: &[f64]) -> Result<RunResult> {
    run_stochastic_observed(objective, cfg, w0, None)
}

pub fn run_stochastic_observed<O: Objective + ?Sized>(
    objective: &O,
    cfg: &SoniaConfig,
    w0: &[f64],
    observer: Option<Observer<'_>>,
) -> Result<RunResult> {
    cfg.validate(objective.dim())?;
    let alpha = match cfg.step {
        StepRule::Fixed(f) => f.alpha(),
        StepRule::Armijo(_) => {
            return Err(Error::InvalidConfig("stochastic runs need a fixed step length".into()));
        }
    };
    let plan = StochasticPlan {
        alpha,
        batch_grad: cfg.batch_grad,
        batch_hess: Some(cfg.batch_hess),
        epochs: cfg.epochs,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    driver::run_minibatch(objective, &mut SoniaDirection::new(cfg), plan, w0, &mut rng, observer)
}
