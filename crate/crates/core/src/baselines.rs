//! Comparators sharing SONIA's drivers and trace format: gradient descent,
//! L-BFGS and mini-batch SGD.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::driver::{self, Direction, DirectionRequest, Limits, Observer, StochasticPlan};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm2};
use crate::problems::Objective;
use crate::stepsize::StepRule;
use crate::trace::{EvalCounters, RunResult};

/// Curvature guard: pairs need `sᵀy > GUARD·‖s‖·‖y‖`.
pub const LBFGS_CURVATURE_GUARD: f64 = 1e-8;

/// Stopping rule shared by the deterministic baselines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunLimits {
    pub max_iters: usize,
    pub gtol: f64,
    pub max_passes: Option<f64>,
    /// Stop after this many consecutive iterations without a decrease in F.
    pub stall_window: Option<usize>,
}

impl RunLimits {
    pub fn iterations(max_iters: usize) -> Self {
        Self {
            max_iters,
            gtol: 1e-8,
            max_passes: None,
            stall_window: None,
        }
    }
}

impl From<RunLimits> for Limits {
    fn from(l: RunLimits) -> Self {
        Limits {
            max_iters: l.max_iters,
            gtol: l.gtol,
            max_passes: l.max_passes,
            stall_window: l.stall_window,
        }
    }
}

struct SteepestDescent;

impl<O: Objective + ?Sized> Direction<O> for SteepestDescent {
    fn compute(&mut self, _: &O, request: &DirectionRequest<'_>, _: &mut ChaCha8Rng, _: &mut EvalCounters) -> Result<Vec<f64>> {
        Ok(request.grad.iter().map(|g| -g).collect())
    }
}

/// Gradient descent, `p = −∇F`.
pub fn gd_run<O: Objective + ?Sized>(objective: &O, step: &StepRule, w0: &[f64], limits: RunLimits) -> Result<RunResult> {
    gd_run_observed(objective, step, w0, limits, None)
}

pub fn gd_run_observed<O: Objective + ?Sized>(
    objective: &O,
    step: &StepRule,
    w0: &[f64],
    limits: RunLimits,
    observer: Option<Observer<'_>>,
) -> Result<RunResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    driver::run_full_batch(objective, &mut SteepestDescent, step, w0, limits.into(), &mut rng, observer)
}

/// Ring buffer of accepted curvature pairs.
#[derive(Debug, Clone)]
pub struct LbfgsMemory {
    capacity: usize,
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    rejected: usize,
}

impl LbfgsMemory {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("L-BFGS memory must be at least 1".into()));
        }
        Ok(Self {
            capacity,
            pairs: VecDeque::with_capacity(capacity),
            rejected: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Pairs skipped by the curvature guard so far.
    pub fn rejected(&self) -> usize {
        self.rejected
    }

    /// Stores `(s, y)` if it passes the guard; returns whether it was kept.
    pub fn push(&mut self, s: &[f64], y: &[f64]) -> bool {
        let sy = dot(s, y);
        if sy.is_nan() || sy <= LBFGS_CURVATURE_GUARD * norm2(s) * norm2(y) {
            self.rejected += 1;
            return false;
        }
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s.to_vec(), y.to_vec(), 1.0 / sy));
        true
    }

    /// Two-loop recursion: `−H∇F` with `H₀ = γI`, `γ = sᵀy / yᵀy` of the
    /// newest pair. With no pairs this is `−∇F`.
    pub fn direction(&self, grad: &[f64]) -> Vec<f64> {
        let mut q = grad.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, r) in self.pairs.iter().rev() {
            let a = r * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = self.pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|qi| *qi *= gamma);
        }
        for ((s, y, r), a) in self.pairs.iter().zip(alphas.iter().rev()) {
            let b = r * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        q.iter_mut().for_each(|qi| *qi = -*qi);
        q
    }
}

struct Lbfgs {
    memory: LbfgsMemory,
}

impl<O: Objective + ?Sized> Direction<O> for Lbfgs {
    fn compute(&mut self, _: &O, request: &DirectionRequest<'_>, _: &mut ChaCha8Rng, _: &mut EvalCounters) -> Result<Vec<f64>> {
        let p = self.memory.direction(request.grad);
        // Roundoff can spoil descent on nearly flat pairs; restart then.
        if dot(&p, request.grad) < 0.0 {
            Ok(p)
        } else {
            self.memory.pairs.clear();
            Ok(request.grad.iter().map(|g| -g).collect())
        }
    }

    fn observe_step(&mut self, s: &[f64], y: &[f64]) {
        self.memory.push(s, y);
    }
}

/// L-BFGS with `memory` pairs.
pub fn lbfgs_run<O: Objective + ?Sized>(
    objective: &O,
    memory: usize,
    step: &StepRule,
    w0: &[f64],
    limits: RunLimits,
) -> Result<RunResult> {
    let mut method = Lbfgs {
        memory: LbfgsMemory::new(memory)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    driver::run_full_batch(objective, &mut method, step, w0, limits.into(), &mut rng, None)
}

/// Mini-batch SGD, `w ← w − α∇F_I(w)` with a fresh uniform batch each step.
pub fn sgd_run<O: Objective + ?Sized>(
    objective: &O,
    alpha: f64,
    batch: usize,
    w0: &[f64],
    epochs: f64,
    seed: u64,
) -> Result<RunResult> {
    let plan = StochasticPlan {
        alpha,
        batch_grad: batch,
        batch_hess: None,
        epochs,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    driver::run_minibatch(objective, &mut SteepestDescent, plan, w0, &mut rng, None)
}
