//! Iteration loops shared by SONIA and the baselines.
//!
//! A method only supplies a search direction; the loops own step-length
//! selection, effective-pass accounting, termination and trace emission,
//! so every method produces schema-identical traces.

use rand::seq::index;
use rand_chacha::ChaCha8Rng;

use crate::error::{mismatch, Error, Result};
use crate::linalg::norm2;
use crate::optimizer::TruncatedOperator;
use crate::problems::Objective;
use crate::stepsize::{armijo, StepRule};
use crate::trace::{EvalCounters, OptState, RunResult, Termination, TraceRecord};

/// Everything a method may look at when choosing a direction.
pub(crate) struct DirectionRequest<'a> {
    pub w: &'a [f64],
    pub grad: &'a [f64],
    /// Samples for curvature estimates; `None` means the full data set.
    pub hess_sample: Option<&'a [usize]>,
}

pub(crate) trait Direction<O: Objective + ?Sized> {
    fn compute(
        &mut self,
        objective: &O,
        request: &DirectionRequest<'_>,
        rng: &mut ChaCha8Rng,
        counters: &mut EvalCounters,
    ) -> Result<Vec<f64>>;

    /// Called after an accepted step with `s = w⁺ − w` and `y = ∇F⁺ − ∇F`.
    fn observe_step(&mut self, _s: &[f64], _y: &[f64]) {}

    fn operator(&self) -> Option<&TruncatedOperator> {
        None
    }
}

/// Snapshot handed to observers after every accepted iteration.
#[derive(Debug)]
pub struct IterationView<'a> {
    /// Index of the iterate the step started from.
    pub iter: usize,
    pub w: &'a [f64],
    pub grad: &'a [f64],
    pub direction: &'a [f64],
    pub alpha: f64,
    pub f_before: f64,
    pub f_after: f64,
    /// The truncated inverse operator, for SONIA steps.
    pub operator: Option<&'a TruncatedOperator>,
}

pub type Observer<'o> = &'o mut dyn FnMut(&IterationView<'_>);

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Limits {
    pub max_iters: usize,
    pub gtol: f64,
    pub max_passes: Option<f64>,
    /// Stop after this many consecutive iterations without a decrease in F.
    pub stall_window: Option<usize>,
}

pub(crate) fn check_start<O: Objective + ?Sized>(objective: &O, w0: &[f64]) -> Result<()> {
    if w0.len() != objective.dim() {
        return Err(mismatch("starting point", objective.dim(), w0.len()));
    }
    if w0.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("starting point"));
    }
    Ok(())
}

fn accuracy<O: Objective + ?Sized>(objective: &O, w: &[f64]) -> f64 {
    objective.accuracy(w).unwrap_or(f64::NAN)
}

/// Full-batch loop: `w⁺ = w + α·p` with `α` from `step`.
pub(crate) fn run_full_batch<O, D>(
    objective: &O,
    method: &mut D,
    step: &StepRule,
    w0: &[f64],
    limits: Limits,
    rng: &mut ChaCha8Rng,
    mut observer: Option<Observer<'_>>,
) -> Result<RunResult>
where
    O: Objective + ?Sized,
    D: Direction<O>,
{
    check_start(objective, w0)?;
    step.validate()?;
    let n = objective.num_samples();
    let mut counters = EvalCounters::default();
    let mut w = w0.to_vec();
    let mut f = objective.value(&w, None)?;
    counters.charge_value(1, n, n);
    let mut grad = objective.gradient(&w, None)?;
    counters.charge_gradient(n, n);
    let mut gnorm = norm2(&grad);
    let mut trace = vec![TraceRecord {
        iter: 0,
        passes: counters.passes(),
        f,
        gnorm,
        alpha: 0.0,
        test_acc: accuracy(objective, &w),
    }];

    let mut iter = 0;
    let mut stalled = 0usize;
    let termination = loop {
        if !(f.is_finite() && gnorm.is_finite()) {
            break Termination::Diverged { iter };
        }
        if gnorm <= limits.gtol {
            break Termination::Converged;
        }
        if limits.stall_window.is_some_and(|k| stalled >= k) {
            break Termination::Stalled;
        }
        if iter >= limits.max_iters {
            break Termination::MaxIterations;
        }
        if limits.max_passes.is_some_and(|budget| counters.passes() >= budget) {
            break Termination::BudgetExhausted;
        }

        let request = DirectionRequest {
            w: &w,
            grad: &grad,
            hess_sample: None,
        };
        let p = method.compute(objective, &request, rng, &mut counters)?;
        if p.iter().any(|x| !x.is_finite()) {
            break Termination::Diverged { iter };
        }

        let (alpha, f_next) = match step {
            StepRule::Armijo(params) => {
                let mut evals = 0usize;
                let outcome = armijo(
                    |x| {
                        evals += 1;
                        objective.value(x, None).unwrap_or(f64::NAN)
                    },
                    &w,
                    &p,
                    &grad,
                    f,
                    params,
                );
                counters.charge_value(evals, n, n);
                match outcome {
                    Ok(accepted) => (accepted.alpha, accepted.value),
                    Err(e) => break Termination::LineSearchFailed(e),
                }
            }
            StepRule::Fixed(fixed) => {
                let alpha = fixed.alpha();
                let trial: Vec<f64> = w.iter().zip(&p).map(|(wi, pi)| wi + alpha * pi).collect();
                if trial.iter().any(|x| !x.is_finite()) {
                    break Termination::Diverged { iter: iter + 1 };
                }
                // Recorded for the trace only; a fixed step needs no evaluation.
                let value = objective.value(&trial, None)?;
                (alpha, value)
            }
        };

        let w_next: Vec<f64> = w.iter().zip(&p).map(|(wi, pi)| wi + alpha * pi).collect();
        if !f_next.is_finite() || w_next.iter().any(|x| !x.is_finite()) {
            break Termination::Diverged { iter: iter + 1 };
        }
        let grad_next = objective.gradient(&w_next, None)?;
        counters.charge_gradient(n, n);

        if let Some(obs) = observer.as_mut() {
            obs(&IterationView {
                iter,
                w: &w,
                grad: &grad,
                direction: &p,
                alpha,
                f_before: f,
                f_after: f_next,
                operator: method.operator(),
            });
        }

        let s: Vec<f64> = w_next.iter().zip(&w).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = grad_next.iter().zip(&grad).map(|(a, b)| a - b).collect();
        method.observe_step(&s, &y);

        stalled = if f_next < f { 0 } else { stalled + 1 };
        w = w_next;
        grad = grad_next;
        f = f_next;
        gnorm = norm2(&grad);
        iter += 1;
        trace.push(TraceRecord {
            iter,
            passes: counters.passes(),
            f,
            gnorm,
            alpha,
            test_acc: accuracy(objective, &w),
        });
    };

    Ok(RunResult {
        state: OptState {
            w,
            grad,
            f,
            iter,
            counters,
        },
        trace,
        termination,
    })
}

/// Budget and batch layout of a stochastic run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct StochasticPlan {
    pub alpha: f64,
    pub batch_grad: usize,
    /// `None` for methods that use no curvature.
    pub batch_hess: Option<usize>,
    pub epochs: f64,
}

/// Uniform sample without replacement; `None` when the batch is everything,
/// in which case no randomness is consumed.
pub(crate) fn draw_batch(rng: &mut ChaCha8Rng, n: usize, batch: usize) -> Option<Vec<usize>> {
    if batch >= n {
        None
    } else {
        Some(index::sample(rng, n, batch).into_vec())
    }
}

/// Fixed-step mini-batch loop. The full objective is evaluated only at
/// epoch boundaries for the trace and is not charged to the counters.
pub(crate) fn run_minibatch<O, D>(
    objective: &O,
    method: &mut D,
    plan: StochasticPlan,
    w0: &[f64],
    rng: &mut ChaCha8Rng,
    mut observer: Option<Observer<'_>>,
) -> Result<RunResult>
where
    O: Objective + ?Sized,
    D: Direction<O>,
{
    check_start(objective, w0)?;
    let n = objective.num_samples();
    let valid_batch = |b: usize| b >= 1 && b <= n;
    if !valid_batch(plan.batch_grad) || plan.batch_hess.is_some_and(|b| !valid_batch(b)) {
        return Err(Error::InvalidConfig(format!(
            "batch sizes must lie in [1, {n}], got {} / {:?}",
            plan.batch_grad, plan.batch_hess
        )));
    }
    if !(plan.alpha > 0.0 && plan.alpha.is_finite()) {
        return Err(Error::InvalidConfig(format!("step length must be positive, got {}", plan.alpha)));
    }
    if !(plan.epochs > 0.0 && plan.epochs.is_finite()) {
        return Err(Error::InvalidConfig(format!("epoch budget must be positive, got {}", plan.epochs)));
    }

    let mut counters = EvalCounters::default();
    let mut w = w0.to_vec();
    let snapshot = |w: &[f64], iter: usize, passes: f64, alpha: f64| -> Result<TraceRecord> {
        let f = objective.value(w, None)?;
        let gnorm = norm2(&objective.gradient(w, None)?);
        Ok(TraceRecord {
            iter,
            passes,
            f,
            gnorm,
            alpha,
            test_acc: accuracy(objective, w),
        })
    };
    let first = snapshot(&w, 0, 0.0, 0.0)?;
    let mut f_full = first.f;
    let mut trace = vec![first];
    let mut grad = vec![0.0; w.len()];
    let mut iter = 0;
    let mut next_epoch = 1.0f64;

    let termination = loop {
        if !f_full.is_finite() {
            break Termination::Diverged { iter };
        }
        if counters.passes() >= plan.epochs {
            break Termination::BudgetExhausted;
        }
        let grad_batch = draw_batch(rng, n, plan.batch_grad);
        let hess_batch = plan.batch_hess.and_then(|b| draw_batch(rng, n, b));
        grad = objective.gradient(&w, grad_batch.as_deref())?;
        counters.charge_gradient(plan.batch_grad, n);
        let request = DirectionRequest {
            w: &w,
            grad: &grad,
            hess_sample: hess_batch.as_deref(),
        };
        let p = method.compute(objective, &request, rng, &mut counters)?;
        let w_next: Vec<f64> = w.iter().zip(&p).map(|(wi, pi)| wi + plan.alpha * pi).collect();
        if w_next.iter().any(|x| !x.is_finite()) {
            break Termination::Diverged { iter: iter + 1 };
        }
        if let Some(obs) = observer.as_mut() {
            obs(&IterationView {
                iter,
                w: &w,
                grad: &grad,
                direction: &p,
                alpha: plan.alpha,
                f_before: f64::NAN,
                f_after: f64::NAN,
                operator: method.operator(),
            });
        }
        w = w_next;
        iter += 1;

        let passes = counters.passes();
        if passes >= next_epoch || passes >= plan.epochs {
            let rec = snapshot(&w, iter, passes, plan.alpha)?;
            f_full = rec.f;
            trace.push(rec);
            next_epoch = passes.floor() + 1.0;
        }
    };

    Ok(RunResult {
        state: OptState {
            w,
            grad,
            f: f_full,
            iter,
            counters,
        },
        trace,
        termination,
    })
}
