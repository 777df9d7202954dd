//! Per-iteration trace records, effective-pass accounting, and run outcomes.

use std::io::{BufRead, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::stepsize::LineSearchError;

/// CSV header for trace files.
pub const CSV_HEADER: &str = "iter,passes,f,gnorm,alpha,test_acc";

/// One row of an optimizer trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRecord {
    pub iter: usize,
    /// Effective passes over the training data spent so far.
    pub passes: f64,
    pub f: f64,
    pub gnorm: f64,
    /// Step length taken to reach this iterate (0 for the starting point).
    pub alpha: f64,
    /// Held-out accuracy in `[0, 1]`, NaN when the objective has none.
    pub test_acc: f64,
}

/// Objective, gradient and Hessian-column evaluations in units of full
/// passes over the training samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct EvalCounters {
    pub value: f64,
    pub gradient: f64,
    pub hess_cols: f64,
}

impl EvalCounters {
    /// `count` objective evaluations over `batch` of `n` samples.
    pub fn charge_value(&mut self, count: usize, batch: usize, n: usize) {
        self.value += count as f64 * batch as f64 / n as f64;
    }

    pub fn charge_gradient(&mut self, batch: usize, n: usize) {
        self.gradient += batch as f64 / n as f64;
    }

    /// A Hessian product with `cols` columns costs `cols` Hessian-vector evaluations.
    pub fn charge_hess(&mut self, cols: usize, batch: usize, n: usize) {
        self.hess_cols += cols as f64 * batch as f64 / n as f64;
    }

    pub fn passes(&self) -> f64 {
        self.value + self.gradient + self.hess_cols
    }
}

/// Iterate and bookkeeping of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub w: Vec<f64>,
    /// Gradient at `w` (the sampled one for stochastic runs).
    pub grad: Vec<f64>,
    pub f: f64,
    pub iter: usize,
    pub counters: EvalCounters,
}

/// Why a run stopped.
#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    Converged,
    MaxIterations,
    BudgetExhausted,
    /// F stopped decreasing; usually the rounding floor of the objective.
    Stalled,
    LineSearchFailed(LineSearchError),
    /// A non-finite objective, gradient or iterate appeared at `iter`.
    Diverged { iter: usize },
}

impl Termination {
    pub fn is_failure(&self) -> bool {
        matches!(self, Termination::LineSearchFailed(_) | Termination::Diverged { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::MaxIterations => "max_iterations",
            Termination::BudgetExhausted => "budget_exhausted",
            Termination::Stalled => "stalled",
            Termination::LineSearchFailed(_) => "line_search_failed",
            Termination::Diverged { .. } => "diverged",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub state: OptState,
    pub trace: Vec<TraceRecord>,
    pub termination: Termination,
}

impl RunResult {
    pub fn final_value(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |r| r.f)
    }
}

/// 17 significant digits, enough for an exact `f64` round trip.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.16e}")
    }
}

pub fn write_csv<W: Write>(mut out: W, records: &[TraceRecord]) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.iter,
            format_float(r.passes),
            format_float(r.f),
            format_float(r.gnorm),
            format_float(r.alpha),
            format_float(r.test_acc)
        )?;
    }
    Ok(())
}

pub fn read_csv<R: BufRead>(input: R, path: &str) -> Result<Vec<TraceRecord>> {
    let err = |message: String| Error::Trace {
        path: path.to_string(),
        message,
    };
    let mut lines = input.lines();
    let header = lines.next().transpose()?;
    if header.as_deref().map(str::trim) != Some(CSV_HEADER) {
        return Err(err("missing or unexpected header".into()));
    }
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(err(format!("line {}: expected 6 fields, found {}", lineno + 2, fields.len())));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|_| err(format!("line {}: bad number {:?}", lineno + 2, fields[i])))
        };
        out.push(TraceRecord {
            iter: fields[0]
                .parse()
                .map_err(|_| err(format!("line {}: bad iteration {:?}", lineno + 2, fields[0])))?,
            passes: num(1)?,
            f: num(2)?,
            gnorm: num(3)?,
            alpha: num(4)?,
            test_acc: num(5)?,
        });
    }
    Ok(out)
}
