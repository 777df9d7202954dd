//! SONIA: a hybrid optimizer that takes a truncated second-order step in a
//! randomly sampled `m`-dimensional subspace and a scaled steepest-descent
//! step in its orthogonal complement.
//!
//! The crate also ships the pieces needed to exercise it: finite-sum
//! problems (ℓ2-logistic regression, nonlinear least squares), baselines
//! (gradient descent, L-BFGS, SGD), LIBSVM ingestion, and a benchmark
//! harness that writes per-iteration traces.
//!
//! ```
//! use sonia::data::synth_logistic;
//! use sonia::optimizer::{run_deterministic, SoniaConfig};
//! use sonia::problems::Problem;
//!
//! let data = synth_logistic(200, 10, 10.0, 0).unwrap();
//! let problem = Problem::logistic(&data, 1e-3).unwrap();
//! let cfg = SoniaConfig::for_problem(10, 200);
//! let run = run_deterministic(&problem, &cfg, &[0.0; 10]).unwrap();
//! assert!(run.trace.last().unwrap().f < run.trace[0].f);
//! ```

pub mod baselines;
pub mod data;
mod driver;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod optimizer;
pub mod problems;
pub mod stepsize;
pub mod trace;

pub use driver::{IterationView, Observer};
pub use error::{Error, Result};
