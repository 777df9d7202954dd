//! Benchmark harness: experiment grids, per-cell trace files, manifests,
//! reference optima and pass-to-tolerance summaries.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{gd_run, lbfgs_run, sgd_run, RunLimits};
use crate::data::{load_libsvm, split, synth_logistic, ParseOptions};
use crate::error::{Error, Result};
use crate::optimizer::{run_deterministic, run_stochastic, RhoRule, SoniaConfig, DEFAULT_EPS, DEFAULT_GTOL, MAX_DEFAULT_MEMORY};
use crate::problems::{Dataset, Objective, Problem, ProblemKind};
use crate::stepsize::StepRule;
use crate::trace::{read_csv, write_csv, RunResult, Termination, TraceRecord};

/// Version string written to manifests.
pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));
/// Gaps below this are reported as this.
pub const GAP_FLOOR: f64 = 1e-16;
/// Tolerances reported by [`emit_summary`].
pub const SUMMARY_TOLERANCES: [f64; 3] = [1e-2, 1e-4, 1e-6];
/// Grid keys accepted by [`ExperimentConfig::grid`].
pub const GRID_KEYS: [&str; 9] = [
    "lambda",
    "memory",
    "eps",
    "rho",
    "step",
    "batch-grad",
    "batch-hess",
    "epochs",
    "iters",
];

const REFERENCE_MEMORY: usize = 64;
const REFERENCE_GTOL: f64 = 1e-12;
const REFERENCE_MAX_ITERS: usize = 10_000;
/// Iterations without progress before the reference run gives up.
const REFERENCE_STALL_WINDOW: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerId {
    Sonia,
    Gd,
    Lbfgs,
    Sgd,
}

impl OptimizerId {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerId::Sonia => "sonia",
            OptimizerId::Gd => "gd",
            OptimizerId::Lbfgs => "lbfgs",
            OptimizerId::Sgd => "sgd",
        }
    }
}

impl fmt::Display for OptimizerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OptimizerId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sonia" => Ok(OptimizerId::Sonia),
            "gd" => Ok(OptimizerId::Gd),
            "lbfgs" => Ok(OptimizerId::Lbfgs),
            "sgd" => Ok(OptimizerId::Sgd),
            other => Err(Error::InvalidConfig(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DataSource {
    File { path: PathBuf, dim: Option<usize> },
    Synth { n: usize, d: usize, kappa: f64 },
}

impl DataSource {
    /// Parses the `n,d,kappa` form.
    pub fn parse_synth(spec: &str) -> Result<Self> {
        let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
        let bad = || Error::InvalidConfig(format!("expected n,d,kappa, got {spec:?}"));
        if parts.len() != 3 {
            return Err(bad());
        }
        Ok(DataSource::Synth {
            n: parts[0].parse().map_err(|_| bad())?,
            d: parts[1].parse().map_err(|_| bad())?,
            kappa: parts[2].parse().map_err(|_| bad())?,
        })
    }
}

/// One `--grid KEY=V1,V2,...` axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub key: String,
    pub values: Vec<String>,
}

impl FromStr for GridAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (key, values) = s
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("grid axis must be KEY=V1,V2,..., got {s:?}")))?;
        let key = key.trim().replace('_', "-");
        if !GRID_KEYS.contains(&key.as_str()) {
            return Err(Error::InvalidConfig(format!("unknown grid key {key:?}")));
        }
        let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            return Err(Error::InvalidConfig(format!("grid axis {key} has no values")));
        }
        Ok(GridAxis { key, values })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: ProblemKind,
    pub data: DataSource,
    /// Seed for synthetic data and the train/test split.
    pub data_seed: u64,
    /// Held-out fraction; `None` evaluates accuracy on the training set.
    pub test_fraction: Option<f64>,
    pub lambda: f64,
    pub optimizer: OptimizerId,
    /// `None` means `min(d, 64)`.
    pub memory: Option<usize>,
    pub eps: f64,
    pub rho: RhoRule,
    pub step: StepRule,
    /// Setting either batch size makes a SONIA run stochastic.
    pub batch_grad: Option<usize>,
    pub batch_hess: Option<usize>,
    pub epochs: f64,
    pub iters: usize,
    pub gtol: f64,
    pub seeds: Vec<u64>,
    pub grid: Vec<GridAxis>,
    pub out: PathBuf,
    pub workers: usize,
}

impl ExperimentConfig {
    pub fn new(problem: ProblemKind, data: DataSource, optimizer: OptimizerId, out: impl Into<PathBuf>) -> Self {
        Self {
            problem,
            data,
            data_seed: 0,
            test_fraction: Some(0.2),
            lambda: match problem {
                ProblemKind::Logistic => 1e-3,
                ProblemKind::Nlls => 0.0,
            },
            optimizer,
            memory: None,
            eps: DEFAULT_EPS,
            rho: RhoRule::PaperMax,
            step: StepRule::armijo(),
            batch_grad: None,
            batch_hess: None,
            epochs: 20.0,
            iters: 100,
            gtol: DEFAULT_GTOL,
            seeds: vec![0],
            grid: Vec::new(),
            out: out.into(),
            workers: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one seed is required".into()));
        }
        if self.workers == 0 {
            return Err(Error::InvalidConfig("workers must be at least 1".into()));
        }
        if let Some(f) = self.test_fraction {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::InvalidConfig(format!("test fraction must lie in (0, 1), got {f}")));
            }
        }
        for axis in &self.grid {
            if axis.values.is_empty() {
                return Err(Error::InvalidConfig(format!("grid axis {} is empty", axis.key)));
            }
        }
        // Every cell must also resolve to valid settings.
        self.cells().map(|_| ())
    }

    /// Expands the grid: every combination of axis values (last axis
    /// fastest), each paired with every seed.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        let mut combos: Vec<Vec<(String, String)>> = vec![Vec::new()];
        for axis in &self.grid {
            combos = combos
                .into_iter()
                .flat_map(|prefix| {
                    axis.values.iter().map(move |v| {
                        let mut next = prefix.clone();
                        next.push((axis.key.clone(), v.clone()));
                        next
                    })
                })
                .collect();
        }
        let mut cells = Vec::new();
        for (g, combo) in combos.iter().enumerate() {
            let mut settings = CellSettings::from_config(self);
            for (k, v) in combo {
                settings.apply(k, v)?;
            }
            settings.validate(self)?;
            for &base_seed in &self.seeds {
                let mut name = self.optimizer.to_string();
                for (k, v) in combo {
                    name.push_str(&format!("_{k}-{}", sanitize(v)));
                }
                name.push_str(&format!("_seed-{base_seed}.csv"));
                cells.push(Cell {
                    file: name,
                    grid_index: g,
                    base_seed,
                    seed: base_seed.wrapping_add(g as u64),
                    params: combo.iter().cloned().collect(),
                    settings: settings.clone(),
                });
            }
        }
        Ok(cells)
    }
}

fn sanitize(v: &str) -> String {
    v.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '+') { c } else { '_' })
        .collect()
}

/// Fully resolved hyper-parameters of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSettings {
    pub lambda: f64,
    pub memory: Option<usize>,
    pub eps: f64,
    pub rho: RhoRule,
    pub step: StepRule,
    pub batch_grad: Option<usize>,
    pub batch_hess: Option<usize>,
    pub epochs: f64,
    pub iters: usize,
}

impl CellSettings {
    fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            lambda: cfg.lambda,
            memory: cfg.memory,
            eps: cfg.eps,
            rho: cfg.rho,
            step: cfg.step,
            batch_grad: cfg.batch_grad,
            batch_hess: cfg.batch_hess,
            epochs: cfg.epochs,
            iters: cfg.iters,
        }
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad value {value:?} for grid key {key}")))
        }
        match key {
            "lambda" => self.lambda = num(key, value)?,
            "memory" => self.memory = Some(num(key, value)?),
            "eps" => self.eps = num(key, value)?,
            "rho" => self.rho = value.parse()?,
            "step" => self.step = value.parse()?,
            "batch-grad" => self.batch_grad = Some(num(key, value)?),
            "batch-hess" => self.batch_hess = Some(num(key, value)?),
            "epochs" => self.epochs = num(key, value)?,
            "iters" => self.iters = num(key, value)?,
            other => return Err(Error::InvalidConfig(format!("unknown grid key {other:?}"))),
        }
        Ok(())
    }

    fn validate(&self, cfg: &ExperimentConfig) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        if cfg.problem == ProblemKind::Nlls && self.lambda != 0.0 {
            return Err(Error::InvalidConfig("nlls takes no regularizer".into()));
        }
        self.step.validate()?;
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidConfig(format!("eps must be positive, got {}", self.eps)));
        }
        if self.stochastic(cfg.optimizer) {
            if !(self.epochs > 0.0 && self.epochs.is_finite()) {
                return Err(Error::InvalidConfig("epoch budget must be positive".into()));
            }
            if !matches!(self.step, StepRule::Fixed(_)) {
                return Err(Error::InvalidConfig("stochastic runs need --step fixed:ALPHA".into()));
            }
        } else if self.iters == 0 {
            return Err(Error::InvalidConfig("iteration budget must be positive".into()));
        }
        if cfg.optimizer == OptimizerId::Lbfgs && self.memory == Some(0) {
            return Err(Error::InvalidConfig("L-BFGS memory must be at least 1".into()));
        }
        Ok(())
    }

    fn stochastic(&self, opt: OptimizerId) -> bool {
        match opt {
            OptimizerId::Sgd => true,
            OptimizerId::Sonia => self.batch_grad.is_some() || self.batch_hess.is_some(),
            OptimizerId::Gd | OptimizerId::Lbfgs => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub file: String,
    pub grid_index: usize,
    pub base_seed: u64,
    /// Run seed: base seed plus grid index.
    pub seed: u64,
    pub params: BTreeMap<String, String>,
    pub settings: CellSettings,
}

/// A high-accuracy solution used as `F*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceOptimum {
    pub f_star: f64,
    /// Set when the reference run stopped before reaching its gradient tolerance.
    pub approximate: bool,
    pub iterations: usize,
    pub gnorm: f64,
}

/// `F*` from an L-BFGS run (memory 64, Armijo, `‖∇F‖ ≤ 1e-12`, at most
/// 10⁴ iterations) started at zero. Only strongly convex objectives qualify.
pub fn compute_reference_optimum<O: Objective + ?Sized>(objective: &O) -> Result<ReferenceOptimum> {
    if !objective.strongly_convex() {
        return Err(Error::Precondition(
            "reference optimum requires a strongly convex objective (logistic with lambda > 0)".into(),
        ));
    }
    let d = objective.dim();
    let limits = RunLimits {
        max_iters: REFERENCE_MAX_ITERS,
        gtol: REFERENCE_GTOL,
        max_passes: None,
        stall_window: Some(REFERENCE_STALL_WINDOW),
    };
    let res = lbfgs_run(objective, REFERENCE_MEMORY.min(d.max(1)), &StepRule::armijo(), &vec![0.0; d], limits)?;
    let last = res.trace.last().expect("traces start with iteration 0");
    Ok(ReferenceOptimum {
        f_star: last.f,
        approximate: res.termination != Termination::Converged,
        iterations: res.state.iter,
        gnorm: last.gnorm,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    pub lambda: f64,
    #[serde(flatten)]
    pub optimum: ReferenceOptimum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub file: String,
    pub base_seed: u64,
    pub seed: u64,
    pub params: BTreeMap<String, String>,
    /// `converged`, `max_iterations`, `budget_exhausted`, `diverged`,
    /// `line_search_failed` or `error`.
    pub status: String,
    pub message: Option<String>,
    pub iterations: usize,
    pub passes: Option<f64>,
    pub final_f: Option<f64>,
    pub f_star: Option<f64>,
    pub final_gap: Option<f64>,
    pub final_test_acc: Option<f64>,
    pub wall_time_s: f64,
}

impl CellRecord {
    pub fn failed(&self) -> bool {
        matches!(self.status.as_str(), "diverged" | "line_search_failed" | "error")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub optimizer: OptimizerId,
    pub config: ExperimentConfig,
    pub n_train: usize,
    pub n_test: usize,
    pub dim: usize,
    pub references: Vec<ReferenceEntry>,
    pub cells: Vec<CellRecord>,
    /// Index into `cells` of the lowest final objective among successful cells.
    pub best_cell: Option<usize>,
    pub wall_time_s: f64,
}

impl Manifest {
    /// True when every cell finished, tolerating divergence if asked to.
    pub fn all_completed(&self, allow_divergence: bool) -> bool {
        self.cells
            .iter()
            .all(|c| !c.failed() || (allow_divergence && c.status == "diverged"))
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Loads data, optionally splits it, and re-encodes labels for the problem kind.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Option<Dataset>)> {
    let encoding = cfg.problem.encoding();
    let full = match &cfg.data {
        DataSource::File { path, dim } => load_libsvm(path, &ParseOptions { encoding, dim: *dim })?,
        DataSource::Synth { n, d, kappa } => synth_logistic(*n, *d, *kappa, cfg.data_seed)?.with_encoding(encoding),
    };
    match cfg.test_fraction {
        Some(f) => {
            let (train, test) = split(&full, f, cfg.data_seed)?;
            Ok((train, Some(test)))
        }
        None => Ok((full, None)),
    }
}

fn run_cell(cfg: &ExperimentConfig, cell: &Cell, problem: &Problem<'_>) -> Result<RunResult> {
    let s = &cell.settings;
    let d = problem.dim();
    let n = problem.num_samples();
    let w0 = vec![0.0; d];
    let memory = s.memory.unwrap_or(d.min(MAX_DEFAULT_MEMORY));
    match cfg.optimizer {
        OptimizerId::Sonia => {
            let batch_grad = s.batch_grad.or(s.batch_hess).unwrap_or(n);
            let sc = SoniaConfig {
                memory,
                eps: s.eps,
                rho_rule: s.rho,
                step: s.step,
                max_iters: s.iters,
                gtol: cfg.gtol,
                max_passes: None,
                batch_grad,
                batch_hess: s.batch_hess.unwrap_or(batch_grad),
                epochs: s.epochs,
                seed: cell.seed,
            };
            if s.stochastic(cfg.optimizer) {
                run_stochastic(problem, &sc, &w0)
            } else {
                run_deterministic(problem, &sc, &w0)
            }
        }
        OptimizerId::Gd => gd_run(problem, &s.step, &w0, limits(cfg, s)),
        OptimizerId::Lbfgs => lbfgs_run(problem, memory, &s.step, &w0, limits(cfg, s)),
        OptimizerId::Sgd => {
            let StepRule::Fixed(alpha) = s.step else {
                return Err(Error::InvalidConfig("sgd needs a fixed step".into()));
            };
            sgd_run(problem, alpha.alpha(), s.batch_grad.unwrap_or(n.min(256)), &w0, s.epochs, cell.seed)
        }
    }
}

fn limits(cfg: &ExperimentConfig, s: &CellSettings) -> RunLimits {
    RunLimits {
        max_iters: s.iters,
        gtol: cfg.gtol,
        max_passes: None,
        stall_window: None,
    }
}

/// Runs every grid cell on up to `cfg.workers` threads, writing one trace
/// CSV per cell and `{optimizer}.manifest.json` into `cfg.out`.
///
/// Failing cells are recorded in the manifest and do not stop the others.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let started = Instant::now();
    cfg.validate()?;
    let cells = cfg.cells()?;
    let (train, test) = load_data(cfg)?;
    fs::create_dir_all(&cfg.out)?;

    let mut lambdas: Vec<f64> = cells.iter().map(|c| c.settings.lambda).collect();
    lambdas.sort_by(f64::total_cmp);
    lambdas.dedup();
    let mut references = Vec::new();
    for &lambda in &lambdas {
        let problem = Problem::new(cfg.problem, lambda, &train)?;
        if problem.strongly_convex() {
            references.push(ReferenceEntry {
                lambda,
                optimum: compute_reference_optimum(&problem)?,
            });
        }
    }
    let f_star_for = |lambda: f64| references.iter().find(|r| r.lambda == lambda).map(|r| r.optimum.f_star);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let records: Vec<Result<CellRecord>> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                let t0 = Instant::now();
                let f_star = f_star_for(cell.settings.lambda);
                let problem = match &test {
                    Some(t) => Problem::new(cfg.problem, cell.settings.lambda, &train)?.with_holdout(t)?,
                    None => Problem::new(cfg.problem, cell.settings.lambda, &train)?,
                };
                let outcome = run_cell(cfg, cell, &problem);
                let trace: &[TraceRecord] = outcome.as_ref().map_or(&[], |r| r.trace.as_slice());
                let file = fs::File::create(cfg.out.join(&cell.file))?;
                write_csv(BufWriter::new(file), trace)?;
                let last = trace.last();
                let (status, message) = match &outcome {
                    Ok(r) => (
                        r.termination.label().to_string(),
                        match &r.termination {
                            Termination::LineSearchFailed(e) => Some(e.to_string()),
                            Termination::Diverged { iter } => Some(format!("non-finite value at iteration {iter}")),
                            _ => None,
                        },
                    ),
                    Err(e) => ("error".to_string(), Some(e.to_string())),
                };
                let final_f = last.and_then(|r| finite(r.f));
                Ok(CellRecord {
                    file: cell.file.clone(),
                    base_seed: cell.base_seed,
                    seed: cell.seed,
                    params: cell.params.clone(),
                    status,
                    message,
                    iterations: outcome.as_ref().map_or(0, |r| r.state.iter),
                    passes: last.and_then(|r| finite(r.passes)),
                    final_f,
                    f_star,
                    final_gap: final_f.zip(f_star).map(|(f, s)| (f - s).max(GAP_FLOOR)),
                    final_test_acc: last.and_then(|r| finite(r.test_acc)),
                    wall_time_s: t0.elapsed().as_secs_f64(),
                })
            })
            .collect()
    });
    let cells_out = records.into_iter().collect::<Result<Vec<_>>>()?;
    let best_cell = cells_out
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.failed())
        .filter_map(|(i, c)| c.final_f.map(|f| (i, f)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i);

    let manifest = Manifest {
        version: VERSION.to_string(),
        optimizer: cfg.optimizer,
        config: cfg.clone(),
        n_train: train.n(),
        n_test: test.as_ref().map_or(0, Dataset::n),
        dim: train.d(),
        references,
        cells: cells_out,
        best_cell,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    let manifest_path = cfg.out.join(format!("{}.manifest.json", cfg.optimizer));
    serde_json::to_writer_pretty(BufWriter::new(fs::File::create(&manifest_path)?), &manifest)?;
    Ok(ExperimentReport { manifest, manifest_path })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub optimizer: String,
    pub trace: String,
    /// Effective passes at which the gap first fell to each of [`SUMMARY_TOLERANCES`].
    pub passes_to: [Option<f64>; 3],
    pub final_f: f64,
    pub final_test_acc: f64,
    pub f_star: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    /// Files that could not be read, with the reason.
    pub errors: Vec<(String, String)>,
    /// False when `F*` had to be taken as the lowest objective value seen.
    pub reference_from_manifest: bool,
}

fn passes_to_tolerance(trace: &[TraceRecord], f_star: f64, tol: f64) -> Option<f64> {
    trace
        .iter()
        .find(|r| r.f.is_finite() && (r.f - f_star).max(GAP_FLOOR) <= tol)
        .map(|r| r.passes)
}

fn render_passes(p: Option<f64>) -> String {
    p.map_or_else(|| "—".to_string(), |p| p.to_string())
}

/// Summarizes every trace CSV in `dir`: for each optimizer, its trace with
/// the lowest final objective, the passes needed to reach gaps 1e-2, 1e-4
/// and 1e-6, and the final test accuracy. Rows are sorted by optimizer id.
///
/// `F*` comes from the manifests' reference runs; without one, the lowest
/// objective value across all traces stands in.
pub fn emit_summary(dir: impl AsRef<Path>) -> Result<Summary> {
    let dir = dir.as_ref();
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();

    let mut errors = Vec::new();
    let mut f_stars: BTreeMap<String, f64> = BTreeMap::new();
    let mut owners: BTreeMap<String, String> = BTreeMap::new();
    for path in entries.iter().filter(|p| p.to_string_lossy().ends_with(".manifest.json")) {
        let name = file_name(path);
        match fs::File::open(path)
            .map_err(Error::from)
            .and_then(|f| serde_json::from_reader::<_, Manifest>(BufReader::new(f)).map_err(Error::from))
        {
            Ok(m) => {
                for c in m.cells {
                    if let Some(s) = c.f_star {
                        f_stars.insert(c.file.clone(), s);
                    }
                    owners.insert(c.file, m.optimizer.to_string());
                }
            }
            Err(e) => errors.push((name, e.to_string())),
        }
    }

    let mut traces: Vec<(String, String, Vec<TraceRecord>)> = Vec::new();
    for path in entries.iter().filter(|p| p.extension().is_some_and(|e| e == "csv")) {
        let name = file_name(path);
        if name == "summary.csv" {
            continue;
        }
        let parsed = fs::File::open(path)
            .map_err(Error::from)
            .and_then(|f| read_csv(BufReader::new(f), &name));
        match parsed {
            Ok(t) if t.is_empty() => errors.push((name, "trace has no rows".into())),
            Ok(t) => {
                let opt = owners
                    .get(&name)
                    .cloned()
                    .unwrap_or_else(|| name.split('_').next().unwrap_or(&name).trim_end_matches(".csv").to_string());
                traces.push((opt, name, t));
            }
            Err(e) => errors.push((name, e.to_string())),
        }
    }

    let reference_from_manifest = traces.iter().all(|(_, name, _)| f_stars.contains_key(name));
    let fallback = traces
        .iter()
        .flat_map(|(_, _, t)| t.iter().map(|r| r.f))
        .filter(|f| f.is_finite())
        .fold(f64::INFINITY, f64::min);

    let mut best: BTreeMap<String, SummaryRow> = BTreeMap::new();
    for (opt, name, trace) in traces {
        let f_star = f_stars.get(&name).copied().unwrap_or(fallback);
        let last = trace.last().expect("nonempty");
        let row = SummaryRow {
            optimizer: opt.clone(),
            passes_to: SUMMARY_TOLERANCES.map(|tol| passes_to_tolerance(&trace, f_star, tol)),
            final_f: last.f,
            final_test_acc: last.test_acc,
            f_star,
            trace: name,
        };
        let better = match best.get(&opt) {
            None => true,
            Some(cur) => row.final_f.total_cmp(&cur.final_f).is_lt() || (cur.final_f.is_nan() && !row.final_f.is_nan()),
        };
        if better {
            best.insert(opt, row);
        }
    }
    Ok(Summary {
        rows: best.into_values().collect(),
        errors,
        reference_from_manifest,
    })
}

fn file_name(path: &Path) -> String {
    path.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned())
}

impl Summary {
    pub const COLUMNS: [&'static str; 7] = [
        "optimizer",
        "trace",
        "passes_1e-2",
        "passes_1e-4",
        "passes_1e-6",
        "final_f",
        "final_test_acc",
    ];

    fn cells(&self) -> Vec<[String; 7]> {
        self.rows
            .iter()
            .map(|r| {
                [
                    r.optimizer.clone(),
                    r.trace.clone(),
                    render_passes(r.passes_to[0]),
                    render_passes(r.passes_to[1]),
                    render_passes(r.passes_to[2]),
                    format!("{:.6e}", r.final_f),
                    if r.final_test_acc.is_nan() {
                        "—".to_string()
                    } else {
                        format!("{:.4}", r.final_test_acc)
                    },
                ]
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = Self::COLUMNS.join(",");
        out.push('\n');
        for row in self.cells() {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Aligned plain-text table.
    pub fn render(&self) -> String {
        let cells = self.cells();
        let widths: Vec<usize> = (0..7)
            .map(|j| {
                cells
                    .iter()
                    .map(|r| r[j].chars().count())
                    .chain([Self::COLUMNS[j].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |vals: Vec<&str>| -> String {
            let padded: Vec<String> = vals
                .iter()
                .zip(&widths)
                .map(|(v, &w)| format!("{v}{}", " ".repeat(w - v.chars().count())))
                .collect();
            padded.join("  ").trim_end().to_string()
        };
        let mut out = line(Self::COLUMNS.to_vec());
        out.push('\n');
        for r in &cells {
            out.push_str(&line(r.iter().map(String::as_str).collect()));
            out.push('\n');
        }
        out
    }
}
