//! `sonia-bench`: runs optimizer grids and summarizes trace directories.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use sonia::harness::{emit_summary, run_experiment, DataSource, ExperimentConfig, GridAxis, OptimizerId, VERSION};
use sonia::optimizer::RhoRule;
use sonia::problems::ProblemKind;
use sonia::stepsize::StepRule;

#[derive(Parser)]
#[command(name = "sonia-bench", version = VERSION, about = "Benchmark harness for the SONIA optimizer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a grid of optimizer configurations and write per-cell traces.
    Run(Box<RunArgs>),
    /// Print passes-to-tolerance for every optimizer in a trace directory.
    Summary {
        dir: PathBuf,
        /// Emit CSV instead of an aligned table.
        #[arg(long)]
        csv: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value = "logistic")]
    problem: ProblemKind,
    /// LIBSVM file, optionally gzip-compressed.
    #[arg(long, conflicts_with = "synth", required_unless_present = "synth")]
    data: Option<PathBuf>,
    /// Synthetic logistic data as `n,d,kappa`.
    #[arg(long)]
    synth: Option<String>,
    /// Feature dimension override for LIBSVM input.
    #[arg(long, requires = "data")]
    dim: Option<usize>,
    /// Seed for synthetic data and the train/test split.
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    /// Held-out fraction; 0 trains on everything.
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    /// Defaults to 1e-3 for logistic and 0 for nlls.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value = "sonia")]
    opt: OptimizerId,
    /// Defaults to min(d, 64).
    #[arg(long)]
    memory: Option<usize>,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value = "paper_max")]
    rho: RhoRule,
    /// `armijo` or `fixed:ALPHA`.
    #[arg(long, default_value = "armijo")]
    step: StepRule,
    #[arg(long)]
    batch_grad: Option<usize>,
    #[arg(long)]
    batch_hess: Option<usize>,
    #[arg(long, default_value_t = 20.0)]
    epochs: f64,
    /// Iteration budget for full-batch runs.
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    gtol: f64,
    /// Base seeds; each one repeats the whole grid.
    #[arg(long = "seed", value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    /// `KEY=V1,V2,...`; repeat for a cartesian product.
    #[arg(long)]
    grid: Vec<GridAxis>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Exit 0 even if some cells diverged.
    #[arg(long)]
    allow_divergence: bool,
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let data = match (&self.data, &self.synth) {
            (Some(path), None) => DataSource::File {
                path: path.clone(),
                dim: self.dim,
            },
            (None, Some(spec)) => DataSource::parse_synth(spec)?,
            _ => bail!("exactly one of --data and --synth is required"),
        };
        let mut cfg = ExperimentConfig::new(self.problem, data, self.opt, &self.out);
        cfg.data_seed = self.data_seed;
        cfg.test_fraction = (self.test_fraction > 0.0).then_some(self.test_fraction);
        if let Some(lambda) = self.lambda {
            cfg.lambda = lambda;
        }
        cfg.memory = self.memory;
        cfg.eps = self.eps;
        cfg.rho = self.rho;
        cfg.step = self.step;
        cfg.batch_grad = self.batch_grad;
        cfg.batch_hess = self.batch_hess;
        cfg.epochs = self.epochs;
        cfg.iters = self.iters;
        cfg.gtol = self.gtol;
        cfg.seeds = self.seeds.clone();
        cfg.grid = self.grid.clone();
        cfg.workers = self.workers;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(args: &RunArgs) -> Result<bool> {
    let cfg = args.config()?;
    let report = run_experiment(&cfg).context("experiment failed")?;
    let manifest = &report.manifest;
    for cell in &manifest.cells {
        let f = cell.final_f.map_or("-".to_string(), |f| format!("{f:.6e}"));
        match &cell.message {
            Some(msg) => println!("{}  {}  f={f}  ({msg})", cell.file, cell.status),
            None => println!("{}  {}  f={f}", cell.file, cell.status),
        }
    }
    if let Some(best) = manifest.best_cell {
        println!("best: {}", manifest.cells[best].file);
    }
    println!("manifest: {}", report.manifest_path.display());
    Ok(manifest.all_completed(args.allow_divergence))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(args) => run(args),
        Command::Summary { dir, csv } => emit_summary(dir).map_err(Into::into).map(|summary| {
            print!("{}", if *csv { summary.to_csv() } else { summary.render() });
            for (file, err) in &summary.errors {
                eprintln!("skipped {file}: {err}");
            }
            true
        }),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
