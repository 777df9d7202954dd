//! Acceptance suite. Runs every criterion in sequence and prints one
//! PASS/FAIL line each. Set `ACCEPTANCE_STRICT=1` to exit non-zero when any
//! criterion fails.

use std::alloc::{GlobalAlloc, Layout, System};
use std::panic::{self, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use sonia::baselines::{gd_run, RunLimits};
use sonia::data::{parse_libsvm, serialize_libsvm, synth_logistic, synth_sparse_logistic, ParseOptions};
use sonia::harness::{compute_reference_optimum, run_experiment, DataSource, ExperimentConfig, OptimizerId};
use sonia::linalg::{dot, norm2, DenseMatrix};
use sonia::optimizer::{
    build_operator, run_deterministic, run_deterministic_observed, run_stochastic, sample_directions,
    search_direction, CurvatureBlock, RhoRule, SoniaConfig,
};
use sonia::problems::{partitioned_hess_block, CsrMatrix, Dataset, Features, LabelEncoding, Objective, Problem, ProblemKind, Quadratic};
use sonia::stepsize::{ArmijoParams, StepRule, STEP_GRID};
use sonia::trace::{RunResult, TraceRecord};
use sonia::IterationView;

struct CountingAlloc;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for CountingAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            let now = CURRENT.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            PEAK.fetch_max(now, Ordering::Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = System.realloc(ptr, layout, new_size);
        if !p.is_null() {
            if new_size >= layout.size() {
                let now = CURRENT.fetch_add(new_size - layout.size(), Ordering::Relaxed) + new_size - layout.size();
                PEAK.fetch_max(now, Ordering::Relaxed);
            } else {
                CURRENT.fetch_sub(layout.size() - new_size, Ordering::Relaxed);
            }
        }
        p
    }
}

#[global_allocator]
static GLOBAL: CountingAlloc = CountingAlloc;

type Criterion = (&'static str, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gauss(r: &mut ChaCha8Rng) -> f64 {
    r.sample(StandardNormal)
}

fn to_na(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn from_na(m: &DMatrix<f64>) -> DenseMatrix {
    DenseMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    num / norm2(b).max(1e-300)
}

/// Random symmetric matrix `Q diag(λ) Qᵀ` with `|λ| ∈ [0.1, 10]`, random signs when `indefinite`.
fn random_symmetric(d: usize, indefinite: bool, r: &mut ChaCha8Rng) -> DenseMatrix {
    let g = to_na(&DenseMatrix::from_fn(d, d, |_, _| gauss(r)));
    let q = g.qr().q();
    let lam: Vec<f64> = (0..d)
        .map(|_| {
            let mag = 10f64.powf(r.random_range(-1.0..1.0));
            if indefinite && r.random_bool(0.3) {
                -mag
            } else {
                mag
            }
        })
        .collect();
    let h = &q * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(lam)) * q.transpose();
    from_na(&h).symmetrized()
}

fn random_dataset(n: usize, d: usize, encoding: LabelEncoding, sparse: bool, r: &mut ChaCha8Rng) -> Dataset {
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|_| {
            let mut row = Vec::new();
            for j in 0..d {
                if !sparse || r.random_bool(0.3) {
                    row.push((j, gauss(r)));
                }
            }
            row
        })
        .collect();
    let labels = (0..n)
        .map(|_| if r.random_bool(0.5) { encoding.positive() } else { encoding.negative() })
        .collect();
    let csr = CsrMatrix::from_rows(d, &rows).unwrap();
    let features = if sparse { Features::Sparse(csr) } else { Features::Dense(csr.to_dense()) };
    Dataset::new(features, labels, encoding).unwrap()
}

fn dense_operator(op: &sonia::optimizer::TruncatedOperator) -> DMatrix<f64> {
    // Ṽ |Λ|_ε⁻¹ Ṽᵀ + ρ (I − ṼṼᵀ), assembled entry by entry.
    let v = to_na(op.basis());
    let d = v.nrows();
    let inv = nalgebra::DVector::from_vec(op.inv_eig().to_vec());
    let inner = &v * DMatrix::from_diagonal(&inv) * v.transpose();
    let proj = &v * v.transpose();
    inner + (DMatrix::identity(d, d) - proj) * op.rho()
}

fn sorted_eigs(m: &DMatrix<f64>) -> Vec<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let mut e: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    e.sort_by(f64::total_cmp);
    e
}

// 1 ─────────────────────────────────────────────────────────────────────────

fn calculus() -> Verdict {
    let start = Instant::now();
    let mut worst_g: f64 = 0.0;
    let mut worst_h: f64 = 0.0;
    let mut r = rng(1);
    for kind in [ProblemKind::Logistic, ProblemKind::Nlls] {
        for trial in 0..100 {
            let n = r.random_range(5..=50);
            let d = r.random_range(2..=20);
            let ds = random_dataset(n, d, kind.encoding(), trial % 2 == 0, &mut r);
            let lambda = if kind == ProblemKind::Logistic { 10f64.powf(r.random_range(-4.0..-1.0)) } else { 0.0 };
            let p = Problem::new(kind, lambda, &ds).unwrap();
            let w: Vec<f64> = (0..d).map(|_| 0.5 * gauss(&mut r)).collect();
            let g = p.gradient(&w, None).unwrap();
            let h = 1e-5 * (1.0 + norm2(&w));
            let fd: Vec<f64> = (0..d)
                .map(|j| {
                    let mut wp = w.clone();
                    let mut wm = w.clone();
                    wp[j] += h;
                    wm[j] -= h;
                    (p.value(&wp, None).unwrap() - p.value(&wm, None).unwrap()) / (2.0 * h)
                })
                .collect();
            worst_g = worst_g.max(rel_diff(&fd, &g));

            let m = r.random_range(1..=3);
            let s = DenseMatrix::from_fn(d, m, |_, _| gauss(&mut r));
            let hs = p.hess_mat(&w, &s, None).unwrap();
            for j in 0..m {
                let col = s.column(j);
                let wp: Vec<f64> = w.iter().zip(&col).map(|(a, b)| a + h * b).collect();
                let wm: Vec<f64> = w.iter().zip(&col).map(|(a, b)| a - h * b).collect();
                let gp = p.gradient(&wp, None).unwrap();
                let gm = p.gradient(&wm, None).unwrap();
                let fd: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
                worst_h = worst_h.max(rel_diff(&fd, &hs.column(j)));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Verdict::new(
        worst_g <= 1e-5 && worst_h <= 1e-4 && secs < 10.0,
        format!("max grad rel err {worst_g:.2e} (≤1e-5), max hess rel err {worst_h:.2e} (≤1e-4), {secs:.2}s (<10s)"),
    )
}

// 2 ─────────────────────────────────────────────────────────────────────────

fn operator_identity() -> Verdict {
    let mut r = rng(2);
    let mut worst: f64 = 0.0;
    for trial in 0..50 {
        let d = r.random_range(2..=20);
        let m = r.random_range(1..=d.min(8));
        let h = random_symmetric(d, trial % 2 == 1, &mut r);
        let s = sample_directions(d, m, &mut r).unwrap();
        let rule = if trial % 3 == 0 { RhoRule::PaperMax } else { RhoRule::TheoryMin };
        let op = build_operator(&CurvatureBlock::new(s.clone(), h.matmul(&s)).unwrap(), 1e-5, rule).unwrap();
        let g: Vec<f64> = (0..d).map(|_| gauss(&mut r)).collect();
        let p = search_direction(&op, &g).unwrap();
        let dense = dense_operator(&op);
        let ag = &dense * nalgebra::DVector::from_vec(g.clone());
        let want: Vec<f64> = ag.iter().map(|x| -x).collect();
        worst = worst.max(rel_diff(&p, &want));
    }
    Verdict::new(worst <= 1e-12, format!("max relative deviation {worst:.2e} over 50 instances (≤1e-12)"))
}

// 3 ─────────────────────────────────────────────────────────────────────────

fn spectrum_bounds() -> Verdict {
    let mut r = rng(3);
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    let mut all_pd = true;
    let mut in_range = true;
    let mut deficient_cases = 0;
    for trial in 0..60 {
        let d = r.random_range(2..=20);
        let m = r.random_range(1..=d.min(8));
        let h = random_symmetric(d, trial % 2 == 1, &mut r);
        let mut s = sample_directions(d, m, &mut r).unwrap();
        if trial % 4 == 0 && m >= 2 {
            // Repeated direction: SᵀY is singular.
            let c = s.column(0);
            s.set_column(m - 1, &c);
            deficient_cases += 1;
        }
        let rule = if trial % 3 == 0 { RhoRule::PaperMax } else { RhoRule::TheoryMin };
        let op = build_operator(&CurvatureBlock::new(s.clone(), h.matmul(&s)).unwrap(), eps, rule).unwrap();
        let got = sorted_eigs(&dense_operator(&op));
        let mut want: Vec<f64> = op.inv_eig().to_vec();
        want.extend(std::iter::repeat_n(op.rho(), d - m));
        want.sort_by(f64::total_cmp);
        let scale = want.iter().fold(1.0f64, |a, b| a.max(b.abs()));
        for (a, b) in got.iter().zip(&want) {
            worst = worst.max((a - b).abs() / scale);
        }
        all_pd &= got[0] > 0.0;
        in_range &= want.iter().all(|&x| x > 0.0 && x <= (1.0 / eps) * (1.0 + 1e-12));
    }
    Verdict::new(
        worst <= 1e-10 && all_pd && in_range,
        format!(
            "max eigenvalue deviation {worst:.2e} relative to max(1,|λ|max) (≤1e-10), positive definite: {all_pd}, within (0,1/ε]: {in_range}, {deficient_cases} rank-deficient SᵀY cases"
        ),
    )
}

// 4 ─────────────────────────────────────────────────────────────────────────

fn secant_and_invariance() -> Verdict {
    let mut r = rng(4);
    let mut worst_secant: f64 = 0.0;
    let mut worst_inv: f64 = 0.0;
    for trial in 0..20 {
        let d = r.random_range(3..=20);
        let m = r.random_range(1..=d.min(8));
        let h = random_symmetric(d, trial % 2 == 1, &mut r);
        let s = sample_directions(d, m, &mut r).unwrap();
        let y = h.matmul(&s);
        let op = build_operator(&CurvatureBlock::new(s.clone(), y.clone()).unwrap(), 1e-5, RhoRule::TheoryMin).unwrap();
        for j in 0..m {
            let bs = op.apply_hessian_approx(&s.column(j));
            worst_secant = worst_secant.max(rel_diff(&bs, &y.column(j)));
        }
        // Random invertible C = U diag(σ) Wᵀ with σ ∈ [0.1, 10].
        let u = to_na(&DenseMatrix::from_fn(m, m, |_, _| gauss(&mut r))).qr().q();
        let w = to_na(&DenseMatrix::from_fn(m, m, |_, _| gauss(&mut r))).qr().q();
        let sigma: Vec<f64> = (0..m).map(|_| 10f64.powf(r.random_range(-1.0..1.0))).collect();
        let c = from_na(&(u * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(sigma)) * w.transpose()));
        let sc = s.matmul(&c);
        let op_c = build_operator(&CurvatureBlock::new(sc.clone(), h.matmul(&sc)).unwrap(), 1e-5, RhoRule::TheoryMin).unwrap();
        let b = op.hessian_approx_dense();
        let bc = op_c.hessian_approx_dense();
        worst_inv = worst_inv.max(bc.sub(&b).frobenius_norm() / b.frobenius_norm());
    }
    Verdict::new(
        worst_secant <= 1e-8 && worst_inv <= 1e-8,
        format!("max secant residual {worst_secant:.2e}, max basis-change deviation {worst_inv:.2e} over 20 C (both ≤1e-8)"),
    )
}

// 5 ─────────────────────────────────────────────────────────────────────────

fn reductions() -> Verdict {
    let ds = synth_logistic(300, 12, 10.0, 5).unwrap();
    let p = Problem::logistic(&ds, 1e-3).unwrap();
    let w0 = vec![0.0; 12];
    let alpha = 0.05;
    let mut cfg = SoniaConfig::for_problem(12, 300);
    cfg.memory = 0;
    cfg.step = StepRule::fixed(alpha).unwrap();
    cfg.max_iters = 50;
    let sonia = run_deterministic(&p, &cfg, &w0).unwrap();
    // ρ = 1 for m = 0, so the matching GD step is 1·α.
    let gd = gd_run(&p, &StepRule::fixed(alpha).unwrap(), &w0, RunLimits::iterations(50)).unwrap();
    let bitwise = sonia.trace == gd.trace && sonia.state.w == gd.state.w;

    let mut r = rng(5);
    let d = 15;
    let g = DenseMatrix::from_fn(d, d, |_, _| gauss(&mut r));
    let hq = g.matmul_t(&g).scaled(1.0 / d as f64).add(&DenseMatrix::identity(d).scaled(0.5));
    let b: Vec<f64> = (0..d).map(|_| gauss(&mut r)).collect();
    let q = Quadratic::new(hq, b).unwrap();
    let mut cfg = SoniaConfig::for_problem(d, 1);
    cfg.memory = d;
    cfg.rho_rule = RhoRule::TheoryMin;
    cfg.step = StepRule::fixed(1.0).unwrap();
    cfg.max_iters = 1;
    cfg.gtol = 0.0;
    let one = run_deterministic(&q, &cfg, &vec![1.0; d]).unwrap();
    let gnorm = one.trace[1].gnorm;
    Verdict::new(
        bitwise && gnorm <= 1e-10,
        format!(
            "m=0 trace bitwise equal to GD over {} rows: {bitwise}; m=d one-step ‖∇F‖ = {gnorm:.2e} (≤1e-10)",
            gd.trace.len()
        ),
    )
}

// 6 ─────────────────────────────────────────────────────────────────────────

fn descent_and_monotonicity() -> Verdict {
    let c = ArmijoParams::default().c;
    let logistic = synth_logistic(200, 20, 10.0, 6).unwrap();
    let nlls = synth_logistic(300, 15, 5.0, 7).unwrap().with_encoding(LabelEncoding::ZeroOne);
    let mut steps = 0usize;
    let mut descent_ok = true;
    let mut armijo_ok = true;
    let mut strict_ok = true;
    for (label, ds, kind) in [("logistic", &logistic, ProblemKind::Logistic), ("nlls", &nlls, ProblemKind::Nlls)] {
        let lambda = if kind == ProblemKind::Logistic { 1e-3 } else { 0.0 };
        let p = Problem::new(kind, lambda, ds).unwrap();
        for (rule, m) in [(RhoRule::TheoryMin, 8), (RhoRule::PaperMax, 8), (RhoRule::TheoryMin, 3)] {
            let mut cfg = SoniaConfig::for_problem(ds.d(), ds.n());
            cfg.memory = m;
            cfg.rho_rule = rule;
            cfg.max_iters = 150;
            // Stop before F reaches its rounding floor, where ties are unavoidable.
            cfg.gtol = 1e-5;
            cfg.seed = 11;
            let mut obs = |v: &IterationView<'_>| {
                steps += 1;
                let op = v.operator.expect("SONIA exposes its operator");
                let slope = dot(v.grad, v.direction);
                let bound = -op.min_eigenvalue() * dot(v.grad, v.grad);
                descent_ok &= slope <= bound + 1e-12 * bound.abs();
                armijo_ok &= v.f_after <= v.f_before + c * v.alpha * slope;
            };
            let res = run_deterministic_observed(&p, &cfg, &vec![0.0; ds.d()], Some(&mut obs)).unwrap();
            let strict = res.trace.windows(2).all(|w| w[1].f < w[0].f);
            if !strict {
                eprintln!("criterion 6: {label} {rule} m={m} not strictly decreasing");
            }
            strict_ok &= strict;
        }
    }
    Verdict::new(
        descent_ok && armijo_ok && strict_ok,
        format!("{steps} accepted steps; descent bound: {descent_ok}, sufficient decrease: {armijo_ok}, strictly decreasing F: {strict_ok}"),
    )
}

// 7 / 8 ─────────────────────────────────────────────────────────────────────

struct IllConditioned {
    f_star: f64,
    approximate: bool,
    sonia: RunResult,
    setup: Duration,
}

fn ill_conditioned() -> &'static IllConditioned {
    static CELL: OnceLock<IllConditioned> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let ds = synth_logistic(2000, 50, 100.0, 0).unwrap();
        let p = Problem::logistic(&ds, 1e-3).unwrap();
        let reference = compute_reference_optimum(&p).unwrap();
        let mut cfg = SoniaConfig::for_problem(50, 2000);
        cfg.memory = 16;
        cfg.rho_rule = RhoRule::PaperMax;
        cfg.max_iters = 2500;
        cfg.gtol = 1e-12;
        let sonia = run_deterministic(&p, &cfg, &vec![0.0; 50]).unwrap();
        IllConditioned {
            f_star: reference.f_star,
            approximate: reference.approximate,
            sonia,
            setup: start.elapsed(),
        }
    })
}

fn gap(r: &TraceRecord, f_star: f64) -> f64 {
    (r.f - f_star).max(1e-16)
}

fn passes_to(trace: &[TraceRecord], f_star: f64, tol: f64) -> Option<f64> {
    trace.iter().find(|r| gap(r, f_star) <= tol).map(|r| r.passes)
}

fn linear_convergence() -> Verdict {
    let ctx = ill_conditioned();
    let trace = &ctx.sonia.trace;
    let at_budget = trace.iter().take_while(|r| r.passes <= 200.0).last().unwrap();
    let budget_gap = gap(at_budget, ctx.f_star);
    let hit = passes_to(trace, ctx.f_star, 1e-8);
    // Same run, charging a whole Hessian-matrix product as a single pass.
    let m = 16.0;
    let alt = trace
        .iter()
        .take_while(|r| r.passes - (m - 1.0) * r.iter as f64 <= 200.0)
        .last()
        .unwrap();

    let pts: Vec<(f64, f64)> = trace
        .iter()
        .filter(|r| {
            let g = gap(r, ctx.f_star);
            (1e-6..=1e-2).contains(&g)
        })
        .map(|r| (r.iter as f64, gap(r, ctx.f_star).log10()))
        .collect();
    let (slope, r2) = least_squares(&pts);
    let covered = passes_to(trace, ctx.f_star, 1e-6).is_some();
    let secs = ctx.setup.as_secs_f64();
    let pass = budget_gap < 1e-8 && slope < 0.0 && r2 >= 0.95 && covered && secs < 60.0;
    Verdict::new(
        pass,
        format!(
            "gap after 200 passes {budget_gap:.2e} at iteration {} (need <1e-8; {:.2e} at iteration {} if a Hessian-matrix product costs one pass); gap 1e-8 first reached after {} passes; \
             slope {slope:.3e}/iter with R² {r2:.4} over {} iterates in [1e-6,1e-2] (need <0, ≥0.95); F* approximate: {}; {secs:.1}s (<60s)",
            at_budget.iter,
            gap(alt, ctx.f_star),
            alt.iter,
            hit.map_or("never".into(), |p| format!("{p}")),
            pts.len(),
            ctx.approximate,
        ),
    )
}

fn least_squares(pts: &[(f64, f64)]) -> (f64, f64) {
    if pts.len() < 3 {
        return (f64::NAN, f64::NAN);
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, (sxy * sxy) / (sxx * syy))
}

fn ill_conditioning_advantage() -> Verdict {
    let ctx = ill_conditioned();
    let Some(sonia_passes) = passes_to(&ctx.sonia.trace, ctx.f_star, 1e-6) else {
        return Verdict::new(false, "SONIA never reached gap 1e-6");
    };
    let ds = synth_logistic(2000, 50, 100.0, 0).unwrap();
    let p = Problem::logistic(&ds, 1e-3).unwrap();
    // Each GD run may stop once it has spent as many passes as SONIA needed:
    // reaching 1e-6 any later cannot beat SONIA.
    let limits = RunLimits {
        max_iters: usize::MAX,
        gtol: 0.0,
        max_passes: Some(sonia_passes),
        stall_window: None,
    };
    let runs: Vec<(f64, RunResult)> = std::thread::scope(|scope| {
        let handles: Vec<_> = STEP_GRID
            .iter()
            .map(|&alpha| {
                let p = &p;
                scope.spawn(move || (alpha, gd_run(p, &StepRule::fixed(alpha).unwrap(), &[0.0; 50], limits).unwrap()))
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut best: Option<(f64, f64)> = None;
    let mut finals = Vec::new();
    for (alpha, res) in &runs {
        finals.push(format!("{alpha}:{:.1e}", gap(res.trace.last().unwrap(), ctx.f_star)));
        if let Some(pp) = passes_to(&res.trace, ctx.f_star, 1e-6) {
            if best.is_none_or(|(_, b)| pp < b) {
                best = Some((*alpha, pp));
            }
        }
    }
    let pass = best.is_none_or(|(_, gd)| sonia_passes < gd);
    Verdict::new(
        pass,
        format!(
            "SONIA reaches 1e-6 after {sonia_passes} passes; best fixed-step GD: {}; GD gaps at that budget [{}]",
            best.map_or("not within budget".into(), |(a, pp)| format!("α={a} after {pp} passes")),
            finals.join(", ")
        ),
    )
}

// 9 ─────────────────────────────────────────────────────────────────────────

const STOCH_MEMORY: usize = 5;
const STOCH_EPOCHS: f64 = 200.0;

fn tail_gap(p: &Problem<'_>, f_star: f64, alpha: f64, batch: usize, seed: u64) -> f64 {
    let mut cfg = SoniaConfig::for_problem(p.dim(), p.num_samples());
    cfg.memory = STOCH_MEMORY;
    cfg.rho_rule = RhoRule::PaperMax;
    cfg.step = StepRule::fixed(alpha).unwrap();
    cfg.batch_grad = batch;
    cfg.batch_hess = batch;
    cfg.epochs = STOCH_EPOCHS;
    cfg.seed = seed;
    let res = run_stochastic(p, &cfg, &vec![0.0; p.dim()]).unwrap();
    let last = res.trace.last().unwrap().passes;
    let tail: Vec<f64> = res
        .trace
        .iter()
        .filter(|r| r.passes > last - 5.0 - 1e-9)
        .map(|r| (r.f - f_star).max(1e-16))
        .collect();
    if tail.iter().any(|g| !g.is_finite()) {
        return f64::INFINITY;
    }
    tail.iter().sum::<f64>() / tail.len() as f64
}

fn stochastic_neighborhood() -> Verdict {
    let start = Instant::now();
    let ds = synth_logistic(4000, 30, 10.0, 0).unwrap();
    let p = Problem::logistic(&ds, 1e-3).unwrap();
    let f_star = compute_reference_optimum(&p).unwrap().f_star;
    // Shared α: the grid value minimizing the worse of the two tail gaps on a tuning seed.
    let tuning_seed = 100;
    let (alpha, _) = STEP_GRID
        .iter()
        .map(|&a| (a, tail_gap(&p, f_star, a, 16, tuning_seed).max(tail_gap(&p, f_star, a, 256, tuning_seed))))
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .unwrap();
    let mut lines = Vec::new();
    let mut pass = true;
    for seed in 0..3 {
        let small = tail_gap(&p, f_star, alpha, 16, seed);
        let large = tail_gap(&p, f_star, alpha, 256, seed);
        pass &= large < small;
        lines.push(format!("seed {seed}: {small:.2e} vs {large:.2e}"));
    }
    let secs = start.elapsed().as_secs_f64();
    Verdict::new(
        pass && secs < 120.0,
        format!("tuned α={alpha}; final-5-epoch mean gap batch 16 vs 256: {}; {secs:.1}s (<120s)", lines.join("; ")),
    )
}

// 10 ────────────────────────────────────────────────────────────────────────

fn nonconvex_decrease() -> Verdict {
    let ds = synth_logistic(1000, 30, 10.0, 10).unwrap().with_encoding(LabelEncoding::ZeroOne);
    let p = Problem::nlls(&ds).unwrap();
    let mut cfg = SoniaConfig::for_problem(30, 1000);
    cfg.memory = 10;
    cfg.rho_rule = RhoRule::TheoryMin;
    cfg.max_iters = 100;
    cfg.gtol = 0.0;
    let mut alphas = Vec::new();
    let mut mu1 = f64::INFINITY;
    let mut obs = |v: &IterationView<'_>| {
        alphas.push(v.alpha);
        mu1 = mu1.min(v.operator.unwrap().min_eigenvalue());
    };
    let res = run_deterministic_observed(&p, &cfg, &vec![0.0; 30], Some(&mut obs)).unwrap();
    let t = res.state.iter;
    let nonincreasing = res.trace.windows(2).all(|w| w[1].f <= w[0].f);
    let min_g2 = res.trace.iter().map(|r| r.gnorm * r.gnorm).fold(f64::INFINITY, f64::min);
    let alpha_eff = alphas.iter().sum::<f64>() / alphas.len() as f64;
    let f0 = res.trace[0].f;
    let ft = res.trace.last().unwrap().f;
    let bound = 10.0 * 2.0 * (f0 - ft) / (alpha_eff * mu1 * t as f64);
    Verdict::new(
        nonincreasing && t > 0 && min_g2 <= bound,
        format!(
            "T={t}, nonincreasing: {nonincreasing}, min ‖∇F‖² = {min_g2:.3e} ≤ bound {bound:.3e} (α_eff {alpha_eff:.3}, μ₁ {mu1:.3e})"
        ),
    )
}

// 11 ────────────────────────────────────────────────────────────────────────

fn partitioned_curvature() -> Verdict {
    let mut r = rng(11);
    let n = 40;
    let ds = random_dataset(n, 12, LabelEncoding::PlusMinusOne, true, &mut r);
    let p = Problem::logistic(&ds, 1e-2).unwrap();
    let w: Vec<f64> = (0..12).map(|_| 0.3 * gauss(&mut r)).collect();
    let s = DenseMatrix::from_fn(12, 5, |_, _| gauss(&mut r));
    let y = p.hess_mat(&w, &s, None).unwrap();
    let sty = s.t_matmul(&y);
    let mut worst: f64 = 0.0;
    let mut k1_bitwise = false;
    for k in [1, 2, 4, n] {
        let shards: Vec<Vec<usize>> = (0..k).map(|i| (0..n).filter(|j| j % k == i).collect()).collect();
        let (ys, stys) = partitioned_hess_block(&p, &w, &s, &shards, None).unwrap();
        if k == 1 {
            k1_bitwise = ys == y && stys == sty;
        }
        worst = worst
            .max(ys.sub(&y).frobenius_norm() / y.frobenius_norm())
            .max(stys.sub(&sty).frobenius_norm() / sty.frobenius_norm());
    }
    Verdict::new(
        worst <= 1e-12 && k1_bitwise,
        format!("K ∈ {{1,2,4,{n}}}: max relative deviation {worst:.2e} (≤1e-12); K=1 bitwise: {k1_bitwise}"),
    )
}

// 12 ────────────────────────────────────────────────────────────────────────

fn cost_model() -> Verdict {
    let (d, m) = (10_000usize, 64usize);
    let ds = synth_sparse_logistic(2000, d, 20, 12).unwrap();
    let p = Problem::logistic(&ds, 1e-3).unwrap();
    let mut cfg = SoniaConfig::for_problem(d, ds.n());
    cfg.memory = m;
    cfg.max_iters = 3;
    let w0 = vec![0.0; d];
    let base = CURRENT.load(Ordering::Relaxed);
    PEAK.store(base, Ordering::Relaxed);
    let res = run_deterministic(&p, &cfg, &w0).unwrap();
    let extra = PEAK.load(Ordering::Relaxed) - base;
    drop(res);
    // Generous constant factor on d·m doubles; a single d×d matrix would need 800 MB.
    let budget = 16 * d * m * 8;
    let mem_ok = extra <= budget;

    let per_iter = |n: usize| -> f64 {
        let ds = synth_logistic(n, 100, 1.0, 13).unwrap();
        let p = Problem::logistic(&ds, 1e-3).unwrap();
        let mut cfg = SoniaConfig::for_problem(100, n);
        cfg.memory = 16;
        cfg.step = StepRule::fixed(1e-3).unwrap();
        cfg.max_iters = 10;
        cfg.gtol = 0.0;
        let mut samples: Vec<f64> = (0..7)
            .map(|_| {
                let t = Instant::now();
                let res = run_deterministic(&p, &cfg, &vec![0.0; 100]).unwrap();
                t.elapsed().as_secs_f64() / res.state.iter as f64
            })
            .collect();
        samples.sort_by(f64::total_cmp);
        samples[3]
    };
    let t_small = per_iter(1_000);
    let t_large = per_iter(10_000);
    let ratio = t_large / t_small;
    let time_ok = (10.0 / 3.0..=30.0).contains(&ratio);
    Verdict::new(
        mem_ok && time_ok,
        format!(
            "peak extra allocation {:.1} MB at d=1e4, m=64 (budget 16·d·m doubles = {:.1} MB; d×d alone = 800 MB); \
             per-iteration time n=1e3 {:.3} ms, n=1e4 {:.3} ms, ratio {ratio:.2} (expected 10, allowed [3.33, 30])",
            extra as f64 / 1e6,
            budget as f64 / 1e6,
            t_small * 1e3,
            t_large * 1e3,
        ),
    )
}

// 13 ────────────────────────────────────────────────────────────────────────

fn harness_determinism() -> Verdict {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut listings = Vec::new();
    for dir in &dirs {
        let mut cfg = ExperimentConfig::new(
            ProblemKind::Logistic,
            DataSource::Synth { n: 300, d: 10, kappa: 10.0 },
            OptimizerId::Sonia,
            dir.path(),
        );
        cfg.memory = Some(4);
        cfg.iters = 15;
        cfg.seeds = vec![1, 2];
        cfg.grid = vec!["lambda=1e-3,1e-4".parse().unwrap()];
        cfg.workers = 3;
        let report = run_experiment(&cfg).unwrap();
        let mut files: Vec<(String, Vec<u8>)> = report
            .manifest
            .cells
            .iter()
            .map(|c| (c.file.clone(), std::fs::read(dir.path().join(&c.file)).unwrap()))
            .collect();
        files.sort();
        listings.push(files);
    }
    let traces_equal = listings[0] == listings[1] && listings[0].len() == 4;

    let mut r = rng(13);
    let ds = random_dataset(25, 9, LabelEncoding::PlusMinusOne, true, &mut r);
    let mut text = Vec::new();
    serialize_libsvm(&ds, &mut text).unwrap();
    let back = parse_libsvm(
        text.as_slice(),
        &ParseOptions {
            encoding: LabelEncoding::PlusMinusOne,
            dim: Some(9),
        },
    )
    .unwrap();
    let mut again = Vec::new();
    serialize_libsvm(&back, &mut again).unwrap();
    let round_trip = back == ds && again == text;
    Verdict::new(
        traces_equal && round_trip,
        format!("4 trace CSVs byte-identical across reruns: {traces_equal}; LIBSVM parse∘serialize exact: {round_trip}"),
    )
}

fn main() {
    let criteria: [Criterion; 13] = [
        ("calculus correctness", calculus),
        ("operator identity", operator_identity),
        ("spectrum bounds", spectrum_bounds),
        ("secant and invariance", secant_and_invariance),
        ("reductions", reductions),
        ("descent and monotonicity", descent_and_monotonicity),
        ("linear convergence", linear_convergence),
        ("ill-conditioning advantage", ill_conditioning_advantage),
        ("stochastic neighborhood", stochastic_neighborhood),
        ("nonconvex decrease", nonconvex_decrease),
        ("partitioned curvature", partitioned_curvature),
        ("no d×d allocation", cost_model),
        ("harness determinism", harness_determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let verdict = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::new(false, format!("panicked: {msg}"))
        });
        let status = if verdict.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {:>2} [{status}] {name}: {} [{:.1}s]",
            i + 1,
            verdict.detail,
            start.elapsed().as_secs_f64()
        );
        if !verdict.pass {
            failed.push(i + 1);
        }
    }
    println!(
        "acceptance: {} of {} criteria passed{}",
        criteria.len() - failed.len(),
        criteria.len(),
        if failed.is_empty() { String::new() } else { format!("; failed: {failed:?}") }
    );
    if !failed.is_empty() && std::env::var_os("ACCEPTANCE_STRICT").is_some_and(|v| v == "1") {
        std::process::exit(1);
    }
}
