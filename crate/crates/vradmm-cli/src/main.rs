//! Command-line surface: `solve` runs one algorithm and writes a trace CSV,
//! `bench` sweeps several algorithms into one long-format CSV, `check` runs
//! the theory invariant suite, and `params` prints the problem constants
//! and parameter floors for a dataset.

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use vradmm::analysis::{self, TheoryParams, VrKind};
use vradmm::config::{self, ConfigFile, RunSettings};
use vradmm::engine::{self, rho_floor, select_eta, EngineError, FloorInputs, QMode, RunExtras};
use vradmm::estimators::EstimatorKind;
use vradmm::io::{parse_libsvm, problem_from_dataset, split_train_test, RawDataset};
use vradmm::linalg::{sigma_a, spectral_norm_sq};
use vradmm::model::ProblemSpec;
use vradmm::trace::{write_bench, write_trace_file};
use vradmm::verify;

#[derive(Parser)]
#[command(
    name = "vradmm",
    about = "Stochastic ADMM with variance reduction for nonconvex composite problems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one algorithm on a dataset and write the per-iteration trace.
    Solve(SolveArgs),
    /// Run several algorithms with shared data and seed; one combined CSV.
    Bench(BenchArgs),
    /// Run the theory invariant suite; exits nonzero on any failure.
    Check(CheckArgs),
    /// Print problem constants, parameter floors and a feasibility report.
    Params(ParamsArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// LIBSVM data file.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    /// identity | linearized
    #[arg(long)]
    q_mode: Option<String>,
    /// SVRG epoch length (defaults to n).
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    /// Absolute-correlation threshold for the constraint graph.
    #[arg(long)]
    graph_threshold: Option<f64>,
    /// Record the full theory diagnostics every iteration.
    #[arg(long)]
    diagnostics: bool,
    /// Record every k-th iteration (1 = every iteration).
    #[arg(long, default_value_t = 1)]
    record_every: usize,
    /// Write measured wall-clock times into the trace (makes the file
    /// non-reproducible across runs).
    #[arg(long)]
    timing: bool,
    /// Hold out half the samples (seeded shuffle) and report their loss in
    /// a trailing test_loss column.
    #[arg(long)]
    split: bool,
    /// Declared feature dimension (raises the inferred one; useful when a
    /// subset of a dataset misses its trailing features).
    #[arg(long)]
    dim: Option<usize>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// s-admm | s-admm-f | svrg | sag | saga
    #[arg(long)]
    algo: Option<String>,
    /// Output trace CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated algorithm list.
    #[arg(long, default_value = "s-admm,s-admm-f,svrg,sag,saga")]
    algos: String,
    /// Output combined CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    /// Only the tiny-instance exact-expectation enumeration suite.
    #[arg(long)]
    tiny: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct ParamsArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Horizon for the SAG/SAGA coefficient recursions.
    #[arg(long, default_value_t = 16)]
    horizon: usize,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 1.0)]
    vartheta: f64,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let code = match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    };
    std::process::exit(code);
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Solve(args) => cmd_solve(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Check(args) => cmd_check(args),
        Command::Params(args) => cmd_params(args),
    }
}

fn flags_to_config(common: &CommonArgs, algo: Option<&str>) -> ConfigFile {
    ConfigFile {
        algorithm: algo.map(str::to_string),
        rho: common.rho,
        eta: common.eta,
        q_mode: common.q_mode.clone(),
        m: common.m,
        iterations: common.iters,
        seed: common.seed,
        lambda1: common.lambda1,
        lambda2: common.lambda2,
        graph_threshold: common.graph_threshold,
        data_path: common.data.as_ref().map(|p| p.display().to_string()),
        out_path: None,
        diagnostics: if common.diagnostics { Some(true) } else { None },
    }
}

fn resolve_settings(common: &CommonArgs, algo: Option<&str>) -> Result<RunSettings> {
    let file = match &common.config {
        Some(path) => config::load_config(path)
            .with_context(|| format!("reading config {}", path.display()))?,
        None => ConfigFile::default(),
    };
    let merged = file.overlay(flags_to_config(common, algo));
    let mut settings = config::resolve(merged, true)?;
    settings.solver.record_every = common.record_every;
    settings.solver.timing = common.timing;
    Ok(settings)
}

fn load_dataset(settings: &RunSettings) -> Result<RawDataset> {
    let path = settings
        .data_path
        .as_ref()
        .context("no data file; pass --data or set data_path in the config")?;
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let ds = parse_libsvm(BufReader::new(file))
        .with_context(|| format!("parsing {}", path.display()))?;
    log::info!(
        "loaded {} samples, {} features from {}",
        ds.n(),
        ds.dimension,
        path.display()
    );
    Ok(ds)
}

fn load_dataset_with_dim(settings: &RunSettings, dim: Option<usize>) -> Result<RawDataset> {
    let mut ds = load_dataset(settings)?;
    if let Some(d) = dim {
        ds.pad_dimension(d);
    }
    Ok(ds)
}

fn build_problem(settings: &RunSettings, dataset: &RawDataset) -> Result<ProblemSpec> {
    let problem = problem_from_dataset(
        dataset,
        settings.lambda1,
        settings.lambda2,
        settings.graph_threshold,
    )?;
    log::info!(
        "constraint A is {}x{} ({} graph edges), L = {:.6e}",
        problem.constraint.a.rows(),
        problem.constraint.a.cols(),
        problem.constraint.a.rows() - problem.dim(),
        problem.lipschitz()
    );
    Ok(problem)
}

fn out_path(settings: &RunSettings, flag: Option<PathBuf>, default: &str) -> PathBuf {
    flag.or_else(|| settings.out_path.clone())
        .unwrap_or_else(|| PathBuf::from(default))
}

fn cmd_solve(args: SolveArgs) -> Result<i32> {
    let settings = resolve_settings(&args.common, args.algo.as_deref())?;
    let dataset = load_dataset_with_dim(&settings, args.common.dim)?;
    let (train, test) = if args.common.split {
        let (tr, te) = split_train_test(&dataset, settings.solver.seed);
        (tr, Some(te))
    } else {
        (dataset, None)
    };
    let problem = build_problem(&settings, &train)?;
    let extras = RunExtras {
        y_hook: None,
        test_samples: test.as_ref().map(|d| d.samples.as_slice()),
    };
    let out = out_path(&settings, args.out, "trace.csv");
    match engine::run_with_extras(&settings.solver, &problem, &extras) {
        Ok(trace) => {
            write_trace_file(&trace, &out, args.common.split)
                .with_context(|| format!("writing {}", out.display()))?;
            summarize(&trace);
            println!("trace written to {}", out.display());
            Ok(0)
        }
        Err(EngineError::NonFinite { t, trace }) => {
            write_trace_file(&trace, &out, args.common.split)
                .with_context(|| format!("writing {}", out.display()))?;
            eprintln!(
                "run aborted at iteration {t} on a non-finite iterate; last good state written to {}",
                out.display()
            );
            Ok(1)
        }
        Err(e) => Err(e.into()),
    }
}

fn summarize(trace: &engine::RunTrace) {
    if let Some(last) = trace.records.last() {
        println!(
            "{}: {} iterations, {:.2} effective passes, objective {:.9e}",
            trace.algorithm.name(),
            trace.total_iterations,
            last.effective_passes,
            last.objective
        );
        println!(
            "residuals: r_grad {:.3e}  r_subgrad {:.3e}  r_feas {:.3e}",
            last.r_grad, last.r_subgrad, last.r_feas
        );
    }
    let c = &trace.checks;
    println!(
        "checks: dual identity {:.2e}, y-step residual {:.2e}",
        c.dual_identity_max_rel, c.y_opt_max_residual
    );
    if let Some(sel) = &trace.selection.uniform {
        println!("output iterate (uniform rule): t = {}", sel.t);
    }
    if let Some(sel) = &trace.selection.argmin_theta {
        println!("output iterate (argmin theta): t = {}", sel.t);
    }
}

fn cmd_bench(args: BenchArgs) -> Result<i32> {
    let names: Vec<&str> = args.algos.split(',').map(str::trim).collect();
    let mut kinds = Vec::new();
    for name in &names {
        kinds.push(config::parse_algorithm(name)?);
    }
    let settings = resolve_settings(&args.common, None)?;
    let dataset = load_dataset_with_dim(&settings, args.common.dim)?;
    let (train, test) = if args.common.split {
        let (tr, te) = split_train_test(&dataset, settings.solver.seed);
        (tr, Some(te))
    } else {
        (dataset, None)
    };
    let problem = build_problem(&settings, &train)?;

    let runs: Vec<Result<(String, engine::RunTrace), EngineError>> = kinds
        .par_iter()
        .map(|&kind| {
            let mut solver = settings.solver.clone();
            solver.algorithm = kind;
            solver.schedule = match kind {
                EstimatorKind::Plain => engine::StepsizeSchedule::SqrtT,
                _ => engine::StepsizeSchedule::Constant,
            };
            let extras = RunExtras {
                y_hook: None,
                test_samples: test.as_ref().map(|d| d.samples.as_slice()),
            };
            engine::run_with_extras(&solver, &problem, &extras)
                .map(|t| (kind.name().to_string(), t))
        })
        .collect();
    let mut traces = Vec::new();
    for r in runs {
        traces.push(r?);
    }
    let out = out_path(&settings, args.out, "bench.csv");
    let mut f = std::io::BufWriter::new(File::create(&out)?);
    write_bench(&traces, &mut f, args.common.split)?;
    for (name, trace) in &traces {
        if let Some(last) = trace.records.last() {
            println!(
                "{name}: objective {:.9e} after {:.2} passes",
                last.objective, last.effective_passes
            );
        }
    }
    println!("bench written to {}", out.display());
    Ok(0)
}

fn cmd_check(args: CheckArgs) -> Result<i32> {
    let outcomes = verify::run_all(args.tiny, args.seed);
    let mut failed = 0usize;
    for c in &outcomes {
        let mark = if c.passed { "PASS" } else { "FAIL" };
        println!("{mark} {}: {}", c.name, c.detail);
        if !c.passed {
            failed += 1;
        }
    }
    println!("{} checks, {} failed", outcomes.len(), failed);
    Ok(if failed == 0 { 0 } else { 1 })
}

fn cmd_params(args: ParamsArgs) -> Result<i32> {
    let file = match &args.common.config {
        Some(path) => config::load_config(path)?,
        None => ConfigFile::default(),
    };
    let merged = file.overlay(flags_to_config(&args.common, None));
    let settings = config::resolve(merged, false)?;
    let dataset = load_dataset_with_dim(&settings, args.common.dim)?;
    let problem = build_problem(&settings, &dataset)?;

    let a = &problem.constraint.a;
    let l = problem.lipschitz();
    let a_norm_sq = spectral_norm_sq(a);
    let sig = sigma_a(a)?;
    let n = problem.n();
    println!(
        "n = {n}, d = {}, A: {}x{}",
        problem.dim(),
        a.rows(),
        a.cols()
    );
    println!("L          = {l:.9e}");
    println!("sigma_A    = {sig:.9e}");
    println!("||A||_2^2  = {a_norm_sq:.9e}");

    let (phi_min, phi_max) = match settings.solver.q_mode {
        QMode::Identity => (1.0, 1.0),
        QMode::UzawaLinearized => {
            let lam_min = if a.rows() >= a.cols() { sig } else { 0.0 };
            (
                1.0 - settings.solver.rho / settings.solver.eta * a_norm_sq,
                1.0 - settings.solver.rho / settings.solver.eta * lam_min,
            )
        }
    };
    if phi_min <= 0.0 {
        anyhow::bail!(
            "Q is not positive definite at rho = {}, eta = {} (needs eta > rho ||A||^2 = {:.6e})",
            settings.solver.rho,
            settings.solver.eta,
            settings.solver.rho * a_norm_sq
        );
    }
    let chi = phi_max / phi_min;
    for (kind, horizon) in [
        (VrKind::Svrg, settings.solver.epoch_length_for(n)),
        (VrKind::Sag, args.horizon),
        (VrKind::Saga, args.horizon),
    ] {
        let inp = FloorInputs {
            l,
            sigma_a: sig,
            chi,
            beta: args.beta,
            vartheta: args.vartheta,
            n,
            horizon,
        };
        match rho_floor(kind, &inp) {
            Ok(floor) => {
                let eta = select_eta(floor, sig, phi_min, phi_max);
                let p = TheoryParams {
                    l,
                    sigma_a: sig,
                    phi_min,
                    phi_max,
                    rho: floor,
                    eta,
                    beta: args.beta,
                    vartheta: args.vartheta,
                    n,
                    m: horizon,
                };
                let rep = analysis::feasibility_report(kind, &p, horizon)?;
                println!(
                    "{kind:?}: horizon {horizon}: rho_floor = {floor:.6e}, eta* = {eta:.6e}, min Gamma = {:.6e} ({})",
                    rep.min_gamma,
                    if rep.feasible { "feasible" } else { "infeasible" }
                );
            }
            Err(e) => println!("{kind:?}: horizon {horizon}: rho floor unavailable: {e}"),
        }
    }

    // feasibility at the configured (rho, eta) as well
    let p = TheoryParams {
        l,
        sigma_a: sig,
        phi_min,
        phi_max,
        rho: settings.solver.rho,
        eta: settings.solver.eta,
        beta: args.beta,
        vartheta: args.vartheta,
        n,
        m: settings.solver.epoch_length_for(n),
    };
    for (kind, horizon) in [
        (VrKind::Svrg, settings.solver.epoch_length_for(n)),
        (VrKind::Sag, args.horizon),
        (VrKind::Saga, args.horizon),
    ] {
        match analysis::feasibility_report(kind, &p, horizon) {
            Ok(rep) => println!(
                "{kind:?} at rho = {}, eta = {}: min Gamma = {:.6e} at t = {} ({})",
                settings.solver.rho,
                settings.solver.eta,
                rep.min_gamma,
                rep.argmin_t,
                if rep.feasible {
                    "feasible"
                } else {
                    "infeasible"
                }
            ),
            Err(e) => println!(
                "{kind:?} at rho = {}, eta = {}: {e}",
                settings.solver.rho, settings.solver.eta
            ),
        }
    }
    Ok(0)
}
