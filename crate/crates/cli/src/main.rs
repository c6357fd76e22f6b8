//! `tripanel` command line: fit a fixed-effects model to a CSV panel, or run the Monte Carlo designs.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use tripanel::{
    bias_report, fit, read_panel_csv_file, run_with_progress, summarize_to_table, validate, Backend, BandwidthRule,
    Dgp, Error, ErrorClass, Family, FeSpec, FitOptions, Matrix, SeparationPolicy, SimConfig, SpecId, Structure,
    TableFormat,
};
use tripanel_cli::json;

#[derive(Parser)]
#[command(name = "tripanel", version, about = "Multi-way fixed effects estimation with bias corrections")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "TRIPANEL_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a long-format CSV panel and print a JSON record.
    Fit(FitArgs),
    /// Run a Monte Carlo design and write the summary table.
    Simulate(SimArgs),
}

#[derive(Args)]
struct FitArgs {
    /// CSV with header i,j,t,y,x1,...,xK (1-based indices).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "bipartite")]
    structure: Structure,
    /// Fixed-effects specification, e.g. 3.a or 2.1.b.
    #[arg(long)]
    spec: SpecId,
    #[arg(long, default_value = "linear")]
    family: Family,
    /// Also compute the bias-corrected estimator.
    #[arg(long)]
    debias: bool,
    /// Truncation lag for the bias terms: a count or `auto`.
    #[arg(long, default_value = "auto")]
    bandwidth: BandwidthRule,
    #[arg(long, default_value = "iterative")]
    backend: Backend,
    /// Convergence tolerance on the max-norm of the score.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    /// Drop fixed-effect levels with separated outcomes instead of failing.
    #[arg(long)]
    drop_separated: bool,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, default_value = "1")]
    dgp: Dgp,
    #[arg(long, default_value_t = 60)]
    n1: usize,
    #[arg(long, default_value_t = 300)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    bandwidths: Vec<usize>,
    /// Output file (standard output if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "md")]
    format: TableFormat,
    /// Run the full grid N1 in {60, 120, 240} (5000 replications unless --reps is given).
    #[arg(long)]
    full_grid: bool,
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Usage => 1,
        ErrorClass::Validation => 2,
        ErrorClass::Numerical => 3,
    }
}

fn unix_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

fn matrix(m: &Matrix<f64>) -> Value {
    json!(m.to_rows())
}

fn intervals(beta: &[f64], se: &[f64]) -> Value {
    json!(beta.iter().zip(se).map(|(b, s)| [b - 1.96 * s, b + 1.96 * s]).collect::<Vec<_>>())
}

fn cmd_fit(args: &FitArgs, argv: &[String]) -> Result<String, Error> {
    let started = unix_ms();
    let (ds, names) = read_panel_csv_file(&args.data, args.structure)?;
    let spec = FeSpec::new(args.spec, args.structure)?;
    let panel = validate(&ds, &spec)?;
    let options = FitOptions {
        backend: args.backend,
        tol_score: args.tol,
        separation: if args.drop_separated { SeparationPolicy::DropLevels } else { SeparationPolicy::Error },
        ..FitOptions::default()
    };
    eprintln!("fitting {} model, spec {}: {} observations, K = {}", args.family, args.spec, panel.n_obs(), panel.k());
    let fitted = fit(&panel, &spec, args.family, &options)?;
    let report = bias_report(&fitted, args.bandwidth)?;
    let mut results = json!({
        "coefficients": names,
        "beta_hat": fitted.beta,
        "se": report.se_uncorrected,
        "ci95": intervals(&fitted.beta, &report.se_uncorrected),
        "w_hat": matrix(&report.w_hat),
        "v_hat": matrix(&report.v_hat),
        "n_eff": report.n_eff,
        "diagnostics": {
            "converged": fitted.converged,
            "objective": fitted.objective,
            "score_inf_norm": fitted.score_inf_norm,
            "constraint_residual": fitted.constraint_residual(),
            "outer_iterations": fitted.outer_iterations,
            "inner_sweeps": fitted.inner_sweeps,
            "dropped_observations": fitted.dropped(),
            "backend": fitted.backend.to_string(),
        },
    });
    if args.debias {
        results["debias"] = json!({
            "bandwidth": report.h,
            "beta_tilde": report.beta_tilde,
            "se": report.se_debiased,
            "ci95": intervals(&report.beta_tilde, &report.se_debiased),
            "b_alpha": report.b_alpha,
            "b_gamma": report.b_gamma,
            "b_rho": report.b_rho,
        });
    }
    let record = json!({
        "tool": "tripanel",
        "version": env!("CARGO_PKG_VERSION"),
        "command": argv,
        "config": {
            "data": args.data.display().to_string(),
            "structure": args.structure.to_string(),
            "spec": args.spec.to_string(),
            "family": args.family.to_string(),
            "debias": args.debias,
            "bandwidth": args.bandwidth.to_string(),
            "backend": args.backend.to_string(),
            "tol": args.tol,
            "drop_separated": args.drop_separated,
        },
        "timestamps": {"started_unix_ms": started, "finished_unix_ms": unix_ms()},
        "results": results,
    });
    Ok(json::to_canonical_string(&record))
}

fn cmd_simulate(args: &SimArgs, reps_given: bool) -> Result<(), Error> {
    let grid: Vec<usize> = if args.full_grid { vec![60, 120, 240] } else { vec![args.n1] };
    let reps = if args.full_grid && !reps_given { 5000 } else { args.reps };
    let mut output = String::new();
    for n1 in grid {
        let config = SimConfig { bandwidths: args.bandwidths.clone(), ..SimConfig::new(args.dgp, n1, reps, args.seed) };
        config.validate()?;
        eprintln!("simulating DGP {} with N1 = {n1}, {reps} replications", args.dgp);
        let done = AtomicUsize::new(0);
        let step = (reps / 10).max(1);
        let summary = run_with_progress(&config, &|_| {
            let d = done.fetch_add(1, Ordering::Relaxed) + 1;
            if d.is_multiple_of(step) || d == reps {
                eprintln!("  {d}/{reps} replications");
            }
        })?;
        if summary.failures > 0 {
            eprintln!("  {} replications failed and were excluded", summary.failures);
        }
        if !output.is_empty() {
            output.push('\n');
        }
        output.push_str(&summarize_to_table(&summary, args.format));
    }
    match &args.out {
        Some(path) => std::fs::write(path, output).map_err(|e| Error::Io(format!("{}: {e}", path.display()))),
        None => {
            print!("{output}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: could not configure the thread pool: {e}");
        }
    }
    let result = match &cli.command {
        Command::Fit(args) => cmd_fit(args, &argv).map(|out| print!("{out}")),
        Command::Simulate(args) => {
            let reps_given = argv.iter().any(|a| a == "--reps" || a.starts_with("--reps="));
            cmd_simulate(args, reps_given)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
