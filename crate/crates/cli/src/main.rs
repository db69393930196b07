//! `vpot` command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vpot::harness::{
    bundled, bundled_names, bundled_text, exit, ot_distance, report, run_certify, simulate, twin, CertifyOptions,
    HarnessError, Manifest, OtMethod, ScenarioConfig, Status,
};
use vpot::ot::{DEFAULT_SINKHORN_MAX_ITERS, DEFAULT_SINKHORN_REGULARIZATION, DEFAULT_SINKHORN_TOL};

#[derive(Parser)]
#[command(name = "vpot", version, about = "Twin simulations and Wasserstein stability checks for Vlasov-Poisson")]
struct Cli {
    /// Worker threads (default: all cores). Output does not depend on this.
    #[arg(long, global = true, env = "VPOT_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one particle simulation and dump snapshots, densities and fields.
    Simulate(RunArgs),
    /// Run a twin pair and record the stability ledger, then certify it.
    Twin(RunArgs),
    /// Wasserstein-2 distance between two cloud files.
    Ot(OtArgs),
    /// Certify a records file.
    Certify(CertifyArgs),
    /// Verify a manifest and write a consolidated report with plot-ready tables.
    Report(ReportArgs),
    /// List the bundled scenarios, or print one as TOML.
    Scenarios { name: Option<String> },
}

#[derive(Args)]
struct RunArgs {
    /// Scenario config file (TOML).
    #[arg(required_unless_present = "scenario", conflicts_with = "scenario")]
    config: Option<PathBuf>,
    /// Use a bundled scenario instead of a config file.
    #[arg(long)]
    scenario: Option<String>,
    /// Output directory.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct OtArgs {
    a: PathBuf,
    b: PathBuf,
    /// Exact solver (default).
    #[arg(long, conflicts_with = "sinkhorn")]
    exact: bool,
    /// Entropic solver.
    #[arg(long)]
    sinkhorn: bool,
    /// Entropic regularization, in units of the squared-distance cost.
    #[arg(long, default_value_t = DEFAULT_SINKHORN_REGULARIZATION, requires = "sinkhorn")]
    reg: f64,
    #[arg(long, default_value_t = DEFAULT_SINKHORN_MAX_ITERS, requires = "sinkhorn")]
    max_iters: usize,
    /// Relative marginal violation at which the entropic solver stops.
    #[arg(long, default_value_t = DEFAULT_SINKHORN_TOL, requires = "sinkhorn")]
    tol: f64,
    /// Write the transport plan (`i j mass` per line) here.
    #[arg(long)]
    plan_out: Option<PathBuf>,
}

#[derive(Args)]
struct CertifyArgs {
    records: PathBuf,
    /// Fit the log-Lipschitz and Gronwall constants and check envelope containment.
    #[arg(long)]
    fit_constants: bool,
    /// Restrict the gap inequality check to this time window.
    #[arg(long, num_args = 2, value_names = ["T0", "T1"], allow_negative_numbers = true)]
    window: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.05)]
    prop31_tol: f64,
    /// Required fraction of in-window steps satisfying the gap inequality.
    #[arg(long, default_value_t = 0.99)]
    pass_fraction: f64,
    /// The twins used different field models; skip envelope containment.
    #[arg(long)]
    no_containment: bool,
    /// Output directory (default: the records file's directory).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    manifest: PathBuf,
    /// Output directory (default: the manifest's directory).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

fn load_config(args: &RunArgs) -> Result<ScenarioConfig, HarnessError> {
    match (&args.config, &args.scenario) {
        (_, Some(name)) => bundled(name).unwrap_or_else(|| {
            Err(HarnessError::Usage(format!("unknown scenario {name:?} (bundled: {})", bundled_names().join(", "))))
        }),
        (Some(path), None) => {
            let text = std::fs::read_to_string(path)
                .map_err(|source| HarnessError::Io { path: path.clone(), source })?;
            ScenarioConfig::parse(&text, &path.display().to_string())
        }
        (None, None) => Err(HarnessError::Usage("a config file or --scenario is required".into())),
    }
}

fn print_verdicts(m: &Manifest) {
    for v in &m.verdicts {
        println!("{:<13} {:<4} {}", v.check, v.status.label(), v.detail);
    }
    for (k, v) in &m.constants {
        println!("{k} = {v:e}");
    }
    let failed = m.verdicts.iter().any(|v| v.status == Status::Fail);
    println!("verdict: {}", if failed { "FAIL" } else { "PASS" });
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn run(cli: Cli) -> Result<i32, HarnessError> {
    match cli.command {
        Command::Simulate(args) => {
            let m = simulate(&load_config(&args)?, &args.out)?;
            print_verdicts(&m);
            Ok(m.exit_code())
        }
        Command::Twin(args) => {
            let m = twin(&load_config(&args)?, &args.out)?;
            print_verdicts(&m);
            Ok(m.exit_code())
        }
        Command::Ot(args) => {
            let method = if args.sinkhorn {
                OtMethod::Sinkhorn { regularization: args.reg, max_iters: args.max_iters, tol: args.tol }
            } else {
                OtMethod::Exact
            };
            let o = ot_distance(&args.a, &args.b, method, args.plan_out.as_deref())?;
            println!("{:e}", o.distance);
            Ok(exit::PASS)
        }
        Command::Certify(args) => {
            let window = args.window.map(|w| (w[0], w[1]));
            let opts = CertifyOptions {
                fit_constants: args.fit_constants,
                window,
                prop31_tolerance: args.prop31_tol,
                pass_fraction: args.pass_fraction,
                containment: !args.no_containment,
                ..CertifyOptions::default()
            };
            let out = args.out.unwrap_or_else(|| parent_dir(&args.records));
            let (m, cert) = run_certify(&args.records, &opts, &out)?;
            print!("{}", cert.summary);
            Ok(m.exit_code())
        }
        Command::Report(args) => {
            let m = report(&args.manifest, args.out.as_deref())?;
            let out = args.out.unwrap_or_else(|| parent_dir(&args.manifest));
            println!("{}", out.join("report.txt").display());
            Ok(m.exit_code())
        }
        Command::Scenarios { name: None } => {
            for n in bundled_names() {
                println!("{n}");
            }
            Ok(exit::PASS)
        }
        Command::Scenarios { name: Some(name) } => match bundled_text(&name) {
            Some(text) => {
                print!("{text}");
                Ok(exit::PASS)
            }
            None => Err(HarnessError::Usage(format!("unknown scenario {name:?}"))),
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("vpot: {e}");
            return ExitCode::from(exit::USAGE as u8);
        }
    }
    let code = run(cli).unwrap_or_else(|e| {
        eprintln!("vpot: {e}");
        e.exit_code()
    });
    ExitCode::from(code as u8)
}
