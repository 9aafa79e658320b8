use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use planelike::cli::{self, CliError};
use planelike::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "planelike",
    about = "Plane-like minimizers of a forced nonlocal phase-transition energy in a periodic medium",
    version
)]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for snapshots, reports and the manifest.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Random seed for ensembles and sampled checks.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = library default); PLANELIKE_THREADS also applies.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Integer direction, e.g. "2,1".
    #[arg(long, global = true, allow_hyphen_values = true)]
    omega: Option<String>,
    /// Real direction for irrational runs, e.g. "1,1.41421".
    #[arg(long, global = true, allow_hyphen_values = true)]
    omega_real: Option<String>,
    /// Fractional exponent override.
    #[arg(long, global = true)]
    s: Option<f64>,
    /// Mesoscopic amplitude override.
    #[arg(long, global = true)]
    eta: Option<f64>,
    /// Strip upper bound override (with the lower bound at 0).
    #[arg(long = "strip", global = true, visible_alias = "M")]
    strip: Option<f64>,
    /// Grid nodes per unit length.
    #[arg(long, global = true)]
    n: Option<u32>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the periodic pure phases and their energies.
    Phases,
    /// Minimal minimizer for one direction with width/ordering/enlargement checks.
    Minimize,
    /// Interface widths across a direction set.
    Sweep,
    /// Ball-energy growth exponents across fractional exponents.
    Scaling,
    /// Small-scale property suite.
    Verify,
    /// Rational approximation of an irrational direction.
    Irrational,
}

fn parse_list<T: std::str::FromStr>(text: &str, key: &str) -> Result<Vec<T>, String> {
    text.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|_| format!("bad {key}: {text}")))
        .collect()
}

fn build_config(cli: &Cli) -> Result<RunConfig, String> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path).map_err(|e| e.to_string())?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.run.out = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.solver.seed = seed;
    }
    if let Some(threads) = cli.threads {
        cfg.run.threads = threads;
    }
    if let Some(omega) = &cli.omega {
        cfg.lattice.omega = parse_list(omega, "--omega")?;
        cfg.lattice.dim = cfg.lattice.omega.len();
        cfg.lattice.m = vec![1; cfg.lattice.dim.saturating_sub(1)];
    }
    if let Some(omega_real) = &cli.omega_real {
        let v: Vec<f64> = parse_list(omega_real, "--omega-real")?;
        cfg.lattice.dim = v.len();
        cfg.lattice.omega = vec![0; v.len()];
        cfg.lattice.omega[0] = 1;
        cfg.lattice.m = vec![1; v.len().saturating_sub(1)];
        cfg.lattice.omega_real = Some(v);
    }
    if let Some(s) = cli.s {
        cfg.model.kernel.s = s;
        cfg.run.s_values = vec![s];
    }
    if let Some(eta) = cli.eta {
        cfg.model.meso.eta = eta;
    }
    if let Some(m) = cli.strip {
        cfg.lattice.strip_lo = 0.0;
        cfg.lattice.strip_hi = m;
    }
    if let Some(n) = cli.n {
        cfg.lattice.n = n;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match build_config(&cli) {
        Ok(cfg) => cfg,
        Err(msg) => {
            eprintln!("config error: {msg}");
            return ExitCode::from(2);
        }
    };
    if let Err(e) = cfg.validate() {
        eprintln!("config error: {e}");
        return ExitCode::from(2);
    }
    let name = match cli.command {
        Command::Phases => "phases",
        Command::Minimize => "minimize",
        Command::Sweep => "sweep",
        Command::Scaling => "scaling",
        Command::Verify => "verify",
        Command::Irrational => "irrational",
    };
    let threads = cli::thread_count(cli.threads, &cfg);
    let result = cli::with_threads(threads, || cli::run_command(name, &cfg));
    match &result {
        Ok(report) => {
            for line in cli::summary_lines(report) {
                println!("{line}");
            }
            if report.failures.is_empty() {
                println!("{name}: all checks passed");
            } else {
                println!("{name}: {} check(s) failed", report.failures.len());
            }
        }
        Err(CliError::Config(e)) => eprintln!("config error: {e}"),
        Err(e) => eprintln!("{name} failed: {e}"),
    }
    ExitCode::from(cli::exit_code(&result) as u8)
}
