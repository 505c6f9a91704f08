//! Command-line front end.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use super::{run_experiment, Config};
use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_FAILURE: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "ergowave", version, about = "Stochastic damped wave simulator and ergodicity checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the noise and damping hypotheses.
    Validate(Common),
    /// Simulate one trajectory and write a snapshot.
    Simulate(Common),
    /// Synchronous-coupling decay curve and d-small certificate.
    Couple(Common),
    /// Drift verification and long-run moments.
    Lyapunov(Common),
    /// Empirical W_d decay toward a long-run reference.
    Mixing(Common),
    /// Rate toolkit checks, W_n estimates and certificate.
    #[command(name = "ratekit-check")]
    RatekitCheck(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a key, e.g. `--set phi.lambda=3`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    n: Option<u32>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Exit nonzero when the report flags a violation.
    #[arg(long, num_args = 0..=1, default_value_t = false, default_missing_value = "true", action = clap::ArgAction::Set)]
    strict: bool,
    /// Output directory (default `out/<experiment>`).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn resolve(common: &Common) -> Result<Config, Error> {
    let mut cfg = Config::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    for kv in &common.set {
        cfg.set_pair(kv)?;
    }
    if let Some(n) = common.n {
        cfg.set("n", &n.to_string())?;
    }
    if let Some(g) = common.gamma {
        cfg.set("gamma", &g.to_string())?;
    }
    Ok(cfg)
}

fn configure_threads() {
    if let Some(n) = std::env::var("ERGOWAVE_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let (name, common) = match &cli.command {
        Command::Validate(c) => ("validate", c),
        Command::Simulate(c) => ("simulate", c),
        Command::Couple(c) => ("couple", c),
        Command::Lyapunov(c) => ("lyapunov", c),
        Command::Mixing(c) => ("mixing", c),
        Command::RatekitCheck(c) => ("ratekit-check", c),
    };
    let cfg = match resolve(common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("usage error: {e}");
            return EXIT_USAGE;
        }
    };
    configure_threads();
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("out").join(name));
    match run_experiment(name, &cfg, &out) {
        Ok(outcome) => {
            print!("{}", outcome.summary);
            println!("artifacts in {}", out.display());
            for v in &outcome.violations {
                println!("violation: {v}");
            }
            if common.strict && !outcome.violations.is_empty() {
                EXIT_VIOLATION
            } else {
                EXIT_OK
            }
        }
        Err(Error::Config(m)) => {
            eprintln!("usage error: {m}");
            EXIT_USAGE
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}
