//! `icas-audit`: simulate a toy target, score membership attacks, evaluate
//! them, fit scaling trends and convert full-distribution dumps.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use icas_audit::attacks::AttackConfig;

use crate::config::{Overrides, RunConfig};
use crate::error::CliError;

const THREADS_ENV: &str = "ICAS_AUDIT_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "icas-audit",
    version,
    about = "Membership-inference auditing for conditional autoregressive image models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a toy world, train the table model and write member / hold-out records.
    Simulate,
    /// Score both record files with every configured attack.
    Score,
    /// Compute AUROC, TPR at the FPR budgets and ASR for every attack.
    Eval,
    /// Fit AUROC against model size from an `x,auroc` CSV.
    Fit,
    /// Turn full-distribution records into canonical records.
    Convert,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// TOML run configuration; built-in defaults apply without one.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Attack spec such as `icas`, `icas:adaptive=false`, `mink:k=20`; replaces the configured list.
    #[arg(long = "attack", global = true)]
    attacks: Vec<AttackConfig>,
    /// FPR budget for TPR@FPR; replaces the configured list.
    #[arg(long = "fpr", global = true)]
    fpr: Vec<f64>,
    #[arg(long, global = true)]
    calib_fraction: Option<f64>,
    /// Comma-separated scale list, or `all`.
    #[arg(long, global = true)]
    scales: Option<String>,
    /// Only print warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,
}

fn init_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} = `{value}` must be a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("{THREADS_ENV}: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    let mut cfg = match &cli.common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let c = cli.common;
    cfg.apply(Overrides {
        seed: c.seed,
        out_dir: c.out_dir,
        attacks: c.attacks,
        fpr: c.fpr,
        calibration_fraction: c.calib_fraction,
        scales: c.scales,
    });
    match cli.command {
        Command::Simulate => {
            let out = commands::simulate(&cfg)?;
            println!("param_count = {}", out.param_count);
            println!("final_loss = {}", out.final_loss);
            println!("manifest = {}", out.manifest.display());
        }
        Command::Score => {
            for path in commands::score(&cfg)? {
                println!("{}", path.display());
            }
        }
        Command::Eval => {
            let rows = commands::eval(&cfg)?;
            print!("{}", output::render_report(&rows, &cfg.eval.fpr));
        }
        Command::Fit => print!("{}", output::render_fit(&commands::fit(&cfg)?)),
        Command::Convert => println!("{}", commands::convert(&cfg)?.display()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = if cli.common.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
