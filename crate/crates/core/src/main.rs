use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use isac_pcrb::experiments::{emit_csv, load_config, run_experiment, ExperimentConfig, ExperimentKind, RowStatus};
use isac_pcrb::Error;

/// Directory used for `--out` when it is not given.
const OUT_DIR_ENV: &str = "ISAC_PCRB_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "isac-pcrb",
    version,
    about = "PCRB-optimal transmit design sweeps for MIMO ISAC"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// PCRB against the rate target for the proposed design and both pilot-based benchmarks.
    RateSweep(RunArgs),
    /// PCRB and Monte-Carlo MSE against the KLD between target and user priors.
    KldSweep(RunArgs),
    /// Single-slot optimum against independently solved multi-slot designs.
    Multislot(RunArgs),
    /// Network PCRB under KLD-based and random base-station pairings.
    Association(RunArgs),
    /// MAP estimator MSE against transmit power.
    Mse(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV path [default: $ISAC_PCRB_OUT_DIR/<experiment>.csv, or ./<experiment>.csv].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Use the full user-location grid instead of the desk-scale one.
    #[arg(long)]
    paper_scale: bool,
    /// Record per-point wall time in the `wall_ms` column.
    #[arg(long)]
    timing: bool,
}

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_INFEASIBLE: u8 = 4;

fn config_for(kind: ExperimentKind, args: &RunArgs) -> Result<ExperimentConfig, u8> {
    let mut cfg = match &args.config {
        Some(path) => load_config(path).map_err(|e| {
            eprintln!("error: {e}");
            EXIT_CONFIG
        })?,
        None => ExperimentConfig::defaults(kind),
    };
    if cfg.kind != kind {
        eprintln!(
            "error: config is for `{}` but the `{}` subcommand was run",
            cfg.kind,
            kind.as_str().replace('_', "-")
        );
        return Err(EXIT_CONFIG);
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.paper_scale {
        cfg = cfg.full_scale();
    }
    Ok(cfg)
}

fn run(kind: ExperimentKind, args: &RunArgs) -> Result<(), u8> {
    let cfg = config_for(kind, args)?;
    let out = args.out.clone().unwrap_or_else(|| {
        let dir = std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from("."), PathBuf::from);
        dir.join(format!("{kind}.csv"))
    });
    let rows = run_experiment(&cfg, args.timing).map_err(|e| {
        eprintln!("error: {e}");
        match e {
            Error::Config(_) => EXIT_CONFIG,
            _ => EXIT_NUMERICAL,
        }
    })?;
    emit_csv(&rows, &out).map_err(|e| {
        eprintln!("error: {e}");
        EXIT_IO
    })?;
    let failed = rows
        .iter()
        .filter(|r| matches!(r.status, RowStatus::NonConvergence | RowStatus::Failed(_)))
        .count();
    let infeasible = rows.iter().filter(|r| r.status == RowStatus::Infeasible).count();
    for r in &rows {
        if let RowStatus::Failed(msg) = &r.status {
            eprintln!("warning: {} at x = {}: {msg}", r.experiment, r.x);
        }
    }
    eprintln!(
        "wrote {} rows to {} ({failed} failed, {infeasible} infeasible)",
        rows.len(),
        out.display()
    );
    if failed > 0 {
        Err(EXIT_NUMERICAL)
    } else if infeasible > 0 {
        Err(EXIT_INFEASIBLE)
    } else {
        Ok(())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::RateSweep(a) => (ExperimentKind::RateSweep, a),
        Command::KldSweep(a) => (ExperimentKind::KldSweep, a),
        Command::Multislot(a) => (ExperimentKind::Multislot, a),
        Command::Association(a) => (ExperimentKind::Association, a),
        Command::Mse(a) => (ExperimentKind::Mse, a),
    };
    match run(kind, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => ExitCode::from(code),
    }
}
