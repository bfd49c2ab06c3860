use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use sparsim_cli::commands::OUT_ENV;
use sparsim_cli::config::ModeSpec;
use sparsim_cli::{execute, load_config, Command, Overrides, Status};

#[derive(Parser)]
#[command(name = "sparsim", version, about = "TopK SGD with error feedback: simulation runs, sweeps and bound reports")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// Experiment config (TOML)
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Override the config's master seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (overrides SPARSIM_OUT and the config)
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for parallel mode
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[arg(long, global = true, value_enum)]
    mode: Option<Mode>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Run a single configuration and write its trace
    Run,
    /// Run every point of the config's sweep axes
    Sweep,
    /// Record the per-step xi series
    ValidateAssumption,
    /// Residual-to-gradient norm ratios of TopK over a range of K
    NormCurve,
    /// Loss curves for K at 0.1%, 1%, 10% and 100% of n
    ConvergenceSweep,
    /// Evaluate the convex and non-convex bounds with input provenance
    Bounds,
    /// Run with conservation and gap-recursion checks
    CheckInvariants,
}

#[derive(ValueEnum, Clone, Copy)]
enum Mode {
    Sequential,
    Parallel,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cmd = match cli.command {
        Cmd::Run => Command::Run,
        Cmd::Sweep => Command::Sweep,
        Cmd::ValidateAssumption => Command::ValidateAssumption,
        Cmd::NormCurve => Command::NormCurve,
        Cmd::ConvergenceSweep => Command::ConvergenceSweep,
        Cmd::Bounds => Command::Bounds,
        Cmd::CheckInvariants => Command::CheckInvariants,
    };
    let Some(config) = cli.config else {
        eprintln!("error: --config <path> is required");
        return ExitCode::from(Status::ConfigError as u8);
    };
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out,
        threads: cli.threads,
        mode: cli.mode.map(|m| match m {
            Mode::Sequential => ModeSpec::Sequential,
            Mode::Parallel => ModeSpec::Parallel,
        }),
        env_out: std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from),
    };
    let result = load_config(&config, overrides.seed).and_then(|cfg| execute(cmd, &cfg, &overrides));
    match result {
        Ok(report) => {
            for line in &report.lines {
                println!("{line}");
            }
            println!("outputs in {}", report.out_dir.display());
            ExitCode::from(report.status as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.status() as u8)
        }
    }
}
