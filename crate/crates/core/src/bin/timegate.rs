use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use timegate::shell::commands::{exit_code_for, run, Command, Invocation};
use timegate::shell::exit;
use timegate::shell::Config;

/// Time-boxed promotion gates with partial-evaluation calibration.
#[derive(Debug, Parser)]
#[command(name = "timegate", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// YAML configuration.
    #[arg(long)]
    config: PathBuf,
    /// Seed for every random draw.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON-lines metrics file; overrides `io.metrics`.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Output directory; overrides `io.out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run to gate (`gate` only).
    #[arg(long)]
    run_id: Option<String>,
    /// Run whose full metrics are the relative-gate baseline.
    #[arg(long)]
    baseline: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match Config::load(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("timegate: {e}");
            return ExitCode::from(exit::USAGE as u8);
        }
    };
    let inv = Invocation {
        config,
        base_dir: cli.config.parent().map(PathBuf::from).unwrap_or_default(),
        seed: cli.seed,
        metrics: cli.metrics,
        out: cli.out,
        run_id: cli.run_id,
        baseline: cli.baseline,
    };
    match run(cli.command, &inv) {
        Ok(out) => {
            println!("{}", out.summary);
            ExitCode::from(out.exit_code as u8)
        }
        Err(e) => {
            eprintln!("timegate: {e}");
            ExitCode::from(exit_code_for(&e) as u8)
        }
    }
}
