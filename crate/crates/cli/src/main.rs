use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use yieldbench_cli::{run, Command, Overrides};

/// Crop-yield regression benchmark: synthetic data, nine regressors,
/// temporal hold-out evaluation and Shapley attribution.
#[derive(Parser)]
#[command(name = "yieldbench", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let flags = Overrides {
        seed: cli.seed,
        out: cli.out,
    };
    match run(cli.command, &cli.config, &flags) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.exit_code() == 1 {
                eprintln!("usage: yieldbench <synth|train|tune|evaluate|explain|select|plot> --config <path> [--seed N] [--out DIR]");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
