use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use mptp_cli::{run_experiment, Command, Overrides};

/// Most probable transition paths: forward PINN and collocation solvers,
/// bridge sampling, and drift inference.
#[derive(Parser)]
#[command(name = "mptp", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MPTP_LOG", "warn")).init();
    let cli = Cli::parse();
    let ov = Overrides { command: cli.command, out: cli.out, seed: cli.seed };
    match run_experiment(&cli.config, &ov) {
        Ok(o) => {
            println!("{}", o.output_dir.join("result.json").display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
