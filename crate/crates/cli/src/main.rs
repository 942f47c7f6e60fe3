use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use fbmfg_cli::runner::{parse_horizons, row_exit_code, EXIT_ERROR};
use fbmfg_cli::{run, sweep, CliError, RunConfig};

#[derive(Parser)]
#[command(name = "fbmfg", version, about = "Picard solver for backward-forward parabolic systems")]
struct Cli {
    /// Output directory; overrides `output.dir` of the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one configuration.
    Run { config: PathBuf },
    /// Solve the configuration for each horizon of a list.
    Sweep {
        config: PathBuf,
        /// Comma-separated horizons.
        #[arg(long = "T-list")]
        t_list: String,
    },
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("FBMFG_THREADS") else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Config(format!("FBMFG_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    init_threads()?;
    match cli.command {
        Command::Run { config } => {
            let config = RunConfig::load(&config)?;
            let summary = run(&config, cli.out.as_deref())?;
            let r = &summary.manifest.result;
            println!("{} after {} iterations (exit {})", r.status, r.iterations, summary.exit_code);
            if let Some(note) = &summary.manifest.counterexample {
                println!("{}", note.note);
            }
            Ok(summary.exit_code)
        }
        Command::Sweep { config, t_list } => {
            let config = RunConfig::load(&config)?;
            let horizons = parse_horizons(&t_list)?;
            for row in sweep(&config, &horizons, cli.out.as_deref())? {
                println!("T = {:.10e}: converged = {}, exit {}", row.horizon, row.converged, row_exit_code(&row));
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
