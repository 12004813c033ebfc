use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use slem::pipeline::{self, RunOptions};
use slem::SlemError;

#[derive(Parser)]
#[command(name = "slem", version, about = "Fit log-Gaussian Cox processes on regular grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON configuration for the command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (default: current directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for replicate-level parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Also write square-root rasters for display.
    #[arg(long, global = true)]
    sqrt_display: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Bin a point CSV into a count raster.
    Grid,
    /// Simulate datasets from the model.
    Simulate,
    /// Fit the model to a count raster.
    Fit,
    /// Posterior variances and intensities from a fit.
    Predict,
    /// Held-out log score of a refit on a random split.
    Score,
    /// Build temporal covariates from a minute stack.
    Covariates,
}

fn run_with<C, R>(path: &Path, opts: &RunOptions, f: fn(&C, &Path, &RunOptions) -> slem::Result<R>) -> slem::Result<String>
where
    C: DeserializeOwned,
    R: Serialize,
{
    let (cfg, base) = pipeline::load_config::<C>(path)?;
    let out = f(&cfg, &base, opts)?;
    Ok(serde_json::to_string_pretty(&out)?)
}

fn run(cli: &Cli) -> slem::Result<String> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| SlemError::Config("--config is required".into()))?;
    let opts = RunOptions {
        out_dir: cli.out.clone().unwrap_or_else(|| PathBuf::from(".")),
        seed: cli.seed,
        sqrt_display: cli.sqrt_display,
    };
    match cli.command {
        Command::Grid => run_with(path, &opts, pipeline::cmd_grid),
        Command::Simulate => run_with(path, &opts, pipeline::cmd_simulate),
        Command::Fit => run_with(path, &opts, pipeline::cmd_fit),
        Command::Predict => run_with(path, &opts, pipeline::cmd_predict),
        Command::Score => run_with(path, &opts, pipeline::cmd_score),
        Command::Covariates => run_with(path, &opts, pipeline::cmd_covariates),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
