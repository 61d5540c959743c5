use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spr_cli::{cmd_bench, cmd_grid, cmd_inspect, cmd_relax, cmd_train, CliError, Config};

/// Structured perspective regularization: training, pruning and
/// relaxation experiments.
#[derive(Parser)]
#[command(name = "spr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the reference and, per `mode`, penalize, prune and fine-tune.
    Train { config: PathBuf },
    /// Check the relaxation ordering on generated or given instances.
    Relax { config: PathBuf },
    /// Run the pipeline over the (lambda, alpha) grid.
    Grid { config: PathBuf },
    /// Time penalized against plain epochs.
    Bench { config: PathBuf },
    /// Print layer statistics and entity diagnostics of a checkpoint.
    Inspect {
        checkpoint: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
    },
}

fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Train { config } => cmd_train(&Config::load(&config)?).map(|o| o.summary()),
        Command::Relax { config } => cmd_relax(&Config::load(&config)?).map(|o| {
            let s = o.summary;
            format!(
                "{} instances: ordering holds on {}, perspective strictly tighter on {}, max projection gap {:.2e}",
                s.instances, s.sandwich_ok, s.pr_tighter, s.max_projection_gap
            )
        }),
        Command::Grid { config } => cmd_grid(&Config::load(&config)?).map(|o| spr_core::pipeline::grid_csv(&o.cells)),
        Command::Bench { config } => cmd_bench(&Config::load(&config)?).map(|o| {
            let r = o.result;
            format!("plain {:.4}s spr {:.4}s ratio {:.3}", r.plain_mean, r.spr_mean, r.ratio)
        }),
        Command::Inspect { checkpoint, alpha } => cmd_inspect(&checkpoint, alpha),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(text) => {
            println!("{}", text.trim_end());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
