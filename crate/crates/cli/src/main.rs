use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use scenario_prune_cli::{configure_threads, load_config, run, Experiment, EXIT_ERROR};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    Regress,
    Ocp,
    Reduce,
}

/// Scenario discarding via sparse kernel mean embeddings.
#[derive(Debug, Parser)]
#[command(name = "scenario-prune", version)]
struct Args {
    /// Experiment to run.
    #[arg(value_enum)]
    command: Command,
    /// JSON config document.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let experiment = match args.command {
        Command::Regress => Experiment::Regress,
        Command::Ocp => Experiment::Ocp,
        Command::Reduce => Experiment::Reduce,
    };
    let threads = std::env::var("SCENARIO_PRUNE_THREADS").ok();
    let result = configure_threads(threads.as_deref())
        .and_then(|_| load_config(&args.config))
        .and_then(|mut cfg| {
            if let Some(seed) = args.seed {
                cfg.seed = seed;
            }
            if let Some(out) = args.out {
                cfg.output_dir = out;
            }
            run(experiment, &cfg)
        });
    match result {
        Ok(summary) => {
            for f in &summary.files {
                println!("wrote {}", f.display());
            }
            if !summary.complete {
                eprintln!("warning: a sweep row failed or a solver did not converge; see report.json");
            }
            ExitCode::from(summary.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
