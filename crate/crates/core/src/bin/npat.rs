use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use npat::harness::{run_eval, run_landscape, run_sweep, run_train, ExperimentConfig};

#[derive(Parser)]
#[command(name = "npat", version, about = "Null-space projected adversarial training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the standard model and the configured method.
    Train(Common),
    /// Evaluate a saved model on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Write loss-landscape grids for a saved model.
    Landscape {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Run every method × β × hidden-size combination and write summary.csv.
    Sweep(Common),
}

fn load(common: &Common) -> npat::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> npat::Result<()> {
    match cli.command {
        Command::Train(common) => {
            let cfg = load(&common)?;
            let (std_run, run) = run_train(&cfg)?;
            println!(
                "standard: clean {:.4} pgd {:.4}",
                std_run.eval.clean_error, std_run.eval.pgd_error
            );
            println!(
                "{}: clean {:.4} pgd {:.4}",
                cfg.train.method.name(),
                run.eval.clean_error,
                run.eval.pgd_error
            );
        }
        Command::Eval { common, model } => {
            let report = run_eval(&load(&common)?, &model)?;
            println!("clean {:.4} pgd {:.4}", report.clean_error, report.pgd_error);
        }
        Command::Landscape { common, model } => {
            for path in run_landscape(&load(&common)?, &model)? {
                println!("{}", path.display());
            }
        }
        Command::Sweep(common) => {
            let cfg = load(&common)?;
            let rows = run_sweep(&cfg)?;
            println!("{} runs, summary in {}", rows.len(), cfg.output_dir.join("summary.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
