use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lorentzfm::commands::{self, EvaluateArgs, ExplainArgs, PreprocessArgs, SynthArgs, TrainArgs};
use lorentzfm::data::Split;
use lorentzfm::explain::InstanceSpec;
use lorentzfm::model::ModelKind;
use lorentzfm::{exec, Execution, Result};

/// Hyperbolic factorization machines for recommendation and CTR prediction.
#[derive(Debug, Parser)]
#[command(name = "lorentzfm", version)]
struct Cli {
    /// Overrides the seed in the schema or training config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Accepted for scripts. Every run is reproducible for a fixed seed
    /// whatever the thread count.
    #[arg(long, global = true)]
    deterministic: bool,

    /// Run all data-parallel work on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Turn a raw delimited file into a dataset directory.
    Preprocess {
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `min_freq` from the schema.
        #[arg(long)]
        min_freq: Option<usize>,
    },
    /// Train a model into a run directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `model` from the config (lorentzfm or fm).
        #[arg(long)]
        model: Option<ModelKind>,
    },
    /// Score a checkpoint on the validation or test split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Directory for the metrics files (default: next to the checkpoint).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Keep each user's validation items among test candidates.
        #[arg(long)]
        keep_val_candidates: bool,
    },
    /// Export the pairwise interaction matrix of one instance.
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// pair:USER,ITEM | row:SPLIT:INDEX | tokens:FIELD=TOKEN,...
        #[arg(long)]
        instance: InstanceSpec,
        #[arg(long)]
        out: PathBuf,
        /// Output file stem.
        #[arg(long, default_value = "heatmap")]
        name: String,
    },
    /// Summarise a checkpoint or a dataset directory.
    Inspect { target: PathBuf },
    /// Generate a synthetic CTR dataset with planted pairwise structure.
    Synth {
        /// TOML file with generator settings.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    exec::configure_threads(cli.threads)?;
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    if cli.deterministic {
        log::debug!("deterministic mode requested");
    }
    match cli.command {
        Command::Preprocess {
            schema,
            input,
            out,
            min_freq,
        } => {
            let stats = commands::cmd_preprocess(&PreprocessArgs {
                schema,
                input,
                out,
                seed: cli.seed,
                min_freq,
            })?;
            print!("{}", stats.to_text());
        }
        Command::Train {
            config,
            data,
            out,
            model,
        } => {
            let outcome = commands::cmd_train(&TrainArgs {
                config,
                data,
                out: out.clone(),
                seed: cli.seed,
                model,
                exec,
            })?;
            let best = outcome.history.best().expect("at least one epoch");
            println!(
                "trained {} epochs; best epoch {} with validation {} {:.6}; run in {}",
                outcome.history.records.len(),
                best.epoch,
                outcome.history.monitor,
                best.monitor,
                out.display()
            );
        }
        Command::Evaluate {
            checkpoint,
            data,
            split,
            out,
            keep_val_candidates,
        } => {
            let report = commands::cmd_evaluate(&EvaluateArgs {
                checkpoint,
                data,
                split,
                out,
                keep_val_candidates,
                exec,
            })?;
            print!("{}", report.to_text());
        }
        Command::Explain {
            checkpoint,
            data,
            instance,
            out,
            name,
        } => {
            let export = commands::cmd_explain(&ExplainArgs {
                checkpoint,
                data,
                instance,
                out: out.clone(),
                name: name.clone(),
            })?;
            for w in &export.warnings {
                eprintln!("warning: {w}");
            }
            println!("wrote {}/{name}.tsv and .json", out.display());
        }
        Command::Inspect { target } => print!("{}", commands::cmd_inspect(&target)?),
        Command::Synth { spec, out } => {
            let stats = commands::cmd_synth(&SynthArgs {
                spec,
                out,
                seed: cli.seed.unwrap_or(0),
            })?;
            print!("{}", stats.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
