//! Command-line front end: dataset generation, training, evaluation,
//! ablations, retention-ratio sweeps, analysis exports and engine
//! self-checks.
//!
//! Exit codes: 0 success, 1 I/O error, 2 usage error, 3 numeric failure.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod error;
mod io;

use commands::{AblateArgs, AnalyzeArgs, EvalArgs, GenDataArgs, SweepArgs, TrainArgs};

#[derive(Parser)]
#[command(
    name = "pfdfl",
    version,
    about = "Dual-encoder hallucination detection workbench"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic matched-pair dataset (JSONL + vocabulary sidecar)
    GenData {
        /// Output JSONL path; the vocabulary sidecar lands next to it
        #[arg(long)]
        out: PathBuf,
        /// Number of matched pairs (two examples each)
        #[arg(long, default_value_t = 4000)]
        pairs: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Vocabulary size in words (reserved ids come on top)
        #[arg(long, default_value_t = 4096)]
        vocab: usize,
        #[arg(long, default_value_t = 12)]
        knowledge_len: usize,
        #[arg(long, default_value_t = 8)]
        response_len: usize,
        /// Response words replaced with out-of-knowledge words (0 = null-signal control)
        #[arg(long, default_value_t = 3)]
        corrupt: usize,
        /// Input template: qa | summary
        #[arg(long, default_value = "qa")]
        template: String,
    },
    /// Train one model; writes checkpoints, run_record.json and metrics.csv
    Train {
        /// JSON run configuration (missing sections take defaults)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset JSONL (vocabulary sidecar expected next to it)
        #[arg(long)]
        data: PathBuf,
        /// Output directory for this run
        #[arg(long)]
        out: PathBuf,
        /// baseline | pf | dfl | pf_dfl (overrides the config file)
        #[arg(long)]
        variant: Option<String>,
        /// Feature retention ratio (overrides the config file)
        #[arg(long)]
        alpha: Option<f64>,
        /// Seed (overrides the config file)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on a dataset; prints metrics as JSON
    Eval {
        /// Checkpoint file; its run's config.json must sit next to it
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Train all four variants with one seed; emit a metrics CSV
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train once per retention ratio; emit a metrics CSV
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated ratios, e.g. "0.8,0.5,0.2,0.05,0.01"
        #[arg(long)]
        ratios: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export analysis tables from a finished run or a config
    Analyze {
        #[command(subcommand)]
        what: AnalyzeCommand,
    },
    /// Verify autodiff gradients against central finite differences
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 20260810)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Per-layer feature-consistency table (layer,unique,core,ratio)
    Consistency {
        /// run_record.json from a training run
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Final-epoch fusion weights (layer,weight)
    Weights {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parameter/FLOP accounting for all four variants
    Complexity {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Sequence length for the FLOP estimate (default: max_len)
        #[arg(long)]
        seq_len: Option<usize>,
    },
}

fn run(cli: Cli) -> error::Result<()> {
    match cli.command {
        Command::GenData {
            out,
            pairs,
            seed,
            vocab,
            knowledge_len,
            response_len,
            corrupt,
            template,
        } => commands::gen_data(&GenDataArgs {
            out,
            pairs,
            seed,
            vocab,
            knowledge_len,
            response_len,
            corrupt,
            template,
        }),
        Command::Train {
            config,
            data,
            out,
            variant,
            alpha,
            seed,
        } => commands::train_cmd(&TrainArgs {
            config,
            data,
            out,
            variant,
            alpha,
            seed,
        }),
        Command::Eval { checkpoint, data } => commands::eval_cmd(&EvalArgs { checkpoint, data }),
        Command::Ablate { config, data, out } => {
            commands::ablate_cmd(&AblateArgs { config, data, out })
        }
        Command::Sweep {
            config,
            data,
            ratios,
            out,
        } => commands::sweep_cmd(&SweepArgs {
            config,
            data,
            ratios,
            out,
        }),
        Command::Analyze { what } => commands::analyze_cmd(&match what {
            AnalyzeCommand::Consistency { run, out } => AnalyzeArgs::Consistency { run, out },
            AnalyzeCommand::Weights { run, out } => AnalyzeArgs::Weights { run, out },
            AnalyzeCommand::Complexity {
                config,
                out,
                seq_len,
            } => AnalyzeArgs::Complexity {
                config,
                out,
                seq_len,
            },
        }),
        Command::Gradcheck { trials, seed } => commands::gradcheck_cmd(trials, seed),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
