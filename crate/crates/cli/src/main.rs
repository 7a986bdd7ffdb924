mod commands;
mod config;
mod manifest;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use scirec::corpus::PreprocessOptions;
use scirec::encoder::EncoderKind;
use scirec::evaluator::SplitMode;
use serde_json::json;

use crate::commands::{PreprocessArgs, TrainOverrides};

/// Collaborative filtering for scientific articles with text encoders.
#[derive(Parser)]
#[command(name = "scirec", version, about)]
struct Cli {
    /// Log progress to stderr (-vv for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn a raw dataset directory into a corpus archive.
    Preprocess {
        #[arg(long)]
        raw: PathBuf,
        /// citeulike-a, citeulike-t, generic, or a format manifest JSON file.
        #[arg(long, default_value = "citeulike-a")]
        format: String,
        #[arg(long, default_value_t = 200)]
        max_length: usize,
        #[arg(long, default_value_t = 5)]
        min_count: usize,
        #[arg(long, default_value_t = 5)]
        backfill_k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a five-fold split plan.
    Split {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        mode: SplitMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model on one fold.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        encoder: Option<EncoderKind>,
        #[arg(long)]
        fold: Option<usize>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Single-threaded gradients; bitwise reproducible.
        #[arg(long)]
        serial: bool,
    },
    /// Recall@M on a fold's test set.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Top-N unseen items for a user.
    Recommend {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        user: usize,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value = "recommend")]
        out: PathBuf,
    },
    /// Most likely tags for a new document.
    PredictTags {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "")]
        title: String,
        #[arg(long = "abstract", default_value = "")]
        abstract_text: String,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value = "predict-tags")]
        out: PathBuf,
    },
    /// Run the encoder × length × mode comparison.
    Grid {
        #[arg(long)]
        config: PathBuf,
    },
    /// Merge recall curve CSVs into one table and optionally an SVG chart.
    ExportCurves {
        /// label=path.csv, repeatable.
        #[arg(long = "input", required = true)]
        inputs: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Preprocess {
            raw,
            format,
            max_length,
            min_count,
            backfill_k,
            out,
        } => commands::preprocess(&PreprocessArgs {
            raw,
            format,
            options: PreprocessOptions {
                max_length,
                min_count,
                backfill_k,
            },
            out,
        }),
        Command::Split { corpus, mode, seed, out } => commands::split(&corpus, mode, seed, &out),
        Command::Train {
            config,
            max_steps,
            seed,
            lambda,
            encoder,
            fold,
            output_dir,
            serial,
        } => commands::train(
            &config,
            &TrainOverrides {
                max_steps,
                seed,
                lambda,
                encoder,
                fold,
                output_dir,
                serial,
            },
        ),
        Command::Evaluate {
            checkpoint,
            corpus,
            split,
            fold,
            out,
        } => commands::evaluate(&checkpoint, &corpus, &split, fold, &out),
        Command::Recommend {
            checkpoint,
            corpus,
            user,
            n,
            out,
        } => commands::recommend(&checkpoint, &corpus, user, n, &out),
        Command::PredictTags {
            checkpoint,
            corpus,
            title,
            abstract_text,
            k,
            out,
        } => commands::predict_tags(&checkpoint, &corpus, &title, &abstract_text, k, &out),
        Command::Grid { config } => commands::grid(&config),
        Command::ExportCurves { inputs, out, svg } => commands::export_curves(&inputs, &out, svg.as_deref()),
    }
}

/// Stable error tag: the library's own kind when one is in the chain.
fn error_kind(e: &anyhow::Error) -> &'static str {
    e.chain()
        .find_map(|c| c.downcast_ref::<scirec::Error>())
        .map_or("cli", scirec::Error::kind)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let record = json!({ "error": { "kind": "usage", "message": e.kind().to_string(), "detail": e.to_string() } });
            eprintln!("{record}");
            return ExitCode::from(2);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = json!({ "error": { "kind": error_kind(&e), "message": format!("{e:#}") } });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}
