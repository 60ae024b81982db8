//! Command-line front end: train, predict, evaluate, inspect, and a k-fold
//! driver. Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric
//! failure.

mod commands;
mod config;
mod records;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use relmetric::Error;

#[derive(Parser)]
#[command(
    name = "relmetric",
    about = "Joint entity and relation extraction with a relation-metric table-filling network",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
pub struct ConfigArgs {
    /// Flat key=value configuration file (TOML); flags override file values,
    /// file values override the built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    char_emb_size: Option<usize>,
    #[arg(long)]
    char_repr_size: Option<usize>,
    #[arg(long)]
    pos_emb_size: Option<usize>,
    #[arg(long)]
    dep_emb_size: Option<usize>,
    #[arg(long)]
    word_emb_size: Option<usize>,
    #[arg(long)]
    context_size: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    word_grad_scale: Option<f64>,
    #[arg(long)]
    batch_norm: Option<bool>,
    #[arg(long)]
    lr_half_life: Option<f64>,
    /// Pretrained word embeddings (whitespace-separated text format).
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write the checkpoint, metrics log, and effective
    /// configuration.
    Train {
        /// Training corpus.
        #[arg(long)]
        corpus: PathBuf,
        /// Corpus layout: canonical, conll04, or ade.
        #[arg(long, default_value = "canonical")]
        format: String,
        /// Development corpus for model selection.
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long, default_value = "canonical")]
        dev_format: String,
        /// Dependency-parse sidecar for the training corpus.
        #[arg(long)]
        parses: Option<PathBuf>,
        /// Dependency-parse sidecar for the dev corpus.
        #[arg(long)]
        dev_parses: Option<PathBuf>,
        /// Output directory.
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Skip unreadable records instead of aborting.
        #[arg(long)]
        skip_bad_records: bool,
        /// Comma-separated seed list for a multi-seed run (overrides the
        /// single seed; one subdirectory per run plus a summary).
        #[arg(long)]
        seeds: Option<String>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Decode entities and relations for a corpus with a trained model.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "canonical")]
        format: String,
        #[arg(long)]
        parses: Option<PathBuf>,
        #[arg(long, default_value = "run")]
        out: PathBuf,
        #[arg(long)]
        skip_bad_records: bool,
    },
    /// Score a predictions file against a gold corpus.
    Evaluate {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long, default_value = "canonical")]
        format: String,
        /// Predictions file produced by `predict`.
        #[arg(long)]
        pred: PathBuf,
        /// Write the full report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Partition scheme: length, entity-distance, or relation-type.
        #[arg(long)]
        partition: Option<String>,
        /// Comma-separated bin edges (entity-distance) or thresholds
        /// (length).
        #[arg(long)]
        bins: Option<String>,
    },
    /// Emit per-layer pooling-activity heatmaps for one sentence.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
        /// The sentence to analyze.
        #[arg(long)]
        sentence: String,
        /// Optional one-block dependency sidecar for the sentence.
        #[arg(long)]
        parse: Option<PathBuf>,
        #[arg(long, default_value = "inspect")]
        out: PathBuf,
        /// Also render each grid as a PGM image.
        #[arg(long)]
        render: bool,
    },
    /// K-fold cross-validation driver.
    Folds {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "canonical")]
        format: String,
        #[arg(long)]
        parses: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value = "folds")]
        out: PathBuf,
        #[arg(long)]
        skip_bad_records: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version print and succeed; anything else is usage.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train {
            corpus,
            format,
            dev,
            dev_format,
            parses,
            dev_parses,
            out,
            skip_bad_records,
            seeds,
            config,
        } => commands::train(commands::TrainArgs {
            corpus,
            format,
            dev,
            dev_format,
            parses,
            dev_parses,
            out,
            skip_bad_records,
            seeds,
            config,
        }),
        Command::Predict {
            checkpoint,
            corpus,
            format,
            parses,
            out,
            skip_bad_records,
        } => commands::predict(checkpoint, corpus, format, parses, out, skip_bad_records),
        Command::Evaluate {
            gold,
            format,
            pred,
            report,
            partition,
            bins,
        } => commands::evaluate(gold, format, pred, report, partition, bins),
        Command::Inspect {
            checkpoint,
            sentence,
            parse,
            out,
            render,
        } => commands::inspect(checkpoint, sentence, parse, out, render),
        Command::Folds {
            corpus,
            format,
            parses,
            folds,
            out,
            skip_bad_records,
            config,
        } => commands::folds(corpus, format, parses, folds, out, skip_bad_records, config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(exit_code_of(&e))
        }
    }
}

fn exit_code_of(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Numeric(_) => 3,
        Error::Shape(_)
        | Error::Contract(_)
        | Error::Ingest(_)
        | Error::Checkpoint(_)
        | Error::Io(_) => 2,
    }
}
