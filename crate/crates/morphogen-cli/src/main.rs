//! Command-line front end: train the models, inflect single lemmata,
//! dream sentences, evaluate held-out type accuracy, and tag raw text.

mod commands;
mod config;

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::config::{ExperimentConfig, Mode, Overrides};

/// Failure classes, each with its own exit code: bad invocations and
/// configurations (1), unreadable or malformed data (2), and missing,
/// corrupt, or degenerate models (3).
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Model(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Model(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Model(m) => m,
        }
    }
}

#[derive(Parser)]
#[command(name = "morphogen", version, about = "Morphological inflection models")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train per a configuration file and write the model bundle.
    Train {
        /// Configuration file (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Override the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the configured mode ("nn" or "svae").
        #[arg(long)]
        mode: Option<String>,
        /// Override the configured labeled-token budget.
        #[arg(long)]
        tokens: Option<usize>,
    },
    /// Print the inflected form of one lemma under one tag.
    Inflect {
        /// Model directory holding a saved inflector.
        #[arg(long)]
        model: PathBuf,
        /// Beam width for decoding (at least 1).
        #[arg(long, default_value_t = 4)]
        beam: usize,
        /// Lemma to inflect.
        lemma: String,
        /// Tag, e.g. "v;tns=pst".
        tag: String,
    },
    /// Sample sentences from a saved generative bundle.
    Dream {
        /// Model directory holding the saved bundle.
        #[arg(long)]
        model: PathBuf,
        /// Number of sentences.
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Sampling seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Companion file: one row per sentence with space-joined forms,
        /// lemmata, and tags in three tab-separated columns.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a saved inflector on held-out types and write a report.
    Evaluate {
        /// Configuration file (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Override the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the configured mode ("nn" or "svae").
        #[arg(long)]
        mode: Option<String>,
        /// Override the configured labeled-token budget.
        #[arg(long)]
        tokens: Option<usize>,
        /// Model directory (defaults to <out_dir>/model).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Annotate the forms of a CoNLL-U file with best lemmata and tags.
    Tag {
        /// Model directory holding a saved inference network.
        #[arg(long)]
        model: PathBuf,
        /// Input CoNLL-U file; only its form column is used.
        #[arg(long)]
        input: PathBuf,
        /// Write the annotation here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_mode(mode: Option<String>) -> Result<Option<Mode>, CliError> {
    mode.as_deref().map(Mode::parse).transpose()
}

fn load_config(
    path: &PathBuf,
    seed: Option<u64>,
    mode: Option<String>,
    tokens: Option<usize>,
) -> Result<ExperimentConfig, CliError> {
    let overrides = Overrides {
        seed,
        mode: parse_mode(mode)?,
        tokens,
    };
    ExperimentConfig::load(path, &overrides)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Train {
            config,
            seed,
            mode,
            tokens,
        } => {
            let config = load_config(&config, seed, mode, tokens)?;
            commands::cmd_train(&config)
        }
        Cmd::Inflect {
            model,
            beam,
            lemma,
            tag,
        } => commands::cmd_inflect(&model, &lemma, &tag, beam),
        Cmd::Dream {
            model,
            count,
            seed,
            out,
        } => commands::cmd_dream(&model, count, seed, &out),
        Cmd::Evaluate {
            config,
            seed,
            mode,
            tokens,
            model,
        } => {
            let config = load_config(&config, seed, mode, tokens)?;
            commands::cmd_evaluate(&config, model.as_deref())
        }
        Cmd::Tag { model, input, out } => commands::cmd_tag(&model, &input, out.as_ref()),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {}", e.message());
        std::process::exit(e.exit_code());
    }
}
