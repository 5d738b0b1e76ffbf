//! `ccag`: preprocess corpora, train and evaluate models, run ablations,
//! complete prefixes and serve completions over HTTP.

mod commands;
mod settings;

use std::net::IpAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "ccag", version, about = "Code completion with AST graph attention")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse, flatten, encode and segment a corpus of JSON-lines ASTs.
    Preprocess {
        /// One AST per line.
        #[arg(long)]
        input: PathBuf,
        /// Output directory for vocab.json and segments.jsonl.
        #[arg(long)]
        out: PathBuf,
        /// Number of most frequent values kept in the value vocabulary.
        #[arg(long, default_value_t = 1000)]
        k: usize,
        /// Encode with an existing vocabulary instead of building one.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        sequential: bool,
    },
    /// Train a model on a preprocessed dataset.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint path; a sidecar is written next to it.
        #[arg(long)]
        out: PathBuf,
        /// Variant to train (ccag, g, n, b, p, r, ng, gs, pe).
        #[arg(long, default_value = "ccag")]
        variant: String,
        /// Write per-step and per-epoch metrics as JSON lines.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a preprocessed dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Count a correct UNK prediction as correct.
        #[arg(long)]
        unk_correct: bool,
        #[arg(long)]
        sequential: bool,
    },
    /// Train every requested variant with the same budget and report a table.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated variants; all nine by default.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        /// Write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Write the table as Markdown.
        #[arg(long)]
        markdown: Option<PathBuf>,
    },
    /// Predict the next node of a prefix with a checkpoint.
    Complete {
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSON node list, or a request object with a `nodes` field.
        #[arg(long)]
        ast_prefix: PathBuf,
        #[arg(long, default_value_t = 3)]
        top_k: usize,
        /// Print the response as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Serve completions over HTTP. SIGHUP reloads the checkpoint.
    Serve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Browser origin allowed to call the API; repeatable.
        #[arg(long)]
        cors_origin: Vec<String>,
    },
    /// Write the synthetic toy corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        programs: usize,
        #[arg(long, default_value_t = 200)]
        value_vocab: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write programs with unseen names and random bindings.
        #[arg(long)]
        held_out: Option<PathBuf>,
        #[arg(long, default_value_t = 60)]
        held_out_programs: usize,
    },
}

/// Training options shared by `train` and `ablate`. Flags override the
/// config file, which overrides the defaults.
#[derive(Debug, Args)]
struct RunArgs {
    /// Preprocessed training dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Dataset for the final evaluation (defaults to the training data).
    #[arg(long)]
    eval_data: Option<PathBuf>,
    /// TOML file with `dtype`, `[model]` and `[train]` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Hidden size.
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    /// f32 or f64.
    #[arg(long)]
    dtype: Option<String>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    no_clip: bool,
    #[arg(long)]
    eval_every: Option<usize>,
    /// Stop early once training accuracy reaches this on both heads.
    #[arg(long)]
    target_accuracy: Option<f64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// Where a batch that produced a non-finite loss is dumped.
    #[arg(long)]
    dump_dir: Option<PathBuf>,
    #[arg(long)]
    unk_correct: bool,
    #[arg(long)]
    sequential: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("CCAG_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
