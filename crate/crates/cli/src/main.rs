//! `mtdistill`: one binary driving every pipeline stage.

mod config;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Debug, Parser)]
#[command(name = "mtdistill", version, about = "Distillation data pipeline for machine translation")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// TOML pipeline configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output root; stages read and write fixed paths beneath it.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Validate and print the execution plan without running it.
    #[arg(long, global = true)]
    pub dry_run: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read monolingual text into segments.
    Ingest {
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        lang: Option<String>,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        blob_cap: Option<usize>,
    },
    /// Group segments into length buckets.
    Bucket {
        /// Comma-separated lower bounds, e.g. `1,2,4,8`.
        #[arg(long)]
        boundaries: Option<String>,
    },
    /// Draw a source pool per language pair.
    Sample {
        /// `proportional`, `uniform:N` or comma-separated per-bucket counts.
        #[arg(long)]
        quota: Option<String>,
        #[arg(long)]
        target_size: Option<usize>,
    },
    /// Greedy-vs-sample QE delta; keeps the top k segments.
    Prefilter {
        #[arg(long)]
        k: Option<usize>,
    },
    /// Best-of-N sampling with QE selection.
    Distill {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        temperature: Option<f64>,
    },
    /// Re-apply the formatting filter to selected candidates.
    Filter {
        /// Scorer id of an optional span judge.
        #[arg(long)]
        judge: Option<String>,
    },
    /// Write accepted examples as sharded JSON lines.
    Emit {
        #[arg(long)]
        cap: Option<usize>,
        #[arg(long)]
        shard_size: Option<usize>,
    },
    /// Compose a training stream from several sources.
    Mix {
        #[arg(long)]
        total_tokens: Option<usize>,
    },
    /// Combine and normalize rewards into token advantages.
    Rewards {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        no_normalize: bool,
    },
    /// Chunk documents and assign raters for human evaluation.
    Evalprep {
        #[arg(long)]
        documents: PathBuf,
        #[arg(long)]
        lang_pair: Option<String>,
        #[arg(long, value_delimiter = ',')]
        systems: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        raters: Vec<String>,
    },
    /// Aggregate MQM annotations into a per-language table.
    Report {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long = "manifest", required = true)]
        manifests: Vec<PathBuf>,
    },
    /// Serve the deterministic mock backend over HTTP.
    MockServe {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        #[arg(long, default_value_t = 4)]
        workers: usize,
    },
}

#[derive(Debug)]
pub enum CliError {
    Config { key: Option<String>, message: String },
    Stage(String),
}

impl From<mtdistill_core::Error> for CliError {
    fn from(e: mtdistill_core::Error) -> Self {
        match e {
            mtdistill_core::Error::Config(message) => CliError::Config { key: None, message },
            other => CliError::Stage(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match stages::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config { key, message }) => {
            eprintln!("{}", json!({"kind": "config", "key": key, "error": message}));
            ExitCode::from(2)
        }
        Err(CliError::Stage(message)) => {
            eprintln!("{}", json!({"kind": "stage", "error": message}));
            ExitCode::from(1)
        }
    }
}
