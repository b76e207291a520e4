//! `mrhp`: generate synthetic data, train, evaluate, verify gradients,
//! run significance tests, and analyze cross-modal distances.
//!
//! Exit codes: 0 success, 1 validation error (bad flags, configs, or input
//! files), 2 runtime failure (divergence, write failures).

mod commands;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "mrhp", version, about = "Multimodal review helpfulness ranking harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic planted-signal dataset from a spec file
    Generate {
        /// Synthetic spec JSON
        #[arg(long)]
        config: PathBuf,
        /// Output directory (manifest.jsonl + features/)
        #[arg(long)]
        out: PathBuf,
        /// Override the spec's seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model on a dataset manifest
    Train {
        /// Train config JSON; defaults apply for missing fields
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset manifest path
        #[arg(long)]
        data: PathBuf,
        /// Output directory (model.ckpt + losses.json)
        #[arg(long)]
        out: PathBuf,
        /// Override the config's seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Rank reviews with a checkpoint and report MAP and NDCG@{3,5}
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Report JSON path
        #[arg(long)]
        out: Option<PathBuf>,
        /// Relevance threshold for MAP (defaults to the checkpoint's τ)
        #[arg(long)]
        tau: Option<u8>,
    },
    /// Finite-difference verification of every autodiff op and the model
    Gradcheck {
        #[arg(long)]
        seed: Option<u64>,
        /// FD points per op
        #[arg(long, default_value_t = 100)]
        points: usize,
        /// Corrupt the named op's backward rule (verification must fail)
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
    /// Paired bootstrap significance test between two eval reports
    Sigtest {
        /// Eval report JSON for system A
        #[arg(long)]
        a: PathBuf,
        /// Eval report JSON for system B
        #[arg(long)]
        b: PathBuf,
        /// MAP, NDCG@3, or NDCG@5
        #[arg(long, default_value = "MAP")]
        metric: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        resamples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Cross-modal cosine/L2 distance analysis per label group
    Distances {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated labels, e.g. "1,4" (default: all)
        #[arg(long)]
        groups: Option<String>,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MRHP_LOG", "info"))
        .format_timestamp(None)
        .init();
    // clap's own exit code for usage errors is 2; the contract here is 1
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let is_error = e.use_stderr();
            let _ = e.print();
            std::process::exit(if is_error { 1 } else { 0 });
        }
    };
    match commands::run(cli.command) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {:#}", e.inner());
            std::process::exit(e.exit_code());
        }
    }
}
