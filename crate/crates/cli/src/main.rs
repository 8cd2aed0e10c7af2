//! `desmooth` command-line front end.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "desmooth", version, about = "Truncation sampling as desmoothing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Rule selection shared by the subcommands that truncate.
///
/// `--rule` takes a kind (`eta`) with `--param` or `--preset`, a full spec
/// (`eta:0.0009`, `eta:0.0009:0.03`), or `none`.
#[derive(Args, Debug, Clone)]
pub struct RuleArgs {
    #[arg(long)]
    rule: String,
    #[arg(long)]
    param: Option<f64>,
    /// Model size whose published value to use: small, med, large or xl.
    #[arg(long, conflicts_with = "param")]
    preset: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Allowed-set size, kept mass and post-truncation entropy per dump record.
    Truncate {
        #[command(flatten)]
        rule: RuleArgs,
        #[arg(long)]
        dump: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trains an n-gram model on a whitespace-tokenized corpus.
    NgramTrain {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        order: usize,
        /// Weight of the uniform distribution mixed into every conditional.
        #[arg(long, default_value_t = 0.1)]
        smooth: f64,
        #[arg(long)]
        model_out: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Samples from a trained model and reports per-step entropy.
    NgramGen {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        steps: usize,
        #[command(flatten)]
        rule: RuleArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean TV distance and retained entropy bucketed by model entropy.
    EntropyProfile {
        #[arg(long, required_unless_present = "model", conflicts_with = "model")]
        dump: Option<PathBuf>,
        /// Profiles the conditionals of every seen context.
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        rule: RuleArgs,
        /// `default`, comma-separated edges, or `lo:hi:step`.
        #[arg(long, default_value = "default")]
        buckets: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repetition rate of completions after adversarial prompts.
    Repetition {
        #[arg(long)]
        model: PathBuf,
        /// One prompt per line; blank lines are skipped.
        #[arg(long)]
        prompts: PathBuf,
        #[command(flatten)]
        rule: RuleArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        completions: usize,
        #[arg(long, default_value_t = 512)]
        max_steps: usize,
        #[arg(long, default_value_t = 3)]
        tail: usize,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = desmooth::analysis::DEFAULT_REPETITION_THRESHOLD)]
        threshold: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs the checklist battery.
    Checklist {
        /// JSON case file, or `builtin`.
        #[arg(long, default_value = "builtin")]
        cases: String,
        /// Comma-separated rule specs replacing each case's own rules.
        #[arg(long, value_delimiter = ',')]
        rules: Vec<String>,
        #[arg(long, default_value_t = desmooth::analysis::DEFAULT_PRINT_THRESHOLD)]
        print_threshold: f64,
        /// Exit nonzero when an expectation fails.
        #[arg(long)]
        strict: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Checks the optimal threshold on random smoothing scenarios.
    SmoothingVerify {
        #[arg(long)]
        scenarios: usize,
        #[arg(long)]
        vocab: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = desmooth::io::threads_from_env() {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("desmooth: cannot size thread pool: {e}");
            return ExitCode::FAILURE;
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("desmooth: {e}");
            ExitCode::FAILURE
        }
    }
}
