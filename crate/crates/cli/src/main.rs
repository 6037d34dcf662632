//! `tabdx`: cohorts, prompt corpora, tiny-LM fine-tuning, scoring and experiments.

mod cmd;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "tabdx", version, about = "Tabular diagnosis with a tiny fine-tuned language model")]
struct Cli {
    /// Seed for every random stream of the invoked command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 gives bitwise reproducible runs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

/// Where a command's cohort comes from. A CSV file takes priority over a preset.
#[derive(Args, Debug, Clone, Default)]
pub struct CohortArgs {
    /// Cohort CSV.
    #[arg(long)]
    cohort: Option<PathBuf>,
    /// Schema for --cohort: builtin name (ukb16, figure3, corrected) or TOML path.
    #[arg(long, default_value = "ukb16")]
    schema: String,
    /// Synthetic preset (ukb-like, strong-signal) or generator TOML.
    #[arg(long)]
    preset: Option<String>,
    /// Synthetic cohort size.
    #[arg(long)]
    n: Option<usize>,
    /// Seed of the synthetic cohort itself.
    #[arg(long)]
    cohort_seed: Option<u64>,
}

/// Training knobs shared by `train` and `experiment`; unset flags fall back to
/// the config file, then to built-in defaults.
#[derive(Args, Debug, Clone, Default)]
pub struct TrainArgs {
    /// ExperimentConfig TOML.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Prompt template: list, text or narrative.
    #[arg(long)]
    template: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// LoRA rank.
    #[arg(long)]
    rank: Option<usize>,
    /// Comma-separated seeds; overrides --seed.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

/// Optional OpenAI-compatible server.
#[derive(Args, Debug, Clone, Default)]
pub struct RemoteArgs {
    /// Completions endpoint; enables network use.
    #[arg(long)]
    remote_endpoint: Option<String>,
    #[arg(long, requires = "remote_endpoint")]
    remote_model: Option<String>,
    /// Env var holding the API key.
    #[arg(long)]
    api_key_env: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic cohort CSV.
    Synth {
        #[arg(long, default_value = "strong-signal")]
        preset: String,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a CSV against a schema; write the canonical cohort and its baseline table.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "ukb16")]
        schema: String,
        #[arg(long, default_value = tabdx_core::cohort::DEFAULT_ID_COLUMN)]
        id_column: String,
        #[arg(long, default_value = tabdx_core::cohort::DEFAULT_LABEL_COLUMN)]
        label_column: String,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build an instruction corpus (JSON lines).
    Corpus {
        #[command(flatten)]
        cohort: CohortArgs,
        #[arg(long, default_value = "text")]
        template: String,
        /// train, test or all.
        #[arg(long, default_value = "train")]
        split: String,
        /// Share of features kept per record.
        #[arg(long)]
        retain: Option<f64>,
        #[command(flatten)]
        remote: RemoteArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tune a LoRA adapter on the training split.
    Train {
        #[command(flatten)]
        cohort: CohortArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Train on a 4-bit copy of the base.
        #[arg(long)]
        quantized: bool,
        /// Model directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score records with a trained model or a remote backend.
    Classify {
        /// Directory written by `train`.
        #[arg(long, required_unless_present = "remote_endpoint")]
        model: Option<PathBuf>,
        #[command(flatten)]
        cohort: CohortArgs,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        retain: Option<f64>,
        /// Template for remote scoring; a local model uses the one it was trained with.
        #[arg(long, default_value = "text")]
        template: String,
        /// Score with the base model only.
        #[arg(long)]
        no_adapter: bool,
        #[command(flatten)]
        remote: RemoteArgs,
        /// Scores CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Metrics, bootstrap CI and ROC points for a scores CSV.
    Eval {
        /// CSV with patient_id,score,label.
        #[arg(long)]
        scores: PathBuf,
        /// A number in [0,1] or "youden".
        #[arg(long, default_value = "0.5")]
        threshold: String,
        #[arg(long, default_value_t = 1000)]
        bootstrap: usize,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a study (main, templates, finetune, missing) or re-run one from its manifest.
    Experiment {
        #[arg(required_unless_present = "manifest")]
        kind: Option<String>,
        /// manifest.json of an earlier run; its config replaces every other setting.
        #[arg(long, conflicts_with = "kind")]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        cohort: CohortArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// eval or train.
        #[arg(long)]
        mask_mode: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Numeric design matrix as fitted for the baselines.
    ExportFeatures {
        #[command(flatten)]
        cohort: CohortArgs,
        /// Records to export: train, test or all.
        #[arg(long, default_value = "all")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a report.json as an aligned table.
    Report {
        input: PathBuf,
        /// Write here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match cmd::run(cli.command, cli.seed) {
        Ok(()) => ExitCode::SUCCESS,
        Err(cmd::Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(cmd::Failure::Runtime(e)) => {
            eprintln!("error: {}", chain_message(&e));
            ExitCode::FAILURE
        }
    }
}

/// The error and its causes, skipping causes the previous message already spells out.
fn chain_message(e: &anyhow::Error) -> String {
    let mut out = e.to_string();
    let mut last = out.clone();
    for cause in e.chain().skip(1) {
        let msg = cause.to_string();
        if !last.contains(&msg) {
            out.push_str(": ");
            out.push_str(&msg);
        }
        last = msg;
    }
    out
}
