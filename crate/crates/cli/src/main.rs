use std::path::PathBuf;
use std::process::ExitCode;

use bias_align::model::Objective;
use bias_align_cli::commands;
use bias_align_cli::config::KEYS;
use bias_align_cli::{CliError, RunConfig};
use clap::{Parser, Subcommand};

/// Group-scaled training with orthogonal feature decomposition on embeddings.
///
/// Exit codes: 0 success, 1 configuration or validation error, 2 I/O error,
/// 3 numerical failure.
#[derive(Debug, Parser)]
#[command(name = "bias-align", version)]
struct Cli {
    /// TOML config file with flat dotted keys (see `bias-align config`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one key, e.g. `--set train.lr=0.01`. Repeatable; applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the resolved configuration with a description of every key.
    Config,
    /// Generate train.csv, unseen.csv, anchors.csv and truth.json.
    Synth {
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes model.ckpt, train_log.jsonl and config.toml.
    Train {
        /// Training samples (dataset CSV).
        #[arg(long)]
        data: PathBuf,
        /// Anchor file; ignored with --resume, whose checkpoint holds the anchors.
        #[arg(long, required_unless_present = "resume")]
        anchors: Option<PathBuf>,
        /// Continue this checkpoint until epoch `train.epochs`.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a dataset; writes report.json and bins.csv.
    Eval {
        /// Checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Samples to score (dataset CSV).
        #[arg(long)]
        data: PathBuf,
        /// Fit a temperature on a seeded validation split and also write the calibrated report.
        #[arg(long)]
        calibrate: bool,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
    },
    /// Split embeddings into invariant and specific parts; writes decomposition and PCA tables.
    Decompose {
        /// Checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Seen samples; the PCA is fitted on these.
        #[arg(long)]
        data: PathBuf,
        /// Held-out samples, projected on the seen-fit components.
        #[arg(long)]
        unseen: Option<PathBuf>,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train each objective on the same data and seed and tabulate held-out metrics.
    Compare {
        /// Training samples (dataset CSV).
        #[arg(long)]
        data: PathBuf,
        /// Held-out samples used for the reported metrics.
        #[arg(long)]
        unseen: PathBuf,
        /// Text anchors (anchors CSV).
        #[arg(long)]
        anchors: PathBuf,
        /// Ground truth from `synth`; adds domain-probe accuracies.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Comma-separated objectives.
        #[arg(long, value_delimiter = ',', default_value = "erm,erm+irm,gdfas")]
        objectives: Vec<Objective>,
        /// Also train gdfas with only group scaling, only decomposition, and neither.
        #[arg(long)]
        ablations: bool,
        /// Output directory, created if missing.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<String, CliError> {
    let config = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::Config => {
            let mut text = String::new();
            for ((_, doc), line) in KEYS.iter().zip(config.lines()) {
                text.push_str(&format!("# {doc}\n{line}\n"));
            }
            Ok(text.trim_end().to_string())
        }
        Command::Synth { out } => commands::synth(&config, &out),
        Command::Train {
            data,
            anchors,
            resume,
            out,
        } => commands::train_cmd(
            &config,
            &data,
            anchors.as_deref().unwrap_or(std::path::Path::new("")),
            resume.as_deref(),
            &out,
        ),
        Command::Eval {
            checkpoint,
            data,
            calibrate,
            out,
        } => commands::eval(&config, &checkpoint, &data, calibrate, &out),
        Command::Decompose {
            checkpoint,
            data,
            unseen,
            out,
        } => commands::decompose(&config, &checkpoint, &data, unseen.as_deref(), &out),
        Command::Compare {
            data,
            unseen,
            anchors,
            truth,
            objectives,
            ablations,
            out,
        } => commands::compare(
            &config,
            &data,
            &unseen,
            &anchors,
            truth.as_deref(),
            &objectives,
            ablations,
            &out,
        )
        .map(|(_, table)| table.trim_end().to_string()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
