// `!(x > 0.0)` rejects NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod run;

#[derive(Parser, Debug)]
#[command(name = "onset-tcn", version, about = "Onset detection with TCN models and layer-freeze fine-tuning")]
pub struct Cli {
    /// Seed overriding the configured one.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Replace existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic corpus into --out.
    Synth {
        #[arg(long, default_value_t = 10)]
        files: usize,
        /// File length in seconds.
        #[arg(long, default_value_t = 30.0)]
        duration: f64,
        /// Comma-separated subset of the standard instruments.
        #[arg(long, value_delimiter = ',')]
        instruments: Vec<String>,
    },
    /// Write the log-filterbank features of a WAV file.
    Features {
        audio: PathBuf,
        #[arg(long)]
        resample: bool,
    },
    /// Train a base model; writes the model file to --out.
    Pretrain {
        #[arg(long, default_value = "TCNv1")]
        model: String,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Instruments left out of training.
        #[arg(long, value_delimiter = ',')]
        exclude: Vec<String>,
        /// Supervise with `onsets` or `beats`.
        #[arg(long)]
        targets: Option<String>,
    },
    /// Adapt a model to one annotated snippet; writes the model to --out.
    Finetune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        onsets: PathBuf,
        #[arg(long)]
        offset: Option<f64>,
        #[arg(long, default_value_t = 5.0)]
        duration: f64,
        #[arg(long, default_value = "ft")]
        freeze: String,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        #[arg(long, default_value_t = 0.25)]
        lr_scale: f64,
        #[arg(long, default_value_t = onset_tcn::train::DEFAULT_BASE_LR)]
        base_lr: f64,
    },
    /// Detect onsets in a WAV file; writes an onset file to --out or stdout.
    Detect {
        #[arg(long)]
        model: PathBuf,
        audio: PathBuf,
        #[command(flatten)]
        peaks: PeakArgs,
    },
    /// Score estimated onsets against a reference.
    Eval {
        estimates: PathBuf,
        reference: PathBuf,
        #[arg(long, default_value_t = 0.025)]
        tolerance: f64,
    },
    /// Run the full fine-tuning grid from --config.
    Grid,
    /// Rebuild the summary table from a results CSV.
    Report {
        csv: PathBuf,
    },
}

#[derive(Args, Debug)]
pub struct CorpusArgs {
    /// Directory holding a synthetic corpus manifest.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Root of an `<Instrument>/<Instrument>_<nn>.wav` dataset.
    #[arg(long, conflicts_with = "corpus")]
    pub dataset: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PeakArgs {
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value_t = 1)]
    pub w_max: usize,
    #[arg(long, default_value_t = 2)]
    pub w_avg: usize,
    #[arg(long, default_value_t = 0.0)]
    pub delta: f64,
    /// Minimum gap between onsets in seconds.
    #[arg(long, default_value_t = 0.030)]
    pub min_gap: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run::execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(run::Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(run::Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_divergence() { 3 } else { 2 })
        }
    }
}
