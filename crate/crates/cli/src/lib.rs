//! Command-line pipeline: extract, vocab, pretrain, train, eval, predict,
//! plus fixture helpers (synth, split).
//!
//! Every command writes its artifacts atomically and leaves a
//! `<artifact>.manifest.json` beside each one.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub mod commands;
pub mod error;
pub mod manifest;
pub mod settings;

pub use error::{exit_code, CliError};
pub use manifest::{manifest_path, RunManifest};
pub use settings::Settings;

#[derive(Debug, Parser)]
#[command(name = "sinn", version, about = "Smart contract intent detection pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// `key = value` settings file; flags override its entries.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long = "l-cap", global = true)]
    pub l_cap: Option<usize>,
    #[arg(long = "vocab-size", global = true)]
    pub vocab_size: Option<usize>,
    #[arg(long, global = true)]
    pub layers: Option<usize>,
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    #[arg(long, global = true)]
    pub heads: Option<usize>,
    #[arg(long, global = true)]
    pub units: Option<usize>,
    /// Any other setting as key=value; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl GlobalArgs {
    pub fn settings(&self) -> Result<Settings, CliError> {
        let mut s = match &self.config {
            Some(p) => Settings::load(p)?,
            None => Settings::default(),
        };
        let flags: [(&str, Option<String>); 10] = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("threshold", self.threshold.map(|v| v.to_string())),
            ("gamma", self.gamma.map(|v| v.to_string())),
            ("alpha", self.alpha.map(|v| v.to_string())),
            ("l_cap", self.l_cap.map(|v| v.to_string())),
            ("vocab_size", self.vocab_size.map(|v| v.to_string())),
            ("layers", self.layers.map(|v| v.to_string())),
            ("dim", self.dim.map(|v| v.to_string())),
            ("heads", self.heads.map(|v| v.to_string())),
            ("units", self.units.map(|v| v.to_string())),
        ];
        for pair in &self.set {
            s.set_pair(pair)?;
        }
        for (k, v) in flags {
            if let Some(v) = v {
                s.set(k, &v)?;
            }
        }
        Ok(s)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Contracts JSONL to function-unit JSONL.
    Extract {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Byte-level BPE vocabulary from function units.
    Vocab {
        /// Function-unit JSONL from `extract`.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// MLM pretraining of the encoder on function units.
    Pretrain {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Optional per-step loss CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Two-phase classifier training on a frozen encoder.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Metric report (JSON plus CSV) against labeled contracts.
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// Report JSON path; the CSV goes beside it with a `.csv` extension.
        #[arg(long)]
        output: PathBuf,
        #[arg(long, required_unless_present = "predictions")]
        model: Option<PathBuf>,
        #[arg(long, requires = "model")]
        vocab: Option<PathBuf>,
        /// Score an existing prediction JSONL instead of running a model.
        #[arg(long, conflicts_with_all = ["model", "vocab"])]
        predictions: Option<PathBuf>,
    },
    /// Per-contract probabilities and label bits as JSONL.
    Predict {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Seeded synthetic fixtures.
    Synth {
        #[arg(long, value_enum)]
        kind: SynthKind,
        #[arg(long, default_value_t = 40)]
        count: usize,
        /// Rare intent name for `skewed`.
        #[arg(long, default_value = "Fee")]
        rare: String,
        /// Positives of the rare intent for `skewed`; defaults to 2% of `count`.
        #[arg(long)]
        rare_count: Option<usize>,
        #[arg(long, default_value_t = 0.25)]
        p_common: f64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Seeded train/eval partition of a contracts JSONL.
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        eval: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// The three-function sample contract.
    Sample,
    /// Contracts with one template per intent.
    Separable,
    /// One intent at low prevalence.
    Skewed,
    /// Function units for pretraining.
    Mlm,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> anyhow::Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let argv = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let cli = Cli::try_parse_from(&args)?;
    let settings = cli.global.settings()?;
    commands::dispatch(&cli.command, &settings, argv)
}
