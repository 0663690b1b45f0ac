use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{AnnealArg, Format, Method, RunConfig};
use crate::error::CliResult;

#[derive(Debug, Parser)]
#[command(
    name = "protoadapt",
    version,
    about = "Few-shot prototype adapters: zero-shot, MAP and variational Bayes linear probes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic clustered dataset with noisy prototypes as a BADF file.
    Synth(SynthArgs),
    /// Train one method on a few-shot split; writes a checkpoint and a JSON manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint, or the raw prototypes, on a dataset.
    Eval(EvalArgs),
    /// Train and evaluate all three methods on one shared split.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    pub classes: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 250)]
    pub per_class: usize,
    #[arg(long, default_value_t = 0.4, allow_negative_numbers = true)]
    pub spread: f64,
    #[arg(long, default_value_t = 0.2, allow_negative_numbers = true)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Hyperparameter flags. Unset flags fall back to `--config` and then to the
/// built-in defaults.
#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// JSON run config, or a manifest written by `train`/`compare`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub shots: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub lr: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub momentum: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub prior_std: Option<f64>,
    #[arg(long)]
    pub mc_train: Option<usize>,
    #[arg(long)]
    pub mc_predict: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub scale: Option<f64>,
    #[arg(long, value_enum)]
    pub kl_anneal: Option<AnnealArg>,
    /// Comma-separated confidence levels for coverage.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub levels: Option<Vec<f64>>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Leave wall-clock timings out of reports and manifests.
    #[arg(long)]
    pub deterministic: bool,
}

impl RunArgs {
    /// Merges flags over the config file (if any) and returns the effective
    /// config plus the method named in the file, if one was given.
    pub fn resolve(&self, method: Option<Method>) -> CliResult<(RunConfig, Option<Method>)> {
        let (mut cfg, file_method) = match &self.config {
            Some(path) => {
                let c = RunConfig::from_file(path)?;
                let m = c.method;
                (c, Some(m))
            }
            None => (RunConfig::default(), None),
        };
        let requested = method.or(file_method);
        if let Some(m) = requested {
            cfg.method = m;
        }
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() {
                    cfg.$field = v.into();
                }
            )*};
        }
        set!(
            shots, seed, epochs, batch_size, lr, momentum, prior_std, mc_train, mc_predict, scale, kl_anneal, levels,
            bins, format
        );
        cfg.deterministic |= self.deterministic;
        cfg.validate()?;
        Ok((cfg, requested))
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Input BADF dataset.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    /// Checkpoint path (BADF holding the support set and fitted weights).
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest path; defaults to the checkpoint path with a `.json` extension.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    /// Every sample in the dataset.
    All,
    /// The samples left after drawing the few-shot support set (same shots and seed as training).
    Query,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint from `train`. Required for map and bayes.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    #[arg(long, value_enum, default_value = "all")]
    pub split: SplitArg,
    /// Report path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for the report, per-method checkpoints and manifests.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
}
