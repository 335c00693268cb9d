//! Command-line arguments. Every subcommand struct doubles as the schema of
//! its JSON config file: flags override file keys, and unset keys fall back
//! to the defaults applied in `commands`.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{Map, Value};

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "leia", version, about = "Group-robust last-layer adaptation on frozen embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic unknown-group benchmark as train/val/test files.
    Synth(SynthArgs),
    /// Train a linear head by empirical risk minimization.
    TrainErm(TrainErmArgs),
    /// Train a linear head by Group DRO over the known groups.
    TrainGdro(TrainGdroArgs),
    /// Fit a low-rank error-subspace correction on top of a frozen head.
    AdaptLeia(AdaptArgs),
    /// Score a head or an adapted model; without either, validate the dataset header.
    Eval(EvalArgs),
    /// ERM followed by adaptation on a held-out share of the training split.
    Pipeline(PipelineArgs),
    /// Unknown-group accuracy of ERM, Group DRO and adaptation over a synthetic grid.
    Sweep(SweepArgs),
    /// Cumulative explained variance of the error-weighted covariance.
    Cev(CevArgs),
    /// Coordinates of each example in the top error eigenvectors.
    Project(ProjectArgs),
}

/// Flags shared by every subcommand. In a config file they are top-level keys.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// JSON config file; flags take precedence over its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dataset output format: binary or tsv.
    #[arg(long)]
    pub format: Option<String>,
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Number of known groups.
    #[arg(long)]
    pub n_known: Option<usize>,
    /// Unknown-group size relative to one known group.
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub samples_per_group: Option<usize>,
    #[arg(long)]
    pub stable_dim: Option<usize>,
    /// Train, validation and test fractions.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub split: Option<Vec<f64>>,
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainErmArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Validation set for best-epoch selection.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Selection regime: none, complete, or partial:<g>,<g>,...
    #[arg(long)]
    pub regime: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainGdroArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub regime: Option<String>,
    /// Groups whose labels the objective may use; others get zero weight.
    #[arg(long, value_delimiter = ',')]
    pub known_groups: Option<Vec<usize>>,
    /// Group-weight step size.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Frozen head in TSV block form.
    #[arg(long)]
    pub head: Option<PathBuf>,
    /// Adaptation set.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub regime: Option<String>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub rank: Option<usize>,
    /// one_minus_p or cross_entropy.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub reg: Option<f64>,
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, conflicts_with = "model")]
    pub head: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Training split; when absent, synthetic splits are generated from the seed.
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub regime: Option<String>,
    #[arg(long)]
    pub n_known: Option<usize>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub samples_per_group: Option<usize>,
    /// Share of the training split used for ERM; the rest is the adaptation set.
    #[arg(long)]
    pub erm_fraction: Option<f64>,
    #[arg(long)]
    pub erm_lr: Option<f64>,
    #[arg(long)]
    pub erm_epochs: Option<usize>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub leia_lr: Option<f64>,
    #[arg(long)]
    pub leia_epochs: Option<usize>,
    #[arg(long)]
    pub reg: Option<f64>,
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long, value_delimiter = ',')]
    pub n_known: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub rhos: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub samples_per_group: Option<usize>,
    #[arg(long)]
    pub erm_lr: Option<f64>,
    #[arg(long)]
    pub erm_epochs: Option<usize>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub leia_lr: Option<f64>,
    #[arg(long)]
    pub leia_epochs: Option<usize>,
    #[arg(long)]
    pub reg: Option<f64>,
    /// Run cells one after another instead of on the thread pool.
    #[arg(long)]
    pub sequential: Option<bool>,
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CevArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub head: Option<PathBuf>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub band_low: Option<f64>,
    #[arg(long)]
    pub band_high: Option<f64>,
}

#[derive(Debug, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub head: Option<PathBuf>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub dims: Option<usize>,
}

pub trait Configurable: DeserializeOwned + Sized {
    fn common_mut(&mut self) -> &mut Common;
    /// Fills every unset field from `file`.
    fn overlay(&mut self, file: Self);
}

macro_rules! configurable {
    ($($ty:ty { $($field:ident),* $(,)? })*) => {$(
        impl Configurable for $ty {
            fn common_mut(&mut self) -> &mut Common {
                &mut self.common
            }

            fn overlay(&mut self, file: Self) {
                $(if self.$field.is_none() {
                    self.$field = file.$field;
                })*
            }
        }
    )*};
}

configurable! {
    SynthArgs { n_known, rho, samples_per_group, stable_dim, split }
    TrainErmArgs { train, val, regime, lr, epochs, l2, momentum }
    TrainGdroArgs { train, val, regime, known_groups, eta, lr, epochs, l2, momentum }
    AdaptArgs { head, data, val, regime, gamma, rank, variant, lr, epochs, reg }
    EvalArgs { data, head, model }
    PipelineArgs {
        train, test, val, regime, n_known, rho, samples_per_group, erm_fraction, erm_lr, erm_epochs, l2,
        momentum, gamma, rank, variant, leia_lr, leia_epochs, reg,
    }
    SweepArgs {
        n_known, rhos, seeds, samples_per_group, erm_lr, erm_epochs, l2, momentum, eta, gamma, rank, variant,
        leia_lr, leia_epochs, reg, sequential,
    }
    CevArgs { data, head, gamma, variant, band_low, band_high }
    ProjectArgs { data, head, gamma, variant, dims }
}

fn take<T: DeserializeOwned>(
    map: &mut Map<String, Value>,
    key: &str,
    path: &std::path::Path,
) -> Result<Option<T>, CliError> {
    map.remove(key)
        .map(|v| {
            serde_json::from_value(v).map_err(|e| CliError::Config(format!("{}: key `{key}`: {e}", path.display())))
        })
        .transpose()
}

/// Merges the `--config` file, if any, under the command-line flags.
pub fn resolve<T: Configurable>(mut args: T) -> Result<T, CliError> {
    let Some(path) = args.common_mut().config.clone() else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut map = match serde_json::from_str::<Value>(&text) {
        Ok(Value::Object(map)) => map,
        Ok(_) => return Err(CliError::Config(format!("{}: config must be a JSON object", path.display()))),
        Err(e) => return Err(CliError::Config(format!("{}: {e}", path.display()))),
    };
    let seed = take::<u64>(&mut map, "seed", &path)?;
    let out = take::<PathBuf>(&mut map, "out", &path)?;
    let format = take::<String>(&mut map, "format", &path)?;
    let file: T =
        serde_json::from_value(Value::Object(map)).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let common = args.common_mut();
    common.seed = common.seed.or(seed);
    common.out = common.out.take().or(out);
    common.format = common.format.take().or(format);
    args.overlay(file);
    Ok(args)
}
