use std::fs;
use std::path::{Path, PathBuf};

use leia_core::analysis::{cev_table, project, projection_csv, BAND_HIGH, BAND_LOW};
use leia_core::dataset::{decode_binary, decode_tsv, write_dataset, SyntheticConfig};
use leia_core::eval::{per_group_metrics, predict_classes, worst_class_accuracy, SelectionRegime, Validator};
use leia_core::experiment::{run_pipeline, run_sweep, synthetic_splits, PipelineConfig, SweepConfig};
use leia_core::fmt::format_fixed6;
use leia_core::heads::{train_erm, train_gdro, GdroConfig, TrainedHead};
use leia_core::leia::{adapt, WeightVariant};
use leia_core::{EmbeddingDataset, Format, LeiaConfig, LeiaModel, LinearHead, TrainConfig};

use crate::args::*;
use crate::CliError;

fn required(value: &Option<PathBuf>, flag: &str) -> Result<PathBuf, CliError> {
    let path = value.clone().ok_or_else(|| CliError::Config(format!("--{flag} is required")))?;
    if !path.is_file() {
        return Err(CliError::Config(format!("--{flag}: {} is not a readable file", path.display())));
    }
    Ok(path)
}

fn optional(value: &Option<PathBuf>, flag: &str) -> Result<Option<PathBuf>, CliError> {
    value.as_ref().map(|_| required(value, flag)).transpose()
}

fn out_dir(common: &Common) -> Result<PathBuf, CliError> {
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn output_format(common: &Common) -> Result<Format, CliError> {
    common.format.as_deref().map_or(Ok(Format::Binary), |s| s.parse().map_err(CliError::Config))
}

fn variant(value: &Option<String>) -> Result<WeightVariant, CliError> {
    value.as_deref().map_or(Ok(WeightVariant::default()), |s| s.parse().map_err(CliError::Config))
}

fn check_regime(regime: &Option<String>, val: &Option<PathBuf>) -> Result<(), CliError> {
    if regime.is_some() && val.is_none() {
        return Err(CliError::Config("--regime needs a validation set (--val)".into()));
    }
    Ok(())
}

/// Model-selection regime; without `--regime`, worst-class accuracy.
fn regime(value: &Option<String>) -> Result<SelectionRegime, CliError> {
    match value.as_deref() {
        None | Some("none") => Ok(SelectionRegime::NoGroupInfo),
        Some("complete") => Ok(SelectionRegime::Complete),
        Some(s) => {
            let list = s.strip_prefix("partial:").ok_or_else(|| {
                CliError::Config(format!("unknown regime `{s}` (expected none, complete or partial:<groups>)"))
            })?;
            let groups = list
                .split(',')
                .map(|g| g.trim().parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::Config(format!("regime `{s}`: {e}")))?;
            Ok(SelectionRegime::Partial(groups))
        }
    }
}

/// Reads LEMB binary or TSV, detected from the leading bytes.
fn load_dataset(path: &Path) -> Result<EmbeddingDataset, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let ds = if bytes.starts_with(b"LEMB") {
        decode_binary(&bytes)
    } else if bytes.starts_with(b"# lemb-tsv") {
        let text = std::str::from_utf8(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        decode_tsv(text)
    } else {
        return Err(CliError::Data(format!("{}: neither a LEMB nor a lemb-tsv file", path.display())));
    };
    ds.map_err(|e| CliError::Core(e.into()).context(path))
}

fn load_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_head(path: &Path) -> Result<LinearHead, CliError> {
    LinearHead::from_tsv(&load_text(path)?).map_err(|e| CliError::Core(e.into()).context(path))
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(&path, contents).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn train_config(
    lr: Option<f64>,
    epochs: Option<usize>,
    l2: Option<f64>,
    momentum: Option<f64>,
    seed: u64,
) -> TrainConfig {
    let d = TrainConfig::synthetic_erm();
    TrainConfig {
        learning_rate: lr.unwrap_or(d.learning_rate),
        epochs: epochs.unwrap_or(d.epochs),
        l2_penalty: l2.unwrap_or(d.l2_penalty),
        momentum: momentum.unwrap_or(d.momentum),
        seed,
    }
}

fn leia_config(
    gamma: Option<f64>,
    rank: Option<usize>,
    variant_name: &Option<String>,
    lr: Option<f64>,
    epochs: Option<usize>,
    reg: Option<f64>,
) -> Result<LeiaConfig, CliError> {
    let d = LeiaConfig::default();
    Ok(LeiaConfig {
        gamma: gamma.unwrap_or(d.gamma),
        rank: rank.unwrap_or(d.rank),
        weight_variant: variant(variant_name)?,
        learning_rate: lr.unwrap_or(d.learning_rate),
        epochs: epochs.unwrap_or(d.epochs),
        reg_coeff: reg.unwrap_or(d.reg_coeff),
    })
}

fn synthetic_config(n_known: Option<usize>, rho: Option<f64>, samples: Option<usize>, seed: u64) -> SyntheticConfig {
    let d = SyntheticConfig::default();
    SyntheticConfig {
        num_known_groups: n_known.unwrap_or(d.num_known_groups),
        unknown_ratio: rho.unwrap_or(d.unknown_ratio),
        samples_per_known_group: samples.unwrap_or(d.samples_per_known_group),
        seed,
        ..d
    }
}

fn history_csv(trained: &TrainedHead) -> String {
    let groups = trained.history.first().and_then(|r| r.group_weights.as_ref()).map_or(0, Vec::len);
    let mut out = String::from("epoch,train_loss,validation");
    for g in 0..groups {
        out.push_str(&format!(",q{g}"));
    }
    out.push('\n');
    for (epoch, r) in trained.history.iter().enumerate() {
        out.push_str(&format!("{},{},", epoch + 1, format_fixed6(r.train_loss)));
        if let Some(v) = r.validation {
            out.push_str(&format_fixed6(v));
        }
        for q in r.group_weights.iter().flatten() {
            out.push(',');
            out.push_str(&format_fixed6(*q));
        }
        out.push('\n');
    }
    out
}

fn report_training(trained: &TrainedHead, dir: &Path) -> Result<(), CliError> {
    write(dir.join("head.tsv"), trained.head.to_tsv())?;
    write(dir.join("history.csv"), history_csv(trained))?;
    let last = trained.history.last().map_or(f64::NAN, |r| r.train_loss);
    match trained.best_epoch {
        Some(e) => println!("final train loss {last:.6}; selected epoch {}", e + 1),
        None => println!("final train loss {last:.6}"),
    }
    Ok(())
}

pub fn synth(args: SynthArgs) -> Result<(), CliError> {
    let dir = out_dir(&args.common)?;
    let format = output_format(&args.common)?;
    let mut config = synthetic_config(args.n_known, args.rho, args.samples_per_group, args.common.seed.unwrap_or(0));
    if let Some(d) = args.stable_dim {
        config.stable_dim = d;
    }
    let fractions = match args.split.as_deref() {
        None => [0.6, 0.2, 0.2],
        Some(&[a, b, c]) => [a, b, c],
        Some(other) => return Err(CliError::Config(format!("split needs three fractions, got {}", other.len()))),
    };
    for part in synthetic_splits(&config, fractions)? {
        let path = dir.join(format!("{}.{}", part.name, format.extension()));
        write_dataset(&part.data, &path, format)?;
        println!("{} {} {}", part.name, part.data.n(), path.display());
    }
    Ok(())
}

pub fn train_erm_cmd(args: TrainErmArgs) -> Result<(), CliError> {
    check_regime(&args.regime, &args.val)?;
    let train = load_dataset(&required(&args.train, "train")?)?;
    let val = optional(&args.val, "val")?.map(|p| load_dataset(&p)).transpose()?;
    let regime = regime(&args.regime)?;
    let dir = out_dir(&args.common)?;
    let config = train_config(args.lr, args.epochs, args.l2, args.momentum, args.common.seed.unwrap_or(0));
    let validator = val.as_ref().map(|data| Validator { data, regime: &regime });
    let trained = train_erm(&train, &config, validator)?;
    report_training(&trained, &dir)
}

pub fn train_gdro_cmd(args: TrainGdroArgs) -> Result<(), CliError> {
    check_regime(&args.regime, &args.val)?;
    let train = load_dataset(&required(&args.train, "train")?)?;
    let val = optional(&args.val, "val")?.map(|p| load_dataset(&p)).transpose()?;
    let regime = regime(&args.regime)?;
    let dir = out_dir(&args.common)?;
    let base = train_config(args.lr, args.epochs, args.l2, args.momentum, args.common.seed.unwrap_or(0));
    let known = match args.known_groups {
        Some(g) => g,
        None => (0..train.num_groups()).collect(),
    };
    let mut config = GdroConfig::new(base, known);
    if let Some(eta) = args.eta {
        config.eta = eta;
    }
    let validator = val.as_ref().map(|data| Validator { data, regime: &regime });
    let trained = train_gdro(&train, &config, validator)?;
    report_training(&trained, &dir)
}

pub fn adapt_cmd(args: AdaptArgs) -> Result<(), CliError> {
    check_regime(&args.regime, &args.val)?;
    let head = load_head(&required(&args.head, "head")?)?;
    let data = load_dataset(&required(&args.data, "data")?)?;
    let val = optional(&args.val, "val")?.map(|p| load_dataset(&p)).transpose()?;
    let regime = regime(&args.regime)?;
    let config = leia_config(args.gamma, args.rank, &args.variant, args.lr, args.epochs, args.reg)?;
    let dir = out_dir(&args.common)?;
    let validator = val.as_ref().map(|data| Validator { data, regime: &regime });
    let model = adapt(&head, &data, &config, validator)?;
    write(dir.join("model.tsv"), model.to_tsv())?;
    let eigs: Vec<String> = model.subspace.eigenvalues.iter().map(|l| format!("{l:.6e}")).collect();
    println!("rank {}; retained eigenvalues {}", model.subspace.rank(), eigs.join(" "));
    Ok(())
}

fn dataset_summary(ds: &EmbeddingDataset) -> String {
    format!(
        "{{\"n\":{},\"dim\":{},\"num_classes\":{},\"num_groups\":{}}}",
        ds.n(),
        ds.dim(),
        ds.num_classes(),
        ds.num_groups()
    )
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let data = load_dataset(&required(&args.data, "data")?)?;
    let head = optional(&args.head, "head")?;
    let model = optional(&args.model, "model")?;
    let logits = match (head, model) {
        (Some(p), _) => load_head(&p)?.logits(data.embeddings()).map_err(leia_core::Error::from)?,
        (_, Some(p)) => LeiaModel::from_tsv(&load_text(&p)?)
            .map_err(|e| CliError::Core(e.into()).context(&p))?
            .logits_batch(data.embeddings())
            .map_err(leia_core::Error::from)?,
        (None, None) => {
            println!("{}", dataset_summary(&data));
            return Ok(());
        }
    };
    let dir = out_dir(&args.common)?;
    let predictions = predict_classes(&logits);
    let json = if data.groups().is_some() {
        per_group_metrics(&predictions, &data).map_err(leia_core::Error::from)?.to_json()
    } else {
        let correct = predictions.iter().zip(data.labels()).filter(|(p, y)| p == y).count();
        let wca =
            worst_class_accuracy(&predictions, data.labels(), data.num_classes()).map_err(leia_core::Error::from)?;
        format!(
            "{{\"avg_acc\":{},\"worst_class_acc\":{},\"n\":{}}}",
            format_fixed6(correct as f64 / data.n() as f64),
            format_fixed6(wca),
            data.n()
        )
    };
    write(dir.join("metrics.json"), format!("{json}\n"))?;
    println!("{json}");
    Ok(())
}

pub fn pipeline(args: PipelineArgs) -> Result<(), CliError> {
    let seed = args.common.seed.unwrap_or(0);
    let (train, test, val) = match &args.train {
        Some(_) => {
            check_regime(&args.regime, &args.val)?;
            let train = load_dataset(&required(&args.train, "train")?)?;
            let test = load_dataset(&required(&args.test, "test")?)?;
            let val = optional(&args.val, "val")?.map(|p| load_dataset(&p)).transpose()?;
            (train, test, val)
        }
        None => {
            if args.test.is_some() || args.val.is_some() {
                return Err(CliError::Config("--test and --val require --train".into()));
            }
            let synth = synthetic_config(args.n_known, args.rho, args.samples_per_group, seed);
            let mut parts = synthetic_splits(&synth, [0.6, 0.2, 0.2])?.into_iter().map(|p| p.data);
            let (train, val, test) = (parts.next().unwrap(), parts.next().unwrap(), parts.next().unwrap());
            (train, test, Some(val))
        }
    };
    let config = PipelineConfig {
        erm_fraction: args.erm_fraction.unwrap_or(0.8),
        split_seed: seed,
        erm: train_config(args.erm_lr, args.erm_epochs, args.l2, args.momentum, seed),
        leia: leia_config(args.gamma, args.rank, &args.variant, args.leia_lr, args.leia_epochs, args.reg)?,
        regime: val.as_ref().map(|_| regime(&args.regime)).transpose()?,
    };
    if !(config.erm_fraction > 0.0 && config.erm_fraction < 1.0) {
        return Err(CliError::Config(format!("erm_fraction must lie in (0, 1), got {}", config.erm_fraction)));
    }
    let dir = out_dir(&args.common)?;
    let result = run_pipeline(&train, &test, val.as_ref(), &config)?;
    write(dir.join("head.tsv"), result.erm.head.to_tsv())?;
    write(dir.join("model.tsv"), result.model.to_tsv())?;
    write(dir.join("metrics_base.json"), format!("{}\n", result.base_metrics.to_json()))?;
    write(dir.join("metrics_leia.json"), format!("{}\n", result.leia_metrics.to_json()))?;
    println!(
        "worst-group accuracy: base {:.4} -> adapted {:.4}",
        result.base_metrics.worst_group_accuracy, result.leia_metrics.worst_group_accuracy
    );
    Ok(())
}

pub fn sweep(args: SweepArgs) -> Result<(), CliError> {
    let d = SweepConfig::default();
    let config = SweepConfig {
        n_known: args.n_known.unwrap_or(d.n_known),
        rhos: args.rhos.unwrap_or(d.rhos),
        seeds: args.seeds.unwrap_or(d.seeds),
        master_seed: args.common.seed.unwrap_or(d.master_seed),
        samples_per_known_group: args.samples_per_group.unwrap_or(d.samples_per_known_group),
        erm: train_config(args.erm_lr, args.erm_epochs, args.l2, args.momentum, args.common.seed.unwrap_or(0)),
        gdro_eta: args.eta.unwrap_or(d.gdro_eta),
        leia: leia_config(args.gamma, args.rank, &args.variant, args.leia_lr, args.leia_epochs, args.reg)?,
        split: d.split,
        parallel: !args.sequential.unwrap_or(false),
    };
    if config.n_known.is_empty() || config.rhos.is_empty() || config.seeds.is_empty() {
        return Err(CliError::Config("n_known, rhos and seeds must be non-empty".into()));
    }
    let dir = out_dir(&args.common)?;
    let result = run_sweep(&config);
    write(dir.join("sweep.json"), result.to_json())?;
    write(dir.join("sweep.csv"), result.to_csv())?;
    println!("{:>3} {:>5} {:>14} {:>14} {:>14} {:>14}", "N", "rho", "ERM", "GDRO", "LEIA", "harm");
    for c in &result.cells {
        let cell = |s: &leia_core::experiment::Summary| format!("{:.3}±{:.3}", s.mean, s.std);
        println!(
            "{:>3} {:>5} {:>14} {:>14} {:>14} {:>14}",
            c.n_known,
            c.rho,
            cell(&c.erm_uga),
            cell(&c.gdro_uga),
            cell(&c.leia_uga),
            cell(&c.harm)
        );
    }
    if let Some(failed) = result.failed().next() {
        let count = result.failed().count();
        return Err(CliError::Sweep {
            message: format!(
                "{count} cell(s) failed; first: N={} rho={}: {}",
                failed.n_known,
                failed.rho,
                failed.error.as_deref().unwrap_or_default()
            ),
            kind: failed.error_kind.unwrap_or(leia_core::ErrorKind::Numerical),
        });
    }
    Ok(())
}

pub fn cev(args: CevArgs) -> Result<(), CliError> {
    let data = load_dataset(&required(&args.data, "data")?)?;
    let head = load_head(&required(&args.head, "head")?)?;
    let band = (args.band_low.unwrap_or(BAND_LOW), args.band_high.unwrap_or(BAND_HIGH));
    if !(0.0 < band.0 && band.0 <= band.1 && band.1 <= 1.0) {
        return Err(CliError::Config(format!("need 0 < band_low <= band_high <= 1, got {band:?}")));
    }
    let dir = out_dir(&args.common)?;
    let table =
        cev_table(&data, &head, args.gamma.unwrap_or(LeiaConfig::default().gamma), variant(&args.variant)?, band)?;
    write(dir.join("cev.csv"), table.to_csv())?;
    let ranks: Vec<String> = table.band.iter().map(usize::to_string).collect();
    write(
        dir.join("rank_band.json"),
        format!(
            "{{\"band_low\":{},\"band_high\":{},\"ranks\":[{}]}}\n",
            format_fixed6(band.0),
            format_fixed6(band.1),
            ranks.join(",")
        ),
    )?;
    println!("ranks with CEV in [{}, {}]: {}", band.0, band.1, ranks.join(" "));
    Ok(())
}

pub fn project_cmd(args: ProjectArgs) -> Result<(), CliError> {
    let data = load_dataset(&required(&args.data, "data")?)?;
    let head = load_head(&required(&args.head, "head")?)?;
    let dims = args.dims.unwrap_or(3);
    let dir = out_dir(&args.common)?;
    let coords =
        project(&data, &head, args.gamma.unwrap_or(LeiaConfig::default().gamma), variant(&args.variant)?, dims)?;
    write(dir.join("projection.csv"), projection_csv(&coords, &data))?;
    println!("{} examples projected onto {dims} error directions", data.n());
    Ok(())
}
