//! End-to-end drivers: the two-stage pipeline on given splits, and the
//! unknown-group synthetic sweep over (known groups × unknown-group ratio).

use rayon::prelude::*;

use crate::dataset::{generate_synthetic, split_dataset, EmbeddingDataset, SplitPart, SplitSpec, SyntheticConfig};
use crate::eval::{per_group_metrics, predict_classes, GroupMetrics, SelectionRegime, Validator};
use crate::fmt::format_fixed6;
use crate::heads::{train_erm, train_gdro, GdroConfig, TrainConfig, TrainedHead};
use crate::leia::{adapt, LeiaConfig, LeiaModel};
use crate::{Error, ErrorKind, Result};

// ---------------------------------------------------------------------------
// pipeline

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Share of the training split used for the ERM stage; the rest adapts.
    pub erm_fraction: f64,
    pub split_seed: u64,
    pub erm: TrainConfig,
    pub leia: LeiaConfig,
    /// Early-stopping regime, used only when a validation split is given.
    pub regime: Option<SelectionRegime>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            erm_fraction: 0.8,
            split_seed: 0,
            erm: TrainConfig::synthetic_erm(),
            leia: LeiaConfig::default(),
            regime: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub erm: TrainedHead,
    pub model: LeiaModel,
    pub base_metrics: GroupMetrics,
    pub leia_metrics: GroupMetrics,
}

/// ERM on the ERM share of `train`, LEIA on the remainder, both evaluated on `test`.
pub fn run_pipeline(
    train: &EmbeddingDataset,
    test: &EmbeddingDataset,
    validation: Option<&EmbeddingDataset>,
    config: &PipelineConfig,
) -> Result<PipelineOutput> {
    let spec = SplitSpec::new([("erm", config.erm_fraction), ("leia", 1.0 - config.erm_fraction)], config.split_seed);
    let parts = split_dataset(train, &spec).map_err(|e| Error::in_stage("split")(e.into()))?;
    let (erm_set, leia_set) = (&parts[0].data, &parts[1].data);

    let validator = match (validation, &config.regime) {
        (Some(data), Some(regime)) => Some(Validator { data, regime }),
        _ => None,
    };
    let erm = train_erm(erm_set, &config.erm, validator).map_err(|e| Error::in_stage("erm")(e.into()))?;
    let model = adapt(&erm.head, leia_set, &config.leia, validator).map_err(|e| Error::in_stage("leia")(e.into()))?;

    let evaluate =
        |logits| per_group_metrics(&predict_classes(&logits), test).map_err(|e| Error::in_stage("eval")(e.into()));
    let base_logits = erm.head.logits(test.embeddings()).map_err(|e| Error::in_stage("eval")(e.into()))?;
    let leia_logits = model.logits_batch(test.embeddings()).map_err(|e| Error::in_stage("eval")(e.into()))?;
    Ok(PipelineOutput { base_metrics: evaluate(base_logits)?, leia_metrics: evaluate(leia_logits)?, erm, model })
}

// ---------------------------------------------------------------------------
// synthetic sweep

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub n_known: Vec<usize>,
    pub rhos: Vec<f64>,
    pub seeds: Vec<u64>,
    pub master_seed: u64,
    pub samples_per_known_group: usize,
    pub erm: TrainConfig,
    pub gdro_eta: f64,
    pub leia: LeiaConfig,
    /// Train / validation / test fractions of each generated dataset.
    pub split: [f64; 3],
    pub parallel: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_known: vec![1, 2, 3, 4],
            rhos: vec![0.1, 0.2, 0.3],
            seeds: vec![0, 1, 42],
            master_seed: 0,
            samples_per_known_group: 1000,
            erm: TrainConfig::synthetic_erm(),
            gdro_eta: 0.01,
            leia: LeiaConfig::default(),
            split: [0.6, 0.2, 0.2],
            parallel: true,
        }
    }
}

/// Unknown-group test accuracy of the three methods for one generated dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedOutcome {
    pub erm_uga: f64,
    pub gdro_uga: f64,
    pub leia_uga: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; zero for a single seed.
    pub std: f64,
    pub per_seed: Vec<f64>,
}

impl Summary {
    pub fn of(values: Vec<f64>) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN, per_seed: values };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std =
            if n < 2 { 0.0 } else { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() };
        Self { mean, std, per_seed: values }
    }

    fn to_json(&self) -> String {
        let seeds: Vec<String> = self.per_seed.iter().map(|v| format_fixed6(*v)).collect();
        format!(
            "{{\"mean\":{},\"std\":{},\"per_seed\":[{}]}}",
            json_number(self.mean),
            json_number(self.std),
            seeds.join(",")
        )
    }
}

fn json_number(x: f64) -> String {
    if x.is_finite() {
        format_fixed6(x)
    } else {
        "null".into()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub n_known: usize,
    pub rho: f64,
    pub erm_uga: Summary,
    pub gdro_uga: Summary,
    pub leia_uga: Summary,
    /// Per seed `erm − gdro`.
    pub harm: Summary,
    pub error: Option<String>,
    pub error_kind: Option<ErrorKind>,
}

impl SweepCell {
    fn to_json(&self) -> String {
        let mut s = format!(
            "{{\"n_known\":{},\"rho\":{},\"erm_uga\":{},\"gdro_uga\":{},\"leia_uga\":{},\"harm\":{}",
            self.n_known,
            self.rho,
            self.erm_uga.to_json(),
            self.gdro_uga.to_json(),
            self.leia_uga.to_json(),
            self.harm.to_json()
        );
        if let Some(e) = &self.error {
            s.push_str(&format!(",\"error\":{}", json_string(e)));
        }
        s.push('}');
        s
    }
}

fn json_string(s: &str) -> String {
    let mut out = String::from("\"");
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub fn failed(&self) -> impl Iterator<Item = &SweepCell> {
        self.cells.iter().filter(|c| c.error.is_some())
    }

    pub fn cell(&self, n_known: usize, rho: f64) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.n_known == n_known && c.rho == rho)
    }

    pub fn to_json(&self) -> String {
        let cells: Vec<String> = self.cells.iter().map(SweepCell::to_json).collect();
        format!("{{\"cells\":[{}]}}\n", cells.join(","))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "n_known,rho,erm_uga_mean,erm_uga_std,gdro_uga_mean,gdro_uga_std,leia_uga_mean,leia_uga_std,harm_mean,harm_std\n",
        );
        for c in &self.cells {
            let stats: Vec<String> = [&c.erm_uga, &c.gdro_uga, &c.leia_uga, &c.harm]
                .iter()
                .flat_map(|s| [json_number(s.mean), json_number(s.std)])
                .collect();
            out.push_str(&format!("{},{},{}\n", c.n_known, c.rho, stats.join(",")));
        }
        out
    }
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generates a synthetic dataset and splits it into `train`, `val`, `test`.
/// The shuffle seed is derived from the generator seed.
pub fn synthetic_splits(config: &SyntheticConfig, fractions: [f64; 3]) -> Result<Vec<SplitPart>> {
    let data = generate_synthetic(config).map_err(|e| Error::in_stage("synth")(e.into()))?;
    let [tr, va, te] = fractions;
    split_dataset(&data, &SplitSpec::new([("train", tr), ("val", va), ("test", te)], mix(config.seed)))
        .map_err(|e| Error::in_stage("split")(e.into()))
}

/// Seed of one (cell, seed) run, a pure function of its coordinates.
pub fn derive_seed(master_seed: u64, n_known: usize, rho_index: usize, seed: u64) -> u64 {
    [n_known as u64, rho_index as u64, seed].iter().fold(mix(master_seed), |acc, &x| mix(acc ^ mix(x)))
}

/// One generated dataset: ERM, Group DRO on the known groups, LEIA on top of
/// the ERM head, all scored by unknown-group (group 0) test accuracy.
pub fn run_seed(config: &SweepConfig, n_known: usize, rho_index: usize, seed: u64) -> Result<SeedOutcome> {
    let rho = config.rhos[rho_index];
    let stream = derive_seed(config.master_seed, n_known, rho_index, seed);
    let synth = SyntheticConfig {
        num_known_groups: n_known,
        unknown_ratio: rho,
        samples_per_known_group: config.samples_per_known_group,
        seed: stream,
        ..Default::default()
    };
    let parts = synthetic_splits(&synth, config.split)?;
    let (train, test) = (&parts[0].data, &parts[2].data);

    let uga = |logits| -> Result<f64> {
        let m = per_group_metrics(&predict_classes(&logits), test)?;
        m.unknown_group_accuracy().ok_or_else(|| crate::eval::EvalError::EmptyGroup(0).into())
    };

    let erm = train_erm(train, &config.erm, None).map_err(|e| Error::in_stage("erm")(e.into()))?;
    let mut gdro_cfg = GdroConfig::new(config.erm.clone(), 1..=n_known);
    gdro_cfg.eta = config.gdro_eta;
    let gdro = train_gdro(train, &gdro_cfg, None).map_err(|e| Error::in_stage("gdro")(e.into()))?;
    let model = adapt(&erm.head, train, &config.leia, None).map_err(|e| Error::in_stage("leia")(e.into()))?;

    Ok(SeedOutcome {
        erm_uga: uga(erm.head.logits(test.embeddings())?)?,
        gdro_uga: uga(gdro.head.logits(test.embeddings())?)?,
        leia_uga: uga(model.logits_batch(test.embeddings())?)?,
    })
}

/// Every seed of one `(n_known, rhos[rho_index])` cell, sequentially. The
/// first failing seed marks the cell as failed.
pub fn run_cell(config: &SweepConfig, n_known: usize, rho_index: usize) -> SweepCell {
    let outcomes: Vec<Result<SeedOutcome>> =
        config.seeds.iter().map(|&s| run_seed(config, n_known, rho_index, s)).collect();
    let mut ok = Vec::new();
    let mut error = None;
    let mut error_kind = None;
    for (seed, o) in config.seeds.iter().zip(outcomes) {
        match o {
            Ok(o) => ok.push(o),
            Err(e) if error.is_none() => {
                error = Some(format!("seed {seed}: {e}"));
                error_kind = Some(e.kind());
            }
            Err(_) => {}
        }
    }
    let summary = |f: fn(&SeedOutcome) -> f64| Summary::of(ok.iter().map(f).collect());
    SweepCell {
        n_known,
        rho: config.rhos[rho_index],
        erm_uga: summary(|o| o.erm_uga),
        gdro_uga: summary(|o| o.gdro_uga),
        leia_uga: summary(|o| o.leia_uga),
        harm: summary(|o| crate::eval::harm(o.erm_uga, o.gdro_uga)),
        error,
        error_kind,
    }
}

/// Runs the listed `(n_known, rho_index)` cells, in parallel when
/// `config.parallel`; results come back in the order given.
pub fn run_cells(config: &SweepConfig, cells: &[(usize, usize)]) -> Vec<SweepCell> {
    if config.parallel {
        cells.par_iter().map(|&(n, r)| run_cell(config, n, r)).collect()
    } else {
        cells.iter().map(|&(n, r)| run_cell(config, n, r)).collect()
    }
}

/// The full grid, ordered by `n_known` then `rho`.
pub fn run_sweep(config: &SweepConfig) -> SweepResult {
    let grid: Vec<(usize, usize)> =
        config.n_known.iter().flat_map(|&n| (0..config.rhos.len()).map(move |r| (n, r))).collect();
    SweepResult { cells: run_cells(config, &grid) }
}
