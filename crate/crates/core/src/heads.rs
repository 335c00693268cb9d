//! Linear softmax heads on frozen embeddings, trained by full-batch gradient
//! descent with momentum. Two objectives: ERM (uniform example weights) and
//! Group DRO over a set of known groups (exponentiated group weights, all
//! other examples weighted zero).

use std::collections::BTreeSet;

use thiserror::Error;

use crate::dataset::EmbeddingDataset;
use crate::eval::{EvalError, Validator};
use crate::linalg::{cross_entropy_unchecked, softmax_into, DenseMatrix, LinalgError};
use crate::textio::{write_row, BlockReader, TextFormatError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HeadError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch} (learning rate {learning_rate}): loss is non-finite")]
    Diverged { epoch: usize, learning_rate: f64 },
    #[error("known group {0} has no training examples")]
    EmptyGroup(usize),
    #[error("training set has no group annotations")]
    MissingGroups,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("validation: {0}")]
    Eval(#[from] EvalError),
    #[error("head file {0}")]
    Format(#[from] TextFormatError),
}

pub type Result<T> = std::result::Result<T, HeadError>;

/// `f(z) = W z + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    /// `C × d`.
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

impl LinearHead {
    pub fn zeros(num_classes: usize, dim: usize) -> Self {
        Self { weight: DenseMatrix::zeros(num_classes, dim), bias: vec![0.0; num_classes] }
    }

    pub fn new(weight: DenseMatrix, bias: Vec<f64>) -> Result<Self> {
        if weight.rows() != bias.len() {
            return Err(HeadError::Shape(format!(
                "weight is {}x{}, bias has {} entries",
                weight.rows(),
                weight.cols(),
                bias.len()
            )));
        }
        if weight.first_non_finite().is_some() || bias.iter().any(|b| !b.is_finite()) {
            return Err(HeadError::Shape("head has non-finite entries".into()));
        }
        Ok(Self { weight, bias })
    }

    pub fn num_classes(&self) -> usize {
        self.weight.rows()
    }

    pub fn dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn predict_logits(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim() {
            return Err(HeadError::Shape(format!(
                "head is {}x{}, embedding has length {}",
                self.num_classes(),
                self.dim(),
                z.len()
            )));
        }
        Ok(self.logits_unchecked(z))
    }

    fn logits_unchecked(&self, z: &[f64]) -> Vec<f64> {
        (0..self.num_classes())
            .map(|c| self.weight.row(c).iter().zip(z).map(|(w, x)| w * x).sum::<f64>() + self.bias[c])
            .collect()
    }

    /// Logits for every row, `n × C`.
    pub fn logits(&self, embeddings: &DenseMatrix) -> Result<DenseMatrix> {
        if embeddings.cols() != self.dim() {
            return Err(HeadError::Shape(format!(
                "head is {}x{}, embeddings are {}x{}",
                self.num_classes(),
                self.dim(),
                embeddings.rows(),
                embeddings.cols()
            )));
        }
        let c = self.num_classes();
        let mut data = Vec::with_capacity(embeddings.rows() * c);
        for i in 0..embeddings.rows() {
            data.extend(self.logits_unchecked(embeddings.row(i)));
        }
        Ok(DenseMatrix::from_vec(embeddings.rows(), c, data)?)
    }

    /// `# head C=<C> d=<d>` then one row per class: weights, then bias.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# head C={} d={}\n", self.num_classes(), self.dim());
        for c in 0..self.num_classes() {
            write_row(&mut out, self.weight.row(c).iter().copied().chain([self.bias[c]]));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut reader = BlockReader::new(text);
        let head = Self::read_block(&mut reader)?;
        reader.expect_end()?;
        Ok(head)
    }

    pub(crate) fn read_block(reader: &mut BlockReader<'_>) -> Result<Self> {
        let dims = reader.header("head", &["C", "d"])?;
        let (classes, dim) = (dims[0], dims[1]);
        let mut weight = DenseMatrix::zeros(classes, dim);
        let mut bias = Vec::with_capacity(classes);
        for c in 0..classes {
            let row = reader.row(dim + 1)?;
            weight.row_mut(c).copy_from_slice(&row[..dim]);
            bias.push(row[dim]);
        }
        Self::new(weight, bias)
    }
}

/// Gradient of the weighted objective with respect to `W` and `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGradient {
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

fn check_example_weights(n: usize, weights: Option<&[f64]>) -> Result<Vec<f64>> {
    match weights {
        None => Ok(vec![1.0 / n as f64; n]),
        Some(w) => {
            if w.len() != n {
                return Err(HeadError::Shape(format!("{} example weights for {n} examples", w.len())));
            }
            if let Some(i) = w.iter().position(|x| !x.is_finite() || *x < 0.0) {
                return Err(LinalgError::InvalidWeight { index: i, value: w[i] }.into());
            }
            let sum: f64 = w.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(LinalgError::WeightsNotNormalized { sum }.into());
            }
            Ok(w.to_vec())
        }
    }
}

fn check_batch(head: &LinearHead, embeddings: &DenseMatrix, labels: &[usize]) -> Result<()> {
    if embeddings.cols() != head.dim() {
        return Err(HeadError::Shape(format!(
            "head expects d={}, embeddings have d={}",
            head.dim(),
            embeddings.cols()
        )));
    }
    if labels.len() != embeddings.rows() {
        return Err(HeadError::Shape(format!("{} labels for {} embeddings", labels.len(), embeddings.rows())));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= head.num_classes()) {
        return Err(LinalgError::LabelOutOfRange { label: y, classes: head.num_classes() }.into());
    }
    Ok(())
}

/// `Σ_i μ_i ℓ(W z_i + b, y_i) + ½ λ ‖W‖²_F`, uniform `μ` when `weights` is `None`.
pub fn head_objective(
    head: &LinearHead,
    embeddings: &DenseMatrix,
    labels: &[usize],
    weights: Option<&[f64]>,
    l2_penalty: f64,
) -> Result<f64> {
    check_batch(head, embeddings, labels)?;
    let w = check_example_weights(labels.len(), weights)?;
    Ok(loss_and_gradient(head, embeddings, labels, &w, l2_penalty, false).0)
}

/// Exact gradient of [`head_objective`]:
/// `Σ_i μ_i (softmax(f_i) − e_{y_i}) z_iᵀ + λ W` and `Σ_i μ_i (softmax(f_i) − e_{y_i})`.
pub fn head_gradient(
    head: &LinearHead,
    embeddings: &DenseMatrix,
    labels: &[usize],
    weights: Option<&[f64]>,
    l2_penalty: f64,
) -> Result<HeadGradient> {
    check_batch(head, embeddings, labels)?;
    let w = check_example_weights(labels.len(), weights)?;
    Ok(loss_and_gradient(head, embeddings, labels, &w, l2_penalty, true).1)
}

/// Zero-weight examples are skipped entirely.
fn loss_and_gradient(
    head: &LinearHead,
    embeddings: &DenseMatrix,
    labels: &[usize],
    weights: &[f64],
    l2_penalty: f64,
    with_gradient: bool,
) -> (f64, HeadGradient) {
    let c = head.num_classes();
    let mut grad = HeadGradient { weight: DenseMatrix::zeros(c, head.dim()), bias: vec![0.0; c] };
    let mut probs = vec![0.0; c];
    let mut loss = 0.0;
    for (i, (&mu, &y)) in weights.iter().zip(labels).enumerate() {
        if mu == 0.0 {
            continue;
        }
        let z = embeddings.row(i);
        let logits = head.logits_unchecked(z);
        loss += mu * cross_entropy_unchecked(&logits, y);
        if !with_gradient {
            continue;
        }
        softmax_into(&logits, &mut probs);
        probs[y] -= 1.0;
        for (k, &p) in probs.iter().enumerate() {
            let r = mu * p;
            grad.bias[k] += r;
            for (g, &x) in grad.weight.row_mut(k).iter_mut().zip(z) {
                *g += r * x;
            }
        }
    }
    if l2_penalty != 0.0 {
        loss += 0.5 * l2_penalty * head.weight.as_slice().iter().map(|w| w * w).sum::<f64>();
        if with_gradient {
            for (g, &w) in grad.weight.as_mut_slice().iter_mut().zip(head.weight.as_slice()) {
                *g += l2_penalty * w;
            }
        }
    }
    (loss, grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2_penalty: f64,
    /// Recorded for provenance; full-batch descent from a zero start draws no randomness.
    pub seed: u64,
    pub momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.01, epochs: 100, l2_penalty: 0.0, seed: 0, momentum: 0.0 }
    }
}

impl TrainConfig {
    /// Learning rate 0.01, momentum 0.9, 100 epochs.
    pub fn synthetic_erm() -> Self {
        Self { momentum: 0.9, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(HeadError::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.l2_penalty.is_finite() && self.l2_penalty >= 0.0) {
            return Err(HeadError::Config(format!("l2_penalty must be non-negative, got {}", self.l2_penalty)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(HeadError::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GdroConfig {
    pub base: TrainConfig,
    pub known_groups: BTreeSet<usize>,
    /// Step size of the exponentiated group-weight update.
    pub eta: f64,
}

impl GdroConfig {
    pub fn new(base: TrainConfig, known_groups: impl IntoIterator<Item = usize>) -> Self {
        Self { base, known_groups: known_groups.into_iter().collect(), eta: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Erm,
    Gdro,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// Objective at the start of the epoch, before the update.
    pub train_loss: f64,
    /// Selection score after the update, when validating.
    pub validation: Option<f64>,
    /// Group DRO weights used for this epoch's step, in `known_groups` order.
    pub group_weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedHead {
    pub head: LinearHead,
    pub provenance: Provenance,
    pub history: Vec<EpochRecord>,
    /// Zero-based epoch whose head was returned, when validating.
    pub best_epoch: Option<usize>,
}

/// Momentum descent shared by both trainers. `weigh` receives the current
/// per-example losses and returns the example weights for this step plus an
/// optional record of group weights.
fn descend(
    train: &EmbeddingDataset,
    config: &TrainConfig,
    validation: Option<Validator<'_>>,
    provenance: Provenance,
    mut weigh: impl FnMut(&[f64]) -> (Vec<f64>, Option<Vec<f64>>),
) -> Result<TrainedHead> {
    config.validate()?;
    if train.num_classes() < 2 {
        return Err(HeadError::Config(format!("need at least 2 classes, dataset has {}", train.num_classes())));
    }
    let (c, d) = (train.num_classes(), train.dim());
    let mut head = LinearHead::zeros(c, d);
    let mut vel_w = DenseMatrix::zeros(c, d);
    let mut vel_b = vec![0.0; c];
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, LinearHead)> = None;
    let x = train.embeddings();
    let labels = train.labels();

    for epoch in 0..config.epochs {
        let losses: Vec<f64> =
            (0..train.n()).map(|i| cross_entropy_unchecked(&head.logits_unchecked(x.row(i)), labels[i])).collect();
        let (weights, group_weights) = weigh(&losses);
        let (loss, grad) = loss_and_gradient(&head, x, labels, &weights, config.l2_penalty, true);
        let diverged = HeadError::Diverged { epoch, learning_rate: config.learning_rate };
        if !loss.is_finite() {
            return Err(diverged);
        }
        for ((v, w), g) in vel_w.as_mut_slice().iter_mut().zip(head.weight.as_mut_slice()).zip(grad.weight.as_slice()) {
            *v = config.momentum * *v + g;
            *w -= config.learning_rate * *v;
        }
        for ((v, b), g) in vel_b.iter_mut().zip(head.bias.iter_mut()).zip(&grad.bias) {
            *v = config.momentum * *v + g;
            *b -= config.learning_rate * *v;
        }
        if head.weight.first_non_finite().is_some() || head.bias.iter().any(|b| !b.is_finite()) {
            return Err(diverged);
        }
        let score = match &validation {
            Some(v) => {
                let s = v.score(&head.logits(v.data.embeddings())?)?;
                if best.as_ref().is_none_or(|(b, _, _)| s > *b) {
                    best = Some((s, epoch, head.clone()));
                }
                Some(s)
            }
            None => None,
        };
        history.push(EpochRecord { train_loss: loss, validation: score, group_weights });
    }

    let (head, best_epoch) = match best {
        Some((_, epoch, h)) => (h, Some(epoch)),
        None => (head, None),
    };
    Ok(TrainedHead { head, provenance, history, best_epoch })
}

/// ERM: uniform weights over every training example.
pub fn train_erm(
    train: &EmbeddingDataset,
    config: &TrainConfig,
    validation: Option<Validator<'_>>,
) -> Result<TrainedHead> {
    let uniform = vec![1.0 / train.n() as f64; train.n()];
    descend(train, config, validation, Provenance::Erm, |_| (uniform.clone(), None))
}

/// Group DRO over `config.known_groups`.
///
/// Each epoch: mean loss per known group, `q_g ← q_g·exp(η ℓ_g)` renormalized
/// over the known groups, then a descent step on `Σ_g q_g ℓ_g`. Examples in
/// other groups carry zero weight.
pub fn train_gdro(
    train: &EmbeddingDataset,
    config: &GdroConfig,
    validation: Option<Validator<'_>>,
) -> Result<TrainedHead> {
    let groups = train.groups().ok_or(HeadError::MissingGroups)?;
    if config.known_groups.is_empty() {
        return Err(HeadError::Config("known_groups is empty".into()));
    }
    if !(config.eta.is_finite() && config.eta > 0.0) {
        return Err(HeadError::Config(format!("eta must be positive, got {}", config.eta)));
    }
    if let Some(&g) = config.known_groups.iter().find(|&&g| g >= train.num_groups()) {
        return Err(HeadError::Config(format!("known group {g} out of range for {} groups", train.num_groups())));
    }
    let known: Vec<usize> = config.known_groups.iter().copied().collect();
    let members: Vec<Vec<usize>> =
        known.iter().map(|&g| (0..train.n()).filter(|&i| groups[i] == g).collect()).collect();
    if let Some(k) = members.iter().position(Vec::is_empty) {
        return Err(HeadError::EmptyGroup(known[k]));
    }

    // log q, so repeated exponentiation cannot overflow
    let mut log_q = vec![0.0; known.len()];
    descend(train, &config.base, validation, Provenance::Gdro, |losses| {
        for (lq, idx) in log_q.iter_mut().zip(&members) {
            let mean = idx.iter().map(|&i| losses[i]).sum::<f64>() / idx.len() as f64;
            *lq += config.eta * mean;
        }
        let mut q = vec![0.0; known.len()];
        softmax_into(&log_q, &mut q);
        let mut weights = vec![0.0; train.n()];
        for (qg, idx) in q.iter().zip(&members) {
            let w = qg / idx.len() as f64;
            for &i in idx {
                weights[i] = w;
            }
        }
        (weights, Some(q))
    })
}
