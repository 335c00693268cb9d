//! Stage 2 adaptation: loss-driven example weights, the error-weighted
//! subspace, and a low-rank additive logit correction learned inside it.
//!
//! With a frozen head `f` and subspace basis `V ∈ R^{d×k}`, the adapted
//! logits are `f(z) + Aᵀ Vᵀ z`, and `A ∈ R^{k×C}` is the only trained
//! parameter. The projection uses the raw (uncentered) embedding even though
//! the covariance that produced `V` is centered.

use std::str::FromStr;

use thiserror::Error;

use crate::dataset::EmbeddingDataset;
use crate::eval::{EvalError, Validator};
use crate::heads::{HeadError, LinearHead};
use crate::linalg::{
    cross_entropy_unchecked, cumulative_explained_variance_curve, error_weighted_covariance, softmax_into,
    symmetric_eigendecomposition, top_k_subspace, DenseMatrix, ErrorSubspace, LinalgError,
};
use crate::textio::{write_row, BlockReader, TextFormatError};

/// Relative size below which an error spectrum counts as all zero.
const ZERO_SPECTRUM_TOL: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LeiaError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid LEIA config: {0}")]
    Config(String),
    #[error("error-weighted covariance is zero: no error structure to build a subspace from")]
    NoErrorStructure,
    #[error("adjustment training diverged at epoch {epoch}: loss is non-finite")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error("validation: {0}")]
    Eval(#[from] EvalError),
    #[error("model file {0}")]
    Format(#[from] TextFormatError),
}

pub type Result<T> = std::result::Result<T, LeiaError>;

/// Raw per-example score that gets exponentiated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightVariant {
    /// `γ · ℓ_i`, i.e. `μ_i ∝ p_true^{−γ}`.
    CrossEntropy,
    /// `γ · (1 − p_true)`.
    #[default]
    OneMinusP,
}

impl FromStr for WeightVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cross_entropy" => Ok(Self::CrossEntropy),
            "one_minus_p" => Ok(Self::OneMinusP),
            other => Err(format!("unknown weight variant `{other}` (expected cross_entropy or one_minus_p)")),
        }
    }
}

/// Normalized, strictly positive example weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LeiaWeights(Vec<f64>);

impl LeiaWeights {
    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl AsRef<[f64]> for LeiaWeights {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// `μ_i ∝ exp(γ s_i)` with `s_i` the variant's score, computed from the
/// frozen head's logits. The max log-weight is subtracted before
/// exponentiating; weights that would underflow are floored at the smallest
/// positive normal double.
pub fn compute_leia_weights(
    base_logits: &DenseMatrix,
    labels: &[usize],
    gamma: f64,
    variant: WeightVariant,
) -> Result<LeiaWeights> {
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(LeiaError::Config(format!("gamma must be finite and non-negative, got {gamma}")));
    }
    let (n, c) = base_logits.shape();
    if n == 0 {
        return Err(LinalgError::Empty("weights for zero examples").into());
    }
    if labels.len() != n {
        return Err(LeiaError::Shape(format!("{} labels for {n} logit rows", labels.len())));
    }
    if let Some(i) = base_logits.first_non_finite() {
        return Err(LinalgError::NonFinite { index: i, value: base_logits.as_slice()[i] }.into());
    }
    let mut probs = vec![0.0; c];
    let mut log_w = Vec::with_capacity(n);
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(LinalgError::LabelOutOfRange { label: y, classes: c }.into());
        }
        let row = base_logits.row(i);
        let score = match variant {
            WeightVariant::CrossEntropy => cross_entropy_unchecked(row, y),
            WeightVariant::OneMinusP => {
                softmax_into(row, &mut probs);
                1.0 - probs[y]
            }
        };
        log_w.push(gamma * score);
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = log_w.iter().map(|l| (l - max).exp().max(f64::MIN_POSITIVE)).collect();
    let sum: f64 = raw.iter().sum();
    Ok(LeiaWeights(raw.into_iter().map(|w| w / sum).collect()))
}

/// Error-weighted covariance, its eigendecomposition, and the top-`k` slice.
/// Fails with [`LeiaError::NoErrorStructure`] when the weighted covariance
/// vanishes.
pub fn build_error_subspace(embeddings: &DenseMatrix, weights: &LeiaWeights, k: usize) -> Result<ErrorSubspace> {
    let max = embeddings.cols().min(embeddings.rows());
    if k == 0 || k > max {
        return Err(LinalgError::RankOutOfRange { k, max }.into());
    }
    let cov = error_weighted_covariance(embeddings, weights.values())?;
    let dec = symmetric_eigendecomposition(&cov)?;
    let scale: f64 = (0..embeddings.rows())
        .map(|i| weights.values()[i] * embeddings.row(i).iter().map(|x| x * x).sum::<f64>())
        .sum();
    if dec.eigenvalues[0] <= ZERO_SPECTRUM_TOL * (1.0 + scale) {
        return Err(LeiaError::NoErrorStructure);
    }
    Ok(top_k_subspace(&dec, k)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeiaConfig {
    /// Loss-weight sharpness.
    pub gamma: f64,
    pub rank: usize,
    pub weight_variant: WeightVariant,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Coefficient of the `‖A‖²_F` penalty.
    pub reg_coeff: f64,
}

impl Default for LeiaConfig {
    fn default() -> Self {
        Self {
            gamma: 100.0,
            rank: 1,
            weight_variant: WeightVariant::OneMinusP,
            learning_rate: 0.02,
            epochs: 100,
            reg_coeff: 0.0,
        }
    }
}

impl LeiaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(LeiaError::Config(format!("gamma must be non-negative, got {}", self.gamma)));
        }
        if self.rank == 0 {
            return Err(LeiaError::Config("rank must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(LeiaError::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.reg_coeff.is_finite() && self.reg_coeff >= 0.0) {
            return Err(LeiaError::Config(format!("reg_coeff must be non-negative, got {}", self.reg_coeff)));
        }
        Ok(())
    }
}

/// The `k × C` correction matrix `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeiaAdjustment(pub DenseMatrix);

impl LeiaAdjustment {
    pub fn zeros(rank: usize, num_classes: usize) -> Self {
        Self(DenseMatrix::zeros(rank, num_classes))
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.0
    }
}

/// Frozen head, frozen subspace, learned adjustment.
#[derive(Debug, Clone, PartialEq)]
pub struct LeiaModel {
    pub head: LinearHead,
    pub subspace: ErrorSubspace,
    pub adjustment: LeiaAdjustment,
}

impl LeiaModel {
    pub fn new(head: LinearHead, subspace: ErrorSubspace, adjustment: LeiaAdjustment) -> Result<Self> {
        if subspace.dim() != head.dim() {
            return Err(LeiaError::Shape(format!("subspace has d={}, head has d={}", subspace.dim(), head.dim())));
        }
        let a = adjustment.matrix();
        if a.rows() != subspace.rank() || a.cols() != head.num_classes() {
            return Err(LeiaError::Shape(format!(
                "adjustment is {}x{}, expected {}x{}",
                a.rows(),
                a.cols(),
                subspace.rank(),
                head.num_classes()
            )));
        }
        if a.first_non_finite().is_some() {
            return Err(LeiaError::Shape("adjustment has non-finite entries".into()));
        }
        Ok(Self { head, subspace, adjustment })
    }

    /// `f(z) + Aᵀ Vᵀ z`.
    pub fn logits(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut logits = self.head.predict_logits(z)?;
        let projected = self.subspace.project(z)?;
        add_correction(&mut logits, &projected, self.adjustment.matrix());
        Ok(logits)
    }

    /// Adapted logits for every row, `n × C`.
    pub fn logits_batch(&self, embeddings: &DenseMatrix) -> Result<DenseMatrix> {
        let mut logits = self.head.logits(embeddings)?;
        let projected = self.subspace.project_rows(embeddings)?;
        for i in 0..logits.rows() {
            add_correction(logits.row_mut(i), projected.row(i), self.adjustment.matrix());
        }
        Ok(logits)
    }

    /// Head block, subspace block (d rows of k basis entries, then the k
    /// eigenvalues), adjustment block (k rows of C entries).
    pub fn to_tsv(&self) -> String {
        let mut out = self.head.to_tsv();
        let (d, k) = (self.subspace.dim(), self.subspace.rank());
        out.push_str(&format!("# subspace d={d} k={k}\n"));
        for i in 0..d {
            write_row(&mut out, self.subspace.basis.row(i).iter().copied());
        }
        write_row(&mut out, self.subspace.eigenvalues.iter().copied());
        let a = self.adjustment.matrix();
        out.push_str(&format!("# adjustment k={} C={}\n", a.rows(), a.cols()));
        for r in 0..a.rows() {
            write_row(&mut out, a.row(r).iter().copied());
        }
        out
    }

    /// Inverse of [`LeiaModel::to_tsv`]. The file keeps only the retained
    /// eigenvalues, so `total_variance` comes back as their clamped sum.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut reader = BlockReader::new(text);
        let head = LinearHead::read_block(&mut reader)?;
        let dims = reader.header("subspace", &["d", "k"])?;
        let (d, k) = (dims[0], dims[1]);
        let mut basis = DenseMatrix::zeros(d, k);
        for i in 0..d {
            basis.row_mut(i).copy_from_slice(&reader.row(k)?);
        }
        let eigenvalues = reader.row(k)?;
        let dims = reader.header("adjustment", &["k", "C"])?;
        let mut a = DenseMatrix::zeros(dims[0], dims[1]);
        for r in 0..dims[0] {
            a.row_mut(r).copy_from_slice(&reader.row(dims[1])?);
        }
        reader.expect_end()?;
        let total_variance = eigenvalues.iter().map(|l| l.max(0.0)).sum();
        Self::new(head, ErrorSubspace { basis, eigenvalues, total_variance }, LeiaAdjustment(a))
    }
}

/// `logits += Aᵀ p` for projected coordinates `p`. Zero terms are skipped so a
/// zero adjustment leaves the base logits bit-for-bit unchanged.
fn add_correction(logits: &mut [f64], projected: &[f64], a: &DenseMatrix) {
    for (c, l) in logits.iter_mut().enumerate() {
        let delta: f64 = projected.iter().enumerate().map(|(r, p)| a[(r, c)] * p).sum();
        if delta != 0.0 {
            *l += delta;
        }
    }
}

/// Precomputed frozen quantities of the adjustment objective.
#[derive(Debug, Clone)]
pub struct AdjustmentProblem<'a> {
    base_logits: DenseMatrix,
    projected: DenseMatrix,
    labels: &'a [usize],
    weights: &'a LeiaWeights,
    reg_coeff: f64,
}

impl<'a> AdjustmentProblem<'a> {
    pub fn new(
        adapt_set: &'a EmbeddingDataset,
        head: &LinearHead,
        subspace: &ErrorSubspace,
        weights: &'a LeiaWeights,
        reg_coeff: f64,
    ) -> Result<Self> {
        if weights.len() != adapt_set.n() {
            return Err(LeiaError::Shape(format!(
                "{} weights for {} adaptation examples",
                weights.len(),
                adapt_set.n()
            )));
        }
        if subspace.dim() != adapt_set.dim() {
            return Err(LeiaError::Shape(format!("subspace has d={}, data has d={}", subspace.dim(), adapt_set.dim())));
        }
        if head.num_classes() != adapt_set.num_classes() {
            return Err(LeiaError::Shape(format!(
                "head has {} classes, data has {}",
                head.num_classes(),
                adapt_set.num_classes()
            )));
        }
        Ok(Self {
            base_logits: head.logits(adapt_set.embeddings())?,
            projected: subspace.project_rows(adapt_set.embeddings())?,
            labels: adapt_set.labels(),
            weights,
            reg_coeff,
        })
    }

    pub fn rank(&self) -> usize {
        self.projected.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.base_logits.cols()
    }

    /// `Σ_i μ_i ℓ(f_i + Aᵀ p_i, y_i) + reg·‖A‖²_F`.
    pub fn objective(&self, a: &DenseMatrix) -> f64 {
        self.evaluate(a, false).0
    }

    /// `Σ_i μ_i p_i (softmax − e_y)ᵀ + 2·reg·A`.
    pub fn gradient(&self, a: &DenseMatrix) -> DenseMatrix {
        self.evaluate(a, true).1
    }

    fn evaluate(&self, a: &DenseMatrix, with_gradient: bool) -> (f64, DenseMatrix) {
        let (k, c) = (self.rank(), self.num_classes());
        let mut grad = DenseMatrix::zeros(k, c);
        let mut logits = vec![0.0; c];
        let mut probs = vec![0.0; c];
        let mut loss = 0.0;
        for (i, (&mu, &y)) in self.weights.values().iter().zip(self.labels).enumerate() {
            let p = self.projected.row(i);
            logits.copy_from_slice(self.base_logits.row(i));
            add_correction(&mut logits, p, a);
            loss += mu * cross_entropy_unchecked(&logits, y);
            if with_gradient {
                softmax_into(&logits, &mut probs);
                probs[y] -= 1.0;
                for (r, &pr) in p.iter().enumerate() {
                    let s = mu * pr;
                    for (g, &q) in grad.row_mut(r).iter_mut().zip(&probs) {
                        *g += s * q;
                    }
                }
            }
        }
        if self.reg_coeff != 0.0 {
            loss += self.reg_coeff * a.as_slice().iter().map(|x| x * x).sum::<f64>();
            if with_gradient {
                for (g, &x) in grad.as_mut_slice().iter_mut().zip(a.as_slice()) {
                    *g += 2.0 * self.reg_coeff * x;
                }
            }
        }
        (loss, grad)
    }
}

/// Full-batch gradient descent on `A` from zero, weights held fixed. With a
/// validator, the best-scoring epoch's `A` is returned.
pub fn fit_adjustment(
    adapt_set: &EmbeddingDataset,
    head: &LinearHead,
    subspace: &ErrorSubspace,
    weights: &LeiaWeights,
    config: &LeiaConfig,
    validation: Option<Validator<'_>>,
) -> Result<LeiaAdjustment> {
    config.validate()?;
    let problem = AdjustmentProblem::new(adapt_set, head, subspace, weights, config.reg_coeff)?;
    let mut a = DenseMatrix::zeros(subspace.rank(), head.num_classes());
    let mut best: Option<(f64, DenseMatrix)> = None;
    for epoch in 0..config.epochs {
        let (loss, grad) = problem.evaluate(&a, true);
        if !loss.is_finite() {
            return Err(LeiaError::Diverged { epoch });
        }
        for (x, g) in a.as_mut_slice().iter_mut().zip(grad.as_slice()) {
            *x -= config.learning_rate * g;
        }
        if a.first_non_finite().is_some() {
            return Err(LeiaError::Diverged { epoch });
        }
        if let Some(v) = &validation {
            let model = LeiaModel::new(head.clone(), subspace.clone(), LeiaAdjustment(a.clone()))?;
            let score = v.score(&model.logits_batch(v.data.embeddings())?)?;
            if best.as_ref().is_none_or(|(b, _)| score > *b) {
                best = Some((score, a.clone()));
            }
        }
    }
    Ok(LeiaAdjustment(best.map_or(a, |(_, a)| a)))
}

/// Weights, subspace and adjustment in one call, from a frozen head and the
/// adaptation split.
pub fn adapt(
    head: &LinearHead,
    adapt_set: &EmbeddingDataset,
    config: &LeiaConfig,
    validation: Option<Validator<'_>>,
) -> Result<LeiaModel> {
    config.validate()?;
    let base = head.logits(adapt_set.embeddings())?;
    let weights = compute_leia_weights(&base, adapt_set.labels(), config.gamma, config.weight_variant)?;
    let subspace = build_error_subspace(adapt_set.embeddings(), &weights, config.rank)?;
    let adjustment = fit_adjustment(adapt_set, head, &subspace, &weights, config, validation)?;
    LeiaModel::new(head.clone(), subspace, adjustment)
}

/// Ranks whose CEV lies in `[band_low, band_high]`; if none, the smallest
/// rank reaching `band_low`.
pub fn select_rank(eigenvalues: &[f64], band_low: f64, band_high: f64) -> Result<Vec<usize>> {
    let curve = cumulative_explained_variance_curve(eigenvalues)?;
    let slack = 1e-12;
    let band: Vec<usize> = curve
        .iter()
        .enumerate()
        .filter(|(_, &c)| c >= band_low - slack && c <= band_high + slack)
        .map(|(i, _)| i + 1)
        .collect();
    if !band.is_empty() {
        return Ok(band);
    }
    let first = curve.iter().position(|&c| c >= band_low - slack).unwrap_or(curve.len() - 1);
    Ok(vec![first + 1])
}
