//! Spectrum and projection exports for an error-weighted covariance.

use crate::dataset::EmbeddingDataset;
use crate::fmt::format_sig;
use crate::heads::LinearHead;
use crate::leia::{compute_leia_weights, select_rank, LeiaWeights, WeightVariant};
use crate::linalg::{
    cumulative_explained_variance_curve, error_weighted_covariance, symmetric_eigendecomposition, weighted_mean,
    DenseMatrix, EigenDecomposition, LinalgError,
};
use crate::Result;

/// Default CEV band for rank selection.
pub const BAND_LOW: f64 = 0.5;
pub const BAND_HIGH: f64 = 0.9;

fn error_spectrum(
    dataset: &EmbeddingDataset,
    head: &LinearHead,
    gamma: f64,
    variant: WeightVariant,
) -> Result<(LeiaWeights, EigenDecomposition)> {
    let base = head.logits(dataset.embeddings())?;
    let weights = compute_leia_weights(&base, dataset.labels(), gamma, variant)?;
    let cov = error_weighted_covariance(dataset.embeddings(), weights.values())?;
    let dec = symmetric_eigendecomposition(&cov)?;
    Ok((weights, dec))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CevTable {
    pub eigenvalues: Vec<f64>,
    /// `cev[k-1]` is the CEV of the top `k` eigenvalues.
    pub cev: Vec<f64>,
    /// Ranks selected by the CEV band.
    pub band: Vec<usize>,
}

impl CevTable {
    /// `k,eigenvalue,cev` with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,eigenvalue,cev\n");
        for (i, (l, c)) in self.eigenvalues.iter().zip(&self.cev).enumerate() {
            out.push_str(&format!("{},{},{}\n", i + 1, format_sig(*l, 17), format_sig(*c, 17)));
        }
        out
    }
}

pub fn cev_table(
    dataset: &EmbeddingDataset,
    head: &LinearHead,
    gamma: f64,
    variant: WeightVariant,
    band: (f64, f64),
) -> Result<CevTable> {
    let (_, dec) = error_spectrum(dataset, head, gamma, variant)?;
    let cev = cumulative_explained_variance_curve(&dec.eigenvalues)?;
    let band = select_rank(&dec.eigenvalues, band.0, band.1)?;
    Ok(CevTable { eigenvalues: dec.eigenvalues, cev, band })
}

/// Weighted-mean-centered coordinates in the top `dims` error eigenvectors, `n × dims`.
pub fn project(
    dataset: &EmbeddingDataset,
    head: &LinearHead,
    gamma: f64,
    variant: WeightVariant,
    dims: usize,
) -> Result<DenseMatrix> {
    if dims == 0 || dims > dataset.dim() {
        return Err(LinalgError::RankOutOfRange { k: dims, max: dataset.dim() }.into());
    }
    let (weights, dec) = error_spectrum(dataset, head, gamma, variant)?;
    let mean = weighted_mean(dataset.embeddings(), weights.values())?;
    let basis = dec.eigenvectors.leading_columns(dims);
    let centered = DenseMatrix::from_fn(dataset.n(), dataset.dim(), |i, j| dataset.embeddings()[(i, j)] - mean[j]);
    Ok(centered.matmul(&basis)?)
}

/// `c1..c<dims>,label,group` rows; `group` is empty when unannotated.
pub fn projection_csv(coords: &DenseMatrix, dataset: &EmbeddingDataset) -> String {
    let mut out: String = (1..=coords.cols()).map(|j| format!("c{j},")).collect();
    out.push_str("label,group\n");
    for i in 0..coords.rows() {
        for &x in coords.row(i) {
            out.push_str(&format_sig(x, 17));
            out.push(',');
        }
        out.push_str(&dataset.labels()[i].to_string());
        out.push(',');
        if let Some(g) = dataset.groups() {
            out.push_str(&g[i].to_string());
        }
        out.push('\n');
    }
    out
}
