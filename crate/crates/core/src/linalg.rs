//! Dense linear algebra and loss primitives.
//!
//! Everything here is 64-bit, row-major and deterministic: identical input
//! bits produce identical output bits. The symmetric eigensolver is a cyclic
//! Jacobi iteration, which is slow for large `d` but exact enough (and simple
//! enough) for embedding widths in the low thousands.

use std::fmt;
use std::ops::{Index, IndexMut};

use thiserror::Error;

/// Maximum number of cyclic Jacobi sweeps.
pub const MAX_JACOBI_SWEEPS: usize = 100;
/// Off-diagonal Frobenius norm threshold, relative to `1 + ‖A‖_F`.
pub const JACOBI_TOLERANCE: f64 = 1e-12;
/// Relative asymmetry accepted by [`symmetric_eigendecomposition`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-9;
/// Accepted deviation of a weight vector's sum from 1.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;
/// Components at or below this magnitude are skipped by the sign convention.
const SIGN_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("shape mismatch: {left} vs {right}")]
    ShapeMismatch { left: String, right: String },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid weight {value} at index {index}")]
    InvalidWeight { index: usize, value: f64 },
    #[error("weights sum to {sum}, expected 1")]
    WeightsNotNormalized { sum: f64 },
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric: max |a_ij - a_ji| = {max_asymmetry:e}")]
    NotSymmetric { max_asymmetry: f64 },
    #[error("rank k = {k} out of range 1..={max}")]
    RankOutOfRange { k: usize, max: usize },
    #[error("eigenvalue spectrum is all zero: no error structure to explain")]
    ZeroSpectrum,
    #[error("Jacobi iteration did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    NoConvergence { sweeps: usize, off_norm: f64 },
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Row-major dense matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(LinalgError::ShapeMismatch {
                left: format!("{rows}x{cols}"),
                right: format!("{} entries", data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows. An empty slice gives a 0x0 matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(LinalgError::ShapeMismatch {
                    left: format!("row 0 has {cols} columns"),
                    right: format!("row {i} has {}", r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, rhs: &DenseMatrix) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(LinalgError::ShapeMismatch {
                left: format!("{}x{}", self.rows, self.cols),
                right: format!("{}x{}", rhs.rows, rhs.cols),
            });
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let o = out.row_mut(i);
            for (l, &ail) in a.iter().enumerate() {
                if ail == 0.0 {
                    continue;
                }
                for (oj, &b) in o.iter_mut().zip(rhs.row(l)) {
                    *oj += ail * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(LinalgError::ShapeMismatch {
                left: format!("{}x{}", self.rows, self.cols),
                right: format!("vector of length {}", x.len()),
            });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// `selfᵀ · x`.
    pub fn tr_matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(LinalgError::ShapeMismatch {
                left: format!("{}x{} transposed", self.rows, self.cols),
                right: format!("vector of length {}", x.len()),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        Ok(out)
    }

    /// Keeps the first `k` columns.
    pub fn leading_columns(&self, k: usize) -> Self {
        Self::from_fn(self.rows, k, |i, j| self[(i, j)])
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Index of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|x| !x.is_finite())
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols.min(self.rows) {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(LinalgError::NonFinite { index, value: values[index] }),
        None => Ok(()),
    }
}

/// `log Σ exp(x_i)` with max subtraction.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Stabilized softmax. Rejects non-finite logits.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(LinalgError::Empty("softmax of an empty vector"));
    }
    check_finite(logits)?;
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out);
    Ok(out)
}

/// Unchecked softmax into a caller buffer; callers validate finiteness.
pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(logits) {
        *o = (x - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// `−log softmax(logits)[label]`, via log-sum-exp.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(LinalgError::LabelOutOfRange { label, classes: logits.len() });
    }
    check_finite(logits)?;
    Ok(cross_entropy_unchecked(logits, label))
}

pub(crate) fn cross_entropy_unchecked(logits: &[f64], label: usize) -> f64 {
    // lse ≥ logit[label] mathematically; clamp the rounding residue
    (log_sum_exp(logits) - logits[label]).max(0.0)
}

fn check_weights(n: usize, weights: &[f64]) -> Result<()> {
    if weights.len() != n {
        return Err(LinalgError::ShapeMismatch {
            left: format!("{n} rows"),
            right: format!("{} weights", weights.len()),
        });
    }
    if let Some(index) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
        return Err(LinalgError::InvalidWeight { index, value: weights[index] });
    }
    Ok(())
}

/// `Σ_i w_i z_i` over the rows of `embeddings`.
pub fn weighted_mean(embeddings: &DenseMatrix, weights: &[f64]) -> Result<Vec<f64>> {
    check_weights(embeddings.rows(), weights)?;
    let mut mean = vec![0.0; embeddings.cols()];
    for (i, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (m, &z) in mean.iter_mut().zip(embeddings.row(i)) {
            *m += w * z;
        }
    }
    Ok(mean)
}

/// `Σ_i w_i (z_i − z̄)(z_i − z̄)ᵀ` with `z̄` the weighted mean.
///
/// Weights must be non-negative and sum to 1 within [`WEIGHT_SUM_TOLERANCE`].
/// The result is exactly symmetric.
pub fn error_weighted_covariance(embeddings: &DenseMatrix, weights: &[f64]) -> Result<DenseMatrix> {
    if embeddings.rows() == 0 {
        return Err(LinalgError::Empty("covariance of zero examples"));
    }
    check_weights(embeddings.rows(), weights)?;
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        return Err(LinalgError::WeightsNotNormalized { sum });
    }
    let d = embeddings.cols();
    let mean = weighted_mean(embeddings, weights)?;
    let mut cov = DenseMatrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for (i, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for ((c, &z), &m) in centered.iter_mut().zip(embeddings.row(i)).zip(&mean) {
            *c = z - m;
        }
        for a in 0..d {
            let wa = w * centered[a];
            if wa == 0.0 {
                continue;
            }
            let row = cov.row_mut(a);
            for b in a..d {
                row[b] += wa * centered[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            cov[(a, b)] = cov[(b, a)];
        }
    }
    Ok(cov)
}

/// Eigenpairs of a symmetric matrix, eigenvalues descending.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    /// Column `i` pairs with `eigenvalues[i]`.
    pub eigenvectors: DenseMatrix,
}

/// Cyclic Jacobi eigendecomposition.
///
/// Converges when the off-diagonal Frobenius norm drops to
/// `JACOBI_TOLERANCE · (1 + ‖A‖_F)`. Eigenvectors are normalized so that the
/// first component with magnitude above `1e-12` is positive.
pub fn symmetric_eigendecomposition(matrix: &DenseMatrix) -> Result<EigenDecomposition> {
    let (rows, cols) = matrix.shape();
    if rows != cols {
        return Err(LinalgError::NotSquare { rows, cols });
    }
    if rows == 0 {
        return Err(LinalgError::Empty("eigendecomposition of a 0x0 matrix"));
    }
    if let Some(index) = matrix.first_non_finite() {
        return Err(LinalgError::NonFinite { index, value: matrix.as_slice()[index] });
    }
    let asym = matrix.max_asymmetry();
    if asym > SYMMETRY_TOLERANCE * (1.0 + matrix.max_abs()) {
        return Err(LinalgError::NotSymmetric { max_asymmetry: asym });
    }

    let n = rows;
    // work on the exactly symmetrized copy
    let mut a = DenseMatrix::from_fn(n, n, |i, j| 0.5 * (matrix[(i, j)] + matrix[(j, i)]));
    let mut v = DenseMatrix::identity(n);
    let tol = JACOBI_TOLERANCE * (1.0 + a.frobenius_norm());

    let mut converged = false;
    for _ in 0..MAX_JACOBI_SWEEPS {
        if off_diagonal_norm(&a) <= tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                jacobi_rotate(&mut a, &mut v, p, q);
            }
        }
    }
    if !converged {
        let off_norm = off_diagonal_norm(&a);
        if off_norm > tol {
            return Err(LinalgError::NoConvergence { sweeps: MAX_JACOBI_SWEEPS, off_norm });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]).then(i.cmp(&j)));
    let eigenvalues = order.iter().map(|&i| a[(i, i)]).collect();
    let mut eigenvectors = DenseMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    for c in 0..n {
        let flip = (0..n).map(|r| eigenvectors[(r, c)]).find(|x| x.abs() > SIGN_EPS).is_some_and(|x| x < 0.0);
        if flip {
            for r in 0..n {
                eigenvectors[(r, c)] = -eigenvectors[(r, c)];
            }
        }
    }
    Ok(EigenDecomposition { eigenvalues, eigenvectors })
}

fn off_diagonal_norm(a: &DenseMatrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// One two-sided rotation `A ← Jᵀ A J` zeroing `a_pq`, accumulated into `V`.
fn jacobi_rotate(a: &mut DenseMatrix, v: &mut DenseMatrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    if apq == 0.0 {
        return;
    }
    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
    let t =
        if theta.abs() > 1e150 { 0.5 / theta } else { theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt()) };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    let n = a.rows();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// Top-k eigenvectors of an error-weighted covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSubspace {
    /// `d × k`, orthonormal columns.
    pub basis: DenseMatrix,
    /// Leading `k` eigenvalues, non-increasing.
    pub eigenvalues: Vec<f64>,
    /// Sum of all `d` eigenvalues, negatives clamped to zero.
    pub total_variance: f64,
}

impl ErrorSubspace {
    pub fn dim(&self) -> usize {
        self.basis.rows()
    }

    pub fn rank(&self) -> usize {
        self.basis.cols()
    }

    /// `Vᵀ z`.
    pub fn project(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.basis.tr_matvec(z)
    }

    /// Coordinates `Vᵀ z_i` for every row, as an `n × k` matrix.
    pub fn project_rows(&self, embeddings: &DenseMatrix) -> Result<DenseMatrix> {
        embeddings.matmul(&self.basis)
    }
}

pub fn top_k_subspace(decomposition: &EigenDecomposition, k: usize) -> Result<ErrorSubspace> {
    let d = decomposition.eigenvalues.len();
    if k == 0 || k > d {
        return Err(LinalgError::RankOutOfRange { k, max: d });
    }
    Ok(ErrorSubspace {
        basis: decomposition.eigenvectors.leading_columns(k),
        eigenvalues: decomposition.eigenvalues[..k].to_vec(),
        total_variance: decomposition.eigenvalues.iter().map(|l| l.max(0.0)).sum(),
    })
}

/// CEV for every `k = 1..=len`. Negative eigenvalues count as zero.
pub fn cumulative_explained_variance_curve(eigenvalues: &[f64]) -> Result<Vec<f64>> {
    if eigenvalues.is_empty() {
        return Err(LinalgError::Empty("explained variance of an empty spectrum"));
    }
    check_finite(eigenvalues)?;
    let mut prefix = Vec::with_capacity(eigenvalues.len());
    let mut acc = 0.0;
    for l in eigenvalues {
        acc += l.max(0.0);
        prefix.push(acc);
    }
    // the last prefix is the total, so CEV(len) is exactly 1
    let total = acc;
    if total <= 0.0 {
        return Err(LinalgError::ZeroSpectrum);
    }
    Ok(prefix.into_iter().map(|p| p / total).collect())
}

/// `Σ_{i≤k} λ_i / Σ_i λ_i`.
pub fn cumulative_explained_variance(eigenvalues: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k > eigenvalues.len() {
        return Err(LinalgError::RankOutOfRange { k, max: eigenvalues.len() });
    }
    Ok(cumulative_explained_variance_curve(eigenvalues)?[k - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert!(close(p[0], 1.0, 1e-15) && p[1] >= 0.0 && p[1] < 1e-300);
        let p = softmax(&[1.0_f64.ln(), 3.0_f64.ln()]).unwrap();
        assert!(close(p[0], 0.25, 1e-15) && close(p[1], 0.75, 1e-15));
    }

    #[test]
    fn softmax_names_bad_index() {
        let err = softmax(&[0.0, f64::NAN, 1.0]).unwrap_err();
        assert!(matches!(err, LinalgError::NonFinite { index: 1, .. }));
        assert!(err.to_string().contains("index 1"));
    }

    #[test]
    fn cross_entropy_examples() {
        assert!(close(cross_entropy(&[0.0, 0.0], 0).unwrap(), 2.0_f64.ln(), 1e-15));
        let l = cross_entropy(&[9.0_f64.ln(), 0.0], 0).unwrap();
        assert!(close(l, -(0.9_f64.ln()), 1e-15));
        let l = cross_entropy(&[-50.0, 50.0], 0).unwrap();
        // lse = 50 + ln(1 + e^-100)
        assert!(close(l, 100.0 + (-100.0_f64).exp().ln_1p(), 1e-12));
    }

    #[test]
    fn cross_entropy_rejects_label() {
        let err = cross_entropy(&[0.0, 0.0], 2).unwrap_err();
        assert_eq!(err, LinalgError::LabelOutOfRange { label: 2, classes: 2 });
        assert!(err.to_string().contains('2'));
    }

    #[test]
    fn weighted_mean_examples() {
        let one = DenseMatrix::from_rows(&[[3.0, -1.0]]).unwrap();
        assert_eq!(weighted_mean(&one, &[1.0]).unwrap(), vec![3.0, -1.0]);
        let two = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(weighted_mean(&two, &[0.5, 0.5]).unwrap(), vec![0.5, 0.5]);
        let two = DenseMatrix::from_rows(&[[2.0, 0.0], [0.0, 2.0]]).unwrap();
        assert_eq!(weighted_mean(&two, &[0.75, 0.25]).unwrap(), vec![1.5, 0.5]);
        let err = weighted_mean(&two, &[1.0]).unwrap_err();
        assert!(err.to_string().contains("2 rows") && err.to_string().contains("1 weights"));
    }

    #[test]
    fn covariance_examples() {
        let one = DenseMatrix::from_rows(&[[3.0, -1.0, 2.0]]).unwrap();
        assert_eq!(error_weighted_covariance(&one, &[1.0]).unwrap(), DenseMatrix::zeros(3, 3));

        let two = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let cov = error_weighted_covariance(&two, &[0.5, 0.5]).unwrap();
        let expected = DenseMatrix::from_rows(&[[0.25, -0.25], [-0.25, 0.25]]).unwrap();
        assert_eq!(cov, expected);

        let many = DenseMatrix::from_rows(&[[1.0, 2.0], [5.0, -3.0], [0.5, 0.25]]).unwrap();
        let cov = error_weighted_covariance(&many, &[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(cov, DenseMatrix::zeros(2, 2));
    }

    #[test]
    fn covariance_errors() {
        let empty = DenseMatrix::zeros(0, 2);
        assert!(matches!(error_weighted_covariance(&empty, &[]), Err(LinalgError::Empty(_))));
        let two = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(error_weighted_covariance(&two, &[1.0]), Err(LinalgError::ShapeMismatch { .. })));
        assert!(matches!(error_weighted_covariance(&two, &[0.5, 0.6]), Err(LinalgError::WeightsNotNormalized { .. })));
    }

    #[test]
    fn eigen_identity() {
        let dec = symmetric_eigendecomposition(&DenseMatrix::identity(3)).unwrap();
        assert_eq!(dec.eigenvalues, vec![1.0, 1.0, 1.0]);
        let v = &dec.eigenvectors;
        let vvt = v.matmul(&v.transpose()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!(close(vvt[(i, j)], if i == j { 1.0 } else { 0.0 }, 1e-14));
            }
        }
    }

    #[test]
    fn eigen_two_point_covariance() {
        let m = DenseMatrix::from_rows(&[[0.25, -0.25], [-0.25, 0.25]]).unwrap();
        let dec = symmetric_eigendecomposition(&m).unwrap();
        assert!(close(dec.eigenvalues[0], 0.5, 1e-15));
        assert!(close(dec.eigenvalues[1], 0.0, 1e-15));
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!(close(dec.eigenvectors[(0, 0)], h, 1e-15));
        assert!(close(dec.eigenvectors[(1, 0)], -h, 1e-15));
    }

    #[test]
    fn eigen_diagonal() {
        let m = DenseMatrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 3.0, 0.0], [0.0, 0.0, 0.0]]).unwrap();
        let dec = symmetric_eigendecomposition(&m).unwrap();
        assert_eq!(dec.eigenvalues, vec![3.0, 1.0, 0.0]);
        assert_eq!(dec.eigenvectors.column(0), vec![0.0, 1.0, 0.0]);
        assert_eq!(dec.eigenvectors.column(1), vec![1.0, 0.0, 0.0]);
        assert_eq!(dec.eigenvectors.column(2), vec![0.0, 0.0, 1.0]);

        let m = DenseMatrix::from_rows(&[[3.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]]).unwrap();
        let dec = symmetric_eigendecomposition(&m).unwrap();
        assert_eq!(dec.eigenvalues, vec![3.0, 1.0, 0.0]);
        assert_eq!(dec.eigenvectors, DenseMatrix::identity(3));
    }

    #[test]
    fn eigen_rejects_asymmetry() {
        let m = DenseMatrix::from_rows(&[[1.0, 0.5], [0.4, 1.0]]).unwrap();
        let err = symmetric_eigendecomposition(&m).unwrap_err();
        match err {
            LinalgError::NotSymmetric { max_asymmetry } => assert!(close(max_asymmetry, 0.1, 1e-15)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            symmetric_eigendecomposition(&DenseMatrix::zeros(2, 3)),
            Err(LinalgError::NotSquare { rows: 2, cols: 3 })
        ));
    }

    #[test]
    fn eigen_is_bitwise_deterministic() {
        let m = DenseMatrix::from_fn(6, 6, |i, j| ((i * 7 + j * 7) % 5) as f64 * 0.3 + (i == j) as u8 as f64);
        let a = symmetric_eigendecomposition(&m).unwrap();
        let b = symmetric_eigendecomposition(&m).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn top_k_examples() {
        let dec = symmetric_eigendecomposition(
            &DenseMatrix::from_rows(&[[3.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]]).unwrap(),
        )
        .unwrap();
        let sub = top_k_subspace(&dec, 1).unwrap();
        assert_eq!(sub.basis.column(0), vec![1.0, 0.0, 0.0]);
        assert_eq!(sub.eigenvalues, vec![3.0]);
        assert_eq!(sub.total_variance, 4.0);
        let full = top_k_subspace(&dec, 3).unwrap();
        assert_eq!(full.basis, dec.eigenvectors);

        let synthetic =
            EigenDecomposition { eigenvalues: vec![4.0, 3.0, 2.0, 1.0], eigenvectors: DenseMatrix::identity(4) };
        let sub = top_k_subspace(&synthetic, 2).unwrap();
        assert_eq!(sub.eigenvalues, vec![4.0, 3.0]);
        assert_eq!(sub.total_variance, 10.0);

        let err = top_k_subspace(&synthetic, 5).unwrap_err();
        assert_eq!(err, LinalgError::RankOutOfRange { k: 5, max: 4 });
        assert!(top_k_subspace(&synthetic, 0).is_err());
    }

    #[test]
    fn cev_examples() {
        assert_eq!(cumulative_explained_variance(&[3.0, 1.0], 1).unwrap(), 0.75);
        assert_eq!(cumulative_explained_variance(&[3.0, 1.0], 2).unwrap(), 1.0);
        assert_eq!(cumulative_explained_variance(&[4.0, 3.0, 2.0, 1.0], 2).unwrap(), 0.7);
        assert_eq!(cumulative_explained_variance(&[2.0, 1.0, -1e-17], 3).unwrap(), 1.0);
        assert_eq!(cumulative_explained_variance(&[0.0, -1e-18], 1), Err(LinalgError::ZeroSpectrum));
    }

    fn naive_covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = rows.len() as f64;
        let d = rows[0].len();
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let mut cov = vec![vec![0.0; d]; d];
        for a in 0..d {
            for b in 0..d {
                cov[a][b] = rows.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / n;
            }
        }
        cov
    }

    proptest! {
        #[test]
        fn uniform_weights_match_sample_covariance(
            rows in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 1..40)
        ) {
            let n = rows.len();
            let m = DenseMatrix::from_rows(&rows).unwrap();
            let w = vec![1.0 / n as f64; n];
            let cov = error_weighted_covariance(&m, &w).unwrap();
            let oracle = naive_covariance(&rows);
            for a in 0..3 {
                for b in 0..3 {
                    prop_assert!((cov[(a, b)] - oracle[a][b]).abs() <= 1e-10);
                }
            }
        }

        #[test]
        fn cev_is_monotone(spectrum in prop::collection::vec(0.0f64..5.0, 1..20)) {
            prop_assume!(spectrum.iter().any(|&l| l > 0.0));
            let curve = cumulative_explained_variance_curve(&spectrum).unwrap();
            prop_assert!(curve.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(*curve.last().unwrap(), 1.0);
        }

        #[test]
        fn softmax_is_a_distribution(logits in prop::collection::vec(-500.0f64..500.0, 1..10)) {
            let p = softmax(&logits).unwrap();
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}
