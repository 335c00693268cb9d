#![allow(dead_code)]

use leia_core::DenseMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn random_symmetric(rng: &mut ChaCha8Rng, d: usize) -> DenseMatrix {
    let b = gaussian(rng, d, d);
    DenseMatrix::from_fn(d, d, |i, j| 0.5 * (b[(i, j)] + b[(j, i)]))
}

pub fn random_psd(rng: &mut ChaCha8Rng, d: usize) -> DenseMatrix {
    let b = gaussian(rng, d, d);
    b.matmul(&b.transpose()).unwrap()
}

/// `d × k` matrix with orthonormal columns (modified Gram–Schmidt on Gaussian columns).
pub fn random_orthonormal(rng: &mut ChaCha8Rng, d: usize, k: usize) -> DenseMatrix {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(k);
    while cols.len() < k {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for u in &cols {
            let p: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            cols.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    DenseMatrix::from_fn(d, k, |i, j| cols[j][i])
}

/// Random probability vector of length `n`.
pub fn simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

pub fn labels(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

/// Reference softmax cross-entropy, written without the crate's helpers.
pub fn ce(logits: &[f64], y: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    lse - logits[y]
}
