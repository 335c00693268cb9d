mod common;

use common::*;
use leia_core::dataset::EmbeddingDataset;
use leia_core::leia::{
    build_error_subspace, compute_leia_weights, fit_adjustment, AdjustmentProblem, LeiaAdjustment, LeiaWeights,
    WeightVariant,
};
use leia_core::linalg::error_weighted_covariance;
use leia_core::{DenseMatrix, LeiaConfig, LeiaModel, LinearHead};
use proptest::prelude::*;
use rand::Rng;

const VARIANTS: [WeightVariant; 2] = [WeightVariant::CrossEntropy, WeightVariant::OneMinusP];

fn instance(seed: u64, n: usize, d: usize, c: usize) -> (EmbeddingDataset, LinearHead) {
    let mut rng = rng(seed);
    let ds = EmbeddingDataset::new(gaussian(&mut rng, n, d), labels(&mut rng, n, c), None, c, 0).unwrap();
    let head = LinearHead::new(gaussian(&mut rng, c, d), gaussian(&mut rng, 1, c).into_vec()).unwrap();
    (ds, head)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weights_are_a_distribution(seed in any::<u64>(), n in 1usize..40, gamma in 0.0f64..200.0, ce in any::<bool>()) {
        let mut rng = rng(seed);
        let logits = gaussian(&mut rng, n, 3);
        let y = labels(&mut rng, n, 3);
        let variant = if ce { WeightVariant::CrossEntropy } else { WeightVariant::OneMinusP };
        let w = compute_leia_weights(&logits, &y, gamma, variant).unwrap();
        prop_assert!(w.values().iter().all(|&x| x > 0.0));
        prop_assert!((w.values().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn zero_gamma_is_uniform(seed in any::<u64>(), n in 1usize..40, ce in any::<bool>()) {
        let mut rng = rng(seed);
        let logits = gaussian(&mut rng, n, 2);
        let y = labels(&mut rng, n, 2);
        let variant = if ce { WeightVariant::CrossEntropy } else { WeightVariant::OneMinusP };
        let w = compute_leia_weights(&logits, &y, 0.0, variant).unwrap();
        prop_assert_eq!(w, LeiaWeights::uniform(n));
    }
}

#[test]
fn weight_ranking_follows_loss_ranking() {
    let mut rng = rng(31);
    for trial in 0..100 {
        let n = rng.random_range(2..50);
        let c = rng.random_range(2..5);
        let logits = DenseMatrix::from_fn(n, c, |_, _| 3.0 * rng.random_range(-1.0..1.0));
        let y = labels(&mut rng, n, c);
        let gamma = rng.random_range(0.1..10.0);
        let losses: Vec<f64> = (0..n).map(|i| ce(logits.row(i), y[i])).collect();
        for variant in VARIANTS {
            let w = compute_leia_weights(&logits, &y, gamma, variant).unwrap();
            let w = w.values();
            for i in 0..n {
                for j in 0..n {
                    if losses[i] < losses[j] {
                        assert!(w[i] <= w[j], "trial {trial} {variant:?}: loss {i} < loss {j} but weight larger");
                    }
                    if losses[j] - losses[i] > 1e-6 {
                        assert!(w[i] < w[j], "trial {trial} {variant:?}: ranking not strict for {i}, {j}");
                    }
                }
            }
        }
    }
}

#[test]
fn zero_gamma_covariance_is_the_uniform_covariance() {
    let (ds, head) = instance(32, 30, 4, 3);
    let base = head.logits(ds.embeddings()).unwrap();
    for variant in VARIANTS {
        let w = compute_leia_weights(&base, ds.labels(), 0.0, variant).unwrap();
        let uniform = vec![1.0 / 30.0; 30];
        assert_eq!(
            error_weighted_covariance(ds.embeddings(), w.values()).unwrap(),
            error_weighted_covariance(ds.embeddings(), &uniform).unwrap()
        );
    }
}

#[test]
fn zero_adjustment_reproduces_base_logits_bitwise() {
    for seed in 0..10 {
        let (ds, head) = instance(40 + seed, 25, 6, 4);
        let w =
            compute_leia_weights(&head.logits(ds.embeddings()).unwrap(), ds.labels(), 5.0, WeightVariant::OneMinusP)
                .unwrap();
        let k = 1 + seed as usize % 6;
        let subspace = build_error_subspace(ds.embeddings(), &w, k).unwrap();
        let model = LeiaModel::new(head.clone(), subspace, LeiaAdjustment::zeros(k, 4)).unwrap();
        assert_eq!(model.logits_batch(ds.embeddings()).unwrap(), head.logits(ds.embeddings()).unwrap());
    }
}

#[test]
fn dominant_axis_becomes_the_top_direction() {
    let mut rng = rng(33);
    let axis = random_orthonormal(&mut rng, 5, 1).column(0);
    let emb = DenseMatrix::from_fn(200, 5, |i, j| {
        let t = (i as f64 - 100.0) / 10.0;
        t * axis[j] + 0.05 * (((i * 7 + j * 13) % 11) as f64 - 5.0)
    });
    let s = build_error_subspace(&emb, &LeiaWeights::uniform(200), 1).unwrap();
    let cosine: f64 = s.basis.column(0).iter().zip(&axis).map(|(a, b)| a * b).sum();
    assert!(cosine.abs() > 0.99, "cosine {cosine}");
}

/// Independent full-batch descent on an unconstrained correction `B` (d × C):
/// logits `f(z) + Bᵀz`, objective `Σ μ ℓ + reg‖B‖²`.
fn unconstrained_fit(
    ds: &EmbeddingDataset,
    head: &LinearHead,
    mu: &[f64],
    lr: f64,
    epochs: usize,
    reg: f64,
) -> (DenseMatrix, f64) {
    let (n, d, c) = (ds.n(), ds.dim(), ds.num_classes());
    let base: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..c)
                .map(|k| head.bias[k] + (0..d).map(|j| head.weight[(k, j)] * ds.embedding(i)[j]).sum::<f64>())
                .collect()
        })
        .collect();
    let logits = |b: &[f64], i: usize| -> Vec<f64> {
        (0..c).map(|k| base[i][k] + (0..d).map(|j| b[j * c + k] * ds.embedding(i)[j]).sum::<f64>()).collect()
    };
    let objective = |b: &[f64]| -> f64 {
        (0..n).map(|i| mu[i] * ce(&logits(b, i), ds.labels()[i])).sum::<f64>()
            + reg * b.iter().map(|x| x * x).sum::<f64>()
    };
    let mut b = vec![0.0; d * c];
    for _ in 0..epochs {
        let mut grad: Vec<f64> = b.iter().map(|x| 2.0 * reg * x).collect();
        for i in 0..n {
            let l = logits(&b, i);
            let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = l.iter().map(|x| (x - m).exp()).sum();
            for k in 0..c {
                let r = (l[k] - m).exp() / z - if k == ds.labels()[i] { 1.0 } else { 0.0 };
                for j in 0..d {
                    grad[j * c + k] += mu[i] * r * ds.embedding(i)[j];
                }
            }
        }
        b.iter_mut().zip(&grad).for_each(|(x, g)| *x -= lr * g);
    }
    let loss = objective(&b);
    (DenseMatrix::from_vec(d, c, b).unwrap(), loss)
}

#[test]
fn full_rank_fit_matches_unconstrained_correction() {
    for (seed, gamma, reg) in [(50, 0.0, 0.0), (51, 2.0, 0.0), (52, 5.0, 0.01), (53, 100.0, 0.0)] {
        let (ds, head) = instance(seed, 64, 8, 3);
        let config =
            LeiaConfig { gamma, rank: 8, learning_rate: 0.05, epochs: 500, reg_coeff: reg, ..Default::default() };
        let w = compute_leia_weights(&head.logits(ds.embeddings()).unwrap(), ds.labels(), gamma, config.weight_variant)
            .unwrap();
        let subspace = build_error_subspace(ds.embeddings(), &w, 8).unwrap();
        let a = fit_adjustment(&ds, &head, &subspace, &w, &config, None).unwrap();
        let leia_loss = AdjustmentProblem::new(&ds, &head, &subspace, &w, reg).unwrap().objective(a.matrix());
        let (_, oracle_loss) = unconstrained_fit(&ds, &head, w.values(), 0.05, 500, reg);
        assert!((leia_loss - oracle_loss).abs() <= 1e-3, "γ={gamma}: {leia_loss} vs oracle {oracle_loss}");
    }
}

#[test]
fn weighted_loss_is_monotone_in_rank() {
    for seed in 60..63 {
        let (ds, head) = instance(seed, 64, 6, 3);
        let config = LeiaConfig { gamma: 1.0, learning_rate: 0.1, epochs: 4000, reg_coeff: 1e-3, ..Default::default() };
        let w = compute_leia_weights(&head.logits(ds.embeddings()).unwrap(), ds.labels(), 1.0, config.weight_variant)
            .unwrap();
        let mut previous = f64::INFINITY;
        for k in 1..=6 {
            let subspace = build_error_subspace(ds.embeddings(), &w, k).unwrap();
            let a = fit_adjustment(&ds, &head, &subspace, &w, &LeiaConfig { rank: k, ..config.clone() }, None).unwrap();
            let loss = AdjustmentProblem::new(&ds, &head, &subspace, &w, 1e-3).unwrap().objective(a.matrix());
            assert!(loss <= previous + 1e-6, "seed {seed}: k={k} loss {loss} above k-1 loss {previous}");
            previous = loss;
        }
    }
}

#[test]
fn concentrated_weights_have_no_error_structure() {
    // one example carries all the error mass once γ is huge
    let emb = DenseMatrix::from_rows(&[[0.0, 0.0], [1.0, 2.0], [3.0, -1.0]]).unwrap();
    let logits = DenseMatrix::from_rows(&[[-800.0, 800.0], [800.0, -800.0], [800.0, -800.0]]).unwrap();
    let w = compute_leia_weights(&logits, &[0, 0, 0], 1e6, WeightVariant::CrossEntropy).unwrap();
    assert!(build_error_subspace(&emb, &w, 1).is_err());
}
