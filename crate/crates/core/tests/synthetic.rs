use leia_core::dataset::{generate_synthetic, EmbeddingDataset, SyntheticConfig};

fn conditional_mean(ds: &EmbeddingDataset, group: usize, label: usize, feature: usize) -> f64 {
    let rows: Vec<usize> = ds.group_members(group).into_iter().filter(|&i| ds.labels()[i] == label).collect();
    rows.iter().map(|&i| ds.embedding(i)[feature]).sum::<f64>() / rows.len() as f64
}

fn data() -> EmbeddingDataset {
    generate_synthetic(&SyntheticConfig {
        num_known_groups: 3,
        unknown_ratio: 1.0,
        samples_per_known_group: 4000,
        seed: 9,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn labels_are_balanced() {
    let ds = data();
    let ones = ds.labels().iter().filter(|&&y| y == 1).count() as f64 / ds.n() as f64;
    assert!((ones - 0.5).abs() < 0.03, "positive rate {ones}");
}

#[test]
fn spurious_features_follow_group_rules() {
    let ds = data();
    let gap = |g, f| conditional_mean(&ds, g, 1, f) - conditional_mean(&ds, g, 0, f);
    // unknown group: feature 0 tracks the label at ±4.5, feature 1 opposes it at ∓3
    assert!((gap(0, 0) - 9.0).abs() < 0.5, "unknown group feature-0 gap {}", gap(0, 0));
    assert!((gap(0, 1) + 6.0).abs() < 0.5);
    for g in 1..=3 {
        assert!((gap(g, 1) - 8.0).abs() < 0.5, "group {g} feature-1 gap {}", gap(g, 1));
        assert!((gap(g, 0) + 6.0).abs() < 0.5);
    }
}

#[test]
fn stable_features_are_standard_normal() {
    let ds = data();
    for f in 2..ds.dim() {
        let xs: Vec<f64> = (0..ds.n()).map(|i| ds.embedding(i)[f]).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!(mean.abs() < 0.05, "feature {f} mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "feature {f} variance {var}");
    }
}

#[test]
fn spurious_noise_has_the_configured_spread() {
    let ds = data();
    let members: Vec<usize> = ds.group_members(1).into_iter().filter(|&i| ds.labels()[i] == 1).collect();
    let xs: Vec<f64> = members.iter().map(|&i| ds.embedding(i)[1]).collect();
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
    assert!((sd - 0.5).abs() < 0.05, "spurious noise sd {sd}");
}
