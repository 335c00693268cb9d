//! Group metrics, subgroup risk and model selection under the three
//! attribute-availability regimes.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::dataset::EmbeddingDataset;
use crate::fmt::format_fixed6;
use crate::linalg::{cross_entropy_unchecked, DenseMatrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("dataset has no group annotations; use worst_class_accuracy for class-level metrics")]
    MissingGroups,
    #[error("{predictions} predictions for {examples} examples")]
    LengthMismatch { predictions: usize, examples: usize },
    #[error("logits are {rows}x{cols}, expected {n}x{classes}")]
    LogitShape { rows: usize, cols: usize, n: usize, classes: usize },
    #[error("group {0} has no examples")]
    EmptyGroup(usize),
    #[error("class {0} has no examples in the evaluation set")]
    EmptyClass(usize),
    #[error("none of the known groups {0:?} is populated")]
    NoKnownGroups(Vec<usize>),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite logit at example {0}")]
    NonFinite(usize),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Argmax with ties broken toward the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Row-wise [`argmax`].
pub fn predict_classes(logits: &DenseMatrix) -> Vec<usize> {
    (0..logits.rows()).map(|i| argmax(logits.row(i))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupStat {
    pub accuracy: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupMetrics {
    /// Populated groups only.
    pub per_group: BTreeMap<usize, GroupStat>,
    pub average_accuracy: f64,
    pub worst_group_accuracy: f64,
    pub worst_group_id: usize,
}

impl GroupMetrics {
    /// Accuracy on group 0, the synthetic benchmark's unknown group.
    pub fn unknown_group_accuracy(&self) -> Option<f64> {
        self.per_group.get(&0).map(|s| s.accuracy)
    }

    /// Flat JSON object with fixed key order and six-decimal floats.
    pub fn to_json(&self) -> String {
        let uga = self.unknown_group_accuracy().map_or_else(|| "null".to_string(), format_fixed6);
        let per_group = self
            .per_group
            .iter()
            .map(|(g, s)| format!("\"{g}\":{{\"acc\":{},\"n\":{}}}", format_fixed6(s.accuracy), s.count))
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "{{\"wga\":{},\"avg_acc\":{},\"uga\":{},\"per_group\":{{{}}},\"worst_group_id\":{}}}",
            format_fixed6(self.worst_group_accuracy),
            format_fixed6(self.average_accuracy),
            uga,
            per_group,
            self.worst_group_id
        )
    }
}

fn check_len(predictions: &[usize], n: usize) -> Result<()> {
    if predictions.len() != n {
        return Err(EvalError::LengthMismatch { predictions: predictions.len(), examples: n });
    }
    Ok(())
}

/// Per-group accuracy over the populated groups of `dataset`.
pub fn per_group_metrics(predictions: &[usize], dataset: &EmbeddingDataset) -> Result<GroupMetrics> {
    let groups = dataset.groups().ok_or(EvalError::MissingGroups)?;
    check_len(predictions, dataset.n())?;
    let mut tally: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for ((&p, &y), &g) in predictions.iter().zip(dataset.labels()).zip(groups) {
        let e = tally.entry(g).or_default();
        e.0 += usize::from(p == y);
        e.1 += 1;
    }
    let per_group: BTreeMap<usize, GroupStat> = tally
        .iter()
        .map(|(&g, &(correct, count))| (g, GroupStat { accuracy: correct as f64 / count as f64, count }))
        .collect();
    let correct: usize = tally.values().map(|t| t.0).sum();
    // first minimum in group order
    let (&worst_group_id, worst) = per_group
        .iter()
        .fold(None::<(&usize, &GroupStat)>, |best, cur| match best {
            Some(b) if b.1.accuracy <= cur.1.accuracy => Some(b),
            _ => Some(cur),
        })
        .expect("dataset has at least one example");
    Ok(GroupMetrics {
        average_accuracy: correct as f64 / dataset.n() as f64,
        worst_group_accuracy: worst.accuracy,
        worst_group_id,
        per_group,
    })
}

fn check_logits(logits: &DenseMatrix, dataset: &EmbeddingDataset) -> Result<()> {
    if logits.rows() != dataset.n() || logits.cols() != dataset.num_classes() {
        return Err(EvalError::LogitShape {
            rows: logits.rows(),
            cols: logits.cols(),
            n: dataset.n(),
            classes: dataset.num_classes(),
        });
    }
    if let Some(i) = logits.first_non_finite() {
        return Err(EvalError::NonFinite(i / logits.cols().max(1)));
    }
    Ok(())
}

/// Mean cross-entropy over the members of `group`.
pub fn subgroup_risk(logits: &DenseMatrix, dataset: &EmbeddingDataset, group: usize) -> Result<f64> {
    let groups = dataset.groups().ok_or(EvalError::MissingGroups)?;
    check_logits(logits, dataset)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, &g) in groups.iter().enumerate() {
        if g == group {
            sum += cross_entropy_unchecked(logits.row(i), dataset.labels()[i]);
            count += 1;
        }
    }
    if count == 0 {
        return Err(EvalError::EmptyGroup(group));
    }
    Ok(sum / count as f64)
}

/// Minimum per-class accuracy. Every class below `num_classes` must occur.
pub fn worst_class_accuracy(predictions: &[usize], labels: &[usize], num_classes: usize) -> Result<f64> {
    check_len(predictions, labels.len())?;
    let mut correct = vec![0usize; num_classes];
    let mut count = vec![0usize; num_classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        if y >= num_classes {
            return Err(EvalError::LabelOutOfRange { label: y, classes: num_classes });
        }
        count[y] += 1;
        correct[y] += usize::from(p == y);
    }
    let mut worst = f64::INFINITY;
    for c in 0..num_classes {
        if count[c] == 0 {
            return Err(EvalError::EmptyClass(c));
        }
        worst = worst.min(correct[c] as f64 / count[c] as f64);
    }
    Ok(worst)
}

/// How much group information model selection may use.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SelectionRegime {
    /// Worst class accuracy; no attribute labels.
    NoGroupInfo,
    /// Worst-group accuracy over the listed groups only.
    Partial(BTreeSet<usize>),
    /// Worst-group accuracy over every populated group.
    Complete,
}

/// Model-selection score, higher is better.
pub fn selection_criterion(regime: &SelectionRegime, logits: &DenseMatrix, dataset: &EmbeddingDataset) -> Result<f64> {
    check_logits(logits, dataset)?;
    let predictions = predict_classes(logits);
    match regime {
        SelectionRegime::NoGroupInfo => worst_class_accuracy(&predictions, dataset.labels(), dataset.num_classes()),
        SelectionRegime::Complete => Ok(per_group_metrics(&predictions, dataset)?.worst_group_accuracy),
        SelectionRegime::Partial(known) => {
            let metrics = per_group_metrics(&predictions, dataset)?;
            known
                .iter()
                .filter_map(|g| metrics.per_group.get(g))
                .map(|s| s.accuracy)
                .min_by(f64::total_cmp)
                .ok_or_else(|| EvalError::NoKnownGroups(known.iter().copied().collect()))
        }
    }
}

/// Percentage-point (or fraction) drop in unknown-group accuracy from ERM to Group DRO.
pub fn harm(erm_uga: f64, gdro_uga: f64) -> f64 {
    erm_uga - gdro_uga
}

/// Held-out data plus the regime used to score it, for best-epoch selection.
#[derive(Debug, Clone, Copy)]
pub struct Validator<'a> {
    pub data: &'a EmbeddingDataset,
    pub regime: &'a SelectionRegime,
}

impl Validator<'_> {
    pub fn score(&self, logits: &DenseMatrix) -> Result<f64> {
        selection_criterion(self.regime, logits, self.data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dataset(labels: Vec<usize>, groups: Option<Vec<usize>>, classes: usize, num_groups: usize) -> EmbeddingDataset {
        let n = labels.len();
        EmbeddingDataset::new(DenseMatrix::zeros(n, 1), labels, groups, classes, num_groups).unwrap()
    }

    #[test]
    fn perfect_predictions() {
        let ds = dataset(vec![0, 1, 1, 0], Some(vec![0, 0, 1, 2]), 2, 3);
        let m = per_group_metrics(ds.labels(), &ds).unwrap();
        assert!(m.per_group.values().all(|s| s.accuracy == 1.0));
        assert_eq!(m.worst_group_accuracy, 1.0);
        assert_eq!(m.average_accuracy, 1.0);
    }

    #[test]
    fn two_group_example() {
        // group 0: 10 examples, 9 correct; group 1: 2 examples, 1 correct
        let labels = vec![0; 12];
        let mut preds = vec![0; 12];
        preds[0] = 1;
        preds[11] = 1;
        let groups: Vec<usize> = (0..12).map(|i| usize::from(i >= 10)).collect();
        let ds = dataset(labels, Some(groups), 2, 2);
        let m = per_group_metrics(&preds, &ds).unwrap();
        assert_eq!(m.per_group[&0].accuracy, 0.9);
        assert_eq!(m.per_group[&1].accuracy, 0.5);
        assert_eq!(m.worst_group_accuracy, 0.5);
        assert_eq!(m.worst_group_id, 1);
        assert!((m.average_accuracy - 10.0 / 12.0).abs() < 1e-15);
        assert_eq!(
            m.to_json(),
            "{\"wga\":0.500000,\"avg_acc\":0.833333,\"uga\":0.900000,\
             \"per_group\":{\"0\":{\"acc\":0.900000,\"n\":10},\"1\":{\"acc\":0.500000,\"n\":2}},\
             \"worst_group_id\":1}"
        );
    }

    #[test]
    fn absent_group_is_excluded() {
        let ds = dataset(vec![0, 1], Some(vec![0, 2]), 2, 4);
        let m = per_group_metrics(&[0, 1], &ds).unwrap();
        assert_eq!(m.per_group.keys().copied().collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(m.worst_group_accuracy, 1.0);
    }

    #[test]
    fn missing_groups_is_an_error() {
        let ds = dataset(vec![0, 1], None, 2, 0);
        let err = per_group_metrics(&[0, 1], &ds).unwrap_err();
        assert!(err.to_string().contains("worst_class_accuracy"));
    }

    #[test]
    fn subgroup_risk_examples() {
        let ds = dataset(vec![0, 1, 1], Some(vec![0, 0, 1]), 2, 2);
        let uniform = DenseMatrix::zeros(3, 2);
        assert!((subgroup_risk(&uniform, &ds, 0).unwrap() - 2.0_f64.ln()).abs() < 1e-15);
        let confident = DenseMatrix::from_rows(&[[40.0, -40.0], [-40.0, 40.0], [-40.0, 40.0]]).unwrap();
        assert!(subgroup_risk(&confident, &ds, 1).unwrap() < 1e-30);
        assert_eq!(subgroup_risk(&uniform, &ds, 5), Err(EvalError::EmptyGroup(5)));
    }

    #[test]
    fn subgroup_risk_matches_loop() {
        let logits = DenseMatrix::from_fn(9, 3, |i, j| ((i * 5 + j * 3) % 7) as f64 - 3.0);
        let labels: Vec<usize> = (0..9).map(|i| i % 3).collect();
        let groups: Vec<usize> = (0..9).map(|i| i % 2).collect();
        let ds = dataset(labels.clone(), Some(groups.clone()), 3, 2);
        for g in 0..2 {
            let mut sum = 0.0;
            let mut n = 0.0;
            for i in 0..9 {
                if groups[i] == g {
                    let row = logits.row(i);
                    let z: f64 = row.iter().map(|x| x.exp()).sum();
                    sum += -(row[labels[i]].exp() / z).ln();
                    n += 1.0;
                }
            }
            assert!((subgroup_risk(&logits, &ds, g).unwrap() - sum / n).abs() <= 1e-12);
        }
    }

    #[test]
    fn worst_class_examples() {
        assert_eq!(worst_class_accuracy(&[0, 1, 0, 1], &[0, 1, 0, 1], 2).unwrap(), 1.0);
        assert_eq!(worst_class_accuracy(&[0, 0, 0, 0], &[0, 1, 0, 1], 2).unwrap(), 0.0);
        let mut labels = vec![0; 10];
        labels.extend(vec![1; 10]);
        labels.extend(vec![2; 10]);
        let mut preds = labels.clone();
        for i in 0..2 {
            preds[i] = 1;
        }
        for i in 10..14 {
            preds[i] = 0;
        }
        preds[20] = 0;
        assert_eq!(worst_class_accuracy(&preds, &labels, 3).unwrap(), 0.6);
        assert_eq!(worst_class_accuracy(&[0], &[0], 2), Err(EvalError::EmptyClass(1)));
        assert!(matches!(
            worst_class_accuracy(&[0], &[2], 2),
            Err(EvalError::LabelOutOfRange { label: 2, classes: 2 })
        ));
    }

    #[test]
    fn selection_regimes() {
        let ds = dataset(vec![0, 1, 1, 0, 1], Some(vec![0, 0, 1, 1, 2]), 2, 3);
        let logits = DenseMatrix::from_rows(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [0.0, 1.0]]).unwrap();
        let preds = predict_classes(&logits);
        let complete = selection_criterion(&SelectionRegime::Complete, &logits, &ds).unwrap();
        assert_eq!(complete, per_group_metrics(&preds, &ds).unwrap().worst_group_accuracy);
        let all: BTreeSet<usize> = [0, 1, 2].into();
        assert_eq!(selection_criterion(&SelectionRegime::Partial(all), &logits, &ds).unwrap(), complete);
        let only2: BTreeSet<usize> = [2].into();
        assert_eq!(selection_criterion(&SelectionRegime::Partial(only2), &logits, &ds).unwrap(), 1.0);
        let no_info = selection_criterion(&SelectionRegime::NoGroupInfo, &logits, &ds).unwrap();
        assert_eq!(no_info, worst_class_accuracy(&preds, ds.labels(), 2).unwrap());
        let bare = dataset(vec![0, 1, 1, 0, 1], None, 2, 0);
        assert_eq!(selection_criterion(&SelectionRegime::Complete, &logits, &bare), Err(EvalError::MissingGroups));
    }

    #[test]
    fn harm_examples() {
        assert!((harm(0.849, 0.491) - 0.358).abs() < 1e-12);
        assert_eq!(harm(0.5, 0.5), 0.0);
        assert!((harm(0.5, 0.7) + 0.2).abs() < 1e-12);
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 1.0]), 0);
        assert_eq!(argmax(&[0.0, 2.0, 2.0]), 1);
    }

    proptest! {
        #[test]
        fn metrics_match_counting_oracle(
            rows in prop::collection::vec((0usize..3, 0usize..3, 0usize..4), 1..200)
        ) {
            let labels: Vec<usize> = rows.iter().map(|r| r.0).collect();
            let preds: Vec<usize> = rows.iter().map(|r| r.1).collect();
            let groups: Vec<usize> = rows.iter().map(|r| r.2).collect();
            let ds = dataset(labels.clone(), Some(groups.clone()), 3, 4);
            let m = per_group_metrics(&preds, &ds).unwrap();
            let mut worst = f64::INFINITY;
            let mut max = 0.0_f64;
            for g in 0..4 {
                let members: Vec<usize> = (0..rows.len()).filter(|&i| groups[i] == g).collect();
                if members.is_empty() {
                    prop_assert!(!m.per_group.contains_key(&g));
                    continue;
                }
                let correct = members.iter().filter(|&&i| preds[i] == labels[i]).count();
                let acc = correct as f64 / members.len() as f64;
                prop_assert_eq!(m.per_group[&g].accuracy, acc);
                prop_assert_eq!(m.per_group[&g].count, members.len());
                worst = worst.min(acc);
                max = max.max(acc);
            }
            prop_assert_eq!(m.worst_group_accuracy, worst);
            prop_assert!(m.worst_group_accuracy <= m.average_accuracy + 1e-15);
            prop_assert!(m.average_accuracy <= max + 1e-15);
            let counted: usize = m.per_group.values().map(|s| s.count).sum();
            prop_assert_eq!(counted, rows.len());
        }
    }
}
