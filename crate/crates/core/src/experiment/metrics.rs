//! Classification and ordinal error metrics.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Mlp;
use crate::regularizer::OrdinalClassSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_samples: usize,
    pub accuracy: f64,
    /// `None` for classes absent from the ground truth.
    pub per_class_recall: Vec<Option<f64>>,
    /// Averaged over classes present in the ground truth or the predictions.
    pub macro_f1: f64,
    /// Mean absolute difference between true and predicted class codes.
    pub mae: f64,
    /// `confusion[true][predicted]` counts.
    pub confusion: Vec<Vec<u64>>,
    pub loss_curve: Vec<f64>,
}

impl MetricsReport {
    /// Mean recall over the lowest and highest class, ignoring absent ones.
    pub fn tail_recall(&self) -> Option<f64> {
        let ends = [self.per_class_recall.first(), self.per_class_recall.last()];
        let present: Vec<f64> = ends.into_iter().flatten().flatten().copied().collect();
        if present.is_empty() {
            None
        } else {
            Some(present.iter().sum::<f64>() / present.len() as f64)
        }
    }
}

/// Metrics from true and predicted class indices.
pub fn metrics_from_predictions(
    truth: &[usize],
    predicted: &[usize],
    classes: &OrdinalClassSet,
) -> Result<MetricsReport> {
    if truth.len() != predicted.len() {
        return Err(Error::shape("metrics", truth.len(), predicted.len()));
    }
    if truth.is_empty() {
        return Err(Error::domain("metrics: empty prediction set"));
    }
    let n = classes.len();
    if let Some(&bad) = truth.iter().chain(predicted).find(|&&c| c >= n) {
        return Err(Error::domain(format!(
            "metrics: class index {bad} out of range for {n} classes"
        )));
    }
    let mut confusion = vec![vec![0u64; n]; n];
    let mut abs_err = 0.0;
    for (&t, &p) in truth.iter().zip(predicted) {
        confusion[t][p] += 1;
        abs_err += (classes.code(t) - classes.code(p)).abs() as f64;
    }
    let total = truth.len() as f64;
    let correct: u64 = (0..n).map(|i| confusion[i][i]).sum();

    let row_sum = |i: usize| confusion[i].iter().sum::<u64>();
    let col_sum = |j: usize| (0..n).map(|i| confusion[i][j]).sum::<u64>();
    let per_class_recall = (0..n)
        .map(|i| {
            let r = row_sum(i);
            (r > 0).then(|| confusion[i][i] as f64 / r as f64)
        })
        .collect();

    let mut f1_sum = 0.0;
    let mut present = 0usize;
    for (c, row) in confusion.iter().enumerate() {
        let (r, p) = (row_sum(c), col_sum(c));
        if r == 0 && p == 0 {
            continue;
        }
        present += 1;
        // 2·tp / (2·tp + fp + fn)
        f1_sum += 2.0 * row[c] as f64 / (r + p) as f64;
    }

    Ok(MetricsReport {
        n_samples: truth.len(),
        accuracy: correct as f64 / total,
        per_class_recall,
        macro_f1: f1_sum / present as f64,
        mae: abs_err / total,
        confusion,
        loss_curve: Vec::new(),
    })
}

/// Predicts every sample and scores the predictions.
pub fn evaluate(model: &Mlp, data: &Dataset) -> Result<MetricsReport> {
    if data.is_empty() {
        return Err(Error::domain("evaluate: empty dataset"));
    }
    if model.num_classes() != data.classes.len() {
        return Err(Error::shape(
            "evaluate",
            data.classes.len(),
            model.num_classes(),
        ));
    }
    let predicted = data
        .samples
        .iter()
        .map(|s| model.predict(&s.features))
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<usize> = (0..data.len()).map(|i| data.target(i)).collect();
    metrics_from_predictions(&truth, &predicted, &data.classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::seeded_rng;
    use rand::Rng;

    fn five() -> OrdinalClassSet {
        OrdinalClassSet::default()
    }

    #[test]
    fn perfect_predictor() {
        let truth = vec![0, 1, 2, 3, 4, 2, 2];
        let m = metrics_from_predictions(&truth, &truth, &five()).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.mae, 0.0);
        assert_eq!(m.macro_f1, 1.0);
        assert!(m.per_class_recall.iter().all(|r| *r == Some(1.0)));
    }

    #[test]
    fn always_middle_class_on_bell_counts() {
        // 1:4:6:4:1 per 16 samples
        let counts = [1, 4, 6, 4, 1];
        let truth: Vec<usize> = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &k)| std::iter::repeat_n(c, k * 10))
            .collect();
        let pred = vec![2; truth.len()];
        let m = metrics_from_predictions(&truth, &pred, &five()).unwrap();
        assert!((m.accuracy - 6.0 / 16.0).abs() < 1e-15);
        assert!((m.mae - 0.75).abs() < 1e-15);
        assert_eq!(m.tail_recall(), Some(0.0));
        assert_eq!(m.per_class_recall[2], Some(1.0));
    }

    #[test]
    fn random_predictor_invariants() {
        let mut rng = seeded_rng(3);
        for _ in 0..50 {
            let k = rng.random_range(1..60);
            let truth: Vec<usize> = (0..k).map(|_| rng.random_range(0..5)).collect();
            let pred: Vec<usize> = (0..k).map(|_| rng.random_range(0..5)).collect();
            let m = metrics_from_predictions(&truth, &pred, &five()).unwrap();
            let trace: u64 = (0..5).map(|i| m.confusion[i][i]).sum();
            assert_eq!(m.accuracy, trace as f64 / k as f64);
            for c in 0..5 {
                let count = truth.iter().filter(|&&t| t == c).count() as u64;
                assert_eq!(m.confusion[c].iter().sum::<u64>(), count);
            }
            assert!((0.0..=1.0).contains(&m.accuracy));
            assert!((0.0..=1.0).contains(&m.macro_f1));
            let diagonal = (0..5).all(|i| (0..5).all(|j| i == j || m.confusion[i][j] == 0));
            assert!(m.mae >= 0.0);
            assert_eq!(m.mae == 0.0, diagonal);
        }
    }

    #[test]
    fn absent_class_recall_is_none() {
        let m = metrics_from_predictions(&[0, 1], &[0, 1], &five()).unwrap();
        assert_eq!(m.per_class_recall[4], None);
        assert_eq!(m.macro_f1, 1.0);
    }

    #[test]
    fn mae_uses_class_codes() {
        let classes = OrdinalClassSet::new(vec![0, 10, 20]).unwrap();
        let m = metrics_from_predictions(&[0, 2], &[1, 2], &classes).unwrap();
        assert_eq!(m.mae, 5.0);
    }

    #[test]
    fn empty_rejected() {
        assert!(metrics_from_predictions(&[], &[], &five()).is_err());
    }
}
