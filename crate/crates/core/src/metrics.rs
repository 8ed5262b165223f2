//! Accuracy, per-class precision/recall/F1 and confusion matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Classification metrics. `confusion[truth][predicted]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub per_class: Vec<ClassScores>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub confusion: Vec<Vec<usize>>,
}

/// `2pr/(p+r)`, pinned to 0 when `p + r = 0`.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

impl EvalMetrics {
    pub fn from_predictions(truth: &[usize], predicted: &[usize], n_classes: usize) -> Result<Self> {
        if truth.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if truth.len() != predicted.len() {
            return Err(Error::DimMismatch {
                expected: truth.len(),
                got: predicted.len(),
            });
        }
        let mut confusion = vec![vec![0usize; n_classes]; n_classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= n_classes || p >= n_classes {
                return Err(Error::InvalidArgument(format!(
                    "label {} out of range for {n_classes} classes",
                    t.max(p)
                )));
            }
            confusion[t][p] += 1;
        }
        let total = truth.len();
        let correct: usize = (0..n_classes).map(|k| confusion[k][k]).sum();

        let per_class: Vec<ClassScores> = (0..n_classes)
            .map(|k| {
                let tp = confusion[k][k] as f64;
                let support: usize = confusion[k].iter().sum();
                let predicted_k: usize = confusion.iter().map(|row| row[k]).sum();
                let precision = if predicted_k > 0 {
                    tp / predicted_k as f64
                } else {
                    0.0
                };
                let recall = if support > 0 { tp / support as f64 } else { 0.0 };
                ClassScores {
                    precision,
                    recall,
                    f1: f1_score(precision, recall),
                    support,
                }
            })
            .collect();

        let mean = |f: fn(&ClassScores) -> f64| {
            if n_classes == 0 {
                0.0
            } else {
                per_class.iter().map(f).sum::<f64>() / n_classes as f64
            }
        };
        Ok(EvalMetrics {
            accuracy: correct as f64 / total as f64,
            macro_precision: mean(|c| c.precision),
            macro_recall: mean(|c| c.recall),
            macro_f1: mean(|c| c.f1),
            per_class,
            confusion,
        })
    }

    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictor() {
        let y = [0, 1, 2, 2, 1, 0];
        let m = EvalMetrics::from_predictions(&y, &y, 3).unwrap();
        assert_eq!(m.accuracy, 1.0);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.confusion[i][j] > 0, i == j);
            }
        }
        assert_eq!(m.macro_f1, 1.0);
    }

    #[test]
    fn constant_predictor() {
        let truth = [0, 0, 1, 1, 2, 2];
        let pred = [1; 6];
        let m = EvalMetrics::from_predictions(&truth, &pred, 3).unwrap();
        assert!((m.accuracy - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.per_class[1].recall, 1.0);
        assert_eq!(m.per_class[0].recall, 0.0);
        assert_eq!(m.per_class[2].recall, 0.0);
        assert_eq!(m.per_class[0].f1, 0.0);
        for (k, row) in m.confusion.iter().enumerate() {
            assert_eq!(row.iter().sum::<usize>(), m.per_class[k].support);
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(
            EvalMetrics::from_predictions(&[], &[], 2),
            Err(Error::EmptyDataset)
        ));
        assert!(EvalMetrics::from_predictions(&[0, 3], &[0, 0], 2).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }
}
