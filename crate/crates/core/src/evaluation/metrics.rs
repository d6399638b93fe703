use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Head;

/// Decision counts for one class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        harmonic(self.precision(), self.recall())
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub counts: ConfusionCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub micro_f1: f64,
    pub macro_p: f64,
    pub macro_r: f64,
    pub macro_f1: f64,
    pub per_class: BTreeMap<String, ClassMetrics>,
}

/// Per-class decisions: argmax for a softmax head, `p >= threshold` for a
/// sigmoid head.
pub fn decisions(probs: &[f64], head: Head, threshold: f64) -> Vec<bool> {
    match head {
        Head::Softmax => {
            let best = probs
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc })
                .0;
            (0..probs.len()).map(|i| i == best).collect()
        }
        Head::Sigmoid => probs.iter().map(|&p| p >= threshold).collect(),
    }
}

/// Multi-hot indicator rows from label-id sets.
pub fn indicators(labels: &[Vec<usize>], n_classes: usize) -> Result<Vec<Vec<bool>>> {
    labels
        .iter()
        .map(|set| {
            let mut row = vec![false; n_classes];
            for &c in set {
                if c >= n_classes {
                    return Err(Error::LabelOutOfRange {
                        label: c,
                        classes: n_classes,
                    });
                }
                row[c] = true;
            }
            Ok(row)
        })
        .collect()
}

pub fn confusion(predictions: &[Vec<bool>], gold: &[Vec<bool>], n_classes: usize) -> Result<Vec<ConfusionCounts>> {
    if predictions.is_empty() {
        return Err(Error::Empty("predictions"));
    }
    if predictions.len() != gold.len() {
        return Err(Error::Shape {
            op: "f1_scores",
            lhs: vec![predictions.len()],
            rhs: vec![gold.len()],
        });
    }
    let mut counts = vec![ConfusionCounts::default(); n_classes];
    for (p, g) in predictions.iter().zip(gold) {
        if p.len() != n_classes || g.len() != n_classes {
            return Err(Error::Shape {
                op: "f1_scores",
                lhs: vec![p.len()],
                rhs: vec![g.len()],
            });
        }
        for (c, cc) in counts.iter_mut().enumerate() {
            match (p[c], g[c]) {
                (true, true) => cc.tp += 1,
                (true, false) => cc.fp += 1,
                (false, true) => cc.fn_ += 1,
                (false, false) => cc.tn += 1,
            }
        }
    }
    Ok(counts)
}

/// Micro/macro scores over aligned per-class decisions.
pub fn f1_scores(predictions: &[Vec<bool>], gold: &[Vec<bool>], class_names: &[&str]) -> Result<Metrics> {
    let counts = confusion(predictions, gold, class_names.len())?;
    let k = counts.len() as f64;
    let pooled = counts.iter().fold(ConfusionCounts::default(), |a, c| ConfusionCounts {
        tp: a.tp + c.tp,
        fp: a.fp + c.fp,
        fn_: a.fn_ + c.fn_,
        tn: a.tn + c.tn,
    });
    Ok(Metrics {
        micro_f1: pooled.f1(),
        macro_p: counts.iter().map(ConfusionCounts::precision).sum::<f64>() / k,
        macro_r: counts.iter().map(ConfusionCounts::recall).sum::<f64>() / k,
        macro_f1: counts.iter().map(ConfusionCounts::f1).sum::<f64>() / k,
        per_class: class_names
            .iter()
            .zip(&counts)
            .map(|(name, c)| {
                (
                    name.to_string(),
                    ClassMetrics {
                        precision: c.precision(),
                        recall: c.recall(),
                        f1: c.f1(),
                        support: c.tp + c.fn_,
                        counts: *c,
                    },
                )
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn onehot(ids: &[usize], k: usize) -> Vec<Vec<bool>> {
        ids.iter().map(|&i| (0..k).map(|c| c == i).collect()).collect()
    }

    #[test]
    fn perfect_predictions() {
        let g = onehot(&[0, 1, 1, 0], 2);
        let m = f1_scores(&g, &g, &["a", "b"]).unwrap();
        assert_eq!((m.micro_f1, m.macro_p, m.macro_r, m.macro_f1), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn constant_prediction_against_balanced_gold() {
        let m = f1_scores(&onehot(&[0, 0, 0, 0], 2), &onehot(&[0, 0, 1, 1], 2), &["a", "b"]).unwrap();
        assert_eq!(m.per_class["b"].f1, 0.0);
        assert!((m.per_class["a"].f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn hand_counted_case() {
        // class 0: tp 1, fp 1, fn 0; class 1: tp 2, fp 0, fn 1
        let pred = onehot(&[0, 0, 1, 1], 2);
        let gold = onehot(&[0, 1, 1, 1], 2);
        let m = f1_scores(&pred, &gold, &["a", "b"]).unwrap();
        assert!((m.macro_p - 0.75).abs() < 1e-12);
        assert!((m.macro_r - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!((m.macro_f1 - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_and_misaligned_inputs_fail() {
        assert!(matches!(f1_scores(&[], &[], &["a"]), Err(Error::Empty(_))));
        assert!(f1_scores(&onehot(&[0], 2), &onehot(&[0, 1], 2), &["a", "b"]).is_err());
    }

    #[test]
    fn decisions_by_head() {
        assert_eq!(decisions(&[0.3, 0.7], Head::Softmax, 0.5), vec![false, true]);
        assert_eq!(decisions(&[0.5, 0.2, 0.9], Head::Sigmoid, 0.5), vec![true, false, true]);
    }
}
