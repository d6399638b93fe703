use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::model::Head;

/// `w_c = N / (k · N_c)` from per-document label sets. Classes never seen get
/// weight 1.
pub fn class_weights(labels: &[Vec<usize>], n_classes: usize) -> Result<Vec<f64>> {
    if labels.is_empty() {
        return Err(Error::Empty("labels"));
    }
    let mut counts = vec![0usize; n_classes];
    for set in labels {
        for &c in set {
            if c >= n_classes {
                return Err(Error::LabelOutOfRange {
                    label: c,
                    classes: n_classes,
                });
            }
            counts[c] += 1;
        }
    }
    let n = labels.len() as f64;
    Ok(counts
        .iter()
        .map(|&nc| if nc == 0 { 1.0 } else { n / (n_classes as f64 * nc as f64) })
        .collect())
}

/// Weighted negative log-likelihood (softmax head) or weighted binary
/// cross-entropy (sigmoid head) over a labeled batch.
pub fn supervised_loss(graph: &mut Graph, logits: Var, labels: &[Vec<usize>], weights: &[f64], head: Head) -> Result<Var> {
    let k = weights.len();
    match head {
        Head::Softmax => {
            let targets = labels
                .iter()
                .map(|set| match set.as_slice() {
                    [c] => Ok(*c),
                    _ => Err(Error::Data(format!("single-label head needs exactly one label, got {set:?}"))),
                })
                .collect::<Result<Vec<_>>>()?;
            graph.cross_entropy(logits, &targets, weights)
        }
        Head::Sigmoid => {
            let mut targets = vec![0.0; labels.len() * k];
            for (i, set) in labels.iter().enumerate() {
                for &c in set {
                    if c >= k {
                        return Err(Error::LabelOutOfRange { label: c, classes: k });
                    }
                    targets[i * k + c] = 1.0;
                }
            }
            graph.bce(logits, &targets, weights)
        }
    }
}

/// Mean squared difference between student and teacher probabilities.
pub fn consistency_loss(graph: &mut Graph, student: Var, teacher: Var) -> Result<Var> {
    graph.mse(student, teacher)
}
