use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::decisions;
use crate::corpus::{decade_of, Document};
use crate::error::{Error, Result};
use crate::model::TrainedModel;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub total: usize,
    pub per_decade: BTreeMap<i32, usize>,
    pub per_source: BTreeMap<String, usize>,
    pub input_total: usize,
    pub input_per_decade: BTreeMap<i32, usize>,
}

impl ExtractionReport {
    /// Fraction of each input decade that was extracted.
    pub fn decade_fractions(&self) -> BTreeMap<i32, f64> {
        self.input_per_decade
            .iter()
            .map(|(&d, &n)| (d, self.per_decade.get(&d).copied().unwrap_or(0) as f64 / n as f64))
            .collect()
    }
}

/// Keeps the documents the model assigns to `positive_class`.
pub fn extract_subcorpus(
    model: &TrainedModel,
    docs: &[Document],
    positive_class: usize,
) -> Result<(Vec<Document>, ExtractionReport)> {
    if positive_class >= model.config.n_classes {
        return Err(Error::LabelOutOfRange {
            label: positive_class,
            classes: model.config.n_classes,
        });
    }
    let preds = model.predict(docs)?;
    let mut report = ExtractionReport {
        input_total: docs.len(),
        ..ExtractionReport::default()
    };
    let mut kept = Vec::new();
    for (doc, pred) in docs.iter().zip(&preds) {
        *report.input_per_decade.entry(decade_of(doc.year)).or_default() += 1;
        if decisions(&pred.probs, model.config.head, 0.5)[positive_class] {
            *report.per_decade.entry(decade_of(doc.year)).or_default() += 1;
            *report.per_source.entry(doc.source.clone()).or_default() += 1;
            report.total += 1;
            kept.push(doc.clone());
        }
    }
    Ok((kept, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Task, Vocabulary};
    use crate::model::{ModelConfig, ModelParams, YearNormalizer};
    use rand::SeedableRng;

    fn biased_model(bias: [f64; 2]) -> TrainedModel {
        let config = ModelConfig {
            n_layers: 2,
            channels: 3,
            emb_dim: 4,
            time_emb_dim: 2,
            max_len: 5,
            ..ModelConfig::default()
        };
        let vocabulary = Vocabulary::from_tokens(["a", "b"].map(String::from)).unwrap();
        let mut params = ModelParams::init(&config, vocabulary.len(), &mut rand_chacha::ChaCha8Rng::seed_from_u64(1)).unwrap();
        let (w, b) = params.classifier_indices();
        params.params_mut()[w].tensor.data_mut().fill(0.0);
        params.params_mut()[b].tensor.data_mut().copy_from_slice(&bias);
        TrainedModel {
            task: Task::Binary,
            config,
            year_normalizer: YearNormalizer::new(1940, 1990).unwrap(),
            vocabulary,
            params,
        }
    }

    fn docs() -> Vec<Document> {
        [(1941, "x"), (1955, "y"), (1958, "x"), (1983, "y")]
            .iter()
            .enumerate()
            .map(|(i, &(year, src))| Document::new(i.to_string(), "a b a", year, src, None).unwrap())
            .collect()
    }

    #[test]
    fn everything_positive_keeps_the_corpus() {
        let (kept, report) = extract_subcorpus(&biased_model([-20.0, 20.0]), &docs(), 1).unwrap();
        assert_eq!(kept.len(), 4);
        assert_eq!(report.total, 4);
        assert_eq!(report.per_decade, report.input_per_decade);
        assert_eq!(report.per_decade.values().sum::<usize>(), report.total);
        assert_eq!(report.per_source["x"], 2);
    }

    #[test]
    fn everything_negative_keeps_nothing() {
        let (kept, report) = extract_subcorpus(&biased_model([20.0, -20.0]), &docs(), 1).unwrap();
        assert!(kept.is_empty());
        assert_eq!(report.total, 0);
        assert!(report.per_decade.is_empty() && report.per_source.is_empty());
        assert_eq!(report.input_total, 4);
    }
}
