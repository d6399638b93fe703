use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::network::{predict_batch, Mode, Prediction, YearNormalizer};
use super::params::ModelParams;
use crate::autodiff::Parameter;
use crate::corpus::{Batch, Document, Domain, EncodedDoc, Task, Vocabulary};
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const CHECKPOINT_FORMAT: &str = "adens-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A network together with everything needed to run it on raw documents.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub task: Task,
    pub config: ModelConfig,
    pub year_normalizer: YearNormalizer,
    pub vocabulary: Vocabulary,
    pub params: ModelParams,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    task: Task,
    config: ModelConfig,
    year_normalizer: YearNormalizer,
    vocabulary: Vec<String>,
    params: Vec<Parameter>,
}

const EVAL_CHUNK: usize = 64;

impl TrainedModel {
    pub fn encode(&self, doc: &Document) -> EncodedDoc {
        EncodedDoc {
            ids: self.vocabulary.encode(doc, self.config.max_len),
            year: doc.year,
            labels: None,
        }
    }

    /// Eval-mode predictions for every document, in input order.
    pub fn predict(&self, docs: &[Document]) -> Result<Vec<Prediction>> {
        let encoded: Vec<EncodedDoc> = docs.iter().map(|d| self.encode(d)).collect();
        predict_encoded(&encoded, &self.params, &self.config, &self.year_normalizer)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            task: self.task,
            config: self.config.clone(),
            year_normalizer: self.year_normalizer,
            vocabulary: self.vocabulary.tokens().map(str::to_string).collect(),
            params: self.params.params().to_vec(),
        };
        write_atomic(path, &serde_json::to_vec(&file)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let file: CheckpointFile = serde_json::from_slice(&bytes)?;
        if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint {} v{}",
                file.format, file.version
            )));
        }
        let vocabulary = Vocabulary::from_tokens(file.vocabulary)?;
        let params = ModelParams::from_parameters(&file.config, vocabulary.len(), file.params)?;
        Ok(Self {
            task: file.task,
            config: file.config,
            year_normalizer: file.year_normalizer,
            vocabulary,
            params,
        })
    }
}

/// Eval-mode inference over encoded documents in fixed-size chunks.
pub fn predict_encoded(
    docs: &[EncodedDoc],
    params: &ModelParams,
    cfg: &ModelConfig,
    norm: &YearNormalizer,
) -> Result<Vec<Prediction>> {
    // eval mode draws nothing from the generator
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out = Vec::with_capacity(docs.len());
    for chunk in docs.chunks(EVAL_CHUNK) {
        let batch = Batch::from_docs(chunk, Domain::Target);
        out.extend(predict_batch(&batch, params, cfg, norm, Mode::Eval, &mut rng)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_is_bit_exact() {
        let cfg = ModelConfig {
            n_layers: 2,
            channels: 3,
            emb_dim: 4,
            max_len: 7,
            time_emb_dim: 2,
            ..ModelConfig::default()
        };
        let vocabulary = Vocabulary::from_tokens(["a", "b", "c"].map(String::from)).unwrap();
        let params = ModelParams::init(&cfg, vocabulary.len(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let model = TrainedModel {
            task: Task::Binary,
            config: cfg,
            year_normalizer: YearNormalizer::new(1940, 1989).unwrap(),
            vocabulary,
            params,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        model.save(&path).unwrap();
        let back = TrainedModel::load(&path).unwrap();
        for (a, b) in model.params.params().iter().zip(back.params.params()) {
            let bits_a: Vec<u64> = a.tensor.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.tensor.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b, "{}", a.name);
        }
        assert_eq!(back, model);
    }
}
