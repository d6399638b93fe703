use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::autodiff::{Parameter, Tensor};
use crate::corpus::{Vocabulary, PAD};
use crate::error::{Error, Result};

const EMBEDDING_INIT: f64 = 0.05;

/// All learnable arrays of the network in a fixed order:
/// embedding, `(conv_i.weight, conv_i.bias)` per layer, time affine, classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    params: Vec<Parameter>,
    n_layers: usize,
}

fn uniform(rng: &mut impl RngCore, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

impl ModelParams {
    /// Random initialization. Convolution and affine weights are uniform in
    /// `±1/sqrt(fan_in)`; embeddings are uniform in `±0.05` with a zero PAD row.
    pub fn init(cfg: &ModelConfig, vocab_size: usize, rng: &mut impl RngCore) -> Result<Self> {
        cfg.validate()?;
        if vocab_size < 2 {
            return Err(Error::config("vocabulary", "must contain the reserved ids"));
        }
        let mut params = Vec::with_capacity(2 * cfg.n_layers + 5);
        let mut emb = uniform(rng, vocab_size * cfg.emb_dim, EMBEDDING_INIT);
        emb[PAD * cfg.emb_dim..(PAD + 1) * cfg.emb_dim].fill(0.0);
        params.push(Parameter::new("embedding", Tensor::new(vec![vocab_size, cfg.emb_dim], emb)?));
        for layer in 0..cfg.n_layers {
            let cin = if layer == 0 { cfg.emb_dim } else { cfg.channels };
            let fan_in = cin * cfg.filter_size;
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = uniform(rng, cfg.channels * fan_in, bound);
            let b = uniform(rng, cfg.channels, bound);
            params.push(Parameter::new(
                format!("conv{}.weight", layer + 1),
                Tensor::new(vec![cfg.channels, cin, cfg.filter_size], w)?,
            ));
            params.push(Parameter::new(
                format!("conv{}.bias", layer + 1),
                Tensor::new(vec![cfg.channels], b)?,
            ));
        }
        let w_e = uniform(rng, cfg.time_emb_dim, 1.0);
        let b_e = uniform(rng, cfg.time_emb_dim, 1.0);
        params.push(Parameter::new("time.weight", Tensor::new(vec![cfg.time_emb_dim, 1], w_e)?));
        params.push(Parameter::new("time.bias", Tensor::new(vec![cfg.time_emb_dim], b_e)?));
        let latent = cfg.latent_dim();
        let bound = 1.0 / (latent as f64).sqrt();
        let w_k = uniform(rng, cfg.n_classes * latent, bound);
        let b_k = uniform(rng, cfg.n_classes, bound);
        params.push(Parameter::new(
            "classifier.weight",
            Tensor::new(vec![cfg.n_classes, latent, 1], w_k)?,
        ));
        params.push(Parameter::new("classifier.bias", Tensor::new(vec![cfg.n_classes], b_k)?));
        Ok(Self {
            params,
            n_layers: cfg.n_layers,
        })
    }

    /// Names and shapes of every array, in storage order.
    pub fn layout(cfg: &ModelConfig, vocab_size: usize) -> Vec<(String, Vec<usize>)> {
        let mut out = vec![("embedding".to_string(), vec![vocab_size, cfg.emb_dim])];
        for layer in 0..cfg.n_layers {
            let cin = if layer == 0 { cfg.emb_dim } else { cfg.channels };
            out.push((format!("conv{}.weight", layer + 1), vec![cfg.channels, cin, cfg.filter_size]));
            out.push((format!("conv{}.bias", layer + 1), vec![cfg.channels]));
        }
        out.push(("time.weight".to_string(), vec![cfg.time_emb_dim, 1]));
        out.push(("time.bias".to_string(), vec![cfg.time_emb_dim]));
        out.push(("classifier.weight".to_string(), vec![cfg.n_classes, cfg.latent_dim(), 1]));
        out.push(("classifier.bias".to_string(), vec![cfg.n_classes]));
        out
    }

    /// Rebuilds from stored arrays, checking names and shapes against `cfg`.
    pub fn from_parameters(cfg: &ModelConfig, vocab_size: usize, params: Vec<Parameter>) -> Result<Self> {
        cfg.validate()?;
        let layout = Self::layout(cfg, vocab_size);
        if layout.len() != params.len() {
            return Err(Error::Data(format!(
                "expected {} parameter arrays, found {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in layout.iter().zip(&params) {
            if *name != p.name || shape.as_slice() != p.tensor.shape() {
                return Err(Error::Data(format!(
                    "parameter `{}` {:?} does not match expected `{name}` {shape:?}",
                    p.name,
                    p.tensor.shape(),
                )));
            }
        }
        Ok(Self {
            params,
            n_layers: cfg.n_layers,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn embedding_index() -> usize {
        0
    }

    /// Indices of `(weight, bias)` of 0-based conv layer `layer`.
    pub fn conv_indices(layer: usize) -> (usize, usize) {
        (1 + 2 * layer, 2 + 2 * layer)
    }

    pub fn time_indices(&self) -> (usize, usize) {
        (1 + 2 * self.n_layers, 2 + 2 * self.n_layers)
    }

    pub fn classifier_indices(&self) -> (usize, usize) {
        (3 + 2 * self.n_layers, 4 + 2 * self.n_layers)
    }

    pub fn classifier_param_count(&self) -> usize {
        let (w, b) = self.classifier_indices();
        self.params[w].tensor.numel() + self.params[b].tensor.numel()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    pub fn total_len(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Overwrites embedding rows of tokens listed in a text file with lines
    /// `token v1 .. vD`. Returns how many rows were replaced.
    pub fn load_embeddings(&mut self, path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<usize> {
        let emb = &mut self.params[0].tensor;
        let dim = emb.shape()[1];
        let wanted: HashMap<&str, usize> = vocab.tokens().enumerate().map(|(i, t)| (t, i + 2)).collect();
        let mut replaced = 0;
        for (lineno, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let Some(&id) = wanted.get(token) else { continue };
            let values = parts
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Data(format!("embedding line {}: {e}", lineno + 1)))?;
            if values.len() != dim {
                return Err(Error::Data(format!(
                    "embedding line {}: expected {dim} values, found {}",
                    lineno + 1,
                    values.len()
                )));
            }
            emb.data_mut()[id * dim..(id + 1) * dim].copy_from_slice(&values);
            replaced += 1;
        }
        Ok(replaced)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_head_has_k_times_2058_plus_k_parameters() {
        let cfg = ModelConfig {
            emb_dim: 4,
            ..ModelConfig::default()
        };
        let p = ModelParams::init(&cfg, 5, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(p.classifier_param_count(), 2 * 2058 + 2);
        assert_eq!(p.len(), 2 * 8 + 5);
        assert_eq!(p.params()[p.classifier_indices().0].tensor.shape(), &[2, 2058, 1]);
    }

    #[test]
    fn pad_row_starts_at_zero() {
        let cfg = ModelConfig {
            n_layers: 2,
            channels: 3,
            emb_dim: 4,
            max_len: 7,
            ..ModelConfig::default()
        };
        let p = ModelParams::init(&cfg, 6, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(p.params()[0].tensor.data()[..4].iter().all(|&v| v == 0.0));
        assert!(p.params()[0].tensor.data()[4..].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn mismatched_arrays_are_rejected() {
        let cfg = ModelConfig {
            n_layers: 1,
            channels: 2,
            emb_dim: 2,
            max_len: 3,
            ..ModelConfig::default()
        };
        let p = ModelParams::init(&cfg, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut arrays = p.params().to_vec();
        assert!(ModelParams::from_parameters(&cfg, 4, arrays.clone()).is_ok());
        arrays.pop();
        assert!(ModelParams::from_parameters(&cfg, 4, arrays).is_err());
        assert!(ModelParams::from_parameters(&cfg, 5, p.params().to_vec()).is_err());
    }

    #[test]
    fn embedding_file_overrides_known_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        std::fs::write(&path, "a 1 2\nzz 5 5\n").unwrap();
        let vocab = Vocabulary::from_tokens(["a".to_string(), "b".to_string()]).unwrap();
        let cfg = ModelConfig {
            n_layers: 1,
            channels: 2,
            emb_dim: 2,
            max_len: 3,
            ..ModelConfig::default()
        };
        let mut p = ModelParams::init(&cfg, vocab.len(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(p.load_embeddings(&path, &vocab).unwrap(), 1);
        assert_eq!(&p.params()[0].tensor.data()[4..6], &[1.0, 2.0]);
    }
}
