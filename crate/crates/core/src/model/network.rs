//! Forward pass of the dilated causal CNN.
//!
//! Pipeline: embed → perturb (training only) → left history-pad → dilated
//! causal conv stack with ReLU → `[A_ℓ; pooled A_1..A_{ℓ-1}; time embedding]`
//! → 1×1 convolution → softmax or sigmoid.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::config::{squeeze_padding, Head, ModelConfig};
use super::params::ModelParams;
use super::perturb::sample_perturbation;
use crate::autodiff::{Graph, Tensor, Var};
use crate::corpus::{Batch, PAD};
use crate::error::{Error, Result};

/// Min/max training years used to scale the time input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearNormalizer {
    min_y: i32,
    max_y: i32,
}

impl YearNormalizer {
    pub fn new(min_y: i32, max_y: i32) -> Result<Self> {
        if max_y <= min_y {
            return Err(Error::config(
                "years",
                format!("need max year > min year, got [{min_y}, {max_y}]"),
            ));
        }
        Ok(Self { min_y, max_y })
    }

    pub fn from_years(years: impl IntoIterator<Item = i32>) -> Result<Self> {
        let (lo, hi) = years
            .into_iter()
            .fold((i32::MAX, i32::MIN), |(lo, hi), y| (lo.min(y), hi.max(y)));
        Self::new(lo, hi)
    }

    pub fn min_year(&self) -> i32 {
        self.min_y
    }

    pub fn max_year(&self) -> i32 {
        self.max_y
    }

    /// `(y - max_y) / (max_y - min_y)` after clamping `y` into range, so the
    /// result lies in `[-1, 0]`.
    pub fn normalize(&self, year: i32) -> f64 {
        let y = year.clamp(self.min_y, self.max_y);
        (y - self.max_y) as f64 / (self.max_y - self.min_y) as f64
    }
}

/// `e = W_e · normalize(y) + b_e` computed outside of any graph.
pub fn time_embedding(year: i32, norm: &YearNormalizer, w_e: &[f64], b_e: &[f64]) -> Vec<f64> {
    let s = norm.normalize(year);
    w_e.iter().zip(b_e).map(|(w, b)| w * s + b).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Noise and dropout drawn for one batch, laid out like the padded
/// `[batch, emb_dim, receptive_field]` input map. Padding positions get zero
/// noise so history padding stays zero.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPerturbation {
    noise: Tensor,
    mask: Tensor,
}

/// Real (non-PAD) length of a right-padded row.
fn true_len(row: &[usize]) -> usize {
    row.iter().rposition(|&id| id != PAD).map_or(0, |i| i + 1)
}

impl BatchPerturbation {
    pub fn sample(batch: &Batch, cfg: &ModelConfig, rng: &mut impl RngCore) -> Self {
        let (b, d, r) = (batch.len(), cfg.emb_dim, cfg.receptive_field());
        let mut noise = vec![0.0; b * d * r];
        let mut mask = vec![1.0; b * d * r];
        for (bi, row) in batch.token_ids.iter().enumerate() {
            let n = true_len(row).min(r);
            let (ns, ms) = sample_perturbation(n, d, cfg.noise_std, cfg.dropout, rng);
            let offset = r - n;
            for t in 0..n {
                for k in 0..d {
                    let at = (bi * d + k) * r + offset + t;
                    noise[at] = ns[t * d + k];
                    mask[at] = ms[t * d + k];
                }
            }
        }
        Self {
            noise: Tensor::new(vec![b, d, r], noise).expect("consistent shape"),
            mask: Tensor::new(vec![b, d, r], mask).expect("consistent shape"),
        }
    }
}

/// Nodes produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub logits: Var,
    pub probs: Var,
    pub latent: Var,
}

/// Inserts every parameter array as a leaf of `graph`.
pub fn bind_params(graph: &mut Graph, params: &ModelParams, trainable: bool) -> Vec<Var> {
    params
        .params()
        .iter()
        .map(|p| graph.leaf(p.tensor.clone().with_requires_grad(trainable)))
        .collect()
}

/// Left-aligns each row's real tokens against the end of a
/// `receptive_field`-long window filled with PAD.
pub fn history_pad(batch: &Batch, cfg: &ModelConfig) -> Result<Vec<usize>> {
    let r = cfg.receptive_field();
    let mut ids = Vec::with_capacity(batch.len() * r);
    for row in &batch.token_ids {
        let n = true_len(row);
        if n == 0 {
            return Err(Error::Data("batch row without tokens".into()));
        }
        let pad = squeeze_padding(cfg.n_layers, cfg.filter_size, cfg.dilation_base, n)?;
        ids.extend(std::iter::repeat_n(PAD, pad));
        ids.extend_from_slice(&row[..n]);
    }
    Ok(ids)
}

/// Builds the network on `graph` for one batch. `perturbation` is only used in
/// training mode.
pub fn forward(
    graph: &mut Graph,
    vars: &[Var],
    cfg: &ModelConfig,
    norm: &YearNormalizer,
    batch: &Batch,
    perturbation: Option<&BatchPerturbation>,
) -> Result<Forward> {
    let nb = batch.len();
    if nb == 0 {
        return Err(Error::Empty("batch"));
    }
    let r = cfg.receptive_field();
    let ids = history_pad(batch, cfg)?;
    let mut x = graph.embedding(vars[0], &ids, nb, r, Some(PAD))?;
    if let Some(p) = perturbation {
        if p.noise.shape() != graph.value(x).shape() {
            return Err(Error::Shape {
                op: "perturbation",
                lhs: p.noise.shape().to_vec(),
                rhs: graph.value(x).shape().to_vec(),
            });
        }
        let noise = graph.constant(p.noise.clone());
        let mask = graph.constant(p.mask.clone());
        let noisy = graph.add(x, noise)?;
        x = graph.mul(noisy, mask)?;
    }

    let mut pooled = Vec::with_capacity(cfg.n_layers);
    let mut a = x;
    for layer in 0..cfg.n_layers {
        let (wi, bi) = ModelParams::conv_indices(layer);
        let conv = graph.conv1d(a, vars[wi], vars[bi], cfg.dilation(layer))?;
        a = graph.relu(conv);
        if layer + 1 < cfg.n_layers {
            pooled.push(graph.avg_pool_time(a)?);
        }
    }
    let final_len = graph.value(a).shape()[2];
    assert_eq!(final_len, 1, "history padding must squeeze the sequence to one step");
    let squeezed = graph.reshape(a, &[nb, cfg.channels])?;

    let years: Vec<f64> = batch.years.iter().map(|&y| norm.normalize(y)).collect();
    let years = graph.constant(Tensor::new(vec![nb, 1], years)?);
    let time_w = 1 + 2 * cfg.n_layers;
    let time = graph.affine(years, vars[time_w], vars[time_w + 1])?;

    let mut parts = vec![squeezed];
    parts.extend(pooled);
    parts.push(time);
    let latent = graph.concat_cols(&parts)?;

    let as_map = graph.reshape(latent, &[nb, cfg.latent_dim(), 1])?;
    let out = graph.conv1d(as_map, vars[time_w + 2], vars[time_w + 3], 1)?;
    let logits = graph.reshape(out, &[nb, cfg.n_classes])?;
    let probs = match cfg.head {
        Head::Softmax => graph.softmax(logits)?,
        Head::Sigmoid => graph.sigmoid(logits),
    };
    Ok(Forward { logits, probs, latent })
}

/// Class probabilities and latent representation of one document.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub latent: Vec<f64>,
}

/// Runs the network on one id sequence.
pub fn classify(
    ids: &[usize],
    year: i32,
    params: &ModelParams,
    cfg: &ModelConfig,
    norm: &YearNormalizer,
    mode: Mode,
    rng: &mut impl RngCore,
) -> Result<Prediction> {
    let batch = Batch {
        token_ids: vec![ids.to_vec()],
        years: vec![year],
        labels: None,
        domain: crate::corpus::Domain::Target,
    };
    let mut preds = predict_batch(&batch, params, cfg, norm, mode, rng)?;
    Ok(preds.remove(0))
}

pub fn predict_batch(
    batch: &Batch,
    params: &ModelParams,
    cfg: &ModelConfig,
    norm: &YearNormalizer,
    mode: Mode,
    rng: &mut impl RngCore,
) -> Result<Vec<Prediction>> {
    let mut graph = Graph::new();
    let vars = bind_params(&mut graph, params, false);
    let pert = match mode {
        Mode::Train => Some(BatchPerturbation::sample(batch, cfg, rng)),
        Mode::Eval => None,
    };
    let out = forward(&mut graph, &vars, cfg, norm, batch, pert.as_ref())?;
    let k = cfg.n_classes;
    let dim = cfg.latent_dim();
    let probs = graph.value(out.probs).data();
    let latent = graph.value(out.latent).data();
    Ok((0..batch.len())
        .map(|i| Prediction {
            probs: probs[i * k..(i + 1) * k].to_vec(),
            latent: latent[i * dim..(i + 1) * dim].to_vec(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            channels: 4,
            emb_dim: 8,
            max_len: 6,
            time_emb_dim: 3,
            noise_std: 0.5,
            ..ModelConfig::default()
        }
    }

    fn norm() -> YearNormalizer {
        YearNormalizer::new(1922, 1986).unwrap()
    }

    #[test]
    fn year_normalizer_follows_printed_formula() {
        let n = norm();
        assert_eq!(n.normalize(1986), 0.0);
        assert_eq!(n.normalize(1922), -1.0);
        assert_eq!(n.normalize(1954), -0.5);
        assert_eq!(n.normalize(2020), 0.0);
        assert_eq!(n.normalize(1800), -1.0);
        assert!(YearNormalizer::new(1950, 1950).is_err());
    }

    #[test]
    fn time_embedding_examples() {
        let (w, b) = ([1.0, -2.0], [0.5, 0.25]);
        assert_eq!(time_embedding(1986, &norm(), &w, &b), vec![0.5, 0.25]);
        assert_eq!(time_embedding(1922, &norm(), &w, &b), vec![-0.5, 2.25]);
        assert_eq!(time_embedding(1954, &norm(), &w, &b), vec![0.0, 1.25]);
    }

    #[test]
    fn zero_classifier_gives_uniform_output() {
        let cfg = tiny();
        let mut p = ModelParams::init(&cfg, 10, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let (w, b) = p.classifier_indices();
        p.params_mut()[w].tensor.data_mut().fill(0.0);
        p.params_mut()[b].tensor.data_mut().fill(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pred = classify(&[2, 3, 4], 1950, &p, &cfg, &norm(), Mode::Eval, &mut rng).unwrap();
        assert_eq!(pred.probs, vec![0.5, 0.5]);
    }

    #[test]
    fn eval_mode_is_deterministic_and_train_mode_is_not() {
        let cfg = tiny();
        let p = ModelParams::init(&cfg, 10, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = classify(&[2, 3, 4], 1950, &p, &cfg, &norm(), Mode::Eval, &mut rng).unwrap();
        let b = classify(&[2, 3, 4], 1950, &p, &cfg, &norm(), Mode::Eval, &mut rng).unwrap();
        assert_eq!(a, b);
        let c = classify(&[2, 3, 4], 1950, &p, &cfg, &norm(), Mode::Train, &mut rng).unwrap();
        assert_ne!(a.probs, c.probs);
        assert!((c.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn latent_width_matches_config() {
        let cfg = tiny();
        let p = ModelParams::init(&cfg, 10, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pred = classify(&[2], 1950, &p, &cfg, &norm(), Mode::Eval, &mut rng).unwrap();
        assert_eq!(pred.latent.len(), 4 + 4 + 3);
    }

    #[test]
    fn zero_network_has_zero_activations() {
        let cfg = tiny();
        let mut p = ModelParams::init(&cfg, 10, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for layer in 0..cfg.n_layers {
            let (w, b) = ModelParams::conv_indices(layer);
            p.params_mut()[w].tensor.data_mut().fill(0.0);
            p.params_mut()[b].tensor.data_mut().fill(0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pred = classify(&[5, 6, 7, 8], 1970, &p, &cfg, &norm(), Mode::Eval, &mut rng).unwrap();
        assert!(pred.latent[..8].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unknown_token_id_is_an_error() {
        let cfg = tiny();
        let p = ModelParams::init(&cfg, 10, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            classify(&[2, 10], 1950, &p, &cfg, &norm(), Mode::Eval, &mut rng),
            Err(Error::TokenOutOfRange { id: 10, size: 10 })
        ));
    }

    #[test]
    fn overlong_row_is_a_configuration_error() {
        let cfg = tiny();
        let p = ModelParams::init(&cfg, 10, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(classify(&[2; 9], 1950, &p, &cfg, &norm(), Mode::Eval, &mut rng).is_err());
    }

    #[test]
    fn trailing_padding_does_not_change_prediction() {
        let cfg = tiny();
        let p = ModelParams::init(&cfg, 10, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = classify(&[3, 4], 1960, &p, &cfg, &norm(), Mode::Eval, &mut rng).unwrap();
        let b = classify(&[3, 4, PAD, PAD, PAD], 1960, &p, &cfg, &norm(), Mode::Eval, &mut rng).unwrap();
        assert_eq!(a, b);
    }
}
