use serde::{Deserialize, Serialize};

use crate::corpus::Task;
use crate::error::{Error, Result};

/// Output activation of the classification head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    /// One label per document.
    Softmax,
    /// Independent per-class decisions.
    Sigmoid,
}

impl Head {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Binary => Head::Softmax,
            Task::Multilabel => Head::Sigmoid,
        }
    }
}

/// Architecture and input-perturbation hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub channels: usize,
    pub filter_size: usize,
    /// Layer `i` (1-based) uses dilation `dilation_base^(i-1)`.
    pub dilation_base: usize,
    pub emb_dim: usize,
    pub time_emb_dim: usize,
    pub dropout: f64,
    pub noise_std: f64,
    pub max_len: usize,
    pub n_classes: usize,
    pub head: Head,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 8,
            channels: 256,
            filter_size: 3,
            dilation_base: 2,
            emb_dim: 300,
            time_emb_dim: 10,
            dropout: 0.5,
            noise_std: 1.0,
            max_len: 200,
            n_classes: 2,
            head: Head::Softmax,
        }
    }
}

/// Sum over layers of how much each dilated convolution shortens its input.
pub fn total_shrink(n_layers: usize, filter_size: usize, dilation_base: usize) -> usize {
    (0..n_layers).map(|i| dilation_base.pow(i as u32) * (filter_size - 1)).sum()
}

/// Number of zero vectors to prepend so that a length-`n` sequence leaves the
/// convolution stack with temporal length exactly one.
pub fn squeeze_padding(n_layers: usize, filter_size: usize, dilation_base: usize, n: usize) -> Result<usize> {
    if filter_size < 2 || n_layers == 0 || n == 0 {
        return Err(Error::config("model", "need at least one layer, filter size >= 2 and n >= 1"));
    }
    let shrink = total_shrink(n_layers, filter_size, dilation_base);
    (shrink + 1).checked_sub(n).ok_or_else(|| {
        Error::config(
            "max_len",
            format!(
                "sequence length {n} exceeds the receptive field {} of {n_layers} layers; \
                 add layers or lower the maximum length",
                shrink + 1
            ),
        )
    })
}

impl ModelConfig {
    pub fn for_task(task: Task) -> Self {
        Self {
            n_classes: task.n_classes(),
            head: Head::for_task(task),
            ..Self::default()
        }
    }

    /// Length every sequence is history-padded to.
    pub fn receptive_field(&self) -> usize {
        total_shrink(self.n_layers, self.filter_size, self.dilation_base) + 1
    }

    pub fn dilation(&self, layer: usize) -> usize {
        self.dilation_base.pow(layer as u32)
    }

    /// Width of `[squeezed final map; state matrix; time embedding]`.
    pub fn latent_dim(&self) -> usize {
        self.channels * self.n_layers + self.time_emb_dim
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_layers", self.n_layers),
            ("channels", self.channels),
            ("dilation_base", self.dilation_base),
            ("emb_dim", self.emb_dim),
            ("time_emb_dim", self.time_emb_dim),
            ("max_len", self.max_len),
            ("n_classes", self.n_classes),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.filter_size < 2 {
            return Err(Error::config("filter_size", "must be at least 2"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", "must lie in [0, 1)"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::config("noise_std", "must be a finite non-negative number"));
        }
        if self.head == Head::Softmax && self.n_classes < 2 {
            return Err(Error::config("n_classes", "softmax head needs at least two classes"));
        }
        squeeze_padding(self.n_layers, self.filter_size, self.dilation_base, self.max_len)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent oracle: walk the stack layer by layer, shrinking the
    /// sequence by `d^(i-1) (f - 1)` each time.
    fn simulated_final_len(layers: usize, f: usize, d: usize, padded: usize) -> Option<usize> {
        let mut len = padded as i64;
        for i in 0..layers {
            len -= (d.pow(i as u32) * (f - 1)) as i64;
            if len < 1 {
                return None;
            }
        }
        Some(len as usize)
    }

    #[test]
    fn paper_configuration_pads_311() {
        assert_eq!(squeeze_padding(8, 3, 2, 200).unwrap(), 311);
        assert_eq!(simulated_final_len(8, 3, 2, 200 + 311), Some(1));
    }

    #[test]
    fn small_cases() {
        assert_eq!(squeeze_padding(1, 2, 7, 1).unwrap(), 1);
        assert_eq!(squeeze_padding(2, 3, 2, 4).unwrap(), 3);
        assert_eq!(simulated_final_len(2, 3, 2, 7), Some(1));
    }

    #[test]
    fn overlong_sequence_is_a_configuration_error() {
        let err = squeeze_padding(2, 3, 2, 8).unwrap_err().to_string();
        assert!(err.contains("add layers"), "{err}");
    }

    #[test]
    fn defaults_are_valid_and_latent_is_2058() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.latent_dim(), 2058);
        assert_eq!(cfg.receptive_field(), 511);
    }

    #[test]
    fn max_len_beyond_receptive_field_is_rejected() {
        let cfg = ModelConfig {
            n_layers: 2,
            max_len: 200,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
