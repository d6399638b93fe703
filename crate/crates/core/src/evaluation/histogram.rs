use serde::{Deserialize, Serialize};

use crate::ensembling::AdaptiveState;
use crate::error::{Error, Result};
use crate::model::ModelParams;

pub const N_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerSelection {
    Bottom,
    Middle,
    Top,
}

impl LayerSelection {
    pub const ALL: [LayerSelection; 3] = [LayerSelection::Bottom, LayerSelection::Middle, LayerSelection::Top];

    /// Zero-based convolution layer index.
    pub fn layer(self, n_layers: usize) -> usize {
        match self {
            LayerSelection::Bottom => 0,
            LayerSelection::Middle => n_layers.div_ceil(2) - 1,
            LayerSelection::Top => n_layers - 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            LayerSelection::Bottom => "bottom",
            LayerSelection::Middle => "middle",
            LayerSelection::Top => "top",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub selection: LayerSelection,
    pub array: String,
    /// Bin `i` covers `[i/20, (i+1)/20)`; the last bin also holds 1.0.
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn bin_edges() -> Vec<f64> {
        (0..=N_BINS).map(|i| i as f64 / N_BINS as f64).collect()
    }
}

/// 20-bin counts of values in `[0, 1]`.
pub fn histogram_counts(values: &[f64]) -> Vec<usize> {
    let mut counts = vec![0; N_BINS];
    for &v in values {
        let bin = ((v * N_BINS as f64).floor() as usize).min(N_BINS - 1);
        counts[bin] += 1;
    }
    counts
}

/// Histograms of the weight and bias constants of one convolution layer.
pub fn constant_distributions(
    state: Option<&AdaptiveState>,
    n_layers: usize,
    selection: LayerSelection,
) -> Result<Vec<Histogram>> {
    let state = state.ok_or_else(|| Error::Unsupported("adaptive constants exist only for adaptive ensembling runs".into()))?;
    if n_layers == 0 {
        return Err(Error::config("n_layers", "must be positive"));
    }
    let (w, b) = ModelParams::conv_indices(selection.layer(n_layers));
    [w, b]
        .iter()
        .map(|&i| {
            let c = state
                .constants
                .get(i)
                .ok_or_else(|| Error::Data(format!("adaptive state has no array {i}")))?;
            Ok(Histogram {
                selection,
                array: state.names[i].clone(),
                counts: histogram_counts(c.data()),
            })
        })
        .collect()
}
