//! The dilated causal CNN text classifier.

mod checkpoint;
mod config;
mod network;
mod params;
mod perturb;

pub use checkpoint::{predict_encoded, TrainedModel, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::{squeeze_padding, total_shrink, Head, ModelConfig};
pub use network::{
    bind_params, classify, forward, history_pad, predict_batch, time_embedding, BatchPerturbation, Forward, Mode, Prediction,
    YearNormalizer,
};
pub use params::ModelParams;
pub use perturb::{perturb_input, sample_perturbation};
