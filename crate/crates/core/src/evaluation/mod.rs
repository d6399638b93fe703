//! Scores, latent projections, constant histograms and subcorpus extraction.

mod extraction;
mod histogram;
mod metrics;
mod pca;

pub use extraction::{extract_subcorpus, ExtractionReport};
pub use histogram::{constant_distributions, histogram_counts, Histogram, LayerSelection, N_BINS};
pub use metrics::{confusion, decisions, f1_scores, indicators, ClassMetrics, ConfusionCounts, Metrics};
pub use pca::{pca_2d, PcaPoint, PcaResult};
