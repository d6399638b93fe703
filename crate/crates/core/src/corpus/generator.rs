//! Synthetic diachronic corpora with controllable vocabulary drift.
//!
//! Every class owns a set of keywords; documents are bags of keywords and
//! shared filler words. Target documents from older decades have their
//! keywords replaced by decade-specific synonyms with a probability that grows
//! linearly with the distance from the most recent decade, so older decades
//! share less vocabulary with the (most recent) source domain.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::document::{Document, Task};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusGenSpec {
    pub n_source_labeled: usize,
    pub n_target_unlabeled: usize,
    pub n_target_labeled_dev: usize,
    pub n_target_labeled_test: usize,
    /// Decade start years, e.g. `[1940, 1950, ...]`.
    pub decades: Vec<i32>,
    pub classes: Task,
    /// Keyword replacement probability for the oldest decade.
    pub drift: f64,
    pub seed: u64,
    #[serde(default = "defaults::keywords_per_class")]
    pub keywords_per_class: usize,
    #[serde(default = "defaults::filler_vocab")]
    pub filler_vocab: usize,
    /// Probability that a token position holds a class keyword.
    #[serde(default = "defaults::keyword_rate")]
    pub keyword_rate: f64,
    /// Filler positions are promoted to keywords until a document holds at
    /// least this many.
    #[serde(default)]
    pub min_keywords: usize,
    #[serde(default = "defaults::min_doc_len")]
    pub min_doc_len: usize,
    #[serde(default = "defaults::max_doc_len")]
    pub max_doc_len: usize,
    /// Multi-label task: probability that a document carries a second area.
    #[serde(default = "defaults::multi_label_prob")]
    pub multi_label_prob: f64,
    /// Nominal class proportions; uniform when absent.
    #[serde(default)]
    pub class_proportions: Option<Vec<f64>>,
    /// Binary task: positive-class rate of target documents, one per decade.
    #[serde(default)]
    pub decade_positive_rates: Option<Vec<f64>>,
    /// Target news sources and their sampling weights.
    #[serde(default = "defaults::news_sources")]
    pub news_sources: Vec<(String, f64)>,
    /// Width of the emitted pretrained-style word vectors; 0 emits none.
    #[serde(default)]
    pub embedding_dim: usize,
    /// Correlation between a synonym's vector and its keyword's vector.
    #[serde(default = "defaults::synonym_similarity")]
    pub synonym_similarity: f64,
}

mod defaults {
    pub fn keywords_per_class() -> usize {
        40
    }
    pub fn filler_vocab() -> usize {
        400
    }
    pub fn keyword_rate() -> f64 {
        0.15
    }
    pub fn min_doc_len() -> usize {
        12
    }
    pub fn max_doc_len() -> usize {
        30
    }
    pub fn multi_label_prob() -> f64 {
        0.25
    }
    pub fn synonym_similarity() -> f64 {
        0.7
    }
    pub fn news_sources() -> Vec<(String, f64)> {
        [("ct", 0.2), ("csm", 0.2), ("nyt", 0.2), ("tm", 0.3), ("wsj", 0.1)]
            .into_iter()
            .map(|(s, w)| (s.to_string(), w))
            .collect()
    }
}

/// Source-domain tag written to generated source documents.
pub const SOURCE_TAG: &str = "modern";

impl Default for CorpusGenSpec {
    fn default() -> Self {
        Self {
            n_source_labeled: 2000,
            n_target_unlabeled: 2000,
            n_target_labeled_dev: 200,
            n_target_labeled_test: 400,
            decades: vec![1940, 1950, 1960, 1970, 1980],
            classes: Task::Binary,
            drift: 0.6,
            seed: 7,
            keywords_per_class: defaults::keywords_per_class(),
            filler_vocab: defaults::filler_vocab(),
            keyword_rate: defaults::keyword_rate(),
            min_keywords: 0,
            min_doc_len: defaults::min_doc_len(),
            max_doc_len: defaults::max_doc_len(),
            multi_label_prob: defaults::multi_label_prob(),
            class_proportions: None,
            decade_positive_rates: None,
            news_sources: defaults::news_sources(),
            embedding_dim: 0,
            synonym_similarity: defaults::synonym_similarity(),
        }
    }
}

impl CorpusGenSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_source_labeled", self.n_source_labeled),
            ("n_target_unlabeled", self.n_target_unlabeled),
            ("n_target_labeled_dev", self.n_target_labeled_dev),
            ("n_target_labeled_test", self.n_target_labeled_test),
            ("keywords_per_class", self.keywords_per_class),
            ("filler_vocab", self.filler_vocab),
            ("min_doc_len", self.min_doc_len),
        ];
        for (field, n) in counts {
            if n == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if self.decades.is_empty() {
            return Err(Error::config("decades", "at least one decade is required"));
        }
        if self.decades.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("decades", "must be strictly increasing"));
        }
        if !(0.0..=1.0).contains(&self.drift) {
            return Err(Error::config("drift", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.keyword_rate) {
            return Err(Error::config("keyword_rate", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.synonym_similarity) {
            return Err(Error::config("synonym_similarity", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.multi_label_prob) {
            return Err(Error::config("multi_label_prob", "must lie in [0, 1]"));
        }
        if self.max_doc_len < self.min_doc_len {
            return Err(Error::config("max_doc_len", "must be at least min_doc_len"));
        }
        if let Some(p) = &self.class_proportions {
            if p.len() != self.classes.n_classes() || p.iter().any(|&v| v < 0.0) || p.iter().sum::<f64>() <= 0.0 {
                return Err(Error::config("class_proportions", "one non-negative weight per class"));
            }
        }
        if let Some(r) = &self.decade_positive_rates {
            if self.classes != Task::Binary {
                return Err(Error::config("decade_positive_rates", "only valid for the binary task"));
            }
            if r.len() != self.decades.len() || r.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::config("decade_positive_rates", "one rate in [0, 1] per decade"));
            }
        }
        if self.news_sources.is_empty() || self.news_sources.iter().any(|(_, w)| *w < 0.0) {
            return Err(Error::config(
                "news_sources",
                "need at least one source with non-negative weight",
            ));
        }
        Ok(())
    }

    /// Replacement probability for decade index `j` (0 = oldest).
    pub fn replacement_prob(&self, decade_index: usize) -> f64 {
        let d = self.decades.len();
        if d <= 1 {
            return 0.0;
        }
        let distance = (d - 1 - decade_index) as f64;
        self.drift * distance / (d - 1) as f64
    }

    fn proportions(&self) -> Vec<f64> {
        let k = self.classes.n_classes();
        let p = self.class_proportions.clone().unwrap_or_else(|| vec![1.0; k]);
        let total: f64 = p.iter().sum();
        p.into_iter().map(|v| v / total).collect()
    }
}

pub fn keyword_token(class: usize, index: usize) -> String {
    format!("k{class}x{index:03}")
}

pub fn synonym_token(class: usize, index: usize, decade: i32) -> String {
    format!("k{class}x{index:03}s{decade}")
}

pub fn filler_token(index: usize) -> String {
    format!("w{index:04}")
}

/// Output of the generator. Unlabeled target documents carry `labels: None`;
/// their planted labels are kept separately for oracle checks.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCorpora {
    pub source: Vec<Document>,
    pub target_unlabeled: Vec<Document>,
    pub target_dev: Vec<Document>,
    pub target_test: Vec<Document>,
    pub target_unlabeled_gold: Vec<Vec<String>>,
    /// `(token, vector)` rows for every generated word; empty unless
    /// `embedding_dim > 0`.
    pub embeddings: Vec<(String, Vec<f64>)>,
}

fn pick_weighted(rng: &mut impl RngCore, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

struct Sampler<'a> {
    spec: &'a CorpusGenSpec,
    proportions: Vec<f64>,
}

impl Sampler<'_> {
    fn labels(&self, rng: &mut ChaCha8Rng, decade_index: Option<usize>) -> Vec<usize> {
        let task = self.spec.classes;
        match task {
            Task::Binary => {
                let positive = match (decade_index, &self.spec.decade_positive_rates) {
                    (Some(j), Some(rates)) => rng.random::<f64>() < rates[j],
                    _ => pick_weighted(rng, &self.proportions) == 1,
                };
                vec![usize::from(positive)]
            }
            Task::Multilabel => {
                let first = pick_weighted(rng, &self.proportions);
                let mut labels = vec![first];
                if rng.random::<f64>() < self.spec.multi_label_prob {
                    let mut w = self.proportions.clone();
                    w[first] = 0.0;
                    if w.iter().sum::<f64>() > 0.0 {
                        labels.push(pick_weighted(rng, &w));
                    }
                }
                labels.sort_unstable();
                labels
            }
        }
    }

    fn tokens(&self, rng: &mut ChaCha8Rng, labels: &[usize], decade: i32, replace_prob: f64) -> Vec<String> {
        let s = self.spec;
        let len = rng.random_range(s.min_doc_len..=s.max_doc_len);
        let mut is_keyword: Vec<bool> = (0..len).map(|_| rng.random::<f64>() < s.keyword_rate).collect();
        let mut missing = s
            .min_keywords
            .min(len)
            .saturating_sub(is_keyword.iter().filter(|&&k| k).count());
        while missing > 0 {
            let at = rng.random_range(0..len);
            if !is_keyword[at] {
                is_keyword[at] = true;
                missing -= 1;
            }
        }
        is_keyword
            .into_iter()
            .map(|keyword| {
                if keyword {
                    let class = labels[rng.random_range(0..labels.len())];
                    let index = rng.random_range(0..s.keywords_per_class);
                    if rng.random::<f64>() < replace_prob {
                        synonym_token(class, index, decade)
                    } else {
                        keyword_token(class, index)
                    }
                } else {
                    filler_token(rng.random_range(0..s.filler_vocab))
                }
            })
            .collect()
    }

    fn document(&self, rng: &mut ChaCha8Rng, id: String, target: bool) -> (Document, Vec<String>) {
        let s = self.spec;
        let newest = s.decades.len() - 1;
        let (decade_index, source) = if target {
            let j = rng.random_range(0..s.decades.len());
            let weights: Vec<f64> = s.news_sources.iter().map(|(_, w)| *w).collect();
            (j, s.news_sources[pick_weighted(rng, &weights)].0.clone())
        } else {
            (newest, SOURCE_TAG.to_string())
        };
        let decade = s.decades[decade_index];
        let year = decade + rng.random_range(0..10);
        let labels = self.labels(rng, target.then_some(decade_index));
        let replace = if target { s.replacement_prob(decade_index) } else { 0.0 };
        let tokens = self.tokens(rng, &labels, decade, replace);
        let names: Vec<String> = labels.iter().map(|&l| s.classes.class_names()[l].to_string()).collect();
        let doc = Document {
            id,
            tokens,
            year,
            source,
            labels: Some(names.clone()),
        };
        (doc, names)
    }
}

pub fn generate_synthetic_corpora(spec: &CorpusGenSpec) -> Result<GeneratedCorpora> {
    spec.validate()?;
    let sampler = Sampler {
        spec,
        proportions: spec.proportions(),
    };
    let split = |stream: u64, prefix: &str, n: usize, target: bool| {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(stream);
        (0..n)
            .map(|i| sampler.document(&mut rng, format!("{prefix}-{i:06}"), target))
            .collect::<Vec<_>>()
    };
    let source = split(1, "src", spec.n_source_labeled, false)
        .into_iter()
        .map(|(d, _)| d)
        .collect();
    let (target_unlabeled, target_unlabeled_gold): (Vec<_>, Vec<_>) = split(2, "tgt", spec.n_target_unlabeled, true)
        .into_iter()
        .map(|(mut d, gold)| {
            d.labels = None;
            (d, gold)
        })
        .unzip();
    let target_dev = split(3, "dev", spec.n_target_labeled_dev, true)
        .into_iter()
        .map(|(d, _)| d)
        .collect();
    let target_test = split(4, "test", spec.n_target_labeled_test, true)
        .into_iter()
        .map(|(d, _)| d)
        .collect();
    Ok(GeneratedCorpora {
        source,
        target_unlabeled,
        target_dev,
        target_test,
        target_unlabeled_gold,
        embeddings: word_vectors(spec),
    })
}

/// Writes `token v1 .. vD` lines, the format `ModelParams::load_embeddings`
/// reads.
pub fn write_word_vectors(path: impl AsRef<std::path::Path>, rows: &[(String, Vec<f64>)]) -> Result<()> {
    let mut text = String::new();
    for (token, v) in rows {
        text.push_str(token);
        for x in v {
            text.push(' ');
            text.push_str(&x.to_string());
        }
        text.push('\n');
    }
    crate::io::write_atomic(path, text.as_bytes())
}

/// Unit-variance Gaussian vectors for keywords and fillers. Each synonym
/// vector is `ρ·keyword + sqrt(1 - ρ²)·fresh` with `ρ = synonym_similarity`.
fn word_vectors(spec: &CorpusGenSpec) -> Vec<(String, Vec<f64>)> {
    let dim = spec.embedding_dim;
    if dim == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(5);
    let mut draw = || -> Vec<f64> { (0..dim).map(|_| rng.sample(StandardNormal)).collect() };
    let rho = spec.synonym_similarity;
    let fresh = (1.0 - rho * rho).sqrt();
    let mut out = Vec::new();
    for class in 0..spec.classes.n_classes() {
        for index in 0..spec.keywords_per_class {
            let base = draw();
            for &decade in &spec.decades {
                let noise = draw();
                let v = base.iter().zip(&noise).map(|(b, n)| rho * b + fresh * n).collect();
                out.push((synonym_token(class, index, decade), v));
            }
            out.push((keyword_token(class, index), base));
        }
    }
    for index in 0..spec.filler_vocab {
        out.push((filler_token(index), draw()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{vocab_overlap_by_decade, Vocabulary};

    fn small(drift: f64) -> CorpusGenSpec {
        CorpusGenSpec {
            n_source_labeled: 1500,
            n_target_unlabeled: 1500,
            n_target_labeled_dev: 10,
            n_target_labeled_test: 10,
            drift,
            ..Default::default()
        }
    }

    #[test]
    fn zero_decades_is_rejected_by_field_name() {
        let spec = CorpusGenSpec {
            decades: vec![],
            ..Default::default()
        };
        let err = generate_synthetic_corpora(&spec).unwrap_err().to_string();
        assert!(err.contains("decades"), "{err}");
    }

    #[test]
    fn drift_out_of_range_is_rejected() {
        let spec = CorpusGenSpec {
            drift: 1.5,
            ..Default::default()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn same_seed_same_corpora() {
        let a = generate_synthetic_corpora(&small(0.5)).unwrap();
        let b = generate_synthetic_corpora(&small(0.5)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_corpora(&CorpusGenSpec { seed: 8, ..small(0.5) }).unwrap();
        assert_ne!(a.source, c.source);
    }

    #[test]
    fn zero_drift_gives_full_overlap() {
        let g = generate_synthetic_corpora(&small(0.0)).unwrap();
        let v = Vocabulary::build(&g.source, 1).unwrap();
        for (decade, pct) in vocab_overlap_by_decade(&g.target_unlabeled, &v) {
            assert_eq!(pct, 100.0, "decade {decade}");
        }
    }

    #[test]
    fn source_docs_are_labeled_and_recent() {
        let g = generate_synthetic_corpora(&small(0.6)).unwrap();
        assert!(g.source.iter().all(|d| d.year >= 1980 && d.year < 1990 && d.labels.is_some()));
        assert!(g.target_unlabeled.iter().all(|d| d.labels.is_none()));
        assert_eq!(g.target_unlabeled_gold.len(), g.target_unlabeled.len());
        assert!(g.target_dev.iter().all(|d| d.labels.is_some()));
    }

    #[test]
    fn multilabel_docs_carry_one_or_two_areas() {
        let g = generate_synthetic_corpora(&CorpusGenSpec {
            classes: Task::Multilabel,
            ..small(0.3)
        })
        .unwrap();
        let mut two = 0;
        for d in &g.source {
            let ids = d.label_ids(Task::Multilabel).unwrap().unwrap();
            assert!((1..=2).contains(&ids.len()));
            two += usize::from(ids.len() == 2);
        }
        let frac = two as f64 / g.source.len() as f64;
        assert!((frac - 0.25).abs() < 0.05, "{frac}");
    }

    #[test]
    fn replacement_grows_with_decade_distance() {
        let spec = CorpusGenSpec::default();
        let probs: Vec<f64> = (0..5).map(|j| spec.replacement_prob(j)).collect();
        assert_eq!(probs.last(), Some(&0.0));
        assert!((probs[0] - 0.6).abs() < 1e-12);
        assert!(probs.windows(2).all(|w| w[0] > w[1]));
    }
}
