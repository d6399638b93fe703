use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::document::{Document, Task};
use super::vocab::{Vocabulary, PAD};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Domain {
    Source,
    Target,
}

/// A document reduced to what the model consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDoc {
    pub ids: Vec<usize>,
    pub year: i32,
    pub labels: Option<Vec<usize>>,
}

pub fn encode_documents(docs: &[Document], vocab: &Vocabulary, max_len: usize, task: Task) -> Result<Vec<EncodedDoc>> {
    docs.iter()
        .map(|d| {
            Ok(EncodedDoc {
                ids: vocab.encode(d, max_len),
                year: d.year,
                labels: d.label_ids(task)?,
            })
        })
        .collect()
}

/// Right-padded id matrix plus metadata for one mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub token_ids: Vec<Vec<usize>>,
    pub years: Vec<i32>,
    pub labels: Option<Vec<Vec<usize>>>,
    pub domain: Domain,
}

impl Batch {
    pub fn from_docs<'a>(docs: impl IntoIterator<Item = &'a EncodedDoc>, domain: Domain) -> Self {
        let docs: Vec<&EncodedDoc> = docs.into_iter().collect();
        let width = docs.iter().map(|d| d.ids.len()).max().unwrap_or(0);
        let token_ids = docs
            .iter()
            .map(|d| {
                let mut row = d.ids.clone();
                row.resize(width, PAD);
                row
            })
            .collect();
        let labels = docs.iter().map(|d| d.labels.clone()).collect::<Option<Vec<_>>>();
        Self {
            token_ids,
            years: docs.iter().map(|d| d.year).collect(),
            labels,
            domain,
        }
    }

    pub fn len(&self) -> usize {
        self.years.len()
    }

    pub fn is_empty(&self) -> bool {
        self.years.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.token_ids.first().map_or(0, Vec::len)
    }

    /// Mean year of the batch's documents.
    pub fn representative_year(&self) -> f64 {
        self.years.iter().map(|&y| y as f64).sum::<f64>() / self.years.len().max(1) as f64
    }
}

/// Orders target batches from the most recent to the oldest representative
/// year. The sort is stable.
pub fn curriculum_order(mut batches: Vec<Batch>) -> Vec<Batch> {
    batches.sort_by(|a, b| b.representative_year().total_cmp(&a.representative_year()));
    batches
}

/// Endless stream of shuffled (or curriculum-ordered) epochs over a fixed set
/// of documents.
#[derive(Debug, Clone)]
pub struct BatchIterator {
    docs: Vec<EncodedDoc>,
    batch_size: usize,
    domain: Domain,
    curriculum: bool,
    rng: ChaCha8Rng,
    pending: std::vec::IntoIter<Batch>,
    epochs: u64,
}

impl BatchIterator {
    /// `curriculum` applies to target streams only; source batches are always
    /// shuffled.
    pub fn new(docs: Vec<EncodedDoc>, batch_size: usize, seed: u64, domain: Domain, curriculum: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(match domain {
            Domain::Source => 11,
            Domain::Target => 12,
        });
        Self {
            docs,
            batch_size: batch_size.max(1),
            domain,
            curriculum: curriculum && domain == Domain::Target,
            rng,
            pending: Vec::new().into_iter(),
            epochs: 0,
        }
    }

    pub fn epochs_started(&self) -> u64 {
        self.epochs
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.docs.len().div_ceil(self.batch_size)
    }

    /// Produces the batches of the next epoch.
    pub fn next_epoch(&mut self) -> Vec<Batch> {
        self.epochs += 1;
        let mut order: Vec<usize> = (0..self.docs.len()).collect();
        order.shuffle(&mut self.rng);
        if self.curriculum {
            order.sort_by_key(|&i| self.docs[i].year);
        }
        let batches = order
            .chunks(self.batch_size)
            .map(|chunk| Batch::from_docs(chunk.iter().map(|&i| &self.docs[i]), self.domain))
            .collect();
        if self.curriculum {
            curriculum_order(batches)
        } else {
            batches
        }
    }
}

impl Iterator for BatchIterator {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.docs.is_empty() {
            return None;
        }
        if let Some(b) = self.pending.next() {
            return Some(b);
        }
        self.pending = self.next_epoch().into_iter();
        self.pending.next()
    }
}
