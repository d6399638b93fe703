//! Documents, vocabularies, synthetic corpora and batch scheduling.

mod batching;
mod document;
mod generator;
mod vocab;

pub use batching::{curriculum_order, encode_documents, Batch, BatchIterator, Domain, EncodedDoc};
pub use document::{decade_of, read_jsonl, tokenize, write_jsonl, Document, Task};
pub use generator::{
    filler_token, generate_synthetic_corpora, keyword_token, synonym_token, write_word_vectors, CorpusGenSpec, GeneratedCorpora,
    SOURCE_TAG,
};
pub use vocab::{vocab_overlap_by_decade, Vocabulary, PAD, UNK};
