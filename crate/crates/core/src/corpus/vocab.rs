use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::document::{decade_of, Document};
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
const SPECIALS: [&str; 2] = ["<pad>", "<unk>"];

/// Token ↔ id mapping. Ids 0 and 1 are reserved for padding and unknown
/// tokens; the remaining ids are ordered by descending count, then token.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
    min_count: usize,
}

impl Vocabulary {
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a Document>, min_count: usize) -> Result<Self> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        let mut n_docs = 0;
        for doc in docs {
            n_docs += 1;
            for t in &doc.tokens {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        if n_docs == 0 {
            return Err(Error::Empty("vocabulary documents"));
        }
        let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_count.max(1)).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut vocab = Self::from_tokens(kept.into_iter().map(|(t, _)| t.to_string()))?;
        vocab.min_count = min_count;
        Ok(vocab)
    }

    /// Builds from non-special tokens listed in id order.
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut id_to_token: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut token_to_id = HashMap::new();
        for t in tokens {
            if SPECIALS.contains(&t.as_str()) || token_to_id.contains_key(&t) {
                return Err(Error::Data(format!("duplicate or reserved vocabulary token `{t}`")));
            }
            token_to_id.insert(t.clone(), id_to_token.len());
            id_to_token.push(t);
        }
        Ok(Self {
            token_to_id,
            id_to_token,
            min_count: 1,
        })
    }

    /// Size including the two reserved ids.
    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.len() == SPECIALS.len()
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.token_to_id.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    /// Non-special tokens in id order.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.id_to_token[SPECIALS.len()..].iter().map(String::as_str)
    }

    /// Maps tokens to ids, truncating to the first `max_len` tokens.
    pub fn encode(&self, doc: &Document, max_len: usize) -> Vec<usize> {
        doc.tokens.iter().take(max_len.max(1)).map(|t| self.id(t)).collect()
    }

    /// One token per line; line `i` holds id `i + 2`.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for t in self.tokens() {
            writeln!(w, "{t}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let tokens = reader.lines().collect::<std::io::Result<Vec<_>>>()?;
        Self::from_tokens(tokens)
    }
}

/// Percentage of each decade's distinct tokens that also occur in
/// `source_vocab`. Decades without documents are omitted.
pub fn vocab_overlap_by_decade<'a>(
    target_docs: impl IntoIterator<Item = &'a Document>,
    source_vocab: &Vocabulary,
) -> BTreeMap<i32, f64> {
    let mut by_decade: BTreeMap<i32, BTreeSet<&str>> = BTreeMap::new();
    for doc in target_docs {
        by_decade
            .entry(decade_of(doc.year))
            .or_default()
            .extend(doc.tokens.iter().map(String::as_str));
    }
    by_decade
        .into_iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(decade, words)| {
            let shared = words.iter().filter(|w| source_vocab.contains(w)).count();
            (decade, shared as f64 / words.len() as f64 * 100.0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(text: &str, year: i32) -> Document {
        Document::new("d", text, year, "s", None).unwrap()
    }

    #[test]
    fn min_count_filters_rare_tokens() {
        let docs = [doc("a a b", 1980)];
        let v = Vocabulary::build(&docs, 2).unwrap();
        assert!(v.contains("a"));
        assert!(!v.contains("b"));
        assert_eq!(v.id("b"), UNK);
        assert_eq!(v.len(), 3);
    }

    #[test]
    fn min_count_one_keeps_everything() {
        let docs = [doc("a a b c", 1980)];
        let v = Vocabulary::build(&docs, 1).unwrap();
        assert_eq!(v.tokens().collect::<Vec<_>>(), vec!["a", "b", "c"]);
    }

    #[test]
    fn builds_are_deterministic() {
        let docs = [doc("z y x y z z q", 1980), doc("q r", 1970)];
        let a = Vocabulary::build(&docs, 1).unwrap();
        let b = Vocabulary::build(&docs, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.tokens().collect::<Vec<_>>(), vec!["z", "q", "y", "r", "x"]);
    }

    #[test]
    fn empty_stream_is_an_error() {
        assert!(Vocabulary::build(std::iter::empty(), 1).is_err());
    }

    #[test]
    fn encode_maps_unknowns_and_truncates() {
        let v = Vocabulary::from_tokens(["a".to_string()]).unwrap();
        assert_eq!(v.encode(&doc("a zz", 1980), 200), vec![2, UNK]);
        let long = vec!["a"; 300].join(" ");
        let ids = v.encode(&doc(&long, 1980), 200);
        assert_eq!(ids.len(), 200);
        assert!(!v.encode(&doc("zz", 1980), 1).is_empty());
    }

    #[test]
    fn file_round_trip_keeps_ids() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        let v = Vocabulary::build(&[doc("b b a c", 1980)], 1).unwrap();
        v.write(&p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "b\na\nc\n");
        let back = Vocabulary::read(&p).unwrap();
        assert_eq!(back.id("b"), 2);
        assert_eq!(back.id("c"), 4);
    }

    #[test]
    fn overlap_examples() {
        let source = Vocabulary::from_tokens(["b", "c", "d"].map(String::from)).unwrap();
        let partial = vocab_overlap_by_decade(&[doc("a b c", 1951)], &source);
        assert!((partial[&1950] - 200.0 / 3.0).abs() < 1e-9);
        let disjoint = vocab_overlap_by_decade(&[doc("x y", 1931)], &source);
        assert_eq!(disjoint[&1930], 0.0);
        let subset = vocab_overlap_by_decade(&[doc("b d", 1980), doc("x", 1960)], &source);
        assert_eq!(subset[&1980], 100.0);
        assert!(!subset.contains_key(&1970));
    }
}
