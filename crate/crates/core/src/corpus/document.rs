use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Classification task and its fixed label schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Political vs. non-political, exactly one label per document.
    Binary,
    /// One or more of three political-science areas per document.
    Multilabel,
}

const BINARY_CLASSES: [&str; 2] = ["non_political", "political"];
const AREA_CLASSES: [&str; 3] = ["american_government", "political_economy", "international_relations"];

impl Task {
    pub fn class_names(self) -> &'static [&'static str] {
        match self {
            Task::Binary => &BINARY_CLASSES,
            Task::Multilabel => &AREA_CLASSES,
        }
    }

    pub fn n_classes(self) -> usize {
        self.class_names().len()
    }

    pub fn class_id(self, name: &str) -> Option<usize> {
        self.class_names().iter().position(|&c| c == name)
    }

    /// Class kept by subcorpus extraction.
    pub fn positive_class(self) -> Option<usize> {
        match self {
            Task::Binary => Some(1),
            Task::Multilabel => None,
        }
    }
}

/// One text sample of either domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<String>,
    pub year: i32,
    pub source: String,
    pub labels: Option<Vec<String>>,
}

/// Line layout of the JSONL document files.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct DocumentRecord {
    id: String,
    text: String,
    year: i32,
    source: String,
    labels: Option<Vec<String>>,
}

/// Whitespace tokenization of lowercased text.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(|t| t.to_lowercase()).collect()
}

impl Document {
    pub fn new(
        id: impl Into<String>,
        text: &str,
        year: i32,
        source: impl Into<String>,
        labels: Option<Vec<String>>,
    ) -> Result<Self> {
        let id = id.into();
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(Error::Data(format!("document `{id}` has no tokens")));
        }
        Ok(Self {
            id,
            tokens,
            year,
            source: source.into(),
            labels,
        })
    }

    pub fn decade(&self) -> i32 {
        decade_of(self.year)
    }

    /// Label ids under `task`; `None` for unlabeled documents.
    pub fn label_ids(&self, task: Task) -> Result<Option<Vec<usize>>> {
        let Some(labels) = &self.labels else {
            return Ok(None);
        };
        let mut ids = labels
            .iter()
            .map(|l| {
                task.class_id(l)
                    .ok_or_else(|| Error::Data(format!("document `{}`: label `{l}` is not a {task:?} class", self.id)))
            })
            .collect::<Result<Vec<_>>>()?;
        ids.sort_unstable();
        ids.dedup();
        match task {
            Task::Binary if ids.len() != 1 => Err(Error::Data(format!(
                "document `{}`: binary task needs exactly one label, found {}",
                self.id,
                ids.len()
            ))),
            Task::Multilabel if ids.is_empty() => Err(Error::Data(format!(
                "document `{}`: multi-label task needs at least one label",
                self.id
            ))),
            _ => Ok(Some(ids)),
        }
    }

    fn to_record(&self) -> DocumentRecord {
        DocumentRecord {
            id: self.id.clone(),
            text: self.tokens.join(" "),
            year: self.year,
            source: self.source.clone(),
            labels: self.labels.clone(),
        }
    }
}

pub fn decade_of(year: i32) -> i32 {
    year - year.rem_euclid(10)
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut docs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DocumentRecord =
            serde_json::from_str(&line).map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        docs.push(Document::new(rec.id, &rec.text, rec.year, rec.source, rec.labels)?);
    }
    Ok(docs)
}

pub fn write_jsonl(path: impl AsRef<Path>, docs: &[Document]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for d in docs {
        serde_json::to_writer(&mut w, &d.to_record())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenization_lowercases_and_splits_on_whitespace() {
        assert_eq!(tokenize("The  Senate\tvoted\n"), vec!["the", "senate", "voted"]);
    }

    #[test]
    fn empty_text_is_rejected() {
        assert!(Document::new("d", "   ", 1950, "tm", None).is_err());
    }

    #[test]
    fn binary_documents_need_exactly_one_label() {
        let two = Document::new("d", "a", 1950, "tm", Some(vec!["political".into(), "non_political".into()])).unwrap();
        assert!(two.label_ids(Task::Binary).is_err());
        let one = Document::new("d", "a", 1950, "tm", Some(vec!["political".into()])).unwrap();
        assert_eq!(one.label_ids(Task::Binary).unwrap(), Some(vec![1]));
        assert!(one.label_ids(Task::Multilabel).is_err());
    }

    #[test]
    fn decades_floor_years() {
        assert_eq!(decade_of(1954), 1950);
        assert_eq!(decade_of(1960), 1960);
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("docs.jsonl");
        let docs = vec![
            Document::new("a", "x y", 1931, "ct", None).unwrap(),
            Document::new("b", "z", 1985, "nyt", Some(vec!["political".into()])).unwrap(),
        ];
        write_jsonl(&path, &docs).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            r#"{"id":"a","text":"x y","year":1931,"source":"ct","labels":null}"#
        );
        assert_eq!(read_jsonl(&path).unwrap(), docs);
    }
}
