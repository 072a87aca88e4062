//! Document corpus and benchmark sets, read from and written to JSONL.
//!
//! Every other stage reads documents through [`Corpus`]. Records are
//! immutable once ingested; the text is stored as given, and
//! [`normalize_text`] is applied wherever text is compared.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<BTreeMap<String, String>>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            id: id.into(),
            text: text.into(),
            source: None,
            meta: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.check().map_err(Error::Argument)
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("document id is empty".into());
        }
        if normalize_text(&self.text).is_empty() {
            return Err(format!("document {:?} has empty text", self.id));
        }
        Ok(())
    }
}

/// NFC, lowercase, whitespace runs collapsed to one space, trimmed.
/// Punctuation is kept.
pub fn normalize_text(s: &str) -> String {
    // Lowercasing can leave a string that is no longer NFC, so compose again.
    let lowered: String = s.nfc().collect::<String>().to_lowercase();
    let composed: String = lowered.nfc().collect();
    composed.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Streaming reader over a `documents.jsonl` file.
///
/// Yields documents in file order. Blank lines are skipped; malformed lines
/// report their 1-based line number; a repeated id is an integrity error.
pub struct DocumentReader {
    path: PathBuf,
    lines: std::io::Lines<BufReader<File>>,
    line_no: usize,
    seen: HashSet<String>,
}

impl Iterator for DocumentReader {
    type Item = Result<Document>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let doc: Document = match serde_json::from_str(&line) {
                Ok(d) => d,
                Err(e) => {
                    return Some(Err(Error::Parse {
                        path: self.path.clone(),
                        line: self.line_no,
                        msg: e.to_string(),
                    }))
                }
            };
            if let Err(msg) = doc.check() {
                return Some(Err(Error::Parse {
                    path: self.path.clone(),
                    line: self.line_no,
                    msg,
                }));
            }
            if !self.seen.insert(doc.id.clone()) {
                return Some(Err(Error::Integrity(format!(
                    "duplicate document id {:?} at line {}",
                    doc.id, self.line_no
                ))));
            }
            return Some(Ok(doc));
        }
    }
}

pub fn ingest_jsonl(path: impl AsRef<Path>) -> Result<DocumentReader> {
    let path = path.as_ref().to_path_buf();
    let file = File::open(&path)?;
    Ok(DocumentReader {
        path,
        lines: BufReader::new(file).lines(),
        line_no: 0,
        seen: HashSet::new(),
    })
}

/// An in-memory corpus with id lookup.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: Vec<Document>,
    index: HashMap<String, usize>,
}

impl Corpus {
    pub fn from_documents(docs: Vec<Document>) -> Result<Self> {
        let mut index = HashMap::with_capacity(docs.len());
        for (i, d) in docs.iter().enumerate() {
            d.check().map_err(Error::Integrity)?;
            if index.insert(d.id.clone(), i).is_some() {
                return Err(Error::Integrity(format!("duplicate document id {:?}", d.id)));
            }
        }
        Ok(Corpus { docs, index })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let docs = ingest_jsonl(path)?.collect::<Result<Vec<_>>>()?;
        Corpus::from_documents(docs)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_jsonl(path, &self.docs)
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.index.get(id).map(|&i| &self.docs[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Document> {
        self.docs.iter()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSet {
    pub name: String,
    pub questions: Vec<String>,
}

#[derive(Deserialize)]
struct BenchmarkLine {
    name: String,
    question: String,
}

/// Reads `benchmarks.jsonl`, grouping questions by benchmark name in order
/// of first appearance. Questions are normalized on load.
pub fn load_benchmarks(path: impl AsRef<Path>) -> Result<Vec<BenchmarkSet>> {
    let lines: Vec<BenchmarkLine> = read_jsonl(path)?;
    let mut sets: Vec<BenchmarkSet> = Vec::new();
    let mut by_name: HashMap<String, usize> = HashMap::new();
    for l in lines {
        let q = normalize_text(&l.question);
        if q.is_empty() {
            continue;
        }
        let i = *by_name.entry(l.name.clone()).or_insert_with(|| {
            sets.push(BenchmarkSet {
                name: l.name.clone(),
                questions: Vec::new(),
            });
            sets.len() - 1
        });
        sets[i].questions.push(q);
    }
    Ok(sets)
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
