//! Topic / key-concept extraction and the tagged output format it uses.
//!
//! Concept strings keep their display casing; identity downstream is the
//! case-folded, whitespace-collapsed key from [`canonical_key`].

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use indexmap::IndexMap;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{normalize_text, Document};
use crate::error::{Error, Result};
use crate::llmio::{bounded_map, ChatBackend, ChatRequest, QUESTION_TEMPERATURE};
use crate::prompts::PromptFamily;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchoolLevel {
    PrimarySchool,
    MiddleSchool,
    HighSchool,
    College,
    GradSchool,
    Competition,
    Other,
}

impl SchoolLevel {
    /// Maps free text onto a level, case-insensitively. Unrecognised text is
    /// [`SchoolLevel::Other`].
    pub fn from_text(s: &str) -> SchoolLevel {
        let k = normalize_text(s).replace(['_', '-'], " ");
        match k.as_str() {
            "primary school" | "primary" | "elementary school" | "elementary" => {
                SchoolLevel::PrimarySchool
            }
            "middle school" | "middle" => SchoolLevel::MiddleSchool,
            "high school" | "high" => SchoolLevel::HighSchool,
            "college" | "undergraduate" | "university" => SchoolLevel::College,
            "graduate school" | "grad school" | "graduate" => SchoolLevel::GradSchool,
            "competition" => SchoolLevel::Competition,
            _ => SchoolLevel::Other,
        }
    }

    /// Label as it appears in the extraction prompt.
    pub fn label(self) -> &'static str {
        match self {
            SchoolLevel::PrimarySchool => "Primary School",
            SchoolLevel::MiddleSchool => "Middle School",
            SchoolLevel::HighSchool => "High School",
            SchoolLevel::College => "College",
            SchoolLevel::GradSchool => "Graduate School",
            SchoolLevel::Competition => "Competition",
            SchoolLevel::Other => "Other",
        }
    }
}

impl fmt::Display for SchoolLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Trimmed, whitespace-collapsed display form; casing is kept.
pub fn canonical_display(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Identity key for a concept string.
pub fn canonical_key(s: &str) -> String {
    normalize_text(s)
}

/// Everything parsed out of one extraction response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptFields {
    pub level: SchoolLevel,
    pub subject: String,
    pub topics: Vec<String>,
    pub key_concepts: IndexMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptSet {
    pub doc_id: String,
    pub level: SchoolLevel,
    pub subject: String,
    pub topics: Vec<String>,
    pub key_concepts: IndexMap<String, Vec<String>>,
}

impl ConceptSet {
    pub fn from_fields(doc_id: impl Into<String>, f: ConceptFields) -> Self {
        ConceptSet {
            doc_id: doc_id.into(),
            level: f.level,
            subject: f.subject,
            topics: f.topics,
            key_concepts: f.key_concepts,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.topics.is_empty() {
            return Err(Error::ConceptParse(format!("{}: no topics", self.doc_id)));
        }
        let mut seen = std::collections::HashSet::new();
        for t in &self.topics {
            if !seen.insert(canonical_key(t)) {
                return Err(Error::ConceptParse(format!("{}: duplicate topic {t:?}", self.doc_id)));
            }
        }
        for k in self.key_concepts.keys() {
            if !self.topics.contains(k) {
                return Err(Error::ConceptParse(format!(
                    "{}: key-concept group {k:?} is not a topic",
                    self.doc_id
                )));
            }
        }
        Ok(())
    }

    /// All key concepts of the document, deduplicated by key, in order.
    pub fn all_key_concepts(&self) -> Vec<&str> {
        let mut seen = std::collections::HashSet::new();
        self.key_concepts
            .values()
            .flatten()
            .filter(|k| seen.insert(canonical_key(k)))
            .map(String::as_str)
            .collect()
    }

    pub fn fields(&self) -> ConceptFields {
        ConceptFields {
            level: self.level,
            subject: self.subject.clone(),
            topics: self.topics.clone(),
            key_concepts: self.key_concepts.clone(),
        }
    }
}

fn block<'a>(raw: &'a str, tag: &str) -> Option<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = raw.find(&open)? + open.len();
    let end = raw[start..].find(&close)? + start;
    Some(&raw[start..end])
}

struct LineRegexes {
    topic: Regex,
    kc: Regex,
}

fn line_regexes() -> &'static LineRegexes {
    static RE: OnceLock<LineRegexes> = OnceLock::new();
    RE.get_or_init(|| LineRegexes {
        topic: Regex::new(r"^\s*(\d+)\.\s+(.+?)\s*$").unwrap(),
        kc: Regex::new(r"^\s*(\d+)\.(\d+)\.?\s+(.+?)\s*$").unwrap(),
    })
}

/// Parses the tagged extraction response.
pub fn parse_concept_output(raw: &str) -> Result<ConceptFields> {
    let re = line_regexes();
    let level = block(raw, "level").map(SchoolLevel::from_text).unwrap_or(SchoolLevel::Other);
    let subject = block(raw, "subject").map(canonical_display).unwrap_or_default();
    let topic_block =
        block(raw, "topic").ok_or_else(|| Error::ConceptParse("missing <topic> block".into()))?;

    // listed number -> index into `topics`
    let mut by_number: BTreeMap<u32, usize> = BTreeMap::new();
    let mut topics: Vec<String> = Vec::new();
    let mut keys: Vec<String> = Vec::new();
    for line in topic_block.lines() {
        if re.kc.is_match(line) {
            continue;
        }
        let Some(c) = re.topic.captures(line) else { continue };
        let n: u32 = c[1].parse().map_err(|_| Error::ConceptParse(format!("bad topic number in {line:?}")))?;
        let text = canonical_display(c[2].trim_end_matches(':'));
        if text.is_empty() {
            continue;
        }
        let key = canonical_key(&text);
        let idx = match keys.iter().position(|k| *k == key) {
            Some(i) => {
                log::warn!("duplicate topic {text:?} merged");
                i
            }
            None => {
                topics.push(text);
                keys.push(key);
                topics.len() - 1
            }
        };
        by_number.insert(n, idx);
    }
    if topics.is_empty() {
        return Err(Error::ConceptParse("no topics parsed from <topic> block".into()));
    }

    let mut groups: Vec<Vec<String>> = vec![Vec::new(); topics.len()];
    if let Some(kc_block) = block(raw, "key_concept") {
        for line in kc_block.lines() {
            let (group, text) = if let Some(c) = re.kc.captures(line) {
                (c[1].parse::<u32>().ok(), Some(canonical_display(&c[3])))
            } else if let Some(c) = re.topic.captures(line) {
                (c[1].parse::<u32>().ok(), None)
            } else {
                continue;
            };
            let Some(g) = group else { continue };
            let Some(&idx) = by_number.get(&g) else {
                return Err(Error::ConceptParse(format!(
                    "key-concept group {g} has no matching topic ({} topics parsed)",
                    topics.len()
                )));
            };
            if let Some(t) = text.filter(|t| !t.is_empty()) {
                let key = canonical_key(&t);
                if !groups[idx].iter().any(|e| canonical_key(e) == key) {
                    groups[idx].push(t);
                }
            }
        }
    }

    if topics.len() > 5 {
        log::warn!("{} topics extracted, more than the 5 requested", topics.len());
    }
    for (t, g) in topics.iter().zip(&groups) {
        if !(5..=20).contains(&g.len()) {
            log::debug!("topic {t:?} has {} key concepts", g.len());
        }
    }

    let key_concepts = topics.iter().cloned().zip(groups).collect();
    Ok(ConceptFields { level, subject, topics, key_concepts })
}

/// Writes fields back in the tagged format that [`parse_concept_output`]
/// reads.
pub fn serialize_concept_output(f: &ConceptFields) -> String {
    let mut out = format!("<level>{}</level>\n<subject>{}</subject>\n\n<topic>\nTopics:\n", f.level, f.subject);
    for (i, t) in f.topics.iter().enumerate() {
        out.push_str(&format!("{}. {}\n", i + 1, t));
    }
    out.push_str("</topic>\n\n<key_concept>\nKey Concepts:\n");
    for (i, t) in f.topics.iter().enumerate() {
        out.push_str(&format!("{}. {}:\n", i + 1, t));
        for (j, k) in f.key_concepts.get(t).into_iter().flatten().enumerate() {
            out.push_str(&format!("    {}.{}. {}\n", i + 1, j + 1, k));
        }
        out.push('\n');
    }
    out.push_str("</key_concept>\n");
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractOptions {
    pub model: String,
    pub temperature: f64,
    /// Re-prompts after the first unparsable response.
    pub parse_retries: u32,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            model: "mock".into(),
            temperature: QUESTION_TEMPERATURE,
            parse_retries: 3,
        }
    }
}

pub fn extract_concepts(doc: &Document, backend: &dyn ChatBackend, opts: &ExtractOptions) -> Result<ConceptSet> {
    if doc.text.trim().is_empty() {
        return Err(Error::Argument(format!("document {} has empty text", doc.id)));
    }
    let prompt = PromptFamily::Concepts.template().render(&[("text", &doc.text)]);
    let req = ChatRequest::new(prompt, opts.temperature, opts.model.clone());
    let mut last_err = String::new();
    let mut raw = String::new();
    for _ in 0..=opts.parse_retries {
        raw = backend.complete(&req)?;
        match parse_concept_output(&raw) {
            Ok(f) => return Ok(ConceptSet::from_fields(&doc.id, f)),
            Err(e) => last_err = e.to_string(),
        }
    }
    Err(Error::Extraction {
        doc_id: doc.id.clone(),
        msg: last_err,
        raw,
    })
}

/// Per-document outcome of a batch extraction.
#[derive(Debug)]
pub struct ExtractionReport {
    pub sets: Vec<ConceptSet>,
    /// `(doc_id, error message)` for every skipped document.
    pub skipped: Vec<(String, String)>,
}

/// Extracts every document with the backend's concurrency bound. Documents
/// that fail are skipped and logged; order follows the input.
pub fn extract_all(docs: &[Document], backend: &dyn ChatBackend, opts: &ExtractOptions) -> ExtractionReport {
    let results = bounded_map(docs, backend.max_concurrency(), |d| extract_concepts(d, backend, opts));
    let mut report = ExtractionReport { sets: Vec::new(), skipped: Vec::new() };
    for (d, r) in docs.iter().zip(results) {
        match r {
            Ok(s) => report.sets.push(s),
            Err(e) => {
                log::warn!("concept extraction skipped {}: {e}", d.id);
                report.skipped.push((d.id.clone(), e.to_string()));
            }
        }
    }
    report
}
