//! Question generation at three levels, answer generation, and the
//! post-processing passes (dedup, benchmark decontamination).
//!
//! * Level 1 asks for questions straight from a document.
//! * Level 2 recombines the document's own extracted concepts.
//! * Level 3 uses a concept set sampled from the global graph, grounded in
//!   its most similar documents.

mod dedup;
pub mod parse;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::concept::{ConceptSet, SchoolLevel};
use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::graph::SampledConceptSet;
use crate::hashing::hash_fields;
use crate::llmio::{bounded_map, ChatBackend, ChatRequest, ANSWER_TEMPERATURE, QUESTION_TEMPERATURE};
use crate::prompts::{render_flat_concepts, render_nested_concepts, PromptFamily};

pub use dedup::{decontaminate, dedup, dedup_with, shingles, DECONTAM_N, NEAR_DUP_THRESHOLD, SHINGLE_SIZE};
pub use parse::OriginTag;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub qid: String,
    pub text: String,
    pub gen_level: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin_tag: Option<OriginTag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub school_level: Option<SchoolLevel>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub selected_concepts: Vec<String>,
    pub source_doc_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub walk_id: Option<String>,
}

impl QuestionRecord {
    /// A record with only identity, text and level set.
    pub fn bare(qid: &str, text: &str, gen_level: u8) -> Self {
        QuestionRecord {
            qid: qid.to_string(),
            text: text.to_string(),
            gen_level,
            origin_tag: None,
            school_level: None,
            selected_concepts: Vec::new(),
            source_doc_ids: Vec::new(),
            walk_id: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAPair {
    pub qid: String,
    pub question: String,
    pub answer: String,
    pub answer_model: String,
}

/// Stable question id from level, provenance and block position.
pub fn make_qid(level: u8, provenance: &[&str], block: usize) -> String {
    let level_s = level.to_string();
    let block_s = block.to_string();
    let fields = std::iter::once(level_s.as_str())
        .chain(provenance.iter().copied())
        .chain(std::iter::once(block_s.as_str()));
    format!("q{level}-{:016x}", hash_fields(fields, 0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenOptions {
    pub model: String,
    pub temperature: f64,
    pub level1_quota: usize,
    pub level2_quota: usize,
    pub level3_quota: usize,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions {
            model: "mock".into(),
            temperature: QUESTION_TEMPERATURE,
            level1_quota: 5,
            level2_quota: 5,
            level3_quota: 3,
        }
    }
}

fn truncate<T>(mut v: Vec<T>, quota: usize, what: &str) -> Vec<T> {
    if v.len() > quota {
        log::warn!("{what}: {} questions returned, keeping the first {quota}", v.len());
        v.truncate(quota);
    }
    v
}

pub fn gen_level1(doc: &Document, backend: &dyn ChatBackend, opts: &GenOptions) -> Result<Vec<QuestionRecord>> {
    doc.validate()?;
    let prompt = PromptFamily::Level1.template().render(&[("text", &doc.text)]);
    let raw = backend.complete(&ChatRequest::new(prompt, opts.temperature, opts.model.clone()))?;
    let blocks = truncate(parse::parse_level1(&raw)?, opts.level1_quota, &doc.id);
    Ok(blocks
        .into_iter()
        .map(|b| QuestionRecord {
            qid: make_qid(1, &[&doc.id], b.index),
            text: b.question,
            gen_level: 1,
            origin_tag: Some(b.origin),
            school_level: b.level,
            selected_concepts: Vec::new(),
            source_doc_ids: vec![doc.id.clone()],
            walk_id: None,
        })
        .collect())
}

/// Concepts offered to the Level-2 prompt: the document's topics followed by
/// all its key concepts.
pub fn offered_concepts(set: &ConceptSet) -> Vec<String> {
    crate::prompts::parse_concept_list(&nested_list(set))
}

fn nested_list(set: &ConceptSet) -> String {
    let groups: Vec<(String, Vec<String>)> = set
        .topics
        .iter()
        .map(|t| (t.clone(), set.key_concepts.get(t).cloned().unwrap_or_default()))
        .collect();
    render_nested_concepts(&groups)
}

pub fn gen_level2(doc: &Document, set: &ConceptSet, backend: &dyn ChatBackend, opts: &GenOptions) -> Result<Vec<QuestionRecord>> {
    if set.doc_id != doc.id {
        return Err(Error::Argument(format!("concept set for {} paired with document {}", set.doc_id, doc.id)));
    }
    if set.topics.is_empty() {
        return Err(Error::Argument(format!("concept set for {} has no topics", doc.id)));
    }
    doc.validate()?;
    let list = nested_list(set);
    let offered = crate::prompts::parse_concept_list(&list);
    let prompt = PromptFamily::Level2.template().render(&[("text", &doc.text), ("concept", &list)]);
    let raw = backend.complete(&ChatRequest::new(prompt, opts.temperature, opts.model.clone()))?;
    let blocks = truncate(parse::parse_concept_blocks(&raw, &offered)?, opts.level2_quota, &doc.id);
    Ok(blocks
        .into_iter()
        .map(|b| QuestionRecord {
            qid: make_qid(2, &[&doc.id], b.index),
            text: b.question,
            gen_level: 2,
            origin_tag: None,
            school_level: None,
            selected_concepts: b.concepts,
            source_doc_ids: vec![doc.id.clone()],
            walk_id: None,
        })
        .collect())
}

/// Joins grounding documents into the single article slot of the Level-3
/// prompt.
fn join_references(docs: &[&Document]) -> String {
    docs.iter()
        .enumerate()
        .map(|(i, d)| format!("Reference {}:\n{}", i + 1, d.text))
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn gen_level3(
    kg: &SampledConceptSet,
    grounding: &[&Document],
    backend: &dyn ChatBackend,
    opts: &GenOptions,
) -> Result<Vec<QuestionRecord>> {
    if grounding.is_empty() {
        return Err(Error::Argument(format!("walk {} has no grounding documents", kg.walk_id)));
    }
    let list = render_flat_concepts(&kg.topics, &kg.key_concepts);
    let offered = crate::prompts::parse_concept_list(&list);
    let prompt = PromptFamily::Level3
        .template()
        .render(&[("text", &join_references(grounding)), ("concept", &list)]);
    let raw = backend.complete(&ChatRequest::new(prompt, opts.temperature, opts.model.clone()))?;
    let blocks = truncate(parse::parse_concept_blocks(&raw, &offered)?, opts.level3_quota, &kg.walk_id);
    let ids: Vec<String> = grounding.iter().map(|d| d.id.clone()).collect();
    Ok(blocks
        .into_iter()
        .map(|b| QuestionRecord {
            qid: make_qid(3, &[&kg.walk_id], b.index),
            text: b.question,
            gen_level: 3,
            origin_tag: None,
            school_level: None,
            selected_concepts: b.concepts,
            source_doc_ids: ids.clone(),
            walk_id: Some(kg.walk_id.clone()),
        })
        .collect())
}

/// Questions from a batch of generation calls plus the items that failed.
#[derive(Debug, Default)]
pub struct GenReport {
    pub questions: Vec<QuestionRecord>,
    /// `(document or walk id, error message)`.
    pub failures: Vec<(String, String)>,
}

impl GenReport {
    fn collect(items: impl IntoIterator<Item = (String, Result<Vec<QuestionRecord>>)>) -> Self {
        let mut r = GenReport::default();
        for (id, res) in items {
            match res {
                Ok(qs) => r.questions.extend(qs),
                Err(e) => {
                    log::warn!("question generation failed for {id}: {e}");
                    r.failures.push((id, e.to_string()));
                }
            }
        }
        r
    }
}

pub fn gen_level1_all(docs: &[Document], backend: &dyn ChatBackend, opts: &GenOptions) -> GenReport {
    let res = bounded_map(docs, backend.max_concurrency(), |d| gen_level1(d, backend, opts));
    GenReport::collect(docs.iter().map(|d| d.id.clone()).zip(res))
}

/// Level-2 for every concept set whose document is present.
pub fn gen_level2_all(
    pairs: &[(&Document, &ConceptSet)],
    backend: &dyn ChatBackend,
    opts: &GenOptions,
) -> GenReport {
    let res = bounded_map(pairs, backend.max_concurrency(), |(d, s)| gen_level2(d, s, backend, opts));
    GenReport::collect(pairs.iter().map(|(d, _)| d.id.clone()).zip(res))
}

pub fn gen_level3_all(
    items: &[(SampledConceptSet, Vec<&Document>)],
    backend: &dyn ChatBackend,
    opts: &GenOptions,
) -> GenReport {
    let res = bounded_map(items, backend.max_concurrency(), |(kg, docs)| gen_level3(kg, docs, backend, opts));
    GenReport::collect(items.iter().map(|(kg, _)| kg.walk_id.clone()).zip(res))
}

#[derive(Debug, Default)]
pub struct AnswerReport {
    pub pairs: Vec<QAPair>,
    /// `(qid, error message)`.
    pub failures: Vec<(String, String)>,
}

/// One answer request per question at temperature 0.
pub fn gen_answers(questions: &[QuestionRecord], backend: &dyn ChatBackend, model: &str) -> Result<AnswerReport> {
    if questions.is_empty() {
        return Err(Error::Argument("no questions to answer".into()));
    }
    let mut seen = HashSet::new();
    for q in questions {
        if !seen.insert(q.qid.as_str()) {
            return Err(Error::Argument(format!("duplicate qid {}", q.qid)));
        }
    }
    let reqs: Vec<ChatRequest> = questions
        .iter()
        .map(|q| {
            let prompt = PromptFamily::Answer.template().render(&[("text", &q.text)]);
            ChatRequest::new(prompt, ANSWER_TEMPERATURE, model)
        })
        .collect();
    let results = crate::llmio::complete_batch(backend, &reqs);
    let mut report = AnswerReport::default();
    for (q, (_, r)) in questions.iter().zip(results) {
        match r {
            Ok(a) if !a.trim().is_empty() => report.pairs.push(QAPair {
                qid: q.qid.clone(),
                question: q.text.clone(),
                answer: a,
                answer_model: model.to_string(),
            }),
            Ok(_) => report.failures.push((q.qid.clone(), "empty answer".into())),
            Err(e) => {
                log::warn!("answer generation failed for {}: {e}", q.qid);
                report.failures.push((q.qid.clone(), e.to_string()));
            }
        }
    }
    Ok(report)
}
