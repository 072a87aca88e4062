//! Readers for the `<Qn>…</Qn>` question blocks returned by the generators.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::concept::{canonical_key, SchoolLevel};
use crate::error::{Error, Result};

pub const REFUSAL: &str = "NOT SUITABLE for creating questions";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OriginTag {
    OriginalQuestion,
    NewlyCreated,
}

impl OriginTag {
    fn from_text(s: &str) -> Option<OriginTag> {
        match s.trim().trim_matches(|c| c == '<' || c == '>').trim() {
            "original_question" => Some(OriginTag::OriginalQuestion),
            "newly_created" => Some(OriginTag::NewlyCreated),
            _ => None,
        }
    }
}

/// One block of a Level-1 response.
#[derive(Debug, Clone, PartialEq)]
pub struct Level1Block {
    /// Position of the block in the response, counting skipped blocks.
    pub index: usize,
    pub question: String,
    pub origin: OriginTag,
    pub level: Option<SchoolLevel>,
}

/// One block of a Level-2 or Level-3 response.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptBlock {
    pub index: usize,
    pub question: String,
    /// Display forms taken from the offered list.
    pub concepts: Vec<String>,
}

fn block_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?s)<Q(\d+)>(.*?)</Q(\d+)>").unwrap())
}

/// Bodies of well-formed blocks in response order. Blocks whose closing tag
/// does not match the opening number are skipped.
pub fn split_blocks(raw: &str) -> Vec<String> {
    block_regex()
        .captures_iter(raw)
        .filter_map(|c| {
            if c[1] == c[3] {
                Some(c[2].to_string())
            } else {
                log::warn!("mismatched question block <Q{}>…</Q{}> skipped", &c[1], &c[3]);
                None
            }
        })
        .collect()
}

const FIELDS: [&str; 4] = ["question", "orig_tag", "level", "selected concepts"];

/// Splits a block body into `field: value` pairs. Lines that start no known
/// field continue the previous one.
fn fields(body: &str) -> Vec<(&'static str, String)> {
    let mut out: Vec<(&'static str, String)> = Vec::new();
    for line in body.lines() {
        let trimmed = line.trim();
        let lower = trimmed.to_ascii_lowercase();
        let hit = FIELDS.iter().find(|f| {
            lower.starts_with(*f) && lower[f.len()..].trim_start().starts_with(':')
        });
        match hit {
            Some(&f) => {
                let value = trimmed[f.len()..].trim_start()[1..].trim().to_string();
                out.push((f, value));
            }
            None => {
                if let Some((_, v)) = out.last_mut() {
                    if !trimmed.is_empty() {
                        if !v.is_empty() {
                            v.push('\n');
                        }
                        v.push_str(trimmed);
                    }
                }
            }
        }
    }
    out
}

fn field<'a>(fs: &'a [(&'static str, String)], name: &str) -> Option<&'a str> {
    fs.iter().find(|(f, _)| *f == name).map(|(_, v)| v.as_str())
}

fn is_refusal(raw: &str) -> bool {
    raw.trim().trim_matches('"').trim_end_matches('.').trim() == REFUSAL
}

fn strip_trailing_tag(q: &str) -> (String, Option<OriginTag>) {
    let t = q.trim_end();
    for (tag, origin) in [
        ("<original_question>", OriginTag::OriginalQuestion),
        ("<newly_created>", OriginTag::NewlyCreated),
    ] {
        if let Some(rest) = t.strip_suffix(tag) {
            return (rest.trim_end().to_string(), Some(origin));
        }
    }
    (t.to_string(), None)
}

/// Parses a Level-1 response. The refusal sentence yields an empty list;
/// otherwise at least one block must parse.
pub fn parse_level1(raw: &str) -> Result<Vec<Level1Block>> {
    let blocks = split_blocks(raw);
    if blocks.is_empty() && is_refusal(raw) {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for (index, body) in blocks.iter().enumerate() {
        let fs = fields(body);
        let Some(q) = field(&fs, "question") else {
            log::warn!("level-1 block {} has no Question field", index + 1);
            continue;
        };
        let (question, trailing) = strip_trailing_tag(q);
        let origin = field(&fs, "orig_tag").and_then(OriginTag::from_text).or(trailing);
        let (Some(origin), false) = (origin, question.is_empty()) else {
            log::warn!("level-1 block {} lacks a question or origin tag", index + 1);
            continue;
        };
        let level = field(&fs, "level").map(|l| SchoolLevel::from_text(l.trim_matches(|c| c == '<' || c == '>')));
        out.push(Level1Block { index, question, origin, level });
    }
    if out.is_empty() {
        return Err(Error::QuestionParse("no parsable level-1 question blocks".into()));
    }
    Ok(out)
}

/// Resolves a "Selected Concepts" value against the offered list. Concept
/// names may themselves contain commas, so the comma/semicolon-separated
/// pieces are grouped by dynamic programming until every group names an
/// offered concept. Returns `None` if no grouping works.
pub fn match_concepts(value: &str, offered: &[String]) -> Option<Vec<String>> {
    let v = value.trim().trim_start_matches('[').trim_end_matches(']').trim().trim_end_matches('.');
    if v.is_empty() {
        return None;
    }
    let keys: Vec<String> = offered.iter().map(|o| canonical_key(o)).collect();
    let lookup = |s: &str| -> Option<usize> {
        let k = canonical_key(s.trim().trim_matches(|c| c == '"' || c == '\'' || c == '`'));
        keys.iter().position(|x| *x == k)
    };

    // cut positions: byte offsets of separators
    let cuts: Vec<usize> = v.char_indices().filter(|&(_, c)| c == ',' || c == ';').map(|(i, _)| i).collect();
    let starts: Vec<usize> = std::iter::once(0).chain(cuts.iter().map(|c| c + 1)).collect();
    let ends: Vec<usize> = cuts.iter().copied().chain(std::iter::once(v.len())).collect();
    let n = starts.len();
    // best[i]: a grouping of pieces i.. as (offered index, next piece); the
    // longest group that leads to a full match is preferred
    let mut best: Vec<Option<(usize, usize)>> = vec![None; n + 1];
    let mut ok = vec![false; n + 1];
    ok[n] = true;
    for i in (0..n).rev() {
        for j in (i..n).rev() {
            if !ok[j + 1] {
                continue;
            }
            if let Some(idx) = lookup(&v[starts[i]..ends[j]]) {
                best[i] = Some((idx, j + 1));
                ok[i] = true;
                break;
            }
        }
    }
    if !ok[0] {
        return None;
    }
    let mut out: Vec<String> = Vec::new();
    let mut i = 0;
    while i < n {
        let (idx, next) = best[i]?;
        if !out.contains(&offered[idx]) {
            out.push(offered[idx].clone());
        }
        i = next;
    }
    Some(out)
}

/// Parses a Level-2/3 response against the concept list that was offered.
/// Blocks citing unknown concepts or not 2–3 distinct concepts are dropped.
pub fn parse_concept_blocks(raw: &str, offered: &[String]) -> Result<Vec<ConceptBlock>> {
    let mut out = Vec::new();
    for (index, body) in split_blocks(raw).iter().enumerate() {
        let fs = fields(body);
        let (Some(sel), Some(q)) = (field(&fs, "selected concepts"), field(&fs, "question")) else {
            log::warn!("question block {} is missing a field", index + 1);
            continue;
        };
        let question = q.trim().to_string();
        let Some(concepts) = match_concepts(sel, offered) else {
            log::warn!("question block {} cites a concept outside the offered list: {sel}", index + 1);
            continue;
        };
        if !(2..=3).contains(&concepts.len()) || question.is_empty() {
            log::warn!("question block {} cites {} concepts", index + 1, concepts.len());
            continue;
        }
        out.push(ConceptBlock { index, question, concepts });
    }
    if out.is_empty() {
        return Err(Error::QuestionParse("no parsable question blocks".into()));
    }
    Ok(out)
}
