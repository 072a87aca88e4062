//! Prompt templates with `{{ slot }}` placeholders.
//!
//! Templates are text assets compiled into the binary. A rendered prompt can
//! be matched back against its template to recover the slot values, which is
//! how the mock backend recognises which prompt family it was sent.

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;

use crate::corpus::normalize_text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PromptFamily {
    Level1,
    Level2,
    Level3,
    Concepts,
    Rating,
    Answer,
}

impl PromptFamily {
    pub const ALL: [PromptFamily; 6] = [
        PromptFamily::Level1,
        PromptFamily::Level2,
        PromptFamily::Level3,
        PromptFamily::Concepts,
        PromptFamily::Rating,
        PromptFamily::Answer,
    ];

    pub fn template(self) -> &'static Template {
        static TEMPLATES: OnceLock<HashMap<PromptFamily, Template>> = OnceLock::new();
        &TEMPLATES.get_or_init(|| {
            PromptFamily::ALL
                .iter()
                .map(|&f| (f, Template::parse(f.source())))
                .collect()
        })[&self]
    }

    fn source(self) -> &'static str {
        match self {
            PromptFamily::Level1 => include_str!("../assets/prompts/level1.txt"),
            PromptFamily::Level2 => include_str!("../assets/prompts/level2.txt"),
            PromptFamily::Level3 => include_str!("../assets/prompts/level3.txt"),
            PromptFamily::Concepts => include_str!("../assets/prompts/concepts.txt"),
            PromptFamily::Rating => include_str!("../assets/prompts/rating.txt"),
            PromptFamily::Answer => include_str!("../assets/prompts/answer.txt"),
        }
    }
}

#[derive(Debug, Clone)]
enum Segment {
    Literal(String),
    Slot(String),
}

#[derive(Debug, Clone)]
pub struct Template {
    segments: Vec<Segment>,
}

fn slot_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\{\s*([a-z_]+)\s*\}\}").unwrap())
}

impl Template {
    pub fn parse(source: &str) -> Template {
        let mut segments = Vec::new();
        let mut last = 0;
        for cap in slot_regex().captures_iter(source) {
            let m = cap.get(0).unwrap();
            segments.push(Segment::Literal(source[last..m.start()].to_string()));
            segments.push(Segment::Slot(cap[1].to_string()));
            last = m.end();
        }
        segments.push(Segment::Literal(source[last..].to_string()));
        Template { segments }
    }

    pub fn slots(&self) -> Vec<&str> {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Slot(n) => Some(n.as_str()),
                Segment::Literal(_) => None,
            })
            .collect()
    }

    /// Substitutes every slot. Missing slots render as empty strings.
    pub fn render(&self, values: &[(&str, &str)]) -> String {
        let mut out = String::new();
        for s in &self.segments {
            match s {
                Segment::Literal(l) => out.push_str(l),
                Segment::Slot(name) => {
                    if let Some((_, v)) = values.iter().find(|(k, _)| k == name) {
                        out.push_str(v);
                    }
                }
            }
        }
        out
    }

    /// Inverse of [`render`](Self::render): recovers slot values if `text`
    /// was produced from this template. Slots are matched right to left.
    pub fn extract(&self, text: &str) -> Option<HashMap<String, String>> {
        let Segment::Literal(prefix) = &self.segments[0] else {
            unreachable!("templates start with a literal")
        };
        let mut rest = text.strip_prefix(prefix.as_str())?;
        let mut values = HashMap::new();
        let n = self.segments.len();
        let Segment::Literal(suffix) = &self.segments[n - 1] else {
            unreachable!("templates end with a literal")
        };
        rest = rest.strip_suffix(suffix.as_str())?;
        // segments between prefix and suffix alternate Slot, Literal, ..., Slot
        let middle = &self.segments[1..n - 1];
        let mut i = middle.len();
        while i > 0 {
            i -= 1;
            match &middle[i] {
                Segment::Slot(name) => {
                    if i == 0 {
                        values.insert(name.clone(), rest.to_string());
                        rest = "";
                    } else {
                        let Segment::Literal(sep) = &middle[i - 1] else {
                            return None;
                        };
                        let at = rest.rfind(sep.as_str())?;
                        values.insert(name.clone(), rest[at + sep.len()..].to_string());
                        rest = &rest[..at];
                        i -= 1;
                    }
                }
                Segment::Literal(_) => return None,
            }
        }
        Some(values)
    }
}

/// Identifies which template produced a prompt and returns its slot values.
pub fn detect_family(prompt: &str) -> Option<(PromptFamily, HashMap<String, String>)> {
    PromptFamily::ALL
        .iter()
        .find_map(|&f| f.template().extract(prompt).map(|v| (f, v)))
}

/// Renders a per-document concept set (topics with nested key concepts) for
/// the `{{ concept }}` slot.
pub fn render_nested_concepts(topics: &[(String, Vec<String>)]) -> String {
    let mut out = String::from("Topics:\n");
    for (i, (t, _)) in topics.iter().enumerate() {
        out.push_str(&format!("{}. {}\n", i + 1, t));
    }
    out.push_str("Key Concepts:\n");
    for (i, (t, kcs)) in topics.iter().enumerate() {
        out.push_str(&format!("{}. {}:\n", i + 1, t));
        for (j, kc) in kcs.iter().enumerate() {
            out.push_str(&format!("    {}.{}. {}\n", i + 1, j + 1, kc));
        }
    }
    out.trim_end().to_string()
}

/// Renders a flat topic list and key-concept list (sampled concept sets).
pub fn render_flat_concepts(topics: &[String], kcs: &[String]) -> String {
    let mut out = String::from("Topics:\n");
    for (i, t) in topics.iter().enumerate() {
        out.push_str(&format!("{}. {}\n", i + 1, t));
    }
    out.push_str("Key Concepts:\n");
    for (i, k) in kcs.iter().enumerate() {
        out.push_str(&format!("{}. {}\n", i + 1, k));
    }
    out.trim_end().to_string()
}

/// Reads back every distinct concept from either rendering above, in order
/// of first appearance. Group headers repeat topic names and are folded.
pub fn parse_concept_list(s: &str) -> Vec<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"^\s*\d+(?:\.\d+)*\.?\s+(.+?)\s*$").unwrap());
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for line in s.lines() {
        let Some(c) = re.captures(line) else { continue };
        let mut item = c[1].to_string();
        if item.ends_with(':') {
            item.pop();
        }
        let item = item.trim().to_string();
        if !item.is_empty() && seen.insert(normalize_text(&item)) {
            out.push(item);
        }
    }
    out
}
