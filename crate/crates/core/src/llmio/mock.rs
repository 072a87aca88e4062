use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ChatBackend, ChatRequest};
use crate::concept::{serialize_concept_output, ConceptFields, SchoolLevel};
use crate::error::{Error, Result};
use crate::hashing::hash_fields;
use crate::prompts::{detect_family, parse_concept_list, PromptFamily};

/// Offline backend. The response is a pure function of the request fields
/// and the seed, shaped to whatever prompt family the request came from.
#[derive(Debug, Clone)]
pub struct MockBackend {
    seed: u64,
    concurrency: usize,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        MockBackend { seed, concurrency: 8 }
    }

    fn rng_for(&self, req: &ChatRequest) -> ChaCha8Rng {
        let h = hash_fields(
            [
                req.system.as_deref().unwrap_or("").as_bytes(),
                req.user.as_bytes(),
                &req.temperature.to_bits().to_le_bytes(),
                &req.max_tokens.to_le_bytes(),
                req.model.as_bytes(),
            ],
            self.seed,
        );
        ChaCha8Rng::seed_from_u64(h)
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, req: &ChatRequest) -> Result<String> {
        req.validate()?;
        let (family, slots) = detect_family(&req.user).ok_or(Error::UnknownPrompt)?;
        let mut rng = self.rng_for(req);
        let text = slots.get("text").map(String::as_str).unwrap_or("");
        Ok(match family {
            PromptFamily::Concepts => concepts(text, &mut rng),
            PromptFamily::Level1 => level1(text, &mut rng),
            PromptFamily::Level2 => grounded_questions(text, &slots["concept"], 5, &mut rng),
            PromptFamily::Level3 => grounded_questions(text, &slots["concept"], 3, &mut rng),
            PromptFamily::Rating => rating(text, &mut rng),
            PromptFamily::Answer => answer(text, &mut rng),
        })
    }

    fn max_concurrency(&self) -> usize {
        self.concurrency
    }
}

const STOPWORDS: &[&str] = &[
    "about", "above", "after", "again", "also", "another", "because", "been", "before", "being",
    "between", "both", "could", "does", "each", "every", "from", "have", "having", "here", "into",
    "just", "like", "make", "many", "more", "most", "much", "must", "only", "other", "over",
    "same", "should", "some", "such", "than", "that", "their", "them", "then", "there", "these",
    "they", "this", "those", "through", "under", "until", "very", "were", "what", "when", "where",
    "which", "while", "will", "with", "within", "would", "your",
];

fn content_words(text: &str) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    text.split(|c: char| !c.is_alphanumeric())
        .map(str::to_lowercase)
        .filter(|w| w.chars().count() >= 4 && w.chars().all(char::is_alphabetic))
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
        .filter(|w| seen.insert(w.clone()))
        .collect()
}

fn title(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn pick<'a, R: Rng>(words: &'a [String], rng: &mut R) -> &'a str {
    words.choose(rng).map(String::as_str).unwrap_or("quantity")
}

fn concepts(text: &str, rng: &mut ChaCha8Rng) -> String {
    let mut words = content_words(text);
    if words.is_empty() {
        words.push("arithmetic".into());
    }
    let n_topics = rng.gen_range(1..=3usize).min(words.len());
    let topic_words: Vec<&String> = words.choose_multiple(rng, n_topics).collect();
    let topics: Vec<String> = topic_words.iter().map(|w| title(w)).collect();
    let mut key_concepts = indexmap::IndexMap::new();
    for (t, tw) in topics.iter().zip(&topic_words) {
        let mut kcs: Vec<String> = Vec::new();
        for _ in 0..5 {
            let other = pick(&words, rng);
            let kc = if other == tw.as_str() {
                format!("Properties of {tw}")
            } else {
                format!("{} and {other}", title(tw))
            };
            if !kcs.contains(&kc) {
                kcs.push(kc);
            }
        }
        key_concepts.insert(t.clone(), kcs);
    }
    let levels = [
        SchoolLevel::MiddleSchool,
        SchoolLevel::HighSchool,
        SchoolLevel::College,
        SchoolLevel::GradSchool,
    ];
    let fields = ConceptFields {
        level: *levels.choose(rng).unwrap(),
        subject: title(&words[0]),
        topics,
        key_concepts,
    };
    serialize_concept_output(&fields)
}

fn question_text<R: Rng>(concepts: &[&str], words: &[String], rng: &mut R) -> String {
    let a = rng.gen_range(2..500);
    let b = rng.gen_range(2..90);
    let w1 = pick(words, rng);
    let w2 = pick(words, rng);
    let w3 = pick(words, rng);
    let joined = concepts.join(" together with ");
    match rng.gen_range(0..4) {
        0 => format!(
            "Using {joined}, a {w1} of size {a} is split by a {w2} ratio of {b}:1. Determine the exact {w3} that results."
        ),
        1 => format!(
            "Suppose a {w1} satisfies f({a}) = {b}. Applying {joined}, compute the value of the {w2} at x = {} and justify each {w3} step.",
            a + b
        ),
        2 => format!(
            "A {w1} grows from {b} to {a} units. With {joined} in mind, find the {w2} rate, then estimate the {w3} to three decimals."
        ),
        _ => format!(
            "Show how {joined} apply when {a} {w1} items form {b} groups; what is the largest possible {w2} per {w3}?"
        ),
    }
}

fn level1(text: &str, rng: &mut ChaCha8Rng) -> String {
    let words = content_words(text);
    if words.len() < 3 {
        return "NOT SUITABLE for creating questions.".into();
    }
    let levels = ["<middle_school>", "<high_school>", "<college>", "<competition>"];
    let mut out = String::new();
    for i in 1..=5 {
        let tag = if rng.gen_bool(0.4) { "<original_question>" } else { "<newly_created>" };
        let picked: Vec<&str> = words.choose_multiple(rng, 2).map(String::as_str).collect();
        let q = question_text(&picked, &words, rng);
        out.push_str(&format!(
            "<Q{i}>\nQuestion: {q}\nOrig_tag:{tag}\nLevel:{}\n</Q{i}>\n",
            levels.choose(rng).unwrap()
        ));
    }
    out
}

fn grounded_questions(text: &str, concept_list: &str, n: usize, rng: &mut ChaCha8Rng) -> String {
    let offered = parse_concept_list(concept_list);
    let words = content_words(text);
    let mut out = String::new();
    for i in 1..=n {
        let k = rng.gen_range(2..=3usize).min(offered.len());
        let chosen: Vec<&str> = offered.choose_multiple(rng, k).map(String::as_str).collect();
        let q = question_text(&chosen, &words, rng);
        out.push_str(&format!(
            "<Q{i}>\nSelected Concepts: [{}]\nQuestion: {q}\n</Q{i}>\n",
            chosen.join(", ")
        ));
    }
    out
}

const MATH_WORDS: &[&str] = &[
    "equation", "theorem", "integral", "derivative", "function", "prove", "proof", "solve",
    "polynomial", "matrix", "probability", "angle", "triangle", "algebra", "geometry", "calculus",
    "vector", "limit", "series", "sum", "number", "prime", "fraction", "variable", "graph",
];

fn rating(text: &str, rng: &mut ChaCha8Rng) -> String {
    let words: Vec<&str> = text.split_whitespace().collect();
    let mathy = words
        .iter()
        .filter(|w| {
            let lw = w.to_lowercase();
            w.chars().any(|c| c.is_ascii_digit() || "=+^\\/*<>".contains(c))
                || MATH_WORDS.iter().any(|m| lw.trim_matches(|c: char| !c.is_alphanumeric()) == *m)
        })
        .count();
    let frac = mathy as f64 / words.len().max(1) as f64;
    let base = 1.0 + (frac * 30.0).round();
    let score = (base as i64 + rng.gen_range(-1..=1)).clamp(1, 10);
    format!("<score>{score}</score>")
}

fn answer(question: &str, rng: &mut ChaCha8Rng) -> String {
    let nums: Vec<i64> = question
        .split(|c: char| !c.is_ascii_digit())
        .filter_map(|s| s.parse().ok())
        .collect();
    let total: i64 = nums.iter().sum::<i64>() + rng.gen_range(0..10);
    format!(
        "We identify the given quantities: {:?}.\nStep 1: combine them according to the conditions of the problem.\nStep 2: simplify the resulting expression.\nTherefore the answer is \\boxed{{{total}}}.",
        nums
    )
}
