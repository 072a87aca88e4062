use std::collections::{HashMap, HashSet};

use super::QuestionRecord;
use crate::corpus::{normalize_text, BenchmarkSet};
use crate::error::{Error, Result};

pub const NEAR_DUP_THRESHOLD: f64 = 0.8;
pub const SHINGLE_SIZE: usize = 3;
pub const DECONTAM_N: usize = 8;

/// Word `n`-grams of normalized text. Texts shorter than `n` words yield a
/// single shingle of all their words.
pub fn shingles(text: &str, n: usize) -> HashSet<String> {
    let norm = normalize_text(text);
    let words: Vec<&str> = norm.split(' ').filter(|w| !w.is_empty()).collect();
    if words.is_empty() {
        return HashSet::new();
    }
    if words.len() < n {
        return std::iter::once(words.join(" ")).collect();
    }
    words.windows(n).map(|w| w.join(" ")).collect()
}

/// Removes exact duplicates (after normalization), then near-duplicates:
/// for every pair whose shingle sets have Jaccard ≥ `threshold`, the record
/// with the larger qid is dropped. Survivors keep input order.
pub fn dedup_with(questions: &[QuestionRecord], threshold: f64, n: usize) -> Vec<QuestionRecord> {
    let mut drop = vec![false; questions.len()];

    let mut by_text: HashMap<String, usize> = HashMap::new();
    for (i, q) in questions.iter().enumerate() {
        let key = normalize_text(&q.text);
        match by_text.get(&key) {
            Some(&j) if questions[j].qid <= q.qid => drop[i] = true,
            Some(&j) => {
                drop[j] = true;
                by_text.insert(key, i);
            }
            None => {
                by_text.insert(key, i);
            }
        }
    }

    let live: Vec<usize> = (0..questions.len()).filter(|&i| !drop[i]).collect();
    let sets: Vec<HashSet<String>> = live.iter().map(|&i| shingles(&questions[i].text, n)).collect();
    let mut postings: HashMap<&str, Vec<usize>> = HashMap::new();
    for (a, s) in sets.iter().enumerate() {
        for sh in s {
            postings.entry(sh.as_str()).or_default().push(a);
        }
    }
    for (a, s) in sets.iter().enumerate() {
        let mut inter: HashMap<usize, usize> = HashMap::new();
        for sh in s {
            for &b in &postings[sh.as_str()] {
                if b > a {
                    *inter.entry(b).or_insert(0) += 1;
                }
            }
        }
        for (b, k) in inter {
            let union = s.len() + sets[b].len() - k;
            if k as f64 / union as f64 >= threshold {
                let (qa, qb) = (&questions[live[a]], &questions[live[b]]);
                let later = if qa.qid > qb.qid { live[a] } else { live[b] };
                drop[later] = true;
            }
        }
    }

    questions
        .iter()
        .zip(drop)
        .filter(|(_, d)| !d)
        .map(|(q, _)| q.clone())
        .collect()
}

pub fn dedup(questions: &[QuestionRecord]) -> Vec<QuestionRecord> {
    dedup_with(questions, NEAR_DUP_THRESHOLD, SHINGLE_SIZE)
}

fn ngrams(text: &str, n: usize) -> Vec<String> {
    let norm = normalize_text(text);
    let words: Vec<&str> = norm.split(' ').filter(|w| !w.is_empty()).collect();
    words.windows(n).map(|w| w.join(" ")).collect()
}

/// Drops every question sharing a word `n`-gram with any benchmark item.
pub fn decontaminate(questions: &[QuestionRecord], benchmarks: &[BenchmarkSet], n: usize) -> Result<Vec<QuestionRecord>> {
    if n < 3 {
        return Err(Error::Argument(format!("decontamination n must be at least 3, got {n}")));
    }
    let banned: HashSet<String> = benchmarks
        .iter()
        .flat_map(|b| &b.questions)
        .flat_map(|q| ngrams(q, n))
        .collect();
    Ok(questions
        .iter()
        .filter(|q| {
            let hit = ngrams(&q.text, n).iter().any(|g| banned.contains(g));
            if hit {
                log::debug!("question {} overlaps a benchmark item", q.qid);
            }
            !hit
        })
        .cloned()
        .collect())
}
