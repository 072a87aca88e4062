//! Two-stage domain filtering.
//!
//! A cold-start binary forest separates synthetic positives from random
//! corpus negatives and yields the iteration-0 reference set. Each refinement
//! iteration has an LLM judge rate the previous set plus a random extra
//! sample on a 1–10 scale, trains a regression forest on those ratings,
//! scores the whole corpus and keeps documents scoring strictly above the
//! threshold.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::OnceLock;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_jsonl, Corpus};
use crate::embed::EmbeddingVector;
use crate::error::{Error, Result};
use crate::forest::{train_forest, Forest, ForestParams, LabeledExample, Task};
use crate::hashing::derive_seed;
use crate::llmio::{complete_batch, ChatBackend, ChatRequest};
use crate::prompts::PromptFamily;

pub const DEFAULT_THRESHOLD: f64 = 6.5;
pub const DEFAULT_ACCEPT_PROB: f64 = 0.5;

/// Documents retained after a filtering iteration. `scores` is absent for
/// the cold-start set; afterwards every stored score exceeds the threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSet {
    pub iteration: u32,
    pub doc_ids: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<BTreeMap<String, f64>>,
}

impl ReferenceSet {
    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// One line of `scores.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub doc_id: String,
    pub score: f64,
    pub iteration: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColdStartConfig {
    pub neg_sample_size: usize,
    pub accept_prob: f64,
    pub forest: ForestParams,
    pub seed: u64,
}

impl Default for ColdStartConfig {
    fn default() -> Self {
        ColdStartConfig {
            neg_sample_size: 1000,
            accept_prob: DEFAULT_ACCEPT_PROB,
            forest: ForestParams::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub extra_sample_size: usize,
    pub threshold: f64,
    pub domain: String,
    pub judge_model: String,
    pub judge_temperature: f64,
    /// Extra judge calls for a document whose rating does not parse.
    pub judge_retries: usize,
    pub forest: ForestParams,
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            extra_sample_size: 1000,
            threshold: DEFAULT_THRESHOLD,
            domain: "mathematics".into(),
            judge_model: "judge".into(),
            judge_temperature: 0.0,
            judge_retries: 2,
            forest: ForestParams::default(),
            seed: 0,
        }
    }
}

fn check_aligned(corpus: &Corpus, vectors: &[EmbeddingVector]) -> Result<()> {
    if corpus.len() != vectors.len() {
        return Err(Error::Argument(format!(
            "{} embeddings for a corpus of {} documents",
            vectors.len(),
            corpus.len()
        )));
    }
    Ok(())
}

fn score_corpus(forest: &Forest, vectors: &[EmbeddingVector]) -> Result<Vec<f64>> {
    vectors.par_iter().map(|v| forest.predict(v)).collect()
}

#[derive(Debug, Clone)]
pub struct ColdStartOutcome {
    pub reference: ReferenceSet,
    /// Positive-class probability of every corpus document, in corpus order.
    pub probs: Vec<f64>,
    pub forest: Forest,
}

/// Trains the cold-start classifier on `positives` (label 1) against
/// `neg_sample_size` uniformly sampled corpus documents (label 0) and keeps
/// every corpus document with predicted probability ≥ `accept_prob`.
/// `corpus_vectors` must be aligned with the corpus order.
pub fn cold_start_filter(
    corpus: &Corpus,
    corpus_vectors: &[EmbeddingVector],
    positives: &[EmbeddingVector],
    cfg: &ColdStartConfig,
) -> Result<ColdStartOutcome> {
    check_aligned(corpus, corpus_vectors)?;
    if positives.is_empty() {
        return Err(Error::Argument("no positive examples".into()));
    }
    if !(0.0..=1.0).contains(&cfg.accept_prob) {
        return Err(Error::Argument(format!("accept_prob must be in [0, 1], got {}", cfg.accept_prob)));
    }
    if cfg.neg_sample_size == 0 || cfg.neg_sample_size >= corpus.len() {
        return Err(Error::Argument(format!(
            "neg_sample_size must be in 1..{}, got {}",
            corpus.len(),
            cfg.neg_sample_size
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0]));
    let mut negatives = sample(&mut rng, corpus.len(), cfg.neg_sample_size).into_vec();
    negatives.sort_unstable();

    let examples: Vec<LabeledExample> = positives
        .iter()
        .map(|v| LabeledExample { embedding: v.clone(), label: 1.0 })
        .chain(negatives.iter().map(|&i| LabeledExample { embedding: corpus_vectors[i].clone(), label: 0.0 }))
        .collect();
    let params = ForestParams { seed: derive_seed(cfg.seed, &[0, 1]), ..cfg.forest };
    let forest = train_forest(&examples, Task::Binary, &params)?;

    let probs = score_corpus(&forest, corpus_vectors)?;
    let doc_ids = corpus
        .iter()
        .zip(&probs)
        .filter(|(_, &p)| p >= cfg.accept_prob)
        .map(|(d, _)| d.id.clone())
        .collect();
    Ok(ColdStartOutcome { reference: ReferenceSet { iteration: 0, doc_ids, scores: None }, probs, forest })
}

fn score_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*<score>\s*(\d{1,2})\s*</score>\s*$").unwrap())
}

/// Reads a `<score>N</score>` judge reply; only integers 1–10 are accepted.
pub fn parse_rating(raw: &str) -> Option<u8> {
    let n: u8 = score_regex().captures(raw)?[1].parse().ok()?;
    (1..=10).contains(&n).then_some(n)
}

/// Rates each text, re-asking up to `retries` more times when a reply does
/// not parse. Unrated texts come back as `None`.
pub fn judge_ratings(
    texts: &[&str],
    judge: &dyn ChatBackend,
    cfg: &RefineConfig,
) -> Vec<Option<u8>> {
    let template = PromptFamily::Rating.template();
    let reqs: Vec<ChatRequest> = texts
        .iter()
        .map(|t| {
            let prompt = template.render(&[("domain", &cfg.domain), ("text", t)]);
            ChatRequest::new(prompt, cfg.judge_temperature, cfg.judge_model.clone())
        })
        .collect();
    let mut out = vec![None; texts.len()];
    let mut pending: Vec<usize> = (0..texts.len()).collect();
    for _ in 0..=cfg.judge_retries {
        if pending.is_empty() {
            break;
        }
        let batch: Vec<ChatRequest> = pending.iter().map(|&i| reqs[i].clone()).collect();
        let mut still = Vec::new();
        for (k, r) in complete_batch(judge, &batch) {
            let i = pending[k];
            match r.as_deref().map(parse_rating) {
                Ok(Some(n)) => out[i] = Some(n),
                Ok(None) => still.push(i),
                Err(e) => {
                    log::warn!("judge call failed: {e}");
                    still.push(i);
                }
            }
        }
        pending = still;
    }
    out
}

/// Result of one refinement iteration.
#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub reference: ReferenceSet,
    /// Forest score of every corpus document, in corpus order.
    pub corpus_scores: Vec<f64>,
    /// Documents the judge could not rate.
    pub skipped: Vec<String>,
    pub forest: Forest,
}

impl RefineOutcome {
    pub fn score_records(&self, corpus: &Corpus) -> Vec<ScoreRecord> {
        corpus
            .iter()
            .zip(&self.corpus_scores)
            .map(|(d, &score)| ScoreRecord { doc_id: d.id.clone(), score, iteration: self.reference.iteration })
            .collect()
    }

    pub fn write_scores(&self, corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
        write_jsonl(path, &self.score_records(corpus))
    }

    pub fn mean_score(&self) -> f64 {
        self.corpus_scores.iter().sum::<f64>() / self.corpus_scores.len().max(1) as f64
    }
}

/// Reference set of the documents whose score is strictly above `threshold`.
pub fn retain_above(corpus: &Corpus, scores: &[f64], threshold: f64, iteration: u32) -> ReferenceSet {
    let kept: BTreeMap<String, f64> = corpus
        .iter()
        .zip(scores)
        .filter(|(_, &s)| s > threshold)
        .map(|(d, &s)| (d.id.clone(), s))
        .collect();
    ReferenceSet {
        iteration,
        doc_ids: kept.keys().cloned().collect(),
        scores: Some(kept),
    }
}

/// One fine-grained iteration: judge `prev ∪ sample`, fit a regression
/// forest to the ratings, score the corpus and keep scores `> threshold`.
pub fn refine_iteration(
    corpus: &Corpus,
    corpus_vectors: &[EmbeddingVector],
    prev: &ReferenceSet,
    judge: &dyn ChatBackend,
    cfg: &RefineConfig,
) -> Result<RefineOutcome> {
    check_aligned(corpus, corpus_vectors)?;
    if prev.is_empty() {
        return Err(Error::Argument("previous reference set is empty".into()));
    }
    let iteration = prev.iteration + 1;

    let mut chosen = BTreeSet::new();
    for id in &prev.doc_ids {
        let pos = corpus
            .position(id)
            .ok_or_else(|| Error::Integrity(format!("reference document {id} is not in the corpus")))?;
        chosen.insert(pos);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[iteration as u64]));
    let extra = cfg.extra_sample_size.min(corpus.len());
    chosen.extend(sample(&mut rng, corpus.len(), extra));
    let chosen: Vec<usize> = chosen.into_iter().collect();

    let texts: Vec<&str> = chosen.iter().map(|&i| corpus.docs()[i].text.as_str()).collect();
    let ratings = judge_ratings(&texts, judge, cfg);
    let mut examples = Vec::new();
    let mut skipped = Vec::new();
    for (&i, r) in chosen.iter().zip(&ratings) {
        match r {
            Some(n) => examples.push(LabeledExample { embedding: corpus_vectors[i].clone(), label: *n as f64 }),
            None => {
                let id = &corpus.docs()[i].id;
                log::warn!("judge rating for {id} did not parse; document skipped");
                skipped.push(id.clone());
            }
        }
    }
    if examples.is_empty() {
        return Err(Error::Pipeline(format!("iteration {iteration}: no document could be rated")));
    }

    let params = ForestParams { seed: derive_seed(cfg.seed, &[iteration as u64, 1]), ..cfg.forest };
    let forest = train_forest(&examples, Task::Regression, &params)?;
    let corpus_scores = score_corpus(&forest, corpus_vectors)?;

    let reference = retain_above(corpus, &corpus_scores, cfg.threshold, iteration);
    if reference.is_empty() {
        log::warn!("iteration {iteration}: no document scored above {}", cfg.threshold);
    }
    Ok(RefineOutcome { reference, corpus_scores, skipped, forest })
}
