//! Stage orchestration behind the command-line tool.
//!
//! Every stage reads its inputs from files and writes its artifact plus a
//! `<stage>.manifest.json` into the output directory, so stages can be run
//! one at a time or chained by [`run_pipeline`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::concept::{extract_all, ConceptSet, ExtractOptions};
use crate::corpus::{load_benchmarks, read_jsonl, write_jsonl, Corpus, Document};
use crate::embed::{embed_batch, EmbedOptions, EmbeddingProvider, EmbeddingVector, MockEmbedder, RemoteEmbedder, DEFAULT_DIM};
use crate::error::{Error, Result};
use crate::filter::{cold_start_filter, refine_iteration, ColdStartConfig, ReferenceSet, RefineConfig, ScoreRecord};
use crate::forest::ForestParams;
use crate::graph::{build_graph, ground_documents, sample_kg, ConceptGraph, SampledConceptSet, WalkConfig, DEFAULT_EPSILON};
use crate::hashing::sha256_hex;
use crate::llmio::{BackendConfig, BackendKind, ChatBackend};
use crate::qagen::{decontaminate, dedup_with, DECONTAM_N, NEAR_DUP_THRESHOLD, SHINGLE_SIZE};
use crate::qagen::{gen_answers, gen_level1_all, gen_level2_all, gen_level3_all, GenOptions, QuestionRecord};
use crate::scaling::{load_points, Fit, FitFile, Form, PointUnits};
use crate::RetryPolicy;

pub const LLM_KEY_ENV: &str = "SYNTHWEAVE_LLM_API_KEY";
pub const EMBED_KEY_ENV: &str = "SYNTHWEAVE_EMBED_API_KEY";

pub const COLDSTART_SCORES: &str = "coldstart_scores.jsonl";
pub const SCORES: &str = "scores.jsonl";
pub const FILTERED: &str = "filtered_documents.jsonl";
pub const CONCEPTS: &str = "concepts.jsonl";
pub const GRAPH: &str = "graph.json";
pub const SAMPLES: &str = "samples.jsonl";
pub const DEDUPED: &str = "questions_dedup.jsonl";
pub const QUESTIONS: &str = "questions.jsonl";
pub const QA: &str = "qa.jsonl";
pub const FIT: &str = "fit.json";
pub const PREDICTION: &str = "prediction.json";
pub const TOKENS_FOR_TARGET: &str = "tokens_for_target.json";

pub fn reference_file(iteration: u32) -> String {
    format!("reference_{iteration}.json")
}

pub fn questions_file(level: u8) -> String {
    format!("questions_l{level}.jsonl")
}

// ---------------------------------------------------------------- config

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub positives: Option<PathBuf>,
    pub benchmarks: Option<PathBuf>,
    pub workdir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    pub kind: BackendKind,
    pub dim: usize,
    pub endpoint: Option<String>,
    pub model: String,
    pub api_key_env: Option<String>,
    pub seed: Option<u64>,
    pub retry: RetryPolicy,
    pub options: EmbedOptions,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            kind: BackendKind::Mock,
            dim: DEFAULT_DIM,
            endpoint: None,
            model: "mock".into(),
            api_key_env: None,
            seed: None,
            retry: RetryPolicy::default(),
            options: EmbedOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Backends {
    pub question: BackendConfig,
    pub answer: BackendConfig,
    pub judge: BackendConfig,
    pub embed: EmbedConfig,
}

impl Default for Backends {
    fn default() -> Self {
        let mock = BackendConfig { seed: None, ..BackendConfig::mock(0) };
        Backends {
            question: mock.clone(),
            answer: mock.clone(),
            judge: mock,
            embed: EmbedConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSettings {
    pub threshold: f64,
    pub iterations: u32,
    pub neg_sample_size: usize,
    pub extra_sample_size: usize,
    pub accept_prob: f64,
    pub domain: String,
    pub judge_retries: usize,
    pub forest: ForestParams,
}

impl Default for FilterSettings {
    fn default() -> Self {
        let r = RefineConfig::default();
        let c = ColdStartConfig::default();
        FilterSettings {
            threshold: r.threshold,
            iterations: 2,
            neg_sample_size: c.neg_sample_size,
            extra_sample_size: r.extra_sample_size,
            accept_prob: c.accept_prob,
            domain: r.domain,
            judge_retries: r.judge_retries,
            forest: ForestParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSettings {
    pub epsilon: f64,
    pub epochs: u32,
    pub topic_steps: Vec<u32>,
    pub kc_steps: Vec<u32>,
    pub ground_k: usize,
}

impl Default for GraphSettings {
    fn default() -> Self {
        let w = WalkConfig::default();
        GraphSettings {
            epsilon: DEFAULT_EPSILON,
            epochs: w.epochs,
            topic_steps: w.topic_steps,
            kc_steps: w.kc_steps,
            ground_k: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSettings {
    pub temperature: f64,
    pub level1_quota: usize,
    pub level2_quota: usize,
    pub level3_quota: usize,
    pub concept_parse_retries: u32,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        let g = GenOptions::default();
        GenerationSettings {
            temperature: g.temperature,
            level1_quota: g.level1_quota,
            level2_quota: g.level2_quota,
            level3_quota: g.level3_quota,
            concept_parse_retries: ExtractOptions::default().parse_retries,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DedupSettings {
    pub near_dup_threshold: f64,
    pub shingle_size: usize,
    pub decontam_n: usize,
}

impl Default for DedupSettings {
    fn default() -> Self {
        DedupSettings {
            near_dup_threshold: NEAR_DUP_THRESHOLD,
            shingle_size: SHINGLE_SIZE,
            decontam_n: DECONTAM_N,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub backends: Backends,
    pub filter: FilterSettings,
    pub graph: GraphSettings,
    pub generation: GenerationSettings,
    pub dedup: DedupSettings,
}

impl PipelineConfig {
    /// Loads a config file. Relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> std::result::Result<Self, RunError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| RunError::Usage(format!("config {}: {e}", path.display())))?;
        let mut cfg = Self::from_value(value)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.paths.corpus, &mut cfg.paths.positives, &mut cfg.paths.benchmarks, &mut cfg.paths.workdir]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn from_value(v: Value) -> std::result::Result<Self, RunError> {
        serde_json::from_value(v).map_err(|e| RunError::Usage(format!("invalid config: {e}")))
    }

    /// Applies dotted-path overrides such as `filter.threshold=7`. Values
    /// are parsed as JSON, falling back to a plain string.
    pub fn with_overrides(&self, overrides: &BTreeMap<String, Value>) -> std::result::Result<Self, RunError> {
        let mut v = serde_json::to_value(self).expect("config serializes");
        for (key, val) in overrides {
            let mut node = &mut v;
            let parts: Vec<&str> = key.split('.').collect();
            for (i, part) in parts.iter().enumerate() {
                let obj = node
                    .as_object_mut()
                    .ok_or_else(|| RunError::Usage(format!("override {key}: {part} is not inside an object")))?;
                if i + 1 == parts.len() {
                    obj.insert(part.to_string(), val.clone());
                    break;
                }
                node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
            }
        }
        Self::from_value(v)
    }

    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    fn chat_backend(&self, b: &BackendConfig) -> Result<Box<dyn ChatBackend>> {
        let mut b = b.clone();
        if b.kind == BackendKind::Mock && b.seed.is_none() {
            b.seed = Some(self.seed);
        }
        if b.kind == BackendKind::Remote && b.api_key_env.is_none() {
            b.api_key_env = Some(LLM_KEY_ENV.into());
        }
        b.build()
    }

    fn embedder(&self) -> Result<Box<dyn EmbeddingProvider>> {
        let e = &self.backends.embed;
        Ok(match e.kind {
            BackendKind::Mock => Box::new(MockEmbedder { dim: e.dim, seed: e.seed.unwrap_or(self.seed) }),
            BackendKind::Remote => {
                let endpoint = e
                    .endpoint
                    .as_deref()
                    .ok_or_else(|| Error::Argument("remote embedding backend needs an endpoint".into()))?;
                let key = std::env::var(e.api_key_env.as_deref().unwrap_or(EMBED_KEY_ENV)).ok();
                Box::new(RemoteEmbedder::new(endpoint, &e.model, key, e.retry))
            }
        })
    }

    fn gen_options(&self) -> GenOptions {
        let g = &self.generation;
        GenOptions {
            model: self.backends.question.model.clone(),
            temperature: g.temperature,
            level1_quota: g.level1_quota,
            level2_quota: g.level2_quota,
            level3_quota: g.level3_quota,
        }
    }
}

// ---------------------------------------------------------------- errors

/// Failure of a command: usage problems exit with 2, stage failures with 1.
#[derive(Debug)]
pub enum RunError {
    Usage(String),
    Failed(Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Usage(_) => 2,
            RunError::Failed(_) => 1,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Usage(m) => write!(f, "usage error: {m}"),
            RunError::Failed(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for RunError {}

pub type RunResult<T> = std::result::Result<T, RunError>;

fn stage_err(stage: &str) -> impl Fn(Error) -> RunError + '_ {
    move |e| RunError::Failed(Error::Stage { stage: stage.to_string(), source: Box::new(e) })
}

// ---------------------------------------------------------------- manifests

/// Run record written next to every stage artifact. Contains no
/// timestamps or absolute paths, so identical reruns are byte-identical.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub seed: u64,
    pub config_hash: String,
    pub overrides: BTreeMap<String, Value>,
    /// Input role → sha256 of the file contents.
    pub inputs: BTreeMap<String, String>,
    /// Output file name → sha256 of the file contents.
    pub outputs: BTreeMap<String, String>,
    pub counts: BTreeMap<String, u64>,
}

fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Resolved settings shared by all stages of one invocation.
pub struct Context {
    pub cfg: PipelineConfig,
    pub out: PathBuf,
    pub overrides: BTreeMap<String, Value>,
}

struct StageRun<'a> {
    ctx: &'a Context,
    manifest: Manifest,
}

impl<'a> StageRun<'a> {
    fn new(ctx: &'a Context, stage: &str) -> Self {
        StageRun {
            ctx,
            manifest: Manifest {
                stage: stage.to_string(),
                seed: ctx.cfg.seed,
                config_hash: ctx.cfg.hash(),
                overrides: ctx.overrides.clone(),
                ..Default::default()
            },
        }
    }

    fn err(&self) -> impl Fn(Error) -> RunError + '_ {
        stage_err(&self.manifest.stage)
    }

    /// Records an input after checking it exists.
    fn input(&mut self, role: &str, path: &Path) -> RunResult<PathBuf> {
        if !path.is_file() {
            return Err(RunError::Usage(format!("{}: missing input {}", self.manifest.stage, path.display())));
        }
        let h = file_hash(path).map_err(self.err())?;
        self.manifest.inputs.insert(role.to_string(), h);
        Ok(path.to_path_buf())
    }

    fn out_path(&self, name: &str) -> PathBuf {
        self.ctx.out.join(name)
    }

    fn output_jsonl<T: Serialize>(&mut self, name: &str, items: &[T]) -> RunResult<()> {
        let p = self.out_path(name);
        write_jsonl(&p, items).map_err(self.err())?;
        self.record_output(name)
    }

    fn output_json<T: Serialize>(&mut self, name: &str, item: &T) -> RunResult<()> {
        let p = self.out_path(name);
        let text = serde_json::to_string_pretty(item).map_err(Error::from).map_err(self.err())? + "\n";
        std::fs::write(&p, text).map_err(Error::from).map_err(self.err())?;
        self.record_output(name)
    }

    fn record_output(&mut self, name: &str) -> RunResult<()> {
        let h = file_hash(&self.out_path(name)).map_err(self.err())?;
        self.manifest.outputs.insert(name.to_string(), h);
        Ok(())
    }

    fn count(&mut self, key: &str, n: usize) {
        self.manifest.counts.insert(key.to_string(), n as u64);
    }

    fn finish(self) -> RunResult<Manifest> {
        let name = format!("{}.manifest.json", self.manifest.stage);
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes") + "\n";
        std::fs::write(self.ctx.out.join(name), text)
            .map_err(Error::from)
            .map_err(stage_err(&self.manifest.stage))?;
        Ok(self.manifest)
    }
}

impl Context {
    pub fn new(cfg: PipelineConfig, out: Option<PathBuf>, overrides: BTreeMap<String, Value>) -> RunResult<Self> {
        let out = out
            .or_else(|| cfg.paths.workdir.clone())
            .unwrap_or_else(|| PathBuf::from("synthweave_out"));
        std::fs::create_dir_all(&out)
            .map_err(|e| RunError::Usage(format!("cannot create output directory {}: {e}", out.display())))?;
        Ok(Context { cfg, out, overrides })
    }

    fn configured(&self, what: &str, p: &Option<PathBuf>) -> RunResult<PathBuf> {
        p.clone().ok_or_else(|| RunError::Usage(format!("config does not set paths.{what}")))
    }

    /// Documents for the generation stages: the filtered set when the filter
    /// has run in this output directory, otherwise the configured corpus.
    fn documents_path(&self, explicit: Option<&Path>) -> RunResult<PathBuf> {
        if let Some(p) = explicit {
            return Ok(p.to_path_buf());
        }
        let filtered = self.out.join(FILTERED);
        if filtered.is_file() {
            return Ok(filtered);
        }
        self.configured("corpus", &self.cfg.paths.corpus)
    }
}

fn embed_docs(ctx: &Context, docs: &[Document]) -> Result<Vec<EmbeddingVector>> {
    let embedder = ctx.cfg.embedder()?;
    embed_batch(docs, embedder.as_ref(), &ctx.cfg.backends.embed.options)
}

// ---------------------------------------------------------------- stages

pub fn filter_coldstart(ctx: &Context) -> RunResult<Manifest> {
    let mut run = StageRun::new(ctx, "filter-coldstart");
    let corpus_path = run.input("corpus", &ctx.configured("corpus", &ctx.cfg.paths.corpus)?)?;
    let pos_path = run.input("positives", &ctx.configured("positives", &ctx.cfg.paths.positives)?)?;
    let corpus = Corpus::load(&corpus_path).map_err(run.err())?;
    let positives = Corpus::load(&pos_path).map_err(run.err())?;
    let vectors = embed_docs(ctx, corpus.docs()).map_err(run.err())?;
    let pos_vectors = embed_docs(ctx, positives.docs()).map_err(run.err())?;

    let f = &ctx.cfg.filter;
    let cfg = ColdStartConfig {
        neg_sample_size: f.neg_sample_size,
        accept_prob: f.accept_prob,
        forest: f.forest,
        seed: ctx.cfg.seed,
    };
    let cold = cold_start_filter(&corpus, &vectors, &pos_vectors, &cfg).map_err(run.err())?;
    let (reference, probs) = (cold.reference, cold.probs);
    let scores: Vec<ScoreRecord> = corpus
        .iter()
        .zip(probs)
        .map(|(d, score)| ScoreRecord { doc_id: d.id.clone(), score, iteration: 0 })
        .collect();
    run.output_jsonl(COLDSTART_SCORES, &scores)?;
    run.output_json(&reference_file(0), &reference)?;
    run.count("corpus", corpus.len());
    run.count("positives", positives.len());
    run.count("retained", reference.len());
    run.finish()
}

pub fn filter_refine(ctx: &Context, start: Option<&Path>) -> RunResult<Manifest> {
    let mut run = StageRun::new(ctx, "filter-refine");
    let corpus_path = run.input("corpus", &ctx.configured("corpus", &ctx.cfg.paths.corpus)?)?;
    let default_ref = ctx.out.join(reference_file(0));
    let ref_path = run.input("reference", start.unwrap_or(&default_ref))?;
    let corpus = Corpus::load(&corpus_path).map_err(run.err())?;
    let mut reference = ReferenceSet::load(&ref_path).map_err(run.err())?;
    let vectors = embed_docs(ctx, corpus.docs()).map_err(run.err())?;
    let judge = ctx.cfg.chat_backend(&ctx.cfg.backends.judge).map_err(run.err())?;

    let f = &ctx.cfg.filter;
    let cfg = RefineConfig {
        extra_sample_size: f.extra_sample_size,
        threshold: f.threshold,
        domain: f.domain.clone(),
        judge_model: ctx.cfg.backends.judge.model.clone(),
        judge_retries: f.judge_retries,
        forest: f.forest,
        seed: ctx.cfg.seed,
        ..RefineConfig::default()
    };
    let mut all_scores = Vec::new();
    let mut skipped = 0;
    for _ in 0..f.iterations {
        let outcome = refine_iteration(&corpus, &vectors, &reference, judge.as_ref(), &cfg).map_err(run.err())?;
        skipped += outcome.skipped.len();
        all_scores.extend(outcome.score_records(&corpus));
        reference = outcome.reference;
        run.output_json(&reference_file(reference.iteration), &reference)?;
        run.count(&format!("retained_iteration_{}", reference.iteration), reference.len());
    }
    let kept: Vec<&Document> = corpus.iter().filter(|d| reference.doc_ids.contains(&d.id)).collect();
    run.output_jsonl(SCORES, &all_scores)?;
    run.output_jsonl(FILTERED, &kept)?;
    run.count("corpus", corpus.len());
    run.count("judge_skipped", skipped);
    run.count("retained", kept.len());
    run.finish()
}

pub fn extract_concepts(ctx: &Context, documents: Option<&Path>) -> RunResult<Manifest> {
    let mut run = StageRun::new(ctx, "extract-concepts");
    let docs_path = run.input("documents", &ctx.documents_path(documents)?)?;
    let corpus = Corpus::load(&docs_path).map_err(run.err())?;
    let backend = ctx.cfg.chat_backend(&ctx.cfg.backends.question).map_err(run.err())?;
    let opts = ExtractOptions {
        model: ctx.cfg.backends.question.model.clone(),
        temperature: ctx.cfg.generation.temperature,
        parse_retries: ctx.cfg.generation.concept_parse_retries,
    };
    let report = extract_all(corpus.docs(), backend.as_ref(), &opts);
    if report.sets.is_empty() && !corpus.is_empty() {
        return Err(run.err()(Error::Pipeline("no document yielded a concept set".into())));
    }
    run.output_jsonl(CONCEPTS, &report.sets)?;
    run.count("documents", corpus.len());
    run.count("concept_sets", report.sets.len());
    run.count("skipped", report.skipped.len());
    run.finish()
}

pub fn build_graph_stage(ctx: &Context, concepts: Option<&Path>) -> RunResult<Manifest> {
    let mut run = StageRun::new(ctx, "build-graph");
    let default = ctx.out.join(CONCEPTS);
    let path = run.input("concepts", concepts.unwrap_or(&default))?;
    let sets: Vec<ConceptSet> = read_jsonl(&path).map_err(run.err())?;
    let g = build_graph(&sets, ctx.cfg.graph.epsilon).map_err(run.err())?;
    run.output_json(GRAPH, &g.to_file())?;
    run.count("topics", g.topics().len());
    run.count("key_concepts", g.kcs().len());
    run.finish()
}

pub fn sample_concepts(ctx: &Context, graph: Option<&Path>) -> RunResult<Manifest> {
    let mut run = StageRun::new(ctx, "sample-concepts");
    let default = ctx.out.join(GRAPH);
    let path = run.input("graph", graph.unwrap_or(&default))?;
    let g = ConceptGraph::load(&path).map_err(run.err())?;
    let gs = &ctx.cfg.graph;
    let cfg = WalkConfig {
        topic_steps: gs.topic_steps.clone(),
        kc_steps: gs.kc_steps.clone(),
        epochs: gs.epochs,
        seed: ctx.cfg.seed,
    };
    let res = sample_kg(&g, &cfg).map_err(run.err())?;
    run.output_jsonl(SAMPLES, &res.samples)?;
    run.count("samples", res.samples.len());
    run.count("skipped", res.skipped.len());
    run.finish()
}

/// Inputs for `gen-questions`; unset paths fall back to the output directory.
#[derive(Debug, Clone, Default)]
pub struct GenInputs {
    pub documents: Option<PathBuf>,
    pub concepts: Option<PathBuf>,
    pub samples: Option<PathBuf>,
}

pub fn gen_questions(ctx: &Context, level: u8, inputs: &GenInputs) -> RunResult<Manifest> {
    if !(1..=3).contains(&level) {
        return Err(RunError::Usage(format!("level must be 1, 2 or 3, got {level}")));
    }
    let mut run = StageRun::new(ctx, &format!("gen-questions-l{level}"));
    let docs_path = run.input("documents", &ctx.documents_path(inputs.documents.as_deref())?)?;
    let corpus = Corpus::load(&docs_path).map_err(run.err())?;
    let backend = ctx.cfg.chat_backend(&ctx.cfg.backends.question).map_err(run.err())?;
    let opts = ctx.cfg.gen_options();

    let load_sets = |run: &mut StageRun| -> RunResult<Vec<ConceptSet>> {
        let default = ctx.out.join(CONCEPTS);
        let p = run.input("concepts", inputs.concepts.as_deref().unwrap_or(&default))?;
        read_jsonl(&p).map_err(run.err())
    };
    let report = match level {
        1 => gen_level1_all(corpus.docs(), backend.as_ref(), &opts),
        2 => {
            let sets = load_sets(&mut run)?;
            let pairs: Vec<(&Document, &ConceptSet)> =
                sets.iter().filter_map(|s| corpus.get(&s.doc_id).map(|d| (d, s))).collect();
            run.count("concept_sets", pairs.len());
            gen_level2_all(&pairs, backend.as_ref(), &opts)
        }
        _ => {
            let sets = load_sets(&mut run)?;
            let default = ctx.out.join(SAMPLES);
            let p = run.input("samples", inputs.samples.as_deref().unwrap_or(&default))?;
            let samples: Vec<SampledConceptSet> = read_jsonl(&p).map_err(run.err())?;
            let mut items = Vec::new();
            for kg in samples {
                let docs: Vec<&Document> = ground_documents(&kg, &sets, ctx.cfg.graph.ground_k)
                    .iter()
                    .filter_map(|id| corpus.get(id))
                    .collect();
                if docs.is_empty() {
                    log::warn!("walk {} has no grounding documents; skipped", kg.walk_id);
                    continue;
                }
                items.push((kg, docs));
            }
            run.count("samples", items.len());
            gen_level3_all(&items, backend.as_ref(), &opts)
        }
    };
    run.output_jsonl(&questions_file(level), &report.questions)?;
    run.count("documents", corpus.len());
    run.count("questions", report.questions.len());
    run.count("failures", report.failures.len());
    run.finish()
}

pub fn dedup_stage(ctx: &Context, inputs: &[PathBuf]) -> RunResult<Manifest> {
    let mut run = StageRun::new(ctx, "dedup");
    let paths: Vec<PathBuf> = if inputs.is_empty() {
        (1..=3).map(|l| ctx.out.join(questions_file(l))).filter(|p| p.is_file()).collect()
    } else {
        inputs.to_vec()
    };
    if paths.is_empty() {
        return Err(RunError::Usage(format!("dedup: no question files in {}", ctx.out.display())));
    }
    let mut qs: Vec<QuestionRecord> = Vec::new();
    for (i, p) in paths.iter().enumerate() {
        let p = run.input(&format!("questions_{i}"), p)?;
        qs.extend(read_jsonl::<QuestionRecord>(&p).map_err(run.err())?);
    }
    let d = &ctx.cfg.dedup;
    let kept = dedup_with(&qs, d.near_dup_threshold, d.shingle_size);
    run.output_jsonl(DEDUPED, &kept)?;
    run.count("input", qs.len());
    run.count("kept", kept.len());
    run.finish()
}

pub fn decontaminate_stage(ctx: &Context, input: Option<&Path>) -> RunResult<Manifest> {
    let mut run = StageRun::new(ctx, "decontaminate");
    let default = ctx.out.join(DEDUPED);
    let path = run.input("questions", input.unwrap_or(&default))?;
    let qs: Vec<QuestionRecord> = read_jsonl(&path).map_err(run.err())?;
    let benchmarks = match &ctx.cfg.paths.benchmarks {
        Some(b) => {
            let b = run.input("benchmarks", b)?;
            load_benchmarks(&b).map_err(run.err())?
        }
        None => {
            log::warn!("no benchmarks configured; decontamination keeps every question");
            Vec::new()
        }
    };
    let kept = decontaminate(&qs, &benchmarks, ctx.cfg.dedup.decontam_n).map_err(run.err())?;
    run.output_jsonl(QUESTIONS, &kept)?;
    run.count("input", qs.len());
    run.count("kept", kept.len());
    run.finish()
}

pub fn gen_answers_stage(ctx: &Context, input: Option<&Path>) -> RunResult<Manifest> {
    let mut run = StageRun::new(ctx, "gen-answers");
    let default = ctx.out.join(QUESTIONS);
    let path = run.input("questions", input.unwrap_or(&default))?;
    let qs: Vec<QuestionRecord> = read_jsonl(&path).map_err(run.err())?;
    let backend = ctx.cfg.chat_backend(&ctx.cfg.backends.answer).map_err(run.err())?;
    let report = gen_answers(&qs, backend.as_ref(), &ctx.cfg.backends.answer.model).map_err(run.err())?;
    run.output_jsonl(QA, &report.pairs)?;
    run.count("questions", qs.len());
    run.count("answered", report.pairs.len());
    run.count("failures", report.failures.len());
    run.finish()
}

pub fn fit_stage(ctx: &Context, form: Form, points: &Path, units: PointUnits) -> RunResult<Manifest> {
    let mut run = StageRun::new(ctx, "fit");
    let p = run.input("points", points)?;
    let pts = load_points(&p, units).map_err(run.err())?;
    let fit = Fit::fit(form, &pts).map_err(run.err())?;
    run.output_json(FIT, &fit.to_file(ctx.cfg.seed).map_err(run.err())?)?;
    run.count("points", pts.len());
    run.finish()
}

fn load_fit(run: &mut StageRun, path: Option<&Path>) -> RunResult<Fit> {
    let default = run.ctx.out.join(FIT);
    let p = run.input("fit", path.unwrap_or(&default))?;
    let text = std::fs::read_to_string(&p).map_err(Error::from).map_err(run.err())?;
    let file: FitFile = serde_json::from_str(&text).map_err(Error::from).map_err(run.err())?;
    Fit::from_file(&file).map_err(run.err())
}

/// Writes the prediction and returns it alongside the manifest.
pub fn predict_stage(ctx: &Context, fit: Option<&Path>, tokens: f64, params: Option<f64>) -> RunResult<(Value, Manifest)> {
    let mut run = StageRun::new(ctx, "predict");
    let f = load_fit(&mut run, fit)?;
    let error_rate = f.predict(tokens, params).map_err(run.err())?;
    let mut obj = serde_json::json!({ "form": f.form(), "tokens": tokens, "error_rate": error_rate });
    if let Some(n) = params {
        obj["params"] = n.into();
    }
    run.output_json(PREDICTION, &obj)?;
    Ok((obj, run.finish()?))
}

pub fn tokens_for_target_stage(
    ctx: &Context,
    fit: Option<&Path>,
    target: f64,
    params: Option<f64>,
) -> RunResult<(Value, Manifest)> {
    let mut run = StageRun::new(ctx, "tokens-for-target");
    let f = load_fit(&mut run, fit)?;
    let tokens = f.tokens_for_target(target, params).map_err(run.err())?;
    let mut obj = serde_json::json!({ "form": f.form(), "target_error": target, "tokens": tokens });
    if let Some(n) = params {
        obj["params"] = n.into();
    }
    run.output_json(TOKENS_FOR_TARGET, &obj)?;
    Ok((obj, run.finish()?))
}

/// Runs every stage in order. Filtering is skipped when no positives are
/// configured, in which case generation reads the whole corpus.
pub fn run_pipeline(ctx: &Context) -> RunResult<Manifest> {
    let mut stages = Vec::new();
    if ctx.cfg.paths.positives.is_some() {
        stages.push(filter_coldstart(ctx)?);
        stages.push(filter_refine(ctx, None)?);
    } else {
        log::info!("no positives configured; filter stages skipped");
    }
    stages.push(extract_concepts(ctx, None)?);
    stages.push(build_graph_stage(ctx, None)?);
    stages.push(sample_concepts(ctx, None)?);
    for level in 1..=3 {
        stages.push(gen_questions(ctx, level, &GenInputs::default())?);
    }
    stages.push(dedup_stage(ctx, &[])?);
    stages.push(decontaminate_stage(ctx, None)?);
    stages.push(gen_answers_stage(ctx, None)?);

    let mut run = StageRun::new(ctx, "pipeline");
    for m in &stages {
        for (k, v) in &m.counts {
            run.manifest.counts.insert(format!("{}.{k}", m.stage), *v);
        }
        for (k, v) in &m.outputs {
            run.manifest.outputs.insert(k.clone(), v.clone());
        }
        for (k, v) in &m.inputs {
            run.manifest.inputs.entry(format!("{}.{k}", m.stage)).or_insert_with(|| v.clone());
        }
    }
    run.finish()
}
