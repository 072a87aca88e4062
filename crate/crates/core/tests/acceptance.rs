//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line for
//! each, and exits non-zero if any failed.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::Value;

use synthweave::concept::{
    canonical_key, parse_concept_output, serialize_concept_output, ConceptFields, ConceptSet, SchoolLevel,
};
use synthweave::corpus::{normalize_text, read_jsonl, write_jsonl, Corpus, Document};
use synthweave::embed::{mock_embed, EmbeddingVector};
use synthweave::filter::{cold_start_filter, refine_iteration, ColdStartConfig, ReferenceSet, RefineConfig};
use synthweave::forest::ForestParams;
use synthweave::graph::{build_graph, ground_documents, SampledConceptSet, SubGraph};
use synthweave::llmio::{ChatRequest, FnBackend};
use synthweave::pipeline::{self, Context, PipelineConfig};
use synthweave::qagen::parse::parse_level1;
use synthweave::qagen::{OriginTag, QuestionRecord};
use synthweave::scaling::{fit_marginal, fit_rectified, load_points, DataPoint, PointUnits};

type Outcome = Result<String, String>;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

// ---------------------------------------------------------------------------
// 1. Published projection curves

const TOKENS: [f64; 6] = [1e10, 5e10, 2.5e11, 3e11, 1e12, 4e12];
const ACC_3B: [f64; 6] = [64.6, 74.7, 80.5, 80.9, 83.1, 84.4];
const ACC_8B: [f64; 6] = [73.2, 78.6, 81.4, 81.6, 82.6, 83.2];

fn projection_curves() -> Outcome {
    let units = PointUnits { percent: true, accuracy: true };
    let mut betas = Vec::new();
    let mut detail = Vec::new();
    for (name, acc) in [("3b", ACC_3B), ("8b", ACC_8B)] {
        let pts = load_points(fixtures().join(format!("pipeline/projected_{name}.csv")), units).map_err(|e| e.to_string())?;
        let expected: Vec<DataPoint> = TOKENS.iter().zip(acc).map(|(&d, a)| DataPoint::new(d, 1.0 - a / 100.0)).collect();
        check!(pts.len() == 6, "{name}: fixture has {} points", pts.len());
        for (p, q) in pts.iter().zip(&expected) {
            check!(p.tokens == q.tokens && (p.error_rate - q.error_rate).abs() < 1e-12, "{name}: fixture differs from source values");
        }
        let rect = fit_rectified(&pts).map_err(|e| e.to_string())?;
        let marg = fit_marginal(&pts).map_err(|e| e.to_string())?;
        let max_err = pts.iter().map(|p| (rect.predict(p.tokens) - p.error_rate).abs()).fold(0.0, f64::max);
        check!(max_err <= 0.005, "{name}: max abs error {max_err:.4}");
        check!(rect.rmse_log < marg.rmse_log, "{name}: rectified rmse_log {:.2e} not below marginal {:.2e}", rect.rmse_log, marg.rmse_log);
        detail.push(format!("{name}: beta={:.3} max_err={max_err:.4} rmse {:.1e}<{:.1e}", rect.beta, rect.rmse_log, marg.rmse_log));
        betas.push(rect.beta);
    }
    let db = (betas[0] - betas[1]).abs();
    check!(db <= 0.1, "|beta_3b - beta_8b| = {db:.3}");
    detail.push(format!("|dbeta|={db:.3}"));
    Ok(detail.join("; "))
}

// ---------------------------------------------------------------------------
// 2. Known-generator recovery

const GEN: (f64, f64, f64, f64) = (60.0, 2e9, 0.4, 0.15);

fn generator_points(noise: Option<&mut ChaCha8Rng>) -> Vec<DataPoint> {
    let (b, d_l, beta, e) = GEN;
    let normal: Normal<f64> = Normal::new(0.0, 0.01).unwrap();
    let mut rng = noise;
    (0..7)
        .map(|i| {
            let d = 10f64.powf(9.0 + i as f64 * 4.0 / 6.0);
            let mut l = b / (d_l + d.powf(beta)) + e;
            if let Some(r) = rng.as_deref_mut() {
                l *= normal.sample(r).exp();
            }
            DataPoint::new(d, l)
        })
        .collect()
}

fn generator_recovery() -> Outcome {
    let (_, _, beta, e) = GEN;
    let mut ok = 0;
    let mut beta_ok = 0;
    let mut e_ok = 0;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
        let fit = fit_rectified(&generator_points(Some(&mut rng))).map_err(|e| e.to_string())?;
        let b_ok = (fit.beta - beta).abs() <= 0.05;
        let ee_ok = (fit.e - e).abs() <= 0.02;
        beta_ok += b_ok as usize;
        e_ok += ee_ok as usize;
        ok += (b_ok && ee_ok) as usize;
    }
    let clean = fit_rectified(&generator_points(None)).map_err(|e| e.to_string())?;
    let pred_err = generator_points(None)
        .iter()
        .map(|p| (clean.predict(p.tokens) - p.error_rate).abs())
        .fold(0.0, f64::max);
    let detail = format!(
        "{ok}/100 trials recovered (beta {beta_ok}, E {e_ok}); noise-free beta={:.4} E={:.6} max pred err {pred_err:.1e}",
        clean.beta, clean.e
    );
    check!(ok >= 95, "{detail}");
    check!((clean.beta - beta).abs() <= 1e-5 && (clean.e - e).abs() <= 1e-5 && pred_err <= 1e-5, "{detail}");
    Ok(detail)
}

// ---------------------------------------------------------------------------
// 3. Inverse-query consistency

fn inverse_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let normal: Normal<f64> = Normal::new(0.0, 0.01).unwrap();
    let mut worst = 0.0f64;
    for i in 0..20 {
        // generators whose curve actually falls across 1e9..1e13: D_l is
        // comparable to D^β mid-range and the drop from 1e9 is 0.1–0.5
        let beta = rng.gen_range(0.2..0.7);
        let e = rng.gen_range(0.05..0.3);
        let d_l = 10f64.powf(rng.gen_range(-2.0..1.0)) * 1e11f64.powf(beta);
        let b = rng.gen_range(0.1..0.5) * (d_l + 1e9f64.powf(beta));
        let pts: Vec<DataPoint> = (0..7)
            .map(|k| {
                let d = 10f64.powf(9.0 + k as f64 * 4.0 / 6.0);
                DataPoint::new(d, (b / (d_l + d.powf(beta)) + e) * normal.sample(&mut rng).exp())
            })
            .collect();
        let fit = fit_rectified(&pts).map_err(|e| format!("fit {i}: {e}"))?;
        for d in [1e9, 1e11, 1e13] {
            let back = fit.tokens_for_target(fit.predict(d)).map_err(|e| format!("fit {i} ({fit:?}) at {d:e}: {e}"))?;
            let rel = (back / d - 1.0).abs();
            worst = worst.max(rel);
            check!(rel <= 1e-3, "fit {i} ({fit:?}) at D={d:e}: round trip gave {back:e}");
        }
    }
    Ok(format!("20 fits, worst relative error {worst:.1e}"))
}

// ---------------------------------------------------------------------------
// 4. Softmax-walk correctness

fn concept_set(doc_id: &str, groups: &[(&str, &[&str])]) -> ConceptSet {
    let mut key_concepts = IndexMap::new();
    for (t, kcs) in groups {
        key_concepts.insert(t.to_string(), kcs.iter().map(|s| s.to_string()).collect());
    }
    ConceptSet {
        doc_id: doc_id.into(),
        level: SchoolLevel::Other,
        subject: String::new(),
        topics: groups.iter().map(|g| g.0.to_string()).collect(),
        key_concepts,
    }
}

#[derive(Default)]
struct OracleCounts {
    tt: HashMap<(String, String), u64>,
    tk: HashMap<(String, String), u64>,
    kk: HashMap<(String, String), u64>,
}

/// Brute-force co-occurrence counts keyed by canonical names; undirected
/// pairs are stored both ways.
fn oracle_counts(sets: &[ConceptSet]) -> OracleCounts {
    let mut c = OracleCounts::default();
    for s in sets {
        let t: BTreeSet<String> = s.topics.iter().map(|x| canonical_key(x)).collect();
        let k: BTreeSet<String> = s.key_concepts.values().flatten().map(|x| canonical_key(x)).collect();
        for a in &t {
            for b in &t {
                if a != b {
                    *c.tt.entry((a.clone(), b.clone())).or_default() += 1;
                }
            }
            for b in &k {
                *c.tk.entry((a.clone(), b.clone())).or_default() += 1;
            }
        }
        for a in &k {
            for b in &k {
                if a != b {
                    *c.kk.entry((a.clone(), b.clone())).or_default() += 1;
                }
            }
        }
    }
    c
}

fn oracle_probs(counts: &HashMap<(String, String), u64>, u: &str, eps: f64) -> BTreeMap<String, f64> {
    let nb: Vec<(&String, f64)> = counts
        .iter()
        .filter(|((a, _), _)| a == u)
        .map(|((_, b), &n)| (b, n as f64 + eps))
        .collect();
    let z: f64 = nb.iter().map(|x| x.1).sum();
    nb.into_iter().map(|(b, w)| (b.clone(), w / z)).collect()
}

fn sub_counts(c: &OracleCounts, sub: SubGraph) -> &HashMap<(String, String), u64> {
    match sub {
        SubGraph::TopicTopic => &c.tt,
        SubGraph::TopicKc => &c.tk,
        SubGraph::KcKc => &c.kk,
    }
}

fn softmax_walks() -> Outcome {
    // 4 topics, 6 key concepts, uneven co-occurrence
    let sets = vec![
        concept_set("a", &[("Algebra", &["Linear Equations", "Quadratics"]), ("Geometry", &["Triangles"])]),
        concept_set("b", &[("Algebra", &["Quadratics", "Polynomials"]), ("Calculus", &["Limits"])]),
        concept_set("c", &[("Algebra", &["Linear Equations"]), ("Geometry", &["Triangles", "Circles"])]),
        concept_set("d", &[("Calculus", &["Limits", "Polynomials"]), ("Probability", &["Circles"])]),
        concept_set("e", &[("Algebra", &["Quadratics"]), ("Geometry", &["Circles"]), ("Probability", &["Linear Equations"])]),
    ];
    let eps = 1e-6;
    let g = build_graph(&sets, eps).map_err(|e| e.to_string())?;
    check!(g.topics().len() == 4 && g.kcs().len() == 6, "graph has {} topics, {} KCs", g.topics().len(), g.kcs().len());
    let oracle = oracle_counts(&sets);
    let draws = 100_000;
    let mut worst = 0.0f64;
    let mut edges = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for sub in [SubGraph::TopicTopic, SubGraph::TopicKc, SubGraph::KcKc] {
        let sources = if sub == SubGraph::KcKc { g.kcs() } else { g.topics() };
        for u in sources {
            let expect = oracle_probs(sub_counts(&oracle, sub), &canonical_key(u), eps);
            let mut seen: BTreeMap<String, usize> = BTreeMap::new();
            for _ in 0..draws {
                let v = g.sample_step(sub, u, &mut rng).map_err(|e| e.to_string())?;
                *seen.entry(canonical_key(&v)).or_default() += 1;
            }
            check!(seen.keys().all(|k| expect.contains_key(k)), "{sub:?} from {u}: stepped to a non-neighbour");
            for (v, p) in &expect {
                let freq = *seen.get(v).unwrap_or(&0) as f64 / draws as f64;
                worst = worst.max((freq - p).abs());
                edges += 1;
                check!((freq - p).abs() <= 0.01, "{sub:?} {u}->{v}: frequency {freq:.4} vs {p:.4}");
            }
        }
    }

    // transition_probs against the count-proportional oracle
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut max_dev = 0.0f64;
    for gi in 0..1000 {
        let eps = [1e-6, 0.01, 0.5, 1.0][gi % 4];
        let n_docs = rng.gen_range(1..8);
        let sets: Vec<ConceptSet> = (0..n_docs)
            .map(|d| {
                let mut topics: Vec<String> = (0..6).map(|i| format!("Topic {i}")).collect();
                topics.shuffle(&mut rng);
                topics.truncate(rng.gen_range(1..4));
                let groups: Vec<(String, Vec<String>)> = topics
                    .into_iter()
                    .map(|t| {
                        let n = rng.gen_range(0..5);
                        let kcs = (0..n)
                            .map(|_| {
                                let k = rng.gen_range(0..10);
                                // vary surface forms; identity is the canonical key
                                if rng.gen_bool(0.3) { format!("concept  {k}") } else { format!("Concept {k}") }
                            })
                            .collect::<BTreeSet<_>>()
                            .into_iter()
                            .collect();
                        (t, kcs)
                    })
                    .collect();
                let refs: Vec<(&str, Vec<&str>)> =
                    groups.iter().map(|(t, k)| (t.as_str(), k.iter().map(String::as_str).collect())).collect();
                let refs2: Vec<(&str, &[&str])> = refs.iter().map(|(t, k)| (*t, k.as_slice())).collect();
                concept_set(&format!("d{d}"), &refs2)
            })
            .collect();
        let g = build_graph(&sets, eps).map_err(|e| e.to_string())?;
        let oracle = oracle_counts(&sets);
        for sub in [SubGraph::TopicTopic, SubGraph::TopicKc, SubGraph::KcKc] {
            let sources = if sub == SubGraph::KcKc { g.kcs() } else { g.topics() };
            for u in sources {
                let expect = oracle_probs(sub_counts(&oracle, sub), &canonical_key(u), eps);
                match g.transition_probs(sub, u) {
                    Ok(got) => {
                        check!(got.len() == expect.len(), "graph {gi} {sub:?} {u}: {} neighbours vs {}", got.len(), expect.len());
                        for (v, p) in got {
                            let q = expect.get(&canonical_key(&v)).ok_or(format!("graph {gi}: unexpected neighbour {v}"))?;
                            max_dev = max_dev.max((p - q).abs());
                            check!((p - q).abs() <= 1e-9, "graph {gi} {sub:?} {u}->{v}: {p} vs {q}");
                        }
                    }
                    Err(_) => check!(expect.is_empty(), "graph {gi} {sub:?} {u}: error but oracle has neighbours"),
                }
            }
        }
    }
    Ok(format!("{edges} edges, worst frequency gap {worst:.4}; 1000 random graphs, max dev {max_dev:.1e}"))
}

// ---------------------------------------------------------------------------
// 5. Grounding oracle equivalence

fn brute_force_ground(kg: &SampledConceptSet, sets: &[ConceptSet], k: usize) -> Vec<String> {
    let q: HashSet<String> = kg.topics.iter().chain(&kg.key_concepts).map(|x| canonical_key(x)).collect();
    let mut scored: Vec<(f64, &str)> = sets
        .iter()
        .map(|s| {
            let fp: HashSet<String> = s.topics.iter().chain(s.key_concepts.values().flatten()).map(|x| canonical_key(x)).collect();
            let inter = fp.intersection(&q).count();
            let union = fp.union(&q).count();
            (if union == 0 { 0.0 } else { inter as f64 / union as f64 }, s.doc_id.as_str())
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
    scored.into_iter().take(k).map(|x| x.1.to_string()).collect()
}

fn grounding_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pool: Vec<String> = (0..12).map(|i| format!("Idea {i}")).collect();
    let mut queries = 0;
    for c in 0..50 {
        let n = rng.gen_range(1..=40);
        let mut ids: Vec<u32> = (0..200).collect();
        ids.shuffle(&mut rng);
        let sets: Vec<ConceptSet> = ids[..n]
            .iter()
            .map(|id| {
                let mut items = pool.clone();
                items.shuffle(&mut rng);
                let t = rng.gen_range(1..3);
                let kc = rng.gen_range(0..4);
                let kcs: Vec<&str> = items[t..t + kc].iter().map(String::as_str).collect();
                let mut groups: Vec<(&str, &[&str])> = vec![(items[0].as_str(), kcs.as_slice())];
                if t == 2 {
                    groups.push((items[1].as_str(), &[]));
                }
                concept_set(&format!("doc-{id:03}"), &groups)
            })
            .collect();
        for qn in 0..20 {
            let mut items = pool.clone();
            items.shuffle(&mut rng);
            let nt = rng.gen_range(1..3);
            let nk = rng.gen_range(0..4);
            let kg = SampledConceptSet {
                walk_id: format!("w{c}-{qn}"),
                topics: items[..nt].to_vec(),
                key_concepts: items[nt..nt + nk].to_vec(),
                seed_topic: items[0].clone(),
                trace: Vec::new(),
            };
            for k in 1..=4 {
                let got = ground_documents(&kg, &sets, k);
                let want = brute_force_ground(&kg, &sets, k);
                check!(got == want, "corpus {c} query {qn} k={k}: {got:?} vs {want:?}");
                queries += 1;
            }
        }
    }
    Ok(format!("50 corpora, {queries} queries agree"))
}

// ---------------------------------------------------------------------------
// 6. End-to-end mock pipeline

fn fixture_context(out: &Path) -> Result<Context, String> {
    let cfg = PipelineConfig::load(&fixtures().join("pipeline/config.json")).map_err(|e| e.to_string())?;
    Context::new(cfg, Some(out.to_path_buf()), BTreeMap::new()).map_err(|e| e.to_string())
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
        .collect()
}

fn oracle_shingles(text: &str) -> HashSet<Vec<String>> {
    let words: Vec<String> = normalize_text(text).split_whitespace().map(str::to_string).collect();
    if words.len() < 3 {
        return [words].into_iter().filter(|w| !w.is_empty()).collect();
    }
    words.windows(3).map(|w| w.to_vec()).collect()
}

/// Pairwise rule: any pair that is textually equal after normalization or
/// has shingle Jaccard ≥ 0.8 loses its larger qid.
fn oracle_dedup(qs: &[QuestionRecord]) -> Vec<String> {
    let norm: Vec<String> = qs.iter().map(|q| normalize_text(&q.text)).collect();
    let sh: Vec<HashSet<Vec<String>>> = qs.iter().map(|q| oracle_shingles(&q.text)).collect();
    let mut dropped = HashSet::new();
    for i in 0..qs.len() {
        for j in i + 1..qs.len() {
            let inter = sh[i].intersection(&sh[j]).count();
            let union = sh[i].len() + sh[j].len() - inter;
            let near = union > 0 && inter as f64 / union as f64 >= 0.8;
            if norm[i] == norm[j] || near {
                dropped.insert(if qs[i].qid > qs[j].qid { i } else { j });
            }
        }
    }
    (0..qs.len()).filter(|i| !dropped.contains(i)).map(|i| qs[i].qid.clone()).collect()
}

fn eight_grams(text: &str) -> HashSet<String> {
    let words: Vec<String> = normalize_text(text).split_whitespace().map(str::to_string).collect();
    words.windows(8).map(|w| w.join(" ")).collect()
}

fn end_to_end() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (tmp.path().join("run_a"), tmp.path().join("run_b"));
    for dir in [&a, &b] {
        pipeline::run_pipeline(&fixture_context(dir)?).map_err(|e| e.to_string())?;
    }
    let (ba, bb) = (dir_bytes(&a), dir_bytes(&b));
    check!(ba == bb, "two runs differ");

    let manifest: Value = serde_json::from_slice(&ba["pipeline.manifest.json"]).map_err(|e| e.to_string())?;
    let counts = &manifest["counts"];

    let l2: Vec<QuestionRecord> = read_jsonl(a.join("questions_l2.jsonl")).map_err(|e| e.to_string())?;
    let mut per_doc: BTreeMap<&str, usize> = BTreeMap::new();
    for q in &l2 {
        *per_doc.entry(q.source_doc_ids[0].as_str()).or_default() += 1;
    }
    let concept_docs = counts["extract-concepts.concept_sets"].as_u64().unwrap_or(0) as usize;
    check!(per_doc.len() == concept_docs && per_doc.values().all(|&n| n == 5), "level-2 per-document counts {per_doc:?}");

    let l3: Vec<QuestionRecord> = read_jsonl(a.join("questions_l3.jsonl")).map_err(|e| e.to_string())?;
    let samples: Vec<SampledConceptSet> = read_jsonl(a.join("samples.jsonl")).map_err(|e| e.to_string())?;
    let mut per_walk: BTreeMap<&str, usize> = BTreeMap::new();
    for q in &l3 {
        *per_walk.entry(q.walk_id.as_deref().unwrap_or("")).or_default() += 1;
    }
    check!(per_walk.len() == samples.len() && per_walk.values().all(|&n| n == 3), "level-3 per-sample counts off");

    let graph: Value = serde_json::from_slice(&ba["graph.json"]).map_err(|e| e.to_string())?;
    let n_topics = graph["topics"].as_array().map(Vec::len).unwrap_or(0);
    let skipped = counts["sample-concepts.skipped"].as_u64().unwrap_or(u64::MAX) as usize;
    check!(samples.len() + skipped == 2 * n_topics, "{} samples + {skipped} skipped vs 2x{n_topics} topics", samples.len());

    // plant near-duplicates and benchmark contaminants, then rerun the
    // post-processing stages on the augmented set
    let mut questions: Vec<QuestionRecord> = Vec::new();
    for l in 1..=3 {
        questions.extend(read_jsonl::<QuestionRecord>(a.join(format!("questions_l{l}.jsonl"))).map_err(|e| e.to_string())?);
    }
    let base = questions.len();
    let long: Vec<QuestionRecord> = questions.iter().filter(|q| q.text.split_whitespace().count() >= 16).take(10).cloned().collect();
    check!(long.len() == 10, "not enough long questions to plant near-duplicates");
    let mut planted_dups = BTreeSet::new();
    for (i, q) in long.iter().enumerate() {
        let mut words: Vec<&str> = q.text.split_whitespace().collect();
        words.pop();
        words.push("carefully.");
        let mut p = q.clone();
        p.qid = format!("q9-neardup-{i:02}");
        p.text = words.join(" ");
        planted_dups.insert(p.qid.clone());
        questions.push(p);
    }
    let contaminants = [
        "Before the exam a student asked: solve the system of equations two x plus three y equals seven please.",
        "Warm-up drill number four: seven and x minus y equals one for both unknowns, recall it first.",
        "From an old worksheet: what is the remainder when two raised to the power one hundred is divided?",
        "Homework twelve, problem b: a fair die is rolled three times; what is the probability today?",
        "Quiz item: three times; what is the probability that all three results are different? Show reasoning.",
    ];
    let mut planted_contam = BTreeSet::new();
    for (i, t) in contaminants.iter().enumerate() {
        let mut p = QuestionRecord::bare(&format!("q9-contam-{i:02}"), t, 1);
        p.origin_tag = Some(OriginTag::NewlyCreated);
        p.source_doc_ids = vec!["doc-000".into()];
        planted_contam.insert(p.qid.clone());
        questions.push(p);
    }

    let post = tmp.path().join("planted");
    fs::create_dir_all(&post).map_err(|e| e.to_string())?;
    let input = post.join("questions_planted.jsonl");
    write_jsonl(&input, &questions).map_err(|e| e.to_string())?;
    let ctx = fixture_context(&post)?;
    pipeline::dedup_stage(&ctx, &[input]).map_err(|e| e.to_string())?;
    let deduped: Vec<QuestionRecord> = read_jsonl(post.join(pipeline::DEDUPED)).map_err(|e| e.to_string())?;
    let kept: Vec<String> = deduped.iter().map(|q| q.qid.clone()).collect();
    check!(kept == oracle_dedup(&questions), "dedup disagrees with the pairwise oracle");
    check!(kept.iter().all(|q| !planted_dups.contains(q)), "a planted near-duplicate survived");
    check!(kept.len() == base + 5, "dedup kept {} of {} (expected only the 10 planted removed)", kept.len(), questions.len());

    pipeline::decontaminate_stage(&ctx, None).map_err(|e| e.to_string())?;
    let clean: Vec<QuestionRecord> = read_jsonl(post.join(pipeline::QUESTIONS)).map_err(|e| e.to_string())?;
    let bench: Vec<Value> = read_jsonl(fixtures().join("pipeline/benchmarks.jsonl")).map_err(|e| e.to_string())?;
    let banned: HashSet<String> = bench.iter().flat_map(|b| eight_grams(b["question"].as_str().unwrap_or(""))).collect();
    let expect: Vec<&str> = deduped
        .iter()
        .filter(|q| eight_grams(&q.text).is_disjoint(&banned))
        .map(|q| q.qid.as_str())
        .collect();
    let got: Vec<&str> = clean.iter().map(|q| q.qid.as_str()).collect();
    check!(got == expect, "decontamination disagrees with the n-gram oracle");
    let removed: BTreeSet<String> = deduped.iter().filter(|q| !got.contains(&q.qid.as_str())).map(|q| q.qid.clone()).collect();
    check!(removed == planted_contam, "decontamination removed {removed:?}");

    Ok(format!(
        "L2 5x{} docs, L3 3x{} samples ({skipped} skipped of 2x{n_topics}); dedup {}->{}; decontam {}->{}; reruns identical over {} files",
        per_doc.len(),
        samples.len(),
        questions.len(),
        deduped.len(),
        deduped.len(),
        clean.len(),
        ba.len()
    ))
}

// ---------------------------------------------------------------------------
// 7. Filter stage

const MATH: &[&str] = &[
    "integral", "derivative", "matrix", "theorem", "polynomial", "algebra", "geometry", "calculus", "prime",
    "proof", "equation", "vector", "limit", "series", "triangle", "probability", "fraction",
];
const PLAIN: &[&str] = &[
    "garden", "recipe", "holiday", "weather", "football", "music", "coffee", "market", "travel", "movie",
    "painting", "river", "village", "shopping", "breakfast", "concert", "festival", "kitchen", "museum", "bicycle",
];

fn words(pool: &[&str], n: usize, rng: &mut ChaCha8Rng) -> String {
    (0..n).map(|_| *pool.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

/// Math texts rate 7–10 and plain texts 1–6, varying with the text.
fn judge_score(text: &str) -> u8 {
    let h = text.bytes().fold(0u32, |a, b| a.wrapping_mul(31).wrapping_add(b as u32));
    if MATH.iter().any(|w| text.contains(&format!(" {w} "))) {
        7 + (h % 4) as u8
    } else {
        1 + (h % 6) as u8
    }
}

fn filter_stage() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut docs = Vec::new();
    for i in 0..100 {
        docs.push(Document::new(format!("m{i:04}"), words(MATH, 30, &mut rng)));
    }
    for i in 0..900 {
        docs.push(Document::new(format!("f{i:04}"), words(PLAIN, 30, &mut rng)));
    }
    docs.shuffle(&mut rng);
    let corpus = Corpus::from_documents(docs).map_err(|e| e.to_string())?;
    let vectors: Vec<EmbeddingVector> = corpus.iter().map(|d| mock_embed(&d.text, 64, 1).unwrap()).collect();
    let positives: Vec<EmbeddingVector> = (0..50).map(|_| mock_embed(&words(MATH, 30, &mut rng), 64, 1).unwrap()).collect();
    let forest = ForestParams { n_trees: 30, max_depth: 10, seed: 0 };

    let cold_cfg = ColdStartConfig { neg_sample_size: 50, forest, seed: 7, ..Default::default() };
    let cold = cold_start_filter(&corpus, &vectors, &positives, &cold_cfg).map_err(|e| e.to_string())?;
    let cold2 = cold_start_filter(&corpus, &vectors, &positives, &cold_cfg).map_err(|e| e.to_string())?;
    let planted = cold.reference.doc_ids.iter().filter(|id| id.starts_with('m')).count();
    check!(planted >= 90, "cold start retained {planted}/100 planted documents");
    check!(cold.forest.to_json().unwrap() == cold2.forest.to_json().unwrap(), "cold-start forests differ across reruns");

    let judge = FnBackend::new(|req: &ChatRequest| Ok(format!("<score>{}</score>", judge_score(&req.user))));
    let refine_cfg = RefineConfig { extra_sample_size: 200, forest, seed: 7, ..Default::default() };
    let prev = ReferenceSet { iteration: 0, ..cold.reference.clone() };
    let r1 = refine_iteration(&corpus, &vectors, &prev, &judge, &refine_cfg).map_err(|e| e.to_string())?;
    let r1b = refine_iteration(&corpus, &vectors, &prev, &judge, &refine_cfg).map_err(|e| e.to_string())?;
    check!(r1.forest.to_json().unwrap() == r1b.forest.to_json().unwrap(), "refinement forests differ across reruns");
    let want: BTreeSet<String> = corpus
        .iter()
        .filter(|d| judge_score(&format!(" {} ", d.text)) as f64 > 6.5)
        .map(|d| d.id.clone())
        .collect();
    let got = &r1.reference.doc_ids;
    check!(
        got == &want,
        "retained {} docs, judge rates {} above 6.5 ({} missing, {} extra)",
        got.len(),
        want.len(),
        want.difference(got).count(),
        got.difference(&want).count()
    );
    Ok(format!("cold start kept {planted}/100 planted; refinement kept exactly the {} judged > 6.5; forests reproducible", want.len()))
}

// ---------------------------------------------------------------------------
// 8. Parser fidelity

fn fuzz_text(rng: &mut ChaCha8Rng) -> String {
    const PIECES: &[&str] = &["Limit", "of", "a", "Function", "(e.g.,", "Sine", "and", "Cosine", "Law's", "x-axis", "Area,", "Series"];
    let n = rng.gen_range(1..6);
    let mut s = String::new();
    for i in 0..n {
        if i > 0 {
            s.push_str(if rng.gen_bool(0.2) { "   " } else { " " });
        }
        let p = PIECES.choose(rng).unwrap();
        s.push_str(&if rng.gen_bool(0.2) { p.to_uppercase() } else { p.to_string() });
    }
    s
}

fn parser_fidelity() -> Outcome {
    let l1 = fs::read_to_string(fixtures().join("level1_example_output.txt")).map_err(|e| e.to_string())?;
    let blocks = parse_level1(&l1).map_err(|e| e.to_string())?;
    check!(blocks.len() == 2, "level-1 example gave {} blocks", blocks.len());
    check!(
        blocks[0].origin == OriginTag::OriginalQuestion && blocks[0].level == Some(SchoolLevel::HighSchool),
        "first level-1 block {:?}",
        blocks[0]
    );
    check!(
        blocks[1].origin == OriginTag::NewlyCreated && blocks[1].level == Some(SchoolLevel::College),
        "second level-1 block {:?}",
        blocks[1]
    );

    let trig = parse_concept_output(&fs::read_to_string(fixtures().join("concepts_trigonometry.txt")).unwrap())
        .map_err(|e| e.to_string())?;
    check!(trig.level == SchoolLevel::HighSchool && trig.subject == "Trigonometry", "trigonometry header");
    check!(trig.topics.len() == 5, "trigonometry has {} topics", trig.topics.len());
    let first = &trig.key_concepts["Trigonometric Functions and Identities"];
    check!(first.len() == 5 && first.iter().any(|k| k == "Law of Sines and Law of Cosines"), "trigonometry topic 1 KCs {first:?}");
    let vc = parse_concept_output(&fs::read_to_string(fixtures().join("concepts_vector_calculus.txt")).unwrap())
        .map_err(|e| e.to_string())?;
    check!(vc.level == SchoolLevel::College, "vector calculus level");
    check!(
        vc.key_concepts
            .get("Surface Integrals of Vector Fields")
            .is_some_and(|g| g.iter().any(|k| k == "Flux of a vector field across a surface")),
        "vector calculus KC missing"
    );

    let levels = [
        SchoolLevel::PrimarySchool,
        SchoolLevel::MiddleSchool,
        SchoolLevel::HighSchool,
        SchoolLevel::College,
        SchoolLevel::GradSchool,
        SchoolLevel::Competition,
        SchoolLevel::Other,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..1000 {
        let topics: Vec<String> = (0..rng.gen_range(1..6)).map(|_| fuzz_text(&mut rng)).collect();
        let key_concepts = topics
            .iter()
            .map(|t| (t.clone(), (0..rng.gen_range(0..8)).map(|_| fuzz_text(&mut rng)).collect()))
            .collect();
        let fields = ConceptFields { level: *levels.choose(&mut rng).unwrap(), subject: fuzz_text(&mut rng), topics, key_concepts };
        let raw = serialize_concept_output(&fields);
        let once = parse_concept_output(&raw).map_err(|e| format!("case {case}: {e}"))?;
        let s1 = serialize_concept_output(&once);
        let twice = parse_concept_output(&s1).map_err(|e| format!("case {case}: {e}"))?;
        check!(once == twice && s1 == serialize_concept_output(&twice), "case {case} is not a fixpoint");
        ConceptSet::from_fields("fuzz", once).validate().map_err(|e| format!("case {case}: {e}"))?;
    }
    Ok("level-1 example, both concept texts, 1000 fuzzed records".into())
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("projection curves", projection_curves),
        ("known-generator recovery", generator_recovery),
        ("inverse-query consistency", inverse_consistency),
        ("softmax-walk correctness", softmax_walks),
        ("grounding oracle equivalence", grounding_oracle),
        ("end-to-end mock pipeline", end_to_end),
        ("filter stage", filter_stage),
        ("parser fidelity", parser_fidelity),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS  {}. {name} ({secs:.1}s): {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL  {}. {name} ({secs:.1}s): {d}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
