//! Global concept co-occurrence graph, softmax random walks over it, and
//! Jaccard grounding of sampled concept sets back to source documents.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concept::{canonical_display, canonical_key, ConceptSet};
use crate::error::{Error, Result};
use crate::hashing::derive_seed;

pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubGraph {
    TopicTopic,
    TopicKc,
    KcKc,
}

/// `ln(count + epsilon)`.
pub fn edge_weight(count: u64, epsilon: f64) -> f64 {
    (count as f64 + epsilon).ln()
}

type EdgeMap = BTreeMap<(usize, usize), u64>;
type Adjacency = Vec<Vec<(usize, u64)>>;

/// Undirected graph over topic nodes and key-concept nodes. Node arrays are
/// sorted by canonical key; each node displays as the lexicographically
/// smallest surface form seen for it.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptGraph {
    pub epsilon: f64,
    topics: Vec<String>,
    kcs: Vec<String>,
    topic_index: HashMap<String, usize>,
    kc_index: HashMap<String, usize>,
    /// `(i, j)` with `i < j`.
    tt: EdgeMap,
    /// `(topic, kc)`.
    tk: EdgeMap,
    /// `(i, j)` with `i < j`.
    kk: EdgeMap,
    tt_adj: Adjacency,
    tk_adj: Adjacency,
    kt_adj: Adjacency,
    kk_adj: Adjacency,
}

fn display_variants<'a>(it: impl Iterator<Item = &'a String>, into: &mut BTreeMap<String, String>) {
    for s in it {
        let d = canonical_display(s);
        let k = canonical_key(&d);
        if k.is_empty() {
            continue;
        }
        into.entry(k)
            .and_modify(|cur| {
                if d < *cur {
                    *cur = d.clone();
                }
            })
            .or_insert(d);
    }
}

fn index_of(nodes: &BTreeMap<String, String>) -> (Vec<String>, HashMap<String, usize>) {
    let mut names = Vec::with_capacity(nodes.len());
    let mut index = HashMap::with_capacity(nodes.len());
    for (i, (k, d)) in nodes.iter().enumerate() {
        names.push(d.clone());
        index.insert(k.clone(), i);
    }
    (names, index)
}

fn distinct_indexes<'a>(items: impl Iterator<Item = &'a String>, index: &HashMap<String, usize>) -> Vec<usize> {
    let set: BTreeSet<usize> = items.filter_map(|s| index.get(&canonical_key(s)).copied()).collect();
    set.into_iter().collect()
}

struct DocPairs {
    tt: Vec<(usize, usize)>,
    tk: Vec<(usize, usize)>,
    kk: Vec<(usize, usize)>,
}

/// Builds the graph: within each document every topic pair, every
/// (topic, key concept) pair and every key-concept pair co-occurs once.
pub fn build_graph(sets: &[ConceptSet], epsilon: f64) -> Result<ConceptGraph> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Argument(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut topic_nodes = BTreeMap::new();
    let mut kc_nodes = BTreeMap::new();
    for s in sets {
        display_variants(s.topics.iter(), &mut topic_nodes);
        display_variants(s.key_concepts.values().flatten(), &mut kc_nodes);
    }
    let (topics, topic_index) = index_of(&topic_nodes);
    let (kcs, kc_index) = index_of(&kc_nodes);

    let per_doc: Vec<DocPairs> = sets
        .par_iter()
        .map(|s| {
            let t = distinct_indexes(s.topics.iter(), &topic_index);
            let k = distinct_indexes(s.key_concepts.values().flatten(), &kc_index);
            let mut p = DocPairs { tt: Vec::new(), tk: Vec::new(), kk: Vec::new() };
            for (a, &i) in t.iter().enumerate() {
                p.tt.extend(t[a + 1..].iter().map(|&j| (i, j)));
                p.tk.extend(k.iter().map(|&j| (i, j)));
            }
            for (a, &i) in k.iter().enumerate() {
                p.kk.extend(k[a + 1..].iter().map(|&j| (i, j)));
            }
            p
        })
        .collect();

    let mut tt = EdgeMap::new();
    let mut tk = EdgeMap::new();
    let mut kk = EdgeMap::new();
    for p in per_doc {
        for e in p.tt {
            *tt.entry(e).or_insert(0) += 1;
        }
        for e in p.tk {
            *tk.entry(e).or_insert(0) += 1;
        }
        for e in p.kk {
            *kk.entry(e).or_insert(0) += 1;
        }
    }
    Ok(ConceptGraph::assemble(epsilon, topics, kcs, tt, tk, kk))
}

impl ConceptGraph {
    fn assemble(epsilon: f64, topics: Vec<String>, kcs: Vec<String>, tt: EdgeMap, tk: EdgeMap, kk: EdgeMap) -> Self {
        let mut tt_adj = vec![Vec::new(); topics.len()];
        let mut tk_adj = vec![Vec::new(); topics.len()];
        let mut kt_adj = vec![Vec::new(); kcs.len()];
        let mut kk_adj = vec![Vec::new(); kcs.len()];
        for (&(i, j), &c) in &tt {
            tt_adj[i].push((j, c));
            tt_adj[j].push((i, c));
        }
        for (&(t, k), &c) in &tk {
            tk_adj[t].push((k, c));
            kt_adj[k].push((t, c));
        }
        for (&(i, j), &c) in &kk {
            kk_adj[i].push((j, c));
            kk_adj[j].push((i, c));
        }
        for adj in [&mut tt_adj, &mut tk_adj, &mut kt_adj, &mut kk_adj] {
            for list in adj.iter_mut() {
                list.sort_unstable();
            }
        }
        let topic_index = topics.iter().enumerate().map(|(i, t)| (canonical_key(t), i)).collect();
        let kc_index = kcs.iter().enumerate().map(|(i, k)| (canonical_key(k), i)).collect();
        ConceptGraph {
            epsilon,
            topics,
            kcs,
            topic_index,
            kc_index,
            tt,
            tk,
            kk,
            tt_adj,
            tk_adj,
            kt_adj,
            kk_adj,
        }
    }

    pub fn topics(&self) -> &[String] {
        &self.topics
    }

    pub fn kcs(&self) -> &[String] {
        &self.kcs
    }

    pub fn topic_id(&self, name: &str) -> Option<usize> {
        self.topic_index.get(&canonical_key(name)).copied()
    }

    pub fn kc_id(&self, name: &str) -> Option<usize> {
        self.kc_index.get(&canonical_key(name)).copied()
    }

    /// Co-occurrence count of an edge; 0 if absent. `u` is the topic for
    /// [`SubGraph::TopicKc`].
    pub fn count(&self, sub: SubGraph, u: &str, v: &str) -> u64 {
        let ids = match sub {
            SubGraph::TopicTopic => self.topic_id(u).zip(self.topic_id(v)),
            SubGraph::TopicKc => self.topic_id(u).zip(self.kc_id(v)),
            SubGraph::KcKc => self.kc_id(u).zip(self.kc_id(v)),
        };
        let Some((i, j)) = ids else { return 0 };
        let key = match sub {
            SubGraph::TopicKc => (i, j),
            _ => (i.min(j), i.max(j)),
        };
        self.edges(sub).get(&key).copied().unwrap_or(0)
    }

    fn edges(&self, sub: SubGraph) -> &EdgeMap {
        match sub {
            SubGraph::TopicTopic => &self.tt,
            SubGraph::TopicKc => &self.tk,
            SubGraph::KcKc => &self.kk,
        }
    }

    pub fn edge_count(&self, sub: SubGraph) -> usize {
        self.edges(sub).len()
    }

    /// Outgoing neighbours of node `u` in a sub-graph: topic neighbours for
    /// the topic sub-graph, KCs of topic `u` for the topic–KC sub-graph,
    /// KC neighbours for the KC sub-graph.
    fn neighbors(&self, sub: SubGraph, u: usize) -> &[(usize, u64)] {
        match sub {
            SubGraph::TopicTopic => &self.tt_adj[u],
            SubGraph::TopicKc => &self.tk_adj[u],
            SubGraph::KcKc => &self.kk_adj[u],
        }
    }

    fn source_name(&self, sub: SubGraph, u: usize) -> &str {
        match sub {
            SubGraph::KcKc => &self.kcs[u],
            _ => &self.topics[u],
        }
    }

    fn target_name(&self, sub: SubGraph, v: usize) -> &str {
        match sub {
            SubGraph::TopicTopic => &self.topics[v],
            _ => &self.kcs[v],
        }
    }

    fn probs_by_id(&self, sub: SubGraph, u: usize) -> Result<Vec<(usize, f64)>> {
        let nb = self.neighbors(sub, u);
        if nb.is_empty() {
            return Err(Error::NoNeighbors(self.source_name(sub, u).to_string()));
        }
        let w: Vec<f64> = nb.iter().map(|&(_, c)| edge_weight(c, self.epsilon)).collect();
        let p = softmax(&w);
        Ok(nb.iter().zip(p).map(|(&(v, _), p)| (v, p)).collect())
    }

    /// Softmax over `ln(count + epsilon)` edge weights from `u`.
    pub fn transition_probs(&self, sub: SubGraph, u: &str) -> Result<Vec<(String, f64)>> {
        let id = match sub {
            SubGraph::KcKc => self.kc_id(u),
            _ => self.topic_id(u),
        }
        .ok_or_else(|| Error::Argument(format!("unknown node {u:?}")))?;
        Ok(self
            .probs_by_id(sub, id)?
            .into_iter()
            .map(|(v, p)| (self.target_name(sub, v).to_string(), p))
            .collect())
    }

    /// Draws one transition from `u`, as the walks do.
    pub fn sample_step<R: Rng>(&self, sub: SubGraph, u: &str, rng: &mut R) -> Result<String> {
        let id = match sub {
            SubGraph::KcKc => self.kc_id(u),
            _ => self.topic_id(u),
        }
        .ok_or_else(|| Error::Argument(format!("unknown node {u:?}")))?;
        match self.step(sub, id, rng) {
            Some(v) => Ok(self.target_name(sub, v).to_string()),
            None => Err(Error::NoNeighbors(u.to_string())),
        }
    }

    fn step<R: Rng>(&self, sub: SubGraph, u: usize, rng: &mut R) -> Option<usize> {
        let probs = self.probs_by_id(sub, u).ok()?;
        let r: f64 = rng.gen();
        let mut acc = 0.0;
        for &(v, p) in &probs {
            acc += p;
            if r < acc {
                return Some(v);
            }
        }
        probs.last().map(|&(v, _)| v)
    }

    pub fn to_file(&self) -> GraphFile {
        let flat = |m: &EdgeMap| m.iter().map(|(&(i, j), &c)| [i as u64, j as u64, c]).collect();
        GraphFile {
            epsilon: self.epsilon,
            topics: self.topics.clone(),
            kcs: self.kcs.clone(),
            tt_edges: flat(&self.tt),
            tk_edges: flat(&self.tk),
            kk_edges: flat(&self.kk),
        }
    }

    pub fn from_file(f: GraphFile) -> Result<Self> {
        if !(f.epsilon > 0.0) {
            return Err(Error::Integrity("graph epsilon must be positive".into()));
        }
        let load = |edges: &[[u64; 3]], a: usize, b: usize, ordered: bool| -> Result<EdgeMap> {
            let mut m = EdgeMap::new();
            for &[i, j, c] in edges {
                let (i, j) = (i as usize, j as usize);
                if i >= a || j >= b || c == 0 || (ordered && i >= j) {
                    return Err(Error::Integrity(format!("invalid edge [{i}, {j}, {c}]")));
                }
                m.insert((i, j), c);
            }
            Ok(m)
        };
        let tt = load(&f.tt_edges, f.topics.len(), f.topics.len(), true)?;
        let tk = load(&f.tk_edges, f.topics.len(), f.kcs.len(), false)?;
        let kk = load(&f.kk_edges, f.kcs.len(), f.kcs.len(), true)?;
        Ok(ConceptGraph::assemble(f.epsilon, f.topics, f.kcs, tt, tk, kk))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(&self.to_file())?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f: GraphFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        ConceptGraph::from_file(f)
    }

    /// Checks that a sample could have been produced by a walk on this
    /// graph: every traced step is an existing edge and the sample's lists
    /// are the deduplicated targets of its trace.
    pub fn validate_sample(&self, s: &SampledConceptSet) -> Result<()> {
        let bad = |m: String| Err(Error::Integrity(format!("{}: {m}", s.walk_id)));
        if s.topics.first().map(|t| canonical_key(t)) != Some(canonical_key(&s.seed_topic)) {
            return bad("first topic is not the seed topic".into());
        }
        let mut topics = vec![canonical_key(&s.seed_topic)];
        let mut kcs: Vec<String> = Vec::new();
        let mut phase = SubGraph::TopicTopic;
        let mut current: Option<String> = Some(s.seed_topic.clone());
        for st in &s.trace {
            if self.count(st.sub, &st.from, &st.to) == 0 {
                return bad(format!("step {:?} {:?} -> {:?} is not an edge", st.sub, st.from, st.to));
            }
            match (phase, st.sub) {
                (SubGraph::TopicTopic, SubGraph::TopicTopic) => {
                    if current.as_deref().map(canonical_key) != Some(canonical_key(&st.from)) {
                        return bad("topic walk is not contiguous".into());
                    }
                }
                (SubGraph::TopicTopic, SubGraph::TopicKc) => {
                    if !topics.contains(&canonical_key(&st.from)) {
                        return bad("KC step leaves from an unselected topic".into());
                    }
                    phase = SubGraph::KcKc;
                }
                (SubGraph::KcKc, SubGraph::KcKc) => {
                    if current.as_deref().map(canonical_key) != Some(canonical_key(&st.from)) {
                        return bad("KC walk is not contiguous".into());
                    }
                }
                _ => return bad(format!("unexpected {:?} step", st.sub)),
            }
            let to = canonical_key(&st.to);
            let list = if st.sub == SubGraph::TopicTopic { &mut topics } else { &mut kcs };
            if !list.contains(&to) {
                list.push(to);
            }
            current = Some(st.to.clone());
        }
        let keys = |v: &[String]| v.iter().map(|x| canonical_key(x)).collect::<Vec<_>>();
        if keys(&s.topics) != topics || keys(&s.key_concepts) != kcs {
            return bad("concept lists do not match the trace".into());
        }
        if kcs.is_empty() {
            return bad("sample has no key concepts".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub epsilon: f64,
    pub topics: Vec<String>,
    pub kcs: Vec<String>,
    pub tt_edges: Vec<[u64; 3]>,
    pub tk_edges: Vec<[u64; 3]>,
    pub kk_edges: Vec<[u64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub sub: SubGraph,
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledConceptSet {
    pub walk_id: String,
    pub topics: Vec<String>,
    pub key_concepts: Vec<String>,
    pub seed_topic: String,
    pub trace: Vec<TraceStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    pub topic_steps: Vec<u32>,
    pub kc_steps: Vec<u32>,
    pub epochs: u32,
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            topic_steps: vec![1, 2],
            kc_steps: vec![3, 4],
            epochs: 5,
            seed: 0,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        let subset = |v: &[u32], allowed: [u32; 2]| !v.is_empty() && v.iter().all(|x| allowed.contains(x));
        if !subset(&self.topic_steps, [1, 2]) {
            return Err(Error::Argument(format!("topic_steps {:?} must be a non-empty subset of {{1, 2}}", self.topic_steps)));
        }
        if !subset(&self.kc_steps, [3, 4]) {
            return Err(Error::Argument(format!("kc_steps {:?} must be a non-empty subset of {{3, 4}}", self.kc_steps)));
        }
        if self.epochs == 0 {
            return Err(Error::Argument("epochs must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct SampleRun {
    pub samples: Vec<SampledConceptSet>,
    /// Walk ids whose selected topics had no key-concept edges.
    pub skipped: Vec<String>,
}

/// Runs `cfg.epochs` passes; each pass seeds one walk from every topic in a
/// seeded shuffled order. Output order is walk order and is independent of
/// thread count.
pub fn sample_kg(g: &ConceptGraph, cfg: &WalkConfig) -> Result<SampleRun> {
    cfg.validate()?;
    if g.topics.is_empty() {
        return Err(Error::Argument("topic sub-graph is empty".into()));
    }
    let mut run = SampleRun::default();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..g.topics.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[u64::from(epoch)])));
        let outcomes: Vec<(String, Option<SampledConceptSet>)> = order
            .par_iter()
            .map(|&t| {
                let walk_id = format!("e{epoch}-t{t}");
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[u64::from(epoch), t as u64]));
                let s = walk_from(g, t, cfg, &walk_id, &mut rng);
                (walk_id, s)
            })
            .collect();
        for (id, s) in outcomes {
            match s {
                Some(s) => run.samples.push(s),
                None => {
                    log::warn!("walk {id} skipped: selected topics have no key-concept edges");
                    run.skipped.push(id);
                }
            }
        }
    }
    Ok(run)
}

fn walk_from(g: &ConceptGraph, seed_topic: usize, cfg: &WalkConfig, walk_id: &str, rng: &mut ChaCha8Rng) -> Option<SampledConceptSet> {
    let mut trace = Vec::new();
    let mut topics = vec![seed_topic];
    let n_topic_steps = *cfg.topic_steps.choose(rng).unwrap();
    let mut cur = seed_topic;
    for _ in 0..n_topic_steps {
        let Some(next) = g.step(SubGraph::TopicTopic, cur, rng) else { break };
        trace.push(TraceStep {
            sub: SubGraph::TopicTopic,
            from: g.topics[cur].clone(),
            to: g.topics[next].clone(),
        });
        if !topics.contains(&next) {
            topics.push(next);
        }
        cur = next;
    }

    let with_kcs: Vec<usize> = topics.iter().copied().filter(|&t| !g.tk_adj[t].is_empty()).collect();
    let &from = with_kcs.choose(rng)?;
    let first = g.step(SubGraph::TopicKc, from, rng)?;
    trace.push(TraceStep {
        sub: SubGraph::TopicKc,
        from: g.topics[from].clone(),
        to: g.kcs[first].clone(),
    });
    let mut kcs = vec![first];
    let n_kc_steps = *cfg.kc_steps.choose(rng).unwrap();
    let mut cur = first;
    for _ in 0..n_kc_steps {
        let Some(next) = g.step(SubGraph::KcKc, cur, rng) else { break };
        trace.push(TraceStep {
            sub: SubGraph::KcKc,
            from: g.kcs[cur].clone(),
            to: g.kcs[next].clone(),
        });
        if !kcs.contains(&next) {
            kcs.push(next);
        }
        cur = next;
    }

    Some(SampledConceptSet {
        walk_id: walk_id.to_string(),
        topics: topics.iter().map(|&t| g.topics[t].clone()).collect(),
        key_concepts: kcs.iter().map(|&k| g.kcs[k].clone()).collect(),
        seed_topic: g.topics[seed_topic].clone(),
        trace,
    })
}

/// Max-shifted softmax.
pub fn softmax(w: &[f64]) -> Vec<f64> {
    let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ex: Vec<f64> = w.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = ex.iter().sum();
    ex.into_iter().map(|e| e / z).collect()
}

fn jaccard_from_counts(inter: usize, a: usize, b: usize) -> f64 {
    let union = a + b - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// `|a ∩ b| / |a ∪ b|`, defined as 0 when both sets are empty.
pub fn jaccard<T: Eq + std::hash::Hash>(a: &HashSet<T>, b: &HashSet<T>) -> f64 {
    let inter = a.iter().filter(|x| b.contains(x)).count();
    jaccard_from_counts(inter, a.len(), b.len())
}

/// Concept fingerprint of a document: canonical keys of its topics and all
/// of its key concepts.
pub fn fingerprint(set: &ConceptSet) -> HashSet<String> {
    set.topics
        .iter()
        .chain(set.key_concepts.values().flatten())
        .map(|s| canonical_key(s))
        .collect()
}

pub fn sample_fingerprint(s: &SampledConceptSet) -> HashSet<String> {
    s.topics.iter().chain(&s.key_concepts).map(|x| canonical_key(x)).collect()
}

/// Inverted index over document fingerprints for repeated grounding
/// queries.
pub struct GroundingIndex {
    /// Sorted by doc id.
    doc_ids: Vec<String>,
    sizes: Vec<usize>,
    postings: HashMap<String, Vec<usize>>,
}

impl GroundingIndex {
    pub fn new(sets: &[ConceptSet]) -> Self {
        let mut docs: Vec<(&str, HashSet<String>)> = sets.iter().map(|s| (s.doc_id.as_str(), fingerprint(s))).collect();
        docs.sort_by(|a, b| a.0.cmp(b.0));
        let mut postings: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, (_, fp)) in docs.iter().enumerate() {
            for k in fp {
                postings.entry(k.clone()).or_default().push(i);
            }
        }
        GroundingIndex {
            doc_ids: docs.iter().map(|d| d.0.to_string()).collect(),
            sizes: docs.iter().map(|d| d.1.len()).collect(),
            postings,
        }
    }

    /// Top `k` documents by Jaccard similarity to `query`, ties broken by
    /// ascending doc id.
    pub fn top_k(&self, query: &HashSet<String>, k: usize) -> Vec<(String, f64)> {
        let mut inter: HashMap<usize, usize> = HashMap::new();
        for q in query {
            for &d in self.postings.get(q).map(Vec::as_slice).unwrap_or(&[]) {
                *inter.entry(d).or_insert(0) += 1;
            }
        }
        let mut scored: Vec<(usize, f64)> = inter
            .iter()
            .map(|(&d, &n)| (d, jaccard_from_counts(n, query.len(), self.sizes[d])))
            .collect();
        // doc positions are in id order, so comparing positions breaks ties
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        // documents sharing nothing score 0 and fill remaining places in id order
        let mut d = 0;
        while scored.len() < k && d < self.doc_ids.len() {
            if !inter.contains_key(&d) {
                scored.push((d, 0.0));
            }
            d += 1;
        }
        scored.into_iter().map(|(d, s)| (self.doc_ids[d].clone(), s)).collect()
    }
}

pub fn ground_documents(kg: &SampledConceptSet, sets: &[ConceptSet], k: usize) -> Vec<String> {
    GroundingIndex::new(sets)
        .top_k(&sample_fingerprint(kg), k)
        .into_iter()
        .map(|(id, _)| id)
        .collect()
}
