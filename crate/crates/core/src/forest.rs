//! Bagged CART forests over embedding vectors.
//!
//! Each tree is grown on a bootstrap sample of the training set, trying
//! `ceil(sqrt(dim))` random features at every split. Binary forests split on
//! Gini impurity and store the positive fraction at leaves; regression
//! forests split on squared error and store the mean label.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingVector;
use crate::error::{Error, Result};
use crate::hashing::derive_seed;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Binary,
    Regression,
}

impl Task {
    fn label_range(self) -> (f64, f64) {
        match self {
            Task::Binary => (0.0, 1.0),
            Task::Regression => (1.0, 10.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub embedding: EmbeddingVector,
    pub label: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// Nodes in an arena; the root is `nodes[0]`. Samples with
/// `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: 12,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub format_version: u32,
    pub task: Task,
    pub dim: usize,
    pub n_trees: usize,
    pub max_depth: usize,
    pub seed: u64,
    pub trees: Vec<Tree>,
}

impl Forest {
    /// Mean of the tree outputs. Tree outputs are summed in sorted order so
    /// the result does not depend on tree order.
    pub fn predict(&self, v: &EmbeddingVector) -> Result<f64> {
        if v.dim() != self.dim {
            return Err(Error::Argument(format!(
                "vector has dim {} but forest was trained on dim {}",
                v.dim(),
                self.dim
            )));
        }
        let mut outs: Vec<f64> = self.trees.iter().map(|t| t.predict(v.values())).collect();
        outs.sort_by(f64::total_cmp);
        Ok(outs.iter().sum::<f64>() / outs.len() as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: Forest = serde_json::from_str(s)?;
        if f.format_version != FORMAT_VERSION {
            return Err(Error::Integrity(format!(
                "unsupported forest format_version {}",
                f.format_version
            )));
        }
        Ok(f)
    }
}

pub fn train_forest(examples: &[LabeledExample], task: Task, params: &ForestParams) -> Result<Forest> {
    if examples.len() < 2 {
        return Err(Error::Argument(format!(
            "need at least 2 training examples, got {}",
            examples.len()
        )));
    }
    if params.n_trees == 0 {
        return Err(Error::Argument("n_trees must be positive".into()));
    }
    let dim = examples[0].embedding.dim();
    let (lo, hi) = task.label_range();
    for (i, e) in examples.iter().enumerate() {
        if e.embedding.dim() != dim {
            return Err(Error::Argument(format!("example {i} has dim {}, expected {dim}", e.embedding.dim())));
        }
        let ok = match task {
            Task::Binary => e.label == 0.0 || e.label == 1.0,
            Task::Regression => (lo..=hi).contains(&e.label),
        };
        if !ok {
            return Err(Error::Argument(format!("label {} of example {i} is invalid for {task:?}", e.label)));
        }
    }
    if task == Task::Binary {
        let pos = examples.iter().filter(|e| e.label == 1.0).count();
        if pos == 0 || pos == examples.len() {
            return Err(Error::Training("binary training set contains a single class".into()));
        }
    }

    let xs: Vec<&[f64]> = examples.iter().map(|e| e.embedding.values()).collect();
    let ys: Vec<f64> = examples.iter().map(|e| e.label).collect();
    let data = TrainData {
        xs: &xs,
        ys: &ys,
        dim,
        task,
        max_depth: params.max_depth,
        n_features: (dim as f64).sqrt().ceil() as usize,
    };

    let trees: Vec<Tree> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, &[t as u64]));
            let n = xs.len();
            let bag: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            data.grow(bag, &mut rng)
        })
        .collect();

    Ok(Forest {
        format_version: FORMAT_VERSION,
        task,
        dim,
        n_trees: params.n_trees,
        max_depth: params.max_depth,
        seed: params.seed,
        trees,
    })
}

struct TrainData<'a> {
    xs: &'a [&'a [f64]],
    ys: &'a [f64],
    dim: usize,
    task: Task,
    max_depth: usize,
    n_features: usize,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl TrainData<'_> {
    fn grow(&self, bag: Vec<usize>, rng: &mut ChaCha8Rng) -> Tree {
        let mut tree = Tree { nodes: Vec::new() };
        self.build(&mut tree, bag, 0, rng);
        tree
    }

    fn leaf_value(&self, idx: &[usize]) -> f64 {
        idx.iter().map(|&i| self.ys[i]).sum::<f64>() / idx.len() as f64
    }

    fn build(&self, tree: &mut Tree, idx: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let me = tree.nodes.len();
        tree.nodes.push(Node::Leaf {
            value: self.leaf_value(&idx),
        });
        let first = self.ys[idx[0]];
        let pure = idx.iter().all(|&i| self.ys[i] == first);
        if depth >= self.max_depth || idx.len() < 2 || pure {
            return me;
        }
        let Some(split) = self.best_split(&idx, rng) else {
            return me;
        };
        let (left, right): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.xs[i][split.feature] <= split.threshold);
        let l = self.build(tree, left, depth + 1, rng);
        let r = self.build(tree, right, depth + 1, rng);
        tree.nodes[me] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: l,
            right: r,
        };
        me
    }

    /// Impurity of one side given its label count and label sum/sum of
    /// squares. Lower is better; the split score is the sum over both sides.
    fn impurity(&self, n: f64, sum: f64, sum_sq: f64) -> f64 {
        match self.task {
            // n * Gini = n * 2p(1-p) with p = sum/n
            Task::Binary => {
                let p = sum / n;
                n * 2.0 * p * (1.0 - p)
            }
            Task::Regression => sum_sq - sum * sum / n,
        }
    }

    fn best_split(&self, idx: &[usize], rng: &mut ChaCha8Rng) -> Option<BestSplit> {
        let features = sample_indices(rng, self.dim, self.n_features.min(self.dim));
        let total_n = idx.len() as f64;
        let total_sum: f64 = idx.iter().map(|&i| self.ys[i]).sum();
        let total_sq: f64 = idx.iter().map(|&i| self.ys[i] * self.ys[i]).sum();
        let parent = self.impurity(total_n, total_sum, total_sq);

        let mut best: Option<BestSplit> = None;
        let mut order: Vec<usize> = idx.to_vec();
        for f in features.iter() {
            order.sort_by(|&a, &b| self.xs[a][f].total_cmp(&self.xs[b][f]));
            let (mut n, mut sum, mut sq) = (0.0, 0.0, 0.0);
            for k in 0..order.len() - 1 {
                let y = self.ys[order[k]];
                n += 1.0;
                sum += y;
                sq += y * y;
                let here = self.xs[order[k]][f];
                let next = self.xs[order[k + 1]][f];
                if here == next {
                    continue;
                }
                let score = self.impurity(n, sum, sq)
                    + self.impurity(total_n - n, total_sum - sum, total_sq - sq);
                if score < parent - 1e-12 && best.as_ref().is_none_or(|b| score < b.score) {
                    let mut threshold = here + (next - here) / 2.0;
                    if threshold >= next {
                        threshold = here;
                    }
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        score,
                    });
                }
            }
        }
        best
    }
}
