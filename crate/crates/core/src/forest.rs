//! CART decision trees and a bootstrap-aggregated random forest with
//! out-of-bag bookkeeping.
//!
//! Trees grow best-first by split gain so `max_leaf_nodes` is an exact bound.
//! At each split a fresh draw of `max_features` candidate features comes from
//! the tree's RNG stream; per-tree streams derive from `(seed, tree_index)`,
//! so training is schedule-independent.

use std::io::{Read, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_rng, stream};

/// Domain-wide cap on split candidate features (the integrated table width).
pub const MAX_FEATURES_CAP: usize = 27;

const FOREST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("invalid training data: {0}")]
    InvalidTrainingData(String),
    #[error("forest was fit on {expected} samples, got {found}")]
    ForestTrainMismatch { expected: usize, found: usize },
    #[error("unsupported forest document version {0}")]
    UnsupportedVersion(u32),
    #[error("forest document: {0}")]
    Document(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Split quality measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Gini,
    Entropy,
}

impl Criterion {
    /// Node impurity from binary class counts. Gini is `1 - sum p_i^2`;
    /// entropy is `-sum p_i log2 p_i` with `0 log 0 = 0`.
    pub fn impurity(self, counts: [u64; 2]) -> f64 {
        let total = counts[0] + counts[1];
        debug_assert!(total >= 1, "impurity needs at least one sample");
        let p0 = counts[0] as f64 / total as f64;
        let p1 = counts[1] as f64 / total as f64;
        match self {
            Criterion::Gini => 1.0 - p0 * p0 - p1 * p1,
            Criterion::Entropy => {
                let term = |p: f64| if p > 0.0 { -p * p.log2() } else { 0.0 };
                term(p0) + term(p1)
            }
        }
    }
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Criterion::Gini => write!(f, "gini"),
            Criterion::Entropy => write!(f, "entropy"),
        }
    }
}

impl std::str::FromStr for Criterion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gini" => Ok(Criterion::Gini),
            "entropy" => Ok(Criterion::Entropy),
            other => Err(format!("unknown criterion {other:?}")),
        }
    }
}

/// The five tuned hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub criterion: Criterion,
    pub max_leaf_nodes: usize,
    pub max_features: usize,
    pub n_trees: usize,
    pub min_samples_split: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            criterion: Criterion::Entropy,
            max_leaf_nodes: 10,
            max_features: 4,
            n_trees: 10,
            min_samples_split: 7,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), ForestError> {
        if self.max_leaf_nodes < 2 {
            return Err(ForestError::InvalidHyperparams(format!(
                "max_leaf_nodes {} < 2",
                self.max_leaf_nodes
            )));
        }
        if self.max_features < 1 || self.max_features > MAX_FEATURES_CAP {
            return Err(ForestError::InvalidHyperparams(format!(
                "max_features {} outside [1, {MAX_FEATURES_CAP}]",
                self.max_features
            )));
        }
        if self.n_trees < 1 {
            return Err(ForestError::InvalidHyperparams("n_trees < 1".to_string()));
        }
        if self.min_samples_split < 2 {
            return Err(ForestError::InvalidHyperparams(format!(
                "min_samples_split {} < 2",
                self.min_samples_split
            )));
        }
        Ok(())
    }
}

/// A tree node: an axis-aligned split or a leaf holding training class
/// counts. Splits send `value <= threshold` left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Internal {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        counts: [u64; 2],
    },
}

impl TreeNode {
    /// Majority-vote class for a record; leaf ties vote class 0.
    pub fn predict(&self, row: &[f64]) -> u8 {
        self.predict_with_override(row, usize::MAX, 0.0)
    }

    /// Predict with one feature's value substituted. Used by permutation
    /// importance to avoid cloning rows.
    pub fn predict_with_override(&self, row: &[f64], feature: usize, value: f64) -> u8 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Internal {
                    feature: f,
                    threshold,
                    left,
                    right,
                } => {
                    let v = if *f == feature { value } else { row[*f] };
                    node = if v <= *threshold { left } else { right };
                }
                TreeNode::Leaf { counts } => return u8::from(counts[1] > counts[0]),
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Internal { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    /// Training class counts reaching this node (sum of descendant leaves).
    pub fn counts(&self) -> [u64; 2] {
        match self {
            TreeNode::Leaf { counts } => *counts,
            TreeNode::Internal { left, right, .. } => {
                let l = left.counts();
                let r = right.counts();
                [l[0] + r[0], l[1] + r[1]]
            }
        }
    }

    /// Record each feature consulted anywhere in the tree.
    pub fn mark_used_features(&self, used: &mut [bool]) {
        if let TreeNode::Internal {
            feature,
            left,
            right,
            ..
        } = self
        {
            used[*feature] = true;
            left.mark_used_features(used);
            right.mark_used_features(used);
        }
    }
}

/// A chosen split with its impurity decrease.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

fn class_counts(y: &[u8], idx: &[usize]) -> [u64; 2] {
    let mut counts = [0u64; 2];
    for &i in idx {
        counts[y[i] as usize] += 1;
    }
    counts
}

/// Exhaustive best split over the candidate features: thresholds at midpoints
/// between consecutive distinct sorted values, maximizing the weighted
/// impurity decrease. Ties break to the lower feature id, then the lower
/// threshold. Returns `None` when no split has positive gain.
pub fn best_split(
    x: &[Vec<f64>],
    y: &[u8],
    idx: &[usize],
    candidates: &[usize],
    criterion: Criterion,
) -> Option<Split> {
    let n = idx.len();
    if n < 2 || candidates.is_empty() {
        return None;
    }
    let parent_counts = class_counts(y, idx);
    let parent_impurity = criterion.impurity(parent_counts);
    if parent_impurity <= 0.0 {
        return None;
    }
    let mut sorted_candidates = candidates.to_vec();
    sorted_candidates.sort_unstable();
    sorted_candidates.dedup();

    let mut best: Option<Split> = None;
    let mut pairs: Vec<(f64, u8)> = Vec::with_capacity(n);
    for &feature in &sorted_candidates {
        pairs.clear();
        pairs.extend(idx.iter().map(|&i| (x[i][feature], y[i])));
        pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

        let mut left = [0u64; 2];
        for split_at in 1..n {
            let (prev_value, prev_label) = pairs[split_at - 1];
            left[prev_label as usize] += 1;
            let value = pairs[split_at].0;
            if value <= prev_value {
                continue;
            }
            let right = [
                parent_counts[0] - left[0],
                parent_counts[1] - left[1],
            ];
            let n_left = split_at as f64;
            let n_right = (n - split_at) as f64;
            let weighted = (n_left * criterion.impurity(left)
                + n_right * criterion.impurity(right))
                / n as f64;
            let gain = parent_impurity - weighted;
            if gain <= 0.0 {
                continue;
            }
            let mut threshold = prev_value + (value - prev_value) / 2.0;
            if threshold >= value {
                // Adjacent floats: fall back to the lower value so the
                // partition realized by `<=` matches the counted one.
                threshold = prev_value;
            }
            let replace = match best {
                None => true,
                Some(b) => gain > b.gain,
            };
            if replace {
                best = Some(Split {
                    feature,
                    threshold,
                    gain,
                });
            }
        }
    }
    best
}

struct PendingLeaf {
    slot: usize,
    idx: Vec<usize>,
    split: Split,
    seq: usize,
}

enum ArenaNode {
    Leaf {
        counts: [u64; 2],
    },
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

fn draw_candidates(pool: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let k = k.min(pool.len());
    let mut drawn: Vec<usize> = rand::seq::index::sample(rng, pool.len(), k)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    drawn.sort_unstable();
    drawn
}

/// Grow one tree best-first over the index multiset `idx`. Nodes stop
/// splitting when smaller than `min_samples_split`, pure, or gainless; growth
/// stops at `max_leaf_nodes` leaves.
pub fn grow_tree(
    x: &[Vec<f64>],
    y: &[u8],
    idx: &[usize],
    hp: &Hyperparams,
    pool: &[usize],
    rng: &mut ChaCha8Rng,
) -> TreeNode {
    let mut arena: Vec<ArenaNode> = Vec::new();
    let mut pending: Vec<PendingLeaf> = Vec::new();
    let mut seq = 0usize;

    let evaluate = |slot: usize,
                        node_idx: Vec<usize>,
                        arena: &mut Vec<ArenaNode>,
                        pending: &mut Vec<PendingLeaf>,
                        rng: &mut ChaCha8Rng,
                        seq: &mut usize| {
        debug_assert!(matches!(arena[slot], ArenaNode::Leaf { .. }));
        if node_idx.len() >= hp.min_samples_split {
            let counts = class_counts(y, &node_idx);
            if hp.criterion.impurity(counts) > 0.0 {
                let candidates = draw_candidates(pool, hp.max_features, rng);
                if let Some(split) = best_split(x, y, &node_idx, &candidates, hp.criterion) {
                    pending.push(PendingLeaf {
                        slot,
                        idx: node_idx,
                        split,
                        seq: *seq,
                    });
                    *seq += 1;
                }
            }
        }
    };

    arena.push(ArenaNode::Leaf {
        counts: class_counts(y, idx),
    });
    evaluate(0, idx.to_vec(), &mut arena, &mut pending, rng, &mut seq);

    let mut leaves = 1usize;
    while leaves < hp.max_leaf_nodes && !pending.is_empty() {
        // Highest gain first; ties go to the earlier-created node.
        let mut pick = 0;
        for i in 1..pending.len() {
            let better = pending[i].split.gain > pending[pick].split.gain
                || (pending[i].split.gain == pending[pick].split.gain
                    && pending[i].seq < pending[pick].seq);
            if better {
                pick = i;
            }
        }
        let PendingLeaf {
            slot, idx, split, ..
        } = pending.swap_remove(pick);

        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| x[i][split.feature] <= split.threshold);
        debug_assert!(!left_idx.is_empty() && !right_idx.is_empty());

        let left_slot = arena.len();
        arena.push(ArenaNode::Leaf {
            counts: class_counts(y, &left_idx),
        });
        let right_slot = arena.len();
        arena.push(ArenaNode::Leaf {
            counts: class_counts(y, &right_idx),
        });
        arena[slot] = ArenaNode::Internal {
            feature: split.feature,
            threshold: split.threshold,
            left: left_slot,
            right: right_slot,
        };
        leaves += 1;

        evaluate(left_slot, left_idx, &mut arena, &mut pending, rng, &mut seq);
        evaluate(right_slot, right_idx, &mut arena, &mut pending, rng, &mut seq);
    }

    fn build(arena: &[ArenaNode], slot: usize) -> TreeNode {
        match &arena[slot] {
            ArenaNode::Leaf { counts } => TreeNode::Leaf { counts: *counts },
            ArenaNode::Internal {
                feature,
                threshold,
                left,
                right,
            } => TreeNode::Internal {
                feature: *feature,
                threshold: *threshold,
                left: Box::new(build(arena, *left)),
                right: Box::new(build(arena, *right)),
            },
        }
    }
    build(&arena, 0)
}

/// A trained ensemble with bootstrap bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub hyperparams: Hyperparams,
    pub seed: u64,
    pub n_train: usize,
    pub n_features: usize,
    /// Variable id of each feature column.
    pub feature_ids: Vec<u32>,
    pub trees: Vec<TreeNode>,
    /// Per-tree multiset of sampled training indices (draw order).
    pub bootstrap_indices: Vec<Vec<usize>>,
}

/// Optional knobs for fitting beyond the hyperparameters.
#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    /// Variable id per column; defaults to `0..n_features`.
    pub feature_ids: Option<Vec<u32>>,
    /// Restrict split candidates to these columns; defaults to all columns.
    pub candidate_pool: Option<Vec<usize>>,
}

/// Fit a forest of `n_trees` trees, each on a bootstrap of size `n` sampled
/// with replacement from its own `(seed, tree_index)` stream.
pub fn fit_forest(
    x: &[Vec<f64>],
    y: &[u8],
    hp: &Hyperparams,
    seed: u64,
) -> Result<Forest, ForestError> {
    fit_forest_with_options(x, y, hp, seed, &FitOptions::default())
}

pub fn fit_forest_with_options(
    x: &[Vec<f64>],
    y: &[u8],
    hp: &Hyperparams,
    seed: u64,
    opts: &FitOptions,
) -> Result<Forest, ForestError> {
    hp.validate()?;
    if x.is_empty() {
        return Err(ForestError::InvalidTrainingData("no samples".to_string()));
    }
    if x.len() != y.len() {
        return Err(ForestError::InvalidTrainingData(format!(
            "{} rows vs {} labels",
            x.len(),
            y.len()
        )));
    }
    let d = x[0].len();
    if d == 0 {
        return Err(ForestError::InvalidTrainingData("no features".to_string()));
    }
    if x.iter().any(|row| row.len() != d) {
        return Err(ForestError::InvalidTrainingData(
            "ragged feature matrix".to_string(),
        ));
    }
    if y.iter().any(|&l| l > 1) {
        return Err(ForestError::InvalidTrainingData(
            "labels must be 0 or 1".to_string(),
        ));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ForestError::InvalidTrainingData(
            "features must be finite".to_string(),
        ));
    }
    let pool: Vec<usize> = match &opts.candidate_pool {
        Some(p) => {
            if p.is_empty() || p.iter().any(|&f| f >= d) {
                return Err(ForestError::InvalidTrainingData(format!(
                    "candidate pool must be a nonempty subset of 0..{d}"
                )));
            }
            let mut p = p.clone();
            p.sort_unstable();
            p.dedup();
            p
        }
        None => (0..d).collect(),
    };
    let feature_ids = match &opts.feature_ids {
        Some(ids) => {
            if ids.len() != d {
                return Err(ForestError::InvalidTrainingData(format!(
                    "{} feature ids for {d} columns",
                    ids.len()
                )));
            }
            ids.clone()
        }
        None => (0..d as u32).collect(),
    };

    let n = x.len();
    let mut trees = Vec::with_capacity(hp.n_trees);
    let mut bootstrap_indices = Vec::with_capacity(hp.n_trees);
    for t in 0..hp.n_trees {
        let mut rng = derive_rng(seed, &[stream::TREE, t as u64]);
        let bootstrap: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
        let tree = grow_tree(x, y, &bootstrap, hp, &pool, &mut rng);
        trees.push(tree);
        bootstrap_indices.push(bootstrap);
    }
    Ok(Forest {
        hyperparams: hp.clone(),
        seed,
        n_train: n,
        n_features: d,
        feature_ids,
        trees,
        bootstrap_indices,
    })
}

/// An aggregated out-of-bag prediction for one training sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OobVote {
    /// Fraction of OOB trees voting class 1.
    pub probability: f64,
    /// 1 iff probability strictly exceeds 0.5 (ties vote the majority
    /// class 0).
    pub vote: u8,
}

impl Forest {
    /// Probability of class 1: the fraction of trees voting 1.
    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        assert_eq!(row.len(), self.n_features, "record has wrong feature count");
        let votes = self
            .trees
            .iter()
            .filter(|t| t.predict(row) == 1)
            .count();
        votes as f64 / self.trees.len() as f64
    }

    /// Class prediction: 1 iff the vote fraction reaches `prob_threshold`.
    pub fn predict(&self, row: &[f64], prob_threshold: f64) -> u8 {
        u8::from(self.predict_proba(row) >= prob_threshold)
    }

    /// Per-tree out-of-bag membership: `mask[t][i]` is true when sample `i`
    /// never appears in tree `t`'s bootstrap.
    pub fn oob_masks(&self) -> Vec<Vec<bool>> {
        self.bootstrap_indices
            .iter()
            .map(|bootstrap| {
                let mut in_bag = vec![false; self.n_train];
                for &i in bootstrap {
                    in_bag[i] = true;
                }
                in_bag.iter().map(|&b| !b).collect()
            })
            .collect()
    }

    /// Aggregate votes for each training sample using only trees that hold it
    /// out of bag. Samples in every bootstrap get `None`.
    pub fn oob_predictions(&self, x: &[Vec<f64>]) -> Result<Vec<Option<OobVote>>, ForestError> {
        if x.len() != self.n_train {
            return Err(ForestError::ForestTrainMismatch {
                expected: self.n_train,
                found: x.len(),
            });
        }
        let masks = self.oob_masks();
        let mut out = Vec::with_capacity(x.len());
        for (i, row) in x.iter().enumerate() {
            let mut votes = 0u32;
            let mut total = 0u32;
            for (t, tree) in self.trees.iter().enumerate() {
                if masks[t][i] {
                    total += 1;
                    votes += u32::from(tree.predict(row) == 1);
                }
            }
            out.push(if total == 0 {
                None
            } else {
                let probability = f64::from(votes) / f64::from(total);
                Some(OobVote {
                    probability,
                    vote: u8::from(probability > 0.5),
                })
            });
        }
        Ok(out)
    }

    /// Columns consulted by at least one split.
    pub fn used_features(&self) -> Vec<bool> {
        let mut used = vec![false; self.n_features];
        for tree in &self.trees {
            tree.mark_used_features(&mut used);
        }
        used
    }
}

#[derive(Serialize, Deserialize)]
struct ForestDoc {
    version: u32,
    forest: Forest,
}

/// Serialize a forest to versioned JSON. Round-trips bit-exactly.
pub fn write_forest_json<W: Write>(forest: &Forest, output: W) -> Result<(), ForestError> {
    let doc = ForestDoc {
        version: FOREST_FORMAT_VERSION,
        forest: forest.clone(),
    };
    serde_json::to_writer_pretty(output, &doc)?;
    Ok(())
}

pub fn read_forest_json<R: Read>(input: R) -> Result<Forest, ForestError> {
    let doc: ForestDoc = serde_json::from_reader(input)?;
    if doc.version != FOREST_FORMAT_VERSION {
        return Err(ForestError::UnsupportedVersion(doc.version));
    }
    Ok(doc.forest)
}
