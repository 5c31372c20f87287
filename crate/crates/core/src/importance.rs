//! Variable importance: mean decrease impurity from accumulated split gains,
//! and permutation importance (mean decrease accuracy) over out-of-bag
//! predictions, with the percentage normalization that makes importance
//! columns sum to 100.

use std::io::Write;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::forest::{Forest, ForestError, TreeNode};
use crate::rng::{derive_rng, stream};

#[derive(Debug, Error)]
pub enum ImportanceError {
    #[error("no training sample has out-of-bag coverage")]
    NoOobCoverage,
    #[error(transparent)]
    Forest(#[from] ForestError),
}

/// Mean decrease impurity per feature: for each split, the node's sample
/// fraction times its impurity decrease, summed per feature and averaged over
/// trees. Features never used score exactly 0.
pub fn mdi(forest: &Forest) -> Vec<f64> {
    let mut totals = vec![0.0; forest.n_features];
    for tree in &forest.trees {
        let root_counts = tree.counts();
        let n_root = (root_counts[0] + root_counts[1]) as f64;
        accumulate_mdi(tree, forest.hyperparams.criterion, n_root, &mut totals);
    }
    for v in &mut totals {
        *v /= forest.trees.len() as f64;
    }
    totals
}

fn accumulate_mdi(
    node: &TreeNode,
    criterion: crate::forest::Criterion,
    n_root: f64,
    out: &mut [f64],
) -> [u64; 2] {
    match node {
        TreeNode::Leaf { counts } => *counts,
        TreeNode::Internal {
            feature,
            left,
            right,
            ..
        } => {
            let lc = accumulate_mdi(left, criterion, n_root, out);
            let rc = accumulate_mdi(right, criterion, n_root, out);
            let counts = [lc[0] + rc[0], lc[1] + rc[1]];
            let n = (counts[0] + counts[1]) as f64;
            let nl = (lc[0] + lc[1]) as f64;
            let nr = (rc[0] + rc[1]) as f64;
            let gain = criterion.impurity(counts)
                - (nl * criterion.impurity(lc) + nr * criterion.impurity(rc)) / n;
            out[*feature] += (n / n_root) * gain;
            counts
        }
    }
}

/// Indices of training samples with at least one OOB tree, plus each one's
/// OOB tree list.
struct OobEvaluation {
    sample_indices: Vec<usize>,
    trees_per_sample: Vec<Vec<usize>>,
}

fn oob_evaluation(forest: &Forest) -> Result<OobEvaluation, ImportanceError> {
    let masks = forest.oob_masks();
    let mut sample_indices = Vec::new();
    let mut trees_per_sample = Vec::new();
    for i in 0..forest.n_train {
        let trees: Vec<usize> = (0..forest.trees.len()).filter(|&t| masks[t][i]).collect();
        if !trees.is_empty() {
            sample_indices.push(i);
            trees_per_sample.push(trees);
        }
    }
    if sample_indices.is_empty() {
        return Err(ImportanceError::NoOobCoverage);
    }
    Ok(OobEvaluation {
        sample_indices,
        trees_per_sample,
    })
}

fn oob_correct_with_override(
    forest: &Forest,
    x: &[Vec<f64>],
    y: &[u8],
    eval: &OobEvaluation,
    feature: usize,
    values: Option<&[f64]>,
) -> u64 {
    let mut correct = 0u64;
    for (j, &i) in eval.sample_indices.iter().enumerate() {
        let mut votes = 0u32;
        let trees = &eval.trees_per_sample[j];
        for &t in trees {
            let predicted = match values {
                Some(vals) => forest.trees[t].predict_with_override(&x[i], feature, vals[j]),
                None => forest.trees[t].predict(&x[i]),
            };
            votes += u32::from(predicted == 1);
        }
        let probability = f64::from(votes) / trees.len() as f64;
        let vote = u8::from(probability > 0.5);
        correct += u64::from(vote == y[i]);
    }
    correct
}

/// Permutation importance over OOB predictions. For each feature, the drop
/// from baseline OOB accuracy to the mean accuracy across `shuffles` random
/// permutations of that feature's column (restricted to the OOB-evaluable
/// samples; training data is never mutated). Features the forest never
/// consults yield exactly 0. Permutation streams are keyed by
/// `(seed, feature, shuffle)`, so results do not depend on processing order.
pub fn mda(
    forest: &Forest,
    x: &[Vec<f64>],
    y: &[u8],
    shuffles: usize,
    seed: u64,
) -> Result<Vec<f64>, ImportanceError> {
    assert!(shuffles >= 1, "need at least one shuffle");
    if x.len() != forest.n_train {
        return Err(ImportanceError::Forest(ForestError::ForestTrainMismatch {
            expected: forest.n_train,
            found: x.len(),
        }));
    }
    let eval = oob_evaluation(forest)?;
    let baseline_correct = oob_correct_with_override(forest, x, y, &eval, usize::MAX, None);
    let n_eval = eval.sample_indices.len() as u64;
    let used = forest.used_features();
    let mut raw = vec![0.0; forest.n_features];
    for feature in 0..forest.n_features {
        if !used[feature] {
            continue;
        }
        let column: Vec<f64> = eval.sample_indices.iter().map(|&i| x[i][feature]).collect();
        let mut permuted_correct = 0u64;
        for shuffle in 0..shuffles {
            let mut rng = derive_rng(seed, &[stream::MDA, feature as u64, shuffle as u64]);
            let mut permuted = column.clone();
            permuted.shuffle(&mut rng);
            permuted_correct +=
                oob_correct_with_override(forest, x, y, &eval, feature, Some(&permuted));
        }
        // Integer numerator: permutations that change no prediction score
        // exactly zero.
        let diff = baseline_correct as i64 * shuffles as i64 - permuted_correct as i64;
        raw[feature] = diff as f64 / (shuffles as u64 * n_eval) as f64;
    }
    Ok(raw)
}

/// Permutation importance evaluated on a held-out set with full-forest
/// predictions instead of OOB votes.
pub fn mda_on_test(
    forest: &Forest,
    x: &[Vec<f64>],
    y: &[u8],
    shuffles: usize,
    seed: u64,
) -> Result<Vec<f64>, ImportanceError> {
    assert!(shuffles >= 1, "need at least one shuffle");
    assert!(!x.is_empty(), "need at least one evaluation sample");
    let correct_count = |feature: usize, values: Option<&[f64]>| -> u64 {
        let mut correct = 0u64;
        for (j, row) in x.iter().enumerate() {
            let votes = forest
                .trees
                .iter()
                .filter(|t| match values {
                    Some(vals) => t.predict_with_override(row, feature, vals[j]) == 1,
                    None => t.predict(row) == 1,
                })
                .count();
            let probability = votes as f64 / forest.trees.len() as f64;
            correct += u64::from(u8::from(probability >= 0.5) == y[j]);
        }
        correct
    };
    let baseline_correct = correct_count(usize::MAX, None);
    let used = forest.used_features();
    let mut raw = vec![0.0; forest.n_features];
    for feature in 0..forest.n_features {
        if !used[feature] {
            continue;
        }
        let column: Vec<f64> = x.iter().map(|row| row[feature]).collect();
        let mut permuted_correct = 0u64;
        for shuffle in 0..shuffles {
            let mut rng = derive_rng(seed, &[stream::MDA, feature as u64, shuffle as u64]);
            let mut permuted = column.clone();
            permuted.shuffle(&mut rng);
            permuted_correct += correct_count(feature, Some(&permuted));
        }
        let diff = baseline_correct as i64 * shuffles as i64 - permuted_correct as i64;
        raw[feature] = diff as f64 / (shuffles * x.len()) as f64;
    }
    Ok(raw)
}

/// Convert raw importance to percentages: negatives clip to 0; if any mass
/// remains the result sums to 100, otherwise all entries are 0.
pub fn normalize_importance(raw: &[f64]) -> Vec<f64> {
    assert!(!raw.is_empty(), "need at least one feature");
    let clipped: Vec<f64> = raw.iter().map(|&v| v.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    if total <= 0.0 {
        return vec![0.0; raw.len()];
    }
    clipped.into_iter().map(|v| 100.0 * v / total).collect()
}

/// One feature's importance figures.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceEntry {
    pub var_id: u32,
    pub raw_mda: f64,
    pub pct: f64,
}

/// Importance table sorted for reporting (descending percentage).
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceTable {
    pub entries: Vec<ImportanceEntry>,
    pub shuffles: usize,
}

impl ImportanceTable {
    /// Build from raw values and the forest's variable ids, ordering entries
    /// by descending percentage (ties by ascending id).
    pub fn from_raw(var_ids: &[u32], raw: &[f64], shuffles: usize) -> Self {
        assert_eq!(var_ids.len(), raw.len());
        let pct = normalize_importance(raw);
        let mut entries: Vec<ImportanceEntry> = var_ids
            .iter()
            .zip(raw.iter().zip(pct.iter()))
            .map(|(&var_id, (&raw_mda, &pct))| ImportanceEntry {
                var_id,
                raw_mda,
                pct,
            })
            .collect();
        entries.sort_by(|a, b| b.pct.total_cmp(&a.pct).then(a.var_id.cmp(&b.var_id)));
        ImportanceTable { entries, shuffles }
    }
}

pub const IMPORTANCE_HEADER: [&str; 4] = ["var_id", "raw_mda", "pct", "shuffles"];

pub fn write_importance_csv<W: Write>(
    table: &ImportanceTable,
    output: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(output);
    w.write_record(IMPORTANCE_HEADER)?;
    for e in &table.entries {
        w.write_record([
            e.var_id.to_string(),
            crate::numfmt::fmt_sig(e.raw_mda),
            crate::numfmt::fmt_sig(e.pct),
            table.shuffles.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{fit_forest, Criterion, Hyperparams, TreeNode};

    #[test]
    fn normalize_proportions() {
        assert_eq!(normalize_importance(&[3.0, 1.0, 0.0]), vec![75.0, 25.0, 0.0]);
        assert_eq!(normalize_importance(&[-0.02, 0.5]), vec![0.0, 100.0]);
        assert_eq!(normalize_importance(&[0.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(normalize_importance(&[-1.0, -2.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn normalize_sums_to_100_and_is_idempotent() {
        let raw = vec![0.4062, 0.1875, 0.1875, 0.125, 0.0938];
        let pct = normalize_importance(&raw);
        let sum: f64 = pct.iter().sum();
        assert!((sum - 100.0).abs() < 1e-9);
        assert!((pct[0] - 40.62).abs() < 1e-9);
        assert!((pct[3] - 12.5).abs() < 1e-9);
        let again = normalize_importance(&pct);
        for (a, b) in pct.iter().zip(again.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn mdi_unused_feature_scores_zero() {
        // Only feature 0 is informative; restrict the pool to it.
        let n = 40;
        let x: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64, 1.0]).collect();
        let y: Vec<u8> = (0..n).map(|i| u8::from(i >= 20)).collect();
        let opts = crate::forest::FitOptions {
            candidate_pool: Some(vec![0]),
            ..Default::default()
        };
        let forest =
            crate::forest::fit_forest_with_options(&x, &y, &Hyperparams::default(), 1, &opts)
                .unwrap();
        let scores = mdi(&forest);
        assert_eq!(scores[1], 0.0);
        assert!(scores[0] > 0.0);
    }

    #[test]
    fn mdi_hand_traced_two_feature_tree() {
        // Root splits feature 0 (gain 0.125 on 8 samples), right child splits
        // feature 1 (gain 0.5 on 4 samples). MDI: f0 = 0.125, f1 = 0.25.
        let tree = TreeNode::Internal {
            feature: 0,
            threshold: 5.0,
            left: Box::new(TreeNode::Leaf { counts: [4, 0] }),
            right: Box::new(TreeNode::Internal {
                feature: 1,
                threshold: 5.5,
                left: Box::new(TreeNode::Leaf { counts: [2, 0] }),
                right: Box::new(TreeNode::Leaf { counts: [0, 2] }),
            }),
        };
        let mut out = vec![0.0; 2];
        accumulate_mdi(&tree, Criterion::Gini, 8.0, &mut out);
        assert!((out[0] - 0.125).abs() < 1e-15);
        assert!((out[1] - 0.25).abs() < 1e-15);
    }

    fn informative_data(n: usize) -> (Vec<Vec<f64>>, Vec<u8>) {
        let x: Vec<Vec<f64>> = (0..n)
            .map(|i| vec![i as f64, (i * 13 % 7) as f64, (i * 5 % 11) as f64])
            .collect();
        let y: Vec<u8> = (0..n).map(|i| u8::from(i >= n / 2)).collect();
        (x, y)
    }

    #[test]
    fn mda_signal_feature_dominates() {
        let (x, y) = informative_data(80);
        let hp = Hyperparams {
            n_trees: 30,
            max_features: 2,
            min_samples_split: 2,
            max_leaf_nodes: 8,
            criterion: Criterion::Gini,
        };
        let forest = fit_forest(&x, &y, &hp, 7).unwrap();
        let raw = mda(&forest, &x, &y, 10, 99).unwrap();
        assert!(raw[0] > raw[1], "{raw:?}");
        assert!(raw[0] > raw[2], "{raw:?}");
        assert!(raw[0] > 0.2, "{raw:?}");
    }

    #[test]
    fn mda_excluded_feature_is_exactly_zero() {
        let (x, y) = informative_data(60);
        let opts = crate::forest::FitOptions {
            candidate_pool: Some(vec![0, 2]),
            ..Default::default()
        };
        let forest =
            crate::forest::fit_forest_with_options(&x, &y, &Hyperparams::default(), 3, &opts)
                .unwrap();
        let raw = mda(&forest, &x, &y, 5, 17).unwrap();
        assert_eq!(raw[1], 0.0);
    }

    #[test]
    fn mda_is_reproducible() {
        let (x, y) = informative_data(50);
        let forest = fit_forest(&x, &y, &Hyperparams::default(), 2).unwrap();
        let a = mda(&forest, &x, &y, 5, 11).unwrap();
        let b = mda(&forest, &x, &y, 5, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn importance_table_orders_by_descending_pct() {
        let table = ImportanceTable::from_raw(&[2, 3, 4], &[0.1, 0.4, 0.0], 10);
        assert_eq!(table.entries[0].var_id, 3);
        assert_eq!(table.entries[1].var_id, 2);
        assert_eq!(table.entries[2].var_id, 4);
        assert!((table.entries[0].pct - 80.0).abs() < 1e-9);
    }
}
