//! Hyperparameter search: uniform random candidates over a bounded space,
//! scored by k-fold cross-validation, filtered by successive halving on
//! growing training-sample budgets.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forest::{fit_forest, Criterion, ForestError, Hyperparams};
use crate::rng::{derive_rng, derive_seed, stream};

#[derive(Debug, Error)]
pub enum TuningError {
    #[error("{n} samples, need at least {min} for {k}-fold cross-validation")]
    TooFewSamples { n: usize, min: usize, k: usize },
    #[error("infeasible schedule: {0}")]
    ScheduleInfeasible(String),
    #[error(transparent)]
    Forest(#[from] ForestError),
}

/// Candidate ranges for each hyperparameter; integer bounds are inclusive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchSpace {
    pub criteria: Vec<Criterion>,
    pub max_leaf_nodes: (usize, usize),
    pub max_features: (usize, usize),
    pub n_trees: (usize, usize),
    pub min_samples_split: (usize, usize),
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            criteria: vec![Criterion::Gini, Criterion::Entropy],
            max_leaf_nodes: (2, 50),
            max_features: (1, 27),
            n_trees: (5, 200),
            min_samples_split: (2, 20),
        }
    }
}

impl SearchSpace {
    pub fn contains(&self, hp: &Hyperparams) -> bool {
        self.criteria.contains(&hp.criterion)
            && (self.max_leaf_nodes.0..=self.max_leaf_nodes.1).contains(&hp.max_leaf_nodes)
            && (self.max_features.0..=self.max_features.1).contains(&hp.max_features)
            && (self.n_trees.0..=self.n_trees.1).contains(&hp.n_trees)
            && (self.min_samples_split.0..=self.min_samples_split.1)
                .contains(&hp.min_samples_split)
    }
}

/// Draw `n` independent uniform candidates; duplicates are allowed.
pub fn sample_candidates(space: &SearchSpace, n: usize, seed: u64) -> Vec<Hyperparams> {
    assert!(n >= 1, "need at least one candidate");
    assert!(!space.criteria.is_empty(), "empty criterion set");
    let mut rng = derive_rng(seed, &[stream::CANDIDATES]);
    (0..n)
        .map(|_| Hyperparams {
            criterion: space.criteria[rng.gen_range(0..space.criteria.len())],
            max_leaf_nodes: rng.gen_range(space.max_leaf_nodes.0..=space.max_leaf_nodes.1),
            max_features: rng.gen_range(space.max_features.0..=space.max_features.1),
            n_trees: rng.gen_range(space.n_trees.0..=space.n_trees.1),
            min_samples_split: rng
                .gen_range(space.min_samples_split.0..=space.min_samples_split.1),
        })
        .collect()
}

/// Mean held-out accuracy over `k` deterministic folds.
pub fn kfold_cv_score(
    hp: &Hyperparams,
    x: &[Vec<f64>],
    y: &[u8],
    k: usize,
    seed: u64,
) -> Result<f64, TuningError> {
    let n = x.len();
    assert!(k >= 2, "k must be at least 2");
    if n < k {
        return Err(TuningError::TooFewSamples { n, min: k, k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = derive_rng(seed, &[stream::KFOLD]);
    order.shuffle(&mut rng);

    let base = n / k;
    let extra = n % k;
    let mut start = 0;
    let mut total_accuracy = 0.0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        let held_out = &order[start..start + size];
        start += size;
        let mut train_x = Vec::with_capacity(n - size);
        let mut train_y = Vec::with_capacity(n - size);
        for (pos, &i) in order.iter().enumerate() {
            if pos < start - size || pos >= start {
                train_x.push(x[i].clone());
                train_y.push(y[i]);
            }
        }
        let forest = fit_forest(&train_x, &train_y, hp, derive_seed(seed, &[stream::CV_FIT, fold as u64]))?;
        let correct = held_out
            .iter()
            .filter(|&&i| forest.predict(&x[i], 0.5) == y[i])
            .count();
        total_accuracy += correct as f64 / size as f64;
    }
    Ok(total_accuracy / k as f64)
}

/// Halving schedule: candidate count, elimination factor, and the sample
/// budget of the first round. The final budget is the full data set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HalvingSchedule {
    pub n_candidates: usize,
    pub factor: usize,
    pub min_resource: usize,
}

impl Default for HalvingSchedule {
    fn default() -> Self {
        HalvingSchedule {
            n_candidates: 27,
            factor: 3,
            min_resource: 30,
        }
    }
}

/// One scored candidate inside a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub index: usize,
    pub hyperparams: Hyperparams,
    pub cv_score: f64,
}

/// One halving round: the sample budget and every surviving candidate's score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub resource: usize,
    pub candidates: Vec<CandidateScore>,
}

/// Search result: the winning candidate and the full per-round trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub best: Hyperparams,
    pub best_index: usize,
    pub rounds: Vec<RoundTrace>,
}

/// Random search with successive halving. Round `r` scores the survivors on
/// `min(min_resource * factor^r, n)` samples (a deterministic subsample);
/// the top `ceil(n_candidates / factor^(r+1))` advance, ties broken by
/// candidate index. The final round runs on the full data and its argmax
/// wins.
pub fn halving_search(
    space: &SearchSpace,
    schedule: &HalvingSchedule,
    x: &[Vec<f64>],
    y: &[u8],
    k: usize,
    seed: u64,
) -> Result<SearchTrace, TuningError> {
    let n = x.len();
    if schedule.factor < 2 {
        return Err(TuningError::ScheduleInfeasible(format!(
            "factor {} < 2",
            schedule.factor
        )));
    }
    if schedule.n_candidates < 2 {
        return Err(TuningError::ScheduleInfeasible(format!(
            "n_candidates {} < 2",
            schedule.n_candidates
        )));
    }
    if schedule.min_resource < 10 {
        return Err(TuningError::ScheduleInfeasible(format!(
            "min_resource {} < 10",
            schedule.min_resource
        )));
    }
    if schedule.min_resource > n {
        return Err(TuningError::ScheduleInfeasible(format!(
            "min_resource {} exceeds {n} samples",
            schedule.min_resource
        )));
    }

    let candidates = sample_candidates(space, schedule.n_candidates, seed);

    // Survivor counts: n_candidates, ceil(n/f), ..., 1.
    let mut survivor_counts = vec![schedule.n_candidates];
    while *survivor_counts.last().unwrap() > 1 {
        let next = survivor_counts.last().unwrap().div_ceil(schedule.factor);
        survivor_counts.push(next);
    }
    let n_rounds = survivor_counts.len();

    let mut survivors: Vec<usize> = (0..schedule.n_candidates).collect();
    let mut rounds = Vec::with_capacity(n_rounds);
    let mut final_scores: Vec<CandidateScore> = Vec::new();
    for r in 0..n_rounds {
        survivors.truncate(survivor_counts[r]);
        let is_last = r + 1 == n_rounds;
        let resource = if is_last {
            n
        } else {
            schedule
                .min_resource
                .saturating_mul(schedule.factor.saturating_pow(r as u32))
                .min(n)
        };
        let subsample: Vec<usize> = if resource == n {
            (0..n).collect()
        } else {
            let mut order: Vec<usize> = (0..n).collect();
            let mut rng = derive_rng(seed, &[stream::HALVING_SUBSAMPLE, r as u64]);
            order.shuffle(&mut rng);
            let mut chosen = order[..resource].to_vec();
            chosen.sort_unstable();
            chosen
        };
        let sub_x: Vec<Vec<f64>> = subsample.iter().map(|&i| x[i].clone()).collect();
        let sub_y: Vec<u8> = subsample.iter().map(|&i| y[i]).collect();
        let cv_seed = derive_seed(seed, &[stream::HALVING_ROUND_CV, r as u64]);

        let mut scored = Vec::with_capacity(survivors.len());
        for &index in &survivors {
            let cv_score = kfold_cv_score(&candidates[index], &sub_x, &sub_y, k, cv_seed)?;
            scored.push(CandidateScore {
                index,
                hyperparams: candidates[index].clone(),
                cv_score,
            });
        }
        rounds.push(RoundTrace {
            resource,
            candidates: scored.clone(),
        });
        scored.sort_by(|a, b| b.cv_score.total_cmp(&a.cv_score).then(a.index.cmp(&b.index)));
        survivors = scored.iter().map(|c| c.index).collect();
        if is_last {
            final_scores = scored;
        }
    }

    let winner = &final_scores[0];
    Ok(SearchTrace {
        best: winner.hyperparams.clone(),
        best_index: winner.index,
        rounds,
    })
}

/// Versioned trace document: the winner echoed at top level plus every round.
pub fn write_trace_json<W: Write>(trace: &SearchTrace, output: W) -> serde_json::Result<()> {
    let mut value = serde_json::json!({
        "best": trace.best,
        "best_index": trace.best_index,
        "rounds": trace.rounds,
    });
    crate::numfmt::round_json_floats(&mut value);
    serde_json::to_writer_pretty(output, &value)
}
