//! The repeated-split experiment harness: for each iteration, split, tune,
//! fit, evaluate, and score permutation importance; then pick the worst, mean
//! and best models and aggregate importance across iterations.
//!
//! Iterations derive their RNG streams from `(master_seed, iteration)`, so
//! they can run in parallel and still reproduce byte-identically.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{random_split, to_matrix, DatasetError, IntegratedRecord, SplitPlan,
    FEATURE_VAR_IDS, N_FEATURES};
use crate::forest::{fit_forest, ForestError, Hyperparams};
use crate::importance::{mda, mda_on_test, normalize_importance, ImportanceError};
use crate::metrics::{class_report, confusion, report_json, roc_auc, ClassReport, MetricsError,
    RocCurve};
use crate::numfmt::{fmt_sig, round_json_floats};
use crate::rng::{derive_seed, stream};
use crate::tuning::{halving_search, HalvingSchedule, SearchSpace, TuningError};

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Tuning(#[from] TuningError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Importance(#[from] ImportanceError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        source: StageError,
    },
    #[error("no iteration results to summarize")]
    EmptyResults,
    #[error("records carry {found} features, expected {expected}")]
    WrongFeatureCount { expected: usize, found: usize },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Where each iteration's hyperparameters come from.
#[derive(Debug, Clone)]
pub enum TuningMode {
    /// Run halving search on every iteration's training split.
    PerIteration {
        space: SearchSpace,
        schedule: HalvingSchedule,
        k: usize,
    },
    /// Reuse one fixed candidate everywhere.
    Fixed(Hyperparams),
}

impl Default for TuningMode {
    fn default() -> Self {
        TuningMode::PerIteration {
            space: SearchSpace::default(),
            schedule: HalvingSchedule::default(),
            k: 5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub iterations: usize,
    pub test_fraction: f64,
    pub stratified: bool,
    pub tuning: TuningMode,
    pub shuffles: usize,
    /// Score permutation importance on the test split instead of train OOB.
    pub mda_on_test: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            master_seed: 0,
            iterations: 1000,
            test_fraction: 0.30,
            stratified: false,
            tuning: TuningMode::default(),
            shuffles: 10,
            mda_on_test: false,
        }
    }
}

/// One iteration's outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationResult {
    pub iteration: usize,
    pub hyperparams: Hyperparams,
    pub accuracy: f64,
    pub report: ClassReport,
    pub roc: RocCurve,
    pub raw_mda: Vec<f64>,
    pub pct: Vec<f64>,
}

/// Indices of the representative models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Representative {
    pub min: usize,
    pub mean: usize,
    pub max: usize,
}

/// Cross-iteration importance aggregate for one feature.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImportanceSummary {
    pub var_id: u32,
    pub avg_pct: f64,
    pub std_pct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSummary {
    pub results: Vec<IterationResult>,
    pub representative: Representative,
    pub importance: Vec<FeatureImportanceSummary>,
}

/// Worst/best by test accuracy; "mean" is the iteration whose accuracy lies
/// nearest the arithmetic mean. All ties resolve to the lower index.
pub fn representative_models(accuracies: &[f64]) -> Representative {
    assert!(!accuracies.is_empty(), "need at least one result");
    let mut min = 0;
    let mut max = 0;
    for (i, &a) in accuracies.iter().enumerate() {
        if a < accuracies[min] {
            min = i;
        }
        if a > accuracies[max] {
            max = i;
        }
    }
    let mean_value: f64 = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
    let mut mean = 0;
    for (i, &a) in accuracies.iter().enumerate() {
        if (a - mean_value).abs() < (accuracies[mean] - mean_value).abs() {
            mean = i;
        }
    }
    Representative { min, mean, max }
}

fn run_iteration(
    x: &[Vec<f64>],
    y: &[u8],
    config: &ExperimentConfig,
    iteration: usize,
) -> Result<IterationResult, StageError> {
    let plan = SplitPlan {
        seed: config.master_seed,
        test_fraction: config.test_fraction,
        iteration: iteration as u64,
        stratified: config.stratified,
    };
    let (train_idx, test_idx) = random_split(y, &plan)?;
    let train_x: Vec<Vec<f64>> = train_idx.iter().map(|&i| x[i].clone()).collect();
    let train_y: Vec<u8> = train_idx.iter().map(|&i| y[i]).collect();
    let test_x: Vec<Vec<f64>> = test_idx.iter().map(|&i| x[i].clone()).collect();
    let test_y: Vec<u8> = test_idx.iter().map(|&i| y[i]).collect();

    let hyperparams = match &config.tuning {
        TuningMode::Fixed(hp) => hp.clone(),
        TuningMode::PerIteration { space, schedule, k } => {
            let search_seed = derive_seed(config.master_seed, &[stream::TUNE, iteration as u64]);
            halving_search(space, schedule, &train_x, &train_y, *k, search_seed)?.best
        }
    };

    let fit_seed = derive_seed(config.master_seed, &[stream::FIT, iteration as u64]);
    let forest = fit_forest(&train_x, &train_y, &hyperparams, fit_seed)?;

    let probabilities: Vec<f64> = test_x.iter().map(|row| forest.predict_proba(row)).collect();
    let predictions: Vec<u8> = probabilities.iter().map(|&p| u8::from(p >= 0.5)).collect();
    let cm = confusion(&test_y, &predictions)?;
    let report = class_report(&cm);
    let roc = roc_auc(&test_y, &probabilities)?;

    let mda_seed = derive_seed(config.master_seed, &[stream::MDA_EVAL, iteration as u64]);
    let raw_mda = if config.mda_on_test {
        mda_on_test(&forest, &test_x, &test_y, config.shuffles, mda_seed)?
    } else {
        mda(&forest, &train_x, &train_y, config.shuffles, mda_seed)?
    };
    let pct = normalize_importance(&raw_mda);

    Ok(IterationResult {
        iteration,
        hyperparams,
        accuracy: cm.accuracy(),
        report,
        roc,
        raw_mda,
        pct,
    })
}

/// Run the full protocol over an integrated table. Iterations execute in the
/// ambient rayon pool; output is independent of thread count.
pub fn run_experiment(
    records: &[IntegratedRecord],
    config: &ExperimentConfig,
) -> Result<ExperimentSummary, ExperimentError> {
    if config.iterations == 0 {
        return Err(ExperimentError::EmptyResults);
    }
    let (x, y) = to_matrix(records);
    if x.is_empty() || x[0].len() != N_FEATURES {
        return Err(ExperimentError::WrongFeatureCount {
            expected: N_FEATURES,
            found: x.first().map(|r| r.len()).unwrap_or(0),
        });
    }

    let results: Vec<IterationResult> = (0..config.iterations)
        .into_par_iter()
        .map(|i| {
            run_iteration(&x, &y, config, i)
                .map_err(|source| ExperimentError::Iteration { iteration: i, source })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let accuracies: Vec<f64> = results.iter().map(|r| r.accuracy).collect();
    let representative = representative_models(&accuracies);

    let n = results.len() as f64;
    let mut importance = Vec::with_capacity(N_FEATURES);
    for f in 0..N_FEATURES {
        let avg = results.iter().map(|r| r.pct[f]).sum::<f64>() / n;
        let std_pct = if results.len() < 2 {
            0.0
        } else {
            let ss: f64 = results.iter().map(|r| (r.pct[f] - avg).powi(2)).sum();
            (ss / (n - 1.0)).sqrt()
        };
        importance.push(FeatureImportanceSummary {
            var_id: FEATURE_VAR_IDS[f],
            avg_pct: avg,
            std_pct,
        });
    }

    Ok(ExperimentSummary {
        results,
        representative,
        importance,
    })
}

const SUMMARY_FORMAT_VERSION: u32 = 1;

fn roc_json(roc: &RocCurve) -> serde_json::Value {
    serde_json::json!({
        "auc": roc.auc,
        "points": roc.points.iter().map(|p| serde_json::json!({
            // Infinity is not valid JSON; the opening point is implied.
            "threshold": if p.threshold.is_finite() {
                serde_json::Value::from(p.threshold)
            } else {
                serde_json::Value::String("inf".to_string())
            },
            "fpr": p.fpr,
            "tpr": p.tpr,
        })).collect::<Vec<_>>(),
    })
}

/// The versioned summary document, floats at six significant digits.
pub fn summary_json(summary: &ExperimentSummary) -> serde_json::Value {
    let mut value = serde_json::json!({
        "version": SUMMARY_FORMAT_VERSION,
        "iterations": summary.results.len(),
        "representative": {
            "min": summary.representative.min,
            "mean": summary.representative.mean,
            "max": summary.representative.max,
        },
        "importance": summary.importance.iter().map(|s| serde_json::json!({
            "var_id": s.var_id,
            "avg_pct": s.avg_pct,
            "std_pct": s.std_pct,
        })).collect::<Vec<_>>(),
        "results": summary.results.iter().map(|r| serde_json::json!({
            "iteration": r.iteration,
            "hyperparams": r.hyperparams,
            "accuracy": r.accuracy,
            "report": report_json(&r.report),
            "roc": roc_json(&r.roc),
            "importance": r.raw_mda.iter().zip(r.pct.iter()).enumerate()
                .map(|(f, (&raw, &pct))| serde_json::json!({
                    "var_id": FEATURE_VAR_IDS[f],
                    "raw_mda": raw,
                    "pct": pct,
                })).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
    });
    round_json_floats(&mut value);
    value
}

fn create(path: &Path) -> Result<fs::File, ExperimentError> {
    fs::File::create(path).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Write `summary.json`, `table5.csv`, `roc_{min,mean,max}.csv` and
/// `importance_bars.csv` into `out_dir`. Fails before creating anything when
/// there are no results. Returns the paths written.
pub fn emit_outputs(
    summary: &ExperimentSummary,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, ExperimentError> {
    if summary.results.is_empty() {
        return Err(ExperimentError::EmptyResults);
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut written = Vec::new();

    let summary_path = out_dir.join("summary.json");
    let mut file = create(&summary_path)?;
    serde_json::to_writer_pretty(&mut file, &summary_json(summary))?;
    file.write_all(b"\n").map_err(io_err(&summary_path))?;
    written.push(summary_path);

    // Importance table: one row per feature, per-model percentages plus the
    // cross-iteration aggregate, ordered by descending average.
    let table_path = out_dir.join("table5.csv");
    {
        let file = create(&table_path)?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record([
            "var_id",
            "min_model_pct",
            "mean_model_pct",
            "max_model_pct",
            "avg_pct",
            "std_pct",
        ])
        .map_err(|e| ExperimentError::Io {
            path: table_path.clone(),
            source: std::io::Error::other(e),
        })?;
        let rep = summary.representative;
        let mut order: Vec<usize> = (0..N_FEATURES).collect();
        order.sort_by(|&a, &b| {
            summary.importance[b]
                .avg_pct
                .total_cmp(&summary.importance[a].avg_pct)
                .then(FEATURE_VAR_IDS[a].cmp(&FEATURE_VAR_IDS[b]))
        });
        for f in order {
            w.write_record([
                FEATURE_VAR_IDS[f].to_string(),
                fmt_sig(summary.results[rep.min].pct[f]),
                fmt_sig(summary.results[rep.mean].pct[f]),
                fmt_sig(summary.results[rep.max].pct[f]),
                fmt_sig(summary.importance[f].avg_pct),
                fmt_sig(summary.importance[f].std_pct),
            ])
            .map_err(|e| ExperimentError::Io {
                path: table_path.clone(),
                source: std::io::Error::other(e),
            })?;
        }
        w.flush().map_err(io_err(&table_path))?;
    }
    written.push(table_path);

    for (name, index) in [
        ("roc_min.csv", summary.representative.min),
        ("roc_mean.csv", summary.representative.mean),
        ("roc_max.csv", summary.representative.max),
    ] {
        let path = out_dir.join(name);
        let file = create(&path)?;
        crate::metrics::write_roc_csv(&summary.results[index].roc, file).map_err(|e| {
            ExperimentError::Io {
                path: path.clone(),
                source: std::io::Error::other(e),
            }
        })?;
        written.push(path);
    }

    let bars_path = out_dir.join("importance_bars.csv");
    {
        let file = create(&bars_path)?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["var_id", "avg_pct", "std_pct"])
            .map_err(|e| ExperimentError::Io {
                path: bars_path.clone(),
                source: std::io::Error::other(e),
            })?;
        for s in &summary.importance {
            w.write_record([
                s.var_id.to_string(),
                fmt_sig(s.avg_pct),
                fmt_sig(s.std_pct),
            ])
            .map_err(|e| ExperimentError::Io {
                path: bars_path.clone(),
                source: std::io::Error::other(e),
            })?;
        }
        w.flush().map_err(io_err(&bars_path))?;
    }
    written.push(bars_path);

    Ok(written)
}
