//! Gridfall: county-scale storm outage classification.
//!
//! The pipeline integrates outage reports, socioeconomic indicators, and
//! hourly wind-gust grids into a 28-column county table, labels binary system
//! performance at an outage threshold, trains random forest classifiers with
//! successive-halving hyperparameter search, and quantifies variable
//! importance via out-of-bag permutation across repeated random train/test
//! splits.
//!
//! Modules follow the pipeline order:
//!
//! - [`ingest`]: CSV parsing and validation, maximum outage extraction
//! - [`hazard`]: spatiotemporal gust features per county and storm
//! - [`dataset`]: integrated table, labeling, splits, synthetic corpora
//! - [`forest`]: CART trees and the bagged ensemble with OOB bookkeeping
//! - [`importance`]: MDI and permutation (MDA) importance
//! - [`tuning`]: random search with successive halving over k-fold CV
//! - [`metrics`]: confusion matrix, classification report, ROC/AUC
//! - [`experiment`]: the repeated-split protocol and its emitted artifacts

pub mod dataset;
pub mod experiment;
pub mod forest;
pub mod hazard;
pub mod importance;
pub mod ingest;
pub mod metrics;
pub(crate) mod numfmt;
pub mod rng;
pub mod tuning;

pub use dataset::{IntegratedRecord, SignalSpec, SplitPlan};
pub use experiment::{ExperimentConfig, ExperimentSummary, TuningMode};
pub use forest::{Criterion, Forest, Hyperparams};
pub use hazard::{GustGrid, HazardFeatures};
pub use ingest::{CountyMeta, CountyPixelMap, GridSample, OutageReport, SocioRecord};
pub use metrics::{ClassReport, ConfusionMatrix, RocCurve};
pub use tuning::{HalvingSchedule, SearchSpace, SearchTrace};
