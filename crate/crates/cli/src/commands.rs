//! Subcommand implementations: thin drivers over the library pipeline.

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use gridfall::dataset::{
    build_integrated_table, read_integrated_csv, synth_corpus, write_integrated_csv,
    IntegratedRecord, IntegrationOptions, SignalSpec, FEATURE_VAR_IDS,
};
use gridfall::experiment::{emit_outputs, run_experiment, ExperimentConfig, TuningMode};
use gridfall::forest::{
    fit_forest_with_options, read_forest_json, write_forest_json, FitOptions, Hyperparams,
};
use gridfall::hazard::{
    extract_hazard_features, parse_besttrack, write_besttrack_compare, write_hazard_features,
    GustGrid, HazardOptions,
};
use gridfall::ingest::{
    parse_county_meta, parse_county_pixel_map, parse_gust_grid, parse_outage_reports,
    parse_report_windows, parse_socioeconomic, validate_report_windows,
};
use gridfall::metrics::{class_report, confusion, roc_auc, write_report_json, write_roc_csv};
use gridfall::tuning::{halving_search, HalvingSchedule, SearchSpace};

use crate::config::{config_err, data_err, internal_err, CliError};

fn create_out_file(out_dir: &Path, name: &str) -> Result<(PathBuf, File), CliError> {
    fs::create_dir_all(out_dir)
        .map_err(|e| internal_err(format!("cannot create {}: {e}", out_dir.display())))?;
    let path = out_dir.join(name);
    let file = File::create(&path)
        .map_err(|e| internal_err(format!("cannot create {}: {e}", path.display())))?;
    Ok((path, file))
}

pub struct CorpusPaths {
    pub outage_reports: PathBuf,
    pub socioeconomic: PathBuf,
    pub county_meta: PathBuf,
    pub gust_grid: PathBuf,
    pub county_pixels: PathBuf,
    pub report_windows: Option<PathBuf>,
}

pub struct IngestParams {
    pub paths: CorpusPaths,
    pub outage_threshold: f64,
}

pub fn cmd_ingest(params: &IngestParams, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let reports = parse_outage_reports(&params.paths.outage_reports).map_err(data_err)?;
    if let Some(windows_path) = &params.paths.report_windows {
        let windows = parse_report_windows(windows_path).map_err(data_err)?;
        validate_report_windows(&reports, &windows).map_err(data_err)?;
    }
    let socio = parse_socioeconomic(&params.paths.socioeconomic).map_err(data_err)?;
    let meta = parse_county_meta(&params.paths.county_meta).map_err(data_err)?;
    let samples = parse_gust_grid(&params.paths.gust_grid).map_err(data_err)?;
    let pixel_maps = parse_county_pixel_map(&params.paths.county_pixels).map_err(data_err)?;

    let grid = GustGrid::from_samples(&samples);
    let hazard = extract_hazard_features(&reports, &grid, &pixel_maps, &HazardOptions::default())
        .map_err(data_err)?;
    let opts = IntegrationOptions {
        outage_threshold: params.outage_threshold,
        ..IntegrationOptions::default()
    };
    let records =
        build_integrated_table(&reports, &socio, &meta, &hazard, &opts).map_err(data_err)?;

    let (path, file) = create_out_file(out_dir, "integrated.csv")?;
    write_integrated_csv(&records, file).map_err(internal_err)?;
    Ok(vec![path])
}

pub struct HazardParams {
    pub outage_reports: PathBuf,
    pub gust_grid: PathBuf,
    pub county_pixels: PathBuf,
    pub report_windows: Option<PathBuf>,
    pub besttrack: Option<PathBuf>,
    pub gust_factor: f64,
}

pub fn cmd_hazard(params: &HazardParams, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let reports = parse_outage_reports(&params.outage_reports).map_err(data_err)?;
    if let Some(windows_path) = &params.report_windows {
        let windows = parse_report_windows(windows_path).map_err(data_err)?;
        validate_report_windows(&reports, &windows).map_err(data_err)?;
    }
    let samples = parse_gust_grid(&params.gust_grid).map_err(data_err)?;
    let pixel_maps = parse_county_pixel_map(&params.county_pixels).map_err(data_err)?;
    let grid = GustGrid::from_samples(&samples);
    let features = extract_hazard_features(&reports, &grid, &pixel_maps, &HazardOptions::default())
        .map_err(data_err)?;

    let (path, file) = create_out_file(out_dir, "hazard_features.csv")?;
    write_hazard_features(&features, file).map_err(internal_err)?;
    let mut written = vec![path];

    if let Some(besttrack_path) = &params.besttrack {
        let points = parse_besttrack(besttrack_path).map_err(data_err)?;
        let (path, file) = create_out_file(out_dir, "besttrack_compare.csv")?;
        write_besttrack_compare(&points, &grid, &pixel_maps, params.gust_factor, file)
            .map_err(internal_err)?;
        written.push(path);
    }
    Ok(written)
}

fn load_integrated(path: &Path) -> Result<Vec<IntegratedRecord>, CliError> {
    let file = File::open(path)
        .map_err(|e| config_err(format!("integrated path {}: {e}", path.display())))?;
    read_integrated_csv(file).map_err(data_err)
}

pub struct TrainParams {
    pub integrated: PathBuf,
    pub schedule: HalvingSchedule,
    pub cv_folds: usize,
    pub seed: u64,
}

pub fn cmd_train(params: &TrainParams, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let records = load_integrated(&params.integrated)?;
    let (x, y) = gridfall::dataset::to_matrix(&records);
    let trace = halving_search(
        &SearchSpace::default(),
        &params.schedule,
        &x,
        &y,
        params.cv_folds,
        params.seed,
    )
    .map_err(tuning_err)?;
    let opts = FitOptions {
        feature_ids: Some(FEATURE_VAR_IDS.to_vec()),
        ..FitOptions::default()
    };
    let forest =
        fit_forest_with_options(&x, &y, &trace.best, params.seed, &opts).map_err(data_err)?;

    let (forest_path, file) = create_out_file(out_dir, "forest.json")?;
    write_forest_json(&forest, file).map_err(internal_err)?;
    let (trace_path, file) = create_out_file(out_dir, "tuning_trace.json")?;
    gridfall::tuning::write_trace_json(&trace, file).map_err(internal_err)?;
    Ok(vec![forest_path, trace_path])
}

fn tuning_err(e: gridfall::tuning::TuningError) -> CliError {
    match e {
        gridfall::tuning::TuningError::ScheduleInfeasible(_) => config_err(e),
        other => data_err(other),
    }
}

pub struct ExperimentParams {
    pub integrated: PathBuf,
    pub config: ExperimentConfig,
}

pub fn cmd_experiment(params: &ExperimentParams, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let records = load_integrated(&params.integrated)?;
    let summary = run_experiment(&records, &params.config).map_err(experiment_err)?;
    emit_outputs(&summary, out_dir).map_err(experiment_err)
}

fn experiment_err(e: gridfall::experiment::ExperimentError) -> CliError {
    use gridfall::experiment::ExperimentError as E;
    match e {
        E::Io { .. } | E::Json(_) => internal_err(e),
        E::EmptyResults => config_err(e),
        other => data_err(other),
    }
}

pub struct SynthParams {
    pub n: usize,
    pub positive_rate: f64,
    pub signal: f64,
    pub seed: u64,
}

pub fn cmd_synth(params: &SynthParams, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    if params.n < 20 {
        return Err(config_err("synth n must be at least 20"));
    }
    if !(0.0..=1.0).contains(&params.positive_rate) {
        return Err(config_err("positive rate must lie in [0, 1]"));
    }
    if !(0.0..=1.0).contains(&params.signal) {
        return Err(config_err("signal strength must lie in [0, 1]"));
    }
    let records = synth_corpus(
        params.seed,
        params.n,
        params.positive_rate,
        &SignalSpec::new(params.signal),
    );
    let (path, file) = create_out_file(out_dir, "integrated.csv")?;
    write_integrated_csv(&records, file).map_err(internal_err)?;
    Ok(vec![path])
}

pub struct ReportParams {
    pub integrated: PathBuf,
    pub forest: PathBuf,
}

pub fn cmd_report(params: &ReportParams, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let records = load_integrated(&params.integrated)?;
    let file = File::open(&params.forest)
        .map_err(|e| config_err(format!("forest path {}: {e}", params.forest.display())))?;
    let forest = read_forest_json(file).map_err(data_err)?;
    if forest.n_features != gridfall::dataset::N_FEATURES {
        return Err(data_err(format!(
            "forest expects {} features, integrated table has {}",
            forest.n_features,
            gridfall::dataset::N_FEATURES
        )));
    }
    let (x, y) = gridfall::dataset::to_matrix(&records);
    let probabilities: Vec<f64> = x.iter().map(|row| forest.predict_proba(row)).collect();
    let predictions: Vec<u8> = probabilities.iter().map(|&p| u8::from(p >= 0.5)).collect();
    let cm = confusion(&y, &predictions).map_err(data_err)?;
    let report = class_report(&cm);
    let roc = roc_auc(&y, &probabilities).map_err(data_err)?;

    let (report_path, file) = create_out_file(out_dir, "report.json")?;
    write_report_json(&report, file).map_err(internal_err)?;
    let (roc_path, file) = create_out_file(out_dir, "roc.csv")?;
    write_roc_csv(&roc, file).map_err(internal_err)?;
    Ok(vec![report_path, roc_path])
}

/// Build the experiment tuning mode from resolved settings.
#[allow(clippy::too_many_arguments)]
pub fn tuning_mode(
    fixed_hp: bool,
    hp: Hyperparams,
    n_candidates: usize,
    halving_factor: usize,
    min_resource: usize,
    cv_folds: usize,
) -> Result<TuningMode, CliError> {
    if fixed_hp {
        hp.validate().map_err(config_err)?;
        Ok(TuningMode::Fixed(hp))
    } else {
        if n_candidates < 2 {
            return Err(config_err("n_candidates must be at least 2"));
        }
        if halving_factor < 2 {
            return Err(config_err("halving_factor must be at least 2"));
        }
        if cv_folds < 2 {
            return Err(config_err("cv_folds must be at least 2"));
        }
        Ok(TuningMode::PerIteration {
            space: SearchSpace::default(),
            schedule: HalvingSchedule {
                n_candidates,
                factor: halving_factor,
                min_resource,
            },
            k: cv_folds,
        })
    }
}
