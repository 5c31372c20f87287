//! Command-line driver for the outage-classification pipeline. Each
//! subcommand reads its inputs, runs one stage, and writes declared files
//! into the output directory. Exit codes: 0 ok, 2 config error, 3 data
//! error, 4 internal error.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{ArgAction, Parser, Subcommand};

use commands::*;
use config::{config_err, CliError, Resolver};
use gridfall::experiment::ExperimentConfig;
use gridfall::forest::{Criterion, Hyperparams};
use gridfall::tuning::HalvingSchedule;

#[derive(Parser)]
#[command(
    name = "gridfall",
    version,
    about = "County-scale storm outage classification pipeline",
    after_help = "Config file: key=value lines; flags override file values.\n\
                  Seed fallback: GRIDFALL_SEED environment variable."
)]
struct Cli {
    /// key=value config file; flags override file values
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory [default: out] [config: out_dir]
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,

    /// Master RNG seed [default: 0] [config: seed] [env: GRIDFALL_SEED]
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker thread cap; 0 uses all cores [default: 0] [config: threads]
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CorpusArgs {
    /// Outage reports CSV [config: outage_reports]
    #[arg(long, value_name = "PATH")]
    outage_reports: Option<PathBuf>,

    /// Hourly gust grid CSV [config: gust_grid]
    #[arg(long, value_name = "PATH")]
    gust_grid: Option<PathBuf>,

    /// County-to-pixel mapping CSV [config: county_pixels]
    #[arg(long, value_name = "PATH")]
    county_pixels: Option<PathBuf>,

    /// Optional per-hurricane report windows CSV [config: report_windows]
    #[arg(long, value_name = "PATH")]
    report_windows: Option<PathBuf>,
}

#[derive(clap::Args)]
struct TuneArgs {
    /// Halving candidate count [default: 27] [config: n_candidates]
    #[arg(long)]
    n_candidates: Option<usize>,

    /// Halving elimination factor [default: 3] [config: halving_factor]
    #[arg(long)]
    halving_factor: Option<usize>,

    /// First-round sample budget [default: 30] [config: min_resource]
    #[arg(long)]
    min_resource: Option<usize>,

    /// Cross-validation folds [default: 5] [config: cv_folds]
    #[arg(long)]
    cv_folds: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Build integrated.csv from the five input corpora
    Ingest {
        #[command(flatten)]
        corpus: CorpusArgs,

        /// Socioeconomic indicators CSV [config: socioeconomic]
        #[arg(long, value_name = "PATH")]
        socioeconomic: Option<PathBuf>,

        /// County urban flag and customer counts CSV [config: county_meta]
        #[arg(long, value_name = "PATH")]
        county_meta: Option<PathBuf>,

        /// Outage fraction labeled damaged at or above this
        /// [default: 0.02] [config: outage_threshold]
        #[arg(long)]
        outage_threshold: Option<f64>,
    },
    /// Extract per-county wind hazard features
    Hazard {
        #[command(flatten)]
        corpus: CorpusArgs,

        /// Optional best-track intensity CSV for comparison output
        /// [config: besttrack]
        #[arg(long, value_name = "PATH")]
        besttrack: Option<PathBuf>,

        /// Sustained-to-gust conversion factor [default: 1.11]
        /// [config: gust_factor]
        #[arg(long)]
        gust_factor: Option<f64>,
    },
    /// Tune hyperparameters on an integrated table and fit a forest
    Train {
        /// Integrated table CSV [config: integrated]
        #[arg(long, value_name = "PATH")]
        integrated: Option<PathBuf>,

        #[command(flatten)]
        tune: TuneArgs,
    },
    /// Run the repeated-split experiment protocol
    Experiment {
        /// Integrated table CSV [config: integrated]
        #[arg(long, value_name = "PATH")]
        integrated: Option<PathBuf>,

        /// Number of split iterations [default: 1000] [config: iterations]
        #[arg(long)]
        iterations: Option<usize>,

        /// Held-out fraction per split [default: 0.3] [config: test_fraction]
        #[arg(long)]
        test_fraction: Option<f64>,

        /// Stratify splits by label [default: false] [config: stratified]
        #[arg(long, action = ArgAction::SetTrue)]
        stratified: bool,

        /// Skip per-iteration search and reuse the hp_* candidate
        /// [default: false] [config: fixed_hp]
        #[arg(long, action = ArgAction::SetTrue)]
        fixed_hp: bool,

        /// Fixed-mode split criterion, gini or entropy [default: entropy]
        /// [config: hp_criterion]
        #[arg(long, value_name = "CRITERION")]
        hp_criterion: Option<String>,

        /// Fixed-mode leaf cap [default: 10] [config: hp_max_leaf_nodes]
        #[arg(long)]
        hp_max_leaf_nodes: Option<usize>,

        /// Fixed-mode split candidates per node [default: 4]
        /// [config: hp_max_features]
        #[arg(long)]
        hp_max_features: Option<usize>,

        /// Fixed-mode tree count [default: 10] [config: hp_n_trees]
        #[arg(long)]
        hp_n_trees: Option<usize>,

        /// Fixed-mode minimum node size to split [default: 7]
        /// [config: hp_min_samples_split]
        #[arg(long)]
        hp_min_samples_split: Option<usize>,

        #[command(flatten)]
        tune: TuneArgs,

        /// Permutations per feature for importance [default: 10]
        /// [config: shuffles]
        #[arg(long)]
        shuffles: Option<usize>,

        /// Score importance on the test split instead of train OOB
        /// [default: false] [config: mda_on_test]
        #[arg(long, action = ArgAction::SetTrue)]
        mda_on_test: bool,
    },
    /// Generate a synthetic integrated table
    Synth {
        /// Record count [default: 335]
        #[arg(long)]
        n: Option<usize>,

        /// Damaged-label rate [default: 0.11]
        #[arg(long)]
        positive_rate: Option<f64>,

        /// Signal strength of the past-gust column, 0..1 [default: 1]
        #[arg(long)]
        signal: Option<f64>,
    },
    /// Evaluate a stored forest against an integrated table
    Report {
        /// Integrated table CSV [config: integrated]
        #[arg(long, value_name = "PATH")]
        integrated: Option<PathBuf>,

        /// Forest JSON produced by train [config: forest]
        #[arg(long, value_name = "PATH")]
        forest: Option<PathBuf>,
    },
}

fn run(cli: Cli, resolver: &Resolver) -> Result<Vec<PathBuf>, CliError> {
    let out_dir = resolver.out_dir(cli.out_dir.clone());
    let seed = resolver.seed(cli.seed)?;

    match cli.command {
        Command::Ingest {
            corpus,
            socioeconomic,
            county_meta,
            outage_threshold,
        } => {
            let outage_threshold =
                resolver.value(outage_threshold, "outage_threshold", 0.02)?;
            if !(0.0..=1.0).contains(&outage_threshold) {
                return Err(config_err("outage_threshold must lie in [0, 1]"));
            }
            let params = IngestParams {
                paths: CorpusPaths {
                    outage_reports: resolver
                        .input_path(corpus.outage_reports, "outage_reports")?,
                    socioeconomic: resolver.input_path(socioeconomic, "socioeconomic")?,
                    county_meta: resolver.input_path(county_meta, "county_meta")?,
                    gust_grid: resolver.input_path(corpus.gust_grid, "gust_grid")?,
                    county_pixels: resolver.input_path(corpus.county_pixels, "county_pixels")?,
                    report_windows: resolver
                        .input_path_opt(corpus.report_windows, "report_windows")?,
                },
                outage_threshold,
            };
            cmd_ingest(&params, &out_dir)
        }
        Command::Hazard {
            corpus,
            besttrack,
            gust_factor,
        } => {
            let gust_factor = resolver.value(gust_factor, "gust_factor", 1.11)?;
            if gust_factor <= 0.0 {
                return Err(config_err("gust_factor must be positive"));
            }
            let params = HazardParams {
                outage_reports: resolver.input_path(corpus.outage_reports, "outage_reports")?,
                gust_grid: resolver.input_path(corpus.gust_grid, "gust_grid")?,
                county_pixels: resolver.input_path(corpus.county_pixels, "county_pixels")?,
                report_windows: resolver
                    .input_path_opt(corpus.report_windows, "report_windows")?,
                besttrack: resolver.input_path_opt(besttrack, "besttrack")?,
                gust_factor,
            };
            cmd_hazard(&params, &out_dir)
        }
        Command::Train { integrated, tune } => {
            let params = TrainParams {
                integrated: resolver.input_path(integrated, "integrated")?,
                schedule: HalvingSchedule {
                    n_candidates: resolver.value(tune.n_candidates, "n_candidates", 27)?,
                    factor: resolver.value(tune.halving_factor, "halving_factor", 3)?,
                    min_resource: resolver.value(tune.min_resource, "min_resource", 30)?,
                },
                cv_folds: resolver.value(tune.cv_folds, "cv_folds", 5)?,
                seed,
            };
            cmd_train(&params, &out_dir)
        }
        Command::Experiment {
            integrated,
            iterations,
            test_fraction,
            stratified,
            fixed_hp,
            hp_criterion,
            hp_max_leaf_nodes,
            hp_max_features,
            hp_n_trees,
            hp_min_samples_split,
            tune,
            shuffles,
            mda_on_test,
        } => {
            let test_fraction = resolver.value(test_fraction, "test_fraction", 0.30)?;
            if !(test_fraction > 0.0 && test_fraction < 1.0) {
                return Err(config_err("test_fraction must lie in (0, 1)"));
            }
            let iterations = resolver.value(iterations, "iterations", 1000)?;
            let shuffles = resolver.value(shuffles, "shuffles", 10)?;
            if shuffles == 0 {
                return Err(config_err("shuffles must be at least 1"));
            }
            let fixed = resolver.switch(fixed_hp, "fixed_hp")?;
            let criterion_flag: Option<Criterion> = hp_criterion
                .as_deref()
                .map(str::parse)
                .transpose()
                .map_err(config_err)?;
            let hp = Hyperparams {
                criterion: resolver.value(criterion_flag, "hp_criterion", Criterion::Entropy)?,
                max_leaf_nodes: resolver.value(hp_max_leaf_nodes, "hp_max_leaf_nodes", 10)?,
                max_features: resolver.value(hp_max_features, "hp_max_features", 4)?,
                n_trees: resolver.value(hp_n_trees, "hp_n_trees", 10)?,
                min_samples_split: resolver
                    .value(hp_min_samples_split, "hp_min_samples_split", 7)?,
            };
            let tuning = tuning_mode(
                fixed,
                hp,
                resolver.value(tune.n_candidates, "n_candidates", 27)?,
                resolver.value(tune.halving_factor, "halving_factor", 3)?,
                resolver.value(tune.min_resource, "min_resource", 30)?,
                resolver.value(tune.cv_folds, "cv_folds", 5)?,
            )?;
            let params = ExperimentParams {
                integrated: resolver.input_path(integrated, "integrated")?,
                config: ExperimentConfig {
                    master_seed: seed,
                    iterations,
                    test_fraction,
                    stratified: resolver.switch(stratified, "stratified")?,
                    tuning,
                    shuffles,
                    mda_on_test: resolver.switch(mda_on_test, "mda_on_test")?,
                },
            };
            cmd_experiment(&params, &out_dir)
        }
        Command::Synth {
            n,
            positive_rate,
            signal,
        } => {
            let params = SynthParams {
                n: n.unwrap_or(335),
                positive_rate: positive_rate.unwrap_or(0.11),
                signal: signal.unwrap_or(1.0),
                seed,
            };
            cmd_synth(&params, &out_dir)
        }
        Command::Report { integrated, forest } => {
            let params = ReportParams {
                integrated: resolver.input_path(integrated, "integrated")?,
                forest: resolver.input_path(forest, "forest")?,
            };
            cmd_report(&params, &out_dir)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let outcome = (|| {
        let resolver = Resolver::load(cli.config.as_deref())?;
        let threads = resolver.value(cli.threads, "threads", 0usize)?;
        if threads > 0 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| config_err(format!("cannot build thread pool: {e}")))?;
            pool.install(|| run(cli, &resolver))
        } else {
            run(cli, &resolver)
        }
    })();
    match outcome {
        Ok(written) => {
            for path in written {
                println!("wrote {}", path.display());
            }
        }
        Err(err) => {
            eprintln!("{}", err.to_json_line());
            std::process::exit(err.exit_code());
        }
    }
}
