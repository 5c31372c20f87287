//! The 28-column integrated county table: binary performance label plus 27
//! features, the repeated 70/30 splitter, and an imbalance-matched synthetic
//! corpus generator.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::hazard::HazardFeatures;
use crate::ingest::{
    acs_year_for, max_outage_report, CountyMeta, IngestError, OutageReport, SocioRecord,
    SOCIO_VAR_IDS,
};
use crate::rng::{derive_rng, stream};

/// Number of feature columns (variable ids 2..=28).
pub const N_FEATURES: usize = 27;

/// Variable id for each feature column, in column order.
pub const FEATURE_VAR_IDS: [u32; N_FEATURES] = [
    2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, 22, 23, 24, 25, 26,
    27, 28,
];

/// Column names in file order: label first, then the 27 features.
pub const COLUMN_NAMES: [&str; 28] = [
    "v1_label",
    "v2_pct_white",
    "v3_pct_latino",
    "v4_pct_african",
    "v5_pct_asian",
    "v6_pct_indian",
    "v7_pct_other",
    "v8_population",
    "v9_pop_density",
    "v10_pct_under5",
    "v11_pct_over65",
    "v12_pct_no_vehicle",
    "v13_pct_public_assistance",
    "v14_pct_limited_english",
    "v15_pct_disability",
    "v16_pct_health_insurance",
    "v17_pct_renter_occupied",
    "v18_pct_rent_burden",
    "v19_pct_single_over65_rented",
    "v20_pct_single_over65_owned",
    "v21_pct_no_highschool",
    "v22_unemployment_rate",
    "v23_pct_poverty",
    "v24_urban",
    "v25_customers",
    "v26_current_max_v3",
    "v27_past_max_v3",
    "v28_recovery_days",
];

/// Column index (0..27) of a feature's variable id.
pub fn feature_index(var_id: u32) -> usize {
    assert!((2..=28).contains(&var_id), "var_id {var_id} outside 2..=28");
    var_id as usize - 2
}

/// Default outage threshold: 2% of customers.
pub const DEFAULT_OUTAGE_THRESHOLD: f64 = 0.02;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{source_table}: unknown county {county}")]
    UnknownCounty {
        source_table: &'static str,
        county: String,
    },
    #[error("missing hazard features for hurricane {hurricane}, county {county}")]
    MissingHazard { hurricane: String, county: String },
    #[error("missing socioeconomic record for county {county}, acs_year {acs_year}")]
    MissingSocio { county: String, acs_year: i32 },
    #[error("{n} records, need at least {min}")]
    TooFewRecords { n: usize, min: usize },
    #[error("line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// One integrated row: binary label and 27 features keyed by
/// `(hurricane, county)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegratedRecord {
    pub hurricane: String,
    pub county: String,
    /// 1 = damaged, 0 = undamaged.
    pub label: u8,
    /// Socioeconomic values, ids 2..=23 in order.
    pub socio: [f64; 22],
    pub urban: bool,
    pub customers: u64,
    pub current_max_v3: f64,
    pub past_max_v3: f64,
    pub recovery_days: f64,
}

impl IntegratedRecord {
    /// Feature vector in column order (ids 2..=28).
    pub fn feature_vector(&self) -> [f64; N_FEATURES] {
        let mut v = [0.0; N_FEATURES];
        v[..22].copy_from_slice(&self.socio);
        v[22] = if self.urban { 1.0 } else { 0.0 };
        v[23] = self.customers as f64;
        v[24] = self.current_max_v3;
        v[25] = self.past_max_v3;
        v[26] = self.recovery_days;
        v
    }
}

/// Split records into a feature matrix and a label vector.
pub fn to_matrix(records: &[IntegratedRecord]) -> (Vec<Vec<f64>>, Vec<u8>) {
    let x = records
        .iter()
        .map(|r| r.feature_vector().to_vec())
        .collect();
    let y = records.iter().map(|r| r.label).collect();
    (x, y)
}

/// Binary performance label: damaged (1) iff the maximum outage fraction
/// reaches the threshold.
pub fn label_performance(max_outage_fraction: f64, threshold: f64) -> u8 {
    debug_assert!((0.0..=1.0).contains(&max_outage_fraction));
    debug_assert!((0.0..=1.0).contains(&threshold));
    u8::from(max_outage_fraction >= threshold)
}

/// Options for table assembly.
#[derive(Debug, Clone)]
pub struct IntegrationOptions {
    pub outage_threshold: f64,
    /// Per-hurricane ACS year overrides; default is landfall year minus one.
    pub acs_year_overrides: BTreeMap<String, i32>,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        IntegrationOptions {
            outage_threshold: DEFAULT_OUTAGE_THRESHOLD,
            acs_year_overrides: BTreeMap::new(),
        }
    }
}

/// Assemble one integrated record per `(hurricane, county)` key, ordered by
/// key. Output is invariant to input row order.
pub fn build_integrated_table(
    reports: &[OutageReport],
    socio: &[SocioRecord],
    meta: &[CountyMeta],
    hazard: &[HazardFeatures],
    opts: &IntegrationOptions,
) -> Result<Vec<IntegratedRecord>, DatasetError> {
    let socio_by_key: BTreeMap<(String, i32), &SocioRecord> = socio
        .iter()
        .map(|s| ((s.county.clone(), s.acs_year), s))
        .collect();
    let meta_by_county: BTreeMap<String, &CountyMeta> =
        meta.iter().map(|m| (m.county.clone(), m)).collect();
    let hazard_by_key: BTreeMap<(String, String), &HazardFeatures> = hazard
        .iter()
        .map(|h| ((h.hurricane.clone(), h.county.clone()), h))
        .collect();

    let mut landfall_year: BTreeMap<&str, i32> = BTreeMap::new();
    let mut keys: BTreeSet<(String, String)> = BTreeSet::new();
    for r in reports {
        use chrono::Datelike;
        let year = r.report_time.year();
        landfall_year
            .entry(r.hurricane.as_str())
            .and_modify(|y| *y = (*y).min(year))
            .or_insert(year);
        keys.insert((r.hurricane.clone(), r.county.clone()));
    }

    let mut out = Vec::with_capacity(keys.len());
    for (hurricane, county) in keys {
        let (_, max_fraction) = max_outage_report(reports, &hurricane, &county)?;
        let label = label_performance(max_fraction, opts.outage_threshold);
        let h = hazard_by_key
            .get(&(hurricane.clone(), county.clone()))
            .ok_or_else(|| DatasetError::MissingHazard {
                hurricane: hurricane.clone(),
                county: county.clone(),
            })?;
        let m = meta_by_county
            .get(&county)
            .ok_or_else(|| DatasetError::UnknownCounty {
                source_table: "county_meta",
                county: county.clone(),
            })?;
        let acs_year = acs_year_for(
            landfall_year[hurricane.as_str()],
            &opts.acs_year_overrides,
            &hurricane,
        );
        let s = socio_by_key
            .get(&(county.clone(), acs_year))
            .ok_or_else(|| DatasetError::MissingSocio {
                county: county.clone(),
                acs_year,
            })?;
        let mut socio_values = [0.0; 22];
        for (i, id) in SOCIO_VAR_IDS.enumerate() {
            socio_values[i] = s.values[&id];
        }
        out.push(IntegratedRecord {
            hurricane,
            county,
            label,
            socio: socio_values,
            urban: m.urban,
            customers: m.customers,
            current_max_v3: h.current_max_v3,
            past_max_v3: h.past_max_v3,
            recovery_days: h.recovery_days,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Random splitting
// ---------------------------------------------------------------------------

/// A reproducible train/test partition request.
#[derive(Debug, Clone)]
pub struct SplitPlan {
    pub seed: u64,
    pub test_fraction: f64,
    pub iteration: u64,
    pub stratified: bool,
}

impl SplitPlan {
    pub fn new(seed: u64, iteration: u64) -> Self {
        SplitPlan {
            seed,
            test_fraction: 0.30,
            iteration,
            stratified: false,
        }
    }
}

/// Test-set size rule: `floor(n * fraction + 0.5)`.
pub fn test_size(n: usize, fraction: f64) -> usize {
    (n as f64 * fraction + 0.5).floor() as usize
}

/// Partition `0..labels.len()` into disjoint, exhaustive (train, test) index
/// sets, both sorted. Identical `(seed, iteration)` always yields the same
/// partition. The unstratified default matches the corpus-wide draw; the
/// stratified variant applies the size rule per class.
pub fn random_split(labels: &[u8], plan: &SplitPlan) -> Result<(Vec<usize>, Vec<usize>), DatasetError> {
    let n = labels.len();
    if n < 10 {
        return Err(DatasetError::TooFewRecords { n, min: 10 });
    }
    assert!(
        plan.test_fraction > 0.0 && plan.test_fraction < 1.0,
        "test_fraction must lie in (0, 1)"
    );
    let mut test: Vec<usize> = Vec::new();
    if plan.stratified {
        for class in [0u8, 1u8] {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
            if members.is_empty() {
                continue;
            }
            let mut shuffled = members.clone();
            let mut rng = derive_rng(plan.seed, &[stream::SPLIT, plan.iteration, class as u64]);
            shuffled.shuffle(&mut rng);
            let t = test_size(shuffled.len(), plan.test_fraction);
            test.extend_from_slice(&shuffled[..t]);
        }
    } else {
        let mut shuffled: Vec<usize> = (0..n).collect();
        let mut rng = derive_rng(plan.seed, &[stream::SPLIT, plan.iteration]);
        shuffled.shuffle(&mut rng);
        let t = test_size(n, plan.test_fraction);
        test.extend_from_slice(&shuffled[..t]);
    }
    test.sort_unstable();
    let test_set: BTreeSet<usize> = test.iter().copied().collect();
    let train: Vec<usize> = (0..n).filter(|i| !test_set.contains(i)).collect();
    Ok((train, test))
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

/// How strongly the past-maximum-gust column separates the classes.
/// At 0 the label is independent of every feature; at 1 a single threshold on
/// that column classifies perfectly.
#[derive(Debug, Clone, Copy)]
pub struct SignalSpec {
    pub strength: f64,
}

impl SignalSpec {
    pub fn new(strength: f64) -> Self {
        assert!((0.0..=1.0).contains(&strength), "strength must lie in [0, 1]");
        SignalSpec { strength }
    }
}

/// Generate a synthetic integrated corpus with `round(n * positive_rate)`
/// damaged records. All features except `past_max_v3` are label-independent
/// noise.
pub fn synth_corpus(seed: u64, n: usize, positive_rate: f64, signal: &SignalSpec) -> Vec<IntegratedRecord> {
    assert!(n >= 20, "need at least 20 records");
    assert!(n <= 99_999, "county id space supports at most 99999 records");
    assert!((0.0..=1.0).contains(&positive_rate));
    let mut rng = derive_rng(seed, &[stream::SYNTH]);
    let n_pos = (n as f64 * positive_rate).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let positives: BTreeSet<usize> = order.into_iter().take(n_pos).collect();

    let shift = 35.0 * signal.strength;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let label = u8::from(positives.contains(&i));
        let mut socio = [0.0; 22];
        for (j, id) in SOCIO_VAR_IDS.enumerate() {
            socio[j] = match id {
                8 => rng.gen_range(5_000.0..1_000_000.0),
                9 => rng.gen_range(5.0..1_500.0),
                _ => rng.gen_range(0.0..100.0),
            };
        }
        let urban = rng.gen_bool(0.5);
        let customers = rng.gen_range(1_000u64..800_000);
        let current_max_v3 = rng.gen_range(5.0..45.0);
        let base = rng.gen_range(10.0..40.0);
        let past_max_v3 = if label == 1 { base + shift } else { base };
        let recovery_days = rng.gen_range(0.0..6.0);
        out.push(IntegratedRecord {
            hurricane: "synth".to_string(),
            county: format!("{:06}", 900_000 + i),
            label,
            socio,
            urban,
            customers,
            current_max_v3,
            past_max_v3,
            recovery_days,
        });
    }
    out
}

// ---------------------------------------------------------------------------
// integrated.csv
// ---------------------------------------------------------------------------

pub fn write_integrated_csv<W: Write>(
    records: &[IntegratedRecord],
    output: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(output);
    let mut header = vec!["hurricane", "county_fips"];
    header.extend_from_slice(&COLUMN_NAMES);
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.hurricane.clone(), r.county.clone(), r.label.to_string()];
        for v in r.socio {
            row.push(v.to_string());
        }
        row.push(if r.urban { "1" } else { "0" }.to_string());
        row.push(r.customers.to_string());
        row.push(r.current_max_v3.to_string());
        row.push(r.past_max_v3.to_string());
        row.push(r.recovery_days.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_integrated_csv<R: Read>(input: R) -> Result<Vec<IntegratedRecord>, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    let found: Vec<&str> = headers.iter().collect();
    let mut expected = vec!["hurricane", "county_fips"];
    expected.extend_from_slice(&COLUMN_NAMES);
    if found != expected {
        return Err(DatasetError::MalformedRow {
            line: 1,
            reason: format!("header mismatch: expected {expected:?}, found {found:?}"),
        });
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let get = |i: usize| -> Result<&str, DatasetError> {
            record.get(i).ok_or_else(|| DatasetError::MalformedRow {
                line,
                reason: format!("missing column {i}"),
            })
        };
        let num = |i: usize| -> Result<f64, DatasetError> {
            let s = get(i)?;
            let v: f64 = s.parse().map_err(|e| DatasetError::MalformedRow {
                line,
                reason: format!("column {}: {e}", expected[i]),
            })?;
            if !v.is_finite() {
                return Err(DatasetError::MalformedRow {
                    line,
                    reason: format!("column {} must be finite", expected[i]),
                });
            }
            Ok(v)
        };
        let hurricane = get(0)?.to_string();
        let county = get(1)?.to_string();
        let label = match get(2)? {
            "0" => 0u8,
            "1" => 1u8,
            other => {
                return Err(DatasetError::MalformedRow {
                    line,
                    reason: format!("v1_label {other:?} not in {{0, 1}}"),
                })
            }
        };
        let mut socio = [0.0; 22];
        for (j, v) in socio.iter_mut().enumerate() {
            *v = num(3 + j)?;
        }
        let urban = match get(25)? {
            "0" => false,
            "1" => true,
            other => {
                return Err(DatasetError::MalformedRow {
                    line,
                    reason: format!("v24_urban {other:?} not in {{0, 1}}"),
                })
            }
        };
        let customers: u64 = get(26)?.parse().map_err(|e| DatasetError::MalformedRow {
            line,
            reason: format!("v25_customers: {e}"),
        })?;
        if customers == 0 {
            return Err(DatasetError::MalformedRow {
                line,
                reason: "v25_customers must be positive".to_string(),
            });
        }
        out.push(IntegratedRecord {
            hurricane,
            county,
            label,
            socio,
            urban,
            customers,
            current_max_v3: num(27)?,
            past_max_v3: num(28)?,
            recovery_days: num(29)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_threshold_boundary() {
        assert_eq!(label_performance(0.09, 0.02), 1);
        assert_eq!(label_performance(0.0, 0.02), 0);
        assert_eq!(label_performance(0.02, 0.02), 1);
        assert_eq!(label_performance(0.019999, 0.02), 0);
    }

    #[test]
    fn test_size_rule() {
        assert_eq!(test_size(10, 0.3), 3);
        assert_eq!(test_size(335, 0.3), 101);
        assert_eq!(test_size(20, 0.5), 10);
    }

    #[test]
    fn split_is_disjoint_exhaustive_and_reproducible() {
        let labels = vec![0u8; 50];
        let plan = SplitPlan::new(7, 3);
        let (train, test) = random_split(&labels, &plan).unwrap();
        assert_eq!(test.len(), test_size(50, 0.3));
        assert_eq!(train.len() + test.len(), 50);
        let mut all: Vec<usize> = train.iter().chain(test.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        let (train2, test2) = random_split(&labels, &plan).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
        let (_, test3) = random_split(&labels, &SplitPlan::new(7, 4)).unwrap();
        assert_ne!(test, test3);
    }

    #[test]
    fn split_rejects_tiny_inputs() {
        let labels = vec![0u8; 9];
        assert!(matches!(
            random_split(&labels, &SplitPlan::new(0, 0)),
            Err(DatasetError::TooFewRecords { n: 9, min: 10 })
        ));
    }

    #[test]
    fn stratified_split_preserves_class_fractions() {
        let mut labels = vec![0u8; 80];
        labels.extend(vec![1u8; 20]);
        let mut plan = SplitPlan::new(11, 0);
        plan.stratified = true;
        let (_, test) = random_split(&labels, &plan).unwrap();
        let pos_in_test = test.iter().filter(|&&i| labels[i] == 1).count();
        assert_eq!(pos_in_test, test_size(20, 0.3));
        assert_eq!(test.len() - pos_in_test, test_size(80, 0.3));
    }

    #[test]
    fn synth_positive_count_matches_rate() {
        let records = synth_corpus(1, 335, 0.11, &SignalSpec::new(1.0));
        assert_eq!(records.len(), 335);
        let positives = records.iter().filter(|r| r.label == 1).count();
        assert_eq!(positives, 37);
        let keys: BTreeSet<(&str, &str)> = records
            .iter()
            .map(|r| (r.hurricane.as_str(), r.county.as_str()))
            .collect();
        assert_eq!(keys.len(), 335);
    }

    #[test]
    fn synth_max_signal_separates_on_threshold() {
        let records = synth_corpus(5, 200, 0.2, &SignalSpec::new(1.0));
        for r in &records {
            let predicted = u8::from(r.past_max_v3 > 42.5);
            assert_eq!(predicted, r.label);
        }
    }

    #[test]
    fn synth_null_signal_is_label_independent() {
        // Permutation test on the mean gap of past_max_v3 between classes.
        let records = synth_corpus(9, 300, 0.25, &SignalSpec::new(0.0));
        let values: Vec<f64> = records.iter().map(|r| r.past_max_v3).collect();
        let labels: Vec<u8> = records.iter().map(|r| r.label).collect();
        let gap = |labels: &[u8]| {
            let (mut s1, mut n1, mut s0, mut n0) = (0.0, 0, 0.0, 0);
            for (v, &l) in values.iter().zip(labels) {
                if l == 1 {
                    s1 += v;
                    n1 += 1;
                } else {
                    s0 += v;
                    n0 += 1;
                }
            }
            (s1 / n1 as f64 - s0 / n0 as f64).abs()
        };
        let observed = gap(&labels);
        let mut rng = derive_rng(123, &[999]);
        let mut more_extreme = 0;
        let rounds = 999;
        let mut shuffled = labels.clone();
        for _ in 0..rounds {
            shuffled.shuffle(&mut rng);
            if gap(&shuffled) >= observed {
                more_extreme += 1;
            }
        }
        let p = (more_extreme + 1) as f64 / (rounds + 1) as f64;
        assert!(p > 0.01, "independence rejected: p = {p}");
    }

    #[test]
    fn integrated_csv_round_trips() {
        let records = synth_corpus(3, 25, 0.2, &SignalSpec::new(0.5));
        let mut buf = Vec::new();
        write_integrated_csv(&records, &mut buf).unwrap();
        let parsed = read_integrated_csv(buf.as_slice()).unwrap();
        assert_eq!(records, parsed);
    }

    #[test]
    fn feature_vector_has_expected_layout() {
        let records = synth_corpus(3, 20, 0.2, &SignalSpec::new(0.5));
        let r = &records[0];
        let v = r.feature_vector();
        assert_eq!(v.len(), N_FEATURES);
        assert_eq!(v[0], r.socio[0]);
        assert_eq!(v[feature_index(24)], if r.urban { 1.0 } else { 0.0 });
        assert_eq!(v[feature_index(25)], r.customers as f64);
        assert_eq!(v[feature_index(27)], r.past_max_v3);
        assert_eq!(v[feature_index(28)], r.recovery_days);
        assert_eq!(COLUMN_NAMES.len(), 28);
        assert_eq!(FEATURE_VAR_IDS[feature_index(27)], 27);
    }
}
