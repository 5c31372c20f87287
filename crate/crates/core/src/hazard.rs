//! Wind-hazard feature extraction from the hourly gust grid: the spatial
//! maximum at a report instant, the spatiotemporal maximum over the storm
//! window, and the recovery time between the two.
//!
//! Report instants snap to the nearest grid hour, ties toward the earlier
//! hour. The snapped reference hour is always included in the past window, so
//! `past_max_v3 >= current_max_v3` holds for every extracted feature row.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use chrono::{DateTime, Duration, Timelike, Utc};
use thiserror::Error;

use crate::ingest::{
    format_utc_minute, max_outage_report, CountyPixelMap, GridSample, IngestError, OutageReport,
    Pixel,
};

/// Knots to metres per second.
pub const KNOTS_TO_MS: f64 = 0.514444;

/// Default gust factor for converting sustained winds to 3-second gusts.
pub const DEFAULT_GUST_FACTOR: f64 = 1.11;

#[derive(Debug, Error)]
pub enum HazardError {
    #[error("county {county}: no grid coverage at {at}")]
    NoGridCoverage { county: String, at: String },
    #[error("negative interval: past maximum at {past} is after report at {report}")]
    NegativeInterval { past: String, report: String },
    #[error("county {county}: empty pixel list")]
    EmptyPixelList { county: String },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// The three wind-hazard features for one `(hurricane, county)` key.
#[derive(Debug, Clone, PartialEq)]
pub struct HazardFeatures {
    pub hurricane: String,
    pub county: String,
    /// Max gust over the county's pixels at the reference hour (m/s).
    pub current_max_v3: f64,
    /// Max gust over pixels and hours up to the reference hour (m/s).
    pub past_max_v3: f64,
    /// Days from the past maximum to the reference hour.
    pub recovery_days: f64,
    pub past_max_time: DateTime<Utc>,
}

/// Hourly gust series indexed by pixel, ready for repeated lookups.
#[derive(Debug, Clone)]
pub struct GustGrid {
    by_pixel: BTreeMap<Pixel, Vec<(DateTime<Utc>, f64)>>,
}

impl GustGrid {
    pub fn from_samples(samples: &[GridSample]) -> Self {
        let mut by_pixel: BTreeMap<Pixel, Vec<(DateTime<Utc>, f64)>> = BTreeMap::new();
        for s in samples {
            by_pixel.entry(s.pixel).or_default().push((s.time, s.fg10));
        }
        for series in by_pixel.values_mut() {
            series.sort_by_key(|(t, _)| *t);
        }
        GustGrid { by_pixel }
    }

    /// Gust value at an exact hour, if sampled.
    pub fn value_at(&self, pixel: Pixel, hour: DateTime<Utc>) -> Option<f64> {
        let series = self.by_pixel.get(&pixel)?;
        series
            .binary_search_by_key(&hour, |(t, _)| *t)
            .ok()
            .map(|i| series[i].1)
    }

    pub fn is_empty(&self) -> bool {
        self.by_pixel.is_empty()
    }
}

/// Snap a timestamp to the nearest hour; exact half hours go to the earlier
/// hour.
pub fn snap_to_hour(at: DateTime<Utc>) -> DateTime<Utc> {
    let minutes = i64::from(at.minute());
    let floor = at - Duration::minutes(minutes) - Duration::seconds(i64::from(at.second()));
    if minutes <= 30 {
        floor
    } else {
        floor + Duration::hours(1)
    }
}

/// Max gust over a county's pixels at the hour nearest `at`.
pub fn current_max_gust(
    grid: &GustGrid,
    pixels: &CountyPixelMap,
    at: DateTime<Utc>,
) -> Result<f64, HazardError> {
    let hour = snap_to_hour(at);
    let mut best: Option<f64> = None;
    for &pixel in &pixels.pixels {
        if let Some(v) = grid.value_at(pixel, hour) {
            best = Some(match best {
                Some(b) if b >= v => b,
                _ => v,
            });
        }
    }
    best.ok_or_else(|| HazardError::NoGridCoverage {
        county: pixels.county.clone(),
        at: format_utc_minute(at),
    })
}

/// Max gust over a county's pixels and all grid hours in
/// `[snap(window_start), snap(at)]`. Returns the value and the hour it first
/// occurred; ties break to the earliest hour, then to pixel order.
pub fn past_max_gust(
    grid: &GustGrid,
    pixels: &CountyPixelMap,
    window_start: DateTime<Utc>,
    at: DateTime<Utc>,
) -> Result<(f64, DateTime<Utc>), HazardError> {
    assert!(window_start <= at, "window_start must not be after at");
    let start_hour = snap_to_hour(window_start);
    let end_hour = snap_to_hour(at);
    let mut best: Option<(f64, DateTime<Utc>)> = None;
    let mut hour = start_hour;
    while hour <= end_hour {
        for &pixel in &pixels.pixels {
            if let Some(v) = grid.value_at(pixel, hour) {
                let replace = match best {
                    None => true,
                    Some((bv, _)) => v > bv,
                };
                if replace {
                    best = Some((v, hour));
                }
            }
        }
        hour += Duration::hours(1);
    }
    best.ok_or_else(|| HazardError::NoGridCoverage {
        county: pixels.county.clone(),
        at: format_utc_minute(at),
    })
}

/// Fractional days between the past maximum and the report instant.
pub fn recovery_days(
    past_max_time: DateTime<Utc>,
    report_time: DateTime<Utc>,
) -> Result<f64, HazardError> {
    if report_time < past_max_time {
        return Err(HazardError::NegativeInterval {
            past: format_utc_minute(past_max_time),
            report: format_utc_minute(report_time),
        });
    }
    let seconds = (report_time - past_max_time).num_seconds() as f64;
    Ok(seconds / 86_400.0)
}

/// Convert a sustained wind in knots to a 3-second gust in m/s via a gust
/// factor. Linear in both arguments.
pub fn sustained_to_gust(v60_knots: f64, gust_factor: f64) -> f64 {
    v60_knots * KNOTS_TO_MS * gust_factor
}

/// Per-hurricane overrides for the past-window start. Without an override the
/// window opens at the hurricane's first report time.
#[derive(Debug, Clone, Default)]
pub struct HazardOptions {
    pub window_starts: BTreeMap<String, DateTime<Utc>>,
}

/// Extract the three hazard features for every `(hurricane, county)` key in
/// the outage reports, referenced at each key's maximum outage report.
pub fn extract_hazard_features(
    reports: &[OutageReport],
    grid: &GustGrid,
    pixel_maps: &[CountyPixelMap],
    opts: &HazardOptions,
) -> Result<Vec<HazardFeatures>, HazardError> {
    let pixels_by_county: BTreeMap<&str, &CountyPixelMap> = pixel_maps
        .iter()
        .map(|m| (m.county.as_str(), m))
        .collect();

    let mut first_report: BTreeMap<&str, DateTime<Utc>> = BTreeMap::new();
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in reports {
        first_report
            .entry(r.hurricane.as_str())
            .and_modify(|t| {
                if r.report_time < *t {
                    *t = r.report_time;
                }
            })
            .or_insert(r.report_time);
        let key = (r.hurricane.clone(), r.county.clone());
        if keys.last() != Some(&key) {
            keys.push(key);
        }
    }
    keys.sort();
    keys.dedup();

    let mut out = Vec::with_capacity(keys.len());
    for (hurricane, county) in keys {
        let pixels = pixels_by_county
            .get(county.as_str())
            .filter(|m| !m.pixels.is_empty())
            .ok_or_else(|| HazardError::EmptyPixelList {
                county: county.clone(),
            })?;
        let (report_time, _) = max_outage_report(reports, &hurricane, &county)?;
        let window_start = opts
            .window_starts
            .get(&hurricane)
            .copied()
            .unwrap_or(first_report[hurricane.as_str()]);
        let current_max_v3 = current_max_gust(grid, pixels, report_time)?;
        let (past_max_v3, past_max_time) =
            past_max_gust(grid, pixels, window_start, report_time)?;
        // Recovery is measured on the grid-hour base so it stays nonnegative.
        let reference_hour = snap_to_hour(report_time);
        let recovery = recovery_days(past_max_time, reference_hour)?;
        out.push(HazardFeatures {
            hurricane,
            county,
            current_max_v3,
            past_max_v3,
            recovery_days: recovery,
            past_max_time,
        });
    }
    Ok(out)
}

pub const HAZARD_HEADER: [&str; 6] = [
    "hurricane",
    "county_fips",
    "current_max_v3_ms",
    "past_max_v3_ms",
    "recovery_days",
    "past_max_time_utc",
];

pub fn write_hazard_features<W: Write>(
    features: &[HazardFeatures],
    output: W,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(output);
    w.write_record(HAZARD_HEADER)?;
    for f in features {
        w.write_record([
            f.hurricane.as_str(),
            f.county.as_str(),
            &f.current_max_v3.to_string(),
            &f.past_max_v3.to_string(),
            &f.recovery_days.to_string(),
            &format_utc_minute(f.past_max_time),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// A best-track intensity point: sustained wind in knots at an instant.
#[derive(Debug, Clone, PartialEq)]
pub struct BestTrackPoint {
    pub time: DateTime<Utc>,
    pub v60_knots: f64,
}

pub const BESTTRACK_HEADER: [&str; 2] = ["point_time_utc", "v60_knots"];

pub fn parse_besttrack_from<R: std::io::Read>(
    input: R,
) -> Result<Vec<BestTrackPoint>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader
        .headers()
        .map_err(|e| IngestError::MalformedRow {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let found: Vec<&str> = headers.iter().collect();
    if found != BESTTRACK_HEADER {
        return Err(IngestError::MalformedRow {
            line: 1,
            reason: format!("header mismatch: expected {BESTTRACK_HEADER:?}, found {found:?}"),
        });
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| IngestError::MalformedRow {
            line: 0,
            reason: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let time = crate::ingest::parse_utc_minute(record.get(0).unwrap_or("")).map_err(|e| {
            IngestError::MalformedRow { line, reason: e }
        })?;
        let v60: f64 = record
            .get(1)
            .unwrap_or("")
            .parse()
            .map_err(|e| IngestError::MalformedRow {
                line,
                reason: format!("v60_knots: {e}"),
            })?;
        if !v60.is_finite() || v60 < 0.0 {
            return Err(IngestError::MalformedRow {
                line,
                reason: format!("v60_knots {v60} must be finite and nonnegative"),
            });
        }
        out.push(BestTrackPoint { time, v60_knots: v60 });
    }
    Ok(out)
}

pub fn parse_besttrack(path: &std::path::Path) -> Result<Vec<BestTrackPoint>, IngestError> {
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_besttrack_from(file)
}

pub const BESTTRACK_COMPARE_HEADER: [&str; 4] = [
    "point_time_utc",
    "v60_knots",
    "v3_ms_converted",
    "era5_local_max_ms",
];

/// Compare converted best-track gusts against the grid-wide spatial maximum at
/// each point's hour. Hours without coverage leave the grid column empty.
pub fn write_besttrack_compare<W: Write>(
    points: &[BestTrackPoint],
    grid: &GustGrid,
    pixel_maps: &[CountyPixelMap],
    gust_factor: f64,
    output: W,
) -> Result<(), csv::Error> {
    let mut all_pixels: Vec<Pixel> = pixel_maps.iter().flat_map(|m| m.pixels.clone()).collect();
    all_pixels.sort();
    all_pixels.dedup();
    let mut w = csv::Writer::from_writer(output);
    w.write_record(BESTTRACK_COMPARE_HEADER)?;
    for p in points {
        let hour = snap_to_hour(p.time);
        let era5_max = all_pixels
            .iter()
            .filter_map(|&px| grid.value_at(px, hour))
            .fold(None::<f64>, |acc, v| match acc {
                Some(b) if b >= v => Some(b),
                _ => Some(v),
            });
        w.write_record([
            format_utc_minute(p.time),
            p.v60_knots.to_string(),
            sustained_to_gust(p.v60_knots, gust_factor).to_string(),
            era5_max.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
