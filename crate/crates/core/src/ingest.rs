//! Parsers and validators for the four input CSV corpora, plus extraction of
//! the per-county maximum outage report.
//!
//! All timestamps are ISO-8601 UTC at minute precision (`2018-05-27T09:01Z`).
//! Parsing is pure per file; results are immutable values.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDateTime, TimeZone, Timelike, Utc};
use thiserror::Error;

/// Variable ids carried by the socioeconomic table.
pub const SOCIO_VAR_IDS: std::ops::RangeInclusive<u32> = 2..=23;

/// Socio variable ids holding percentages (must lie in `[0, 100]`).
/// Id 8 is a population count and id 9 a density; both only need to be `>= 0`.
pub fn is_percentage_var(id: u32) -> bool {
    SOCIO_VAR_IDS.contains(&id) && id != 8 && id != 9
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("line {line}: customers_out exceeds customers_total")]
    CustomersExceedTotal { line: u64 },
    #[error("county {county} (acs_year {acs_year}): missing variable id {id}")]
    MissingVariableId {
        county: String,
        acs_year: i32,
        id: u32,
    },
    #[error("no outage reports for hurricane {hurricane}, county {county}")]
    NoReports { hurricane: String, county: String },
    #[error("hurricane {hurricane}, county {county}: report at {time} outside window {first}..{last}")]
    ReportOutsideWindow {
        hurricane: String,
        county: String,
        time: String,
        first: String,
        last: String,
    },
    #[error("hurricane {hurricane}: {found} distinct report times, window lists {expected}")]
    ReportCountMismatch {
        hurricane: String,
        expected: usize,
        found: usize,
    },
}

// ---------------------------------------------------------------------------
// Timestamps
// ---------------------------------------------------------------------------

/// Parse an ISO-8601 UTC timestamp at minute precision. Accepts `...T09:01Z`,
/// `...T09:01:00Z`, and `+00:00` in place of `Z`. Sub-minute precision is
/// rejected so that formatting round-trips exactly.
pub fn parse_utc_minute(text: &str) -> Result<DateTime<Utc>, String> {
    let body = if let Some(stripped) = text.strip_suffix('Z') {
        stripped
    } else if let Some(stripped) = text.strip_suffix("+00:00") {
        stripped
    } else {
        return Err(format!("timestamp {text:?} lacks a UTC designator (Z or +00:00)"));
    };
    let naive = NaiveDateTime::parse_from_str(body, "%Y-%m-%dT%H:%M")
        .or_else(|_| NaiveDateTime::parse_from_str(body, "%Y-%m-%dT%H:%M:%S"))
        .map_err(|e| format!("timestamp {text:?}: {e}"))?;
    if naive.second() != 0 || naive.and_utc().timestamp_subsec_nanos() != 0 {
        return Err(format!("timestamp {text:?} has sub-minute precision"));
    }
    Ok(Utc.from_utc_datetime(&naive))
}

/// Format a timestamp in the canonical minute-precision form.
pub fn format_utc_minute(t: DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:%MZ").to_string()
}

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// One timestamped per-county outage observation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutageReport {
    pub hurricane: String,
    pub county: String,
    pub report_time: DateTime<Utc>,
    pub customers_out: u64,
    pub customers_total: u64,
}

impl OutageReport {
    /// Fraction of customers out at this report, in `[0, 1]`.
    pub fn outage_fraction(&self) -> f64 {
        self.customers_out as f64 / self.customers_total as f64
    }
}

/// One county's socioeconomic indicator set for a survey year.
#[derive(Debug, Clone, PartialEq)]
pub struct SocioRecord {
    pub county: String,
    pub acs_year: i32,
    /// Variable id (2..=23) to value.
    pub values: BTreeMap<u32, f64>,
}

/// Urban/rural classification and utility customer count for a county.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountyMeta {
    pub county: String,
    pub urban: bool,
    pub customers: u64,
}

/// A reanalysis grid pixel, quantized to micro-degrees so it can key maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pixel {
    pub lat_udeg: i64,
    pub lon_udeg: i64,
}

impl Pixel {
    pub fn from_degrees(lat: f64, lon: f64) -> Self {
        Pixel {
            lat_udeg: (lat * 1e6).round() as i64,
            lon_udeg: (lon * 1e6).round() as i64,
        }
    }

    pub fn lat(&self) -> f64 {
        self.lat_udeg as f64 / 1e6
    }

    pub fn lon(&self) -> f64 {
        self.lon_udeg as f64 / 1e6
    }
}

/// One hourly gust observation at a grid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSample {
    pub time: DateTime<Utc>,
    pub pixel: Pixel,
    /// 3-second gust velocity in m/s at 10 m height.
    pub fg10: f64,
}

/// The grid pixels whose cells intersect a county.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountyPixelMap {
    pub county: String,
    pub pixels: Vec<Pixel>,
}

/// Configured reporting window for one hurricane (count optional).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportWindow {
    pub hurricane: String,
    pub first_report: DateTime<Utc>,
    pub last_report: DateTime<Utc>,
    pub reports: Option<usize>,
}

// ---------------------------------------------------------------------------
// CSV plumbing
// ---------------------------------------------------------------------------

fn open(path: &Path) -> Result<File, IngestError> {
    File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

fn check_header<R: Read>(
    reader: &mut csv::Reader<R>,
    expected: &[&str],
) -> Result<(), IngestError> {
    let headers = reader.headers().map_err(|e| IngestError::MalformedRow {
        line: 1,
        reason: format!("cannot read header: {e}"),
    })?;
    let found: Vec<&str> = headers.iter().collect();
    if found != expected {
        return Err(IngestError::MalformedRow {
            line: 1,
            reason: format!("header mismatch: expected {expected:?}, found {found:?}"),
        });
    }
    Ok(())
}

fn row_line(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

fn malformed(line: u64, reason: impl Into<String>) -> IngestError {
    IngestError::MalformedRow {
        line,
        reason: reason.into(),
    }
}

fn field<'a>(record: &'a csv::StringRecord, i: usize, name: &str) -> Result<&'a str, IngestError> {
    record
        .get(i)
        .ok_or_else(|| malformed(row_line(record), format!("missing field {name}")))
}

fn parse_u64(record: &csv::StringRecord, i: usize, name: &str) -> Result<u64, IngestError> {
    let s = field(record, i, name)?;
    s.parse::<u64>()
        .map_err(|e| malformed(row_line(record), format!("{name} {s:?}: {e}")))
}

fn parse_f64(record: &csv::StringRecord, i: usize, name: &str) -> Result<f64, IngestError> {
    let s = field(record, i, name)?;
    let v = s
        .parse::<f64>()
        .map_err(|e| malformed(row_line(record), format!("{name} {s:?}: {e}")))?;
    if !v.is_finite() {
        return Err(malformed(row_line(record), format!("{name} must be finite")));
    }
    Ok(v)
}

fn parse_time(record: &csv::StringRecord, i: usize, name: &str) -> Result<DateTime<Utc>, IngestError> {
    let s = field(record, i, name)?;
    parse_utc_minute(s).map_err(|e| malformed(row_line(record), e))
}

fn nonempty(record: &csv::StringRecord, i: usize, name: &str) -> Result<String, IngestError> {
    let s = field(record, i, name)?;
    if s.is_empty() {
        return Err(malformed(row_line(record), format!("{name} is empty")));
    }
    Ok(s.to_string())
}

// ---------------------------------------------------------------------------
// Parsers
// ---------------------------------------------------------------------------

pub const OUTAGE_HEADER: [&str; 5] = [
    "hurricane",
    "county_fips",
    "report_time_utc",
    "customers_out",
    "customers_total",
];

/// Parse `outage_reports.csv`. Rows come back sorted by
/// `(hurricane, county, report_time)`.
pub fn parse_outage_reports(path: &Path) -> Result<Vec<OutageReport>, IngestError> {
    parse_outage_reports_from(open(path)?)
}

pub fn parse_outage_reports_from<R: Read>(input: R) -> Result<Vec<OutageReport>, IngestError> {
    let mut reader = csv_reader(input);
    check_header(&mut reader, &OUTAGE_HEADER)?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| malformed(0, e.to_string()))?;
        let line = row_line(&record);
        let hurricane = nonempty(&record, 0, "hurricane")?;
        let county = nonempty(&record, 1, "county_fips")?;
        let report_time = parse_time(&record, 2, "report_time_utc")?;
        let customers_out = parse_u64(&record, 3, "customers_out")?;
        let customers_total = parse_u64(&record, 4, "customers_total")?;
        if customers_total == 0 {
            return Err(malformed(line, "customers_total must be positive"));
        }
        if customers_out > customers_total {
            return Err(IngestError::CustomersExceedTotal { line });
        }
        out.push(OutageReport {
            hurricane,
            county,
            report_time,
            customers_out,
            customers_total,
        });
    }
    out.sort_by(|a, b| {
        (&a.hurricane, &a.county, a.report_time).cmp(&(&b.hurricane, &b.county, b.report_time))
    });
    Ok(out)
}

pub const SOCIO_HEADER: [&str; 4] = ["county_fips", "acs_year", "var_id", "value"];

/// Parse `socioeconomic.csv` (long format) into per-(county, year) records.
/// Every record must carry all 22 variable ids exactly once.
pub fn parse_socioeconomic(path: &Path) -> Result<Vec<SocioRecord>, IngestError> {
    parse_socioeconomic_from(open(path)?)
}

pub fn parse_socioeconomic_from<R: Read>(input: R) -> Result<Vec<SocioRecord>, IngestError> {
    let mut reader = csv_reader(input);
    check_header(&mut reader, &SOCIO_HEADER)?;
    let mut grouped: BTreeMap<(String, i32), BTreeMap<u32, f64>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| malformed(0, e.to_string()))?;
        let line = row_line(&record);
        let county = nonempty(&record, 0, "county_fips")?;
        let acs_year = field(&record, 1, "acs_year")?
            .parse::<i32>()
            .map_err(|e| malformed(line, format!("acs_year: {e}")))?;
        let var_id = parse_u64(&record, 2, "var_id")? as u32;
        if !SOCIO_VAR_IDS.contains(&var_id) {
            return Err(malformed(line, format!("var_id {var_id} outside 2..=23")));
        }
        let value = parse_f64(&record, 3, "value")?;
        if is_percentage_var(var_id) && !(0.0..=100.0).contains(&value) {
            return Err(malformed(
                line,
                format!("var_id {var_id} value {value} outside [0, 100]"),
            ));
        }
        if !is_percentage_var(var_id) && value < 0.0 {
            return Err(malformed(line, format!("var_id {var_id} value {value} negative")));
        }
        let entry = grouped.entry((county, acs_year)).or_default();
        if entry.insert(var_id, value).is_some() {
            return Err(malformed(line, format!("duplicate var_id {var_id}")));
        }
    }
    let mut out = Vec::with_capacity(grouped.len());
    for ((county, acs_year), values) in grouped {
        for id in SOCIO_VAR_IDS {
            if !values.contains_key(&id) {
                return Err(IngestError::MissingVariableId {
                    county,
                    acs_year,
                    id,
                });
            }
        }
        out.push(SocioRecord {
            county,
            acs_year,
            values,
        });
    }
    Ok(out)
}

pub const COUNTY_META_HEADER: [&str; 3] = ["county_fips", "urban", "customers"];

/// Parse `county_meta.csv` (urban flag and utility customer count).
pub fn parse_county_meta(path: &Path) -> Result<Vec<CountyMeta>, IngestError> {
    parse_county_meta_from(open(path)?)
}

pub fn parse_county_meta_from<R: Read>(input: R) -> Result<Vec<CountyMeta>, IngestError> {
    let mut reader = csv_reader(input);
    check_header(&mut reader, &COUNTY_META_HEADER)?;
    let mut out: Vec<CountyMeta> = Vec::new();
    let mut seen = BTreeSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| malformed(0, e.to_string()))?;
        let line = row_line(&record);
        let county = nonempty(&record, 0, "county_fips")?;
        let urban = match field(&record, 1, "urban")? {
            "0" => false,
            "1" => true,
            other => return Err(malformed(line, format!("urban {other:?} not in {{0, 1}}"))),
        };
        let customers = parse_u64(&record, 2, "customers")?;
        if customers == 0 {
            return Err(malformed(line, "customers must be positive"));
        }
        if !seen.insert(county.clone()) {
            return Err(malformed(line, format!("duplicate county {county}")));
        }
        out.push(CountyMeta {
            county,
            urban,
            customers,
        });
    }
    out.sort_by(|a, b| a.county.cmp(&b.county));
    Ok(out)
}

pub const GUST_HEADER: [&str; 4] = ["time_utc", "lat", "lon", "fg10_ms"];

/// Parse `gust_grid.csv` (hourly gust velocities per grid pixel).
pub fn parse_gust_grid(path: &Path) -> Result<Vec<GridSample>, IngestError> {
    parse_gust_grid_from(open(path)?)
}

pub fn parse_gust_grid_from<R: Read>(input: R) -> Result<Vec<GridSample>, IngestError> {
    let mut reader = csv_reader(input);
    check_header(&mut reader, &GUST_HEADER)?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| malformed(0, e.to_string()))?;
        let line = row_line(&record);
        let time = parse_time(&record, 0, "time_utc")?;
        if time.minute() != 0 {
            return Err(malformed(line, "time_utc must be on the hour"));
        }
        let lat = parse_f64(&record, 1, "lat")?;
        let lon = parse_f64(&record, 2, "lon")?;
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(malformed(line, format!("pixel ({lat}, {lon}) out of range")));
        }
        let fg10 = parse_f64(&record, 3, "fg10_ms")?;
        if fg10 < 0.0 {
            return Err(malformed(line, format!("fg10_ms {fg10} negative")));
        }
        out.push(GridSample {
            time,
            pixel: Pixel::from_degrees(lat, lon),
            fg10,
        });
    }
    out.sort_by(|a, b| (a.pixel, a.time).cmp(&(b.pixel, b.time)));
    Ok(out)
}

pub const COUNTY_PIXELS_HEADER: [&str; 3] = ["county_fips", "lat", "lon"];

/// Parse `county_pixels.csv` (precomputed county to grid-pixel mapping).
pub fn parse_county_pixel_map(path: &Path) -> Result<Vec<CountyPixelMap>, IngestError> {
    parse_county_pixel_map_from(open(path)?)
}

pub fn parse_county_pixel_map_from<R: Read>(input: R) -> Result<Vec<CountyPixelMap>, IngestError> {
    let mut reader = csv_reader(input);
    check_header(&mut reader, &COUNTY_PIXELS_HEADER)?;
    let mut grouped: BTreeMap<String, Vec<Pixel>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| malformed(0, e.to_string()))?;
        let line = row_line(&record);
        let county = nonempty(&record, 0, "county_fips")?;
        let lat = parse_f64(&record, 1, "lat")?;
        let lon = parse_f64(&record, 2, "lon")?;
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(malformed(line, format!("pixel ({lat}, {lon}) out of range")));
        }
        grouped
            .entry(county)
            .or_default()
            .push(Pixel::from_degrees(lat, lon));
    }
    Ok(grouped
        .into_iter()
        .map(|(county, mut pixels)| {
            pixels.sort();
            pixels.dedup();
            CountyPixelMap { county, pixels }
        })
        .collect())
}

pub const REPORT_WINDOWS_HEADER: [&str; 4] =
    ["hurricane", "first_report_utc", "last_report_utc", "reports"];

/// Parse a report-window table (per-hurricane first/last bounds, optional
/// expected report count).
pub fn parse_report_windows(path: &Path) -> Result<Vec<ReportWindow>, IngestError> {
    parse_report_windows_from(open(path)?)
}

pub fn parse_report_windows_from<R: Read>(input: R) -> Result<Vec<ReportWindow>, IngestError> {
    let mut reader = csv_reader(input);
    check_header(&mut reader, &REPORT_WINDOWS_HEADER)?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| malformed(0, e.to_string()))?;
        let line = row_line(&record);
        let hurricane = nonempty(&record, 0, "hurricane")?;
        let first_report = parse_time(&record, 1, "first_report_utc")?;
        let last_report = parse_time(&record, 2, "last_report_utc")?;
        if last_report < first_report {
            return Err(malformed(line, "last_report_utc precedes first_report_utc"));
        }
        let reports = match field(&record, 3, "reports")? {
            "" => None,
            s => Some(
                s.parse::<usize>()
                    .map_err(|e| malformed(line, format!("reports: {e}")))?,
            ),
        };
        out.push(ReportWindow {
            hurricane,
            first_report,
            last_report,
            reports,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Writers (canonical round-trip format)
// ---------------------------------------------------------------------------

fn csv_writer<W: Write>(output: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().from_writer(output)
}

pub fn write_outage_reports<W: Write>(
    reports: &[OutageReport],
    output: W,
) -> Result<(), csv::Error> {
    let mut w = csv_writer(output);
    w.write_record(OUTAGE_HEADER)?;
    for r in reports {
        w.write_record([
            r.hurricane.as_str(),
            r.county.as_str(),
            &format_utc_minute(r.report_time),
            &r.customers_out.to_string(),
            &r.customers_total.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_socioeconomic<W: Write>(records: &[SocioRecord], output: W) -> Result<(), csv::Error> {
    let mut w = csv_writer(output);
    w.write_record(SOCIO_HEADER)?;
    for r in records {
        for (id, value) in &r.values {
            w.write_record([
                r.county.as_str(),
                &r.acs_year.to_string(),
                &id.to_string(),
                &value.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_county_meta<W: Write>(records: &[CountyMeta], output: W) -> Result<(), csv::Error> {
    let mut w = csv_writer(output);
    w.write_record(COUNTY_META_HEADER)?;
    for r in records {
        w.write_record([
            r.county.as_str(),
            if r.urban { "1" } else { "0" },
            &r.customers.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_gust_grid<W: Write>(samples: &[GridSample], output: W) -> Result<(), csv::Error> {
    let mut w = csv_writer(output);
    w.write_record(GUST_HEADER)?;
    for s in samples {
        w.write_record([
            format_utc_minute(s.time),
            s.pixel.lat().to_string(),
            s.pixel.lon().to_string(),
            s.fg10.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_county_pixel_map<W: Write>(
    maps: &[CountyPixelMap],
    output: W,
) -> Result<(), csv::Error> {
    let mut w = csv_writer(output);
    w.write_record(COUNTY_PIXELS_HEADER)?;
    for m in maps {
        for p in &m.pixels {
            w.write_record([
                m.county.as_str(),
                &p.lat().to_string(),
                &p.lon().to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Find the report maximizing `customers_out / customers_total` for a
/// `(hurricane, county)` key. Ties break to the earliest report time.
pub fn max_outage_report(
    reports: &[OutageReport],
    hurricane: &str,
    county: &str,
) -> Result<(DateTime<Utc>, f64), IngestError> {
    let mut best: Option<(DateTime<Utc>, f64)> = None;
    for r in reports {
        if r.hurricane != hurricane || r.county != county {
            continue;
        }
        let frac = r.outage_fraction();
        let replace = match best {
            None => true,
            Some((t, f)) => frac > f || (frac == f && r.report_time < t),
        };
        if replace {
            best = Some((r.report_time, frac));
        }
    }
    best.ok_or_else(|| IngestError::NoReports {
        hurricane: hurricane.to_string(),
        county: county.to_string(),
    })
}

/// Per-hurricane reporting statistics (distinct report times and bounds).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportStats {
    pub distinct_report_times: usize,
    pub first_report: DateTime<Utc>,
    pub last_report: DateTime<Utc>,
}

pub fn report_stats(reports: &[OutageReport]) -> BTreeMap<String, ReportStats> {
    let mut times: BTreeMap<String, BTreeSet<DateTime<Utc>>> = BTreeMap::new();
    for r in reports {
        times.entry(r.hurricane.clone()).or_default().insert(r.report_time);
    }
    times
        .into_iter()
        .map(|(hurricane, set)| {
            let stats = ReportStats {
                distinct_report_times: set.len(),
                first_report: *set.iter().next().expect("nonempty"),
                last_report: *set.iter().next_back().expect("nonempty"),
            };
            (hurricane, stats)
        })
        .collect()
}

/// Validate reports against configured windows: containment for every report
/// whose hurricane has a window, and (when given) the distinct-time count.
/// Hurricanes without a configured window are not checked.
pub fn validate_report_windows(
    reports: &[OutageReport],
    windows: &[ReportWindow],
) -> Result<(), IngestError> {
    let by_name: BTreeMap<&str, &ReportWindow> =
        windows.iter().map(|w| (w.hurricane.as_str(), w)).collect();
    for r in reports {
        if let Some(w) = by_name.get(r.hurricane.as_str()) {
            if r.report_time < w.first_report || r.report_time > w.last_report {
                return Err(IngestError::ReportOutsideWindow {
                    hurricane: r.hurricane.clone(),
                    county: r.county.clone(),
                    time: format_utc_minute(r.report_time),
                    first: format_utc_minute(w.first_report),
                    last: format_utc_minute(w.last_report),
                });
            }
        }
    }
    let stats = report_stats(reports);
    for w in windows {
        if let (Some(expected), Some(s)) = (w.reports, stats.get(&w.hurricane)) {
            if s.distinct_report_times != expected {
                return Err(IngestError::ReportCountMismatch {
                    hurricane: w.hurricane.clone(),
                    expected,
                    found: s.distinct_report_times,
                });
            }
        }
    }
    Ok(())
}

/// ACS survey year feeding a hurricane that made landfall in `year`: the
/// previous year, unless overridden.
pub fn acs_year_for(landfall_year: i32, overrides: &BTreeMap<String, i32>, hurricane: &str) -> i32 {
    overrides
        .get(hurricane)
        .copied()
        .unwrap_or(landfall_year - 1)
}
