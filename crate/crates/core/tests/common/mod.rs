//! Deterministic golden corpus for integration tests: five storms over 67
//! counties (335 county-storm pairs, 37 of them damaged at the 2% threshold),
//! with report counts and window bounds fixed per storm.

use chrono::{DateTime, Duration, Timelike, Utc};
use gridfall::ingest::parse_utc_minute;

pub struct StormShape {
    pub name: &'static str,
    pub reports: usize,
    pub first: &'static str,
    pub last: &'static str,
}

pub const STORMS: [StormShape; 5] = [
    StormShape {
        name: "alberto",
        reports: 13,
        first: "2018-05-27T09:01Z",
        last: "2018-05-29T09:20Z",
    },
    StormShape {
        name: "dorian",
        reports: 12,
        first: "2019-09-02T18:51Z",
        last: "2019-09-04T18:00Z",
    },
    StormShape {
        name: "eta",
        reports: 15,
        first: "2020-11-08T21:00Z",
        last: "2020-11-12T18:00Z",
    },
    StormShape {
        name: "isaias",
        reports: 6,
        first: "2020-08-01T18:00Z",
        last: "2020-08-02T18:00Z",
    },
    StormShape {
        name: "michael",
        reports: 131,
        first: "2018-10-09T21:00Z",
        last: "2018-11-06T11:18Z",
    },
];

pub const N_COUNTIES: usize = 67;

pub fn county_fips(c: usize) -> String {
    format!("{}", 12001 + 2 * c)
}

fn utc(s: &str) -> DateTime<Utc> {
    parse_utc_minute(s).unwrap()
}

/// Evenly spaced distinct report minutes from first to last inclusive.
pub fn report_times(storm: &StormShape) -> Vec<DateTime<Utc>> {
    let first = utc(storm.first);
    let last = utc(storm.last);
    let span_minutes = (last - first).num_minutes();
    (0..storm.reports)
        .map(|i| {
            let offset = span_minutes * i as i64 / (storm.reports as i64 - 1);
            first + Duration::minutes(offset)
        })
        .collect()
}

pub fn customers_total(c: usize) -> u64 {
    10_000 + 3_000 * c as u64
}

/// Peak outage fraction for pair index `p = storm_idx * 67 + county_idx`.
/// Exactly 37 of the 335 pairs peak at or above 0.02.
pub fn peak_fraction(p: usize) -> f64 {
    if p % 9 == 0 && p != 333 {
        0.022 + 0.08 * ((p % 5) as f64 + 1.0) / 5.0
    } else {
        0.001 + 0.016 * ((p % 7) as f64) / 6.0
    }
}

pub fn is_damaged(p: usize) -> bool {
    peak_fraction(p) >= 0.02
}

/// Report index at which the outage fraction peaks.
pub fn peak_report_index(storm: &StormShape, c: usize) -> usize {
    (storm.reports * 2 / 3 + c % 3).min(storm.reports - 1)
}

pub struct GoldenCorpus {
    pub outage_csv: String,
    pub socio_csv: String,
    pub meta_csv: String,
    pub gust_csv: String,
    pub pixels_csv: String,
    pub windows_csv: String,
}

pub fn golden_corpus() -> GoldenCorpus {
    let mut outage = String::from(
        "hurricane,county_fips,report_time_utc,customers_out,customers_total\n",
    );
    for (s, storm) in STORMS.iter().enumerate() {
        let times = report_times(storm);
        for c in 0..N_COUNTIES {
            let p = s * N_COUNTIES + c;
            let peak = peak_fraction(p);
            let peak_at = peak_report_index(storm, c);
            let total = customers_total(c);
            for (i, t) in times.iter().enumerate() {
                let distance = (i as f64 - peak_at as f64).abs() / storm.reports as f64;
                let fraction = peak * (1.0 - distance).max(0.0);
                let out = (fraction * total as f64).round() as u64;
                outage.push_str(&format!(
                    "{},{},{},{},{}\n",
                    storm.name,
                    county_fips(c),
                    t.format("%Y-%m-%dT%H:%MZ"),
                    out,
                    total
                ));
            }
        }
    }

    let mut socio = String::from("county_fips,acs_year,var_id,value\n");
    for c in 0..N_COUNTIES {
        for year in [2017, 2018, 2019] {
            for id in 2..=23u32 {
                let value = match id {
                    8 => 20_000.0 + 5_000.0 * c as f64 + 100.0 * (year - 2017) as f64,
                    9 => 10.0 + 13.0 * c as f64 + (year - 2017) as f64,
                    _ => ((c * 7 + id as usize * 13 + (year as usize - 2017) * 3) % 101) as f64,
                };
                socio.push_str(&format!("{},{},{},{}\n", county_fips(c), year, id, value));
            }
        }
    }

    let mut meta = String::from("county_fips,urban,customers\n");
    for c in 0..N_COUNTIES {
        meta.push_str(&format!(
            "{},{},{}\n",
            county_fips(c),
            u8::from(c % 3 == 0),
            customers_total(c)
        ));
    }

    let pixel = |row: usize, col: usize| (25.0 + 0.25 * row as f64, -87.0 + 0.25 * col as f64);
    let mut pixels = String::from("county_fips,lat,lon\n");
    let mut all_pixels: Vec<(f64, f64)> = Vec::new();
    for c in 0..N_COUNTIES {
        let cells = [(c % 10, (c / 10) % 10), ((c + 3) % 10, (c / 10 + 5) % 10)];
        for (row, col) in cells {
            let (lat, lon) = pixel(row, col);
            pixels.push_str(&format!("{},{},{}\n", county_fips(c), lat, lon));
            if !all_pixels.contains(&(lat, lon)) {
                all_pixels.push((lat, lon));
            }
        }
    }

    let mut gust = String::from("time_utc,lat,lon,fg10_ms\n");
    for (s, storm) in STORMS.iter().enumerate() {
        let first = utc(storm.first);
        let last = utc(storm.last);
        let start_hour = first - Duration::minutes(i64::from(first.minute()));
        let mut hour = start_hour;
        let mut h = 0i64;
        while hour <= last + Duration::hours(1) {
            for (i, &(lat, lon)) in all_pixels.iter().enumerate() {
                let phase = h as f64 * 0.21 + i as f64 * 0.83 + s as f64;
                let fg10 = 8.0 + 22.0 * phase.sin().abs() + (i % 5) as f64;
                gust.push_str(&format!(
                    "{},{},{},{:.3}\n",
                    hour.format("%Y-%m-%dT%H:%MZ"),
                    lat,
                    lon,
                    fg10
                ));
            }
            hour += Duration::hours(1);
            h += 1;
        }
    }

    let mut windows = String::from("hurricane,first_report_utc,last_report_utc,reports\n");
    for storm in &STORMS {
        windows.push_str(&format!(
            "{},{},{},{}\n",
            storm.name, storm.first, storm.last, storm.reports
        ));
    }

    GoldenCorpus {
        outage_csv: outage,
        socio_csv: socio,
        meta_csv: meta,
        gust_csv: gust,
        pixels_csv: pixels,
        windows_csv: windows,
    }
}
