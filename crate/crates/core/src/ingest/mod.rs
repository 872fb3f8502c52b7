//! Daily environmental series: CSV schema, validation, AOD merge and gap fill.
//!
//! The CSV header is fixed:
//!
//! ```text
//! date,aod,temperature,humidity,wind_speed,solar_irradiance
//! ```
//!
//! Dates are ISO-8601 calendar days without a time zone. An empty `aod`
//! cell means "not yet merged" (see [`merge_aod`]) and is carried as `NaN`.

mod power;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use power::{
    fetch_power, fetch_power_with, parse_power_json, PowerRequest, PowerTransport, POWER_ENDPOINT,
    POWER_PARAMETERS,
};
#[cfg(feature = "power-http")]
pub use power::HttpTransport;

/// Exact header expected by [`parse_env_csv`] and written by [`to_csv`].
pub const CSV_HEADER: [&str; 6] = [
    "date",
    "aod",
    "temperature",
    "humidity",
    "wind_speed",
    "solar_irradiance",
];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("schema error: expected header `{expected}`, found `{found}`")]
    Schema { expected: String, found: String },
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("duplicate date {date} at line {line}")]
    Duplicate { date: NaiveDate, line: u64 },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("transport error (retryable): {0}")]
    Transport(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("AOD merge failed: no AOD value for {0}")]
    MergeMismatch(NaiveDate),
    #[error("series failed validation: {0}")]
    Invalid(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl IngestError {
    /// Whether retrying the same request may succeed.
    pub fn is_retryable(&self) -> bool {
        matches!(self, IngestError::Transport(_))
    }
}

/// One day of observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvRecord {
    pub date: NaiveDate,
    /// Aerosol optical depth, dimensionless. `NaN` marks a missing value.
    pub aod: f64,
    /// Air temperature at 2 m, °C.
    pub temperature: f64,
    /// Relative humidity at 2 m, percent.
    pub humidity: f64,
    /// Wind speed at 10 m, m/s.
    pub wind_speed: f64,
    /// Mean all-sky surface shortwave irradiance, W/m².
    pub solar_irradiance: f64,
}

impl EnvRecord {
    /// The value of a base variable by name.
    pub fn get(&self, var: Variable) -> f64 {
        match var {
            Variable::Aod => self.aod,
            Variable::Temperature => self.temperature,
            Variable::Humidity => self.humidity,
            Variable::WindSpeed => self.wind_speed,
            Variable::SolarIrradiance => self.solar_irradiance,
        }
    }
}

/// The five meteorological base variables carried by [`EnvRecord`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    Aod,
    Temperature,
    Humidity,
    WindSpeed,
    SolarIrradiance,
}

impl Variable {
    pub const ALL: [Variable; 5] = [
        Variable::Aod,
        Variable::Temperature,
        Variable::Humidity,
        Variable::WindSpeed,
        Variable::SolarIrradiance,
    ];

    /// Column name in the CSV schema.
    pub fn column(self) -> &'static str {
        match self {
            Variable::Aod => "aod",
            Variable::Temperature => "temperature",
            Variable::Humidity => "humidity",
            Variable::WindSpeed => "wind_speed",
            Variable::SolarIrradiance => "solar_irradiance",
        }
    }

    /// Short stem used in engineered feature names (`irradiance_rolling_3d_std`).
    pub fn stem(self) -> &'static str {
        match self {
            Variable::SolarIrradiance => "irradiance",
            other => other.column(),
        }
    }

    pub fn from_name(name: &str) -> Option<Variable> {
        Variable::ALL
            .into_iter()
            .find(|v| v.column() == name || v.stem() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub latitude: f64,
    pub longitude: f64,
}

/// Date-ordered daily records. Dates are unique and strictly increasing;
/// gaps are allowed and reported by [`validate`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EnvSeries {
    pub location: Option<Location>,
    records: Vec<EnvRecord>,
}

impl EnvSeries {
    /// Sorts records by date and rejects duplicates.
    pub fn new(mut records: Vec<EnvRecord>) -> Result<Self, IngestError> {
        records.sort_by_key(|r| r.date);
        if let Some(w) = records.windows(2).find(|w| w[0].date == w[1].date) {
            return Err(IngestError::Duplicate {
                date: w[1].date,
                line: 0,
            });
        }
        Ok(EnvSeries {
            location: None,
            records,
        })
    }

    pub fn with_location(mut self, location: Location) -> Self {
        self.location = Some(location);
        self
    }

    pub fn records(&self) -> &[EnvRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// First and last date, if any.
    pub fn span(&self) -> Option<(NaiveDate, NaiveDate)> {
        Some((self.records.first()?.date, self.records.last()?.date))
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.records.iter().map(|r| r.date).collect()
    }

    pub fn column(&self, var: Variable) -> Vec<f64> {
        self.records.iter().map(|r| r.get(var)).collect()
    }

    /// True when every calendar day inside the span is present.
    pub fn is_contiguous(&self) -> bool {
        self.records
            .windows(2)
            .all(|w| (w[1].date - w[0].date).num_days() == 1)
    }

    /// A copy with every date moved by `days`.
    pub fn shifted(&self, days: i64) -> EnvSeries {
        let records = self
            .records
            .iter()
            .map(|r| EnvRecord {
                date: r.date + chrono::Duration::days(days),
                ..*r
            })
            .collect();
        EnvSeries {
            location: self.location,
            records,
        }
    }

    /// Sub-series of records at positions `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> EnvSeries {
        EnvSeries {
            location: self.location,
            records: self.records[range].to_vec(),
        }
    }
}

/// Parses the ingest CSV schema.
pub fn parse_env_csv(text: &[u8]) -> Result<EnvSeries, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(text);

    let header = reader.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(IngestError::Schema {
            expected: CSV_HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }

    let mut records = Vec::new();
    let mut seen: BTreeMap<NaiveDate, u64> = BTreeMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            IngestError::Row {
                line,
                message: e.to_string(),
            }
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let date = NaiveDate::parse_from_str(&row[0], "%Y-%m-%d").map_err(|e| IngestError::Row {
            line,
            message: format!("date `{}`: {e}", &row[0]),
        })?;
        let num = |idx: usize, allow_missing: bool| -> Result<f64, IngestError> {
            let cell = row[idx].trim();
            if cell.is_empty() && allow_missing {
                return Ok(f64::NAN);
            }
            cell.parse::<f64>().map_err(|e| IngestError::Row {
                line,
                message: format!("{} `{cell}`: {e}", CSV_HEADER[idx]),
            })
        };
        let record = EnvRecord {
            date,
            aod: num(1, true)?,
            temperature: num(2, false)?,
            humidity: num(3, false)?,
            wind_speed: num(4, false)?,
            solar_irradiance: num(5, false)?,
        };
        if seen.insert(date, line).is_some() {
            return Err(IngestError::Duplicate { date, line });
        }
        records.push(record);
    }
    EnvSeries::new(records)
}

fn fmt_value(out: &mut String, v: f64) {
    if !v.is_nan() {
        // `Display` for f64 is the shortest representation that round-trips.
        let _ = write!(out, "{v}");
    }
}

/// Serializes a series in the ingest CSV schema. Missing values are written
/// as empty cells.
pub fn to_csv(series: &EnvSeries) -> String {
    let mut out = CSV_HEADER.join(",");
    out.push('\n');
    for r in series.records() {
        let _ = write!(out, "{}", r.date.format("%Y-%m-%d"));
        for v in [r.aod, r.temperature, r.humidity, r.wind_speed, r.solar_irradiance] {
            out.push(',');
            fmt_value(&mut out, v);
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Warn,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutOfRange {
    pub date: NaiveDate,
    pub field: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub row_count: usize,
    pub gap_dates: Vec<NaiveDate>,
    pub out_of_range: Vec<OutOfRange>,
    pub verdict: Verdict,
}

/// Checks record invariants and lists missing calendar days. Never fails.
///
/// Verdict is `fail` iff any value is out of range (non-finite values
/// included), `warn` for gaps or an empty series, `pass` otherwise.
pub fn validate(series: &EnvSeries) -> ValidationReport {
    let mut gap_dates = Vec::new();
    for w in series.records().windows(2) {
        let mut d = w[0].date.succ_opt();
        while let Some(day) = d {
            if day >= w[1].date {
                break;
            }
            gap_dates.push(day);
            d = day.succ_opt();
        }
    }

    let mut out_of_range = Vec::new();
    for r in series.records() {
        let checks = [
            ("aod", r.aod, r.aod >= 0.0),
            ("temperature", r.temperature, true),
            ("humidity", r.humidity, (0.0..=100.0).contains(&r.humidity)),
            ("wind_speed", r.wind_speed, r.wind_speed >= 0.0),
            ("solar_irradiance", r.solar_irradiance, r.solar_irradiance >= 0.0),
        ];
        for (field, value, ok) in checks {
            if !ok || !value.is_finite() {
                out_of_range.push(OutOfRange {
                    date: r.date,
                    field: field.to_string(),
                    value,
                });
            }
        }
    }

    let verdict = if !out_of_range.is_empty() {
        Verdict::Fail
    } else if !gap_dates.is_empty() || series.is_empty() {
        Verdict::Warn
    } else {
        Verdict::Pass
    };
    ValidationReport {
        row_count: series.len(),
        gap_dates,
        out_of_range,
        verdict,
    }
}

/// Module-boundary guard: errors when [`validate`] reports `fail`.
pub fn require_valid(series: &EnvSeries) -> Result<ValidationReport, IngestError> {
    let report = validate(series);
    if report.verdict == Verdict::Fail {
        let first = &report.out_of_range[0];
        return Err(IngestError::Invalid(format!(
            "{} out-of-range value(s), first: {} {}={}",
            report.out_of_range.len(),
            first.date,
            first.field,
            first.value
        )));
    }
    Ok(report)
}

/// Fills the `aod` column of `met` from `aod_source`, keyed on date.
///
/// Every date in `met` must have a finite AOD in `aod_source`; extra dates in
/// the source are ignored.
pub fn merge_aod(met: &EnvSeries, aod_source: &EnvSeries) -> Result<EnvSeries, IngestError> {
    let by_date: BTreeMap<NaiveDate, f64> = aod_source
        .records()
        .iter()
        .filter(|r| r.aod.is_finite())
        .map(|r| (r.date, r.aod))
        .collect();
    let records = met
        .records()
        .iter()
        .map(|r| {
            by_date
                .get(&r.date)
                .map(|&aod| EnvRecord { aod, ..*r })
                .ok_or(IngestError::MergeMismatch(r.date))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EnvSeries {
        location: met.location,
        records,
    })
}

/// Fills interior gaps by repeating the previous day's values.
pub fn forward_fill(series: &EnvSeries) -> EnvSeries {
    let mut records: Vec<EnvRecord> = Vec::with_capacity(series.len());
    for r in series.records() {
        if let Some(prev) = records.last().copied() {
            let mut day = prev.date.succ_opt();
            while let Some(d) = day.filter(|d| *d < r.date) {
                records.push(EnvRecord { date: d, ..prev });
                day = d.succ_opt();
            }
        }
        records.push(*r);
    }
    EnvSeries {
        location: series.location,
        records,
    }
}
