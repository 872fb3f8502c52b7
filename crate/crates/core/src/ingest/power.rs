//! Client for the NASA POWER daily point API.
//!
//! POWER supplies temperature, humidity, wind speed and irradiance. It has no
//! aerosol product, so the `aod` column of a fetched series is left missing
//! until [`super::merge_aod`] fills it from CSV.

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate};
use serde_json::Value;

use super::{EnvRecord, EnvSeries, IngestError, Location};

pub const POWER_ENDPOINT: &str = "https://power.larc.nasa.gov/api/temporal/daily/point";

/// Requested parameters, in request order.
pub const POWER_PARAMETERS: [&str; 4] = ["T2M", "RH2M", "WS10M", "ALLSKY_SFC_SW_DWN"];

const DEFAULT_FILL_VALUE: f64 = -999.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerRequest {
    pub location: Location,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl PowerRequest {
    pub fn new(lat: f64, lon: f64, start: NaiveDate, end: NaiveDate) -> Result<Self, IngestError> {
        if end < start {
            return Err(IngestError::Precondition(format!(
                "end {end} is before start {start}"
            )));
        }
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(IngestError::Precondition(format!(
                "coordinates out of range: lat={lat}, lon={lon}"
            )));
        }
        Ok(PowerRequest {
            location: Location {
                latitude: lat,
                longitude: lon,
            },
            start,
            end,
        })
    }

    pub fn url(&self) -> String {
        format!(
            "{POWER_ENDPOINT}?community=RE&parameters={}&latitude={}&longitude={}&start={}&end={}&format=JSON",
            POWER_PARAMETERS.join(","),
            self.location.latitude,
            self.location.longitude,
            self.start.format("%Y%m%d"),
            self.end.format("%Y%m%d"),
        )
    }

    /// Splits the range into calendar-year chunks.
    pub fn chunks(&self) -> Vec<PowerRequest> {
        let mut out = Vec::new();
        let mut start = self.start;
        while start <= self.end {
            let year_end = NaiveDate::from_ymd_opt(start.year(), 12, 31).expect("valid date");
            let end = year_end.min(self.end);
            out.push(PowerRequest { start, end, ..*self });
            match end.succ_opt() {
                Some(next) => start = next,
                None => break,
            }
        }
        out
    }
}

/// Fetches the raw response body for a URL.
pub trait PowerTransport {
    fn get(&self, url: &str) -> Result<String, IngestError>;
}

/// Blocking HTTP transport backed by `reqwest`.
#[cfg(feature = "power-http")]
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

#[cfg(feature = "power-http")]
impl HttpTransport {
    pub fn new() -> Result<Self, IngestError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(60))
            .build()
            .map_err(|e| IngestError::Transport(e.to_string()))?;
        Ok(HttpTransport { client })
    }
}

#[cfg(feature = "power-http")]
impl PowerTransport for HttpTransport {
    fn get(&self, url: &str) -> Result<String, IngestError> {
        let resp = self
            .client
            .get(url)
            .send()
            .map_err(|e| IngestError::Transport(e.to_string()))?;
        let status = resp.status();
        let body = resp
            .text()
            .map_err(|e| IngestError::Transport(e.to_string()))?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(IngestError::Transport(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(IngestError::Data(format!("HTTP {status}: {body}")));
        }
        Ok(body)
    }
}

/// Fetches a daily series over the live API.
#[cfg(feature = "power-http")]
pub fn fetch_power(
    lat: f64,
    lon: f64,
    start: NaiveDate,
    end: NaiveDate,
) -> Result<EnvSeries, IngestError> {
    let request = PowerRequest::new(lat, lon, start, end)?;
    fetch_power_with(&HttpTransport::new()?, &request)
}

#[cfg(not(feature = "power-http"))]
pub fn fetch_power(
    lat: f64,
    lon: f64,
    start: NaiveDate,
    end: NaiveDate,
) -> Result<EnvSeries, IngestError> {
    PowerRequest::new(lat, lon, start, end)?;
    Err(IngestError::Transport(
        "built without the `power-http` feature".into(),
    ))
}

/// Fetches year-sized chunks concurrently and merges them by date.
pub fn fetch_power_with<T: PowerTransport + Sync>(
    transport: &T,
    request: &PowerRequest,
) -> Result<EnvSeries, IngestError> {
    let chunks = request.chunks();
    let results: Vec<Result<EnvSeries, IngestError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = chunks
            .iter()
            .map(|chunk| {
                scope.spawn(move || {
                    let body = transport.get(&chunk.url())?;
                    parse_power_json(&body, chunk)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("POWER fetch thread panicked"))
            .collect()
    });

    let mut records = Vec::new();
    for r in results {
        records.extend_from_slice(r?.records());
    }
    Ok(EnvSeries::new(records)?.with_location(request.location))
}

/// Factor converting a POWER irradiance unit to mean W/m².
fn irradiance_factor(units: Option<&str>) -> Result<f64, IngestError> {
    match units.map(str::trim) {
        None | Some("kW-hr/m^2/day") => Ok(1000.0 / 24.0),
        Some("MJ/m^2/day") => Ok(1.0e6 / 86_400.0),
        Some("W/m^2") => Ok(1.0),
        Some(other) => Err(IngestError::Data(format!(
            "unsupported ALLSKY_SFC_SW_DWN units `{other}`"
        ))),
    }
}

/// Parses a POWER daily point JSON response.
///
/// Days where any parameter carries the fill value (−999 unless the header
/// says otherwise) are omitted, so they surface as gaps in validation.
/// Days outside `request`'s range are ignored.
pub fn parse_power_json(body: &str, request: &PowerRequest) -> Result<EnvSeries, IngestError> {
    let doc: Value =
        serde_json::from_str(body).map_err(|e| IngestError::Data(format!("invalid JSON: {e}")))?;
    let params = doc
        .pointer("/properties/parameter")
        .and_then(Value::as_object)
        .ok_or_else(|| {
            let messages = doc
                .get("messages")
                .or_else(|| doc.get("errors"))
                .map(|m| m.to_string())
                .unwrap_or_default();
            IngestError::Data(format!("response has no parameter block {messages}"))
        })?;
    let fill = doc
        .pointer("/header/fill_value")
        .and_then(Value::as_f64)
        .unwrap_or(DEFAULT_FILL_VALUE);

    let mut columns: Vec<BTreeMap<NaiveDate, f64>> = Vec::with_capacity(POWER_PARAMETERS.len());
    for name in POWER_PARAMETERS {
        let series = params
            .get(name)
            .and_then(Value::as_object)
            .ok_or_else(|| IngestError::Data(format!("parameter {name} missing from response")))?;
        let mut col = BTreeMap::new();
        for (key, value) in series {
            let date = NaiveDate::parse_from_str(key, "%Y%m%d")
                .map_err(|e| IngestError::Data(format!("{name}: bad date key `{key}`: {e}")))?;
            let v = value
                .as_f64()
                .ok_or_else(|| IngestError::Data(format!("{name} {key}: non-numeric value")))?;
            col.insert(date, v);
        }
        columns.push(col);
    }
    if columns.iter().all(BTreeMap::is_empty) {
        return Err(IngestError::Data("empty payload".into()));
    }

    let irr_units = doc
        .pointer("/parameters/ALLSKY_SFC_SW_DWN/units")
        .and_then(Value::as_str);
    let irr_factor = irradiance_factor(irr_units)?;

    let is_fill = |v: f64| (v - fill).abs() < 1e-9;
    let mut records = Vec::new();
    for (&date, &t2m) in &columns[0] {
        if date < request.start || date > request.end {
            continue;
        }
        let (Some(&rh), Some(&ws), Some(&sw)) = (
            columns[1].get(&date),
            columns[2].get(&date),
            columns[3].get(&date),
        ) else {
            continue;
        };
        if [t2m, rh, ws, sw].into_iter().any(is_fill) {
            continue;
        }
        records.push(EnvRecord {
            date,
            aod: f64::NAN,
            temperature: t2m,
            humidity: rh,
            wind_speed: ws,
            solar_irradiance: sw * irr_factor,
        });
    }
    Ok(EnvSeries::new(records)?.with_location(request.location))
}
