use std::sync::Mutex;

use chrono::{Duration, NaiveDate};
use mpi_core::ingest::{
    fetch_power_with, merge_aod, validate, EnvRecord, EnvSeries, IngestError, PowerRequest, PowerTransport, Verdict,
};
use serde_json::json;

const WEEK: &str = include_str!("fixtures/power_duqm_2020w1.json");
const WEEK_WITH_FILL: &str = include_str!("fixtures/power_duqm_2020w1_fill.json");

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

/// Serves one canned body and records the URLs it was asked for.
struct Canned {
    body: &'static str,
    seen: Mutex<Vec<String>>,
}

impl PowerTransport for Canned {
    fn get(&self, url: &str) -> Result<String, IngestError> {
        self.seen.lock().unwrap().push(url.to_string());
        Ok(self.body.to_string())
    }
}

fn canned(body: &'static str) -> Canned {
    Canned {
        body,
        seen: Mutex::new(Vec::new()),
    }
}

#[test]
fn fixture_week_parses() {
    let t = canned(WEEK);
    let req = PowerRequest::new(19.67, 57.7, date(2020, 1, 1), date(2020, 1, 7)).unwrap();
    let series = fetch_power_with(&t, &req).unwrap();

    let urls = t.seen.lock().unwrap();
    assert_eq!(urls.len(), 1);
    assert!(urls[0].contains("start=20200101&end=20200107"));
    assert!(urls[0].contains("parameters=T2M,RH2M,WS10M,ALLSKY_SFC_SW_DWN"));

    assert_eq!(series.len(), 7);
    let first = series.records()[0];
    assert_eq!(first.date, date(2020, 1, 1));
    assert_eq!(first.temperature, 22.41);
    assert_eq!(first.humidity, 61.25);
    assert_eq!(first.wind_speed, 5.62);
    assert!((first.solar_irradiance - 4.58 * 1000.0 / 24.0).abs() < 1e-12);
    assert!(first.aod.is_nan());
    assert_eq!(series.location.unwrap().latitude, 19.67);
}

#[test]
fn fill_value_day_becomes_gap() {
    let req = PowerRequest::new(19.67, 57.7, date(2020, 1, 1), date(2020, 1, 7)).unwrap();
    let series = fetch_power_with(&canned(WEEK_WITH_FILL), &req).unwrap();
    assert_eq!(series.len(), 6);
    assert!(series.records().iter().all(|r| r.date != date(2020, 1, 4)));

    let aod: Vec<EnvRecord> = (0..7)
        .map(|i| EnvRecord {
            date: date(2020, 1, 1) + Duration::days(i),
            aod: 0.4,
            temperature: 0.0,
            humidity: 0.0,
            wind_speed: 0.0,
            solar_irradiance: 0.0,
        })
        .collect();
    let merged = merge_aod(&series, &EnvSeries::new(aod).unwrap()).unwrap();
    let report = validate(&merged);
    assert_eq!(report.verdict, Verdict::Warn);
    assert_eq!(report.gap_dates, vec![date(2020, 1, 4)]);
}

#[test]
fn request_narrower_than_payload_is_trimmed() {
    let req = PowerRequest::new(19.67, 57.7, date(2020, 1, 3), date(2020, 1, 5)).unwrap();
    let series = fetch_power_with(&canned(WEEK), &req).unwrap();
    assert_eq!(series.dates(), vec![date(2020, 1, 3), date(2020, 1, 4), date(2020, 1, 5)]);
}

/// Builds a constant payload for whatever range the URL asks for.
struct Generated;

fn query(url: &str, key: &str) -> NaiveDate {
    let v = url
        .split(['?', '&'])
        .find_map(|kv| kv.strip_prefix(&format!("{key}=")))
        .unwrap();
    NaiveDate::parse_from_str(v, "%Y%m%d").unwrap()
}

impl PowerTransport for Generated {
    fn get(&self, url: &str) -> Result<String, IngestError> {
        let (start, end) = (query(url, "start"), query(url, "end"));
        let days: Vec<String> = start
            .iter_days()
            .take_while(|d| *d <= end)
            .map(|d| d.format("%Y%m%d").to_string())
            .collect();
        let col = |v: f64| days.iter().map(|d| (d.clone(), json!(v))).collect::<serde_json::Map<_, _>>();
        Ok(json!({
            "properties": {"parameter": {
                "T2M": col(30.0), "RH2M": col(50.0), "WS10M": col(3.0), "ALLSKY_SFC_SW_DWN": col(24.0)
            }},
            "header": {"fill_value": -999.0},
            "parameters": {"ALLSKY_SFC_SW_DWN": {"units": "MJ/m^2/day"}}
        })
        .to_string())
    }
}

#[test]
fn multi_year_range_is_chunked_and_merged() {
    let req = PowerRequest::new(19.67, 57.7, date(2019, 12, 20), date(2021, 1, 10)).unwrap();
    assert_eq!(req.chunks().len(), 3);
    let series = fetch_power_with(&Generated, &req).unwrap();
    assert_eq!(series.len() as i64, (date(2021, 1, 10) - date(2019, 12, 20)).num_days() + 1);
    assert!(series.is_contiguous());
    assert!((series.records()[0].solar_irradiance - 24.0e6 / 86_400.0).abs() < 1e-9);
}

struct Down;

impl PowerTransport for Down {
    fn get(&self, _: &str) -> Result<String, IngestError> {
        Err(IngestError::Transport("503 Service Unavailable".into()))
    }
}

#[test]
fn transport_failure_is_retryable() {
    let req = PowerRequest::new(19.67, 57.7, date(2020, 1, 1), date(2020, 1, 7)).unwrap();
    let err = fetch_power_with(&Down, &req).unwrap_err();
    assert!(err.is_retryable());
    let bad = canned(r#"{"messages": ["The POWER API is under maintenance"]}"#);
    let err = fetch_power_with(&bad, &req).unwrap_err();
    assert!(matches!(err, IngestError::Data(_)));
    assert!(!err.is_retryable());
}
