use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use mpi_core::explain::{tree_shap, waterfall, ShapAttribution, Waterfall};
use mpi_core::forecast::{predict, ForecastRow};
use mpi_core::gbdt::{argmax, predict_margin, softmax};
use mpi_core::index::{score_days, BandEdges, DayInput, MpiScore, RiskLabel, Thresholds, TriggerVector, Weights};
use mpi_core::ingest::{EnvRecord, EnvSeries};
use mpi_core::NaiveDate;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::ApiError;
use crate::state::{AppState, ScenarioFit, WeeklyPoint};

/// Largest accepted forecast horizon in weeks.
pub const MAX_HORIZON: i64 = 520;

type Shared = Arc<AppState>;

fn json_response<T: Serialize>(value: &T) -> Response {
    match serde_json::to_vec(value) {
        Ok(body) => (StatusCode::OK, [("content-type", "application/json")], body).into_response(),
        Err(e) => ApiError::internal(format!("response serialization failed: {e}")).into_response(),
    }
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(ApiError::malformed)
}

async fn health() -> Response {
    json_response(&serde_json::json!({"status": "ok"}))
}

/// One scored day as returned by `/score`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredDay {
    pub date: NaiveDate,
    pub mpi: f64,
    pub label: RiskLabel,
    pub triggers: TriggerVector,
}

impl From<&MpiScore> for ScoredDay {
    fn from(s: &MpiScore) -> Self {
        ScoredDay {
            date: s.date,
            mpi: s.score,
            label: s.label,
            triggers: s.triggers,
        }
    }
}

async fn score(State(state): State<Shared>, body: Bytes) -> Result<Response, ApiError> {
    let days: Vec<DayInput> = parse(&body)?;
    let scored: Vec<ScoredDay> = score_days(&days, &state.resolved).iter().map(ScoredDay::from).collect();
    Ok(json_response(&scored))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Weights>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Thresholds>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band_edges: Option<BandEdges>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastRequest {
    pub horizon: i64,
    #[serde(default)]
    pub overrides: Option<Overrides>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResponse {
    pub horizon: usize,
    pub interval_level: f64,
    pub rows: Vec<ForecastRow>,
    /// Weekly MPI history under the effective configuration.
    pub history: Vec<WeeklyPoint>,
    pub band_edges: BandEdges,
    pub overrides_applied: bool,
}

async fn forecast(State(state): State<Shared>, body: Bytes) -> Result<Response, ApiError> {
    let request: ForecastRequest = parse(&body)?;
    if !(1..=MAX_HORIZON).contains(&request.horizon) {
        return Err(ApiError::unprocessable(
            "horizon_out_of_range",
            format!("horizon must be within 1..={MAX_HORIZON} weeks"),
        )
        .with_detail(serde_json::json!({"horizon": request.horizon})));
    }
    let horizon = request.horizon as usize;
    let overrides = request
        .overrides
        .filter(|o| o.weights.is_some() || o.thresholds.is_some() || o.band_edges.is_some());
    let fit = match &overrides {
        None => Arc::clone(&state.baseline),
        Some(o) => scenario(&state, o).await?,
    };
    let result = predict(&fit.model, horizon).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(json_response(&ForecastResponse {
        horizon,
        interval_level: result.interval_level,
        rows: result.rows,
        history: fit.history.clone(),
        band_edges: fit.band_edges,
        overrides_applied: overrides.is_some(),
    }))
}

async fn scenario(state: &Shared, overrides: &Overrides) -> Result<Arc<ScenarioFit>, ApiError> {
    let mut config = state.mpi;
    if let Some(w) = overrides.weights {
        config.weights = w;
    }
    if let Some(t) = overrides.thresholds {
        config.thresholds = t;
    }
    if let Some(e) = overrides.band_edges {
        config.band_edges = e;
    }
    config
        .validate()
        .map_err(|e| ApiError::unprocessable("invalid_override", e.to_string()))?;
    // Serialization of the effective config is deterministic, so it doubles
    // as the cache key.
    let key = serde_json::to_string(&config).map_err(|e| ApiError::internal(e.to_string()))?;
    if let Some(hit) = state.cache.get(&key) {
        return Ok(hit);
    }
    let worker = Arc::clone(state);
    let fit = tokio::task::spawn_blocking(move || worker.refit(&config))
        .await
        .map_err(|e| ApiError::internal(format!("scenario worker failed: {e}")))?
        .map_err(|e| ApiError::unprocessable("scenario_failed", e))?;
    let fit = Arc::new(fit);
    state.cache.insert(key, Arc::clone(&fit));
    Ok(fit)
}

async fn explain_global(State(state): State<Shared>) -> Response {
    json_response(&state.importance)
}

/// Either a feature vector in model column order or a window of
/// consecutive daily records whose last day is explained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRequest {
    #[serde(default)]
    pub features: Option<Vec<f64>>,
    #[serde(default)]
    pub records: Option<Vec<EnvRecord>>,
    /// Class to explain; defaults to the predicted class.
    #[serde(default)]
    pub class: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleExplanation {
    pub date: Option<NaiveDate>,
    pub predicted: RiskLabel,
    pub probabilities: Vec<f64>,
    pub waterfall: Waterfall,
    pub attribution: ShapAttribution,
}

fn sample_vector(state: &AppState, request: &SampleRequest) -> Result<(Option<NaiveDate>, Vec<f64>), ApiError> {
    let bad = |m: String| ApiError::unprocessable("bad_sample", m);
    match (&request.features, &request.records) {
        (Some(x), None) => {
            let n = state.classifier.n_features();
            if x.len() != n {
                return Err(bad(format!("expected {n} features, got {}", x.len())));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(bad("features must be finite".into()));
            }
            Ok((None, x.clone()))
        }
        (None, Some(records)) => {
            let series = EnvSeries::new(records.clone()).map_err(|e| bad(e.to_string()))?;
            let fm = state.features.apply(&series).map_err(|e| {
                bad(format!(
                    "{e}; a window needs at least {} consecutive days",
                    state.features.spec.warmup() + 1
                ))
            })?;
            let last = fm.n_rows().checked_sub(1).ok_or_else(|| bad("window produced no feature rows".into()))?;
            Ok((Some(fm.dates[last]), fm.row(last).to_vec()))
        }
        _ => Err(bad("provide exactly one of `features` or `records`".into())),
    }
}

async fn explain_sample(State(state): State<Shared>, body: Bytes) -> Result<Response, ApiError> {
    let request: SampleRequest = parse(&body)?;
    let (date, x) = sample_vector(&state, &request)?;
    let margins = predict_margin(&state.classifier, &x).map_err(|e| ApiError::internal(e.to_string()))?;
    let predicted = argmax(&margins);
    let class = request.class.unwrap_or(predicted);
    let attribution = tree_shap(&state.classifier, &x).map_err(|e| ApiError::internal(e.to_string()))?;
    let waterfall = waterfall(&attribution, class).map_err(|e| ApiError::unprocessable("bad_class", e.to_string()))?;
    Ok(json_response(&SampleExplanation {
        date,
        predicted: RiskLabel::from_class_index(predicted).expect("three-class model checked at startup"),
        probabilities: softmax(&margins),
        waterfall,
        attribution,
    }))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

fn endpoints() -> Router<Shared> {
    Router::new()
        .route("/health", get(health))
        .route("/score", post(score))
        .route("/forecast", post(forecast))
        .route("/explain/global", get(explain_global))
        .route("/explain/sample", post(explain_sample))
}

/// All endpoints, under `/v1` and at the root.
pub fn router(state: Shared) -> Router {
    let limit = state.body_limit;
    Router::new()
        .nest("/v1", endpoints())
        .merge(endpoints())
        .fallback(not_found)
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}
