//! HTTP/JSON facade over `mpi-core`: scoring, what-if forecasting and
//! explanations. Every endpoint is served under `/v1` and at the root.
//!
//! | Method | Path | Body |
//! |---|---|---|
//! | GET | `/health` | |
//! | POST | `/score` | list of daily records, each optionally with `irr_var` |
//! | POST | `/forecast` | `{horizon, overrides?: {weights?, thresholds?, band_edges?}}` |
//! | GET | `/explain/global` | |
//! | POST | `/explain/sample` | `{features}` or `{records}`, optional `class` |
//!
//! Errors are `{code, message, detail}`. JSON Schemas for every payload
//! live in `schemas/`.

pub mod error;
pub mod routes;
pub mod state;

use std::sync::Arc;

pub use error::{ApiError, ErrorBody, StartupError};
pub use routes::{router, ForecastRequest, ForecastResponse, Overrides, SampleExplanation, SampleRequest, ScoredDay, MAX_HORIZON};
pub use state::{AppState, Artifacts, ScenarioCache, ServiceConfig, WeeklyPoint};

/// Loads artifacts and serves until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> Result<(), StartupError> {
    let state = Arc::new(AppState::load(&config)?);
    let listener = tokio::net::TcpListener::bind(&config.bind)
        .await
        .map_err(|source| StartupError::Bind {
            addr: config.bind.clone(),
            source,
        })?;
    log::info!("listening on {}", config.bind);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|source| StartupError::Bind {
            addr: config.bind,
            source,
        })
}
