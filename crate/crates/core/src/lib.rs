//! Environmental maintenance-pressure risk engine.
//!
//! The crate turns daily meteorological series into a Maintenance Pressure
//! Index (MPI), trains a boosted-tree surrogate classifier on engineered
//! features, explains it with exact tree Shapley values and forecasts weekly
//! pressure with an additive trend + seasonality + regressor model.
//!
//! Module map:
//!
//! - [`ingest`]: CSV schema, validation, POWER client, AOD merge, gap fill
//! - [`synth`]: seeded synthetic weather generator
//! - [`features`]: min-max scaling, rolling/lagged features
//! - [`index`]: triggers, EOF weights, MPI score, risk bands, weekly resampling
//! - [`gbdt`]: softmax gradient-boosted trees
//! - [`explain`]: exact tree Shapley values and the brute-force oracle
//! - [`forecast`]: additive weekly forecaster and classical decomposition
//! - [`evaluate`]: confusion matrix, classification report, regression metrics
//! - [`pipeline`]: glue shared by the CLI and the HTTP service

pub mod evaluate;
pub mod explain;
pub mod features;
pub mod forecast;
pub mod gbdt;
pub mod index;
pub mod ingest;
pub mod pipeline;
pub mod stats;
pub mod synth;

pub use chrono::NaiveDate;
