//! Glue between stages: feature artifacts, label alignment and the weekly
//! frame the forecaster trains on.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{build_feature_matrix, fit_scaler, FeatureError, FeatureMatrix, FeatureSpec, ScalerParams};
use crate::forecast::{fit, ForecastConfig, ForecastError, ForecastModel, Regressor};
use crate::index::{weekly_resample, ScoreRow};
use crate::ingest::EnvSeries;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no dates shared between {0} and {1}")]
    NoOverlap(&'static str, &'static str),
    #[error("feature column {0} not found")]
    MissingColumn(String),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
}

/// Everything needed to rebuild a feature matrix from raw records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureArtifact {
    pub spec: FeatureSpec,
    pub scaler: ScalerParams,
}

impl FeatureArtifact {
    /// Fits scaling ranges on `series`.
    pub fn fit(series: &EnvSeries, spec: FeatureSpec) -> Result<FeatureArtifact, FeatureError> {
        let scaler = fit_scaler(series, &spec)?;
        Ok(FeatureArtifact { spec, scaler })
    }

    pub fn apply(&self, series: &EnvSeries) -> Result<FeatureMatrix, FeatureError> {
        build_feature_matrix(series, &self.spec, &self.scaler)
    }
}

/// Feature rows that have a label, with labels as class indices.
pub fn align_labels(
    features: &FeatureMatrix,
    labels: &[ScoreRow],
) -> Result<(FeatureMatrix, Vec<usize>), PipelineError> {
    let by_date: BTreeMap<NaiveDate, usize> = labels
        .iter()
        .map(|r| (r.date, r.label.class_index()))
        .collect();
    let (rows, y): (Vec<usize>, Vec<usize>) = features
        .dates
        .iter()
        .enumerate()
        .filter_map(|(i, d)| by_date.get(d).map(|c| (i, *c)))
        .unzip();
    if rows.is_empty() {
        return Err(PipelineError::NoOverlap("features", "labels"));
    }
    Ok((features.select_rows(&rows), y))
}

/// Weekly target and aligned weekly regressors.
#[derive(Debug, Clone, PartialEq)]
pub struct WeeklyFrame {
    pub y: Vec<(NaiveDate, f64)>,
    pub regressors: Vec<Regressor>,
}

/// Weekly means of the daily scores and of the named feature columns,
/// computed over the dates both inputs share so every series uses the same
/// 7-day blocks.
pub fn weekly_frame(
    daily_scores: &[(NaiveDate, f64)],
    features: Option<&FeatureMatrix>,
    regressors: &[String],
) -> Result<WeeklyFrame, PipelineError> {
    let Some(fm) = features.filter(|_| !regressors.is_empty()) else {
        return Ok(WeeklyFrame {
            y: weekly_resample(daily_scores),
            regressors: Vec::new(),
        });
    };
    let columns: Vec<usize> = regressors
        .iter()
        .map(|name| fm.column_index(name).ok_or_else(|| PipelineError::MissingColumn(name.clone())))
        .collect::<Result<_, _>>()?;
    let rows: BTreeMap<NaiveDate, usize> = fm.dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let shared: Vec<(NaiveDate, f64, usize)> = daily_scores
        .iter()
        .filter_map(|(d, s)| rows.get(d).map(|i| (*d, *s, *i)))
        .collect();
    if shared.is_empty() {
        return Err(PipelineError::NoOverlap("scores", "features"));
    }
    let y = weekly_resample(&shared.iter().map(|(d, s, _)| (*d, *s)).collect::<Vec<_>>());
    let regressors = regressors
        .iter()
        .zip(columns)
        .map(|(name, j)| {
            let daily: Vec<(NaiveDate, f64)> = shared.iter().map(|(d, _, i)| (*d, fm.values[*i][j])).collect();
            Regressor {
                name: name.clone(),
                values: weekly_resample(&daily).into_iter().map(|(_, v)| v).collect(),
            }
        })
        .collect();
    Ok(WeeklyFrame { y, regressors })
}

/// Weekly resample followed by [`fit`].
pub fn fit_forecaster(
    daily_scores: &[(NaiveDate, f64)],
    features: Option<&FeatureMatrix>,
    regressors: &[String],
    config: &ForecastConfig,
) -> Result<ForecastModel, PipelineError> {
    let frame = weekly_frame(daily_scores, features, regressors)?;
    Ok(fit(&frame.y, &frame.regressors, config)?)
}
