use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use mpi_core::explain::{global_importance, GlobalImportance};
use mpi_core::features::FeatureMatrix;
use mpi_core::forecast::{select_regressors, ForecastConfig, ForecastModel};
use mpi_core::gbdt::TreeEnsemble;
use mpi_core::index::{score_series, weekly_resample, BandEdges, MpiConfig, ResolvedConfig, RiskLabel, ScoredSeries};
use mpi_core::ingest::{parse_env_csv, EnvSeries};
use mpi_core::pipeline::{fit_forecaster, FeatureArtifact};
use mpi_core::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::StartupError;

fn default_bind() -> String {
    "127.0.0.1:8080".into()
}

fn default_body_limit() -> usize {
    1 << 20
}

fn default_cache_size() -> usize {
    32
}

fn default_regressors() -> usize {
    4
}

/// Service configuration file. Relative paths resolve against the file's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    #[serde(default = "default_bind")]
    pub bind: String,
    /// Environmental history (`date,aod,...` CSV) used for re-scoring.
    pub history: PathBuf,
    pub mpi_config: PathBuf,
    pub classifier: PathBuf,
    /// Feature spec plus scaler ranges.
    pub features: PathBuf,
    /// Fitted forecaster. When absent one is fitted at startup.
    #[serde(default)]
    pub forecaster: Option<PathBuf>,
    /// Precomputed global importance (a bare ranking or an explain output
    /// with a `global_importance` field). When absent it is computed.
    #[serde(default)]
    pub importance: Option<PathBuf>,
    #[serde(default)]
    pub forecast_config: ForecastConfig,
    /// Regressor count when the forecaster is fitted at startup.
    #[serde(default = "default_regressors")]
    pub n_regressors: usize,
    #[serde(default = "default_body_limit")]
    pub body_limit_bytes: usize,
    #[serde(default = "default_cache_size")]
    pub override_cache_size: usize,
}

impl ServiceConfig {
    pub fn from_file(path: &Path) -> Result<ServiceConfig, StartupError> {
        let mut config: ServiceConfig = parse_json(path, &read(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.history);
        resolve(&mut config.mpi_config);
        resolve(&mut config.classifier);
        resolve(&mut config.features);
        config.forecaster.as_mut().map(resolve);
        config.importance.as_mut().map(resolve);
        Ok(config)
    }
}

fn read(path: &Path) -> Result<String, StartupError> {
    std::fs::read_to_string(path).map_err(|source| StartupError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_err(path: &Path, e: impl std::fmt::Display) -> StartupError {
    StartupError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T, StartupError> {
    serde_json::from_str(text).map_err(|e| parse_err(path, e))
}

/// Reads either a bare ranking or an object carrying one under
/// `global_importance`.
fn parse_importance(path: &Path, text: &str) -> Result<GlobalImportance, StartupError> {
    let value: serde_json::Value = parse_json(path, text)?;
    let inner = value.get("global_importance").cloned().unwrap_or(value);
    serde_json::from_value(inner).map_err(|e| parse_err(path, e))
}

/// Loaded artifacts, before derived state is built.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub history: EnvSeries,
    pub mpi: MpiConfig,
    pub classifier: TreeEnsemble,
    pub features: FeatureArtifact,
    pub forecaster: Option<ForecastModel>,
    pub importance: Option<GlobalImportance>,
    pub forecast_config: ForecastConfig,
    pub n_regressors: usize,
}

impl Artifacts {
    pub fn load(config: &ServiceConfig) -> Result<Artifacts, StartupError> {
        let history_text = read(&config.history)?;
        let history = parse_env_csv(history_text.as_bytes()).map_err(|e| parse_err(&config.history, e))?;
        let classifier = TreeEnsemble::from_json(&read(&config.classifier)?)
            .map_err(|e| parse_err(&config.classifier, e))?;
        let forecaster = match &config.forecaster {
            Some(p) => Some(ForecastModel::from_json(&read(p)?).map_err(|e| parse_err(p, e))?),
            None => None,
        };
        let importance = match &config.importance {
            Some(p) => Some(parse_importance(p, &read(p)?)?),
            None => None,
        };
        Ok(Artifacts {
            history,
            mpi: parse_json(&config.mpi_config, &read(&config.mpi_config)?)?,
            classifier,
            features: parse_json(&config.features, &read(&config.features)?)?,
            forecaster,
            importance,
            forecast_config: config.forecast_config.clone(),
            n_regressors: config.n_regressors,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeeklyPoint {
    pub week_start: NaiveDate,
    pub mpi: f64,
}

/// A forecaster together with the weekly history it was fitted on.
#[derive(Debug, Clone)]
pub struct ScenarioFit {
    pub model: ForecastModel,
    pub history: Vec<WeeklyPoint>,
    pub band_edges: BandEdges,
}

/// Bounded FIFO of scenario fits. Entries are immutable `Arc`s, so a reader
/// sees either the whole entry or none of it.
#[derive(Debug)]
pub struct ScenarioCache {
    capacity: usize,
    entries: Mutex<VecDeque<(String, Arc<ScenarioFit>)>>,
}

impl ScenarioCache {
    pub fn new(capacity: usize) -> Self {
        ScenarioCache {
            capacity,
            entries: Mutex::new(VecDeque::new()),
        }
    }

    pub fn get(&self, key: &str) -> Option<Arc<ScenarioFit>> {
        let entries = self.entries.lock().expect("cache lock");
        entries.iter().find(|(k, _)| k == key).map(|(_, v)| Arc::clone(v))
    }

    pub fn insert(&self, key: String, fit: Arc<ScenarioFit>) {
        if self.capacity == 0 {
            return;
        }
        let mut entries = self.entries.lock().expect("cache lock");
        if entries.iter().any(|(k, _)| *k == key) {
            return;
        }
        if entries.len() == self.capacity {
            entries.pop_front();
        }
        entries.push_back((key, fit));
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn weekly_points(scored: &ScoredSeries) -> Vec<WeeklyPoint> {
    let daily: Vec<(NaiveDate, f64)> = scored.scores.iter().map(|s| (s.date, s.score)).collect();
    weekly_resample(&daily)
        .into_iter()
        .map(|(week_start, mpi)| WeeklyPoint { week_start, mpi })
        .collect()
}

/// Immutable state shared by all requests, plus the scenario cache.
#[derive(Debug)]
pub struct AppState {
    pub history: EnvSeries,
    pub mpi: MpiConfig,
    pub resolved: ResolvedConfig,
    pub classifier: TreeEnsemble,
    pub features: FeatureArtifact,
    pub history_features: FeatureMatrix,
    pub importance: GlobalImportance,
    pub baseline: Arc<ScenarioFit>,
    pub cache: ScenarioCache,
    pub body_limit: usize,
}

impl AppState {
    pub fn build(artifacts: Artifacts, cache_size: usize, body_limit: usize) -> Result<AppState, StartupError> {
        let Artifacts {
            history,
            mpi,
            classifier,
            features,
            forecaster,
            importance,
            forecast_config,
            n_regressors,
        } = artifacts;
        let names = features.spec.feature_names();
        if classifier.n_classes != RiskLabel::ALL.len() {
            return Err(StartupError::Skew(format!(
                "classifier has {} classes, risk bands need {}",
                classifier.n_classes,
                RiskLabel::ALL.len()
            )));
        }
        classifier
            .check_features(&names)
            .map_err(|e| StartupError::Skew(format!("classifier vs feature spec: {e}")))?;
        let state_err = |e: &dyn std::fmt::Display| StartupError::State(e.to_string());
        let scored = score_series(&history, &mpi).map_err(|e| state_err(&e))?;
        let history_features = features.apply(&history).map_err(|e| state_err(&e))?;
        let importance = match importance {
            Some(g) => {
                if let Some(e) = g.ranking.iter().find(|e| !names.contains(&e.feature)) {
                    return Err(StartupError::Skew(format!("importance lists unknown feature {}", e.feature)));
                }
                g
            }
            None => global_importance(&classifier, &history_features).map_err(|e| state_err(&e))?,
        };
        let model = match forecaster {
            Some(m) => {
                if let Some(r) = m.regressor_names().into_iter().find(|r| !names.iter().any(|n| n == r)) {
                    return Err(StartupError::Skew(format!("forecaster regressor {r} is not a feature column")));
                }
                m
            }
            None => {
                let daily: Vec<(NaiveDate, f64)> = scored.scores.iter().map(|s| (s.date, s.score)).collect();
                let regressors = select_regressors(&importance, n_regressors);
                fit_forecaster(&daily, Some(&history_features), &regressors, &forecast_config)
                    .map_err(|e| state_err(&e))?
            }
        };
        log::info!(
            "service state ready: {} history days, {} features, forecaster regressors {:?}",
            history.len(),
            names.len(),
            model.regressor_names()
        );
        let baseline = Arc::new(ScenarioFit {
            model,
            history: weekly_points(&scored),
            band_edges: scored.resolved.band_edges,
        });
        Ok(AppState {
            history,
            mpi,
            resolved: scored.resolved,
            classifier,
            features,
            history_features,
            importance,
            baseline,
            cache: ScenarioCache::new(cache_size),
            body_limit,
        })
    }

    pub fn load(config: &ServiceConfig) -> Result<AppState, StartupError> {
        AppState::build(Artifacts::load(config)?, config.override_cache_size, config.body_limit_bytes)
    }

    /// Re-scores the history under `config` and re-fits the forecaster
    /// with the baseline's regressors and settings.
    pub fn refit(&self, config: &MpiConfig) -> Result<ScenarioFit, String> {
        let scored = score_series(&self.history, config).map_err(|e| e.to_string())?;
        let daily: Vec<(NaiveDate, f64)> = scored.scores.iter().map(|s| (s.date, s.score)).collect();
        let base = &self.baseline.model;
        let regressors: Vec<String> = base.regressor_names().into_iter().map(String::from).collect();
        let model = fit_forecaster(&daily, Some(&self.history_features), &regressors, &base.config)
            .map_err(|e| e.to_string())?;
        Ok(ScenarioFit {
            model,
            history: weekly_points(&scored),
            band_edges: scored.resolved.band_edges,
        })
    }
}
