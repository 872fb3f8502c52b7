//! Min-max scaling and rolling/lagged feature construction.
//!
//! Windows are trailing (causal): the value at day `t` summarizes days
//! `t-w+1..=t`. Rows whose windows or lags reach before the first day are
//! dropped, never padded.

use std::fmt::Write as _;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{require_valid, EnvSeries, IngestError, Variable};
use crate::stats;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("cannot fit a scaler on an empty sample")]
    Empty,
    #[error("invalid feature spec: {0}")]
    InvalidSpec(String),
    #[error("series has a gap after {0}; forward-fill before featurizing")]
    NotContiguous(NaiveDate),
    #[error("scaler does not cover feature `{0}`")]
    ScalerMismatch(String),
    #[error("series too short: {rows} rows, need more than {dropped}")]
    TooShort { rows: usize, dropped: usize },
    #[error("feature CSV: {0}")]
    Parse(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

/// Observed min/max of a sample. Errors on an empty or non-finite sample.
pub fn minmax_fit(values: &[f64]) -> Result<MinMax, FeatureError> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return Err(FeatureError::Empty);
    }
    let min = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let max = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(MinMax { min, max })
}

/// `(x - min) / (max - min)`, or 0 when the fitted range is degenerate.
/// Values outside the fitted range are not clipped.
pub fn minmax_apply(params: &MinMax, x: f64) -> f64 {
    let span = params.max - params.min;
    if span == 0.0 {
        0.0
    } else {
        (x - params.min) / span
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledFeature {
    pub name: String,
    #[serde(flatten)]
    pub range: MinMax,
}

/// Per-feature ranges fitted on a training range.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScalerParams {
    pub features: Vec<ScaledFeature>,
}

impl ScalerParams {
    pub fn get(&self, name: &str) -> Option<&MinMax> {
        self.features
            .iter()
            .find(|f| f.name == name)
            .map(|f| &f.range)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RollingStat {
    Mean,
    Std,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RollingFeature {
    pub variable: Variable,
    pub window: usize,
    pub stat: RollingStat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagFeature {
    pub variable: Variable,
    pub lag: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub immediate: Vec<Variable>,
    #[serde(default)]
    pub rolling: Vec<RollingFeature>,
    #[serde(default)]
    pub lags: Vec<LagFeature>,
    /// Immediate variables replaced by `1 - scaled` after scaling.
    #[serde(default)]
    pub directional: Vec<Variable>,
    #[serde(default)]
    pub include_month: bool,
}

impl Default for FeatureSpec {
    /// Immediate, cumulative (rolling mean) and variability (rolling std)
    /// features plus month: 14 columns.
    fn default() -> Self {
        use RollingStat::{Mean, Std};
        use Variable::{Aod, Humidity, SolarIrradiance, Temperature, WindSpeed};
        let mut rolling = Vec::new();
        for stat in [Mean, Std] {
            for variable in [Aod, SolarIrradiance] {
                for window in [3, 7] {
                    rolling.push(RollingFeature {
                        variable,
                        window,
                        stat,
                    });
                }
            }
        }
        FeatureSpec {
            immediate: vec![Aod, SolarIrradiance, Temperature, Humidity, WindSpeed],
            rolling,
            lags: Vec::new(),
            directional: Vec::new(),
            include_month: true,
        }
    }
}

impl FeatureSpec {
    /// Default spec plus lags of 1, 3 and 7 days on AOD, temperature,
    /// humidity and wind speed.
    pub fn with_default_lags() -> Self {
        let mut spec = FeatureSpec::default();
        for variable in [
            Variable::Aod,
            Variable::Temperature,
            Variable::Humidity,
            Variable::WindSpeed,
        ] {
            for lag in [1, 3, 7] {
                spec.lags.push(LagFeature { variable, lag });
            }
        }
        spec
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if let Some(r) = self.rolling.iter().find(|r| r.window < 2) {
            return Err(FeatureError::InvalidSpec(format!(
                "rolling window {} < 2 on {}",
                r.window,
                r.variable.column()
            )));
        }
        if let Some(l) = self.lags.iter().find(|l| l.lag < 1) {
            return Err(FeatureError::InvalidSpec(format!(
                "lag 0 on {}",
                l.variable.column()
            )));
        }
        if let Some(v) = self.directional.iter().find(|v| !self.immediate.contains(v)) {
            return Err(FeatureError::InvalidSpec(format!(
                "directional variable {} is not an immediate feature",
                v.column()
            )));
        }
        let names = self.feature_names();
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(FeatureError::InvalidSpec(format!("duplicate feature {n}")));
            }
        }
        Ok(())
    }

    /// Column names in matrix order: immediate, rolling, lags, month.
    pub fn feature_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .immediate
            .iter()
            .map(|v| v.column().to_string())
            .collect();
        names.extend(self.rolling.iter().map(|r| {
            let stat = match r.stat {
                RollingStat::Mean => "mean",
                RollingStat::Std => "std",
            };
            format!("{}_rolling_{}d_{stat}", r.variable.stem(), r.window)
        }));
        names.extend(
            self.lags
                .iter()
                .map(|l| format!("{}_lag_{}d", l.variable.column(), l.lag)),
        );
        if self.include_month {
            names.push("month".into());
        }
        names
    }

    /// Number of leading days without a complete window or lag.
    pub fn warmup(&self) -> usize {
        let window = self.rolling.iter().map(|r| r.window - 1).max().unwrap_or(0);
        let lag = self.lags.iter().map(|l| l.lag).max().unwrap_or(0);
        window.max(lag)
    }
}

/// Trailing-window statistic, emitted only where the full window exists.
///
/// `std` is the sample standard deviation. A series shorter than the
/// window yields an empty output.
pub fn rolling_stat(values: &[f64], window: usize, stat: RollingStat) -> Result<Vec<f64>, FeatureError> {
    if window < 2 {
        return Err(FeatureError::InvalidSpec(format!("rolling window {window} < 2")));
    }
    Ok(values
        .windows(window)
        .map(|w| match stat {
            RollingStat::Mean => stats::mean(w),
            RollingStat::Std => stats::sample_std(w),
        })
        .collect())
}

/// Unscaled feature columns (month excluded) after the warm-up rows are
/// dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFeatures {
    pub dates: Vec<NaiveDate>,
    pub names: Vec<String>,
    /// Column-major: `columns[j][i]` is feature `j` on `dates[i]`.
    pub columns: Vec<Vec<f64>>,
}

/// Computes the unscaled feature columns of `spec` (without month).
pub fn raw_features(series: &EnvSeries, spec: &FeatureSpec) -> Result<RawFeatures, FeatureError> {
    spec.validate()?;
    require_valid(series)?;
    if let Some(w) = series
        .records()
        .windows(2)
        .find(|w| (w[1].date - w[0].date).num_days() != 1)
    {
        return Err(FeatureError::NotContiguous(w[0].date));
    }
    let warmup = spec.warmup();
    let n = series.len();
    if n <= warmup {
        return Err(FeatureError::TooShort {
            rows: n,
            dropped: warmup,
        });
    }

    let mut names = spec.feature_names();
    if spec.include_month {
        names.pop();
    }
    let mut columns = Vec::with_capacity(names.len());
    for v in &spec.immediate {
        columns.push(series.column(*v)[warmup..].to_vec());
    }
    for r in &spec.rolling {
        let full = rolling_stat(&series.column(r.variable), r.window, r.stat)?;
        // full[k] covers days k..k+window-1; the first kept day is `warmup`.
        columns.push(full[warmup + 1 - r.window..].to_vec());
    }
    for l in &spec.lags {
        let col = series.column(l.variable);
        columns.push(col[warmup - l.lag..n - l.lag].to_vec());
    }
    Ok(RawFeatures {
        dates: series.dates()[warmup..].to_vec(),
        names,
        columns,
    })
}

/// Fits per-feature ranges on the given (training) series.
pub fn fit_scaler(series: &EnvSeries, spec: &FeatureSpec) -> Result<ScalerParams, FeatureError> {
    let raw = raw_features(series, spec)?;
    let features = raw
        .names
        .into_iter()
        .zip(&raw.columns)
        .map(|(name, col)| Ok(ScaledFeature { name, range: minmax_fit(col)? }))
        .collect::<Result<Vec<_>, FeatureError>>()?;
    Ok(ScalerParams { features })
}

/// Scaled feature rows aligned to dates. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub dates: Vec<NaiveDate>,
    pub feature_names: Vec<String>,
    /// Row-major values, one row per date.
    pub values: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.values.len()
    }

    pub fn n_cols(&self) -> usize {
        self.feature_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.column_index(name)?;
        Some(self.values.iter().map(|r| r[j]).collect())
    }

    /// Rows at the given positions, in order.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            dates: rows.iter().map(|&i| self.dates[i]).collect(),
            feature_names: self.feature_names.clone(),
            values: rows.iter().map(|&i| self.values[i].clone()).collect(),
        }
    }

    /// `date,<feature names...>` with shortest round-trip floats.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("date");
        for n in &self.feature_names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (d, row) in self.dates.iter().zip(&self.values) {
            let _ = write!(out, "{}", d.format("%Y-%m-%d"));
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &[u8]) -> Result<FeatureMatrix, FeatureError> {
        let mut reader = csv::Reader::from_reader(text);
        let header = reader
            .headers()
            .map_err(|e| FeatureError::Parse(e.to_string()))?
            .clone();
        if header.get(0) != Some("date") {
            return Err(FeatureError::Parse("first column must be `date`".into()));
        }
        let feature_names: Vec<String> = header.iter().skip(1).map(String::from).collect();
        let mut dates = Vec::new();
        let mut values = Vec::new();
        for row in reader.records() {
            let row = row.map_err(|e| FeatureError::Parse(e.to_string()))?;
            let line = row.position().map(|p| p.line()).unwrap_or(0);
            let date = NaiveDate::parse_from_str(&row[0], "%Y-%m-%d")
                .map_err(|e| FeatureError::Parse(format!("line {line}: {e}")))?;
            let vals = row
                .iter()
                .skip(1)
                .map(|c| c.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| FeatureError::Parse(format!("line {line}: {e}")))?;
            dates.push(date);
            values.push(vals);
        }
        Ok(FeatureMatrix {
            dates,
            feature_names,
            values,
        })
    }
}

/// Month of year mapped to [0, 1] as `(m - 1) / 11`.
pub fn month_feature(date: NaiveDate) -> f64 {
    f64::from(date.month() - 1) / 11.0
}

/// Scaled feature matrix for `series` under `spec` and fitted `params`.
pub fn build_feature_matrix(
    series: &EnvSeries,
    spec: &FeatureSpec,
    params: &ScalerParams,
) -> Result<FeatureMatrix, FeatureError> {
    let raw = raw_features(series, spec)?;
    let mut scaled: Vec<Vec<f64>> = Vec::with_capacity(raw.columns.len() + 1);
    for (name, col) in raw.names.iter().zip(&raw.columns) {
        let range = params
            .get(name)
            .ok_or_else(|| FeatureError::ScalerMismatch(name.clone()))?;
        scaled.push(col.iter().map(|&x| minmax_apply(range, x)).collect());
    }
    for v in &spec.directional {
        let j = spec
            .immediate
            .iter()
            .position(|i| i == v)
            .expect("validated: directional is immediate");
        for x in &mut scaled[j] {
            *x = 1.0 - *x;
        }
    }
    if spec.include_month {
        scaled.push(raw.dates.iter().map(|&d| month_feature(d)).collect());
    }
    let values = (0..raw.dates.len())
        .map(|i| scaled.iter().map(|c| c[i]).collect())
        .collect();
    Ok(FeatureMatrix {
        dates: raw.dates,
        feature_names: spec.feature_names(),
        values,
    })
}
