//! Additive weekly forecaster and classical decomposition.
//!
//! `y(t) = g(t) + s(t) + Σ β_r x_r(t) + ε`, with `g` a piecewise-linear
//! trend whose slope may change at fixed changepoints and `s` a truncated
//! Fourier series of the yearly cycle. All coefficients come from one ridge
//! least-squares solve; only changepoint deltas and regressor coefficients
//! are penalized. Time is measured in weeks from the first fitted date.

use chrono::{Duration, NaiveDate};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::explain::GlobalImportance;
use crate::ingest::Variable;
use crate::stats;

pub const FORECAST_FORMAT: &str = "mpi-forecast";
pub const FORECAST_VERSION: u32 = 1;
/// Yearly period on a weekly grid.
pub const YEARLY_PERIOD_WEEKS: f64 = 365.25 / 7.0;
/// Fraction of the history over which changepoints are spread.
pub const CHANGEPOINT_RANGE: f64 = 0.8;
pub const CSV_HEADER: &str = "week_start,yhat,lower,upper,trend,seasonal,regressors";

#[derive(Debug, Error)]
pub enum ForecastError {
    #[error("invalid forecast config: {0}")]
    InvalidConfig(String),
    #[error("series has {got} points, need at least {need}")]
    TooShort { got: usize, need: usize },
    #[error("regressor {name} has {got} values for {expected} observations")]
    Misaligned { name: String, got: usize, expected: usize },
    #[error("dates must be strictly increasing (at {0})")]
    Unordered(NaiveDate),
    #[error("non-finite value at {0}")]
    NonFinite(NaiveDate),
    #[error("horizon must be positive")]
    BadHorizon,
    #[error("unknown regressor {0}")]
    UnknownRegressor(String),
    #[error("least-squares solve failed: {0}")]
    Solve(&'static str),
    #[error("not a forecast model: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecastConfig {
    pub n_changepoints: usize,
    pub yearly_seasonality_order: usize,
    pub trend_l2: f64,
    pub regressor_l2: f64,
    pub interval_level: f64,
    /// Holiday effects. Always empty; kept so model files carry the slot.
    pub holidays: Vec<NaiveDate>,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        ForecastConfig {
            n_changepoints: 25,
            yearly_seasonality_order: 10,
            trend_l2: 10.0,
            regressor_l2: 1.0,
            interval_level: 0.80,
            holidays: Vec::new(),
        }
    }
}

impl ForecastConfig {
    pub fn validate(&self) -> Result<(), ForecastError> {
        let bad = |m: String| Err(ForecastError::InvalidConfig(m));
        if self.yearly_seasonality_order < 1 {
            return bad("yearly_seasonality_order must be >= 1".into());
        }
        if !(self.trend_l2 >= 0.0 && self.trend_l2.is_finite()) {
            return bad(format!("trend_l2 = {}", self.trend_l2));
        }
        if !(self.regressor_l2 >= 0.0 && self.regressor_l2.is_finite()) {
            return bad(format!("regressor_l2 = {}", self.regressor_l2));
        }
        if !(self.interval_level > 0.0 && self.interval_level < 1.0) {
            return bad(format!("interval_level = {}", self.interval_level));
        }
        if !self.holidays.is_empty() {
            return bad("holiday effects are not supported".into());
        }
        Ok(())
    }

    /// Minimum number of observations accepted by [`fit`].
    pub fn min_observations(&self) -> usize {
        2 * (self.n_changepoints + 2)
    }
}

/// A named regressor aligned with the target observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regressor {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorCoef {
    pub name: String,
    /// Standardization applied before the coefficient.
    pub mean: f64,
    pub scale: f64,
    pub beta: f64,
    /// Last observed raw value, used for forward-fill.
    pub last_value: f64,
}

impl RegressorCoef {
    fn contribution(&self, raw: f64) -> f64 {
        self.beta * (raw - self.mean) / self.scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastModel {
    pub format: String,
    pub version: u32,
    pub config: ForecastConfig,
    pub origin: NaiveDate,
    pub last_date: NaiveDate,
    pub step_days: i64,
    pub n_observations: usize,
    pub intercept: f64,
    /// Base slope per week.
    pub slope: f64,
    /// Changepoint locations in weeks from `origin`.
    pub changepoints: Vec<f64>,
    /// Slope change per week at each changepoint.
    pub deltas: Vec<f64>,
    /// `[sin_1, cos_1, sin_2, cos_2, ...]`.
    pub fourier: Vec<f64>,
    pub regressors: Vec<RegressorCoef>,
    pub residual_sigma: f64,
}

fn weeks_between(origin: NaiveDate, d: NaiveDate) -> f64 {
    (d - origin).num_days() as f64 / 7.0
}

fn fourier_row(t: f64, order: usize) -> impl Iterator<Item = f64> {
    (1..=order).flat_map(move |n| {
        let a = 2.0 * std::f64::consts::PI * n as f64 * t / YEARLY_PERIOD_WEEKS;
        [a.sin(), a.cos()]
    })
}

impl ForecastModel {
    pub fn trend(&self, t: f64) -> f64 {
        let hinge: f64 = self
            .changepoints
            .iter()
            .zip(&self.deltas)
            .map(|(c, d)| d * (t - c).max(0.0))
            .sum();
        self.intercept + self.slope * t + hinge
    }

    pub fn seasonal(&self, t: f64) -> f64 {
        fourier_row(t, self.config.yearly_seasonality_order)
            .zip(&self.fourier)
            .map(|(b, c)| b * c)
            .sum()
    }

    pub fn regressor_names(&self) -> Vec<&str> {
        self.regressors.iter().map(|r| r.name.as_str()).collect()
    }

    pub fn to_json(&self) -> Result<String, ForecastError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<ForecastModel, ForecastError> {
        let model: ForecastModel = serde_json::from_str(text)?;
        if model.format != FORECAST_FORMAT {
            return Err(ForecastError::Format(format!("format {:?}", model.format)));
        }
        if model.version != FORECAST_VERSION {
            return Err(ForecastError::Format(format!("version {}", model.version)));
        }
        if model.changepoints.len() != model.deltas.len()
            || model.fourier.len() != 2 * model.config.yearly_seasonality_order
        {
            return Err(ForecastError::Format("coefficient shapes disagree with config".into()));
        }
        Ok(model)
    }
}

fn check_dates(dates: &[NaiveDate]) -> Result<(), ForecastError> {
    for w in dates.windows(2) {
        if w[1] <= w[0] {
            return Err(ForecastError::Unordered(w[1]));
        }
    }
    Ok(())
}

/// Fits the additive model to a weekly series.
pub fn fit(
    weekly_y: &[(NaiveDate, f64)],
    regressors: &[Regressor],
    config: &ForecastConfig,
) -> Result<ForecastModel, ForecastError> {
    config.validate()?;
    let n = weekly_y.len();
    let need = config.min_observations().max(2);
    if n < need {
        return Err(ForecastError::TooShort { got: n, need });
    }
    let dates: Vec<NaiveDate> = weekly_y.iter().map(|(d, _)| *d).collect();
    check_dates(&dates)?;
    if let Some((d, _)) = weekly_y.iter().find(|(_, v)| !v.is_finite()) {
        return Err(ForecastError::NonFinite(*d));
    }
    for r in regressors {
        if r.values.len() != n {
            return Err(ForecastError::Misaligned {
                name: r.name.clone(),
                got: r.values.len(),
                expected: n,
            });
        }
        if let Some(i) = r.values.iter().position(|v| !v.is_finite()) {
            return Err(ForecastError::NonFinite(dates[i]));
        }
    }

    let origin = dates[0];
    let t: Vec<f64> = dates.iter().map(|d| weeks_between(origin, *d)).collect();
    // Trend columns use t / span so they share a scale with the Fourier
    // terms; coefficients are converted back to per-week units below.
    let span = t[n - 1];
    let n_cp = config.n_changepoints;
    let cp_scaled: Vec<f64> = (1..=n_cp)
        .map(|j| CHANGEPOINT_RANGE * j as f64 / n_cp as f64)
        .collect();
    let order = config.yearly_seasonality_order;
    let standardization: Vec<(f64, f64)> = regressors
        .iter()
        .map(|r| {
            let s = stats::sample_std(&r.values);
            (stats::mean(&r.values), if s > 0.0 { s } else { 1.0 })
        })
        .collect();

    let p_trend = 2 + n_cp;
    let p_fourier = 2 * order;
    let p = p_trend + p_fourier + regressors.len();
    // Augmented system [X; sqrt(Λ)] β = [y; 0].
    let mut a = DMatrix::<f64>::zeros(n + p, p);
    let mut b = DVector::<f64>::zeros(n + p);
    for i in 0..n {
        let ts = t[i] / span;
        a[(i, 0)] = 1.0;
        a[(i, 1)] = ts;
        for (j, c) in cp_scaled.iter().enumerate() {
            a[(i, 2 + j)] = (ts - c).max(0.0);
        }
        for (j, v) in fourier_row(t[i], order).enumerate() {
            a[(i, p_trend + j)] = v;
        }
        for (j, (r, (m, s))) in regressors.iter().zip(&standardization).enumerate() {
            a[(i, p_trend + p_fourier + j)] = (r.values[i] - m) / s;
        }
        b[i] = weekly_y[i].1;
    }
    for j in 0..n_cp {
        a[(n + 2 + j, 2 + j)] = config.trend_l2.sqrt();
    }
    for j in 0..regressors.len() {
        let col = p_trend + p_fourier + j;
        a[(n + col, col)] = config.regressor_l2.sqrt();
    }

    let svd = a.clone().svd(true, true);
    let tol = 1e-12 * svd.singular_values.max();
    let beta = svd.solve(&b, tol).map_err(ForecastError::Solve)?;
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(ForecastError::Solve("non-finite coefficients"));
    }

    let fitted = a.rows(0, n) * &beta;
    let residuals: Vec<f64> = (0..n).map(|i| weekly_y[i].1 - fitted[i]).collect();
    let residual_sigma = stats::sample_std(&residuals);

    Ok(ForecastModel {
        format: FORECAST_FORMAT.into(),
        version: FORECAST_VERSION,
        config: config.clone(),
        origin,
        last_date: dates[n - 1],
        step_days: 7,
        n_observations: n,
        intercept: beta[0],
        slope: beta[1] / span,
        changepoints: cp_scaled.iter().map(|c| c * span).collect(),
        deltas: (0..n_cp).map(|j| beta[2 + j] / span).collect(),
        fourier: (0..p_fourier).map(|j| beta[p_trend + j]).collect(),
        regressors: regressors
            .iter()
            .zip(&standardization)
            .enumerate()
            .map(|(j, (r, (m, s)))| RegressorCoef {
                name: r.name.clone(),
                mean: *m,
                scale: *s,
                beta: beta[p_trend + p_fourier + j],
                last_value: r.values[n - 1],
            })
            .collect(),
        residual_sigma,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastRow {
    pub week_start: NaiveDate,
    pub yhat: f64,
    pub lower: f64,
    pub upper: f64,
    pub trend: f64,
    pub seasonal: f64,
    pub regressors: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub interval_level: f64,
    pub rows: Vec<ForecastRow>,
}

impl ForecastResult {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.week_start, r.yhat, r.lower, r.upper, r.trend, r.seasonal, r.regressors
            ));
        }
        out
    }

    pub fn to_json(&self) -> Result<String, ForecastError> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Two-sided standard-normal quantile for a central interval.
pub fn interval_z(level: f64) -> f64 {
    Normal::standard().inverse_cdf((1.0 + level) / 2.0)
}

/// Evaluates the model at arbitrary dates. `regressor_values[r][i]` is the
/// raw value of regressor `r` at `dates[i]`, in model regressor order.
pub fn predict_at(
    model: &ForecastModel,
    dates: &[NaiveDate],
    regressor_values: &[Vec<f64>],
) -> Result<ForecastResult, ForecastError> {
    if regressor_values.len() != model.regressors.len() {
        return Err(ForecastError::InvalidConfig(format!(
            "{} regressor series for {} regressors",
            regressor_values.len(),
            model.regressors.len()
        )));
    }
    for (coef, values) in model.regressors.iter().zip(regressor_values) {
        if values.len() != dates.len() {
            return Err(ForecastError::Misaligned {
                name: coef.name.clone(),
                got: values.len(),
                expected: dates.len(),
            });
        }
    }
    let half = interval_z(model.config.interval_level) * model.residual_sigma;
    let rows = dates
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let t = weeks_between(model.origin, *d);
            let trend = model.trend(t);
            let seasonal = model.seasonal(t);
            let regressors: f64 = model
                .regressors
                .iter()
                .zip(regressor_values)
                .map(|(c, v)| c.contribution(v[i]))
                .sum();
            let yhat = trend + seasonal + regressors;
            ForecastRow {
                week_start: *d,
                yhat,
                lower: yhat - half,
                upper: yhat + half,
                trend,
                seasonal,
                regressors,
            }
        })
        .collect();
    Ok(ForecastResult {
        interval_level: model.config.interval_level,
        rows,
    })
}

/// Week start dates following the fitted history.
pub fn future_dates(model: &ForecastModel, horizon: usize) -> Vec<NaiveDate> {
    (1..=horizon as i64)
        .map(|k| model.last_date + Duration::days(model.step_days * k))
        .collect()
}

/// Forecasts `horizon` weeks past the history with every regressor held at
/// its last observed value.
pub fn predict(model: &ForecastModel, horizon: usize) -> Result<ForecastResult, ForecastError> {
    predict_with(model, horizon, &[])
}

/// Like [`predict`], with scenario paths for some regressors. A scenario
/// shorter than the horizon is forward-filled from its own last value;
/// regressors without a scenario are forward-filled from history.
pub fn predict_with(
    model: &ForecastModel,
    horizon: usize,
    scenarios: &[Regressor],
) -> Result<ForecastResult, ForecastError> {
    if horizon == 0 {
        return Err(ForecastError::BadHorizon);
    }
    if let Some(s) = scenarios
        .iter()
        .find(|s| !model.regressors.iter().any(|c| c.name == s.name))
    {
        return Err(ForecastError::UnknownRegressor(s.name.clone()));
    }
    let values: Vec<Vec<f64>> = model
        .regressors
        .iter()
        .map(|c| {
            let path = scenarios
                .iter()
                .find(|s| s.name == c.name)
                .map(|s| s.values.as_slice())
                .unwrap_or(&[]);
            let mut last = c.last_value;
            (0..horizon)
                .map(|i| {
                    if let Some(v) = path.get(i) {
                        last = *v;
                    }
                    last
                })
                .collect()
        })
        .collect();
    predict_at(model, &future_dates(model, horizon), &values)
}

/// Base meteorological variable behind a feature column, if any.
pub fn base_variable(feature: &str) -> Option<Variable> {
    Variable::ALL.into_iter().find(|v| {
        [v.column(), v.stem()]
            .iter()
            .any(|p| feature == *p || feature.starts_with(&format!("{p}_")))
    })
}

/// Top-`k` regressors by global importance, one column per base variable
/// (its highest-ranked variant). Non-meteorological columns are skipped.
pub fn select_regressors(importance: &GlobalImportance, k: usize) -> Vec<String> {
    let mut seen: Vec<Variable> = Vec::new();
    let mut out = Vec::new();
    for entry in &importance.ranking {
        if out.len() == k {
            break;
        }
        if let Some(v) = base_variable(&entry.feature) {
            if !seen.contains(&v) {
                seen.push(v);
                out.push(entry.feature.clone());
            }
        }
    }
    out
}

/// Classical additive decomposition of a daily series.
///
/// `trend` and `residual` are `None` within half a window of either end.
/// At interior points `(trend + seasonal) + residual` reproduces the
/// observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub period: usize,
    pub observed: Vec<f64>,
    pub trend: Vec<Option<f64>>,
    pub seasonal: Vec<f64>,
    pub residual: Vec<Option<f64>>,
}

pub fn decompose(values: &[f64], period: usize) -> Result<Decomposition, ForecastError> {
    if period < 2 {
        return Err(ForecastError::InvalidConfig(format!("period {period} < 2")));
    }
    let n = values.len();
    if n < 2 * period {
        return Err(ForecastError::TooShort { got: n, need: 2 * period });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(ForecastError::InvalidConfig("non-finite observation".into()));
    }

    // Centered moving average; even periods use a 2 x period filter with
    // half weight on the two end points.
    let half = period / 2;
    let weights: Vec<f64> = if period % 2 == 0 {
        let mut w = vec![1.0 / period as f64; period + 1];
        w[0] /= 2.0;
        w[period] /= 2.0;
        w
    } else {
        vec![1.0 / period as f64; period]
    };
    let trend: Vec<Option<f64>> = (0..n)
        .map(|i| {
            (i >= half && i + half < n).then(|| {
                let window = &values[i - half..i - half + weights.len()];
                if window.iter().all(|v| *v == window[0]) {
                    return window[0];
                }
                weights.iter().zip(window).map(|(w, v)| w * v).sum()
            })
        })
        .collect();

    let mut sums = vec![(0.0, 0usize); period];
    for (i, t) in trend.iter().enumerate() {
        if let Some(t) = t {
            let slot = &mut sums[i % period];
            slot.0 += values[i] - t;
            slot.1 += 1;
        }
    }
    let means: Vec<f64> = sums.iter().map(|(s, c)| s / *c as f64).collect();
    let centre = stats::mean(&means);
    let pattern: Vec<f64> = means.iter().map(|m| m - centre).collect();
    let seasonal: Vec<f64> = (0..n).map(|i| pattern[i % period]).collect();
    let residual = trend
        .iter()
        .zip(values)
        .zip(&seasonal)
        .map(|((t, y), s)| t.map(|t| y - (t + s)))
        .collect();
    Ok(Decomposition {
        period,
        observed: values.to_vec(),
        trend,
        seasonal,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::ImportanceEntry;

    fn weekly(n: usize, f: impl Fn(f64) -> f64) -> Vec<(NaiveDate, f64)> {
        let start = NaiveDate::from_ymd_opt(2020, 1, 6).unwrap();
        (0..n)
            .map(|i| (start + Duration::days(7 * i as i64), f(i as f64)))
            .collect()
    }

    #[test]
    fn constant_recovery() {
        let y = weekly(156, |_| 3.0);
        let m = fit(&y, &[], &ForecastConfig::default()).unwrap();
        assert!((m.intercept - 3.0).abs() < 1e-6);
        assert!(m.slope.abs() < 1e-6);
        assert!(m.deltas.iter().chain(&m.fourier).all(|c| c.abs() < 1e-6));
        let f = predict(&m, 52).unwrap();
        for r in &f.rows {
            assert!((r.yhat - 3.0).abs() < 1e-6);
            assert!(r.upper - r.lower < 1e-6);
        }
    }

    #[test]
    fn line_recovery_and_extrapolation() {
        let truth = |t: f64| 0.1 + 0.02 * t;
        let y = weekly(156, truth);
        let m = fit(&y, &[], &ForecastConfig::default()).unwrap();
        assert!((m.slope - 0.02).abs() < 1e-4);
        assert!(m.deltas.iter().all(|d| d.abs() < 1e-6));
        let f = predict(&m, 12).unwrap();
        for (k, r) in f.rows.iter().enumerate() {
            assert!((r.yhat - truth((156 + k) as f64)).abs() < 1e-3);
        }
    }

    #[test]
    fn horizon_contract() {
        let y = weekly(120, |t| (t * 0.3).sin());
        let m = fit(&y, &[], &ForecastConfig::default()).unwrap();
        for h in [1, 4, 12, 52] {
            let f = predict(&m, h).unwrap();
            assert_eq!(f.len(), h);
            assert!(f.rows.windows(2).all(|w| w[0].week_start < w[1].week_start));
            assert_eq!(f.rows[0].week_start, m.last_date + Duration::days(7));
        }
        assert!(matches!(predict(&m, 0), Err(ForecastError::BadHorizon)));
    }

    #[test]
    fn components_sum_and_intervals_nest() {
        let y = weekly(150, |t| 0.4 + 0.001 * t + 0.1 * (t / 8.3).sin() + 0.03 * (t * 1.7).cos());
        let x = Regressor {
            name: "humidity".into(),
            values: (0..150).map(|i| (i as f64 * 0.37).cos()).collect(),
        };
        let narrow = fit(&y, std::slice::from_ref(&x), &ForecastConfig::default()).unwrap();
        let wide = fit(
            &y,
            &[x],
            &ForecastConfig {
                interval_level: 0.95,
                ..Default::default()
            },
        )
        .unwrap();
        let (a, b) = (predict(&narrow, 20).unwrap(), predict(&wide, 20).unwrap());
        for (r, s) in a.rows.iter().zip(&b.rows) {
            assert!((r.trend + r.seasonal + r.regressors - r.yhat).abs() < 1e-9);
            assert!(r.lower <= r.yhat && r.yhat <= r.upper);
            assert!(s.lower <= r.lower && r.upper <= s.upper);
        }
        assert!((interval_z(0.8) - 1.2816).abs() < 1e-4);
    }

    #[test]
    fn forward_fill_and_scenarios() {
        let n = 100;
        let xs: Vec<f64> = (0..n).map(|i| (i % 7) as f64).collect();
        let y = weekly(n, |t| 1.0 + 0.5 * xs[t as usize]);
        let x = Regressor {
            name: "temperature".into(),
            values: xs.clone(),
        };
        let cfg = ForecastConfig {
            regressor_l2: 0.0,
            ..Default::default()
        };
        let m = fit(&y, &[x], &cfg).unwrap();
        let ff = predict(&m, 3).unwrap();
        let last = *xs.last().unwrap();
        assert!(ff.rows.iter().all(|r| (r.regressors - ff.rows[0].regressors).abs() < 1e-12));
        assert!((ff.rows[0].yhat - (1.0 + 0.5 * last)).abs() < 1e-6);

        let scenario = Regressor {
            name: "temperature".into(),
            values: vec![0.0, 6.0],
        };
        let s = predict_with(&m, 3, &[scenario]).unwrap();
        assert!((s.rows[0].yhat - 1.0).abs() < 1e-6);
        assert!((s.rows[1].yhat - 4.0).abs() < 1e-6);
        assert!((s.rows[2].yhat - 4.0).abs() < 1e-6);
        let unknown = Regressor {
            name: "aod".into(),
            values: vec![],
        };
        assert!(matches!(
            predict_with(&m, 3, &[unknown]),
            Err(ForecastError::UnknownRegressor(_))
        ));
    }

    #[test]
    fn fit_errors() {
        let cfg = ForecastConfig::default();
        assert!(matches!(
            fit(&weekly(53, |_| 1.0), &[], &cfg),
            Err(ForecastError::TooShort { need: 54, .. })
        ));
        let x = Regressor {
            name: "aod".into(),
            values: vec![0.0; 10],
        };
        assert!(matches!(
            fit(&weekly(60, |_| 1.0), &[x], &cfg),
            Err(ForecastError::Misaligned { .. })
        ));
        let mut y = weekly(60, |_| 1.0);
        y.swap(3, 4);
        assert!(matches!(fit(&y, &[], &cfg), Err(ForecastError::Unordered(_))));
        for bad in [
            ForecastConfig { interval_level: 1.0, ..Default::default() },
            ForecastConfig { trend_l2: -1.0, ..Default::default() },
            ForecastConfig { yearly_seasonality_order: 0, ..Default::default() },
        ] {
            assert!(matches!(fit(&weekly(60, |_| 1.0), &[], &bad), Err(ForecastError::InvalidConfig(_))));
        }
    }

    #[test]
    fn model_json_round_trip() {
        let y = weekly(80, |t| 0.2 + 0.1 * (t / 5.0).sin());
        let m = fit(&y, &[], &ForecastConfig::default()).unwrap();
        let back = ForecastModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        let foreign = m.to_json().unwrap().replace(FORECAST_FORMAT, "other");
        assert!(ForecastModel::from_json(&foreign).is_err());
    }

    #[test]
    fn time_shift_equivariance() {
        let y = weekly(120, |t| 0.3 + 0.002 * t + 0.05 * (t / 4.0).cos());
        let shifted: Vec<_> = y.iter().map(|(d, v)| (*d + Duration::days(700), *v)).collect();
        let cfg = ForecastConfig::default();
        let a = predict(&fit(&y, &[], &cfg).unwrap(), 12).unwrap();
        let b = predict(&fit(&shifted, &[], &cfg).unwrap(), 12).unwrap();
        for (r, s) in a.rows.iter().zip(&b.rows) {
            assert_eq!(s.week_start - r.week_start, Duration::days(700));
            assert!((r.yhat - s.yhat).abs() < 1e-9);
        }
    }

    #[test]
    fn forecast_csv_shape() {
        let m = fit(&weekly(60, |_| 2.0), &[], &ForecastConfig::default()).unwrap();
        let csv = predict(&m, 4).unwrap().to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 5);
    }

    #[test]
    fn select_regressors_collapses_variants() {
        let names = [
            "humidity_lag_1d",
            "humidity",
            "month",
            "temperature",
            "irradiance_rolling_3d_mean",
            "aod_lag_3d",
            "solar_irradiance",
            "wind_speed",
        ];
        let g = GlobalImportance {
            ranking: names
                .iter()
                .enumerate()
                .map(|(i, n)| ImportanceEntry {
                    feature: n.to_string(),
                    index: i,
                    mean_abs_phi: 1.0 / (i + 1) as f64,
                })
                .collect(),
        };
        assert_eq!(
            select_regressors(&g, 4),
            ["humidity_lag_1d", "temperature", "irradiance_rolling_3d_mean", "aod_lag_3d"]
        );
        assert!(select_regressors(&g, 0).is_empty());
        assert_eq!(select_regressors(&g, 99).len(), 5);
    }

    #[test]
    fn decomposition_of_constant() {
        let d = decompose(&[4.0; 90], 30).unwrap();
        assert!(d.seasonal.iter().all(|s| *s == 0.0));
        assert!(d.residual.iter().flatten().all(|r| *r == 0.0));
        assert_eq!(d.trend.iter().flatten().count(), 90 - 30);
        assert!(decompose(&[1.0; 59], 30).is_err());
    }

    #[test]
    fn decomposition_of_sinusoid() {
        let y: Vec<f64> = (0..300)
            .map(|t| 5.0 + (2.0 * std::f64::consts::PI * t as f64 / 30.0).sin())
            .collect();
        let d = decompose(&y, 30).unwrap();
        let mut sq = 0.0;
        let mut count = 0;
        for i in 0..300 {
            if let (Some(t), Some(r)) = (d.trend[i], d.residual[i]) {
                assert!((t - 5.0).abs() < 0.05);
                assert_eq!((t + d.seasonal[i]) + r, y[i]);
                sq += r * r;
                count += 1;
            }
        }
        assert!((sq / count as f64).sqrt() < 0.05);
    }
}
