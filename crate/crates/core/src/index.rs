//! Maintenance Pressure Index.
//!
//! Each of five risk conditions is a binary trigger that fires when its
//! variable strictly exceeds a threshold:
//!
//! | condition | default threshold | default weight |
//! |-----------|-------------------|----------------|
//! | AOD       | 0.9               | 0.35           |
//! | temperature | 35 °C           | 0.25           |
//! | humidity  | 70 %              | 0.20           |
//! | wind speed | 5 m/s            | 0.15           |
//! | irradiance 3-day std | 90th percentile | 0.05   |
//!
//! The MPI is the weighted sum of fired triggers and lies in [0, 1] when
//! the weights are non-negative and sum to one. Scores map to Low / Medium /
//! High bands at fixed edges (0.3, 0.6) or at training-score quartiles.

use std::fmt::Write as _;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{require_valid, EnvRecord, EnvSeries, IngestError};
use crate::stats;

/// Days in the trailing irradiance variability window.
pub const IRR_VAR_WINDOW: usize = 3;

/// Minimum history for EOF weight derivation.
pub const EOF_MIN_DAYS: usize = 30;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("invalid MPI config: {0}")]
    InvalidConfig(String),
    #[error("need at least {need} days, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("series has a gap after {0}")]
    NotContiguous(NaiveDate),
    #[error("percentile rank {0} outside (0, 100)")]
    BadRank(f64),
    #[error("cannot take a percentile of an empty sample")]
    Empty,
    #[error("degenerate EOF weights: condition(s) never observed: {0:?}")]
    DegenerateWeights(Vec<Condition>),
    #[error("score CSV: {0}")]
    Parse(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

/// The five risk conditions, in weight order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Aod,
    Temperature,
    Humidity,
    WindSpeed,
    IrrVar,
}

impl Condition {
    pub const ALL: [Condition; 5] = [
        Condition::Aod,
        Condition::Temperature,
        Condition::Humidity,
        Condition::WindSpeed,
        Condition::IrrVar,
    ];
}

/// One weight per condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub aod: f64,
    pub temperature: f64,
    pub humidity: f64,
    pub wind_speed: f64,
    pub irr_var: f64,
}

impl Weights {
    pub fn from_array(w: [f64; 5]) -> Self {
        Weights {
            aod: w[0],
            temperature: w[1],
            humidity: w[2],
            wind_speed: w[3],
            irr_var: w[4],
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.aod, self.temperature, self.humidity, self.wind_speed, self.irr_var]
    }
}

impl Default for Weights {
    fn default() -> Self {
        Weights::from_array([0.35, 0.25, 0.20, 0.15, 0.05])
    }
}

/// Irradiance-variability threshold: a percentile rank resolved against a
/// history, or an absolute value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IrrVarThreshold {
    Percentile(f64),
    Absolute(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub aod: f64,
    pub temperature: f64,
    pub humidity: f64,
    pub wind_speed: f64,
    pub irr_var: IrrVarThreshold,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            aod: 0.9,
            temperature: 35.0,
            humidity: 70.0,
            wind_speed: 5.0,
            irr_var: IrrVarThreshold::Percentile(90.0),
        }
    }
}

impl Thresholds {
    /// Absolute thresholds, resolving a percentile irradiance threshold
    /// against `irr_var_history`.
    pub fn resolve(&self, irr_var_history: &[f64]) -> Result<ResolvedThresholds, IndexError> {
        let irr_var = match self.irr_var {
            IrrVarThreshold::Absolute(v) => v,
            IrrVarThreshold::Percentile(rank) => resolve_irr_threshold(irr_var_history, rank)?,
        };
        Ok(ResolvedThresholds {
            aod: self.aod,
            temperature: self.temperature,
            humidity: self.humidity,
            wind_speed: self.wind_speed,
            irr_var,
        })
    }
}

/// All-absolute thresholds ready for trigger evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedThresholds {
    pub aod: f64,
    pub temperature: f64,
    pub humidity: f64,
    pub wind_speed: f64,
    pub irr_var: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandEdges {
    /// Scores below this are Low.
    pub low_upper: f64,
    /// Scores at or above this are High.
    pub high_lower: f64,
}

impl Default for BandEdges {
    fn default() -> Self {
        BandEdges {
            low_upper: 0.3,
            high_lower: 0.6,
        }
    }
}

impl BandEdges {
    /// Quartile edges of a training score distribution: Low below the 25th
    /// percentile, High at or above the 75th.
    pub fn from_scores(scores: &[f64]) -> Result<BandEdges, IndexError> {
        let low_upper = stats::percentile(scores, 25.0).ok_or(IndexError::Empty)?;
        let high_lower = stats::percentile(scores, 75.0).ok_or(IndexError::Empty)?;
        Ok(BandEdges {
            low_upper,
            high_lower,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandMode {
    #[default]
    Fixed,
    Percentile,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MpiConfig {
    pub thresholds: Thresholds,
    pub weights: Weights,
    #[serde(default)]
    pub band_edges: BandEdges,
    #[serde(default)]
    pub band_mode: BandMode,
}

impl MpiConfig {
    pub fn validate(&self) -> Result<(), IndexError> {
        let w = self.weights.as_array();
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(IndexError::InvalidConfig(format!(
                "weights must be finite and non-negative: {w:?}"
            )));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(IndexError::InvalidConfig(format!("weights sum to {sum}, not 1")));
        }
        let t = &self.thresholds;
        let irr = match t.irr_var {
            IrrVarThreshold::Absolute(v) => v,
            IrrVarThreshold::Percentile(rank) => {
                if !(rank > 0.0 && rank < 100.0) {
                    return Err(IndexError::BadRank(rank));
                }
                rank
            }
        };
        if ![t.aod, t.temperature, t.humidity, t.wind_speed, irr]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(IndexError::InvalidConfig("thresholds must be finite".into()));
        }
        let e = &self.band_edges;
        if !(0.0 < e.low_upper && e.low_upper <= e.high_lower && e.high_lower < 1.0) {
            return Err(IndexError::InvalidConfig(format!(
                "band edges must satisfy 0 < low_upper <= high_lower < 1: {e:?}"
            )));
        }
        Ok(())
    }
}

/// Raw values a trigger vector was evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerValues {
    pub aod: f64,
    pub temperature: f64,
    pub humidity: f64,
    pub wind_speed: f64,
    /// `None` when no 3-day window was available.
    pub irr_var: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerVector {
    pub aod_high: bool,
    pub temp_high: bool,
    pub humidity_high: bool,
    pub wind_high: bool,
    pub irr_var_high: bool,
    pub values: TriggerValues,
}

impl TriggerVector {
    pub fn flags(&self) -> [bool; 5] {
        [
            self.aod_high,
            self.temp_high,
            self.humidity_high,
            self.wind_high,
            self.irr_var_high,
        ]
    }

    /// Conditions that fired, in weight order.
    pub fn fired(&self) -> Vec<Condition> {
        Condition::ALL
            .into_iter()
            .zip(self.flags())
            .filter_map(|(c, f)| f.then_some(c))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RiskLabel {
    Low,
    Medium,
    High,
}

impl RiskLabel {
    pub const ALL: [RiskLabel; 3] = [RiskLabel::Low, RiskLabel::Medium, RiskLabel::High];

    /// Class index used by the classifier (Low = 0).
    pub fn class_index(self) -> usize {
        self as usize
    }

    pub fn from_class_index(i: usize) -> Option<RiskLabel> {
        RiskLabel::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RiskLabel::Low => "Low",
            RiskLabel::Medium => "Medium",
            RiskLabel::High => "High",
        }
    }

    pub fn parse(s: &str) -> Option<RiskLabel> {
        RiskLabel::ALL.into_iter().find(|l| l.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpiScore {
    pub date: NaiveDate,
    pub score: f64,
    pub label: RiskLabel,
    pub triggers: TriggerVector,
}

/// Trailing 3-day sample std of irradiance; the first two days are dropped.
pub fn irr_variability(series: &EnvSeries) -> Result<Vec<f64>, IndexError> {
    if series.len() < IRR_VAR_WINDOW {
        return Err(IndexError::TooShort {
            need: IRR_VAR_WINDOW,
            got: series.len(),
        });
    }
    if let Some(w) = series
        .records()
        .windows(2)
        .find(|w| (w[1].date - w[0].date).num_days() != 1)
    {
        return Err(IndexError::NotContiguous(w[0].date));
    }
    let irr: Vec<f64> = series.records().iter().map(|r| r.solar_irradiance).collect();
    Ok(irr.windows(IRR_VAR_WINDOW).map(stats::sample_std).collect())
}

/// Empirical percentile (linear interpolation) used as an absolute
/// irradiance-variability threshold.
pub fn resolve_irr_threshold(values: &[f64], rank: f64) -> Result<f64, IndexError> {
    if !(rank > 0.0 && rank < 100.0) {
        return Err(IndexError::BadRank(rank));
    }
    stats::percentile(values, rank).ok_or(IndexError::Empty)
}

/// Evaluates the five triggers with strict `value > threshold`.
pub fn compute_triggers(
    record: &EnvRecord,
    irr_var: Option<f64>,
    thresholds: &ResolvedThresholds,
) -> TriggerVector {
    TriggerVector {
        aod_high: record.aod > thresholds.aod,
        temp_high: record.temperature > thresholds.temperature,
        humidity_high: record.humidity > thresholds.humidity,
        wind_high: record.wind_speed > thresholds.wind_speed,
        irr_var_high: irr_var.is_some_and(|v| v > thresholds.irr_var),
        values: TriggerValues {
            aod: record.aod,
            temperature: record.temperature,
            humidity: record.humidity,
            wind_speed: record.wind_speed,
            irr_var,
        },
    }
}

/// Weighted sum of fired flags, accumulated in condition order.
pub fn weighted_sum(weights: &[f64], flags: &[bool]) -> f64 {
    weights
        .iter()
        .zip(flags)
        .filter(|(_, &f)| f)
        .fold(0.0, |acc, (w, _)| acc + w)
}

/// MPI score of one trigger vector.
pub fn compute_mpi(triggers: &TriggerVector, weights: &Weights) -> f64 {
    weighted_sum(&weights.as_array(), &triggers.flags()).clamp(0.0, 1.0)
}

/// Normalizes condition frequencies into weights that sum to one.
pub fn eof_weights_from_frequencies(freq: [f64; 5]) -> Result<Weights, IndexError> {
    let never: Vec<Condition> = Condition::ALL
        .into_iter()
        .zip(freq)
        .filter_map(|(c, f)| (f <= 0.0).then_some(c))
        .collect();
    if !never.is_empty() {
        return Err(IndexError::DegenerateWeights(never));
    }
    let total: f64 = freq.iter().sum();
    Ok(Weights::from_array(freq.map(|f| f / total)))
}

/// Exceedance frequency of each condition over the days that have an
/// irradiance-variability value.
pub fn exceedance_frequencies(
    series: &EnvSeries,
    thresholds: &Thresholds,
) -> Result<[f64; 5], IndexError> {
    require_valid(series)?;
    let irr = irr_variability(series)?;
    let resolved = thresholds.resolve(&irr)?;
    let mut counts = [0usize; 5];
    for (record, &v) in series.records()[IRR_VAR_WINDOW - 1..].iter().zip(&irr) {
        let t = compute_triggers(record, Some(v), &resolved);
        for (c, f) in counts.iter_mut().zip(t.flags()) {
            *c += usize::from(f);
        }
    }
    Ok(counts.map(|c| c as f64 / irr.len() as f64))
}

/// Empirical Occurrence Frequency weights: each weight is proportional to
/// how often its condition is observed in `series`.
pub fn derive_eof_weights(series: &EnvSeries, thresholds: &Thresholds) -> Result<Weights, IndexError> {
    if series.len() < EOF_MIN_DAYS {
        return Err(IndexError::TooShort {
            need: EOF_MIN_DAYS,
            got: series.len(),
        });
    }
    eof_weights_from_frequencies(exceedance_frequencies(series, thresholds)?)
}

/// Band for a score: High iff `score >= high_lower`, Medium iff
/// `score >= low_upper`, else Low.
pub fn label_risk(score: f64, edges: &BandEdges) -> RiskLabel {
    if score >= edges.high_lower {
        RiskLabel::High
    } else if score >= edges.low_upper {
        RiskLabel::Medium
    } else {
        RiskLabel::Low
    }
}

/// Configuration with every data-dependent quantity pinned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub thresholds: ResolvedThresholds,
    pub weights: Weights,
    pub band_edges: BandEdges,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSeries {
    pub scores: Vec<MpiScore>,
    pub resolved: ResolvedConfig,
}

/// Scores a contiguous history. The irradiance percentile and, in
/// percentile band mode, the band edges are resolved against this history.
/// The first two days have no 3-day window and are not scored.
pub fn score_series(series: &EnvSeries, config: &MpiConfig) -> Result<ScoredSeries, IndexError> {
    config.validate()?;
    require_valid(series)?;
    let irr = irr_variability(series)?;
    let thresholds = config.thresholds.resolve(&irr)?;

    let mut scores: Vec<MpiScore> = series.records()[IRR_VAR_WINDOW - 1..]
        .iter()
        .zip(&irr)
        .map(|(record, &v)| {
            let triggers = compute_triggers(record, Some(v), &thresholds);
            MpiScore {
                date: record.date,
                score: compute_mpi(&triggers, &config.weights),
                label: RiskLabel::Low,
                triggers,
            }
        })
        .collect();

    let band_edges = match config.band_mode {
        BandMode::Fixed => config.band_edges,
        BandMode::Percentile => {
            BandEdges::from_scores(&scores.iter().map(|s| s.score).collect::<Vec<_>>())?
        }
    };
    for s in &mut scores {
        s.label = label_risk(s.score, &band_edges);
    }
    Ok(ScoredSeries {
        scores,
        resolved: ResolvedConfig {
            thresholds,
            weights: config.weights,
            band_edges,
        },
    })
}

/// One day submitted for scoring, optionally with a precomputed
/// irradiance-variability value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DayInput {
    #[serde(flatten)]
    pub record: EnvRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub irr_var: Option<f64>,
}

/// Scores arbitrary days against a resolved config.
///
/// The irradiance variability of a day is its explicit `irr_var` if given,
/// else the 3-day std when the two preceding inputs are the two preceding
/// calendar days, else absent (that trigger does not fire).
pub fn score_days(days: &[DayInput], resolved: &ResolvedConfig) -> Vec<MpiScore> {
    days.iter()
        .enumerate()
        .map(|(i, day)| {
            let irr_var = day.irr_var.or_else(|| {
                if i < IRR_VAR_WINDOW - 1 {
                    return None;
                }
                let window = &days[i + 1 - IRR_VAR_WINDOW..=i];
                let contiguous = window
                    .windows(2)
                    .all(|w| (w[1].record.date - w[0].record.date).num_days() == 1);
                contiguous.then(|| {
                    let irr: Vec<f64> = window.iter().map(|d| d.record.solar_irradiance).collect();
                    stats::sample_std(&irr)
                })
            });
            let triggers = compute_triggers(&day.record, irr_var, &resolved.thresholds);
            let score = compute_mpi(&triggers, &resolved.weights);
            MpiScore {
                date: day.record.date,
                score,
                label: label_risk(score, &resolved.band_edges),
                triggers,
            }
        })
        .collect()
}

/// Means of consecutive 7-day calendar blocks anchored at the first date.
/// Blocks extending past the last date are dropped; each block's value is
/// the mean of the observations it contains.
pub fn weekly_resample(daily: &[(NaiveDate, f64)]) -> Vec<(NaiveDate, f64)> {
    let (Some(first), Some(last)) = (daily.first(), daily.last()) else {
        return Vec::new();
    };
    let start = first.0;
    let n_blocks = ((last.0 - start).num_days() + 1) / 7;
    let mut sums = vec![(0.0, 0usize); n_blocks as usize];
    for &(d, v) in daily {
        let block = (d - start).num_days() / 7;
        if block < n_blocks {
            let slot = &mut sums[block as usize];
            slot.0 += v;
            slot.1 += 1;
        }
    }
    sums.into_iter()
        .enumerate()
        .filter(|(_, (_, n))| *n > 0)
        .map(|(k, (s, n))| (start + chrono::Duration::days(7 * k as i64), s / n as f64))
        .collect()
}

/// A `date,score,label` row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub date: NaiveDate,
    pub score: f64,
    pub label: RiskLabel,
}

impl From<&MpiScore> for ScoreRow {
    fn from(s: &MpiScore) -> Self {
        ScoreRow {
            date: s.date,
            score: s.score,
            label: s.label,
        }
    }
}

pub fn scores_to_csv(rows: &[ScoreRow]) -> String {
    let mut out = String::from("date,score,label\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.date.format("%Y-%m-%d"), r.score, r.label.as_str());
    }
    out
}

pub fn parse_scores_csv(text: &[u8]) -> Result<Vec<ScoreRow>, IndexError> {
    let mut reader = csv::Reader::from_reader(text);
    let header = reader
        .headers()
        .map_err(|e| IndexError::Parse(e.to_string()))?
        .clone();
    if header.iter().ne(["date", "score", "label"]) {
        return Err(IndexError::Parse(format!(
            "expected header `date,score,label`, found `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    reader
        .records()
        .map(|row| {
            let row = row.map_err(|e| IndexError::Parse(e.to_string()))?;
            let line = row.position().map(|p| p.line()).unwrap_or(0);
            let bad = |what: &str| IndexError::Parse(format!("line {line}: bad {what}"));
            Ok(ScoreRow {
                date: NaiveDate::parse_from_str(&row[0], "%Y-%m-%d").map_err(|_| bad("date"))?,
                score: row[1].parse().map_err(|_| bad("score"))?,
                label: RiskLabel::parse(&row[2]).ok_or_else(|| bad("label"))?,
            })
        })
        .collect()
}
