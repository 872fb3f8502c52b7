//! Seeded synthetic daily weather with a coastal-desert seasonal profile.
//!
//! Each variable is `mean + amplitude * sin(2π·doy/365.25 + phase) + noise`,
//! where `phase` places the seasonal peak on `peak_day`. Noise is standard
//! normal (Box–Muller over ChaCha20 uniforms) scaled by `sigma`. Storm days
//! are drawn as a Bernoulli-thinned Poisson process with rate `storm_rate`
//! per year; a storm adds `storm_aod_boost` to AOD and attenuates
//! irradiance by `exp(-storm_aod_boost)`.
//!
//! Per day the generator consumes, in order: two uniforms per variable in
//! [`Variable::ALL`] order (Box–Muller, cosine branch), then one uniform
//! for the storm draw.

use std::f64::consts::PI;

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{EnvRecord, EnvSeries, Variable};

const YEAR_DAYS: f64 = 365.25;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariableBaseline {
    pub mean: f64,
    pub amplitude: f64,
    /// Day of year at which the seasonal cycle peaks.
    pub peak_day: f64,
    pub sigma: f64,
}

impl VariableBaseline {
    fn phase(&self) -> f64 {
        PI / 2.0 - 2.0 * PI * self.peak_day / YEAR_DAYS
    }

    /// Noise-free seasonal value at a given day of year.
    pub fn seasonal(&self, day_of_year: u32) -> f64 {
        self.mean + self.amplitude * (2.0 * PI * f64::from(day_of_year) / YEAR_DAYS + self.phase()).sin()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub days: usize,
    pub start: NaiveDate,
    pub aod: VariableBaseline,
    pub temperature: VariableBaseline,
    pub humidity: VariableBaseline,
    pub wind_speed: VariableBaseline,
    pub solar_irradiance: VariableBaseline,
    /// Expected dust storms per year.
    pub storm_rate: f64,
    /// Additive AOD on storm days.
    pub storm_aod_boost: f64,
}

impl Default for ScenarioSpec {
    /// Five years from 2020-01-01 with a Duqm-like climate; every MPI
    /// trigger fires on a non-trivial fraction of days.
    fn default() -> Self {
        ScenarioSpec {
            seed: 42,
            days: 1826,
            start: NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date"),
            aod: VariableBaseline {
                mean: 0.55,
                amplitude: 0.25,
                peak_day: 180.0,
                sigma: 0.12,
            },
            temperature: VariableBaseline {
                mean: 30.0,
                amplitude: 5.5,
                peak_day: 160.0,
                sigma: 1.5,
            },
            humidity: VariableBaseline {
                mean: 62.0,
                amplitude: 12.0,
                peak_day: 215.0,
                sigma: 8.0,
            },
            wind_speed: VariableBaseline {
                mean: 5.0,
                amplitude: 2.5,
                peak_day: 195.0,
                sigma: 1.0,
            },
            solar_irradiance: VariableBaseline {
                mean: 250.0,
                amplitude: 50.0,
                peak_day: 130.0,
                sigma: 20.0,
            },
            storm_rate: 12.0,
            storm_aod_boost: 0.8,
        }
    }
}

impl ScenarioSpec {
    pub fn baseline(&self, var: Variable) -> &VariableBaseline {
        match var {
            Variable::Aod => &self.aod,
            Variable::Temperature => &self.temperature,
            Variable::Humidity => &self.humidity,
            Variable::WindSpeed => &self.wind_speed,
            Variable::SolarIrradiance => &self.solar_irradiance,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.days == 0 {
            return Err(SynthError::InvalidSpec("days must be >= 1".into()));
        }
        for var in Variable::ALL {
            let b = self.baseline(var);
            if !(b.sigma >= 0.0) {
                return Err(SynthError::InvalidSpec(format!(
                    "{} sigma must be >= 0",
                    var.column()
                )));
            }
            if ![b.mean, b.amplitude, b.peak_day, b.sigma]
                .iter()
                .all(|v| v.is_finite())
            {
                return Err(SynthError::InvalidSpec(format!(
                    "{} baseline must be finite",
                    var.column()
                )));
            }
        }
        if !(self.storm_rate >= 0.0) || !self.storm_rate.is_finite() {
            return Err(SynthError::InvalidSpec("storm_rate must be >= 0".into()));
        }
        if !self.storm_aod_boost.is_finite() {
            return Err(SynthError::InvalidSpec("storm_aod_boost must be finite".into()));
        }
        Ok(())
    }
}

fn standard_normal(rng: &mut ChaCha20Rng) -> f64 {
    // u1 in (0, 1] keeps the log finite.
    let u1 = 1.0 - rng.random::<f64>();
    let u2 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Generates a contiguous daily series. Deterministic in `spec`.
pub fn generate(spec: &ScenarioSpec) -> Result<EnvSeries, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let storm_p = (spec.storm_rate / YEAR_DAYS).min(1.0);

    let mut records = Vec::with_capacity(spec.days);
    let mut date = spec.start;
    for _ in 0..spec.days {
        let doy = date.ordinal();
        let mut values = [0.0; 5];
        for (slot, var) in values.iter_mut().zip(Variable::ALL) {
            let b = spec.baseline(var);
            *slot = b.seasonal(doy) + b.sigma * standard_normal(&mut rng);
        }
        let storm = rng.random::<f64>() < storm_p;
        let [mut aod, temperature, humidity, wind_speed, mut solar_irradiance] = values;
        if storm {
            aod += spec.storm_aod_boost;
            solar_irradiance *= (-spec.storm_aod_boost).exp();
        }
        records.push(EnvRecord {
            date,
            aod: aod.max(0.0),
            temperature,
            humidity: humidity.clamp(0.0, 100.0),
            wind_speed: wind_speed.max(0.0),
            solar_irradiance: solar_irradiance.max(0.0),
        });
        date = date.succ_opt().expect("date overflow");
    }
    Ok(EnvSeries::new(records).expect("generated dates are unique"))
}
