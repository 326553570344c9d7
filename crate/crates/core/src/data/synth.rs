//! Synthetic residential-load generator: a desk-scale stand-in for licensed
//! smart-meter data. Each household is base load plus smooth morning and
//! evening peaks, a weekly modulation, and autocorrelated multiplicative
//! noise, clipped at zero.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

use super::{hour_of_week, midnight, LoadSeries};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub households: usize,
    pub days: usize,
    pub start_date: NaiveDate,
    /// Mean base load per household in kW.
    pub base_kw: f64,
    /// Morning peak relative amplitude and center hour.
    pub morning_amp: f64,
    pub morning_hour: f64,
    /// Evening peak relative amplitude and center hour.
    pub evening_amp: f64,
    pub evening_hour: f64,
    /// Relative amplitude of the 168-hour modulation.
    pub weekly_mod: f64,
    /// Stationary standard deviation of the multiplicative noise.
    pub noise_scale: f64,
    /// Hour-to-hour autocorrelation of the noise.
    pub noise_rho: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            households: 105,
            days: 900,
            start_date: NaiveDate::from_ymd_opt(2013, 1, 1).unwrap(),
            base_kw: 0.5,
            morning_amp: 0.5,
            morning_hour: 7.5,
            evening_amp: 1.1,
            evening_hour: 19.0,
            weekly_mod: 0.15,
            noise_scale: 0.35,
            noise_rho: 0.95,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.households == 0 {
            return Err(Error::Config("at least one household is required".into()));
        }
        if self.days == 0 {
            return Err(Error::Config("at least one day is required".into()));
        }
        if self.base_kw <= 0.0 {
            return Err(Error::Config("base load must be positive".into()));
        }
        if self.noise_scale < 0.0 {
            return Err(Error::Config("noise scale must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.noise_rho) {
            return Err(Error::Config("noise autocorrelation must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Smooth daily bump centered at `center` (hours), circular in hour-of-day.
fn bump(hour: f64, center: f64, width: f64) -> f64 {
    let raw = (hour - center).abs();
    let dist = raw.min(24.0 - raw);
    (-0.5 * (dist / width) * (dist / width)).exp()
}

/// Generate one reproducible series per household.
pub fn synth_generate(spec: &SynthSpec) -> Result<Vec<LoadSeries>> {
    spec.validate()?;
    let start = midnight(spec.start_date);
    let hours = spec.days * 24;
    // Saturday noon, measured in hours from Monday 00:00.
    let weekly_peak = 132.0;

    let mut out = Vec::with_capacity(spec.households);
    for hh in 0..spec.households {
        let mut rng = ChaCha8Rng::seed_from_u64(
            spec.seed ^ (hh as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        let base = spec.base_kw * rng.random_range(0.7..1.3);
        let m_amp = spec.morning_amp * rng.random_range(0.85..1.15);
        let e_amp = spec.evening_amp * rng.random_range(0.85..1.15);
        let m_hour = spec.morning_hour + rng.random_range(-1.0..1.0);
        let e_hour = spec.evening_hour + rng.random_range(-1.0..1.0);
        let w_amp = spec.weekly_mod * rng.random_range(0.85..1.15);

        let innovation = spec.noise_scale * (1.0 - spec.noise_rho * spec.noise_rho).sqrt();
        let mut noise = spec.noise_scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);

        let mut values = Vec::with_capacity(hours);
        for t in 0..hours {
            let ts = start + chrono::Duration::hours(t as i64);
            let hod = (t % 24) as f64;
            let how = hour_of_week(ts) as f64;
            let daily = 1.0 + m_amp * bump(hod, m_hour, 1.5) + e_amp * bump(hod, e_hour, 2.5);
            let weekly = 1.0 + w_amp * (2.0 * std::f64::consts::PI * (how - weekly_peak) / 168.0).cos();
            let level = base * daily * weekly;
            if t > 0 {
                let step: f64 = StandardNormal.sample(&mut rng);
                noise = spec.noise_rho * noise + innovation * step;
            }
            values.push((level * (1.0 + noise)).max(0.0));
        }
        out.push(LoadSeries { household: format!("{}", hh + 1), start, values });
    }
    Ok(out)
}
