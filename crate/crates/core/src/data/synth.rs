//! Labeled synthetic household: a smooth double-peak daily base load with
//! noise plus rectangular EV charging sessions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::Reading;

/// 2024-01-01T00:00Z in minutes since the epoch.
pub const DEFAULT_START: i64 = 28_401_120;

/// Daily base-load shape in kW.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseProfile {
    pub level: f64,
    pub morning_peak: f64,
    pub morning_hour: f64,
    pub evening_peak: f64,
    pub evening_hour: f64,
    /// Standard deviation of each bump, in hours.
    pub peak_width_hours: f64,
    pub noise_std: f64,
}

impl Default for BaseProfile {
    fn default() -> Self {
        Self {
            level: 0.5,
            morning_peak: 0.4,
            morning_hour: 7.5,
            evening_peak: 0.8,
            evening_hour: 19.0,
            peak_width_hours: 1.5,
            noise_std: 0.05,
        }
    }
}

impl BaseProfile {
    /// Noise-free base load at minute-of-day `m`.
    pub fn mean_at(&self, minute_of_day: i64) -> f64 {
        let h = minute_of_day.rem_euclid(1440) as f64 / 60.0;
        let bump = |center: f64| {
            let d = (h - center).abs();
            let d = d.min(24.0 - d);
            (-0.5 * (d / self.peak_width_hours).powi(2)).exp()
        };
        self.level + self.morning_peak * bump(self.morning_hour) + self.evening_peak * bump(self.evening_hour)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub days: usize,
    pub base: BaseProfile,
    /// Charging power in kW.
    pub ev_power: f64,
    /// Expected sessions per day.
    pub session_rate: f64,
    pub duration_min: usize,
    pub duration_max: usize,
    /// No session starts within this many minutes of the beginning.
    pub ev_free_prefix_minutes: usize,
    /// First timestamp, minutes since the epoch.
    pub start: i64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            days: 28,
            base: BaseProfile::default(),
            ev_power: 3.3,
            session_rate: 1.0 / 1.5,
            duration_min: 60,
            duration_max: 240,
            ev_free_prefix_minutes: 0,
            start: DEFAULT_START,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.days == 0 {
            return bad("days must be positive".into());
        }
        if !(self.ev_power > 0.0) || !self.ev_power.is_finite() {
            return bad(format!("ev_power must be positive, got {}", self.ev_power));
        }
        if !(self.session_rate >= 0.0) || !self.session_rate.is_finite() {
            return bad(format!("session_rate must be >= 0, got {}", self.session_rate));
        }
        if self.duration_min < 15 || self.duration_max < self.duration_min {
            return bad(format!(
                "need 15 <= duration_min <= duration_max (got {}..{})",
                self.duration_min, self.duration_max
            ));
        }
        if !(self.base.noise_std >= 0.0) || !(self.base.peak_width_hours > 0.0) {
            return bad("noise_std must be >= 0 and peak width positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Household {
    pub readings: Vec<Reading>,
    pub labels: Vec<u8>,
}

pub fn synth_household(cfg: &SynthConfig) -> Result<Household> {
    cfg.validate()?;
    let n = cfg.days * 1440;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut labels = vec![0u8; n];
    if cfg.session_rate > 0.0 {
        let gap = Exp::new(cfg.session_rate / 1440.0).expect("positive rate");
        let mut cursor = cfg.ev_free_prefix_minutes as f64;
        loop {
            let start = (cursor + gap.sample(&mut rng)).floor() as usize;
            if start >= n {
                break;
            }
            let len = rng.gen_range(cfg.duration_min..=cfg.duration_max);
            let end = (start + len).min(n);
            labels[start..end].fill(1);
            cursor = end as f64;
        }
    }

    let noise = Normal::new(0.0, cfg.base.noise_std).expect("valid std");
    let readings = (0..n)
        .map(|i| {
            let t = cfg.start + i as i64;
            let base = (cfg.base.mean_at(t) + noise.sample(&mut rng)).max(0.0);
            let power = base + if labels[i] == 1 { cfg.ev_power } else { 0.0 };
            Reading::new(t, power)
        })
        .collect();
    Ok(Household { readings, labels })
}
