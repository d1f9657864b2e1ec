//! Peak-over-threshold calibration and the streaming threshold update.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spot::gpd::{gpd_quantile, GpdFit};
use crate::spot::grimshaw::grimshaw_fit;

pub const MIN_CALIBRATION: usize = 100;
const MIN_PEAKS: usize = 10;
/// Relative gap between `h` and `z_q` when calibration scores are constant.
const DEGENERATE_MARGIN: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpotConfig {
    /// Target risk.
    pub q: f64,
    /// Empirical quantile of the calibration scores used as `h`.
    pub init_level: f64,
    /// Refit the tail after every `refit_every` new peaks.
    pub refit_every: usize,
    /// Keep at most this many of the most recent excesses.
    pub max_peaks: Option<usize>,
}

impl Default for SpotConfig {
    fn default() -> Self {
        Self {
            q: 1e-4,
            init_level: 0.98,
            refit_every: 1,
            max_peaks: None,
        }
    }
}

impl SpotConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(Error::Config(format!("risk q={} must lie in (0, 1)", self.q)));
        }
        if !(self.init_level > 0.0 && self.init_level < 1.0) {
            return Err(Error::Config(format!(
                "init_level={} must lie in (0, 1)",
                self.init_level
            )));
        }
        if self.refit_every == 0 {
            return Err(Error::Config("refit_every must be >= 1".into()));
        }
        if self.max_peaks.is_some_and(|m| m < 2) {
            return Err(Error::Config("max_peaks must be >= 2".into()));
        }
        Ok(())
    }
}

/// Something unusual that happened while calibrating.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CalibrationWarning {
    /// Too few scores exceeded the configured quantile; `h` was lowered.
    LoweredThreshold { peaks: usize },
    /// The scores have no usable upper tail (e.g. all equal).
    Degenerate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpotClass {
    Normal,
    Peak,
    Anomaly,
}

/// Calibrated threshold state for one stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpotState {
    config: SpotConfig,
    h: f64,
    z_q: f64,
    peaks: VecDeque<f64>,
    /// Peaks seen in total (`N_h`); exceeds `peaks.len()` once capped.
    n_peaks: usize,
    /// Non-anomalous observations seen, calibration included.
    k: u64,
    fit: GpdFit,
    pending_refit: usize,
    warning: Option<CalibrationWarning>,
}

/// Calibrates the initial threshold `h`, the tail fit and `z_q` from `scores`
/// assumed free of anomalies.
pub fn pot_calibrate(scores: &[f64], config: &SpotConfig) -> Result<SpotState> {
    config.validate()?;
    if scores.len() < MIN_CALIBRATION {
        return Err(Error::Config(format!(
            "calibration needs at least {MIN_CALIBRATION} scores, got {}",
            scores.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("calibration score"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();

    let level_idx = ((config.init_level * n as f64 - 1e-9).ceil() as usize)
        .saturating_sub(1)
        .min(n - 1);
    let mut idx = level_idx;
    let mut warning = None;
    let count_above = |h: f64| n - sorted.partition_point(|&x| x <= h);
    if count_above(sorted[idx]) < MIN_PEAKS {
        idx = idx.min(n - 1 - MIN_PEAKS);
        while idx > 0 && count_above(sorted[idx]) < MIN_PEAKS {
            idx -= 1;
        }
        warning = Some(CalibrationWarning::LoweredThreshold {
            peaks: count_above(sorted[idx]),
        });
    }
    let h = sorted[idx];
    let mut peaks: VecDeque<f64> = sorted[idx..]
        .iter()
        .filter(|&&x| x > h)
        .map(|x| x - h)
        .collect();

    if peaks.len() < 2 {
        log::warn!("calibration scores have no upper tail; using a degenerate threshold");
        let margin = DEGENERATE_MARGIN * h.abs().max(1.0);
        return Ok(SpotState {
            config: config.clone(),
            h,
            z_q: h + margin,
            n_peaks: peaks.len(),
            peaks,
            k: n as u64,
            fit: GpdFit {
                gamma_hat: 0.0,
                sigma_hat: margin,
                n_excesses: 0,
            },
            pending_refit: 0,
            warning: Some(CalibrationWarning::Degenerate),
        });
    }
    if let Some(CalibrationWarning::LoweredThreshold { peaks }) = &warning {
        log::warn!(
            "only {} scores above the {} quantile; lowered h to keep {peaks} peaks",
            n - level_idx - 1,
            config.init_level
        );
    }

    let fit = grimshaw_fit(peaks.make_contiguous())?;
    if config.q * n as f64 >= peaks.len() as f64 {
        return Err(Error::Config(format!(
            "risk q={} is not below the calibration peak rate {}/{n}",
            config.q,
            peaks.len()
        )));
    }
    let z_q = gpd_quantile(h, &fit, config.q, n as u64)?;
    let mut state = SpotState {
        config: config.clone(),
        h,
        z_q,
        n_peaks: peaks.len(),
        peaks,
        k: n as u64,
        fit,
        pending_refit: 0,
        warning,
    };
    state.apply_cap();
    Ok(state)
}

impl SpotState {
    pub fn config(&self) -> &SpotConfig {
        &self.config
    }

    /// Initial (peaks) threshold.
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Anomaly threshold.
    pub fn z_q(&self) -> f64 {
        self.z_q
    }

    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn n_peaks(&self) -> usize {
        self.n_peaks
    }

    pub fn peaks(&self) -> &VecDeque<f64> {
        &self.peaks
    }

    pub fn fit(&self) -> &GpdFit {
        &self.fit
    }

    pub fn warning(&self) -> Option<&CalibrationWarning> {
        self.warning.as_ref()
    }

    /// Classifies `x` and updates the tail when it is a peak. Anomalies leave
    /// the state untouched.
    pub fn step(&mut self, x: f64) -> SpotClass {
        if x > self.z_q {
            return SpotClass::Anomaly;
        }
        if x > self.h {
            self.peaks.push_back(x - self.h);
            self.apply_cap();
            self.n_peaks += 1;
            self.k += 1;
            self.pending_refit += 1;
            if self.pending_refit >= self.config.refit_every {
                self.refit();
            }
            return SpotClass::Peak;
        }
        self.k += 1;
        SpotClass::Normal
    }

    fn refit(&mut self) {
        self.pending_refit = 0;
        let Ok(mut fit) = grimshaw_fit(self.peaks.make_contiguous()) else {
            return;
        };
        fit.n_excesses = self.n_peaks;
        self.fit = fit;
        // Keep the previous threshold if the live count makes the risk
        // unreachable (q k >= N_h) or the quantile would not clear h.
        if let Ok(z) = gpd_quantile(self.h, &fit, self.config.q, self.k) {
            if z > self.h && z.is_finite() {
                self.z_q = z;
            }
        }
    }

    fn apply_cap(&mut self) {
        if let Some(cap) = self.config.max_peaks {
            while self.peaks.len() > cap {
                self.peaks.pop_front();
            }
        }
    }
}

/// Free-function form of [`SpotState::step`].
pub fn spot_step(state: &mut SpotState, x: f64) -> SpotClass {
    state.step(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn calibrate_on_normals() {
        let cfg = SpotConfig {
            q: 1e-3,
            ..SpotConfig::default()
        };
        let s = pot_calibrate(&normals(1000, 1), &cfg).unwrap();
        assert!(s.z_q() > s.h() && s.h() > 0.0, "h={} z={}", s.h(), s.z_q());
        assert_eq!(s.k(), 1000);
        assert!(s.warning().is_none());
        let exceed = normals(1000, 2).iter().filter(|&&x| x > s.z_q()).count();
        assert!(exceed <= 3, "{exceed} exceedances");
    }

    #[test]
    fn level_quantile_peak_count() {
        // distinct values 0..5000
        let scores: Vec<f64> = (0..5000).map(|i| i as f64 * 0.001).collect();
        let s = pot_calibrate(&scores, &SpotConfig::default()).unwrap();
        assert_eq!(s.n_peaks(), 100);
        assert_eq!(s.peaks().len(), 100);
    }

    #[test]
    fn constant_scores_are_degenerate() {
        let s = pot_calibrate(&[0.7; 200], &SpotConfig::default()).unwrap();
        assert_eq!(s.h(), 0.7);
        assert!(s.z_q() > s.h() && s.z_q() - s.h() < 1e-6);
        assert_eq!(s.warning(), Some(&CalibrationWarning::Degenerate));
    }

    #[test]
    fn heavy_ties_lower_the_threshold() {
        // 990 zeros and 10 distinct positive values: the 0.98 quantile is 0
        // already; make it tie-heavy at the top instead.
        let mut scores = vec![1.0; 995];
        scores.extend((1..=15).map(|i| 1.0 + i as f64));
        let mut scores2 = scores.clone();
        scores2.extend(vec![0.5; 2000]);
        // 15 peaks above 1.0 out of 3010 -> 0.98 quantile is 1.0, fine
        assert!(pot_calibrate(&scores2, &SpotConfig::default()).unwrap().warning().is_none());
        // 5 distinct tops and ties just below them
        let mut tied = vec![3.0; 500];
        tied.extend((1..=5).map(|i| 3.0 + i as f64));
        tied.extend(vec![2.0; 20]);
        let s = pot_calibrate(&tied, &SpotConfig::default()).unwrap();
        assert!(matches!(s.warning(), Some(CalibrationWarning::LoweredThreshold { .. })));
        assert!(s.n_peaks() >= 10);
    }

    #[test]
    fn calibration_errors() {
        assert!(pot_calibrate(&[1.0; 99], &SpotConfig::default()).is_err());
        let bad = SpotConfig {
            q: 0.5,
            ..SpotConfig::default()
        };
        assert!(pot_calibrate(&normals(1000, 3), &bad).is_err());
        let mut with_nan = normals(200, 4);
        with_nan[3] = f64::NAN;
        assert!(pot_calibrate(&with_nan, &SpotConfig::default()).is_err());
    }

    #[test]
    fn boundary_and_branches() {
        let mut s = pot_calibrate(&normals(2000, 5), &SpotConfig::default()).unwrap();
        let before = s.clone();
        // exactly the threshold is a peak, not an anomaly
        let z = s.z_q();
        assert_eq!(s.step(z), SpotClass::Peak);
        assert_eq!(s.n_peaks(), before.n_peaks() + 1);

        let mut s = before.clone();
        assert_eq!(s.step(s.h() - 1.0), SpotClass::Normal);
        assert_eq!(s.k(), before.k() + 1);
        assert_eq!(s.z_q(), before.z_q());
        assert_eq!(s.fit(), before.fit());
        assert_eq!(s.peaks(), before.peaks());

        let mut s = before.clone();
        assert_eq!(s.step(1e6), SpotClass::Anomaly);
        assert_eq!(s, before);
    }

    #[test]
    fn injected_spikes_are_flagged() {
        let mut scores = normals(11_000, 6);
        let spike = 10.0 * 3.090232306167813;
        let positions: Vec<usize> = (0..20).map(|i| 1500 + i * 450).collect();
        for &p in &positions {
            scores[p] = spike;
        }
        let mut s = pot_calibrate(&scores[..1000], &SpotConfig::default()).unwrap();
        let mut flagged = 0;
        let mut false_alarms = 0;
        for (i, &x) in scores.iter().enumerate().skip(1000) {
            let anomalous = s.step(x) == SpotClass::Anomaly;
            if positions.contains(&i) {
                flagged += anomalous as usize;
            } else {
                false_alarms += anomalous as usize;
            }
            assert!(s.z_q() > s.h());
        }
        assert!(flagged >= 19, "{flagged}");
        assert!(false_alarms <= 50, "{false_alarms}");
    }

    #[test]
    fn peak_cap_keeps_recent_excesses() {
        let cfg = SpotConfig {
            max_peaks: Some(30),
            ..SpotConfig::default()
        };
        let mut s = pot_calibrate(&normals(5000, 7), &cfg).unwrap();
        assert_eq!(s.peaks().len(), 30);
        assert_eq!(s.n_peaks(), 100);
        let last = s.h() + 0.01;
        s.step(last);
        assert_eq!(s.peaks().len(), 30);
        assert_eq!(*s.peaks().back().unwrap(), last - s.h());
        assert_eq!(s.fit().n_excesses, 101);
    }

    #[test]
    fn refit_stride_defers_updates() {
        let cfg = SpotConfig {
            refit_every: 3,
            ..SpotConfig::default()
        };
        let mut s = pot_calibrate(&normals(3000, 8), &cfg).unwrap();
        let z0 = s.z_q();
        let x = s.h() + 0.5 * (s.z_q() - s.h());
        s.step(x);
        s.step(x);
        assert_eq!(s.z_q(), z0);
        s.step(x);
        assert_ne!(s.z_q(), z0);
    }
}
