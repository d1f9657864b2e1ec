use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Z-score normalization statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub mean: f64,
    /// Population standard deviation; 1 when the fit series was constant.
    pub std: f64,
    pub count: usize,
}

impl SeriesStats {
    pub fn normalize_one(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn denormalize_one(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

pub fn fit_stats(values: &[f64]) -> Result<SeriesStats> {
    if values.is_empty() {
        return Err(Error::Empty("fit_stats"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("fit_stats input"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let mut std = var.sqrt();
    if !(std > 1e-12 * mean.abs().max(1.0)) {
        log::warn!("constant series (mean {mean}); normalizing with std = 1");
        std = 1.0;
    }
    Ok(SeriesStats {
        mean,
        std,
        count: values.len(),
    })
}

pub fn normalize(values: &[f64], stats: &SeriesStats) -> Vec<f64> {
    values.iter().map(|&v| stats.normalize_one(v)).collect()
}

pub fn denormalize(values: &[f64], stats: &SeriesStats) -> Vec<f64> {
    values.iter().map(|&v| stats.denormalize_one(v)).collect()
}
