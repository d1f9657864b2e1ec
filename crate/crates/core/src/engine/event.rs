use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::format::{format_timestamp, real9};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warmup,
    Calibrating,
    Detecting,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Warmup => "warmup",
            Phase::Calibrating => "calibrating",
            Phase::Detecting => "detecting",
        }
    }
}

/// Outcome of one reading.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionEvent {
    /// Minutes since the epoch.
    pub t: i64,
    /// Anomaly score; absent during warmup.
    pub score: Option<f64>,
    /// Threshold the score was compared against; only while detecting.
    pub threshold: Option<f64>,
    pub label: u8,
    pub phase: Phase,
    /// Raw local window in kW, oldest first, when requested.
    pub lm_kw: Option<Vec<f64>>,
}

impl DetectionEvent {
    /// One JSON object with keys `t, score, threshold, label, phase[, lm_kw]`
    /// in that order and reals at 9 significant digits.
    pub fn to_json(&self) -> String {
        let opt = |x: Option<f64>| x.map_or_else(|| "null".to_string(), real9);
        let mut s = format!(
            "{{\"t\":\"{}\",\"score\":{},\"threshold\":{},\"label\":{},\"phase\":\"{}\"",
            format_timestamp(self.t),
            opt(self.score),
            opt(self.threshold),
            self.label,
            self.phase.as_str()
        );
        if let Some(w) = &self.lm_kw {
            s.push_str(",\"lm_kw\":[");
            for (i, x) in w.iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                let _ = write!(s, "{}", real9(*x));
            }
            s.push(']');
        }
        s.push('}');
        s
    }
}
