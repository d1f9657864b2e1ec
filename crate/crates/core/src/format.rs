//! Text encodings shared by the CSV and JSONL artifacts.

use chrono::{DateTime, NaiveDateTime};

use crate::error::{Error, Result};

/// Formats `x` rounded to 9 significant digits, in the shortest form that
/// parses back to the rounded value. Non-finite values become `null`.
pub fn real9(x: f64) -> String {
    if !x.is_finite() {
        return "null".into();
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("float formatting round-trips");
    format!("{rounded}")
}

/// Parses an ISO-8601 timestamp into minutes since the Unix epoch. Accepts
/// RFC 3339 (with offset) and naive `YYYY-MM-DD[T ]HH:MM[:SS]` (read as
/// UTC). Seconds are truncated to the minute.
pub fn parse_timestamp(s: &str) -> Result<i64> {
    let s = s.trim();
    let secs = if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        dt.timestamp()
    } else {
        const NAIVE: [&str; 4] = [
            "%Y-%m-%dT%H:%M:%S",
            "%Y-%m-%d %H:%M:%S",
            "%Y-%m-%dT%H:%M",
            "%Y-%m-%d %H:%M",
        ];
        NAIVE
            .iter()
            .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
            .map(|dt| dt.and_utc().timestamp())
            .ok_or_else(|| Error::Domain(format!("unrecognized timestamp {s:?}")))?
    };
    Ok(secs.div_euclid(60))
}

/// `YYYY-MM-DDTHH:MM:SSZ` for minutes since the epoch.
pub fn format_timestamp(minutes: i64) -> String {
    match DateTime::from_timestamp(minutes * 60, 0) {
        Some(dt) => dt.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
        None => minutes.to_string(),
    }
}
