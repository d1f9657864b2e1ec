use std::collections::HashMap;
use std::io::BufReader;
use std::path::Path;

use anyhow::{Context, Result};
use evdetect::data::read_meter_csv;
use evdetect::eval::{evaluate_events, evaluate_scores, parse_events, parse_score_csv, Metrics};

use super::{open_input, require_file, spot_config};
use crate::config::ConfigFile;
use crate::{EvalArgs, UsageError};

fn events_metrics(events: &Path, labels: &Path) -> Result<Metrics> {
    let parsed = parse_events(BufReader::new(open_input(events)?))
        .with_context(|| format!("reading {}", events.display()))?;
    let series = read_meter_csv(open_input(labels)?)
        .with_context(|| format!("reading {}", labels.display()))?;
    let Some(l) = &series.labels else {
        return Err(UsageError(format!("{} has no label column", labels.display())).into());
    };
    let truth: HashMap<i64, u8> = series.readings.iter().map(|r| r.t).zip(l.iter().copied()).collect();
    Ok(evaluate_events(&parsed, &truth)?)
}

pub fn run(a: &EvalArgs, f: &ConfigFile) -> Result<()> {
    let mut named: Vec<(String, Metrics)> = Vec::new();
    if !a.events.is_empty() {
        if a.events.len() != a.labels.len() {
            return Err(UsageError(format!(
                "{} event files but {} label files",
                a.events.len(),
                a.labels.len()
            ))
            .into());
        }
        for p in a.events.iter().chain(&a.labels) {
            require_file(p)?;
        }
        for (ev, lab) in a.events.iter().zip(&a.labels) {
            named.push((ev.display().to_string(), events_metrics(ev, lab)?));
        }
    } else if !a.scores.is_empty() {
        for p in &a.scores {
            require_file(p)?;
        }
        let spot = spot_config(f, a.q, None, None, None)?;
        let calibration_len = f.pick(a.calibration_len, "calibration_len", 1440)?;
        for p in &a.scores {
            let rows = parse_score_csv(open_input(p)?).with_context(|| format!("reading {}", p.display()))?;
            named.push((p.display().to_string(), evaluate_scores(&rows, &spot, calibration_len)?));
        }
    } else {
        return Err(UsageError("give --events with --labels, or --scores".into()).into());
    }

    if named.len() > 1 {
        for (name, m) in &named {
            eprintln!("{name}: {}", serde_json::to_string(m)?);
        }
    }
    let all: Vec<Metrics> = named.into_iter().map(|(_, m)| m).collect();
    println!("{}", serde_json::to_string(&Metrics::mean(&all)?)?);
    Ok(())
}
