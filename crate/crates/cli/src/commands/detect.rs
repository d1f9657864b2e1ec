use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use evdetect::checkpoint::ModelCheckpoint;
use evdetect::data::{GapFiller, Ingested, MeterRows};
use evdetect::engine::{Engine, EngineCheckpoint, EngineConfig, Phase};
use rayon::prelude::*;

use super::{is_stdio, open_input, open_output, require_file, spot_config};
use crate::config::ConfigFile;
use crate::{DetectArgs, UsageError};

#[derive(Debug, Default)]
struct Summary {
    readings: usize,
    events: usize,
    anomalies: usize,
    out_of_order: usize,
    calibration_ev: usize,
    latencies_us: Vec<f64>,
}

impl Summary {
    fn log(&self, name: &str) {
        let mut l = self.latencies_us.clone();
        if l.is_empty() {
            log::info!("{name}: no readings");
            return;
        }
        l.sort_by(f64::total_cmp);
        let pct = |p: f64| l[((l.len() - 1) as f64 * p).round() as usize];
        let mean = l.iter().sum::<f64>() / l.len() as f64;
        log::info!(
            "{name}: {} readings, {} events, {} anomalies; latency us mean {mean:.1} p50 {:.1} p99 {:.1} max {:.1}",
            self.readings,
            self.events,
            self.anomalies,
            pct(0.5),
            pct(0.99),
            pct(1.0)
        );
        if self.out_of_order > 0 {
            log::warn!("{name}: skipped {} out-of-order readings", self.out_of_order);
        }
        if self.calibration_ev > 0 {
            log::warn!(
                "{name}: {} calibration readings are labeled as charging; the threshold may be too high",
                self.calibration_ev
            );
        }
    }
}

fn stream(
    engine: &mut Engine,
    input: &Path,
    sink: &mut dyn Write,
    emit_warmup: bool,
) -> Result<Summary> {
    let live = is_stdio(input);
    let rows = MeterRows::new(open_input(input)?)?;
    let mut filler = GapFiller::default();
    let mut items = Vec::new();
    let mut s = Summary::default();
    for row in rows {
        items.clear();
        filler.feed(row?, &mut items)?;
        for item in &items {
            let (reading, label) = match *item {
                Ingested::Break => {
                    log::warn!("gap too long to fill; restarting memory warmup");
                    engine.reset_stream();
                    continue;
                }
                Ingested::Sample { reading, label } => (reading, label),
            };
            s.readings += 1;
            let start = Instant::now();
            let result = engine.detect_step(reading);
            s.latencies_us.push(start.elapsed().as_secs_f64() * 1e6);
            let ev = match result {
                Ok(ev) => ev,
                Err(evdetect::Error::OutOfOrder { .. }) => {
                    s.out_of_order += 1;
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            if ev.phase == Phase::Calibrating && label == Some(1) {
                s.calibration_ev += 1;
            }
            s.anomalies += ev.label as usize;
            if ev.phase != Phase::Warmup || emit_warmup {
                writeln!(sink, "{}", ev.to_json())?;
                s.events += 1;
                if live {
                    sink.flush()?;
                }
            }
        }
    }
    sink.flush()?;
    Ok(s)
}

pub fn run(a: &DetectArgs, f: &ConfigFile) -> Result<()> {
    for input in &a.input {
        require_file(input)?;
    }
    let many = a.input.len() > 1;
    if many && (a.output_dir.is_none() || a.output.is_some()) {
        return Err(UsageError("several inputs need --output-dir (and no --output)".into()).into());
    }
    if many && a.input.iter().any(|p| is_stdio(p)) {
        return Err(UsageError("stdin cannot be combined with other inputs".into()).into());
    }
    if many && a.save_state.is_some() {
        return Err(UsageError("--save-state takes a single input".into()).into());
    }

    let base: Engine = if let Some(path) = &a.resume {
        require_file(path)?;
        if a.q.is_some() || a.calibration_len.is_some() {
            log::warn!("threshold settings come from the resumed state; --q/--calibration-len ignored");
        }
        let mut e = Engine::resume(EngineCheckpoint::load(path)?)?;
        e.set_cache_enabled(!a.no_cache)?;
        e.set_report_window(a.window);
        e
    } else {
        let path = a.model.as_ref().ok_or_else(|| UsageError("--model is required".into()))?;
        require_file(path)?;
        let model = ModelCheckpoint::load(path)?;
        let config = EngineConfig {
            calibration_len: f.pick(a.calibration_len, "calibration_len", 1440)?,
            spot: spot_config(f, a.q, a.init_level, a.refit_every, a.max_peaks)?,
            cache_enabled: !a.no_cache,
            report_window: a.window,
        };
        Engine::new(&model, config)?
    };

    if !many {
        let mut engine = base;
        let input = &a.input[0];
        let mut sink = open_output(a.output.as_deref().unwrap_or(Path::new("-")))?;
        let summary = stream(&mut engine, input, &mut sink, a.emit_warmup)?;
        summary.log(&input.display().to_string());
        if let Some(path) = &a.save_state {
            engine.checkpoint().save(path)?;
        }
        return Ok(());
    }

    let dir = a.output_dir.as_ref().expect("checked above");
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let results: Vec<Result<()>> = a
        .input
        .par_iter()
        .map(|input| {
            let mut engine = base.clone();
            let stem = input.file_stem().map_or_else(|| "input".into(), |s| s.to_string_lossy());
            let out: PathBuf = dir.join(format!("{stem}.events.jsonl"));
            let mut sink = open_output(&out)?;
            let summary = stream(&mut engine, input, &mut sink, a.emit_warmup)
                .with_context(|| format!("processing {}", input.display()))?;
            summary.log(&input.display().to_string());
            Ok(())
        })
        .collect();
    results.into_iter().collect()
}
