use std::io::Write;

use anyhow::{Context, Result};
use evdetect::format::real9;
use evdetect::spot::{pot_calibrate, SpotClass};

use super::{open_input, open_output, require_file, spot_config};
use crate::config::ConfigFile;
use crate::{SpotArgs, UsageError};

fn read_scores(a: &SpotArgs) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(open_input(&a.scores)?);
    let col = reader
        .headers()?
        .iter()
        .position(|h| h == "score")
        .ok_or_else(|| UsageError(format!("{} has no score column", a.scores.display())))?;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let v: f64 = rec
            .get(col)
            .unwrap_or("")
            .parse()
            .with_context(|| format!("line {line}: score is not a number"))?;
        out.push(v);
    }
    Ok(out)
}

pub fn run(a: &SpotArgs, f: &ConfigFile) -> Result<()> {
    require_file(&a.scores)?;
    let cfg = spot_config(f, a.q, a.init_level, a.refit_every, a.max_peaks)?;
    let calibration_len: usize = f.pick(a.calibration_len, "calibration_len", 1440)?;
    let scores = read_scores(a)?;
    if scores.len() < calibration_len {
        return Err(UsageError(format!(
            "{} scores, fewer than calibration_len {calibration_len}",
            scores.len()
        ))
        .into());
    }
    let (calib, rest) = scores.split_at(calibration_len);
    let mut state = pot_calibrate(calib, &cfg)?;
    log::info!(
        "calibrated on {calibration_len} scores: h={} z_q={}",
        real9(state.h()),
        real9(state.z_q())
    );
    let mut out = open_output(&a.out)?;
    let mut anomalies = 0;
    for (i, &x) in rest.iter().enumerate() {
        let z_q = state.z_q();
        let class = state.step(x);
        anomalies += (class == SpotClass::Anomaly) as usize;
        let name = match class {
            SpotClass::Normal => "normal",
            SpotClass::Peak => "peak",
            SpotClass::Anomaly => "anomaly",
        };
        writeln!(
            out,
            "{{\"i\":{},\"score\":{},\"h\":{},\"z_q\":{},\"k\":{},\"class\":\"{name}\"}}",
            calibration_len + i,
            real9(x),
            real9(state.h()),
            real9(z_q),
            state.k()
        )?;
    }
    out.flush()?;
    log::info!("{anomalies} anomalies in {} scores", rest.len());
    Ok(())
}
