use anyhow::Result;
use evdetect::data::{synth_household, write_meter_csv, BaseProfile, SynthConfig};
use evdetect::format::parse_timestamp;

use super::open_output;
use crate::config::ConfigFile;
use crate::{SynthArgs, UsageError};

pub fn run(a: &SynthArgs, f: &ConfigFile, seed: u64) -> Result<()> {
    let d = SynthConfig::default();
    let start = match &a.start {
        Some(s) => parse_timestamp(s).map_err(|e| UsageError(format!("--start: {e}")))?,
        None => d.start,
    };
    let cfg = SynthConfig {
        days: f.pick(a.days, "days", d.days)?,
        base: BaseProfile {
            noise_std: f.pick(a.noise_std, "noise_std", d.base.noise_std)?,
            ..BaseProfile::default()
        },
        ev_power: f.pick(a.ev_power, "ev_power", d.ev_power)?,
        session_rate: f.pick(a.session_rate, "session_rate", d.session_rate)?,
        duration_min: f.pick(a.duration_min, "duration_min", d.duration_min)?,
        duration_max: f.pick(a.duration_max, "duration_max", d.duration_max)?,
        ev_free_prefix_minutes: f.pick(a.ev_free_minutes, "ev_free_minutes", d.ev_free_prefix_minutes)?,
        start,
        seed,
    };
    let house = synth_household(&cfg)?;
    write_meter_csv(open_output(&a.out)?, &house.readings, Some(&house.labels))?;
    let charging = house.labels.iter().filter(|&&l| l == 1).count();
    log::info!(
        "{} readings, {charging} minutes charging ({:.1}%)",
        house.readings.len(),
        100.0 * charging as f64 / house.readings.len() as f64
    );
    Ok(())
}
