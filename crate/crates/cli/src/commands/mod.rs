pub mod detect;
pub mod eval;
pub mod spot;
pub mod synth;
pub mod train;

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{Context, Result};
use evdetect::spot::SpotConfig;

use crate::config::ConfigFile;
use crate::UsageError;

pub fn is_stdio(path: &Path) -> bool {
    path.as_os_str() == "-"
}

/// Missing input files are usage errors.
pub fn require_file(path: &Path) -> Result<()> {
    if is_stdio(path) || path.is_file() {
        Ok(())
    } else {
        Err(UsageError(format!("no such file: {}", path.display())).into())
    }
}

pub fn open_input(path: &Path) -> Result<Box<dyn Read + Send>> {
    if is_stdio(path) {
        Ok(Box::new(io::stdin()))
    } else {
        let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        Ok(Box::new(BufReader::new(f)))
    }
}

pub fn open_output(path: &Path) -> Result<Box<dyn Write + Send>> {
    if is_stdio(path) {
        Ok(Box::new(io::stdout()))
    } else {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        Ok(Box::new(BufWriter::new(f)))
    }
}

pub fn spot_config(
    file: &ConfigFile,
    q: Option<f64>,
    init_level: Option<f64>,
    refit_every: Option<usize>,
    max_peaks: Option<usize>,
) -> Result<SpotConfig> {
    let d = SpotConfig::default();
    let cfg = SpotConfig {
        q: file.pick(q, "q", d.q)?,
        init_level: file.pick(init_level, "init_level", d.init_level)?,
        refit_every: file.pick(refit_every, "refit_every", d.refit_every)?,
        max_peaks: file.pick_opt(max_peaks, "max_peaks")?,
    };
    cfg.validate()?;
    Ok(cfg)
}
