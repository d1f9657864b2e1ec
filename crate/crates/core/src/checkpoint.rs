//! Versioned JSON checkpoints.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::SeriesStats;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::training::TrainReport;

pub const MODEL_FORMAT: &str = "evdetect-model";
pub const FORMAT_VERSION: u32 = 1;

/// Trained parameters with the normalization they were trained under.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format: String,
    pub version: u32,
    pub params: ModelParams,
    pub stats: SeriesStats,
    #[serde(default)]
    pub report: Option<TrainReport>,
}

impl ModelCheckpoint {
    pub fn new(params: ModelParams, stats: SeriesStats, report: Option<TrainReport>) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: FORMAT_VERSION,
            params,
            stats,
            report,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_header(&self.format, self.version, MODEL_FORMAT)?;
        let dims = self.params.dims;
        dims.validate()?;
        // every tensor must have the shape its dims imply
        ModelParams::init(dims, 0)?
            .with_tensors(self.params.flat())
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        if !self.params.is_finite() {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        if !(self.stats.std > 0.0) || !self.stats.mean.is_finite() {
            return Err(Error::Checkpoint("invalid normalization statistics".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck: Self = load_json(path)?;
        ck.validate()?;
        Ok(ck)
    }
}

pub(crate) fn check_header(format: &str, version: u32, expected: &str) -> Result<()> {
    if format != expected {
        return Err(Error::Checkpoint(format!(
            "expected a {expected} checkpoint, found {format:?}"
        )));
    }
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (this build reads {FORMAT_VERSION})"
        )));
    }
    Ok(())
}

pub fn write_json<T: Serialize>(sink: impl Write, value: &T) -> Result<()> {
    let mut w = BufWriter::new(sink);
    serde_json::to_writer(&mut w, value).map_err(|e| Error::Checkpoint(e.to_string()))?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(source: impl Read) -> Result<T> {
    serde_json::from_reader(BufReader::new(source)).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    write_json(File::create(path)?, value)
}

pub fn load_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    read_json(File::open(path)?)
}
