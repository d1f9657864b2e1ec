//! Per-reading online detection: memory update, reconstruction, anomaly
//! score and streaming threshold.
//!
//! An engine moves through three phases. While the memories fill it only
//! buffers (`warmup`). The next `calibration_len` scores are assumed free of
//! charging and initialize the threshold (`calibrating`). From then on every
//! score is classified against the live threshold (`detecting`).

mod cache;
mod event;

use serde::{Deserialize, Serialize};

pub use cache::{build_attention_cache, AttentionCache, UpdateOps};
pub use event::{DetectionEvent, Phase};

use crate::checkpoint::{check_header, load_json, save_json, ModelCheckpoint, FORMAT_VERSION};
use crate::data::SeriesStats;
use crate::error::{shape_err, Error, Result};
use crate::memory::{Reading, StreamState};
use crate::model::Mtr;
use crate::spot::{pot_calibrate, SpotClass, SpotConfig, SpotState, MIN_CALIBRATION};

pub const ENGINE_FORMAT: &str = "evdetect-engine";

/// Mean squared error between a local window and its reconstruction.
pub fn anomaly_score(lm: &[f64], lm_hat: &[f64]) -> Result<f64> {
    if lm.len() != lm_hat.len() {
        return Err(shape_err(
            "anomaly_score",
            format!("{} readings vs {} reconstructed", lm.len(), lm_hat.len()),
        ));
    }
    if lm.is_empty() {
        return Err(Error::Empty("anomaly_score"));
    }
    let sum: f64 = lm.iter().zip(lm_hat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(sum / lm.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Post-warmup readings whose scores calibrate the threshold.
    pub calibration_len: usize,
    pub spot: SpotConfig,
    /// Use the incremental first-stage attention.
    pub cache_enabled: bool,
    /// Attach the raw local window to every event.
    pub report_window: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            calibration_len: 1440,
            spot: SpotConfig::default(),
            cache_enabled: true,
            report_window: false,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.calibration_len < MIN_CALIBRATION {
            return Err(Error::Config(format!(
                "calibration_len must be >= {MIN_CALIBRATION}, got {}",
                self.calibration_len
            )));
        }
        self.spot.validate()
    }
}

/// Everything besides the model that a resumed engine needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineState {
    pub config: EngineConfig,
    pub stream: StreamState,
    pub calibration: Vec<f64>,
    pub spot: Option<SpotState>,
    pub steps: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineCheckpoint {
    pub format: String,
    pub version: u32,
    pub model: ModelCheckpoint,
    pub state: EngineState,
}

impl EngineCheckpoint {
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        save_json(path, self)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let ck: Self = load_json(path)?;
        check_header(&ck.format, ck.version, ENGINE_FORMAT)?;
        ck.model.validate()?;
        Ok(ck)
    }
}

#[derive(Clone, Debug)]
pub struct Engine {
    model: Mtr,
    stats: SeriesStats,
    cache: Option<AttentionCache>,
    state: EngineState,
}

impl Engine {
    pub fn new(model: &ModelCheckpoint, config: EngineConfig) -> Result<Self> {
        model.validate()?;
        config.validate()?;
        let d = model.params.dims;
        let state = EngineState {
            stream: StreamState::new(d.lm, d.gm)?,
            config,
            calibration: Vec::new(),
            spot: None,
            steps: 0,
        };
        Self::assemble(model.clone(), state)
    }

    /// Continues a stream from a checkpoint; the attention ring is rebuilt
    /// from the buffered global memory.
    pub fn resume(ck: EngineCheckpoint) -> Result<Self> {
        check_header(&ck.format, ck.version, ENGINE_FORMAT)?;
        ck.model.validate()?;
        ck.state.config.validate()?;
        let d = ck.model.params.dims;
        if ck.state.stream.lm() != d.lm || ck.state.stream.gm() != d.gm {
            return Err(Error::Checkpoint(
                "stream memory sizes do not match the model".into(),
            ));
        }
        Self::assemble(ck.model, ck.state)
    }

    fn assemble(model: ModelCheckpoint, state: EngineState) -> Result<Self> {
        let mut engine = Self {
            model: Mtr::new(model.params)?,
            stats: model.stats,
            cache: None,
            state,
        };
        engine.set_cache_enabled(engine.state.config.cache_enabled)?;
        Ok(engine)
    }

    pub fn checkpoint(&self) -> EngineCheckpoint {
        EngineCheckpoint {
            format: ENGINE_FORMAT.into(),
            version: FORMAT_VERSION,
            model: ModelCheckpoint::new(self.model.params().clone(), self.stats, None),
            state: self.state.clone(),
        }
    }

    pub fn set_cache_enabled(&mut self, enabled: bool) -> Result<()> {
        self.state.config.cache_enabled = enabled;
        self.cache = None;
        if enabled {
            let mut cache = build_attention_cache(self.model.params())?;
            for r in self.state.stream.global() {
                cache.incremental_update(&self.content_feature(r.power))?;
            }
            self.cache = Some(cache);
        }
        Ok(())
    }

    pub fn set_report_window(&mut self, on: bool) {
        self.state.config.report_window = on;
    }

    pub fn config(&self) -> &EngineConfig {
        &self.state.config
    }

    pub fn stats(&self) -> &SeriesStats {
        &self.stats
    }

    pub fn model(&self) -> &Mtr {
        &self.model
    }

    pub fn spot(&self) -> Option<&SpotState> {
        self.state.spot.as_ref()
    }

    pub fn steps(&self) -> u64 {
        self.state.steps
    }

    pub fn cache(&self) -> Option<&AttentionCache> {
        self.cache.as_ref()
    }

    /// Phase the next complete snapshot would be processed in.
    pub fn phase(&self) -> Phase {
        if !self.state.stream.is_complete() {
            Phase::Warmup
        } else if self.state.spot.is_none() {
            Phase::Calibrating
        } else {
            Phase::Detecting
        }
    }

    /// Empties the memories, e.g. after an unfillable gap. Calibration
    /// progress and the threshold are kept.
    pub fn reset_stream(&mut self) {
        self.state.stream.clear();
        if let Some(c) = self.cache.as_mut() {
            c.clear_ring();
        }
    }

    /// Embedding of a raw reading without its positional term.
    fn content_feature(&self, power: f64) -> Vec<f64> {
        let p = self.model.params();
        let x = self.stats.normalize_one(power);
        p.embed_w
            .row(0)
            .iter()
            .zip(p.embed_b.row(0))
            .map(|(w, b)| x * w + b)
            .collect()
    }

    fn normalized(&self, readings: &std::collections::VecDeque<Reading>) -> Vec<f64> {
        readings.iter().map(|r| self.stats.normalize_one(r.power)).collect()
    }

    fn score(&self) -> Result<f64> {
        let lm = self.normalized(self.state.stream.local());
        let recon = match &self.cache {
            Some(cache) => {
                let encoded = cache.encode(self.model.params())?;
                let features = self.model.embed_local(&lm)?;
                self.model.decode_local(&features, &encoded)?
            }
            None => {
                let gm = self.normalized(self.state.stream.global());
                self.model.reconstruct(&lm, &gm)?
            }
        };
        anomaly_score(&lm, &recon)
    }

    /// Processes one reading. An out-of-order or non-finite reading is
    /// rejected with an error and leaves the engine unchanged.
    pub fn detect_step(&mut self, r: Reading) -> Result<DetectionEvent> {
        let outcome = self.state.stream.push_reading(r)?;
        self.state.steps += 1;
        if let (true, Some(spilled)) = (self.cache.is_some(), outcome.spilled) {
            let f = self.content_feature(spilled.power);
            if let Some(cache) = self.cache.as_mut() {
                cache.incremental_update(&f)?;
            }
        }

        let lm_kw = self
            .state
            .config
            .report_window
            .then(|| self.state.stream.local().iter().map(|x| x.power).collect());
        let mut event = DetectionEvent {
            t: r.t,
            score: None,
            threshold: None,
            label: 0,
            phase: Phase::Warmup,
            lm_kw,
        };
        if !self.state.stream.is_complete() {
            return Ok(event);
        }
        let score = self.score()?;
        event.score = Some(score);
        match self.state.spot.as_mut() {
            None => {
                event.phase = Phase::Calibrating;
                self.state.calibration.push(score);
                if self.state.calibration.len() >= self.state.config.calibration_len {
                    let spot = pot_calibrate(&self.state.calibration, &self.state.config.spot)?;
                    log::info!(
                        "threshold calibrated: h={:.6e}, z_q={:.6e}, {} peaks",
                        spot.h(),
                        spot.z_q(),
                        spot.n_peaks()
                    );
                    self.state.spot = Some(spot);
                    self.state.calibration.clear();
                }
            }
            Some(spot) => {
                event.phase = Phase::Detecting;
                event.threshold = Some(spot.z_q());
                if spot.step(score) == SpotClass::Anomaly {
                    event.label = 1;
                }
            }
        }
        Ok(event)
    }
}
