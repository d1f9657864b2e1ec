//! Meter CSV ingestion, normalization, training windows and the synthetic
//! household generator.

mod csv;
mod stats;
mod synth;
mod windows;

pub use self::csv::{
    read_meter_csv, write_meter_csv, GapFiller, Ingested, MeterRows, MeterSeries, Row,
    MAX_FILL_MINUTES,
};
pub use stats::{denormalize, fit_stats, normalize, SeriesStats};
pub use synth::{synth_household, BaseProfile, Household, SynthConfig, DEFAULT_START};
pub use windows::{
    non_ev_runs, sliding_windows, windows_over_runs, WindowBatch, DEFAULT_NON_EV_CAP,
};
