//! Online EV-charging detection for streaming smart-meter data.

pub mod checkpoint;
pub mod data;
pub mod engine;
pub mod error;
pub mod eval;
pub mod format;
pub mod memory;
pub mod model;
pub mod nn;
pub mod spot;
pub mod training;

pub use error::{Error, Result};
