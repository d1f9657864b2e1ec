//! The memory-based transformer.
//!
//! Readings are embedded (`1 -> C`) and tagged with the sinusoidal encoding
//! of their age. The global window is compressed by two stacked decoder
//! units (`gm -> e0 -> e1` tokens, queried by learned tokens); a third unit
//! lets the local window attend to the compressed tokens and a linear head
//! maps each local token back to a reading.

mod attention;
mod mtr;
mod params;
mod posenc;

pub use attention::attention;
pub use mtr::{forward, trd_forward, Mtr, LN_EPS};
pub(crate) use mtr::{trd_finish, trd_forward_with, trd_self_stage};
pub use params::{AttnParams, Dims, FfnParams, ModelParams, NormParams, TrdParams};
pub use posenc::{positional_encoding, PosTable};
