//! Dynamic anomaly threshold from extreme value theory.
//!
//! Calibration takes an initial threshold `h` at a high empirical quantile
//! of anomaly-free scores, fits a generalized Pareto distribution to the
//! excesses over `h`, and derives the risk-`q` threshold `z_q`. While
//! streaming, scores above `z_q` are anomalies and never touch the fit;
//! scores between `h` and `z_q` are peaks that extend the excess set and
//! trigger a refit.

mod gpd;
mod grimshaw;
mod stream;

pub use gpd::{gpd_log_likelihood, gpd_quantile, GpdFit, GAMMA_ZERO};
pub use grimshaw::grimshaw_fit;
pub use stream::{
    pot_calibrate, spot_step, CalibrationWarning, SpotClass, SpotConfig, SpotState,
    MIN_CALIBRATION,
};
