use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this magnitude the shape is treated as zero and the exponential
/// limit of each formula is used.
pub const GAMMA_ZERO: f64 = 1e-8;

/// Fitted generalized Pareto tail.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpdFit {
    /// Shape.
    pub gamma_hat: f64,
    /// Scale, always positive.
    pub sigma_hat: f64,
    /// Number of excesses the fit describes.
    pub n_excesses: usize,
}

/// Log-likelihood of excesses `y` under GPD(`gamma`, `sigma`):
/// `-N log σ - (1 + 1/γ) Σ log(1 + γ y / σ)`, or `-N log σ - Σ y / σ` when
/// `|γ| < 1e-8`.
pub fn gpd_log_likelihood(gamma: f64, sigma: f64, y: &[f64]) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() || !gamma.is_finite() {
        return Err(Error::Domain(format!(
            "GPD parameters out of range (gamma={gamma}, sigma={sigma})"
        )));
    }
    if y.is_empty() {
        return Err(Error::Empty("gpd_log_likelihood"));
    }
    let n = y.len() as f64;
    if gamma.abs() < GAMMA_ZERO {
        let mut sum = 0.0;
        for &v in y {
            if !(v > 0.0) {
                return Err(Error::Domain(format!("excess {v} is not positive")));
            }
            sum += v;
        }
        return Ok(-n * sigma.ln() - sum / sigma);
    }
    let ratio = gamma / sigma;
    let mut sum = 0.0;
    for &v in y {
        if !(v > 0.0) {
            return Err(Error::Domain(format!("excess {v} is not positive")));
        }
        let arg = ratio * v;
        if !(arg > -1.0) {
            return Err(Error::Domain(format!(
                "1 + (gamma/sigma)*y <= 0 for y={v} (gamma={gamma}, sigma={sigma})"
            )));
        }
        sum += arg.ln_1p();
    }
    Ok(-n * sigma.ln() - (1.0 + 1.0 / gamma) * sum)
}

/// Tail quantile `z_q = h + (σ/γ)((q n / N_h)^(-γ) - 1)` (or
/// `h + σ log(N_h / (q n))` for `γ ≈ 0`). Requires `0 < q <= N_h / n`.
pub fn gpd_quantile(h: f64, fit: &GpdFit, q: f64, n: u64) -> Result<f64> {
    if fit.n_excesses == 0 || n == 0 {
        return Err(Error::Domain("quantile needs at least one excess".into()));
    }
    if n < fit.n_excesses as u64 {
        return Err(Error::Domain(format!(
            "observation count {n} below excess count {}",
            fit.n_excesses
        )));
    }
    if !(q > 0.0) {
        return Err(Error::Domain(format!("risk q={q} must be positive")));
    }
    let r = q * n as f64 / fit.n_excesses as f64;
    if r > 1.0 + 1e-12 {
        return Err(Error::Domain(format!(
            "risk q={q} exceeds the peak rate {}/{n}",
            fit.n_excesses
        )));
    }
    if fit.gamma_hat.abs() < GAMMA_ZERO {
        Ok(h - fit.sigma_hat * r.ln())
    } else {
        Ok(h + fit.sigma_hat / fit.gamma_hat * (r.powf(-fit.gamma_hat) - 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn likelihood_examples() {
        assert_abs_diff_eq!(gpd_log_likelihood(0.0, 1.0, &[1.0]).unwrap(), -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(gpd_log_likelihood(1e-9, 1.0, &[1.0]).unwrap(), -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            gpd_log_likelihood(1.0, 1.0, &[1.0]).unwrap(),
            -2.0 * 2f64.ln(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(gpd_log_likelihood(1.0, 1.0, &[1.0]).unwrap(), -1.38629, epsilon = 1e-5);
    }

    #[test]
    fn likelihood_domain_errors() {
        assert!(gpd_log_likelihood(0.1, 0.0, &[1.0]).is_err());
        assert!(gpd_log_likelihood(0.1, -1.0, &[1.0]).is_err());
        assert!(gpd_log_likelihood(0.1, 1.0, &[0.0]).is_err());
        assert!(gpd_log_likelihood(0.1, 1.0, &[]).is_err());
        // support ends at y = sigma / |gamma| = 2
        assert!(gpd_log_likelihood(-0.5, 1.0, &[1.0, 2.5]).is_err());
        assert!(gpd_log_likelihood(-0.5, 1.0, &[1.0, 1.9]).unwrap().is_finite());
    }

    #[test]
    fn quantile_examples() {
        let fit = GpdFit {
            gamma_hat: 0.5,
            sigma_hat: 2.0,
            n_excesses: 200,
        };
        assert_abs_diff_eq!(gpd_quantile(10.0, &fit, 0.001, 10_000).unwrap(), 23.8885, epsilon = 1e-3);
        let exp = GpdFit { gamma_hat: 0.0, ..fit };
        assert_abs_diff_eq!(gpd_quantile(10.0, &exp, 0.001, 10_000).unwrap(), 15.9915, epsilon = 1e-3);
        // q = N_h / n puts the quantile exactly at h
        assert_abs_diff_eq!(gpd_quantile(10.0, &fit, 0.02, 10_000).unwrap(), 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(gpd_quantile(10.0, &exp, 0.02, 10_000).unwrap(), 10.0, epsilon = 1e-12);
    }

    #[test]
    fn quantile_range_errors() {
        let fit = GpdFit {
            gamma_hat: 0.2,
            sigma_hat: 1.0,
            n_excesses: 100,
        };
        assert!(gpd_quantile(0.0, &fit, 0.0, 1000).is_err());
        assert!(gpd_quantile(0.0, &fit, 0.2, 1000).is_err());
        assert!(gpd_quantile(0.0, &fit, 0.01, 50).is_err());
        assert!(gpd_quantile(0.0, &GpdFit { n_excesses: 0, ..fit }, 0.01, 50).is_err());
    }

    proptest! {
        #[test]
        fn quantile_monotone(
            gamma in -0.9f64..1.5,
            sigma in 0.1f64..5.0,
            q1 in 1e-6f64..0.009,
            dq in 1e-7f64..0.001,
            ds in 0.01f64..2.0,
        ) {
            let fit = GpdFit { gamma_hat: gamma, sigma_hat: sigma, n_excesses: 100 };
            let n = 10_000;
            let q2 = q1 + dq;
            let z1 = gpd_quantile(1.0, &fit, q1, n).unwrap();
            let z2 = gpd_quantile(1.0, &fit, q2, n).unwrap();
            prop_assert!(z1 > z2, "decreasing in q: {} vs {}", z1, z2);
            let wider = GpdFit { sigma_hat: sigma + ds, ..fit };
            prop_assert!(gpd_quantile(1.0, &wider, q1, n).unwrap() > z1);
            prop_assert!(z2 > 1.0);
        }
    }
}
