//! Maximum-likelihood GPD fit by Grimshaw's reduction.
//!
//! With `θ = γ/σ` the likelihood equations collapse to `u(θ) v(θ) = 1`,
//!
//! ```text
//! u(θ) = mean(1 / (1 + θ y))
//! v(θ) = 1 + mean(log(1 + θ y))
//! ```
//!
//! and every root gives `γ = v(θ) - 1`, `σ = γ / θ`. `θ = 0` is always a
//! (trivial) root corresponding to the exponential fit `σ = mean(y)`. The
//! non-trivial roots are bracketed on a grid over `(-1/max(y), 10/mean(y)]`
//! and polished with Brent's method; the candidate with the highest
//! log-likelihood wins.

use crate::error::{Error, Result};
use crate::spot::gpd::{gpd_log_likelihood, GpdFit};

/// Brackets per side of zero.
const BRACKETS_PER_SIDE: usize = 10;
const ROOT_TOL: f64 = 1e-10;
const MAX_BRENT_ITERS: usize = 200;
/// Relative offset keeping the lower end inside the support `θ > -1/max(y)`.
const LOWER_MARGIN: f64 = 1e-8;
/// Relative distance from zero where the grid starts; `w(θ)` is O(θ²)
/// there and its sign is dominated by rounding.
const ZERO_GAP: f64 = 1e-6;

struct Moments<'a> {
    y: &'a [f64],
}

impl Moments<'_> {
    /// `(u(θ), v(θ))`
    fn uv(&self, theta: f64) -> (f64, f64) {
        let n = self.y.len() as f64;
        let mut u = 0.0;
        let mut v = 0.0;
        for &y in self.y {
            let s = theta * y;
            u += 1.0 / (1.0 + s);
            v += s.ln_1p();
        }
        (u / n, 1.0 + v / n)
    }

    /// `u v - 1`, written as `mean(g(s)) - mean(s/(1+s)) mean(log(1+s))` with
    /// `g(s) = log(1+s) - s/(1+s)` so the O(θ²) value near zero is not
    /// lost to cancellation.
    fn w(&self, theta: f64) -> f64 {
        let n = self.y.len() as f64;
        let (mut g, mut a, mut b) = (0.0, 0.0, 0.0);
        for &y in self.y {
            let s = theta * y;
            let frac = s / (1.0 + s);
            let log = s.ln_1p();
            g += if s.abs() < SERIES_CUTOFF { log_gap_series(s) } else { log - frac };
            a += frac;
            b += log;
        }
        g / n - (a / n) * (b / n)
    }
}

const SERIES_CUTOFF: f64 = 1e-2;

/// `log(1+s) - s/(1+s) = sum_{k>=2} (-1)^k (k-1)/k s^k` for small `|s|`.
fn log_gap_series(s: f64) -> f64 {
    let mut term = s;
    let mut sum = 0.0;
    for k in 2..=10 {
        term *= -s;
        sum -= term * (k - 1) as f64 / k as f64;
    }
    sum
}

pub fn grimshaw_fit(y: &[f64]) -> Result<GpdFit> {
    if y.len() < 2 {
        return Err(Error::Domain(format!(
            "Grimshaw fit needs at least 2 excesses, got {}",
            y.len()
        )));
    }
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for &v in y {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Domain(format!("excess {v} is not a positive finite value")));
        }
        ymin = ymin.min(v);
        ymax = ymax.max(v);
        sum += v;
    }
    let mean = sum / y.len() as f64;
    let exponential = GpdFit {
        gamma_hat: 0.0,
        sigma_hat: mean,
        n_excesses: y.len(),
    };
    if ymax - ymin <= 1e-12 * ymax {
        return Ok(exponential);
    }

    let m = Moments { y };
    let lo = -(1.0 - LOWER_MARGIN) / ymax;
    let hi = 10.0 / mean;
    let mut roots = Vec::new();
    for (a, b) in [(lo, -ZERO_GAP / ymax), (ZERO_GAP / ymax, hi)] {
        let step = (b - a) / BRACKETS_PER_SIDE as f64;
        let mut left = a;
        let mut w_left = m.w(left);
        for i in 1..=BRACKETS_PER_SIDE {
            let right = if i == BRACKETS_PER_SIDE { b } else { a + step * i as f64 };
            let w_right = m.w(right);
            if w_left == 0.0 {
                roots.push(left);
            } else if w_left.signum() != w_right.signum() && w_right != 0.0 {
                if let Some(r) = brent(|t| m.w(t), left, right, w_left, w_right) {
                    roots.push(r);
                }
            }
            left = right;
            w_left = w_right;
        }
    }

    let mut best = exponential;
    let mut best_ll = gpd_log_likelihood(0.0, mean, y)?;
    for theta in roots {
        let (_, v) = m.uv(theta);
        let gamma = v - 1.0;
        let sigma = gamma / theta;
        if !(sigma > 0.0) || !sigma.is_finite() {
            continue;
        }
        if let Ok(ll) = gpd_log_likelihood(gamma, sigma, y) {
            if ll > best_ll {
                best_ll = ll;
                best = GpdFit {
                    gamma_hat: gamma,
                    sigma_hat: sigma,
                    n_excesses: y.len(),
                };
            }
        }
    }
    Ok(best)
}

/// Brent's method on a bracket with `f(a)` and `f(b)` of opposite sign.
fn brent(f: impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fb: f64) -> Option<f64> {
    let (mut a, mut b, mut fa, mut fb) = (a, b, fa, fb);
    if fa * fb > 0.0 {
        return None;
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..MAX_BRENT_ITERS {
        if fb * fc > 0.0 {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * ROOT_TOL;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol || fb == 0.0 {
            return Some(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(xm) };
        fb = f(b);
    }
    Some(b)
}
