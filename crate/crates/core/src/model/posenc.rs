//! Sinusoidal encoding of a reading's age `τ = T - t` relative to the
//! current time.

use crate::error::{Error, Result};
use crate::nn::Tensor2;

/// `s[2i] = sin(τ / 10000^(2i/C))`, `s[2i+1] = cos(τ / 10000^(2i/C))`.
pub fn positional_encoding(tau: usize, c: usize) -> Result<Vec<f64>> {
    if c == 0 || c % 2 != 0 {
        return Err(Error::Config(format!(
            "positional encoding needs an even width, got {c}"
        )));
    }
    let mut out = vec![0.0; c];
    for i in 0..c / 2 {
        let angle = tau as f64 / 10000f64.powf(2.0 * i as f64 / c as f64);
        out[2 * i] = angle.sin();
        out[2 * i + 1] = angle.cos();
    }
    Ok(out)
}

/// Encodings for every age in `[0, lm + gm)`, laid out to match the
/// oldest-to-newest order of the memory windows.
#[derive(Clone, Debug, PartialEq)]
pub struct PosTable {
    lm: usize,
    gm: usize,
    /// Row `τ` holds the encoding of age `τ`.
    by_age: Tensor2,
    global_block: Tensor2,
    local_block: Tensor2,
}

impl PosTable {
    pub fn new(lm: usize, gm: usize, c: usize) -> Result<Self> {
        let rows = (0..lm + gm)
            .map(|tau| positional_encoding(tau, c))
            .collect::<Result<Vec<_>>>()?;
        let by_age = Tensor2::from_rows(&rows)?;
        // Window row j (oldest first) of the global memory has age lm+gm-1-j,
        // of the local memory lm-1-j.
        let global: Vec<Vec<f64>> = (0..gm).map(|j| rows[lm + gm - 1 - j].clone()).collect();
        let local: Vec<Vec<f64>> = (0..lm).map(|j| rows[lm - 1 - j].clone()).collect();
        Ok(Self {
            lm,
            gm,
            by_age,
            global_block: Tensor2::from_rows(&global)?,
            local_block: Tensor2::from_rows(&local)?,
        })
    }

    pub fn age(&self, tau: usize) -> &[f64] {
        self.by_age.row(tau)
    }

    pub fn global_block(&self) -> &Tensor2 {
        &self.global_block
    }

    pub fn local_block(&self) -> &Tensor2 {
        &self.local_block
    }

    pub fn lm(&self) -> usize {
        self.lm
    }

    pub fn gm(&self) -> usize {
        self.gm
    }
}
