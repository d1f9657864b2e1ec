use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nn::tensor::Tensor2;

/// Seeded source of initial parameter values.
#[derive(Debug, Clone)]
pub struct ParamRng {
    rng: ChaCha8Rng,
}

impl ParamRng {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Entries uniform in `[-limit, limit]`.
    pub fn uniform(&mut self, rows: usize, cols: usize, limit: f64) -> Tensor2 {
        let data = (0..rows * cols)
            .map(|_| self.rng.gen_range(-limit..=limit))
            .collect();
        Tensor2::from_vec(rows, cols, data).expect("sized by construction")
    }

    /// Glorot-uniform: `±sqrt(6 / (fan_in + fan_out))` for a `fan_in x fan_out` weight.
    pub fn glorot(&mut self, fan_in: usize, fan_out: usize) -> Tensor2 {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.uniform(fan_in, fan_out, limit)
    }
}
