//! Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::nn::tensor::Tensor2;

/// Optimizer and schedule settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            learning_rate: 7e-5,
            weight_decay: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 64,
            epochs: 50,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("beta1 and beta2 must lie in [0, 1)".into()));
        }
        if self.weight_decay < 0.0 || self.epsilon < 0.0 {
            return Err(Error::Config(
                "weight_decay and epsilon must be nonnegative".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// First/second moment accumulators, one per parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<Tensor2>,
    v: Vec<Tensor2>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor2]) -> Self {
        let zeros = |p: &Tensor2| Tensor2::zeros(p.rows(), p.cols());
        Self {
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One Adam update. A non-finite gradient rejects the whole step and leaves
/// both `params` and `state` untouched.
pub fn adam_step(
    params: &mut [Tensor2],
    grads: &[Tensor2],
    state: &mut AdamState,
    hyper: &Hyper,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(shape_err(
            "adam_step",
            format!(
                "{} params, {} grads, {} accumulators",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(shape_err(
                "adam_step",
                format!("param {:?} vs grad {:?}", p.shape(), g.shape()),
            ));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    let lr = hyper.learning_rate;

    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let iter = p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
        for ((pv, &gv), (mv, vv)) in iter {
            *mv = hyper.beta1 * *mv + (1.0 - hyper.beta1) * gv;
            *vv = hyper.beta2 * *vv + (1.0 - hyper.beta2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= lr * hyper.weight_decay * *pv;
            let denom = v_hat.sqrt() + hyper.epsilon;
            if denom > 0.0 {
                *pv -= lr * m_hat / denom;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn degenerate_betas_give_sign_step() {
        let mut params = vec![Tensor2::filled(1, 1, 1.0)];
        let grads = vec![Tensor2::filled(1, 1, 1.0)];
        let mut state = AdamState::new(&params);
        let hyper = Hyper {
            learning_rate: 0.1,
            weight_decay: 0.0,
            beta1: 0.0,
            beta2: 0.0,
            epsilon: 0.0,
            ..Hyper::default()
        };
        adam_step(&mut params, &grads, &mut state, &hyper).unwrap();
        assert_abs_diff_eq!(params[0].get(0, 0), 0.9, epsilon = 1e-15);
        assert_eq!(state.step(), 1);
    }

    #[test]
    fn defaults() {
        let h = Hyper::default();
        assert_eq!(h.learning_rate, 7e-5);
        assert_eq!(h.weight_decay, 5e-5);
        assert_eq!(h.beta1, 0.9);
        assert_eq!(h.beta2, 0.999);
        assert_eq!(h.epsilon, 1e-8);
        h.validate().unwrap();
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut params = vec![Tensor2::filled(1, 2, 1.0)];
        let before = params.clone();
        let grads = vec![Tensor2::from_vec(1, 2, vec![0.5, f64::NAN]).unwrap()];
        let mut state = AdamState::new(&params);
        let err = adam_step(&mut params, &grads, &mut state, &Hyper::default());
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert_eq!(params, before);
        assert_eq!(state.step(), 0);
    }

    #[test]
    fn invalid_hyper() {
        let bad = Hyper {
            beta1: 1.0,
            ..Hyper::default()
        };
        assert!(bad.validate().is_err());
        let bad = Hyper {
            learning_rate: 0.0,
            ..Hyper::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn zero_gradient_without_decay_is_identity(
            vals in prop::collection::vec(-100.0f64..100.0, 1..12),
            steps in 1usize..5,
        ) {
            let mut params = vec![Tensor2::row_vector(&vals)];
            let before = params.clone();
            let grads = vec![Tensor2::zeros(1, vals.len())];
            let mut state = AdamState::new(&params);
            let hyper = Hyper { weight_decay: 0.0, ..Hyper::default() };
            for _ in 0..steps {
                adam_step(&mut params, &grads, &mut state, &hyper).unwrap();
            }
            prop_assert_eq!(params, before);
            prop_assert_eq!(state.step(), steps as u64);
        }
    }
}
