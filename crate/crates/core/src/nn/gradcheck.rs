//! Finite-difference verification of tape gradients.

use crate::error::{Error, Result};
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::Tensor2;

/// Denominator floor for the relative error so that entries whose true
/// gradient is ~0 are judged on absolute error instead.
const REL_FLOOR: f64 = 1e-6;

/// Compares the reverse-mode gradient of the scalar function `f` at `params`
/// against central differences and returns the worst relative error,
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`.
pub fn grad_check<F>(f: F, params: &[Tensor2], delta: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(delta > 0.0) {
        return Err(Error::Config("grad_check delta must be > 0".into()));
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out);

    let eval = |ps: &[Tensor2]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = ps.iter().map(|p| t.leaf(p.clone())).collect();
        let y = f(&mut t, &vs)?;
        Ok(t.value(y).get(0, 0))
    };

    let mut work = params.to_vec();
    let mut worst = 0.0f64;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v);
        for j in 0..work[i].data().len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + delta;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - delta;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;

            let numeric = (up - down) / (2.0 * delta);
            let a = analytic.data()[j];
            let denom = a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
