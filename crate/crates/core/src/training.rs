//! Self-supervised reconstruction training on non-EV windows.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::WindowBatch;
use crate::error::{Error, Result};
use crate::model::{forward, Dims, ModelParams, PosTable};
use crate::nn::{adam_step, AdamState, Eval, Hyper, Tape, Tensor2, Var};

/// Epochs without a new best loss before stopping.
pub const PATIENCE: usize = 5;
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss of every completed epoch.
    pub epoch_losses: Vec<f64>,
    /// Loss over all windows before the first update.
    pub initial_loss: f64,
    /// Loss over all windows after the last update.
    pub final_loss: f64,
    pub seed: u64,
    pub hyper: Hyper,
    pub windows: usize,
    pub stopped_early: bool,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

/// Mean squared reconstruction error over every window and local position.
pub fn reconstruction_loss(batch: &WindowBatch, p: &ModelParams) -> Result<f64> {
    check_batch(batch, &p.dims)?;
    let pos = PosTable::new(p.dims.lm, p.dims.gm, p.dims.c)?;
    let sum: f64 = (0..batch.len())
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let lm = batch.lm_windows.row(i);
            let out = forward(&mut Eval, p, &pos, lm, batch.gm_windows.row(i))?;
            Ok(out.data().iter().zip(lm).map(|(a, b)| (a - b).powi(2)).sum())
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .sum();
    let loss = sum / (batch.len() * p.dims.lm) as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("reconstruction loss"));
    }
    Ok(loss)
}

fn check_batch(batch: &WindowBatch, dims: &Dims) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Empty("training windows"));
    }
    if batch.lm_windows.cols() != dims.lm || batch.gm_windows.cols() != dims.gm {
        return Err(Error::Shape {
            op: "training windows",
            detail: format!(
                "windows ({}, {}) for lm={}, gm={}",
                batch.lm_windows.cols(),
                batch.gm_windows.cols(),
                dims.lm,
                dims.gm
            ),
        });
    }
    Ok(())
}

/// Reconstruction MSE of one window recorded on `tape`.
pub(crate) fn window_loss(
    tape: &mut Tape,
    p: &ModelParams<Var>,
    pos: &PosTable,
    lm: &[f64],
    gm: &[f64],
) -> Result<Var> {
    let out = forward(tape, p, pos, lm, gm)?;
    let target = tape.leaf(Tensor2::column(lm));
    tape.mse(out, target)
}

/// Mean loss and gradient over `idx`, summed in index order so the result
/// does not depend on the thread count.
fn batch_gradient(
    p: &ModelParams,
    pos: &PosTable,
    data: &WindowBatch,
    idx: &[usize],
) -> Result<(f64, Vec<Tensor2>)> {
    let per_window: Vec<(f64, Vec<Tensor2>)> = idx
        .par_iter()
        .map(|&i| {
            let mut tape = Tape::new();
            let pv = p.on_tape(&mut tape);
            let loss = window_loss(&mut tape, &pv, pos, data.lm_windows.row(i), data.gm_windows.row(i))?;
            let grads = tape.backward(loss);
            let g = pv.refs().into_iter().map(|&v| grads.wrt(v)).collect();
            Ok((tape.value(loss).get(0, 0), g))
        })
        .collect::<Result<_>>()?;
    let n = idx.len() as f64;
    let mut iter = per_window.into_iter();
    let (mut loss, mut grad) = iter.next().ok_or(Error::Empty("batch"))?;
    for (l, g) in iter {
        loss += l;
        for (acc, gi) in grad.iter_mut().zip(&g) {
            acc.add_assign(gi)?;
        }
    }
    Ok((loss / n, grad.into_iter().map(|g| g.scale(1.0 / n)).collect()))
}

/// Trains a freshly initialized model (seeded by `seed`) with Adam over
/// shuffled mini-batches.
pub fn train(
    windows: &WindowBatch,
    dims: Dims,
    hyper: &Hyper,
    seed: u64,
) -> Result<(ModelParams, TrainReport)> {
    let params = ModelParams::init(dims, seed)?;
    train_from(params, windows, hyper, seed)
}

/// Like [`train`] but starting from given parameters.
pub fn train_from(
    mut params: ModelParams,
    windows: &WindowBatch,
    hyper: &Hyper,
    seed: u64,
) -> Result<(ModelParams, TrainReport)> {
    let start = Instant::now();
    hyper.validate()?;
    let dims = params.dims;
    dims.validate()?;
    check_batch(windows, &dims)?;
    let pos = PosTable::new(dims.lm, dims.gm, dims.c)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_5bu64);

    let initial_loss = reconstruction_loss(windows, &params)?;
    let mut flat = params.flat();
    let mut adam = AdamState::new(&flat);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut epoch_losses = Vec::with_capacity(hyper.epochs);
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut stopped_early = false;
    let mut warnings = Vec::new();

    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for idx in order.chunks(hyper.batch_size) {
            let (loss, grads) = batch_gradient(&params, &pos, windows, idx)?;
            if !loss.is_finite() || loss > DIVERGENCE_LOSS {
                return Err(Error::Diverged { epoch, loss });
            }
            adam_step(&mut flat, &grads, &mut adam, hyper)?;
            params = params.with_tensors(flat.clone())?;
            total += loss;
            batches += 1;
        }
        let mean = total / batches as f64;
        log::debug!("epoch {epoch}: loss {mean:.6e}");
        epoch_losses.push(mean);
        if mean < best {
            best = mean;
            stale = 0;
        } else {
            stale += 1;
            if stale >= PATIENCE {
                log::info!("early stop after epoch {epoch}: no improvement for {PATIENCE} epochs");
                stopped_early = true;
                break;
            }
        }
    }

    let final_loss = reconstruction_loss(windows, &params)?;
    if final_loss > initial_loss {
        let msg = format!("final loss {final_loss:.6e} exceeds initial loss {initial_loss:.6e}");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let report = TrainReport {
        epoch_losses,
        initial_loss,
        final_loss,
        seed,
        hyper: hyper.clone(),
        windows: windows.len(),
        stopped_early,
        warnings,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok((params, report))
}
