use anyhow::Result;
use evdetect::checkpoint::ModelCheckpoint;
use evdetect::data::{
    fit_stats, non_ev_runs, normalize, read_meter_csv, windows_over_runs, DEFAULT_NON_EV_CAP,
};
use evdetect::model::Dims;
use evdetect::nn::Hyper;

use super::{open_input, require_file};
use crate::config::ConfigFile;
use crate::{TrainArgs, UsageError};

pub fn run(a: &TrainArgs, f: &ConfigFile, seed: u64) -> Result<()> {
    require_file(&a.data)?;
    let d = Dims::default();
    let dims = Dims {
        c: f.pick(a.c, "c", d.c)?,
        heads: f.pick(a.heads, "heads", d.heads)?,
        hidden: f.pick(a.hidden, "hidden", d.hidden)?,
        lm: f.pick(a.lm, "lm", d.lm)?,
        gm: f.pick(a.gm, "gm", d.gm)?,
        e0: f.pick(a.e0, "e0", d.e0)?,
        e1: f.pick(a.e1, "e1", d.e1)?,
    };
    dims.validate()?;
    let h = Hyper::default();
    let hyper = Hyper {
        learning_rate: f.pick(a.lr, "lr", h.learning_rate)?,
        weight_decay: f.pick(a.weight_decay, "weight_decay", h.weight_decay)?,
        beta1: f.pick(a.beta1, "beta1", h.beta1)?,
        beta2: f.pick(a.beta2, "beta2", h.beta2)?,
        epsilon: h.epsilon,
        batch_size: f.pick(a.batch_size, "batch_size", h.batch_size)?,
        epochs: f.pick(a.epochs, "epochs", h.epochs)?,
    };
    hyper.validate()?;
    let stride: usize = f.pick(a.stride, "stride", 1)?;
    if stride == 0 {
        return Err(UsageError("--stride must be >= 1".into()).into());
    }
    let cap = if a.no_cap {
        None
    } else {
        Some(f.pick(a.non_ev_cap, "non_ev_cap", DEFAULT_NON_EV_CAP)?)
    };

    let series = read_meter_csv(open_input(&a.data)?)?;
    let runs = match &series.labels {
        Some(labels) => non_ev_runs(labels, &series.segments, cap),
        None => {
            log::info!("no label column; treating every reading as non-EV");
            non_ev_runs(&vec![0; series.len()], &series.segments, cap)
        }
    };
    let powers = series.powers();
    let train_kw: Vec<f64> = runs.iter().flat_map(|r| powers[r.clone()].iter().copied()).collect();
    let stats = fit_stats(&train_kw)?;
    let windows = windows_over_runs(&normalize(&powers, &stats), &runs, dims.lm, dims.gm, stride)?;
    log::info!(
        "training on {} windows from {} non-EV readings (mean {:.4} kW, std {:.4} kW)",
        windows.len(),
        train_kw.len(),
        stats.mean,
        stats.std
    );

    let (params, report) = evdetect::training::train(&windows, dims, &hyper, seed)?;
    log::info!(
        "loss {:.6e} -> {:.6e} over {} epochs in {:.1}s",
        report.initial_loss,
        report.final_loss,
        report.epoch_losses.len(),
        report.wall_time_secs
    );
    ModelCheckpoint::new(params, stats, Some(report.clone())).save(&a.out)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}
