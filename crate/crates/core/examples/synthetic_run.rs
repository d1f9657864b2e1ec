//! Train on an EV-free stretch of a synthetic household, then detect over
//! the following weeks and score against the generator labels.
//!
//! `cargo run --release --example synthetic_run -- [epochs] [stride] [seed]`

use std::time::Instant;

use evdetect::checkpoint::ModelCheckpoint;
use evdetect::data::{fit_stats, normalize, sliding_windows, synth_household, SynthConfig};
use evdetect::engine::{Engine, EngineConfig, Phase};
use evdetect::eval::evaluate;
use evdetect::model::Dims;
use evdetect::nn::Hyper;
use evdetect::training::train;

fn main() -> evdetect::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: usize| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let (epochs, stride, seed) = (arg(0, 50), arg(1, 1), arg(2, 7) as u64);

    let train_days = 14;
    let cfg = SynthConfig {
        days: train_days + 1 + 28,
        ev_free_prefix_minutes: (train_days + 1) * 1440,
        seed,
        ..SynthConfig::default()
    };
    let house = synth_household(&cfg)?;
    let split = train_days * 1440;
    let train_kw: Vec<f64> = house.readings[..split].iter().map(|r| r.power).collect();
    let stats = fit_stats(&train_kw)?;
    let dims = Dims::default();
    let windows = sliding_windows(&normalize(&train_kw, &stats), dims.lm, dims.gm, stride)?;
    let hyper = Hyper { epochs, ..Hyper::default() };

    let t0 = Instant::now();
    let (params, report) = train(&windows, dims, &hyper, seed)?;
    println!(
        "trained on {} windows in {:.1}s: loss {:.4} -> {:.4} ({} epochs)",
        windows.len(),
        t0.elapsed().as_secs_f64(),
        report.initial_loss,
        report.final_loss,
        report.epoch_losses.len()
    );

    let model = ModelCheckpoint::new(params, stats, Some(report));
    let mut engine = Engine::new(&model, EngineConfig::default())?;
    let t1 = Instant::now();
    let (mut labels, mut preds, mut scores) = (Vec::new(), Vec::new(), Vec::new());
    for (r, &l) in house.readings[split..].iter().zip(&house.labels[split..]) {
        let ev = engine.detect_step(*r)?;
        if ev.phase == Phase::Detecting {
            labels.push(l);
            preds.push(ev.label);
            scores.push(ev.score.unwrap_or(f64::NAN));
        }
    }
    let n = house.readings.len() - split;
    println!(
        "detected {n} readings in {:.2}s ({:.1} us/reading)",
        t1.elapsed().as_secs_f64(),
        t1.elapsed().as_secs_f64() * 1e6 / n as f64
    );
    let m = evaluate(&labels, &preds, &scores)?;
    println!("precision {:.4} recall {:.4} f1 {:.4} auc {:.4}", m.precision, m.recall, m.f1, m.auc);
    Ok(())
}
