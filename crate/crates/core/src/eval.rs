//! Pointwise detection metrics and the parsers for the artifacts they are
//! computed from.

use std::collections::HashMap;
use std::io::{BufRead, Read};

use serde::{Deserialize, Serialize};

use crate::engine::Phase;
use crate::error::{shape_err, Error, Result};
use crate::format::parse_timestamp;
use crate::spot::{pot_calibrate, SpotClass, SpotConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn confusion(labels: &[u8], preds: &[u8]) -> Result<Confusion> {
    if labels.len() != preds.len() {
        return Err(shape_err(
            "confusion",
            format!("{} labels vs {} predictions", labels.len(), preds.len()),
        ));
    }
    let mut c = Confusion::default();
    for (&l, &p) in labels.iter().zip(preds) {
        match (l != 0, p != 0) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// `(precision, recall, f1)`, each 0 when its denominator is 0.
pub fn precision_recall_f1(c: &Confusion) -> (f64, f64, f64) {
    let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let p = ratio(c.tp, c.tp + c.fp);
    let r = ratio(c.tp, c.tp + c.fn_);
    (p, r, f1_from(p, r))
}

pub fn f1_from(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Rank-based ROC-AUC (Mann-Whitney U over midranks).
pub fn roc_auc(labels: &[u8], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(shape_err(
            "roc_auc",
            format!("{} labels vs {} scores", labels.len(), scores.len()),
        ));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("roc_auc scores"));
    }
    let pos = labels.iter().filter(|&&l| l != 0).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Domain(
            "ROC-AUC needs both positive and negative labels".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let midrank = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            if labels[k] != 0 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// The four reported metrics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
}

impl Metrics {
    pub fn mean(all: &[Metrics]) -> Result<Metrics> {
        if all.is_empty() {
            return Err(Error::Empty("Metrics::mean"));
        }
        let n = all.len() as f64;
        let avg = |f: fn(&Metrics) -> f64| all.iter().map(f).sum::<f64>() / n;
        Ok(Metrics {
            precision: avg(|m| m.precision),
            recall: avg(|m| m.recall),
            f1: avg(|m| m.f1),
            auc: avg(|m| m.auc),
        })
    }
}

pub fn evaluate(labels: &[u8], preds: &[u8], scores: &[f64]) -> Result<Metrics> {
    let c = confusion(labels, preds)?;
    let (precision, recall, f1) = precision_recall_f1(&c);
    Ok(Metrics {
        precision,
        recall,
        f1,
        auc: roc_auc(labels, scores)?,
    })
}

/// One engine event as read back from JSONL.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EventRecord {
    pub t: i64,
    pub score: Option<f64>,
    pub label: u8,
    pub phase: Phase,
}

#[derive(Deserialize)]
struct RawEvent {
    t: String,
    score: Option<f64>,
    label: u8,
    phase: Phase,
}

pub fn parse_events(source: impl BufRead) -> Result<Vec<EventRecord>> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { line: i + 1, msg };
        let raw: RawEvent = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        let t = parse_timestamp(&raw.t).map_err(|e| err(e.to_string()))?;
        out.push(EventRecord {
            t,
            score: raw.score,
            label: raw.label,
            phase: raw.phase,
        });
    }
    Ok(out)
}

/// Metrics of detecting-phase events against ground truth keyed by
/// timestamp. Events without a ground-truth label are skipped.
pub fn evaluate_events(events: &[EventRecord], truth: &HashMap<i64, u8>) -> Result<Metrics> {
    let mut labels = Vec::new();
    let mut preds = Vec::new();
    let mut scores = Vec::new();
    let mut missing = 0usize;
    for e in events.iter().filter(|e| e.phase == Phase::Detecting) {
        let Some(&l) = truth.get(&e.t) else {
            missing += 1;
            continue;
        };
        let score = e.score.ok_or_else(|| Error::Domain("detecting event without a score".into()))?;
        labels.push(l);
        preds.push(e.label);
        scores.push(score);
    }
    if missing > 0 {
        log::warn!("{missing} events have no ground-truth label and were skipped");
    }
    if labels.is_empty() {
        return Err(Error::Empty("evaluate_events (no labeled detecting events)"));
    }
    evaluate(&labels, &preds, &scores)
}

/// A row of an external `score,label[,pred]` file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreRow {
    pub score: f64,
    pub label: u8,
    pub pred: Option<u8>,
}

pub fn parse_score_csv(source: impl Read) -> Result<Vec<ScoreRow>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    let has_pred = match headers.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["score", "label"] => false,
        ["score", "label", "pred"] => true,
        other => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header score,label[,pred], got {other:?}"),
            })
        }
    };
    let bit = |s: &str, line: usize, what: &str| match s {
        "0" => Ok(0u8),
        "1" => Ok(1u8),
        _ => Err(Error::Parse { line, msg: format!("{what} {s:?} is not 0 or 1") }),
    };
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let score: f64 = rec[0].parse().map_err(|_| Error::Parse {
            line,
            msg: format!("score {:?} is not a number", &rec[0]),
        })?;
        rows.push(ScoreRow {
            score,
            label: bit(&rec[1], line, "label")?,
            pred: if has_pred { Some(bit(&rec[2], line, "pred")?) } else { None },
        });
    }
    Ok(rows)
}

/// Metrics of a score file. Rows with a `pred` column are used as given;
/// otherwise the first `calibration_len` rows calibrate a streaming
/// threshold (and are excluded) and the rest are classified by it.
pub fn evaluate_scores(rows: &[ScoreRow], spot: &SpotConfig, calibration_len: usize) -> Result<Metrics> {
    let labels: Vec<u8>;
    let scores: Vec<f64>;
    let preds: Vec<u8>;
    if rows.iter().all(|r| r.pred.is_some()) {
        labels = rows.iter().map(|r| r.label).collect();
        scores = rows.iter().map(|r| r.score).collect();
        preds = rows.iter().map(|r| r.pred.unwrap_or(0)).collect();
    } else {
        if rows.len() <= calibration_len {
            return Err(Error::Domain(format!(
                "{} score rows leave nothing after {calibration_len} calibration rows",
                rows.len()
            )));
        }
        let (calib, rest) = rows.split_at(calibration_len);
        let calib_scores: Vec<f64> = calib.iter().map(|r| r.score).collect();
        let mut state = pot_calibrate(&calib_scores, spot)?;
        labels = rest.iter().map(|r| r.label).collect();
        scores = rest.iter().map(|r| r.score).collect();
        preds = rest
            .iter()
            .map(|r| (state.step(r.score) == SpotClass::Anomaly) as u8)
            .collect();
    }
    evaluate(&labels, &preds, &scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn confusion_examples() {
        let c = confusion(&[1, 1, 0], &[1, 0, 0]).unwrap();
        assert_eq!((c.tp, c.fn_, c.tn, c.fp), (1, 1, 1, 0));
        let same = confusion(&[1, 0, 1, 0], &[1, 0, 1, 0]).unwrap();
        assert_eq!((same.fp, same.fn_), (0, 0));
        let c = confusion(&[1, 1, 1], &[0, 0, 0]).unwrap();
        assert_eq!(precision_recall_f1(&c).1, 0.0);
        assert!(confusion(&[1], &[1, 0]).is_err());
    }

    #[test]
    fn prf_examples() {
        let c = Confusion { tp: 8, fp: 2, fn_: 0, tn: 5 };
        let (p, r, f) = precision_recall_f1(&c);
        assert_eq!((p, r), (0.8, 1.0));
        assert!((f - 0.8889).abs() < 1e-4);
        assert_eq!(precision_recall_f1(&Confusion::default()), (0.0, 0.0, 0.0));
        assert!((f1_from(0.865, 0.883) - 0.874).abs() < 1e-3);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0, 1], &[0.2, 0.8]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0, 0, 1, 1], &[0.1, 0.2, 0.3, 0.4]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[1, 0], &[0.5, 0.5]).unwrap(), 0.5);
        assert!(roc_auc(&[1, 1], &[0.1, 0.2]).is_err());
        assert!(roc_auc(&[1, 0], &[0.1]).is_err());
    }

    fn brute_auc(labels: &[u8], scores: &[f64]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li == 1 && lj == 0 {
                    pairs += 1.0;
                    wins += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        wins / pairs
    }

    #[test]
    fn matches_brute_force_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let n = rng.gen_range(2..60);
            let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
            let preds: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
            // coarse scores force ties
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64 * 0.25).collect();
            let c = confusion(&labels, &preds).unwrap();
            let tally = |l: u8, p: u8| labels.iter().zip(&preds).filter(|(&a, &b)| a == l && b == p).count() as u64;
            assert_eq!((c.tp, c.fp, c.fn_, c.tn), (tally(1, 1), tally(0, 1), tally(1, 0), tally(0, 0)));
            assert_eq!(c.total(), n as u64);
            if labels.contains(&0) && labels.contains(&1) {
                let a = roc_auc(&labels, &scores).unwrap();
                assert!((a - brute_auc(&labels, &scores)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn auc_is_rank_invariant_and_random_is_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 20_000;
        let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let a = roc_auc(&labels, &scores).unwrap();
        assert!((a - 0.5).abs() < 0.02, "{a}");
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        assert_eq!(roc_auc(&labels, &warped).unwrap(), a);
    }

    #[test]
    fn f1_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let c = Confusion {
                tp: rng.gen_range(0..50),
                fp: rng.gen_range(0..50),
                fn_: rng.gen_range(0..50),
                tn: 0,
            };
            let (p, r, f) = precision_recall_f1(&c);
            assert!(f <= p.max(r) + 1e-15);
            if p > 0.0 && r > 0.0 {
                assert!((f - 2.0 / (1.0 / p + 1.0 / r)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn events_join_on_timestamps() {
        let jsonl = concat!(
            r#"{"t":"2024-01-01T00:00:00Z","score":null,"threshold":null,"label":0,"phase":"warmup"}"#, "\n",
            r#"{"t":"2024-01-01T00:01:00Z","score":0.5,"threshold":null,"label":0,"phase":"calibrating"}"#, "\n",
            r#"{"t":"2024-01-01T00:02:00Z","score":0.2,"threshold":1,"label":0,"phase":"detecting"}"#, "\n",
            r#"{"t":"2024-01-01T00:03:00Z","score":4.0,"threshold":1,"label":1,"phase":"detecting"}"#, "\n",
            r#"{"t":"2024-01-01T00:04:00Z","score":0.9,"threshold":1,"label":0,"phase":"detecting"}"#, "\n",
        );
        let events = parse_events(jsonl.as_bytes()).unwrap();
        assert_eq!(events.len(), 5);
        let t0 = parse_timestamp("2024-01-01T00:00:00Z").unwrap();
        let truth: HashMap<i64, u8> = [(t0 + 1, 1), (t0 + 2, 0), (t0 + 3, 1), (t0 + 4, 1)].into();
        let m = evaluate_events(&events, &truth).unwrap();
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.recall, 0.5);
        assert_eq!(m.auc, 1.0);
        assert!(parse_events("{\"t\":1}\n".as_bytes()).is_err());
    }

    #[test]
    fn score_files() {
        let rows = parse_score_csv("score,label,pred\n0.1,0,0\n0.9,1,1\n0.4,1,0\n".as_bytes()).unwrap();
        let m = evaluate_scores(&rows, &SpotConfig::default(), 100).unwrap();
        assert_eq!((m.precision, m.recall), (1.0, 0.5));
        assert!(parse_score_csv("s,l\n".as_bytes()).is_err());
        assert!(parse_score_csv("score,label\nx,0\n".as_bytes()).is_err());

        // without predictions: calibrate on a clean prefix, then flag spikes
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut text = String::from("score,label\n");
        for i in 0..3000 {
            let spike = i >= 1000 && i % 100 == 0;
            let s: f64 = rng.gen::<f64>() + if spike { 50.0 } else { 0.0 };
            text.push_str(&format!("{s},{}\n", spike as u8));
        }
        let rows = parse_score_csv(text.as_bytes()).unwrap();
        let m = evaluate_scores(&rows, &SpotConfig { q: 1e-3, ..SpotConfig::default() }, 1000).unwrap();
        assert_eq!(m.recall, 1.0);
        assert!(m.precision > 0.9);
    }

    #[test]
    fn metrics_mean_and_keys() {
        let a = Metrics { precision: 1.0, recall: 0.5, f1: 0.6, auc: 0.9 };
        let b = Metrics { precision: 0.0, recall: 0.5, f1: 0.2, auc: 0.7 };
        let m = Metrics::mean(&[a, b]).unwrap();
        assert_eq!((m.precision, m.recall), (0.5, 0.5));
        assert!((m.f1 - 0.4).abs() < 1e-15 && (m.auc - 0.8).abs() < 1e-15);
        let v = serde_json::to_value(m).unwrap();
        assert_eq!(v.as_object().unwrap().len(), 4);
    }
}
