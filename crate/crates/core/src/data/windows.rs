use std::ops::Range;

use crate::error::{Error, Result};
use crate::nn::Tensor2;

/// Four weeks of minute readings.
pub const DEFAULT_NON_EV_CAP: usize = 4 * 7 * 1440;

/// Training pairs: row `i` of `gm_windows` immediately precedes row `i` of
/// `lm_windows` in the source series.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowBatch {
    pub lm_windows: Tensor2,
    pub gm_windows: Tensor2,
}

impl WindowBatch {
    pub fn len(&self) -> usize {
        self.lm_windows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows `idx` gathered into a new batch.
    pub fn select(&self, idx: &[usize]) -> WindowBatch {
        let gather = |t: &Tensor2| {
            let mut data = Vec::with_capacity(idx.len() * t.cols());
            for &i in idx {
                data.extend_from_slice(t.row(i));
            }
            Tensor2::from_vec(idx.len(), t.cols(), data).expect("consistent shape")
        };
        WindowBatch {
            lm_windows: gather(&self.lm_windows),
            gm_windows: gather(&self.gm_windows),
        }
    }

    /// Stacks batches with equal window lengths.
    pub fn concat(parts: &[WindowBatch]) -> Result<WindowBatch> {
        let first = parts.first().ok_or(Error::Empty("WindowBatch::concat"))?;
        let (lm, gm) = (first.lm_windows.cols(), first.gm_windows.cols());
        let mut l = Vec::new();
        let mut g = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.lm_windows.cols() != lm || p.gm_windows.cols() != gm {
                return Err(Error::Shape {
                    op: "WindowBatch::concat",
                    detail: "window lengths differ".into(),
                });
            }
            l.extend_from_slice(p.lm_windows.data());
            g.extend_from_slice(p.gm_windows.data());
            rows += p.len();
        }
        Ok(WindowBatch {
            lm_windows: Tensor2::from_vec(rows, lm, l)?,
            gm_windows: Tensor2::from_vec(rows, gm, g)?,
        })
    }
}

/// Windows at offsets `0, stride, 2 stride, ...`; there are
/// `floor((len - lm - gm) / stride) + 1` of them.
pub fn sliding_windows(series: &[f64], lm: usize, gm: usize, stride: usize) -> Result<WindowBatch> {
    if lm == 0 || gm == 0 || stride == 0 {
        return Err(Error::Config(format!(
            "lm, gm and stride must be positive (lm={lm}, gm={gm}, stride={stride})"
        )));
    }
    let w = lm + gm;
    if series.len() < w {
        return Err(Error::Domain(format!(
            "series of {} readings is shorter than one window ({w})",
            series.len()
        )));
    }
    let count = (series.len() - w) / stride + 1;
    let mut l = Vec::with_capacity(count * lm);
    let mut g = Vec::with_capacity(count * gm);
    for k in 0..count {
        let s = &series[k * stride..k * stride + w];
        g.extend_from_slice(&s[..gm]);
        l.extend_from_slice(&s[gm..]);
    }
    Ok(WindowBatch {
        lm_windows: Tensor2::from_vec(count, lm, l)?,
        gm_windows: Tensor2::from_vec(count, gm, g)?,
    })
}

/// Maximal runs of label 0 inside each segment, truncated so that their
/// total length does not exceed `cap` readings.
pub fn non_ev_runs(labels: &[u8], segments: &[Range<usize>], cap: Option<usize>) -> Vec<Range<usize>> {
    let mut runs = Vec::new();
    let mut budget = cap.unwrap_or(usize::MAX);
    for seg in segments {
        let mut i = seg.start;
        while i < seg.end && budget > 0 {
            if labels[i] != 0 {
                i += 1;
                continue;
            }
            let start = i;
            while i < seg.end && labels[i] == 0 {
                i += 1;
            }
            let end = i.min(start.saturating_add(budget));
            budget -= end - start;
            runs.push(start..end);
        }
    }
    runs
}

/// Sliding windows over every run long enough to hold one window.
pub fn windows_over_runs(
    series: &[f64],
    runs: &[Range<usize>],
    lm: usize,
    gm: usize,
    stride: usize,
) -> Result<WindowBatch> {
    let parts: Vec<WindowBatch> = runs
        .iter()
        .filter(|r| r.len() >= lm + gm)
        .map(|r| sliding_windows(&series[r.clone()], lm, gm, stride))
        .collect::<Result<_>>()?;
    if parts.is_empty() {
        return Err(Error::Domain(format!(
            "no non-EV interval holds a full window of {} readings",
            lm + gm
        )));
    }
    WindowBatch::concat(&parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{Reading, StreamState};
    use proptest::prelude::*;

    #[test]
    fn counting_formula() {
        let s: Vec<f64> = (0..100).map(f64::from).collect();
        assert_eq!(sliding_windows(&s, 8, 32, 1).unwrap().len(), 61);
        assert_eq!(sliding_windows(&s[..40], 8, 32, 1).unwrap().len(), 1);
        assert_eq!(sliding_windows(&s, 8, 32, 7).unwrap().len(), 9);
        assert!(sliding_windows(&s[..39], 8, 32, 1).is_err());
        assert!(sliding_windows(&s, 8, 32, 0).is_err());
    }

    #[test]
    fn runs_respect_labels_segments_and_cap() {
        let labels = [0, 0, 0, 1, 1, 0, 0, 0, 0, 1];
        assert_eq!(non_ev_runs(&labels, &[0..10], None), vec![0..3, 5..9]);
        assert_eq!(non_ev_runs(&labels, &[0..2, 2..10], None), vec![0..2, 2..3, 5..9]);
        assert_eq!(non_ev_runs(&labels, &[0..10], Some(5)), vec![0..3, 5..7]);
    }

    #[test]
    fn windows_skip_short_runs() {
        let s: Vec<f64> = (0..30).map(f64::from).collect();
        let w = windows_over_runs(&s, &[0..3, 5..12, 20..30], 2, 4, 1).unwrap();
        assert_eq!(w.len(), 2 + 5);
        assert_eq!(w.gm_windows.row(2), &[20.0, 21.0, 22.0, 23.0]);
        assert!(windows_over_runs(&s, &[0..3], 2, 4, 1).is_err());
    }

    proptest! {
        #[test]
        fn rows_are_raw_slices(len in 40usize..120, lm in 1usize..8, extra in 1usize..20, stride in 1usize..5) {
            let gm = lm + extra;
            prop_assume!(len >= lm + gm);
            let s: Vec<f64> = (0..len).map(|i| (i as f64 * 0.37).sin()).collect();
            let w = sliding_windows(&s, lm, gm, stride).unwrap();
            prop_assert_eq!(w.len(), (len - lm - gm) / stride + 1);
            for k in 0..w.len() {
                let mut joined = w.gm_windows.row(k).to_vec();
                joined.extend_from_slice(w.lm_windows.row(k));
                prop_assert_eq!(joined.as_slice(), &s[k * stride..k * stride + lm + gm]);
            }
        }

        #[test]
        fn window_count_matches_complete_snapshots(len in 1usize..150, lm in 1usize..6, extra in 1usize..30) {
            let gm = lm + extra;
            let s: Vec<f64> = (0..len).map(|i| i as f64).collect();
            let mut mem = StreamState::new(lm, gm).unwrap();
            let mut complete = 0;
            for (i, &p) in s.iter().enumerate() {
                mem.push_reading(Reading::new(i as i64, p)).unwrap();
                if let Ok(snap) = mem.snapshot() {
                    let w = i + 1 - lm - gm;
                    let g: Vec<f64> = snap.global.iter().map(|r| r.power).collect();
                    prop_assert_eq!(g.as_slice(), &s[w..w + gm]);
                    complete += 1;
                }
            }
            let windows = sliding_windows(&s, lm, gm, 1).map_or(0, |w| w.len());
            prop_assert_eq!(windows, complete);
        }
    }
}
