//! Per-stream FIFO local and global memories.
//!
//! New readings enter the local memory; when it is full the oldest local
//! reading spills into the global memory, whose own oldest reading is then
//! discarded. Buffers are index based: gaps in wall-clock time are handled at
//! ingestion, not here.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One real-power sample. `t` is minutes since the Unix epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reading {
    pub t: i64,
    pub power: f64,
    /// Set when the sample was forward-filled over a gap.
    #[serde(default)]
    pub filled: bool,
}

impl Reading {
    pub fn new(t: i64, power: f64) -> Self {
        Self {
            t,
            power,
            filled: false,
        }
    }
}

/// Complete `(global, local)` windows, each ordered oldest to newest.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub global: Vec<Reading>,
    pub local: Vec<Reading>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamState {
    lm: usize,
    gm: usize,
    local: VecDeque<Reading>,
    global: VecDeque<Reading>,
    total_seen: u64,
}

/// What a push did besides appending to the local memory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PushOutcome {
    /// Reading that moved from local into global memory.
    pub spilled: Option<Reading>,
    /// Reading that fell off the end of global memory.
    pub discarded: Option<Reading>,
}

impl StreamState {
    pub fn new(lm: usize, gm: usize) -> Result<Self> {
        if lm == 0 || lm >= gm {
            return Err(Error::Config(format!(
                "memory lengths must satisfy 0 < lm < gm (lm={lm}, gm={gm})"
            )));
        }
        Ok(Self {
            lm,
            gm,
            local: VecDeque::with_capacity(lm + 1),
            global: VecDeque::with_capacity(gm + 1),
            total_seen: 0,
        })
    }

    pub fn lm(&self) -> usize {
        self.lm
    }

    pub fn gm(&self) -> usize {
        self.gm
    }

    pub fn total_seen(&self) -> u64 {
        self.total_seen
    }

    pub fn is_complete(&self) -> bool {
        self.total_seen >= (self.lm + self.gm) as u64
    }

    pub fn local(&self) -> &VecDeque<Reading> {
        &self.local
    }

    pub fn global(&self) -> &VecDeque<Reading> {
        &self.global
    }

    pub fn last_t(&self) -> Option<i64> {
        self.local.back().map(|r| r.t)
    }

    pub fn push_reading(&mut self, r: Reading) -> Result<PushOutcome> {
        if !r.power.is_finite() {
            return Err(Error::NonFinite("reading power"));
        }
        if let Some(last) = self.last_t() {
            if r.t <= last {
                return Err(Error::OutOfOrder { last, got: r.t });
            }
        }
        self.local.push_back(r);
        self.total_seen += 1;

        let mut outcome = PushOutcome {
            spilled: None,
            discarded: None,
        };
        if self.local.len() > self.lm {
            let old = self.local.pop_front().expect("nonempty");
            self.global.push_back(old);
            outcome.spilled = Some(old);
            if self.global.len() > self.gm {
                outcome.discarded = self.global.pop_front();
            }
        }
        Ok(outcome)
    }

    pub fn snapshot(&self) -> Result<Snapshot> {
        if !self.is_complete() {
            return Err(Error::WarmupIncomplete {
                seen: self.total_seen as usize,
                needed: self.lm + self.gm,
            });
        }
        Ok(Snapshot {
            global: self.global.iter().copied().collect(),
            local: self.local.iter().copied().collect(),
        })
    }

    /// Empties both buffers (used when an input series is split by a long gap).
    pub fn clear(&mut self) {
        self.local.clear();
        self.global.clear();
        self.total_seen = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn r(t: i64) -> Reading {
        Reading::new(t, t as f64 * 0.5)
    }

    fn ts(buf: &VecDeque<Reading>) -> Vec<i64> {
        buf.iter().map(|x| x.t).collect()
    }

    #[test]
    fn fifo_examples() {
        let mut s = StreamState::new(2, 3).unwrap();
        s.push_reading(r(1)).unwrap();
        assert_eq!(ts(s.local()), vec![1]);
        assert!(s.global().is_empty());

        s.push_reading(r(2)).unwrap();
        let out = s.push_reading(r(3)).unwrap();
        assert_eq!(out.spilled.map(|x| x.t), Some(1));
        assert_eq!(ts(s.local()), vec![2, 3]);
        assert_eq!(ts(s.global()), vec![1]);

        for t in 4..=6 {
            s.push_reading(r(t)).unwrap();
        }
        assert_eq!(ts(s.local()), vec![5, 6]);
        assert_eq!(ts(s.global()), vec![2, 3, 4]);
        assert_eq!(s.total_seen(), 6);
    }

    #[test]
    fn out_of_order_is_rejected_without_mutation() {
        let mut s = StreamState::new(2, 3).unwrap();
        s.push_reading(r(5)).unwrap();
        let before = s.clone();
        assert!(matches!(
            s.push_reading(r(5)),
            Err(Error::OutOfOrder { last: 5, got: 5 })
        ));
        assert!(s.push_reading(r(4)).is_err());
        assert_eq!(s, before);
    }

    #[test]
    fn snapshot_boundary() {
        let (lm, gm) = (8, 32);
        let mut s = StreamState::new(lm, gm).unwrap();
        for t in 0..(lm + gm - 1) as i64 {
            s.push_reading(r(t)).unwrap();
        }
        assert!(matches!(s.snapshot(), Err(Error::WarmupIncomplete { .. })));
        s.push_reading(r((lm + gm - 1) as i64)).unwrap();
        let snap = s.snapshot().unwrap();
        assert_eq!((snap.local.len(), snap.global.len()), (8, 32));
        let joined: Vec<i64> = snap.global.iter().chain(&snap.local).map(|x| x.t).collect();
        assert_eq!(joined, (0..40).collect::<Vec<_>>());
    }

    #[test]
    fn construction_requires_lm_below_gm() {
        assert!(StreamState::new(4, 4).is_err());
        assert!(StreamState::new(0, 4).is_err());
        assert!(StreamState::new(5, 4).is_err());
    }

    proptest! {
        #[test]
        fn snapshot_matches_trailing_slice(
            lm in 1usize..6,
            extra in 1usize..10,
            len in 0usize..60,
        ) {
            let gm = lm + extra;
            let mut s = StreamState::new(lm, gm).unwrap();
            let raw: Vec<Reading> = (0..len as i64).map(r).collect();
            for x in &raw {
                s.push_reading(*x).unwrap();
            }
            match s.snapshot() {
                Ok(snap) => {
                    prop_assert!(len >= lm + gm);
                    let tail = &raw[len - lm - gm..];
                    prop_assert_eq!(&snap.global[..], &tail[..gm]);
                    prop_assert_eq!(&snap.local[..], &tail[gm..]);
                }
                Err(_) => prop_assert!(len < lm + gm),
            }
            prop_assert!(s.local().len() <= lm && s.global().len() <= gm);
        }
    }
}
