//! Incremental first-stage attention over the global memory.
//!
//! The first compression stage queries the global memory with tokens that
//! do not depend on the input, so its projected queries are fixed once the
//! parameters are. Each memory row is `f_t + s_τ` (content embedding plus
//! the encoding of its age), so a cross-attention logit splits into a
//! content part `a^p = q·(f_t Wk)`, computed once per reading when it enters
//! the global memory, and a positional part `a^s = q·(s_τ Wk + bk)` that
//! depends only on the window position and is precomputed. Values split the
//! same way.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::model::{trd_finish, trd_forward_with, trd_self_stage, Dims, ModelParams, PosTable};
use crate::nn::{softmax, Eval, Ops, Tensor2};

/// Multiply-adds spent by the last [`AttentionCache::incremental_update`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateOps {
    /// Content logits against the fixed queries (`e0 * C`).
    pub logits: u64,
    /// Key and value projections of the new feature (`2 * C * C`).
    pub projections: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionCache {
    dims: Dims,
    /// Post-self-attention stage-1 tokens (residual input of the rest of
    /// the unit).
    x1: Tensor2,
    /// `x1 Wq + bq`, `e0 x C`; head `h` owns columns `h*dh..(h+1)*dh`.
    fixed_queries: Tensor2,
    /// Row `j` (window position, oldest first) holds the positional logits
    /// of every (head, query) pair at column `h*e0 + i`, already scaled.
    as_matrix: Tensor2,
    /// `s_τ Wv + bv` per window position, `gm x C`.
    vs_table: Tensor2,
    wk: Tensor2,
    wv: Tensor2,
    /// Content logits per global-memory reading, oldest first.
    ap_ring: VecDeque<Vec<f64>>,
    /// Content value projections `f_t Wv`, aligned with `ap_ring`.
    vp_ring: VecDeque<Vec<f64>>,
    last_ops: UpdateOps,
}

pub fn build_attention_cache(p: &ModelParams) -> Result<AttentionCache> {
    let d = p.dims;
    d.validate()?;
    let pos = PosTable::new(d.lm, d.gm, d.c)?;
    let ca = &p.enc1.cross_attn;
    let x1 = trd_self_stage(&mut Eval, &p.enc1, &p.tokens0, d.heads)?;
    let fixed_queries = Eval.linear(&x1, &ca.wq, &ca.bq)?;

    let pos_keys = Eval.linear(pos.global_block(), &ca.wk, &ca.bk)?;
    let dh = d.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut as_matrix = Tensor2::zeros(d.gm, d.heads * d.e0);
    for j in 0..d.gm {
        let k = pos_keys.row(j);
        for h in 0..d.heads {
            let cols = h * dh..(h + 1) * dh;
            for i in 0..d.e0 {
                let q = &fixed_queries.row(i)[cols.clone()];
                let dot: f64 = q.iter().zip(&k[cols.clone()]).map(|(a, b)| a * b).sum();
                as_matrix.set(j, h * d.e0 + i, dot * scale);
            }
        }
    }
    let vs_table = Eval.linear(pos.global_block(), &ca.wv, &ca.bv)?;
    Ok(AttentionCache {
        dims: d,
        x1,
        fixed_queries,
        as_matrix,
        vs_table,
        wk: ca.wk.clone(),
        wv: ca.wv.clone(),
        ap_ring: VecDeque::with_capacity(d.gm + 1),
        vp_ring: VecDeque::with_capacity(d.gm + 1),
        last_ops: UpdateOps::default(),
    })
}

impl AttentionCache {
    pub fn fixed_queries(&self) -> &Tensor2 {
        &self.fixed_queries
    }

    pub fn as_matrix(&self) -> &Tensor2 {
        &self.as_matrix
    }

    pub fn ring_len(&self) -> usize {
        self.ap_ring.len()
    }

    pub fn is_full(&self) -> bool {
        self.ap_ring.len() == self.dims.gm
    }

    pub fn last_update_ops(&self) -> UpdateOps {
        self.last_ops
    }

    /// Content logits of the oldest buffered reading.
    pub fn oldest_content_logits(&self) -> Option<&[f64]> {
        self.ap_ring.front().map(Vec::as_slice)
    }

    pub fn clear_ring(&mut self) {
        self.ap_ring.clear();
        self.vp_ring.clear();
    }

    /// Adds the content feature `f_t` (`1 x C` embedding, no positional
    /// term) of the reading that just entered the global memory, dropping
    /// the oldest entry once `gm` are held.
    pub fn incremental_update(&mut self, feature: &[f64]) -> Result<()> {
        let d = self.dims;
        if feature.len() != d.c {
            return Err(shape_err(
                "incremental_update",
                format!("feature of width {} for C={}", feature.len(), d.c),
            ));
        }
        let mut key = vec![0.0; d.c];
        let mut value = vec![0.0; d.c];
        for (r, &f) in feature.iter().enumerate() {
            for (c, (k, v)) in key.iter_mut().zip(value.iter_mut()).enumerate() {
                *k += f * self.wk.get(r, c);
                *v += f * self.wv.get(r, c);
            }
        }
        let dh = d.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut a = vec![0.0; d.heads * d.e0];
        let mut logit_ops = 0u64;
        for h in 0..d.heads {
            let cols = h * dh..(h + 1) * dh;
            for i in 0..d.e0 {
                let q = &self.fixed_queries.row(i)[cols.clone()];
                let mut dot = 0.0;
                for (x, y) in q.iter().zip(&key[cols.clone()]) {
                    dot += x * y;
                    logit_ops += 1;
                }
                a[h * d.e0 + i] = dot * scale;
            }
        }
        if self.ap_ring.len() == d.gm {
            self.ap_ring.pop_front();
            self.vp_ring.pop_front();
        }
        self.ap_ring.push_back(a);
        self.vp_ring.push_back(value);
        self.last_ops = UpdateOps {
            logits: logit_ops,
            projections: 2 * (d.c * d.c) as u64,
        };
        Ok(())
    }

    fn require_full(&self, op: &'static str) -> Result<()> {
        if !self.is_full() {
            return Err(shape_err(
                op,
                format!("ring holds {} of {} readings", self.ap_ring.len(), self.dims.gm),
            ));
        }
        Ok(())
    }

    /// Pre-softmax logits `A = A^p + A^s`, one `e0 x gm` matrix per head.
    pub fn logits(&self) -> Result<Vec<Tensor2>> {
        self.require_full("AttentionCache::logits")?;
        let d = self.dims;
        let mut out = vec![Tensor2::zeros(d.e0, d.gm); d.heads];
        for (j, ap) in self.ap_ring.iter().enumerate() {
            let asj = self.as_matrix.row(j);
            for (h, m) in out.iter_mut().enumerate() {
                for i in 0..d.e0 {
                    let col = h * d.e0 + i;
                    m.set(i, j, ap[col] + asj[col]);
                }
            }
        }
        Ok(out)
    }

    /// Per-head attention outputs concatenated, `e0 x C`.
    fn heads_concat(&self) -> Result<Tensor2> {
        let d = self.dims;
        let dh = d.head_dim();
        let logits = self.logits()?;
        let mut out = Tensor2::zeros(d.e0, d.c);
        for (h, l) in logits.iter().enumerate() {
            for i in 0..d.e0 {
                let w = softmax(l.row(i))?;
                let row = out.row_mut(i);
                for (j, wj) in w.iter().enumerate() {
                    let vp = &self.vp_ring[j];
                    let vs = self.vs_table.row(j);
                    for c in h * dh..(h + 1) * dh {
                        row[c] += wj * (vp[c] + vs[c]);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Encoded global memory (`e1 x C`) from the cached first stage.
    pub fn encode(&self, p: &ModelParams) -> Result<Tensor2> {
        let cat = self.heads_concat()?;
        let ca = &p.enc1.cross_attn;
        let cross = Eval.linear(&cat, &ca.wo, &ca.bo)?;
        let stage1 = trd_finish(&mut Eval, &p.enc1, &self.x1, &cross)?;
        trd_forward_with(&mut Eval, &p.enc2, &p.tokens1, &stage1, p.dims.heads)
    }
}
