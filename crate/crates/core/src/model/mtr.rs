//! Transformer decoder units, the two-stage global-memory encoder and the
//! local-memory decoder.

use crate::error::{shape_err, Result};
use crate::model::attention::multi_head_attention;
use crate::model::params::{ModelParams, TrdParams};
use crate::model::posenc::PosTable;
use crate::nn::{Eval, Ops, Tensor2};

pub const LN_EPS: f64 = 1e-5;

/// `LN1(tokens + SelfAttn(tokens))`
pub(crate) fn trd_self_stage<B: Ops>(
    b: &mut B,
    p: &TrdParams<B::T>,
    tokens: &B::T,
    heads: usize,
) -> Result<B::T> {
    let sa = multi_head_attention(b, &p.self_attn, tokens, tokens, heads)?;
    let r = b.add(tokens, &sa)?;
    b.layer_norm(&r, &p.norm1.gain, &p.norm1.bias, LN_EPS)
}

/// Everything after the cross-attention: `x2 = LN2(x1 + cross)`, then
/// `LN3(x2 + FFN(x2))`.
pub(crate) fn trd_finish<B: Ops>(
    b: &mut B,
    p: &TrdParams<B::T>,
    x1: &B::T,
    cross: &B::T,
) -> Result<B::T> {
    let r = b.add(x1, cross)?;
    let x2 = b.layer_norm(&r, &p.norm2.gain, &p.norm2.bias, LN_EPS)?;
    let h = b.linear(&x2, &p.ffn.w1, &p.ffn.b1)?;
    let h = b.relu(&h);
    let f = b.linear(&h, &p.ffn.w2, &p.ffn.b2)?;
    let r = b.add(&x2, &f)?;
    b.layer_norm(&r, &p.norm3.gain, &p.norm3.bias, LN_EPS)
}

pub(crate) fn trd_forward_with<B: Ops>(
    b: &mut B,
    p: &TrdParams<B::T>,
    tokens: &B::T,
    memory: &B::T,
    heads: usize,
) -> Result<B::T> {
    let x1 = trd_self_stage(b, p, tokens, heads)?;
    let cross = multi_head_attention(b, &p.cross_attn, &x1, memory, heads)?;
    trd_finish(b, p, &x1, &cross)
}

/// One transformer decoder unit mapping `e` tokens and `m` memory rows to
/// `e` output tokens.
pub fn trd_forward(
    tokens: &Tensor2,
    memory: &Tensor2,
    p: &TrdParams<Tensor2>,
    heads: usize,
) -> Result<Tensor2> {
    let c = p.norm1.gain.cols();
    if tokens.cols() != c || memory.cols() != c {
        return Err(shape_err(
            "trd_forward",
            format!(
                "tokens {:?} / memory {:?} for C={c}",
                tokens.shape(),
                memory.shape()
            ),
        ));
    }
    trd_forward_with(&mut Eval, p, tokens, memory, heads)
}

/// `embed(x) + s_τ` for a window of normalized readings.
pub(crate) fn embed_with<B: Ops>(
    b: &mut B,
    p: &ModelParams<B::T>,
    values: &[f64],
    pos: &Tensor2,
) -> Result<B::T> {
    let x = b.constant(Tensor2::column(values));
    let e = b.linear(&x, &p.embed_w, &p.embed_b)?;
    let s = b.constant(pos.clone());
    b.add(&e, &s)
}

pub(crate) fn encode_global_with<B: Ops>(
    b: &mut B,
    p: &ModelParams<B::T>,
    gm_features: &B::T,
) -> Result<B::T> {
    let heads = p.dims.heads;
    let stage1 = trd_forward_with(b, &p.enc1, &p.tokens0, gm_features, heads)?;
    trd_forward_with(b, &p.enc2, &p.tokens1, &stage1, heads)
}

/// Reconstruction as an `lm x 1` column.
pub(crate) fn decode_local_with<B: Ops>(
    b: &mut B,
    p: &ModelParams<B::T>,
    lm_features: &B::T,
    encoded: &B::T,
) -> Result<B::T> {
    let d = trd_forward_with(b, &p.dec, lm_features, encoded, p.dims.heads)?;
    b.linear(&d, &p.head_w, &p.head_b)
}

/// Full reconstruction of the local window, generic over evaluation mode.
pub fn forward<B: Ops>(
    b: &mut B,
    p: &ModelParams<B::T>,
    pos: &PosTable,
    lm: &[f64],
    gm: &[f64],
) -> Result<B::T> {
    check_windows(&p.dims, lm, gm)?;
    let gm_f = embed_with(b, p, gm, pos.global_block())?;
    let encoded = encode_global_with(b, p, &gm_f)?;
    let lm_f = embed_with(b, p, lm, pos.local_block())?;
    decode_local_with(b, p, &lm_f, &encoded)
}

fn check_windows(dims: &crate::model::Dims, lm: &[f64], gm: &[f64]) -> Result<()> {
    if lm.len() != dims.lm || gm.len() != dims.gm {
        return Err(shape_err(
            "forward",
            format!(
                "windows of length ({}, {}) for lm={}, gm={}",
                lm.len(),
                gm.len(),
                dims.lm,
                dims.gm
            ),
        ));
    }
    Ok(())
}

/// Trained (or freshly initialized) model together with its positional table.
#[derive(Clone, Debug)]
pub struct Mtr {
    params: ModelParams,
    pos: PosTable,
}

impl Mtr {
    pub fn new(params: ModelParams) -> Result<Self> {
        params.dims.validate()?;
        let d = params.dims;
        let pos = PosTable::new(d.lm, d.gm, d.c)?;
        Ok(Self { params, pos })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    pub fn pos(&self) -> &PosTable {
        &self.pos
    }

    /// Features of a global window (oldest first), `gm x C`.
    pub fn embed_global(&self, gm: &[f64]) -> Result<Tensor2> {
        if gm.len() != self.params.dims.gm {
            return Err(shape_err("embed_global", format!("{} readings", gm.len())));
        }
        embed_with(&mut Eval, &self.params, gm, self.pos.global_block())
    }

    /// Features of a local window (oldest first), `lm x C`.
    pub fn embed_local(&self, lm: &[f64]) -> Result<Tensor2> {
        if lm.len() != self.params.dims.lm {
            return Err(shape_err("embed_local", format!("{} readings", lm.len())));
        }
        embed_with(&mut Eval, &self.params, lm, self.pos.local_block())
    }

    /// Compresses `gm x C` features into `e1 x C` tokens.
    pub fn encode_global(&self, gm_features: &Tensor2) -> Result<Tensor2> {
        let d = self.params.dims;
        if gm_features.cols() != d.c {
            return Err(shape_err(
                "encode_global",
                format!("{:?} features for C={}", gm_features.shape(), d.c),
            ));
        }
        encode_global_with(&mut Eval, &self.params, gm_features)
    }

    /// Reconstructs the local window from its features and the encoded
    /// global memory.
    pub fn decode_local(&self, lm_features: &Tensor2, encoded: &Tensor2) -> Result<Vec<f64>> {
        let d = self.params.dims;
        if lm_features.shape() != (d.lm, d.c) || encoded.cols() != d.c {
            return Err(shape_err(
                "decode_local",
                format!(
                    "local {:?} / encoded {:?}",
                    lm_features.shape(),
                    encoded.shape()
                ),
            ));
        }
        Ok(decode_local_with(&mut Eval, &self.params, lm_features, encoded)?.into_vec())
    }

    /// Reconstruction of the normalized local window given both windows.
    pub fn reconstruct(&self, lm: &[f64], gm: &[f64]) -> Result<Vec<f64>> {
        Ok(forward(&mut Eval, &self.params, &self.pos, lm, gm)?.into_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dims, ModelParams};
    use crate::nn::{grad_check, layer_norm, softmax, ParamRng, Tape};

    fn tiny_dims() -> Dims {
        Dims {
            c: 4,
            heads: 2,
            hidden: 4,
            lm: 2,
            gm: 4,
            e0: 3,
            e1: 2,
        }
    }

    fn series(n: usize, seed: u64) -> Vec<f64> {
        ParamRng::new(seed).uniform(1, n, 1.5).into_vec()
    }

    // Straight-line reference: explicit loops, no shared helpers.
    fn naive_linear(x: &Tensor2, w: &Tensor2, b: &Tensor2) -> Tensor2 {
        let mut out = Tensor2::zeros(x.rows(), w.cols());
        for i in 0..x.rows() {
            for j in 0..w.cols() {
                let mut s = b.get(0, j);
                for k in 0..x.cols() {
                    s += x.get(i, k) * w.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    fn naive_mha(
        p: &crate::model::AttnParams<Tensor2>,
        queries: &Tensor2,
        memory: &Tensor2,
        heads: usize,
    ) -> Tensor2 {
        let q = naive_linear(queries, &p.wq, &p.bq);
        let k = naive_linear(memory, &p.wk, &p.bk);
        let v = naive_linear(memory, &p.wv, &p.bv);
        let c = q.cols();
        let dh = c / heads;
        let mut cat = Tensor2::zeros(q.rows(), c);
        for h in 0..heads {
            for i in 0..q.rows() {
                let mut logits = vec![0.0; k.rows()];
                for (j, l) in logits.iter_mut().enumerate() {
                    for d in 0..dh {
                        *l += q.get(i, h * dh + d) * k.get(j, h * dh + d);
                    }
                    *l /= (dh as f64).sqrt();
                }
                let w = softmax(&logits).unwrap();
                for d in 0..dh {
                    let mut s = 0.0;
                    for (j, wj) in w.iter().enumerate() {
                        s += wj * v.get(j, h * dh + d);
                    }
                    cat.set(i, h * dh + d, s);
                }
            }
        }
        naive_linear(&cat, &p.wo, &p.bo)
    }

    fn naive_trd(tokens: &Tensor2, memory: &Tensor2, p: &TrdParams<Tensor2>, heads: usize) -> Tensor2 {
        let ln = |x: &Tensor2, n: &crate::model::NormParams<Tensor2>| {
            layer_norm(x, n.gain.data(), n.bias.data(), LN_EPS).unwrap()
        };
        let x1 = ln(&tokens.add(&naive_mha(&p.self_attn, tokens, tokens, heads)).unwrap(), &p.norm1);
        let x2 = ln(&x1.add(&naive_mha(&p.cross_attn, &x1, memory, heads)).unwrap(), &p.norm2);
        let h = naive_linear(&x2, &p.ffn.w1, &p.ffn.b1).map(|v| v.max(0.0));
        let f = naive_linear(&h, &p.ffn.w2, &p.ffn.b2);
        ln(&x2.add(&f).unwrap(), &p.norm3)
    }

    #[test]
    fn trd_matches_straight_line_oracle() {
        let mut params = ModelParams::init(Dims::default(), 21).unwrap();
        // non-trivial norms and biases
        let mut rng = ParamRng::new(22);
        params.enc1.norm2.gain = rng.uniform(1, 8, 1.0);
        params.enc1.cross_attn.bk = rng.uniform(1, 8, 0.5);
        params.enc1.ffn.b1 = rng.uniform(1, 8, 0.5);
        let tokens = rng.uniform(5, 8, 1.0);
        let memory = rng.uniform(11, 8, 1.0);
        let got = trd_forward(&tokens, &memory, &params.enc1, 2).unwrap();
        let want = naive_trd(&tokens, &memory, &params.enc1, 2);
        for (a, e) in got.data().iter().zip(want.data()) {
            assert!((a - e).abs() < 1e-9, "{a} vs {e}");
        }
    }

    #[test]
    fn trd_degenerate_single_token() {
        let params = ModelParams::init(tiny_dims(), 3).unwrap();
        let tokens = Tensor2::from_rows(&[vec![0.1, 0.2, 0.3, 0.4]]).unwrap();
        let memory = Tensor2::from_rows(&[vec![-1.0, 0.0, 1.0, 2.0]]).unwrap();
        let out = trd_forward(&tokens, &memory, &params.dec, 2).unwrap();
        assert_eq!(out.shape(), (1, 4));
        assert!(out.is_finite());
        assert!(trd_forward(&tokens, &Tensor2::zeros(2, 3), &params.dec, 2).is_err());
    }

    #[test]
    fn encode_shape_is_independent_of_gm() {
        for gm in [32, 64] {
            let dims = Dims { gm, ..Dims::default() };
            let m = Mtr::new(ModelParams::init(dims, 1).unwrap()).unwrap();
            let f = m.embed_global(&series(gm, 2)).unwrap();
            assert_eq!(m.encode_global(&f).unwrap().shape(), (8, 8));
        }
    }

    #[test]
    fn untrained_reconstruction_is_finite() {
        let m = Mtr::new(ModelParams::init(Dims::default(), 4).unwrap()).unwrap();
        let out = m.reconstruct(&series(8, 5), &series(32, 6)).unwrap();
        assert_eq!(out.len(), 8);
        assert!(out.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn deterministic_and_order_sensitive() {
        let m = Mtr::new(ModelParams::init(Dims::default(), 7).unwrap()).unwrap();
        let lm = series(8, 8);
        let gm = series(32, 9);
        let a = m.reconstruct(&lm, &gm).unwrap();
        let b = m.reconstruct(&lm, &gm).unwrap();
        assert_eq!(a, b);
        let mut permuted = gm.clone();
        permuted.reverse();
        let c = m.reconstruct(&lm, &permuted).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn decode_matches_forward() {
        let m = Mtr::new(ModelParams::init(Dims::default(), 12).unwrap()).unwrap();
        let lm = series(8, 13);
        let gm = series(32, 14);
        let enc = m.encode_global(&m.embed_global(&gm).unwrap()).unwrap();
        let dec = m.decode_local(&m.embed_local(&lm).unwrap(), &enc).unwrap();
        assert_eq!(dec, m.reconstruct(&lm, &gm).unwrap());
        assert!(m.reconstruct(&lm[..7], &gm).is_err());
    }

    #[test]
    fn full_model_gradient_matches_finite_differences() {
        let dims = tiny_dims();
        let params = ModelParams::init(dims, 31).unwrap();
        let pos = PosTable::new(dims.lm, dims.gm, dims.c).unwrap();
        let lm = series(dims.lm, 32);
        let gm = series(dims.gm, 33);
        let target = Tensor2::column(&lm);
        let err = grad_check(
            |t: &mut Tape, vars| {
                let mut it = vars.iter().copied();
                let pv = params.map(&mut |_| it.next().expect("one var per tensor"));
                let out = forward(t, &pv, &pos, &lm, &gm)?;
                let tv = t.leaf(target.clone());
                t.mse(out, tv)
            },
            &params.flat(),
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }
}
