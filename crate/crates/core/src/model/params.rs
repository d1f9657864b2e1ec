use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::nn::{ParamRng, Tape, Tensor2, Var};

/// Model dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Feature width after the embedding.
    pub c: usize,
    pub heads: usize,
    /// Feed-forward hidden width.
    pub hidden: usize,
    /// Local memory length.
    pub lm: usize,
    /// Global memory length.
    pub gm: usize,
    /// Tokens produced by the first compression stage.
    pub e0: usize,
    /// Tokens produced by the second compression stage.
    pub e1: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Self {
            c: 8,
            heads: 2,
            hidden: 8,
            lm: 8,
            gm: 32,
            e0: 16,
            e1: 8,
        }
    }
}

impl Dims {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.c == 0 || self.c % 2 != 0 {
            return bad(format!("feature width C must be even and positive, got {}", self.c));
        }
        if self.heads == 0 || self.c % self.heads != 0 {
            return bad(format!("head count {} must divide C={}", self.heads, self.c));
        }
        if self.hidden == 0 {
            return bad("hidden width must be positive".into());
        }
        if self.lm == 0 || self.lm >= self.gm {
            return bad(format!("need 0 < lm < gm (lm={}, gm={})", self.lm, self.gm));
        }
        if self.e1 == 0 || self.e1 > self.e0 || self.e0 >= self.gm {
            return bad(format!(
                "need 0 < e1 <= e0 < gm (e1={}, e0={}, gm={})",
                self.e1, self.e0, self.gm
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.c / self.heads
    }

    /// Total window length `lm + gm`.
    pub fn window(&self) -> usize {
        self.lm + self.gm
    }
}

/// Query/key/value/output projections of one multi-head attention. Heads
/// use consecutive column slices of width `C / heads`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttnParams<T> {
    pub wq: T,
    pub bq: T,
    pub wk: T,
    pub bk: T,
    pub wv: T,
    pub bv: T,
    pub wo: T,
    pub bo: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormParams<T> {
    pub gain: T,
    pub bias: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FfnParams<T> {
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
}

/// One transformer decoder unit: self-attention, cross-attention and a
/// feed-forward block, each followed by residual add and layer norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrdParams<T> {
    pub self_attn: AttnParams<T>,
    pub cross_attn: AttnParams<T>,
    pub ffn: FfnParams<T>,
    pub norm1: NormParams<T>,
    pub norm2: NormParams<T>,
    pub norm3: NormParams<T>,
}

/// All learned weights. `T` is [`Tensor2`] for stored parameters and a tape
/// handle while training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T = Tensor2> {
    pub dims: Dims,
    /// `1 x C` scalar-to-feature embedding, shared by both memories.
    pub embed_w: T,
    pub embed_b: T,
    /// Learned input tokens of the first compression stage, `e0 x C`.
    pub tokens0: T,
    /// Learned input tokens of the second compression stage, `e1 x C`.
    pub tokens1: T,
    pub enc1: TrdParams<T>,
    pub enc2: TrdParams<T>,
    pub dec: TrdParams<T>,
    /// `C x 1` output head.
    pub head_w: T,
    pub head_b: T,
}

impl<T> AttnParams<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> AttnParams<U> {
        AttnParams {
            wq: f(&self.wq),
            bq: f(&self.bq),
            wk: f(&self.wk),
            bk: f(&self.bk),
            wv: f(&self.wv),
            bv: f(&self.bv),
            wo: f(&self.wo),
            bo: f(&self.bo),
        }
    }

    fn refs<'a>(&'a self, out: &mut Vec<&'a T>) {
        out.extend([
            &self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.wo, &self.bo,
        ]);
    }
}

impl<T> NormParams<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> NormParams<U> {
        NormParams {
            gain: f(&self.gain),
            bias: f(&self.bias),
        }
    }

    fn refs<'a>(&'a self, out: &mut Vec<&'a T>) {
        out.extend([&self.gain, &self.bias]);
    }
}

impl<T> FfnParams<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> FfnParams<U> {
        FfnParams {
            w1: f(&self.w1),
            b1: f(&self.b1),
            w2: f(&self.w2),
            b2: f(&self.b2),
        }
    }

    fn refs<'a>(&'a self, out: &mut Vec<&'a T>) {
        out.extend([&self.w1, &self.b1, &self.w2, &self.b2]);
    }
}

impl<T> TrdParams<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> TrdParams<U> {
        TrdParams {
            self_attn: self.self_attn.map(f),
            cross_attn: self.cross_attn.map(f),
            ffn: self.ffn.map(f),
            norm1: self.norm1.map(f),
            norm2: self.norm2.map(f),
            norm3: self.norm3.map(f),
        }
    }

    fn refs<'a>(&'a self, out: &mut Vec<&'a T>) {
        self.self_attn.refs(out);
        self.cross_attn.refs(out);
        self.ffn.refs(out);
        self.norm1.refs(out);
        self.norm2.refs(out);
        self.norm3.refs(out);
    }
}

impl<T> ModelParams<T> {
    /// Applies `f` to every tensor, in the fixed order of [`ModelParams::refs`].
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> ModelParams<U> {
        ModelParams {
            dims: self.dims,
            embed_w: f(&self.embed_w),
            embed_b: f(&self.embed_b),
            tokens0: f(&self.tokens0),
            tokens1: f(&self.tokens1),
            enc1: self.enc1.map(f),
            enc2: self.enc2.map(f),
            dec: self.dec.map(f),
            head_w: f(&self.head_w),
            head_b: f(&self.head_b),
        }
    }

    pub fn refs(&self) -> Vec<&T> {
        let mut out = vec![&self.embed_w, &self.embed_b, &self.tokens0, &self.tokens1];
        self.enc1.refs(&mut out);
        self.enc2.refs(&mut out);
        self.dec.refs(&mut out);
        out.push(&self.head_w);
        out.push(&self.head_b);
        out
    }
}

fn init_attn(rng: &mut ParamRng, c: usize) -> AttnParams<Tensor2> {
    AttnParams {
        wq: rng.glorot(c, c),
        bq: Tensor2::zeros(1, c),
        wk: rng.glorot(c, c),
        bk: Tensor2::zeros(1, c),
        wv: rng.glorot(c, c),
        bv: Tensor2::zeros(1, c),
        wo: rng.glorot(c, c),
        bo: Tensor2::zeros(1, c),
    }
}

fn init_norm(c: usize) -> NormParams<Tensor2> {
    NormParams {
        gain: Tensor2::filled(1, c, 1.0),
        bias: Tensor2::zeros(1, c),
    }
}

fn init_trd(rng: &mut ParamRng, dims: &Dims) -> TrdParams<Tensor2> {
    TrdParams {
        self_attn: init_attn(rng, dims.c),
        cross_attn: init_attn(rng, dims.c),
        ffn: FfnParams {
            w1: rng.glorot(dims.c, dims.hidden),
            b1: Tensor2::zeros(1, dims.hidden),
            w2: rng.glorot(dims.hidden, dims.c),
            b2: Tensor2::zeros(1, dims.c),
        },
        norm1: init_norm(dims.c),
        norm2: init_norm(dims.c),
        norm3: init_norm(dims.c),
    }
}

impl ModelParams<Tensor2> {
    /// Seeded Glorot-uniform weights, zero biases, unit layer-norm gains.
    pub fn init(dims: Dims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let mut rng = ParamRng::new(seed);
        Ok(Self {
            dims,
            embed_w: rng.glorot(1, dims.c),
            embed_b: Tensor2::zeros(1, dims.c),
            tokens0: rng.glorot(dims.e0, dims.c),
            tokens1: rng.glorot(dims.e1, dims.c),
            enc1: init_trd(&mut rng, &dims),
            enc2: init_trd(&mut rng, &dims),
            dec: init_trd(&mut rng, &dims),
            head_w: rng.glorot(dims.c, 1),
            head_b: Tensor2::zeros(1, 1),
        })
    }

    /// Copies of every tensor in canonical order.
    pub fn flat(&self) -> Vec<Tensor2> {
        self.refs().into_iter().cloned().collect()
    }

    /// Replaces every tensor, in canonical order, checking shapes.
    pub fn with_tensors(&self, tensors: Vec<Tensor2>) -> Result<Self> {
        let expected = self.refs();
        if tensors.len() != expected.len() {
            return Err(shape_err(
                "ModelParams::with_tensors",
                format!("{} tensors for {} slots", tensors.len(), expected.len()),
            ));
        }
        for (i, (t, e)) in tensors.iter().zip(&expected).enumerate() {
            if t.shape() != e.shape() {
                return Err(shape_err(
                    "ModelParams::with_tensors",
                    format!("slot {i}: {:?} vs {:?}", t.shape(), e.shape()),
                ));
            }
        }
        let mut it = tensors.into_iter();
        Ok(self.map(&mut |_| it.next().expect("count checked")))
    }

    /// Registers every tensor as a leaf on `tape`.
    pub fn on_tape(&self, tape: &mut Tape) -> ModelParams<Var> {
        self.map(&mut |t| tape.leaf(t.clone()))
    }

    pub fn parameter_count(&self) -> usize {
        self.refs().iter().map(|t| t.data().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.refs().iter().all(|t| t.is_finite())
    }
}
