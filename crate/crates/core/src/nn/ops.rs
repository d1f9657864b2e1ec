//! A small op vocabulary shared by plain evaluation and the tape, so model
//! code is written once and either executed directly or recorded for
//! differentiation.

use crate::error::Result;
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::{layer_norm, softmax_rows, Tensor2};

pub trait Ops {
    type T: Clone;

    fn constant(&mut self, t: Tensor2) -> Self::T;
    fn value<'a>(&'a self, t: &'a Self::T) -> &'a Tensor2;

    fn matmul(&mut self, a: &Self::T, b: &Self::T) -> Result<Self::T>;
    /// `a · bᵀ`
    fn matmul_t(&mut self, a: &Self::T, b: &Self::T) -> Result<Self::T>;
    fn add(&mut self, a: &Self::T, b: &Self::T) -> Result<Self::T>;
    fn add_row(&mut self, a: &Self::T, row: &Self::T) -> Result<Self::T>;
    fn scale(&mut self, a: &Self::T, s: f64) -> Self::T;
    fn relu(&mut self, a: &Self::T) -> Self::T;
    fn softmax_rows(&mut self, a: &Self::T) -> Self::T;
    fn layer_norm(
        &mut self,
        x: &Self::T,
        gain: &Self::T,
        bias: &Self::T,
        eps: f64,
    ) -> Result<Self::T>;
    fn slice_cols(&mut self, a: &Self::T, start: usize, len: usize) -> Result<Self::T>;
    fn concat_cols(&mut self, parts: &[Self::T]) -> Result<Self::T>;

    /// `x·W + b`
    fn linear(&mut self, x: &Self::T, w: &Self::T, b: &Self::T) -> Result<Self::T> {
        let y = self.matmul(x, w)?;
        self.add_row(&y, b)
    }
}

/// Direct evaluation, no recording.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eval;

impl Ops for Eval {
    type T = Tensor2;

    fn constant(&mut self, t: Tensor2) -> Tensor2 {
        t
    }

    fn value<'a>(&'a self, t: &'a Tensor2) -> &'a Tensor2 {
        t
    }

    fn matmul(&mut self, a: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
        a.matmul(b)
    }

    fn matmul_t(&mut self, a: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
        a.matmul_t(b)
    }

    fn add(&mut self, a: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
        a.add(b)
    }

    fn add_row(&mut self, a: &Tensor2, row: &Tensor2) -> Result<Tensor2> {
        a.add_row(row)
    }

    fn scale(&mut self, a: &Tensor2, s: f64) -> Tensor2 {
        a.scale(s)
    }

    fn relu(&mut self, a: &Tensor2) -> Tensor2 {
        a.map(|x| x.max(0.0))
    }

    fn softmax_rows(&mut self, a: &Tensor2) -> Tensor2 {
        softmax_rows(a)
    }

    fn layer_norm(
        &mut self,
        x: &Tensor2,
        gain: &Tensor2,
        bias: &Tensor2,
        eps: f64,
    ) -> Result<Tensor2> {
        layer_norm(x, gain.data(), bias.data(), eps)
    }

    fn slice_cols(&mut self, a: &Tensor2, start: usize, len: usize) -> Result<Tensor2> {
        a.slice_cols(start, len)
    }

    fn concat_cols(&mut self, parts: &[Tensor2]) -> Result<Tensor2> {
        let refs: Vec<&Tensor2> = parts.iter().collect();
        Tensor2::concat_cols(&refs)
    }
}

impl Ops for Tape {
    type T = Var;

    fn constant(&mut self, t: Tensor2) -> Var {
        self.leaf(t)
    }

    fn value<'a>(&'a self, t: &'a Var) -> &'a Tensor2 {
        Tape::value(self, *t)
    }

    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        Tape::matmul(self, *a, *b)
    }

    fn matmul_t(&mut self, a: &Var, b: &Var) -> Result<Var> {
        Tape::matmul_t(self, *a, *b)
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        Tape::add(self, *a, *b)
    }

    fn add_row(&mut self, a: &Var, row: &Var) -> Result<Var> {
        Tape::add_row(self, *a, *row)
    }

    fn scale(&mut self, a: &Var, s: f64) -> Var {
        Tape::scale(self, *a, s)
    }

    fn relu(&mut self, a: &Var) -> Var {
        Tape::relu(self, *a)
    }

    fn softmax_rows(&mut self, a: &Var) -> Var {
        Tape::softmax_rows(self, *a)
    }

    fn layer_norm(&mut self, x: &Var, gain: &Var, bias: &Var, eps: f64) -> Result<Var> {
        Tape::layer_norm(self, *x, *gain, *bias, eps)
    }

    fn slice_cols(&mut self, a: &Var, start: usize, len: usize) -> Result<Var> {
        Tape::slice_cols(self, *a, start, len)
    }

    fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        Tape::concat_cols(self, parts)
    }
}
