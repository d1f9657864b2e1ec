//! Reverse-mode differentiation over [`Tensor2`] values.
//!
//! Every op appends a node holding its value and the indices of its inputs.
//! [`Tape::backward`] walks the nodes in reverse, accumulating adjoints.

use crate::error::{shape_err, Result};
use crate::nn::tensor::{layer_norm_parts, softmax_rows, Tensor2};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    SoftmaxRows(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Tensor2,
        inv_std: Vec<f64>,
    },
    SliceCols {
        src: usize,
        start: usize,
    },
    ConcatCols(Vec<usize>),
    Mse(usize, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor2,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor2>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`; zeros if `v` did not influence it.
    pub fn wrt(&self, v: Var) -> Tensor2 {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor2::zeros(r, c)
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor2, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a.0, b.0)))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul_t(self.value(b))?;
        Ok(self.push(v, Op::MatMulT(a.0, b.0)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a.0, b.0)))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let v = self.value(a).add_row(self.value(row))?;
        Ok(self.push(v, Op::AddRow(a.0, row.0)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a.0, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a.0))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        self.push(v, Op::SoftmaxRows(a.0))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (out, xhat, inv_std) = layer_norm_parts(
            self.value(x),
            self.value(gain).data(),
            self.value(bias).data(),
            eps,
        )?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(a).slice_cols(start, len)?;
        Ok(self.push(v, Op::SliceCols { src: a.0, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor2> = parts.iter().map(|p| self.value(*p)).collect();
        let v = Tensor2::concat_cols(&vals)?;
        Ok(self.push(v, Op::ConcatCols(parts.iter().map(|p| p.0).collect())))
    }

    /// Mean of squared differences, as a `1 x 1` node.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() || va.data().is_empty() {
            return Err(shape_err(
                "mse",
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let n = va.data().len() as f64;
        let s = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n;
        Ok(self.push(Tensor2::filled(1, 1, s), Op::Mse(a.0, b.0)))
    }

    /// Back-propagates from the scalar node `root` (seeded with 1).
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor2>> = vec![None; root.0 + 1];
        let (r, c) = self.value(root).shape();
        grads[root.0] = Some(Tensor2::filled(r, c, 1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = g.matmul_t(&self.nodes[*b].value).expect("matmul grad");
                    let db = self.nodes[*a].value.t_matmul(&g).expect("matmul grad");
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MatMulT(a, b) => {
                    // c = a bᵀ
                    let da = g.matmul(&self.nodes[*b].value).expect("matmul_t grad");
                    let db = g.t_matmul(&self.nodes[*a].value).expect("matmul_t grad");
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::AddRow(a, row) => {
                    accumulate(&mut grads, *row, g.sum_rows());
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.scale(*s)),
                Op::Relu(a) => {
                    let x = &self.nodes[*a].value;
                    let mut d = g.clone();
                    for (dv, xv) in d.data_mut().iter_mut().zip(x.data()) {
                        if *xv <= 0.0 {
                            *dv = 0.0;
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut d = Tensor2::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let inner: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for (j, out) in d.row_mut(r).iter_mut().enumerate() {
                            *out = yr[j] * (gr[j] - inner);
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gvals = self.nodes[*gain].value.data();
                    let n = xhat.cols() as f64;
                    let mut dx = Tensor2::zeros(xhat.rows(), xhat.cols());
                    let mut dgain = Tensor2::zeros(1, xhat.cols());
                    for r in 0..xhat.rows() {
                        let gr = g.row(r);
                        let hr = xhat.row(r);
                        let dh: Vec<f64> = gr.iter().zip(gvals).map(|(a, b)| a * b).collect();
                        let sum_dh: f64 = dh.iter().sum();
                        let sum_dh_h: f64 = dh.iter().zip(hr).map(|(a, b)| a * b).sum();
                        for (j, out) in dx.row_mut(r).iter_mut().enumerate() {
                            *out = inv_std[r] / n * (n * dh[j] - sum_dh - hr[j] * sum_dh_h);
                        }
                        for (j, dgv) in dgain.data_mut().iter_mut().enumerate() {
                            *dgv += gr[j] * hr[j];
                        }
                    }
                    accumulate(&mut grads, *bias, g.sum_rows());
                    accumulate(&mut grads, *gain, dgain);
                    accumulate(&mut grads, *x, dx);
                }
                Op::SliceCols { src, start } => {
                    let (sr, sc) = self.nodes[*src].value.shape();
                    let mut d = Tensor2::zeros(sr, sc);
                    for r in 0..sr {
                        d.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *src, d);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.nodes[*p].value.cols();
                        let d = g.slice_cols(off, w).expect("concat grad");
                        off += w;
                        accumulate(&mut grads, *p, d);
                    }
                }
                Op::Mse(a, b) => {
                    let va = &self.nodes[*a].value;
                    let vb = &self.nodes[*b].value;
                    let k = 2.0 * g.get(0, 0) / va.data().len() as f64;
                    let da = va.sub(vb).expect("mse grad").scale(k);
                    let db = da.scale(-1.0);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
            }
            // Keep leaf adjoints for the caller.
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }

        Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor2>], idx: usize, d: Tensor2) {
    match &mut grads[idx] {
        Some(g) => g.add_assign(&d).expect("gradient shapes agree"),
        slot @ None => *slot = Some(d),
    }
}
