use crate::error::{shape_err, Result};
use crate::model::params::AttnParams;
use crate::nn::{softmax_rows, Ops, Tensor2};

/// Scaled dot-product attention, `softmax(Q·Kᵀ / sqrt(d))·V` with `d` the
/// query width.
pub fn attention(q: &Tensor2, k: &Tensor2, v: &Tensor2) -> Result<Tensor2> {
    if k.rows() != v.rows() {
        return Err(shape_err(
            "attention",
            format!("{} keys but {} values", k.rows(), v.rows()),
        ));
    }
    let logits = q.matmul_t(k)?.scale(1.0 / (q.cols() as f64).sqrt());
    softmax_rows(&logits).matmul(v)
}

pub(crate) fn attend<B: Ops>(b: &mut B, q: &B::T, k: &B::T, v: &B::T) -> Result<B::T> {
    let d = b.value(q).cols() as f64;
    let logits = b.matmul_t(q, k)?;
    let logits = b.scale(&logits, 1.0 / d.sqrt());
    let w = b.softmax_rows(&logits);
    b.matmul(&w, v)
}

/// Concatenated per-head attention outputs, before the output projection.
pub(crate) fn heads_concat<B: Ops>(
    b: &mut B,
    p: &AttnParams<B::T>,
    queries: &B::T,
    memory: &B::T,
    heads: usize,
) -> Result<B::T> {
    let q = b.linear(queries, &p.wq, &p.bq)?;
    let k = b.linear(memory, &p.wk, &p.bk)?;
    let v = b.linear(memory, &p.wv, &p.bv)?;
    let c = b.value(&q).cols();
    let dh = c / heads;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = b.slice_cols(&q, h * dh, dh)?;
        let kh = b.slice_cols(&k, h * dh, dh)?;
        let vh = b.slice_cols(&v, h * dh, dh)?;
        outs.push(attend(b, &qh, &kh, &vh)?);
    }
    if outs.len() == 1 {
        return Ok(outs.pop().expect("one head"));
    }
    b.concat_cols(&outs)
}

pub(crate) fn multi_head_attention<B: Ops>(
    b: &mut B,
    p: &AttnParams<B::T>,
    queries: &B::T,
    memory: &B::T,
    heads: usize,
) -> Result<B::T> {
    let cat = heads_concat(b, p, queries, memory, heads)?;
    b.linear(&cat, &p.wo, &p.bo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Eval, ParamRng};
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_key_returns_value() {
        let q = Tensor2::from_rows(&[vec![3.0, -1.0], vec![0.2, 9.0]]).unwrap();
        let k = Tensor2::from_rows(&[vec![0.5, 0.5]]).unwrap();
        let v = Tensor2::from_rows(&[vec![7.0, -2.0]]).unwrap();
        let out = attention(&q, &k, &v).unwrap();
        for r in 0..2 {
            assert_eq!(out.row(r), &[7.0, -2.0]);
        }
    }

    #[test]
    fn scalar_two_keys() {
        let q = Tensor2::from_rows(&[vec![1.0]]).unwrap();
        let k = Tensor2::column(&[1.0, 2.0]);
        let v = Tensor2::column(&[10.0, 20.0]);
        let out = attention(&q, &k, &v).unwrap();
        assert_abs_diff_eq!(out.get(0, 0), 17.311, epsilon = 1e-3);
    }

    #[test]
    fn orthogonal_keys_favor_match() {
        // brute-force evaluation on an orthogonal basis with Q = K = V
        let k = Tensor2::from_rows(&[
            vec![3.0, 0.0, 0.0],
            vec![0.0, 3.0, 0.0],
            vec![0.0, 0.0, 3.0],
        ])
        .unwrap();
        let out = attention(&k, &k, &k).unwrap();
        for i in 0..3 {
            let row = out.row(i);
            for j in 0..3 {
                if j != i {
                    assert!(row[i] > row[j]);
                }
            }
        }
    }

    #[test]
    fn shape_mismatch() {
        let q = Tensor2::zeros(2, 3);
        let k = Tensor2::zeros(4, 2);
        assert!(attention(&q, &k, &Tensor2::zeros(4, 2)).is_err());
        let k = Tensor2::zeros(4, 3);
        assert!(attention(&q, &k, &Tensor2::zeros(3, 3)).is_err());
    }

    #[test]
    fn identical_memory_rows_give_convex_value() {
        // Every head averages identical value rows, so the concatenation
        // equals the projected value regardless of the queries.
        let mut rng = ParamRng::new(5);
        let c = 4;
        let p = AttnParams {
            wq: rng.glorot(c, c),
            bq: rng.uniform(1, c, 0.1),
            wk: rng.glorot(c, c),
            bk: rng.uniform(1, c, 0.1),
            wv: rng.glorot(c, c),
            bv: rng.uniform(1, c, 0.1),
            wo: rng.glorot(c, c),
            bo: rng.uniform(1, c, 0.1),
        };
        let row = vec![0.3, -1.2, 0.8, 2.0];
        let memory = Tensor2::from_rows(&vec![row.clone(); 5]).unwrap();
        let queries = rng.uniform(3, c, 2.0);
        let cat = heads_concat(&mut Eval, &p, &queries, &memory, 2).unwrap();
        let v = Tensor2::row_vector(&row).matmul(&p.wv).unwrap().add(&p.bv).unwrap();
        for r in 0..3 {
            for (a, e) in cat.row(r).iter().zip(v.data()) {
                assert_abs_diff_eq!(a, e, epsilon = 1e-12);
            }
        }
    }
}
