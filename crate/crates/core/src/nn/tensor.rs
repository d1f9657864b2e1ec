//! Dense row-major matrices and the plain (non-differentiated) kernels.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// A dense `rows x cols` matrix of `f64`, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(shape_err(
                "Tensor2::from_vec",
                format!("{rows}x{cols} needs {} elements, got {}", rows * cols, data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(shape_err("Tensor2::from_rows", "ragged rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// A single row holding `v`.
    pub fn row_vector(v: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: v.len(),
            data: v.to_vec(),
        }
    }

    /// A single column holding `v`.
    pub fn column(v: &[f64]) -> Self {
        Self {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Tensor2 {
        let mut out = Tensor2::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self · other`
    pub fn matmul(&self, other: &Tensor2) -> Result<Tensor2> {
        if self.cols != other.rows {
            return Err(shape_err(
                "matmul",
                format!("{:?} x {:?}", self.shape(), other.shape()),
            ));
        }
        let mut out = Tensor2::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let o_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`
    pub fn matmul_t(&self, other: &Tensor2) -> Result<Tensor2> {
        if self.cols != other.cols {
            return Err(shape_err(
                "matmul_t",
                format!("{:?} x {:?}ᵀ", self.shape(), other.shape()),
            ));
        }
        let mut out = Tensor2::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a, other.row(j));
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`
    pub fn t_matmul(&self, other: &Tensor2) -> Result<Tensor2> {
        if self.rows != other.rows {
            return Err(shape_err(
                "t_matmul",
                format!("{:?}ᵀ x {:?}", self.shape(), other.shape()),
            ));
        }
        let mut out = Tensor2::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let o_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Tensor2) -> Result<Tensor2> {
        self.zip_with("add", other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor2) -> Result<Tensor2> {
        self.zip_with("sub", other, |a, b| a - b)
    }

    pub fn add_assign(&mut self, other: &Tensor2) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(shape_err(
                "add_assign",
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Adds the `1 x cols` tensor `row` to every row.
    pub fn add_row(&self, row: &Tensor2) -> Result<Tensor2> {
        if row.rows != 1 || row.cols != self.cols {
            return Err(shape_err(
                "add_row",
                format!("{:?} + row {:?}", self.shape(), row.shape()),
            ));
        }
        let mut out = self.clone();
        for r in 0..out.rows {
            for (o, b) in out.row_mut(r).iter_mut().zip(&row.data) {
                *o += b;
            }
        }
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> Tensor2 {
        self.map(|x| x * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor2 {
        Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Tensor2> {
        if start + len > self.cols {
            return Err(shape_err(
                "slice_cols",
                format!("[{start}, {}) of {} columns", start + len, self.cols),
            ));
        }
        let mut out = Tensor2::zeros(self.rows, len);
        for r in 0..self.rows {
            out.row_mut(r)
                .copy_from_slice(&self.row(r)[start..start + len]);
        }
        Ok(out)
    }

    pub fn concat_cols(parts: &[&Tensor2]) -> Result<Tensor2> {
        let rows = parts.first().map_or(0, |p| p.rows);
        if parts.iter().any(|p| p.rows != rows) {
            return Err(shape_err("concat_cols", "row counts differ"));
        }
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut out = Tensor2::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for p in parts {
                out.row_mut(r)[off..off + p.cols].copy_from_slice(p.row(r));
                off += p.cols;
            }
        }
        Ok(out)
    }

    /// Column sums as a `1 x cols` tensor.
    pub fn sum_rows(&self) -> Tensor2 {
        let mut out = Tensor2::zeros(1, self.cols);
        for r in 0..self.rows {
            for (o, x) in out.data.iter_mut().zip(self.row(r)) {
                *o += x;
            }
        }
        out
    }

    fn zip_with(
        &self,
        op: &'static str,
        other: &Tensor2,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor2> {
        if self.shape() != other.shape() {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y = x·W + b`, with `b` broadcast over rows.
pub fn linear_forward(x: &Tensor2, w: &Tensor2, b: &[f64]) -> Result<Tensor2> {
    if b.len() != w.cols() {
        return Err(shape_err(
            "linear_forward",
            format!("bias length {} for {} outputs", b.len(), w.cols()),
        ));
    }
    x.matmul(w)?.add_row(&Tensor2::row_vector(b))
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Empty("softmax"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("softmax input"));
    }
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

pub fn softmax_rows(x: &Tensor2) -> Tensor2 {
    let mut out = x.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

/// Per-row normalization to zero mean and unit (population) variance, then
/// `gain * x̂ + bias`.
pub fn layer_norm(x: &Tensor2, gain: &[f64], bias: &[f64], eps: f64) -> Result<Tensor2> {
    let (out, _, _) = layer_norm_parts(x, gain, bias, eps)?;
    Ok(out)
}

/// Layer norm that also returns the normalized rows and each row's inverse
/// standard deviation (the backward pass needs both).
pub(crate) fn layer_norm_parts(
    x: &Tensor2,
    gain: &[f64],
    bias: &[f64],
    eps: f64,
) -> Result<(Tensor2, Tensor2, Vec<f64>)> {
    let n = x.cols();
    if gain.len() != n || bias.len() != n {
        return Err(shape_err(
            "layer_norm",
            format!("gain {} / bias {} for {n} columns", gain.len(), bias.len()),
        ));
    }
    let mut xhat = Tensor2::zeros(x.rows(), n);
    let mut out = Tensor2::zeros(x.rows(), n);
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let inv = 1.0 / (var + eps).sqrt();
        inv_std.push(inv);
        for c in 0..n {
            let h = (row[c] - mean) * inv;
            xhat.set(r, c, h);
            out.set(r, c, h * gain[c] + bias[c]);
        }
    }
    Ok((out, xhat, inv_std))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn linear_forward_examples() {
        let x = Tensor2::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let eye = Tensor2::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(linear_forward(&x, &eye, &[0.0, 0.0]).unwrap().data(), &[1.0, 2.0]);

        let ones = Tensor2::filled(2, 2, 1.0);
        assert_eq!(linear_forward(&x, &ones, &[1.0, 1.0]).unwrap().data(), &[4.0, 4.0]);

        let zero = Tensor2::zeros(1, 2);
        let w = Tensor2::from_rows(&[vec![0.3, -7.0], vec![2.0, 9.5]]).unwrap();
        assert_eq!(linear_forward(&zero, &w, &[3.0, 5.0]).unwrap().data(), &[3.0, 5.0]);
    }

    #[test]
    fn linear_forward_rejects_bad_shapes() {
        let x = Tensor2::zeros(1, 3);
        let w = Tensor2::zeros(2, 2);
        assert!(matches!(linear_forward(&x, &w, &[0.0, 0.0]), Err(Error::Shape { .. })));
        let x = Tensor2::zeros(1, 2);
        assert!(linear_forward(&x, &w, &[0.0]).is_err());
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[42.0]).unwrap(), vec![1.0]);
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        let s = softmax(&[1.0, 2.0]).unwrap();
        assert_abs_diff_eq!(s[0], 0.26894, epsilon = 1e-5);
        assert_abs_diff_eq!(s[1], 0.73106, epsilon = 1e-5);
        assert!(matches!(softmax(&[]), Err(Error::Empty(_))));
        // max subtraction keeps huge logits finite
        let s = softmax(&[1000.0, 1000.0]).unwrap();
        assert_abs_diff_eq!(s[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn layer_norm_examples() {
        let x = Tensor2::from_rows(&[vec![1.0, 1.0, 1.0]]).unwrap();
        let y = layer_norm(&x, &[1.0; 3], &[0.0; 3], 1e-5).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.0]);

        let x = Tensor2::from_rows(&[vec![-1.0, 1.0]]).unwrap();
        let y = layer_norm(&x, &[1.0; 2], &[0.0; 2], 1e-12).unwrap();
        assert_abs_diff_eq!(y.get(0, 0), -1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(y.get(0, 1), 1.0, epsilon = 1e-6);

        let x = Tensor2::from_rows(&[vec![3.0, -2.0, 8.0], vec![0.1, 0.2, 0.3]]).unwrap();
        let y = layer_norm(&x, &[0.0; 3], &[0.5, 1.5, 2.5], 1e-5).unwrap();
        for r in 0..2 {
            assert_eq!(y.row(r), &[0.5, 1.5, 2.5]);
        }
        assert!(layer_norm(&x, &[1.0; 2], &[0.0; 3], 1e-5).is_err());
    }

    fn small_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor2> {
        prop::collection::vec(-10.0f64..10.0, rows * cols)
            .prop_map(move |d| Tensor2::from_vec(rows, cols, d).unwrap())
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_permutation_equivariant(
            v in prop::collection::vec(-50.0f64..50.0, 1..20),
            rot in 0usize..20,
        ) {
            let s = softmax(&v).unwrap();
            prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(s.iter().all(|&p| p > 0.0));
            let k = rot % v.len();
            let mut rotated = v.clone();
            rotated.rotate_left(k);
            let mut s_rot = s.clone();
            s_rot.rotate_left(k);
            let s2 = softmax(&rotated).unwrap();
            for (a, b) in s2.iter().zip(&s_rot) {
                prop_assert!((a - b).abs() < 1e-15);
            }
        }

        #[test]
        fn linear_forward_is_affine(
            x1 in small_matrix(3, 4),
            x2 in small_matrix(3, 4),
            w in small_matrix(4, 2),
            b in prop::collection::vec(-5.0f64..5.0, 2),
        ) {
            let lhs = linear_forward(&x1.add(&x2).unwrap(), &w, &b).unwrap();
            let bias = Tensor2::zeros(3, 2).add_row(&Tensor2::row_vector(&b)).unwrap();
            let rhs = linear_forward(&x1, &w, &b).unwrap()
                .add(&linear_forward(&x2, &w, &b).unwrap()).unwrap()
                .sub(&bias).unwrap();
            for (a, e) in lhs.data().iter().zip(rhs.data()) {
                prop_assert!((a - e).abs() < 1e-9);
            }
        }
    }
}
