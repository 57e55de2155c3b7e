//! Dense row-major tensors of 64-bit floats.
//!
//! `Tensor` is the single numeric currency of the crate. The primitive set
//! below (add, sub, mul_scalar, matmul, concat_last_dim, silu,
//! sin_cos_features, mean, sum_sq) is the complete vocabulary the velocity
//! networks are built from; every primitive has a matching backward rule on
//! the tape and a forward-mode rule on dual tensors.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that `data` fills `shape` exactly.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArg(format!(
                "tensor shape must be non-empty with positive dims, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidArg(format!(
                "tensor data length {} does not match shape {:?} (numel {})",
                data.len(),
                shape,
                numel
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Tensor::zeros(other.shape())
    }

    /// Scalar tensor of shape `[1]`.
    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Column vector of shape `[n, 1]`.
    pub fn column(values: &[f64]) -> Self {
        Tensor {
            shape: vec![values.len(), 1],
            data: values.to_vec(),
        }
    }

    /// Row vector of shape `[1, n]`.
    pub fn row(values: &[f64]) -> Self {
        Tensor {
            shape: vec![1, values.len()],
            data: values.to_vec(),
        }
    }

    /// 2-D tensor from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArg("from_rows: no rows".into()));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArg("from_rows: ragged rows".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            data.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Number of rows when viewed as a 2-D matrix.
    pub fn rows(&self) -> usize {
        if self.shape.len() == 1 {
            1
        } else {
            self.shape[..self.shape.len() - 1].iter().product()
        }
    }

    /// Size of the last dimension.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("non-empty shape")
    }

    /// Slice of row `i` when viewed as 2-D.
    pub fn row_slice(&self, i: usize) -> &[f64] {
        let w = self.last_dim();
        &self.data[i * w..(i + 1) * w]
    }

    /// NaN/Inf detection is a checked error, never silent.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite {
                context: context.to_string(),
            })
        }
    }

    fn same_shape(&self, rhs: &Tensor, op: &'static str) -> Result<()> {
        if self.shape == rhs.shape {
            Ok(())
        } else {
            Err(Error::Shape {
                op,
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            })
        }
    }

    /// Elementwise sum. The right operand may also be a suffix shape of the
    /// left (e.g. a `[out]` bias added to `[batch, out]`), in which case it is
    /// broadcast over the leading dimensions. This is the only broadcast the
    /// networks need.
    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.shape == rhs.shape {
            let data = self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a + b)
                .collect();
            return Ok(Tensor {
                shape: self.shape.clone(),
                data,
            });
        }
        if is_suffix(&rhs.shape, &self.shape) {
            let chunk = rhs.data.len();
            let mut data = self.data.clone();
            for block in data.chunks_mut(chunk) {
                for (d, b) in block.iter_mut().zip(&rhs.data) {
                    *d += b;
                }
            }
            return Ok(Tensor {
                shape: self.shape.clone(),
                data,
            });
        }
        Err(Error::Shape {
            op: "add",
            lhs: self.shape.clone(),
            rhs: rhs.shape.clone(),
        })
    }

    /// Elementwise difference of equal-shape tensors.
    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.same_shape(rhs, "sub")?;
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn mul_scalar(&self, s: f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// 2-D matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let mismatch = || Error::Shape {
            op: "matmul",
            lhs: self.shape.clone(),
            rhs: rhs.shape.clone(),
        };
        if self.shape.len() != 2 || rhs.shape.len() != 2 {
            return Err(mismatch());
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (rhs.shape[0], rhs.shape[1]);
        if k != k2 {
            return Err(mismatch());
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &self.data[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (p, &aip) in arow.iter().enumerate() {
                let brow = &rhs.data[p * n..(p + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += aip * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    /// Concatenation along the last dimension; all other dims must agree.
    pub fn concat_last_dim(&self, rhs: &Tensor) -> Result<Tensor> {
        let mismatch = || Error::Shape {
            op: "concat_last_dim",
            lhs: self.shape.clone(),
            rhs: rhs.shape.clone(),
        };
        if self.shape.len() != rhs.shape.len()
            || self.shape[..self.shape.len() - 1] != rhs.shape[..rhs.shape.len() - 1]
        {
            return Err(mismatch());
        }
        let (wa, wb) = (self.last_dim(), rhs.last_dim());
        let rows = self.rows();
        let mut data = Vec::with_capacity(rows * (wa + wb));
        for i in 0..rows {
            data.extend_from_slice(self.row_slice(i));
            data.extend_from_slice(rhs.row_slice(i));
        }
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = wa + wb;
        Ok(Tensor { shape, data })
    }

    /// Sigmoid-weighted linear unit, `x * sigmoid(x)`.
    pub fn silu(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| x * sigmoid(x)).collect(),
        }
    }

    /// Sinusoidal featurization of a `[.., 1]` input: the last dimension is
    /// replaced by `2 * freqs.len()` features laid out as all sines then all
    /// cosines, `[sin(f_0 x) .. sin(f_{F-1} x), cos(f_0 x) .. cos(f_{F-1} x)]`.
    pub fn sin_cos_features(&self, freqs: &[f64]) -> Result<Tensor> {
        if self.last_dim() != 1 || freqs.is_empty() {
            return Err(Error::Shape {
                op: "sin_cos_features",
                lhs: self.shape.clone(),
                rhs: vec![freqs.len()],
            });
        }
        let nf = freqs.len();
        let rows = self.rows();
        let mut data = vec![0.0; rows * 2 * nf];
        for (i, &x) in self.data.iter().enumerate() {
            let out = &mut data[i * 2 * nf..(i + 1) * 2 * nf];
            for (j, &f) in freqs.iter().enumerate() {
                let (s, c) = (f * x).sin_cos();
                out[j] = s;
                out[nf + j] = c;
            }
        }
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = 2 * nf;
        Ok(Tensor { shape, data })
    }

    /// Mean over all elements, as a scalar tensor.
    pub fn mean_all(&self) -> Tensor {
        let s: f64 = self.data.iter().sum();
        Tensor::scalar(s / self.data.len() as f64)
    }

    /// Sum of squares over all elements, as a scalar tensor.
    pub fn sum_sq(&self) -> Tensor {
        Tensor::scalar(self.data.iter().map(|v| v * v).sum())
    }

    /// 2-D transpose.
    pub fn transpose2d(&self) -> Result<Tensor> {
        if self.shape.len() != 2 {
            return Err(Error::Shape {
                op: "transpose2d",
                lhs: self.shape.clone(),
                rhs: vec![],
            });
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor {
            shape: vec![n, m],
            data,
        })
    }

    /// Multiplies row `i` (2-D view) by `scales[i]`.
    pub fn row_scale(&self, scales: &[f64]) -> Result<Tensor> {
        if self.rows() != scales.len() {
            return Err(Error::Shape {
                op: "row_scale",
                lhs: self.shape.clone(),
                rhs: vec![scales.len()],
            });
        }
        let w = self.last_dim();
        let mut data = self.data.clone();
        for (i, &s) in scales.iter().enumerate() {
            for d in &mut data[i * w..(i + 1) * w] {
                *d *= s;
            }
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Reduces to `suffix` by summing over the leading dimensions; adjoint of
    /// the broadcast in `add`.
    pub(crate) fn sum_to_suffix(&self, suffix: &[usize]) -> Result<Tensor> {
        if !is_suffix(suffix, &self.shape) {
            return Err(Error::Shape {
                op: "sum_to_suffix",
                lhs: self.shape.clone(),
                rhs: suffix.to_vec(),
            });
        }
        let chunk: usize = suffix.iter().product();
        let mut data = vec![0.0; chunk];
        for block in self.data.chunks(chunk) {
            for (d, b) in data.iter_mut().zip(block) {
                *d += b;
            }
        }
        Ok(Tensor {
            shape: suffix.to_vec(),
            data,
        })
    }
}

fn is_suffix(suffix: &[usize], full: &[usize]) -> bool {
    suffix.len() < full.len() && full[full.len() - suffix.len()..] == *suffix
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// d/dx silu(x) = sigmoid(x) * (1 + x * (1 - sigmoid(x)))
pub(crate) fn silu_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Euclidean norm of a slice.
pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Euclidean distance between two equal-length slices.
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_hand_value() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[3.0, 7.0]);
    }

    #[test]
    fn silu_at_zero() {
        let t = Tensor::scalar(0.0).silu();
        assert_eq!(t.data()[0], 0.0);
    }

    #[test]
    fn concat_shape_algebra() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 4]);
        assert_eq!(a.concat_last_dim(&b).unwrap().shape(), &[2, 7]);
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        match a.matmul(&b) {
            Err(Error::Shape { op, lhs, rhs }) => {
                assert_eq!(op, "matmul");
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![4, 2]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn add_broadcasts_bias_over_rows() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::new(vec![2], vec![10.0, 20.0]).unwrap();
        let c = a.add(&b).unwrap();
        assert_eq!(c.data(), &[11.0, 22.0, 13.0, 24.0]);
    }

    #[test]
    fn bad_data_length_rejected() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn finite_check_flags_nan() {
        let t = Tensor::new(vec![2], vec![1.0, f64::NAN]).unwrap();
        assert!(matches!(
            t.check_finite("test"),
            Err(Error::NonFinite { .. })
        ));
        assert!(Tensor::scalar(1.0).check_finite("test").is_ok());
    }

    #[test]
    fn sin_cos_layout() {
        let t = Tensor::column(&[0.0]);
        let f = t.sin_cos_features(&[1.0, 2.0]).unwrap();
        // sin block then cos block at x = 0.
        assert_eq!(f.data(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn sum_to_suffix_is_add_adjoint() {
        let g = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let s = g.sum_to_suffix(&[2]).unwrap();
        assert_eq!(s.data(), &[4.0, 6.0]);
    }
}
