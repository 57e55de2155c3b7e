//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Every operation appends a node holding its output value and the ids of its
//! inputs; because inputs always precede outputs, walking the tape backwards
//! visits nodes in reverse topological order exactly once.

use crate::error::{Error, Result};
use crate::numcore::engine::Engine;
use crate::numcore::tensor::{silu_prime, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    MulScalar(NodeId, f64),
    Matmul(NodeId, NodeId),
    ConcatLastDim(NodeId, NodeId),
    Silu(NodeId),
    SinCos(NodeId, Vec<f64>),
    Mean(NodeId),
    SumSq(NodeId),
}

struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    /// Registers a leaf (parameter or input). Gradients can be queried for
    /// any leaf after `backward`.
    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Leaf, t)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Reverse pass from a scalar loss node. Every node on the tape receives
    /// a gradient; leaves the loss does not depend on get zeros.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(Error::NonScalarLoss {
                shape: loss_value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(loss_value.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match &self.nodes[idx].op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    let gb = if self.value(*b).shape() == g.shape() {
                        g.clone()
                    } else {
                        g.sum_to_suffix(self.value(*b).shape())?
                    };
                    accumulate(&mut grads[a.0], g)?;
                    accumulate(&mut grads[b.0], gb)?;
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[b.0], g.mul_scalar(-1.0))?;
                    accumulate(&mut grads[a.0], g)?;
                }
                Op::MulScalar(a, s) => {
                    accumulate(&mut grads[a.0], g.mul_scalar(*s))?;
                }
                Op::Matmul(a, b) => {
                    let bv = self.value(*b).transpose2d()?;
                    let av = self.value(*a).transpose2d()?;
                    accumulate(&mut grads[a.0], g.matmul(&bv)?)?;
                    accumulate(&mut grads[b.0], av.matmul(&g)?)?;
                }
                Op::ConcatLastDim(a, b) => {
                    let (ga, gb) = split_last_dim(&g, self.value(*a).last_dim());
                    accumulate(&mut grads[a.0], ga)?;
                    accumulate(&mut grads[b.0], gb)?;
                }
                Op::Silu(a) => {
                    let x = self.value(*a);
                    let mut d = g.clone();
                    for (dv, xv) in d.data_mut().iter_mut().zip(x.data()) {
                        *dv *= silu_prime(*xv);
                    }
                    accumulate(&mut grads[a.0], d)?;
                }
                Op::SinCos(a, freqs) => {
                    let x = self.value(*a);
                    let nf = freqs.len();
                    let mut d = Tensor::zeros_like(x);
                    for (i, dv) in d.data_mut().iter_mut().enumerate() {
                        let xv = x.data()[i];
                        let grow = g.row_slice(i);
                        let mut acc = 0.0;
                        for (j, &f) in freqs.iter().enumerate() {
                            let (s, c) = (f * xv).sin_cos();
                            acc += f * (c * grow[j] - s * grow[nf + j]);
                        }
                        *dv = acc;
                    }
                    accumulate(&mut grads[a.0], d)?;
                }
                Op::Mean(a) => {
                    let x = self.value(*a);
                    let scale = g.data()[0] / x.numel() as f64;
                    accumulate(&mut grads[a.0], Tensor::filled(x.shape(), scale))?;
                }
                Op::SumSq(a) => {
                    let x = self.value(*a);
                    accumulate(&mut grads[a.0], x.mul_scalar(2.0 * g.data()[0]))?;
                }
            }
        }

        // Materialize zeros for leaves the loss never reached.
        let grads = grads
            .iter_mut()
            .enumerate()
            .map(|(i, slot)| {
                slot.take()
                    .unwrap_or_else(|| Tensor::zeros_like(&self.nodes[i].value))
            })
            .collect();
        Ok(Gradients { grads })
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) -> Result<()> {
    match slot {
        Some(acc) => {
            *acc = acc.add(&g)?;
        }
        None => *slot = Some(g),
    }
    Ok(())
}

fn split_last_dim(g: &Tensor, left_width: usize) -> (Tensor, Tensor) {
    let w = g.last_dim();
    let right_width = w - left_width;
    let rows = g.rows();
    let mut la = Vec::with_capacity(rows * left_width);
    let mut rb = Vec::with_capacity(rows * right_width);
    for i in 0..rows {
        let row = g.row_slice(i);
        la.extend_from_slice(&row[..left_width]);
        rb.extend_from_slice(&row[left_width..]);
    }
    let mut lshape = g.shape().to_vec();
    *lshape.last_mut().unwrap() = left_width;
    let mut rshape = g.shape().to_vec();
    *rshape.last_mut().unwrap() = right_width;
    (
        Tensor::new(lshape, la).expect("split shapes consistent"),
        Tensor::new(rshape, rb).expect("split shapes consistent"),
    )
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    /// Gradient with respect to the given node. Zero for unreached leaves.
    pub fn wrt(&self, id: NodeId) -> &Tensor {
        &self.grads[id.0]
    }
}

impl Engine for Tape {
    type Value = NodeId;

    fn lift(&mut self, t: Tensor) -> NodeId {
        self.leaf(t)
    }

    fn add(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        let v = self.value(*a).add(self.value(*b))?;
        Ok(self.push(Op::Add(*a, *b), v))
    }

    fn sub(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        let v = self.value(*a).sub(self.value(*b))?;
        Ok(self.push(Op::Sub(*a, *b), v))
    }

    fn mul_scalar(&mut self, a: &NodeId, s: f64) -> Result<NodeId> {
        let v = self.value(*a).mul_scalar(s);
        Ok(self.push(Op::MulScalar(*a, s), v))
    }

    fn matmul(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        let v = self.value(*a).matmul(self.value(*b))?;
        Ok(self.push(Op::Matmul(*a, *b), v))
    }

    fn concat_last_dim(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        let v = self.value(*a).concat_last_dim(self.value(*b))?;
        Ok(self.push(Op::ConcatLastDim(*a, *b), v))
    }

    fn silu(&mut self, a: &NodeId) -> Result<NodeId> {
        let v = self.value(*a).silu();
        Ok(self.push(Op::Silu(*a), v))
    }

    fn sin_cos_features(&mut self, x: &NodeId, freqs: &[f64]) -> Result<NodeId> {
        let v = self.value(*x).sin_cos_features(freqs)?;
        Ok(self.push(Op::SinCos(*x, freqs.to_vec()), v))
    }

    fn mean(&mut self, a: &NodeId) -> Result<NodeId> {
        let v = self.value(*a).mean_all();
        Ok(self.push(Op::Mean(*a), v))
    }

    fn sum_sq(&mut self, a: &NodeId) -> Result<NodeId> {
        let v = self.value(*a).sum_sq();
        Ok(self.push(Op::SumSq(*a), v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::rng::Rng;

    #[test]
    fn square_gradient() {
        // loss = x^2 at x = 3 via sum_sq
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let loss = tape.sum_sq(&x).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).data(), &[6.0]);
    }

    #[test]
    fn unreached_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let p = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let loss = tape.sum_sq(&x).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(p).data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        assert!(matches!(
            tape.backward(x),
            Err(Error::NonScalarLoss { .. })
        ));
    }

    /// Central finite differences of loss = sum_sq(matmul(w, x)) over every
    /// entry of `w` and `x`; the independent oracle for the backward rules.
    #[test]
    fn matmul_sum_sq_matches_finite_differences() {
        let mut rng = Rng::seed(7);
        for _ in 0..5 {
            let w = rng.normal_tensor(&[3, 4]);
            let x = rng.normal_tensor(&[4, 2]);

            let loss_fn = |w: &Tensor, x: &Tensor| -> f64 {
                w.matmul(x).unwrap().sum_sq().data()[0]
            };

            let mut tape = Tape::new();
            let wid = tape.leaf(w.clone());
            let xid = tape.leaf(x.clone());
            let mm = tape.matmul(&wid, &xid).unwrap();
            let loss = tape.sum_sq(&mm).unwrap();
            let grads = tape.backward(loss).unwrap();

            let h = 1e-5;
            for (id, base) in [(wid, &w), (xid, &x)] {
                let g = grads.wrt(id);
                for k in 0..base.numel() {
                    let mut plus = base.clone();
                    plus.data_mut()[k] += h;
                    let mut minus = base.clone();
                    minus.data_mut()[k] -= h;
                    let fd = if id == wid {
                        (loss_fn(&plus, &x) - loss_fn(&minus, &x)) / (2.0 * h)
                    } else {
                        (loss_fn(&w, &plus) - loss_fn(&w, &minus)) / (2.0 * h)
                    };
                    let ad = g.data()[k];
                    let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1.0);
                    assert!(rel < 1e-6, "rel err {rel} at {k}: ad={ad} fd={fd}");
                }
            }
        }
    }

    #[test]
    fn broadcast_add_backward_reduces_bias() {
        // loss = sum_sq(x + b) with x [2,2], b [2]
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::new(vec![2], vec![0.5, -0.5]).unwrap();
        let mut tape = Tape::new();
        let xid = tape.leaf(x.clone());
        let bid = tape.leaf(b.clone());
        let s = tape.add(&xid, &bid).unwrap();
        let loss = tape.sum_sq(&s).unwrap();
        let grads = tape.backward(loss).unwrap();
        // d/db_j = sum_i 2 (x_ij + b_j)
        let expect = [2.0 * (1.5 + 3.5), 2.0 * (1.5 + 3.5)];
        for (g, e) in grads.wrt(bid).data().iter().zip(expect) {
            assert!((g - e).abs() < 1e-12);
        }
    }
}
