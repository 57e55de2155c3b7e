//! Execution engines over the primitive set.
//!
//! A network forward pass is written once, generically over [`Engine`], and
//! can then run in three modes: plain evaluation ([`Eval`]), reverse-mode
//! recording ([`crate::numcore::Tape`]), or forward-mode tangent propagation
//! ([`crate::numcore::Forward`]). Each engine supplies the registered rule
//! for every primitive in its own mode, so a primitive cannot exist without
//! both a backward and a forward-mode rule.

use crate::error::Result;
use crate::numcore::tensor::Tensor;

pub trait Engine {
    type Value: Clone;

    /// Injects a plain tensor as a constant of the engine's value type.
    fn lift(&mut self, t: Tensor) -> Self::Value;

    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn sub(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn mul_scalar(&mut self, a: &Self::Value, s: f64) -> Result<Self::Value>;
    fn matmul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn concat_last_dim(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn silu(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn sin_cos_features(&mut self, x: &Self::Value, freqs: &[f64]) -> Result<Self::Value>;
    fn mean(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn sum_sq(&mut self, a: &Self::Value) -> Result<Self::Value>;
}

/// Plain evaluation: values are tensors, no derivative bookkeeping.
pub struct Eval;

impl Engine for Eval {
    type Value = Tensor;

    fn lift(&mut self, t: Tensor) -> Tensor {
        t
    }

    fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.add(b)
    }

    fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.sub(b)
    }

    fn mul_scalar(&mut self, a: &Tensor, s: f64) -> Result<Tensor> {
        Ok(a.mul_scalar(s))
    }

    fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.matmul(b)
    }

    fn concat_last_dim(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        a.concat_last_dim(b)
    }

    fn silu(&mut self, a: &Tensor) -> Result<Tensor> {
        Ok(a.silu())
    }

    fn sin_cos_features(&mut self, x: &Tensor, freqs: &[f64]) -> Result<Tensor> {
        x.sin_cos_features(freqs)
    }

    fn mean(&mut self, a: &Tensor) -> Result<Tensor> {
        Ok(a.mean_all())
    }

    fn sum_sq(&mut self, a: &Tensor) -> Result<Tensor> {
        Ok(a.sum_sq())
    }
}
