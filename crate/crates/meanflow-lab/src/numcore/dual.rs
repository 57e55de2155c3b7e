//! Forward-mode automatic differentiation with dual tensors.
//!
//! A [`DualTensor`] carries a value and a tangent of identical shape; running
//! a function on duals yields the function value together with its
//! directional derivative along the input tangents in a single pass. Nothing
//! is recorded: the result is detached by construction, which is exactly what
//! a stop-gradient target needs.

use crate::error::{Error, Result};
use crate::numcore::engine::Engine;
use crate::numcore::tensor::{silu_prime, Tensor};

#[derive(Clone, Debug)]
pub struct DualTensor {
    pub value: Tensor,
    pub tangent: Tensor,
}

impl DualTensor {
    pub fn new(value: Tensor, tangent: Tensor) -> Result<Self> {
        if value.shape() != tangent.shape() {
            return Err(Error::Shape {
                op: "dual",
                lhs: value.shape().to_vec(),
                rhs: tangent.shape().to_vec(),
            });
        }
        Ok(DualTensor { value, tangent })
    }

    /// Constant: zero tangent.
    pub fn constant(value: Tensor) -> Self {
        let tangent = Tensor::zeros_like(&value);
        DualTensor { value, tangent }
    }
}

/// Forward-mode engine; stateless, each primitive propagates value and
/// tangent together.
pub struct Forward;

impl Engine for Forward {
    type Value = DualTensor;

    fn lift(&mut self, t: Tensor) -> DualTensor {
        DualTensor::constant(t)
    }

    fn add(&mut self, a: &DualTensor, b: &DualTensor) -> Result<DualTensor> {
        Ok(DualTensor {
            value: a.value.add(&b.value)?,
            tangent: a.tangent.add(&b.tangent)?,
        })
    }

    fn sub(&mut self, a: &DualTensor, b: &DualTensor) -> Result<DualTensor> {
        Ok(DualTensor {
            value: a.value.sub(&b.value)?,
            tangent: a.tangent.sub(&b.tangent)?,
        })
    }

    fn mul_scalar(&mut self, a: &DualTensor, s: f64) -> Result<DualTensor> {
        Ok(DualTensor {
            value: a.value.mul_scalar(s),
            tangent: a.tangent.mul_scalar(s),
        })
    }

    fn matmul(&mut self, a: &DualTensor, b: &DualTensor) -> Result<DualTensor> {
        // d(AB) = dA B + A dB
        let value = a.value.matmul(&b.value)?;
        let tangent = a
            .tangent
            .matmul(&b.value)?
            .add(&a.value.matmul(&b.tangent)?)?;
        Ok(DualTensor { value, tangent })
    }

    fn concat_last_dim(&mut self, a: &DualTensor, b: &DualTensor) -> Result<DualTensor> {
        Ok(DualTensor {
            value: a.value.concat_last_dim(&b.value)?,
            tangent: a.tangent.concat_last_dim(&b.tangent)?,
        })
    }

    fn silu(&mut self, a: &DualTensor) -> Result<DualTensor> {
        let value = a.value.silu();
        let mut tangent = a.tangent.clone();
        for (t, x) in tangent.data_mut().iter_mut().zip(a.value.data()) {
            *t *= silu_prime(*x);
        }
        Ok(DualTensor { value, tangent })
    }

    fn sin_cos_features(&mut self, x: &DualTensor, freqs: &[f64]) -> Result<DualTensor> {
        let value = x.value.sin_cos_features(freqs)?;
        let nf = freqs.len();
        let mut tangent = Tensor::zeros_like(&value);
        for i in 0..x.value.numel() {
            let xv = x.value.data()[i];
            let tx = x.tangent.data()[i];
            let trow = &mut tangent.data_mut()[i * 2 * nf..(i + 1) * 2 * nf];
            for (j, &f) in freqs.iter().enumerate() {
                let (s, c) = (f * xv).sin_cos();
                trow[j] = f * c * tx;
                trow[nf + j] = -f * s * tx;
            }
        }
        Ok(DualTensor { value, tangent })
    }

    fn mean(&mut self, a: &DualTensor) -> Result<DualTensor> {
        Ok(DualTensor {
            value: a.value.mean_all(),
            tangent: a.tangent.mean_all(),
        })
    }

    fn sum_sq(&mut self, a: &DualTensor) -> Result<DualTensor> {
        let value = a.value.sum_sq();
        let dot: f64 = a
            .value
            .data()
            .iter()
            .zip(a.tangent.data())
            .map(|(v, t)| v * t)
            .sum();
        Ok(DualTensor {
            value,
            tangent: Tensor::scalar(2.0 * dot),
        })
    }
}

/// Jacobian-vector product: evaluates `f` at `inputs` and returns
/// `(f(inputs), directional derivative along tangents)` in one forward pass.
///
/// `f` receives the inputs as dual tensors in order; additional constants can
/// be lifted inside the closure with zero tangent.
pub fn jvp<F>(f: F, inputs: &[Tensor], tangents: &[Tensor]) -> Result<(Tensor, Tensor)>
where
    F: FnOnce(&mut Forward, Vec<DualTensor>) -> Result<DualTensor>,
{
    if inputs.len() != tangents.len() {
        return Err(Error::InvalidArg(format!(
            "jvp: {} inputs but {} tangents",
            inputs.len(),
            tangents.len()
        )));
    }
    let duals = inputs
        .iter()
        .zip(tangents)
        .map(|(v, t)| DualTensor::new(v.clone(), t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let mut fw = Forward;
    let out = f(&mut fw, duals)?;
    Ok((out.value, out.tangent))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::rng::Rng;

    #[test]
    fn square_jvp() {
        // f(x) = x^2 at x = 3 with tangent 1 -> (9, 6)
        let (y, dy) = jvp(
            |fw, ins| fw.sum_sq(&ins[0]),
            &[Tensor::scalar(3.0)],
            &[Tensor::scalar(1.0)],
        )
        .unwrap();
        assert_eq!(y.data(), &[9.0]);
        assert_eq!(dy.data(), &[6.0]);
    }

    #[test]
    fn linear_map_tangent_is_exact() {
        // f(x) = A x: tangent output must equal A s exactly.
        let mut rng = Rng::seed(11);
        let a = rng.normal_tensor(&[4, 3]);
        let x = rng.normal_tensor(&[3, 2]);
        let s = rng.normal_tensor(&[3, 2]);
        let a2 = a.clone();
        let (_, dy) = jvp(
            move |fw, ins| {
                let ac = fw.lift(a2.clone());
                fw.matmul(&ac, &ins[0])
            },
            &[x],
            &[s.clone()],
        )
        .unwrap();
        let expect = a.matmul(&s).unwrap();
        assert_eq!(dy.data(), expect.data());
    }

    #[test]
    fn tangent_is_linear_in_direction() {
        // jvp(f, x, a*s1 + b*s2) == a*jvp(..s1) + b*jvp(..s2) within 1e-10
        let mut rng = Rng::seed(3);
        let w1 = rng.normal_tensor(&[3, 5]);
        let w2 = rng.normal_tensor(&[5, 2]);
        let x = rng.normal_tensor(&[1, 3]);
        let s1 = rng.normal_tensor(&[1, 3]);
        let s2 = rng.normal_tensor(&[1, 3]);
        let (a, b) = (0.7, -1.3);

        let run = |s: Tensor| -> Tensor {
            let (w1, w2) = (w1.clone(), w2.clone());
            jvp(
                move |fw, ins| {
                    let w1 = fw.lift(w1.clone());
                    let w2 = fw.lift(w2.clone());
                    let h = fw.matmul(&ins[0], &w1)?;
                    let h = fw.silu(&h)?;
                    fw.matmul(&h, &w2)
                },
                &[x.clone()],
                &[s],
            )
            .unwrap()
            .1
        };

        let combo = s1.mul_scalar(a).add(&s2.mul_scalar(b)).unwrap();
        let lhs = run(combo);
        let rhs = run(s1).mul_scalar(a).add(&run(s2).mul_scalar(b)).unwrap();
        for (l, r) in lhs.data().iter().zip(rhs.data()) {
            assert!((l - r).abs() < 1e-10, "linearity violated: {l} vs {r}");
        }
    }

    /// Central-difference oracle: random 2-layer network, random tangent.
    #[test]
    fn two_layer_network_matches_central_differences() {
        let mut rng = Rng::seed(19);
        for _ in 0..5 {
            let w1 = rng.normal_tensor(&[4, 8]);
            let b1 = rng.normal_tensor(&[8]);
            let w2 = rng.normal_tensor(&[8, 3]);
            let x = rng.normal_tensor(&[2, 4]);
            let s = rng.normal_tensor(&[2, 4]);

            let eval = |x: &Tensor| -> Tensor {
                let h = x.matmul(&w1).unwrap().add(&b1).unwrap().silu();
                h.matmul(&w2).unwrap()
            };

            let (w1c, b1c, w2c) = (w1.clone(), b1.clone(), w2.clone());
            let (_, dy) = jvp(
                move |fw, ins| {
                    let w1 = fw.lift(w1c.clone());
                    let b1 = fw.lift(b1c.clone());
                    let w2 = fw.lift(w2c.clone());
                    let h = fw.matmul(&ins[0], &w1)?;
                    let h = fw.add(&h, &b1)?;
                    let h = fw.silu(&h)?;
                    fw.matmul(&h, &w2)
                },
                &[x.clone()],
                &[s.clone()],
            )
            .unwrap();

            let h = 1e-5;
            let plus = eval(&x.add(&s.mul_scalar(h)).unwrap());
            let minus = eval(&x.add(&s.mul_scalar(-h)).unwrap());
            let fd = plus.sub(&minus).unwrap().mul_scalar(1.0 / (2.0 * h));
            for (a, b) in dy.data().iter().zip(fd.data()) {
                let rel = (a - b).abs() / a.abs().max(b.abs()).max(1.0);
                assert!(rel < 1e-4, "jvp {a} vs fd {b} (rel {rel})");
            }
        }
    }

    #[test]
    fn mismatched_dual_shapes_rejected() {
        assert!(DualTensor::new(Tensor::zeros(&[2]), Tensor::zeros(&[3])).is_err());
    }
}
