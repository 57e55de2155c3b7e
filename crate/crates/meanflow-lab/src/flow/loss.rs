//! Flow-map target construction and training losses.
//!
//! The self-consistent target for the average-velocity map is
//!
//! `u_tgt = v + (r - t) * d/dt u(z_t, t, r, psi)`,
//!
//! where the total derivative `d/dt u = dt_u + (grad_z u) v` is computed in
//! one forward-mode pass along the combined tangent `(v, 1, 0, 0)` over
//! `(z, t, r, psi)`. The target is detached (stop-gradient): gradients flow
//! only through the prediction term of the loss. `v` is the velocity being
//! bootstrapped from, either the conditional ground truth `eps - x` or a
//! frozen pretrained field.

use crate::error::{Error, Result};
use crate::flow::{times_of, TimePair};
use crate::net::{NetMode, TimeVelocityModel, VelocityNet};
use crate::numcore::{jvp, Engine, Tape, Tensor};

/// Scalar loss plus gradients aligned with `VelocityNet::param_tensors`.
#[derive(Debug)]
pub struct LossGrads {
    pub loss: f64,
    pub grads: Vec<Tensor>,
}

/// Where the bootstrap velocity for the flow-map target comes from.
#[derive(Clone, Copy, Debug)]
pub enum VelocitySource<'a> {
    /// Ground-truth conditional velocity `eps - x` (training from scratch).
    Conditional,
    /// A frozen pretrained field evaluated at `(z_t, t, psi)` (finetuning).
    Pretrained(&'a VelocityNet),
}

fn validate_batch(z_t: &Tensor, pairs: &[TimePair], psi: &Tensor, v: &Tensor) -> Result<()> {
    let b = z_t.rows();
    if v.shape() != z_t.shape() {
        return Err(Error::Shape {
            op: "meanflow_target",
            lhs: z_t.shape().to_vec(),
            rhs: v.shape().to_vec(),
        });
    }
    if pairs.len() != b || psi.rows() != b {
        return Err(Error::Shape {
            op: "meanflow_target",
            lhs: vec![b],
            rhs: vec![pairs.len(), psi.rows()],
        });
    }
    Ok(())
}

/// Detached flow-map regression target. Rows with `t == r` contribute
/// `v` exactly; if the whole batch is degenerate the JVP is skipped
/// entirely (it is well-defined there, just unnecessary).
pub fn meanflow_target<M: TimeVelocityModel>(
    model: &M,
    z_t: &Tensor,
    pairs: &[TimePair],
    psi: &Tensor,
    v: &Tensor,
) -> Result<Tensor> {
    validate_batch(z_t, pairs, psi, v)?;
    if pairs.iter().all(TimePair::is_equal) {
        return Ok(v.clone());
    }
    let b = z_t.rows();
    let (t, r) = times_of(pairs);
    let inputs = [
        z_t.clone(),
        Tensor::column(&t),
        Tensor::column(&r),
        psi.clone(),
    ];
    let tangents = [
        v.clone(),
        Tensor::filled(&[b, 1], 1.0),
        Tensor::zeros(&[b, 1]),
        Tensor::zeros_like(psi),
    ];
    let (_, dudt) = jvp(
        |fw, ins| model.forward_in(fw, &ins[0], &ins[1], &ins[2], &ins[3]),
        &inputs,
        &tangents,
    )?;
    let deltas: Vec<f64> = pairs.iter().map(|p| p.r() - p.t()).collect();
    let target = v.add(&dudt.row_scale(&deltas)?)?;
    target.check_finite("meanflow_target")?;
    Ok(target)
}

/// Flow-map loss `mean_i ||u(z_i, t_i, r_i, psi_i) - sg(u_tgt_i)||^2` with
/// gradients for every network parameter. The target is computed first and
/// lifted onto the tape as a constant, which is the stop-gradient boundary.
pub fn meanflow_loss(
    net: &VelocityNet,
    z_t: &Tensor,
    pairs: &[TimePair],
    psi: &Tensor,
    v: &Tensor,
) -> Result<LossGrads> {
    if net.mode() == NetMode::Fm && pairs.iter().any(|p| !p.is_equal()) {
        return Err(Error::ModeMismatch {
            expected: "dual-time (mf) net for non-equal pairs".into(),
            found: "fm".into(),
        });
    }
    let target = meanflow_target(net, z_t, pairs, psi, v)?;
    let (t, r) = times_of(pairs);
    squared_error_loss(net, z_t, &t, &r, psi, &target)
}

/// Flow-matching loss `mean_i ||v(z_i, t_i, psi_i) - v_i||^2`, the `r = t`
/// restriction of the map against the conditional velocity.
pub fn flow_matching_loss(
    net: &VelocityNet,
    z_t: &Tensor,
    t: &[f64],
    psi: &Tensor,
    v: &Tensor,
) -> Result<LossGrads> {
    squared_error_loss(net, z_t, t, t, psi, v)
}

fn squared_error_loss(
    net: &VelocityNet,
    z_t: &Tensor,
    t: &[f64],
    r: &[f64],
    psi: &Tensor,
    target: &Tensor,
) -> Result<LossGrads> {
    let b = z_t.rows();
    let mut tape = Tape::new();
    let bound = net.bind(&mut tape);
    let param_ids: Vec<_> = bound.handles().into_iter().copied().collect();

    let z_id = tape.lift(z_t.clone());
    let t_id = tape.lift(Tensor::column(t));
    let r_id = tape.lift(Tensor::column(r));
    let psi_id = tape.lift(psi.clone());
    let pred = net.forward_bound(&mut tape, &bound, &z_id, &t_id, &r_id, &psi_id)?;
    let tgt_id = tape.lift(target.clone());
    let diff = tape.sub(&pred, &tgt_id)?;
    let ss = tape.sum_sq(&diff)?;
    let loss_id = tape.mul_scalar(&ss, 1.0 / b as f64)?;

    let loss = tape.value(loss_id).data()[0];
    if !loss.is_finite() {
        return Err(Error::Numeric {
            context: format!("loss is not finite ({loss})"),
        });
    }
    let all = tape.backward(loss_id)?;
    let mut grads = Vec::with_capacity(param_ids.len());
    for id in param_ids {
        let g = all.wrt(id).clone();
        g.check_finite("parameter gradient")?;
        grads.push(g);
    }
    Ok(LossGrads { loss, grads })
}
