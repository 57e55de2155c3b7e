//! Anatomy of the flow-map regression target
//!
//!   u_tgt = v + (r - t) * d/dt u(z, t, r, psi),
//!
//! whose total derivative d/dt u = dt_u + (grad_z u) v is one forward-mode
//! pass along the tangent (v, 1, 0, 0). Three facts are demonstrated:
//! the boundary identity at r = t, the constant-net degenerate case, and
//! exactness against the hand chain rule on a linear stand-in model.
//!
//! Run with: cargo run --example jvp_target_anatomy

use meanflow_lab::flow::{meanflow_target, TimePair};
use meanflow_lab::net::{LinearFlowMap, NetDims, NetMode, TimeEmbedConfig, VelocityNet};
use meanflow_lab::numcore::{Rng, Tensor};

fn main() {
    let mut rng = Rng::seed(42);

    // A fresh net has a zero-initialized final layer: constant (zero) output,
    // hence zero total derivative, hence u_tgt == v exactly.
    let net = VelocityNet::init(
        NetDims {
            data_dim: 2,
            cond_dim: 4,
            hidden_dim: 16,
            depth: 2,
        },
        TimeEmbedConfig {
            feature_dim: 8,
            min_freq: 1.0,
            max_freq: 8.0,
        },
        NetMode::Mf,
        &mut rng,
    )
    .unwrap();
    let z = rng.normal_tensor(&[3, 2]);
    let psi = rng.normal_tensor(&[3, 4]);
    let v = rng.normal_tensor(&[3, 2]);

    let pairs = vec![
        TimePair::new(0.9, 0.1).unwrap(),
        TimePair::new(0.6, 0.6).unwrap(),
        TimePair::new(1.0, 0.0).unwrap(),
    ];
    let tgt = meanflow_target(&net, &z, &pairs, &psi, &v).unwrap();
    let gap = tgt
        .data()
        .iter()
        .zip(v.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("zero-initialized net: max |u_tgt - v| = {gap:.2e} (expect 0)");

    // Boundary identity: with every pair degenerate the target is v.
    let equal: Vec<TimePair> = [0.1, 0.5, 0.9].iter().map(|&t| TimePair::equal(t)).collect();
    let tgt = meanflow_target(&net, &z, &equal, &psi, &v).unwrap();
    println!(
        "boundary identity r = t: bitwise equal to v -> {}",
        tgt.data() == v.data()
    );

    // Linear stand-in u(z,t,r) = zA + tb + rc: hand chain rule gives
    // u_tgt = v + (r - t)(b + vA).
    let model = LinearFlowMap {
        a: rng.normal_tensor(&[2, 2]),
        b: rng.normal_tensor(&[1, 2]),
        c: rng.normal_tensor(&[1, 2]),
    };
    let pairs = vec![
        TimePair::new(0.8, 0.2).unwrap(),
        TimePair::new(0.5, 0.25).unwrap(),
        TimePair::new(1.0, 0.0).unwrap(),
    ];
    let tgt = meanflow_target(&model, &z, &pairs, &psi, &v).unwrap();
    let b_row = Tensor::new(vec![2], model.b.data().to_vec()).unwrap();
    let va_b = v.matmul(&model.a).unwrap().add(&b_row).unwrap();
    let deltas: Vec<f64> = pairs.iter().map(|p| p.r() - p.t()).collect();
    let hand = v.add(&va_b.row_scale(&deltas).unwrap()).unwrap();
    let gap = tgt
        .data()
        .iter()
        .zip(hand.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("linear stand-in: max |u_tgt - hand chain rule| = {gap:.2e}");
}
