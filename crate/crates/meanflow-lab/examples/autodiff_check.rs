//! Verifies both differentiation modes against central finite differences:
//! reverse-mode parameter gradients of a scalar loss, and the forward-mode
//! (JVP) directional derivative the flow-map target is built from.
//!
//! Run with: cargo run --example autodiff_check

use meanflow_lab::harness::recipes::{autodiff_jvp_check, autodiff_reverse_check};
use meanflow_lab::numcore::{jvp, Engine, Rng, Tensor};

fn main() {
    // A tiny closed-form warm-up: f(x) = x^2 at x = 3 along tangent 1.
    let (y, dy) = jvp(
        |fw, ins| fw.sum_sq(&ins[0]),
        &[Tensor::scalar(3.0)],
        &[Tensor::scalar(1.0)],
    )
    .unwrap();
    println!("f(x) = x^2 at x = 3:  value {}  tangent {}", y.data()[0], dy.data()[0]);

    // Linearity of the tangent in the direction.
    let mut rng = Rng::seed(1);
    let w = rng.normal_tensor(&[3, 3]);
    let x = rng.normal_tensor(&[1, 3]);
    let s1 = rng.normal_tensor(&[1, 3]);
    let s2 = rng.normal_tensor(&[1, 3]);
    let run = |s: Tensor| {
        let w = w.clone();
        jvp(
            move |fw, ins| {
                let w = fw.lift(w.clone());
                let h = fw.matmul(&ins[0], &w)?;
                fw.silu(&h)
            },
            &[x.clone()],
            &[s],
        )
        .unwrap()
        .1
    };
    let combo = run(s1.mul_scalar(2.0).add(&s2.mul_scalar(-3.0)).unwrap());
    let parts = run(s1).mul_scalar(2.0).add(&run(s2).mul_scalar(-3.0)).unwrap();
    let max_gap = combo
        .data()
        .iter()
        .zip(parts.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("tangent linearity gap over a random net: {max_gap:.2e}");

    // The full finite-difference battery over random small networks.
    for check in [autodiff_reverse_check(25, 7), autodiff_jvp_check(25, 7)] {
        println!("{}", check.line());
    }
}
