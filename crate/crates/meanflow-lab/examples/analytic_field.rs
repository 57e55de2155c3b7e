//! The analytic Gaussian oracle: the closed-form marginal velocity of the
//! linear noise-data path, and the average velocity over an interval obtained
//! by RK4 integration of that field. These are the ground truth the learned
//! networks are measured against.
//!
//! Run with: cargo run --example analytic_field

use meanflow_lab::flow::{analytic_average_velocity, analytic_marginal_velocity, GaussianTask};

fn main() {
    let task = GaussianTask::new(vec![0.4, -0.7], 0.8).unwrap();
    println!("task: mean {:?}, std {}", task.mean, task.std);

    println!("\nmarginal velocity v(z, t) at z = (0.5, 0.0):");
    println!("{:>6} {:>12} {:>12}", "t", "v_x", "v_y");
    for k in 0..=5 {
        let t = k as f64 / 5.0;
        let v = analytic_marginal_velocity(&task, &[0.5, 0.0], t);
        println!("{t:>6.2} {:>12.5} {:>12.5}", v[0], v[1]);
    }

    // At the expected trajectory point of x = mean, the field is -mean.
    let t = 0.6;
    let z: Vec<f64> = task.mean.iter().map(|m| (1.0 - t) * m).collect();
    let v = analytic_marginal_velocity(&task, &z, t);
    println!("\nfield on the mean trajectory at t = {t}: {v:?} (expect -mean)");

    println!("\naverage velocity u(z, t, r) by RK4 at z = (0.5, 0.0), t = 0.9:");
    println!("{:>6} {:>12} {:>12}", "r", "u_x", "u_y");
    for r in [0.0, 0.25, 0.5, 0.8] {
        let u = analytic_average_velocity(&task, &[0.5, 0.0], 0.9, r, 1e-3).unwrap();
        println!("{r:>6.2} {:>12.5} {:>12.5}", u[0], u[1]);
    }

    // Short-interval limit: the average approaches the instantaneous field.
    let u = analytic_average_velocity(&task, &[0.5, 0.0], 0.9, 0.9 - 1e-3, 1e-4).unwrap();
    let v = analytic_marginal_velocity(&task, &[0.5, 0.0], 0.9);
    println!(
        "\nshort-interval limit gap |u - v| = ({:.2e}, {:.2e})",
        (u[0] - v[0]).abs(),
        (u[1] - v[1]).abs()
    );
}
