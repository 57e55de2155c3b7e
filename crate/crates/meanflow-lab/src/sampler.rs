//! n-step generation.
//!
//! Both samplers start from `z ~ N(0, I)` at `t = 1` and walk a uniform grid
//! down to `t = 0`. The flow-map sampler applies the interval update
//! `z_next = z + (t_next - t_cur) * u(z, t_cur, t_next, psi)`; the baseline
//! integrates the instantaneous velocity with explicit Euler on the same
//! grid.

use crate::error::{Error, Result};
use crate::net::FlowMap;
use crate::numcore::{Rng, Tensor};

/// One sampling run: the grid, final samples, and (optionally) every
/// intermediate state for trajectory diagnostics.
#[derive(Clone, Debug)]
pub struct SampleRun {
    pub steps: usize,
    /// Strictly decreasing times, `1 = grid[0] > ... > grid[steps] = 0`.
    pub grid: Vec<f64>,
    /// Final states, `[n, data_dim]`.
    pub samples: Tensor,
    /// All states `z_{t_0} .. z_{t_steps}` (length `steps + 1`) when recorded.
    pub trajectory: Option<Vec<Tensor>>,
}

fn uniform_grid(steps: usize) -> Vec<f64> {
    (0..=steps)
        .map(|i| (steps - i) as f64 / steps as f64)
        .collect()
}

fn run_sampler<F>(
    data_dim: usize,
    psi: &Tensor,
    steps: usize,
    rng: &mut Rng,
    record_trajectory: bool,
    mut update: F,
) -> Result<SampleRun>
where
    F: FnMut(&Tensor, f64, f64) -> Result<Tensor>,
{
    if steps == 0 {
        return Err(Error::InvalidArg("sampler needs at least one step".into()));
    }
    let n = psi.rows();
    let grid = uniform_grid(steps);
    let mut z = rng.normal_tensor(&[n, data_dim]);
    let mut trajectory = record_trajectory.then(|| vec![z.clone()]);
    for w in grid.windows(2) {
        let (t_cur, t_next) = (w[0], w[1]);
        let vel = update(&z, t_cur, t_next)?;
        z = z.add(&vel.mul_scalar(t_next - t_cur))?;
        z.check_finite(&format!("sampler state at t={t_next}"))
            .map_err(|_| Error::Numeric {
                context: format!("non-finite sampler state at t={t_next}"),
            })?;
        if let Some(tr) = trajectory.as_mut() {
            tr.push(z.clone());
        }
    }
    Ok(SampleRun {
        steps,
        grid,
        samples: z,
        trajectory,
    })
}

/// Flow-map sampling: each step jumps along the predicted average velocity
/// of the whole segment. One row of `psi` per sample.
pub fn meanflow_sample(
    model: &dyn FlowMap,
    data_dim: usize,
    psi: &Tensor,
    steps: usize,
    rng: &mut Rng,
    record_trajectory: bool,
) -> Result<SampleRun> {
    run_sampler(data_dim, psi, steps, rng, record_trajectory, |z, t, r| {
        model.avg_velocity(z, t, r, psi)
    })
}

/// Euler baseline on the instantaneous velocity, same grid and seeding.
pub fn fm_euler_sample(
    model: &dyn FlowMap,
    data_dim: usize,
    psi: &Tensor,
    steps: usize,
    rng: &mut Rng,
    record_trajectory: bool,
) -> Result<SampleRun> {
    run_sampler(data_dim, psi, steps, rng, record_trajectory, |z, t, _r| {
        model.velocity(z, t, psi)
    })
}

/// Repeats one condition embedding for `n` samples.
pub fn tile_condition(psi: &[f64], n: usize) -> Tensor {
    let mut data = Vec::with_capacity(n * psi.len());
    for _ in 0..n {
        data.extend_from_slice(psi);
    }
    Tensor::new(vec![n, psi.len()], data).expect("shape/numel consistent")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{AnalyticGaussianField, GaussianTask};
    use crate::net::ConstantField;

    #[test]
    fn grid_is_strictly_decreasing_from_one_to_zero() {
        for steps in [1, 2, 4, 7] {
            let g = uniform_grid(steps);
            assert_eq!(g[0], 1.0);
            assert_eq!(*g.last().unwrap(), 0.0);
            assert!(g.windows(2).all(|w| w[0] > w[1]));
        }
    }

    #[test]
    fn constant_field_single_step() {
        // One step over [1, 0]: z_0 = z_1 - c.
        let c = vec![0.3, -1.1];
        let model = ConstantField(c.clone());
        let psi = Tensor::zeros(&[5, 1]);
        let mut rng = Rng::seed(1);
        let run = meanflow_sample(&model, 2, &psi, 1, &mut rng, false).unwrap();

        let mut rng2 = Rng::seed(1);
        let z1 = rng2.normal_tensor(&[5, 2]);
        for i in 0..5 {
            for k in 0..2 {
                let expect = z1.row_slice(i)[k] - c[k];
                assert!((run.samples.row_slice(i)[k] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn constant_field_telescopes_across_step_counts() {
        let model = ConstantField(vec![0.37, -0.83]);
        let psi = Tensor::zeros(&[8, 1]);
        let one = meanflow_sample(&model, 2, &psi, 1, &mut Rng::seed(9), false).unwrap();
        for steps in [2, 3, 4, 8] {
            let k = meanflow_sample(&model, 2, &psi, steps, &mut Rng::seed(9), false).unwrap();
            for (a, b) in one.samples.data().iter().zip(k.samples.data()) {
                assert!((a - b).abs() < 1e-12, "steps {steps}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn euler_single_step_with_zero_field_returns_noise() {
        let model = ConstantField(vec![0.0, 0.0]);
        let psi = Tensor::zeros(&[4, 1]);
        let run = fm_euler_sample(&model, 2, &psi, 1, &mut Rng::seed(3), false).unwrap();
        let z1 = Rng::seed(3).normal_tensor(&[4, 2]);
        assert_eq!(run.samples.data(), z1.data());
    }

    #[test]
    fn euler_on_analytic_field_matches_closed_form_endpoint() {
        // Fine Euler integration of the analytic marginal field must land on
        // the closed-form linear-ODE endpoint.
        let task = GaussianTask::new(vec![0.5, -0.25], 0.8).unwrap();
        let field = AnalyticGaussianField::new(task.clone());
        let psi = Tensor::zeros(&[64, 1]);
        let run = fm_euler_sample(&field, 2, &psi, 1000, &mut Rng::seed(11), false).unwrap();

        let z1 = Rng::seed(11).normal_tensor(&[64, 2]);
        // w(0) = w(1) sqrt(V(0)/V(1)), z(0) = w(0) + mean.
        let scale = (task.path_variance(0.0) / task.path_variance(1.0)).sqrt();
        for i in 0..64 {
            for k in 0..2 {
                let w1 = z1.row_slice(i)[k]; // at t=1, (1-t) mean = 0
                let expect = w1 * scale + task.mean[k];
                let got = run.samples.row_slice(i)[k];
                assert!((got - expect).abs() < 1e-2, "{got} vs {expect}");
            }
        }
    }

    #[test]
    fn trajectory_recording_has_steps_plus_one_states() {
        let model = ConstantField(vec![0.1, 0.1]);
        let psi = Tensor::zeros(&[2, 1]);
        let run = meanflow_sample(&model, 2, &psi, 4, &mut Rng::seed(5), true).unwrap();
        let tr = run.trajectory.unwrap();
        assert_eq!(tr.len(), 5);
        assert_eq!(tr.last().unwrap().data(), run.samples.data());
    }

    #[test]
    fn same_seed_same_initial_noise_across_step_counts() {
        let model = ConstantField(vec![0.2, 0.2]);
        let psi = Tensor::zeros(&[3, 1]);
        let a = meanflow_sample(&model, 2, &psi, 1, &mut Rng::seed(7), true).unwrap();
        let b = meanflow_sample(&model, 2, &psi, 4, &mut Rng::seed(7), true).unwrap();
        let za = &a.trajectory.unwrap()[0];
        let zb = &b.trajectory.unwrap()[0];
        assert_eq!(za.data(), zb.data());
    }

    #[test]
    fn zero_steps_rejected() {
        let model = ConstantField(vec![0.0]);
        let psi = Tensor::zeros(&[1, 1]);
        assert!(meanflow_sample(&model, 1, &psi, 0, &mut Rng::seed(1), false).is_err());
    }
}
