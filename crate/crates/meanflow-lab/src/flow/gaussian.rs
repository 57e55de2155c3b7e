//! Closed-form oracles on an isotropic Gaussian data task.
//!
//! For data `x ~ N(mean, std^2 I)` under the linear path, the marginal
//! velocity `E[eps - x | z_t = z]` is affine in `z` and has an exact closed
//! form; the average velocity over `[r, t]` is obtained by integrating that
//! field with a fine fixed-step RK4. Together they are the ground truth the
//! learned networks are measured against.

use crate::error::{Error, Result};
use crate::net::FlowMap;
use crate::numcore::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GaussianTask {
    pub mean: Vec<f64>,
    pub std: f64,
}

impl GaussianTask {
    pub fn new(mean: Vec<f64>, std: f64) -> Result<GaussianTask> {
        if std <= 0.0 {
            return Err(Error::InvalidArg(format!("std must be positive, got {std}")));
        }
        Ok(GaussianTask { mean, std })
    }

    pub fn data_dim(&self) -> usize {
        self.mean.len()
    }

    /// Per-dimension variance of `z_t` around its mean `(1 - t) mean`:
    /// `V(t) = (1 - t)^2 std^2 + t^2`. Positive for all `t` since `std > 0`,
    /// so the affine closed form below is continuous on the whole of [0, 1]
    /// and the `t = 1` endpoint needs no special casing.
    pub fn path_variance(&self, t: f64) -> f64 {
        let a = 1.0 - t;
        a * a * self.std * self.std + t * t
    }

    pub fn marginal_std(&self, t: f64) -> f64 {
        self.path_variance(t).sqrt()
    }
}

/// Exact marginal velocity `v(z, t) = E[eps - x | z_t = z]` for a Gaussian
/// task: with `V(t)` as above and `alpha(t) = (t - (1-t) std^2) / V(t)`,
///
/// `v(z, t) = alpha(t) (z - (1 - t) mean) - mean`.
pub fn analytic_marginal_velocity(task: &GaussianTask, z: &[f64], t: f64) -> Vec<f64> {
    let keep = 1.0 - t;
    let s2 = task.std * task.std;
    let alpha = (t - keep * s2) / task.path_variance(t);
    z.iter()
        .zip(&task.mean)
        .map(|(&zi, &mi)| alpha * (zi - keep * mi) - mi)
        .collect()
}

/// Average velocity over `[r, t]`: `(z_r - z_t) / (r - t)` where `z_r` comes
/// from integrating the marginal field from `t` down to `r` with fixed-step
/// RK4 (`max_step <= 1e-3` per the oracle contract). `t == r` is an error;
/// use the instantaneous velocity there.
pub fn analytic_average_velocity(
    task: &GaussianTask,
    z: &[f64],
    t: f64,
    r: f64,
    max_step: f64,
) -> Result<Vec<f64>> {
    if t == r {
        return Err(Error::InvalidArg(
            "average velocity needs t != r; use the instantaneous velocity at t == r".into(),
        ));
    }
    if t < r {
        return Err(Error::TimeOrder { t, r });
    }
    let z_r = integrate_rk4(task, z, t, r, max_step);
    Ok(z_r
        .iter()
        .zip(z)
        .map(|(zr, zt)| (zr - zt) / (r - t))
        .collect())
}

fn integrate_rk4(task: &GaussianTask, z0: &[f64], t0: f64, t1: f64, max_step: f64) -> Vec<f64> {
    let span = (t1 - t0).abs();
    let n = (span / max_step).ceil().max(1.0) as usize;
    let h = (t1 - t0) / n as f64;
    let mut z = z0.to_vec();
    let mut s = t0;
    for _ in 0..n {
        let k1 = analytic_marginal_velocity(task, &z, s);
        let z2: Vec<f64> = z.iter().zip(&k1).map(|(zi, ki)| zi + 0.5 * h * ki).collect();
        let k2 = analytic_marginal_velocity(task, &z2, s + 0.5 * h);
        let z3: Vec<f64> = z.iter().zip(&k2).map(|(zi, ki)| zi + 0.5 * h * ki).collect();
        let k3 = analytic_marginal_velocity(task, &z3, s + 0.5 * h);
        let z4: Vec<f64> = z.iter().zip(&k3).map(|(zi, ki)| zi + h * ki).collect();
        let k4 = analytic_marginal_velocity(task, &z4, s + h);
        for (i, zi) in z.iter_mut().enumerate() {
            *zi += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        s += h;
    }
    z
}

/// The analytic field packaged as a [`FlowMap`], so samplers and metrics can
/// run against ground truth without any learned parameters.
#[derive(Clone, Debug)]
pub struct AnalyticGaussianField {
    pub task: GaussianTask,
    pub rk4_step: f64,
}

impl AnalyticGaussianField {
    pub fn new(task: GaussianTask) -> Self {
        AnalyticGaussianField {
            task,
            rk4_step: 1e-3,
        }
    }
}

impl FlowMap for AnalyticGaussianField {
    fn avg_velocity(&self, z: &Tensor, t: f64, r: f64, _psi: &Tensor) -> Result<Tensor> {
        let mut rows = Vec::with_capacity(z.rows());
        for i in 0..z.rows() {
            let zi = z.row_slice(i);
            if t == r {
                rows.push(analytic_marginal_velocity(&self.task, zi, t));
            } else {
                rows.push(analytic_average_velocity(&self.task, zi, t, r, self.rk4_step)?);
            }
        }
        Tensor::from_rows(&rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;

    /// Closed-form transport of the affine field, used as the independent
    /// oracle for the RK4 route: with `w = z - (1 - t) mean`,
    /// `w(r) = w(t) sqrt(V(r) / V(t))`.
    fn closed_form_transport(task: &GaussianTask, z: &[f64], t: f64, r: f64) -> Vec<f64> {
        let scale = (task.path_variance(r) / task.path_variance(t)).sqrt();
        z.iter()
            .zip(&task.mean)
            .map(|(&zi, &mi)| (zi - (1.0 - t) * mi) * scale + (1.0 - r) * mi)
            .collect()
    }

    #[test]
    fn standard_task_symmetry_at_center() {
        // mean 0, std 1: at t = 0.5 the field vanishes at the origin.
        let task = GaussianTask::new(vec![0.0, 0.0], 1.0).unwrap();
        let v = analytic_marginal_velocity(&task, &[0.0, 0.0], 0.5);
        assert!(v.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn endpoint_values() {
        let task = GaussianTask::new(vec![0.4, -0.7], 0.8).unwrap();
        // t = 1: v = z - mean (eps and x decouple).
        let z = [0.3, 0.9];
        let v1 = analytic_marginal_velocity(&task, &z, 1.0);
        assert!((v1[0] - (0.3 - 0.4)).abs() < 1e-12);
        assert!((v1[1] - (0.9 + 0.7)).abs() < 1e-12);
        // t = 0: v = -z (E[x | z_0 = z] = z, E[eps] = 0).
        let v0 = analytic_marginal_velocity(&task, &z, 0.0);
        assert!((v0[0] + 0.3).abs() < 1e-12);
        assert!((v0[1] + 0.9).abs() < 1e-12);
    }

    #[test]
    fn mean_trajectory_points_along_minus_mean() {
        // At the expected trajectory point of x = mean (z = (1 - t) mean),
        // the field equals E[eps] - mean = -mean.
        let task = GaussianTask::new(vec![1.2, -0.5], 0.7).unwrap();
        for t in [0.1, 0.5, 0.9] {
            let z: Vec<f64> = task.mean.iter().map(|m| (1.0 - t) * m).collect();
            let v = analytic_marginal_velocity(&task, &z, t);
            for (vi, mi) in v.iter().zip(&task.mean) {
                assert!((vi + mi).abs() < 1e-12);
            }
        }
    }

    /// Self-normalized importance-weighted Monte Carlo estimate of
    /// `E[eps - x | z_t ~ z]` with a Gaussian kernel around `z`; the
    /// independent oracle for the closed form.
    fn mc_marginal_velocity(
        task: &GaussianTask,
        z: &[f64],
        t: f64,
        n: usize,
        bandwidth: f64,
        rng: &mut Rng,
    ) -> Vec<f64> {
        let d = z.len();
        let mut wsum = 0.0;
        let mut acc = vec![0.0; d];
        let inv2h2 = 1.0 / (2.0 * bandwidth * bandwidth);
        for _ in 0..n {
            let mut d2 = 0.0;
            let mut diff = vec![0.0; d];
            for k in 0..d {
                let x = task.mean[k] + task.std * rng.normal();
                let e = rng.normal();
                let zt = (1.0 - t) * x + t * e;
                let dz = zt - z[k];
                d2 += dz * dz;
                diff[k] = e - x;
            }
            let w = (-d2 * inv2h2).exp();
            wsum += w;
            for k in 0..d {
                acc[k] += w * diff[k];
            }
        }
        acc.iter().map(|a| a / wsum).collect()
    }

    #[test]
    fn closed_form_matches_importance_weighted_monte_carlo() {
        let task = GaussianTask::new(vec![0.5, -0.3], 0.9).unwrap();
        let mut rng = Rng::seed(77);
        for &(zx, zy, t) in &[(0.2, 0.1, 0.35), (-0.4, 0.5, 0.6), (0.6, -0.6, 0.8)] {
            let z = [zx, zy];
            let exact = analytic_marginal_velocity(&task, &z, t);
            let mc = mc_marginal_velocity(&task, &z, t, 1_000_000, 0.08, &mut rng);
            for (a, b) in exact.iter().zip(&mc) {
                assert!((a - b).abs() < 0.02, "exact {a} vs mc {b} at t={t}");
            }
        }
    }

    #[test]
    fn rk4_matches_closed_form_linear_ode() {
        let std_task = GaussianTask::new(vec![0.0, 0.0], 1.0).unwrap();
        let off_task = GaussianTask::new(vec![0.8, -0.2], 0.6).unwrap();
        let mut rng = Rng::seed(5);
        for task in [&std_task, &off_task] {
            for _ in 0..10 {
                let z: Vec<f64> = (0..2).map(|_| 2.0 * rng.normal()).collect();
                let t = 0.2 + 0.75 * rng.uniform();
                let r = t * rng.uniform() * 0.9;
                let u = analytic_average_velocity(task, &z, t, r, 1e-3).unwrap();
                let z_r = closed_form_transport(task, &z, t, r);
                for (k, ui) in u.iter().enumerate() {
                    let u_exact = (z_r[k] - z[k]) / (r - t);
                    let rel = (ui - u_exact).abs() / u_exact.abs().max(1.0);
                    assert!(rel < 1e-6, "rk4 {ui} vs exact {u_exact}");
                }
            }
        }
    }

    #[test]
    fn average_velocity_zero_on_center_trajectory() {
        // mean 0, std 1: the field vanishes on z = 0 for all t, so the
        // average over any segment is the constant 0.
        let task = GaussianTask::new(vec![0.0, 0.0], 1.0).unwrap();
        let u = analytic_average_velocity(&task, &[0.0, 0.0], 0.9, 0.1, 1e-3).unwrap();
        assert!(u.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn short_interval_limit_approaches_marginal() {
        let task = GaussianTask::new(vec![0.3, 0.3], 0.8).unwrap();
        let z = [0.7, -0.4];
        let t = 0.6;
        let u = analytic_average_velocity(&task, &z, t, t - 1e-3, 1e-4).unwrap();
        let v = analytic_marginal_velocity(&task, &z, t);
        for (a, b) in u.iter().zip(&v) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn equal_times_rejected() {
        let task = GaussianTask::new(vec![0.0], 1.0).unwrap();
        assert!(analytic_average_velocity(&task, &[0.0], 0.5, 0.5, 1e-3).is_err());
    }

    #[test]
    fn nonpositive_std_rejected() {
        assert!(GaussianTask::new(vec![0.0], 0.0).is_err());
    }
}
