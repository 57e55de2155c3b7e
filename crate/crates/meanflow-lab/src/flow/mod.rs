//! Flow-matching paths, timestep schedules, and the flow-map training core.
//!
//! The interpolation path is the linear (rectified-flow) one:
//! `z_t = (1 - t) x + t eps`, with conditional velocity `eps - x`. Time runs
//! with `t = 1` pure noise and `t = 0` data, and sampling integrates from `t`
//! down to `r` with `t >= r`.

pub mod gaussian;
pub mod loss;

use crate::error::{Error, Result};
use crate::numcore::{Rng, Tensor};
use serde::{Deserialize, Serialize};

pub use gaussian::{
    analytic_average_velocity, analytic_marginal_velocity, AnalyticGaussianField, GaussianTask,
};
pub use loss::{flow_matching_loss, meanflow_loss, meanflow_target, LossGrads};

/// A sampled `(t, r)` with the convention `t >= r` (`t` is noisier).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimePair {
    t: f64,
    r: f64,
}

impl TimePair {
    pub fn new(t: f64, r: f64) -> Result<TimePair> {
        if t < r {
            return Err(Error::TimeOrder { t, r });
        }
        Ok(TimePair { t, r })
    }

    /// Degenerate pair `t == r`.
    pub fn equal(t: f64) -> TimePair {
        TimePair { t, r: t }
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn is_equal(&self) -> bool {
        self.t == self.r
    }

    pub fn interval(&self) -> f64 {
        self.t - self.r
    }
}

pub fn times_of(pairs: &[TimePair]) -> (Vec<f64>, Vec<f64>) {
    (
        pairs.iter().map(|p| p.t).collect(),
        pairs.iter().map(|p| p.r).collect(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleFamily {
    Uniform,
    LogitNormal,
}

/// Adaptive `(t, r)` sampling schedule. The distribution parameters and the
/// ratio of non-equal pairs interpolate linearly in training progress
/// `p` from their `_start` to their `_end` values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub family: ScheduleFamily,
    pub mu_start: f64,
    pub mu_end: f64,
    pub sigma_start: f64,
    pub sigma_end: f64,
    pub neq_ratio_start: f64,
    pub neq_ratio_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            family: ScheduleFamily::LogitNormal,
            mu_start: 0.0,
            mu_end: 0.0,
            sigma_start: 1.0,
            sigma_end: 1.0,
            neq_ratio_start: 0.25,
            neq_ratio_end: 0.75,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("neq_ratio_start", self.neq_ratio_start),
            ("neq_ratio_end", self.neq_ratio_end),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArg(format!("{name} must be in [0,1], got {v}")));
            }
        }
        if self.sigma_start <= 0.0 || self.sigma_end <= 0.0 {
            return Err(Error::InvalidArg("sigma values must be positive".into()));
        }
        Ok(())
    }

    pub fn mu(&self, p: f64) -> f64 {
        self.mu_start + p * (self.mu_end - self.mu_start)
    }

    pub fn sigma(&self, p: f64) -> f64 {
        self.sigma_start + p * (self.sigma_end - self.sigma_start)
    }

    pub fn neq_ratio(&self, p: f64) -> f64 {
        self.neq_ratio_start + p * (self.neq_ratio_end - self.neq_ratio_start)
    }

    /// All timesteps forced equal; what flow-matching pretraining uses.
    pub fn equal_only(mut self) -> ScheduleConfig {
        self.neq_ratio_start = 0.0;
        self.neq_ratio_end = 0.0;
        self
    }

    fn draw(&self, rng: &mut Rng, p: f64) -> f64 {
        match self.family {
            ScheduleFamily::Uniform => rng.uniform(),
            ScheduleFamily::LogitNormal => {
                let g = self.mu(p) + self.sigma(p) * rng.normal();
                1.0 / (1.0 + (-g).exp())
            }
        }
    }
}

/// Draws one `(t, r)`: with probability `1 - neq_ratio(p)` the pair is
/// degenerate (`r = t`), otherwise two draws from the configured family are
/// ordered so that `t >= r`.
pub fn sample_timepair(rng: &mut Rng, progress: f64, cfg: &ScheduleConfig) -> TimePair {
    let p = progress.clamp(0.0, 1.0);
    if rng.uniform() >= cfg.neq_ratio(p) {
        return TimePair::equal(cfg.draw(rng, p));
    }
    let a = cfg.draw(rng, p);
    let b = cfg.draw(rng, p);
    TimePair {
        t: a.max(b),
        r: a.min(b),
    }
}

/// Linear path point `z_t = (1 - t) x + t eps` for one shared `t`.
pub fn interpolate(x: &Tensor, eps: &Tensor, t: f64) -> Result<Tensor> {
    x.mul_scalar(1.0 - t).add(&eps.mul_scalar(t))
}

/// Linear path with a per-row time: row `i` uses `t[i]`.
pub fn interpolate_rows(x: &Tensor, eps: &Tensor, t: &[f64]) -> Result<Tensor> {
    let keep: Vec<f64> = t.iter().map(|ti| 1.0 - ti).collect();
    x.row_scale(&keep)?.add(&eps.row_scale(t)?)
}

/// Conditional velocity of the linear path, `eps - x` (constant in `t`).
pub fn cond_velocity(x: &Tensor, eps: &Tensor) -> Result<Tensor> {
    eps.sub(x)
}
