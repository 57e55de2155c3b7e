//! Evaluation of sample sets against datasets.

use crate::error::{Error, Result};
use crate::harness::data::{load_dataset, load_samples};
use crate::metrics::{condition_fidelity, energy_distance, trajectory_curvature, FidelityReport};
use crate::numcore::Tensor;
use crate::sampler::SampleRun;
use std::path::Path;

#[derive(Clone, Copy, Debug, Default)]
pub struct EvalOptions {
    /// Accept mismatched config digests between samples and dataset.
    pub force_digest: bool,
}

/// Scores a sample directory against a data directory: condition fidelity
/// against the task's component means, energy distance of the pooled samples
/// against the pooled held-out split, and mean trajectory curvature when the
/// samples were recorded with intermediate states.
pub fn eval_samples(samples_dir: &Path, dataset_dir: &Path, opts: EvalOptions) -> Result<FidelityReport> {
    let samples = load_samples(samples_dir)?;
    let dataset = load_dataset(dataset_dir)?;
    if samples.summary.config_digest != dataset.manifest.config_digest && !opts.force_digest {
        return Err(Error::DigestMismatch {
            left: samples.summary.config_digest.clone(),
            right: dataset.manifest.config_digest.clone(),
            context: "samples vs dataset".into(),
        });
    }
    for cond in samples.by_condition.keys() {
        if !dataset.manifest.condition_ids.contains(cond) {
            return Err(Error::UnknownCondition(cond.clone()));
        }
    }
    let components = dataset.manifest.task.component_means();
    let mut report = condition_fidelity(&samples.by_condition, &components)?;

    let pooled_samples = pool(samples.by_condition.values())?;
    let pooled_heldout = pool(dataset.heldout.values())?;
    report.energy_distance = Some(energy_distance(&pooled_samples, &pooled_heldout)?);

    if !samples.trajectories.is_empty() {
        let mut sum = 0.0;
        let mut count = 0usize;
        for trajs in samples.trajectories.values() {
            let run = trajectories_as_run(trajs)?;
            let c = trajectory_curvature(&run)?;
            sum += c.mean * c.used as f64;
            count += c.used;
        }
        if count > 0 {
            report.curvature = Some(sum / count as f64);
        }
    }
    Ok(report)
}

fn pool<'a>(groups: impl Iterator<Item = &'a Tensor>) -> Result<Tensor> {
    let mut rows = Vec::new();
    for g in groups {
        for i in 0..g.rows() {
            rows.push(g.row_slice(i).to_vec());
        }
    }
    Tensor::from_rows(&rows)
}

/// Reassembles per-sample state sequences into the per-step layout that
/// `trajectory_curvature` expects.
fn trajectories_as_run(trajs: &[Vec<Vec<f64>>]) -> Result<SampleRun> {
    let steps = trajs
        .first()
        .map(|t| t.len())
        .ok_or_else(|| Error::InvalidArg("no trajectories".into()))?;
    if trajs.iter().any(|t| t.len() != steps) {
        return Err(Error::Format("ragged trajectory lengths".into()));
    }
    let mut states = Vec::with_capacity(steps);
    for s in 0..steps {
        let rows: Vec<Vec<f64>> = trajs.iter().map(|t| t[s].clone()).collect();
        states.push(Tensor::from_rows(&rows)?);
    }
    Ok(SampleRun {
        steps: steps - 1,
        grid: (0..steps)
            .map(|i| (steps - 1 - i) as f64 / (steps - 1).max(1) as f64)
            .collect(),
        samples: states.last().unwrap().clone(),
        trajectory: Some(states),
    })
}
