//! Training orchestration for both stages.
//!
//! `fm` mode regresses the instantaneous velocity on degenerate time pairs;
//! `mf` mode regresses the flow-map target on adaptively sampled `(t, r)`
//! pairs, bootstrapping from either the conditional velocity or a frozen
//! pretrained field. Every step draws its batch from a stream derived from
//! `(seed, mode, step)`, so a resumed run continues the exact trajectory of
//! an uninterrupted one.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::flow::{
    cond_velocity, flow_matching_loss, interpolate_rows, meanflow_loss, sample_timepair, times_of,
    TimePair,
};
use crate::harness::config::{ExperimentConfig, VSourceChoice};
use crate::harness::streams;
use crate::metrics::{condition_fidelity, energy_distance, trajectory_curvature};
use crate::net::{duplicate_time_embedding, Checkpoint, NetMode, VelocityNet};
use crate::numcore::{adam_step, seed_chain, AdamState, Rng, Tensor};
use crate::sampler::{fm_euler_sample, meanflow_sample, tile_condition};

/// One evaluation row of the metrics log.
#[derive(Clone, Debug)]
pub struct MetricsRow {
    pub step: u64,
    /// Mean training loss since the previous row.
    pub loss: f64,
    pub fidelity_1: f64,
    pub fidelity_2: f64,
    pub fidelity_4: f64,
    /// Energy distance of pooled 1-step samples against the held-out pool.
    pub energy_distance_1: f64,
    /// Mean trajectory curvature of the 4-step runs.
    pub curvature_4: f64,
}

/// Per-checkpoint evaluation rows, strictly increasing in training step.
#[derive(Clone, Debug, Default)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn push(&mut self, row: MetricsRow) {
        if let Some(last) = self.rows.last() {
            assert!(
                row.step > last.step,
                "metrics rows must be strictly increasing in step"
            );
        }
        self.rows.push(row);
    }

    /// CSV with a digest comment line; columns are stable.
    pub fn to_csv(&self, config_digest: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# config_digest={config_digest}");
        let _ = writeln!(
            out,
            "step,loss,fidelity_1,fidelity_2,fidelity_4,energy_distance_1,curvature_4"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.step,
                r.loss,
                r.fidelity_1,
                r.fidelity_2,
                r.fidelity_4,
                r.energy_distance_1,
                r.curvature_4
            );
        }
        out
    }
}

/// Prepared state for a training run.
pub struct TrainInit {
    pub net: VelocityNet,
    pub adam: AdamState,
    pub start_step: u64,
    /// Frozen bootstrap field for mf training with a pretrained source.
    pub frozen: Option<VelocityNet>,
}

/// Resolves the initial network for `train --mode <mode> [--init-from ckpt]`:
/// - no checkpoint: fresh net in the requested mode;
/// - fm checkpoint + mf mode: duplicate the time embedding and (under the
///   default `auto` source) freeze the fm net as the bootstrap field;
/// - same-mode checkpoint: exact resume (parameters, optimizer, step);
/// - mf checkpoint + fm mode: rejected.
pub fn prepare_training(
    cfg: &ExperimentConfig,
    mode: NetMode,
    init_from: Option<&Checkpoint>,
) -> Result<TrainInit> {
    cfg.validate()?;
    match init_from {
        None => {
            if cfg.train.v_source == VSourceChoice::Pretrained {
                return Err(Error::InvalidArg(
                    "v_source=pretrained requires --init-from with an fm checkpoint".into(),
                ));
            }
            let mut rng = Rng::seed(seed_chain(cfg.seed, &[streams::INIT, mode_tag(mode)]));
            let net = VelocityNet::init(cfg.net, cfg.time_embed, mode, &mut rng)?;
            let adam = AdamState::new(&net.param_tensors());
            Ok(TrainInit {
                adam,
                net,
                start_step: 0,
                frozen: None,
            })
        }
        Some(ckpt) => {
            let ckpt_mode = ckpt.mode()?;
            match (ckpt_mode, mode) {
                (NetMode::Fm, NetMode::Mf) => {
                    let net = duplicate_time_embedding(ckpt)?;
                    let adam = AdamState::new(&net.param_tensors());
                    let frozen = match cfg.train.v_source {
                        VSourceChoice::Conditional => None,
                        VSourceChoice::Auto | VSourceChoice::Pretrained => Some(ckpt.to_net()?),
                    };
                    Ok(TrainInit {
                        adam,
                        net,
                        start_step: 0,
                        frozen,
                    })
                }
                (a, b) if a == b => {
                    let net = ckpt.to_net()?;
                    let adam = ckpt
                        .to_adam_state(&net)?
                        .unwrap_or_else(|| AdamState::new(&net.param_tensors()));
                    let frozen = ckpt.frozen_net()?;
                    Ok(TrainInit {
                        adam,
                        net,
                        start_step: ckpt.meta.step,
                        frozen,
                    })
                }
                (found, expected) => Err(Error::ModeMismatch {
                    expected: expected.as_str().into(),
                    found: found.as_str().into(),
                }),
            }
        }
    }
}

fn mode_tag(mode: NetMode) -> u64 {
    match mode {
        NetMode::Fm => 0xF,
        NetMode::Mf => 0xA,
    }
}

/// Finished training run.
#[derive(Debug)]
pub struct TrainOutcome {
    pub net: VelocityNet,
    pub adam: AdamState,
    pub metrics: MetricsLog,
    pub final_step: u64,
    pub frozen: Option<VelocityNet>,
}

impl TrainOutcome {
    pub fn to_checkpoint(&self, cfg: &ExperimentConfig) -> Result<Checkpoint> {
        let ckpt = Checkpoint::from_net(
            &self.net,
            crate::net::CheckpointMeta {
                step: self.final_step,
                seed: cfg.seed,
                config_digest: cfg.digest(),
            },
            Some(&self.adam),
        );
        match &self.frozen {
            Some(f) => ckpt.with_frozen_velocity(f),
            None => Ok(ckpt),
        }
    }
}

/// Runs (or continues) training to `cfg.train.steps`. `on_checkpoint` fires
/// at every checkpoint cadence with a fully populated checkpoint; a NaN in
/// any step aborts with a numeric error, leaving the last checkpoint intact.
pub fn run_training(
    cfg: &ExperimentConfig,
    mode: NetMode,
    init: TrainInit,
    table: &EmbeddingTable,
    mut on_checkpoint: Option<&mut dyn FnMut(&Checkpoint) -> Result<()>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let TrainInit {
        mut net,
        mut adam,
        start_step,
        frozen,
    } = init;
    let total = cfg.train.steps;
    if start_step > total {
        return Err(Error::InvalidArg(format!(
            "checkpoint is at step {start_step}, beyond the configured {total}"
        )));
    }
    let condition_ids = cfg.task.condition_ids();
    let psi_rows: Vec<Vec<f64>> = condition_ids
        .iter()
        .map(|id| table.get(id).cloned())
        .collect::<Result<_>>()?;
    let heldout = heldout_pool(cfg)?;
    let components = cfg.task.component_means();

    let mut metrics = MetricsLog::default();
    let mut loss_acc = 0.0;
    let mut loss_count = 0u64;
    let batch = cfg.train.batch_size;
    let data_dim = cfg.net.data_dim;

    for step in start_step..total {
        let mut rng = Rng::seed(seed_chain(cfg.seed, &[streams::TRAIN, mode_tag(mode), step]));
        let progress = step as f64 / total.max(1) as f64;

        // Batch: per-example condition, data point, noise, time pair.
        let idxs: Vec<usize> = (0..batch).map(|_| rng.index(condition_ids.len())).collect();
        let ids: Vec<String> = idxs.iter().map(|&i| condition_ids[i].clone()).collect();
        let x = cfg.task.sample_batch(&ids, &mut rng)?;
        let eps = rng.normal_tensor(&[batch, data_dim]);
        let psi = Tensor::from_rows(
            &idxs.iter().map(|&i| psi_rows[i].clone()).collect::<Vec<_>>(),
        )?;
        let schedule = match mode {
            NetMode::Fm => cfg.schedule.equal_only(),
            NetMode::Mf => cfg.schedule,
        };
        let pairs: Vec<TimePair> = (0..batch)
            .map(|_| sample_timepair(&mut rng, progress, &schedule))
            .collect();
        let (t, _) = times_of(&pairs);
        let z_t = interpolate_rows(&x, &eps, &t)?;

        let out = match mode {
            NetMode::Fm => {
                let v = cond_velocity(&x, &eps)?;
                flow_matching_loss(&net, &z_t, &t, &psi, &v)
            }
            NetMode::Mf => {
                let v = match &frozen {
                    Some(fm) => fm.velocity_batch(&z_t, &t, &psi)?,
                    None => cond_velocity(&x, &eps)?,
                };
                meanflow_loss(&net, &z_t, &pairs, &psi, &v)
            }
        }
        .map_err(|e| match e {
            Error::Numeric { context } => Error::Numeric {
                context: format!("step {step}: {context}"),
            },
            Error::NonFinite { context } => Error::Numeric {
                context: format!("step {step}: non-finite {context}"),
            },
            other => other,
        })?;

        let mut params = net.param_tensors_mut();
        adam_step(&cfg.optim, &mut adam, &mut params, &out.grads)?;
        drop(params);
        loss_acc += out.loss;
        loss_count += 1;

        let done = step + 1;
        let eval_due = cfg.train.eval_every > 0 && done % cfg.train.eval_every == 0;
        if eval_due || done == total {
            let mean_loss = loss_acc / loss_count.max(1) as f64;
            loss_acc = 0.0;
            loss_count = 0;
            let row = evaluate_net(
                &net,
                mode,
                cfg,
                table,
                &heldout,
                &components,
                done,
                mean_loss,
            )?;
            metrics.push(row);
        }
        let ckpt_due = cfg.train.checkpoint_every > 0 && done % cfg.train.checkpoint_every == 0;
        if ckpt_due || done == total {
            if let Some(cb) = on_checkpoint.as_deref_mut() {
                let outcome_view = TrainOutcome {
                    net: net.clone(),
                    adam: adam.clone(),
                    metrics: MetricsLog::default(),
                    final_step: done,
                    frozen: frozen.clone(),
                };
                cb(&outcome_view.to_checkpoint(cfg)?)?;
            }
        }
    }

    Ok(TrainOutcome {
        net,
        adam,
        metrics,
        final_step: total,
        frozen,
    })
}

/// Held-out pool for in-training energy-distance rows.
fn heldout_pool(cfg: &ExperimentConfig) -> Result<Tensor> {
    let per = cfg.heldout_per_condition.max(1);
    let mut rng = Rng::seed(seed_chain(cfg.seed, &[streams::HELDOUT]));
    let mut rows = Vec::new();
    for id in cfg.task.condition_ids() {
        for _ in 0..per {
            rows.push(cfg.task.sample_point(&id, &mut rng)?);
        }
    }
    Tensor::from_rows(&rows)
}

/// Samples with the mode-appropriate sampler and scores 1/2/4-step fidelity,
/// 1-step energy distance and 4-step curvature.
#[allow(clippy::too_many_arguments)]
fn evaluate_net(
    net: &VelocityNet,
    mode: NetMode,
    cfg: &ExperimentConfig,
    table: &EmbeddingTable,
    heldout: &Tensor,
    components: &BTreeMap<String, Vec<f64>>,
    step: u64,
    mean_loss: f64,
) -> Result<MetricsRow> {
    let n = cfg.train.eval_samples_per_condition.max(1);
    let mut fidelities = BTreeMap::new();
    let mut pooled_one_step: Vec<Vec<f64>> = Vec::new();
    let mut curvature_sum = 0.0;
    let mut curvature_count = 0usize;
    for steps in [1usize, 2, 4] {
        let mut by_condition = BTreeMap::new();
        for (ci, cond) in cfg.task.condition_ids().iter().enumerate() {
            let psi = tile_condition(table.get(cond)?, n);
            let mut rng = Rng::seed(seed_chain(
                cfg.seed,
                &[streams::EVAL, step, steps as u64, ci as u64],
            ));
            let record = steps == 4;
            let run = match mode {
                NetMode::Mf => {
                    meanflow_sample(net, cfg.net.data_dim, &psi, steps, &mut rng, record)?
                }
                NetMode::Fm => {
                    fm_euler_sample(net, cfg.net.data_dim, &psi, steps, &mut rng, record)?
                }
            };
            if steps == 1 {
                for i in 0..run.samples.rows() {
                    pooled_one_step.push(run.samples.row_slice(i).to_vec());
                }
            }
            if record {
                let c = trajectory_curvature(&run)?;
                curvature_sum += c.mean;
                curvature_count += 1;
            }
            by_condition.insert(cond.clone(), run.samples);
        }
        let report = condition_fidelity(&by_condition, components)?;
        fidelities.insert(steps, report.overall);
    }
    let pooled = Tensor::from_rows(&pooled_one_step)?;
    let ed = energy_distance(&pooled, heldout)?;
    Ok(MetricsRow {
        step,
        loss: mean_loss,
        fidelity_1: fidelities[&1],
        fidelity_2: fidelities[&2],
        fidelity_4: fidelities[&4],
        energy_distance_1: ed,
        curvature_4: curvature_sum / curvature_count.max(1) as f64,
    })
}

/// Convenience wrapper: fidelity of a trained net at a given step count,
/// evaluated fresh with `n` samples per condition.
pub fn fidelity_at_steps(
    net: &VelocityNet,
    cfg: &ExperimentConfig,
    table: &EmbeddingTable,
    steps: usize,
    n: usize,
    seed: u64,
) -> Result<f64> {
    let mode = net.mode();
    let components = cfg.task.component_means();
    let mut by_condition = BTreeMap::new();
    for (ci, cond) in cfg.task.condition_ids().iter().enumerate() {
        let psi = tile_condition(table.get(cond)?, n);
        let mut rng = Rng::seed(seed_chain(seed, &[streams::EVAL, steps as u64, ci as u64]));
        let run = match mode {
            NetMode::Mf => meanflow_sample(net, cfg.net.data_dim, &psi, steps, &mut rng, false)?,
            NetMode::Fm => fm_euler_sample(net, cfg.net.data_dim, &psi, steps, &mut rng, false)?,
        };
        by_condition.insert(cond.clone(), run.samples);
    }
    Ok(condition_fidelity(&by_condition, &components)?.overall)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{EmbedMode, SyntheticEmbedSpec};
    use crate::flow::{ScheduleConfig, ScheduleFamily};
    use crate::harness::config::{EmbeddingConfig, TrainConfig};
    use crate::harness::data::build_embedding_table;
    use crate::net::{NetDims, TimeEmbedConfig};
    use crate::numcore::AdamConfig;
    use crate::task::TaskConfig;

    fn tiny_config(steps: u64) -> ExperimentConfig {
        ExperimentConfig {
            task: TaskConfig::Mixture {
                n_attributes: 2,
                values_per_attribute: 2,
                arm: 1.5,
                component_std: 0.3,
            },
            embedding: EmbeddingConfig::Synthetic {
                spec: SyntheticEmbedSpec {
                    n_attributes: 2,
                    values_per_attribute: 2,
                    dim: 8,
                    separation: 4.0,
                    mode: EmbedMode::Disentangled,
                },
            },
            net: NetDims {
                data_dim: 2,
                cond_dim: 8,
                hidden_dim: 16,
                depth: 2,
            },
            time_embed: TimeEmbedConfig {
                feature_dim: 8,
                min_freq: 1.0,
                max_freq: 100.0,
            },
            schedule: ScheduleConfig {
                family: ScheduleFamily::Uniform,
                ..ScheduleConfig::default()
            },
            optim: AdamConfig::default(),
            train: TrainConfig {
                steps,
                batch_size: 16,
                eval_every: 0,
                checkpoint_every: 0,
                eval_samples_per_condition: 32,
                v_source: VSourceChoice::Auto,
            },
            seed: 5,
            data_per_condition: 50,
            heldout_per_condition: 50,
        }
    }

    fn params_bits(net: &VelocityNet) -> Vec<u64> {
        net.param_tensors()
            .iter()
            .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
            .collect()
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = tiny_config(30);
        let table = build_embedding_table(&cfg).unwrap();
        let run = |cfg: &ExperimentConfig| {
            let init = prepare_training(cfg, NetMode::Fm, None).unwrap();
            run_training(cfg, NetMode::Fm, init, &table, None).unwrap()
        };
        let a = run(&cfg);
        let b = run(&cfg);
        assert_eq!(params_bits(&a.net), params_bits(&b.net));
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let table = build_embedding_table(&tiny_config(1)).unwrap();

        // Uninterrupted: 40 steps.
        let cfg40 = tiny_config(40);
        let init = prepare_training(&cfg40, NetMode::Fm, None).unwrap();
        let full = run_training(&cfg40, NetMode::Fm, init, &table, None).unwrap();

        // Interrupted: 20 steps, checkpoint, then resume to 40.
        let cfg20 = tiny_config(20);
        let init = prepare_training(&cfg20, NetMode::Fm, None).unwrap();
        let half = run_training(&cfg20, NetMode::Fm, init, &table, None).unwrap();
        let ckpt = half.to_checkpoint(&cfg20).unwrap();
        let resumed_init = prepare_training(&cfg40, NetMode::Fm, Some(&ckpt)).unwrap();
        assert_eq!(resumed_init.start_step, 20);
        let resumed = run_training(&cfg40, NetMode::Fm, resumed_init, &table, None).unwrap();

        assert_eq!(params_bits(&full.net), params_bits(&resumed.net));
    }

    #[test]
    fn mf_from_fm_checkpoint_duplicates_and_freezes() {
        let cfg = tiny_config(10);
        let table = build_embedding_table(&cfg).unwrap();
        let init = prepare_training(&cfg, NetMode::Fm, None).unwrap();
        let fm = run_training(&cfg, NetMode::Fm, init, &table, None).unwrap();
        let ckpt = fm.to_checkpoint(&cfg).unwrap();

        let mf_init = prepare_training(&cfg, NetMode::Mf, Some(&ckpt)).unwrap();
        assert_eq!(mf_init.net.mode(), NetMode::Mf);
        assert!(mf_init.frozen.is_some());
        assert_eq!(mf_init.start_step, 0);

        let mf = run_training(&cfg, NetMode::Mf, mf_init, &table, None).unwrap();
        // The frozen field travels with the checkpoint.
        let mf_ckpt = mf.to_checkpoint(&cfg).unwrap();
        assert!(mf_ckpt.frozen_velocity.is_some());
        assert!(mf_ckpt.frozen_net().unwrap().is_some());
    }

    #[test]
    fn fm_from_mf_checkpoint_rejected() {
        let cfg = tiny_config(5);
        let table = build_embedding_table(&cfg).unwrap();
        let init = prepare_training(&cfg, NetMode::Mf, None).unwrap();
        let mf = run_training(&cfg, NetMode::Mf, init, &table, None).unwrap();
        let ckpt = mf.to_checkpoint(&cfg).unwrap();
        assert!(matches!(
            prepare_training(&cfg, NetMode::Fm, Some(&ckpt)),
            Err(Error::ModeMismatch { .. })
        ));
    }

    #[test]
    fn metrics_rows_strictly_increase() {
        let mut cfg = tiny_config(20);
        cfg.train.eval_every = 10;
        cfg.train.eval_samples_per_condition = 8;
        let table = build_embedding_table(&cfg).unwrap();
        let init = prepare_training(&cfg, NetMode::Fm, None).unwrap();
        let out = run_training(&cfg, NetMode::Fm, init, &table, None).unwrap();
        assert_eq!(out.metrics.rows.len(), 2);
        assert!(out.metrics.rows[0].step < out.metrics.rows[1].step);
        let csv = out.metrics.to_csv("abc");
        assert!(csv.starts_with("# config_digest=abc\n"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn nan_parameters_abort_with_step_context() {
        let cfg = tiny_config(5);
        let table = build_embedding_table(&cfg).unwrap();
        let mut init = prepare_training(&cfg, NetMode::Fm, None).unwrap();
        init.net.param_tensors_mut()[0].data_mut()[0] = f64::NAN;
        match run_training(&cfg, NetMode::Fm, init, &table, None) {
            Err(Error::Numeric { context }) => assert!(context.contains("step 0")),
            other => panic!("expected numeric failure, got {other:?}"),
        }
    }
}
