//! Named end-to-end experiments with pass/fail summaries.
//!
//! Each recipe builds its pipeline from scratch (deterministically, from the
//! given seed), evaluates the thresholds pinned in `thresholds`, prints one
//! line per check and writes a JSON summary. The same functions back the
//! acceptance test suite.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::{EmbedMode, SyntheticEmbedSpec};
use crate::error::{Error, Result};
use crate::flow::{
    analytic_average_velocity, analytic_marginal_velocity, sample_timepair, GaussianTask,
    ScheduleConfig, ScheduleFamily, TimePair,
};
use crate::harness::analyze::{analyze_corpus, AnalyzeMetric, AnalyzeOptions};
use crate::harness::config::{EmbeddingConfig, ExperimentConfig, TrainConfig, VSourceChoice};
use crate::harness::data::build_embedding_table;
use crate::harness::streams;
use crate::harness::train::{prepare_training, run_training};
use crate::embed::EmbeddingTable;
use crate::metrics::{condition_fidelity, energy_distance, trajectory_curvature};
use crate::net::{
    LinearFlowMap, NetDims, NetMode, TimeEmbedConfig, TimeVelocityModel, VelocityNet,
};
use crate::numcore::{jvp, seed_chain, AdamConfig, Engine, Rng, Tape, Tensor};
use crate::sampler::{fm_euler_sample, meanflow_sample, tile_condition, SampleRun};
use crate::task::TaskConfig;

/// Pinned acceptance thresholds.
pub mod thresholds {
    /// Max relative error of reverse-mode gradients against central
    /// finite differences.
    pub const REVERSE_FD_REL: f64 = 1e-6;
    /// Max relative error of JVP tangents along `(v, 1, 0, 0)`.
    pub const JVP_FD_REL: f64 = 1e-4;
    /// Boundary identity tolerance at `r = t`.
    pub const BOUNDARY_ABS: f64 = 1e-12;
    /// Linear stand-in exactness.
    pub const LINEAR_STANDIN_ABS: f64 = 1e-10;
    /// Pretrained instantaneous field vs analytic marginal velocity.
    pub const GAUSSIAN_FM_RMSE: f64 = 0.1;
    /// Finetuned average-velocity field vs RK4 oracle.
    pub const GAUSSIAN_MF_RMSE: f64 = 0.15;
    /// One-step energy distance to held-out data.
    pub const ONE_STEP_ED: f64 = 0.05;
    /// One-step condition fidelity.
    pub const ONE_STEP_FIDELITY: f64 = 0.9;
    /// Noise margin for step-scaling monotonicity.
    pub const STEP_SCALING_MARGIN: f64 = 0.02;
    /// Allowed fidelity gap between 4-step sampling and the 50-step baseline.
    pub const BASELINE_GAP: f64 = 0.05;
    /// Required 1-step fidelity advantage of separable embeddings.
    pub const REPRESENTATION_GAP: f64 = 0.1;
    /// Order-statistics check: P(t >= 1/2) for the max of two uniforms.
    pub const SCHEDULE_P: f64 = 0.75;
    pub const SCHEDULE_TOL: f64 = 0.02;
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub detail: String,
    pub pass: bool,
}

impl Check {
    fn new(name: &str, pass: bool, detail: String) -> Check {
        Check {
            name: name.to_string(),
            detail,
            pass,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "[{}] {}: {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

// ---------------------------------------------------------------------------
// Fast oracles (no training).
// ---------------------------------------------------------------------------

fn random_small_net(rng: &mut Rng) -> (VelocityNet, usize, usize) {
    let data_dim = 2 + rng.index(2);
    let cond_dim = 2 + rng.index(2);
    let dims = NetDims {
        data_dim,
        cond_dim,
        hidden_dim: 4 + rng.index(5),
        depth: 2 + rng.index(2),
    };
    let tcfg = TimeEmbedConfig {
        feature_dim: 4 + 2 * rng.index(2),
        min_freq: 1.0,
        max_freq: 20.0,
    };
    let mut net = VelocityNet::init(dims, tcfg, NetMode::Mf, rng).unwrap();
    // Random final layer: the zero init would make derivative checks vacuous.
    let shape: Vec<usize> = {
        let params = net.param_tensors();
        params[params.len() - 2].shape().to_vec()
    };
    let fresh = rng.normal_tensor(&shape).mul_scalar(0.5);
    let mut params = net.param_tensors_mut();
    let last_w = params.len() - 2;
    *params[last_w] = fresh;
    drop(params);
    (net, data_dim, cond_dim)
}

/// Reverse-mode oracle: for `n_nets` random small networks, every parameter
/// gradient of a squared-error loss must match central finite differences.
pub fn autodiff_reverse_check(n_nets: usize, seed: u64) -> Check {
    let mut rng = Rng::seed(seed_chain(seed, &[0xAD1]));
    let mut max_rel: f64 = 0.0;
    for _ in 0..n_nets {
        let (mut net, d, c) = random_small_net(&mut rng);
        let b = 1 + rng.index(3);
        let z = rng.normal_tensor(&[b, d]);
        let psi = rng.normal_tensor(&[b, c]);
        let target = rng.normal_tensor(&[b, d]);
        let t: Vec<f64> = (0..b).map(|_| 0.2 + 0.7 * rng.uniform()).collect();
        let r: Vec<f64> = t.iter().map(|ti| ti * rng.uniform()).collect();

        let eval_loss = |net: &VelocityNet| -> f64 {
            let pred = net.avg_velocity_batch(&z, &t, &r, &psi).unwrap();
            pred.sub(&target).unwrap().sum_sq().data()[0] / b as f64
        };

        // Autodiff gradients via the tape.
        let grads = {
            let mut tape = Tape::new();
            let bound = net.bind(&mut tape);
            let ids: Vec<_> = bound.handles().into_iter().copied().collect();
            let z_id = tape.lift(z.clone());
            let t_id = tape.lift(Tensor::column(&t));
            let r_id = tape.lift(Tensor::column(&r));
            let psi_id = tape.lift(psi.clone());
            let pred = net
                .forward_bound(&mut tape, &bound, &z_id, &t_id, &r_id, &psi_id)
                .unwrap();
            let tg = tape.lift(target.clone());
            let diff = tape.sub(&pred, &tg).unwrap();
            let ss = tape.sum_sq(&diff).unwrap();
            let loss = tape.mul_scalar(&ss, 1.0 / b as f64).unwrap();
            let all = tape.backward(loss).unwrap();
            ids.iter().map(|id| all.wrt(*id).clone()).collect::<Vec<_>>()
        };

        let h = 1e-5;
        for pi in 0..grads.len() {
            for k in 0..grads[pi].numel() {
                let orig = net.param_tensors()[pi].data()[k];
                net.param_tensors_mut()[pi].data_mut()[k] = orig + h;
                let plus = eval_loss(&net);
                net.param_tensors_mut()[pi].data_mut()[k] = orig - h;
                let minus = eval_loss(&net);
                net.param_tensors_mut()[pi].data_mut()[k] = orig;
                let fd = (plus - minus) / (2.0 * h);
                let ad = grads[pi].data()[k];
                let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1.0);
                max_rel = max_rel.max(rel);
            }
        }
    }
    Check::new(
        "autodiff-reverse-fd",
        max_rel < thresholds::REVERSE_FD_REL,
        format!(
            "max rel err {max_rel:.2e} over {n_nets} random nets (tol {:.0e})",
            thresholds::REVERSE_FD_REL
        ),
    )
}

/// Forward-mode oracle: JVP tangents along the combined direction
/// `(v, 1, 0, 0)` must match central differences of the network output.
pub fn autodiff_jvp_check(n_nets: usize, seed: u64) -> Check {
    let mut rng = Rng::seed(seed_chain(seed, &[0xAD2]));
    let mut max_rel: f64 = 0.0;
    for _ in 0..n_nets {
        let (net, d, c) = random_small_net(&mut rng);
        let b = 1 + rng.index(3);
        let z = rng.normal_tensor(&[b, d]);
        let psi = rng.normal_tensor(&[b, c]);
        let v = rng.normal_tensor(&[b, d]);
        let t: Vec<f64> = (0..b).map(|_| 0.2 + 0.7 * rng.uniform()).collect();
        let r: Vec<f64> = t.iter().map(|ti| ti * rng.uniform()).collect();

        let inputs = [
            z.clone(),
            Tensor::column(&t),
            Tensor::column(&r),
            psi.clone(),
        ];
        let tangents = [
            v.clone(),
            Tensor::filled(&[b, 1], 1.0),
            Tensor::zeros(&[b, 1]),
            Tensor::zeros_like(&psi),
        ];
        let (_, tangent) = jvp(
            |fw, ins| net.forward_in(fw, &ins[0], &ins[1], &ins[2], &ins[3]),
            &inputs,
            &tangents,
        )
        .unwrap();

        let h = 1e-5;
        let shifted = |sign: f64| -> Tensor {
            let zs = z.add(&v.mul_scalar(sign * h)).unwrap();
            let ts: Vec<f64> = t.iter().map(|ti| ti + sign * h).collect();
            net.avg_velocity_batch(&zs, &ts, &r, &psi).unwrap()
        };
        let fd = shifted(1.0)
            .sub(&shifted(-1.0))
            .unwrap()
            .mul_scalar(1.0 / (2.0 * h));
        for (a, bb) in tangent.data().iter().zip(fd.data()) {
            let rel = (a - bb).abs() / a.abs().max(bb.abs()).max(1.0);
            max_rel = max_rel.max(rel);
        }
    }
    Check::new(
        "autodiff-jvp-fd",
        max_rel < thresholds::JVP_FD_REL,
        format!(
            "max rel err {max_rel:.2e} over {n_nets} random nets (tol {:.0e})",
            thresholds::JVP_FD_REL
        ),
    )
}

/// Boundary identity: the flow-map target at `r = t` returns the bootstrap
/// velocity exactly, through both the skip path and the JVP path.
pub fn boundary_identity_check(n_inputs: usize, seed: u64) -> Check {
    let mut rng = Rng::seed(seed_chain(seed, &[0xB0]));
    let mut max_abs: f64 = 0.0;
    let mut remaining = n_inputs;
    while remaining > 0 {
        let (net, d, c) = random_small_net(&mut rng);
        let batch = (1 + rng.index(4)).min(remaining);
        let z = rng.normal_tensor(&[batch, d]);
        let psi = rng.normal_tensor(&[batch, c]);
        let v = rng.normal_tensor(&[batch, d]);
        let ts: Vec<f64> = (0..batch).map(|_| rng.uniform()).collect();

        // Skip path: every pair degenerate.
        let pairs: Vec<TimePair> = ts.iter().map(|&t| TimePair::equal(t)).collect();
        let tgt = crate::flow::meanflow_target(&net, &z, &pairs, &psi, &v).unwrap();
        for (a, b) in tgt.data().iter().zip(v.data()) {
            max_abs = max_abs.max((a - b).abs());
        }

        // JVP path: one non-equal row forces the full computation; the
        // degenerate rows must still reproduce v.
        if batch >= 2 {
            let mut mixed = pairs;
            mixed[0] = TimePair::new(0.9, 0.1).unwrap();
            let tgt = crate::flow::meanflow_target(&net, &z, &mixed, &psi, &v).unwrap();
            for i in 1..batch {
                for (a, b) in tgt.row_slice(i).iter().zip(v.row_slice(i)) {
                    max_abs = max_abs.max((a - b).abs());
                }
            }
        }
        remaining -= batch;
    }
    Check::new(
        "boundary-identity",
        max_abs <= thresholds::BOUNDARY_ABS,
        format!(
            "max |u_tgt - v| = {max_abs:.2e} over {n_inputs} random degenerate pairs (tol {:.0e})",
            thresholds::BOUNDARY_ABS
        ),
    )
}

/// Linear stand-in: with `u(z,t,r) = zA + tb + rc` the hand chain rule gives
/// `u_tgt = v + (r - t)(b + vA)` exactly.
pub fn linear_standin_check(seed: u64) -> Check {
    let mut rng = Rng::seed(seed_chain(seed, &[0x11]));
    let mut max_abs: f64 = 0.0;
    for _ in 0..20 {
        let d = 2 + rng.index(2);
        let model = LinearFlowMap {
            a: rng.normal_tensor(&[d, d]),
            b: rng.normal_tensor(&[1, d]),
            c: rng.normal_tensor(&[1, d]),
        };
        let b = 1 + rng.index(4);
        let z = rng.normal_tensor(&[b, d]);
        let psi = Tensor::zeros(&[b, 1]);
        let v = rng.normal_tensor(&[b, d]);
        let pairs: Vec<TimePair> = (0..b)
            .map(|_| {
                let t = rng.uniform();
                TimePair::new(t, t * rng.uniform()).unwrap()
            })
            .collect();
        let tgt = crate::flow::meanflow_target(&model, &z, &pairs, &psi, &v).unwrap();
        let b_suffix = Tensor::new(vec![d], model.b.data().to_vec()).unwrap();
        let va_b = v.matmul(&model.a).unwrap().add(&b_suffix).unwrap();
        let deltas: Vec<f64> = pairs.iter().map(|p| p.r() - p.t()).collect();
        let hand = v.add(&va_b.row_scale(&deltas).unwrap()).unwrap();
        for (x, y) in tgt.data().iter().zip(hand.data()) {
            max_abs = max_abs.max((x - y).abs());
        }
    }
    Check::new(
        "linear-standin",
        max_abs < thresholds::LINEAR_STANDIN_ABS,
        format!(
            "max |u_tgt - hand| = {max_abs:.2e} (tol {:.0e})",
            thresholds::LINEAR_STANDIN_ABS
        ),
    )
}

/// Schedule statistics: non-equal uniform pairs follow the order statistics
/// of two uniforms; a zero non-equal ratio yields only degenerate pairs.
pub fn schedule_checks(seed: u64) -> Vec<Check> {
    let mut checks = Vec::new();
    let uniform_all_neq = ScheduleConfig {
        family: ScheduleFamily::Uniform,
        neq_ratio_start: 1.0,
        neq_ratio_end: 1.0,
        ..ScheduleConfig::default()
    };
    let mut rng = Rng::seed(seed_chain(seed, &[0x5C]));
    let n = 100_000;
    let mut hits = 0usize;
    for _ in 0..n {
        if sample_timepair(&mut rng, 0.5, &uniform_all_neq).t() >= 0.5 {
            hits += 1;
        }
    }
    let p = hits as f64 / n as f64;
    checks.push(Check::new(
        "schedule-order-statistics",
        (p - thresholds::SCHEDULE_P).abs() < thresholds::SCHEDULE_TOL,
        format!(
            "P(t >= 0.5) = {p:.4} over {n} draws (want {} +- {})",
            thresholds::SCHEDULE_P,
            thresholds::SCHEDULE_TOL
        ),
    ));

    let equal_only = ScheduleConfig::default().equal_only();
    let mut all_equal = true;
    for _ in 0..10_000 {
        if !sample_timepair(&mut rng, 0.5, &equal_only).is_equal() {
            all_equal = false;
        }
    }
    checks.push(Check::new(
        "schedule-equal-pairs",
        all_equal,
        "neq_ratio 0 produced only t == r pairs over 10000 draws".to_string(),
    ));
    checks
}

/// Hand-computed fixtures for the embedding metrics.
pub fn metric_fixture_checks() -> Vec<Check> {
    use crate::embed::{
        cosine_distance, disentanglement_score, mean_pool, retrieve_topk, Corpus,
        EmbeddingRecord, RetrievalMode,
    };
    let mut checks = Vec::new();

    let pool = mean_pool(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
    checks.push(Check::new(
        "mean-pool-fixture",
        pool == vec![2.0, 3.0],
        format!("mean_pool([[1,2],[3,4]]) = {pool:?}"),
    ));

    let d_orth = cosine_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
    let d_neg = cosine_distance(&[1.0, 0.0], &[-1.0, 0.0]).unwrap();
    checks.push(Check::new(
        "cosine-fixture",
        (d_orth - 1.0).abs() < 1e-12 && (d_neg - 2.0).abs() < 1e-12,
        format!("orthogonal -> {d_orth}, antipodal -> {d_neg}"),
    ));

    let rec = |id: &str, tok: Vec<Vec<f64>>| EmbeddingRecord {
        id: id.into(),
        token_embeddings: tok,
        image_embedding: None,
        vision_embedding: None,
        text: None,
    };
    let corpus = Corpus::from_records(vec![
        rec("a", vec![vec![1.0, 0.0]]),
        rec("b", vec![vec![0.0, 1.0]]),
        rec("c", vec![vec![0.9, 0.1]]),
    ])
    .unwrap();
    let hits = retrieve_topk(&corpus.records[0], &corpus, 2, RetrievalMode::TextText).unwrap();
    checks.push(Check::new(
        "retrieval-fixture",
        hits[0].id == "a" && hits[1].id == "c" && hits.len() == 2,
        format!("top-2 for 'a' -> [{}, {}]", hits[0].id, hits[1].id),
    ));

    let tok = vec![0.2, 0.9];
    let identical = Corpus::from_records(vec![
        rec("a", vec![tok.clone(); 6]),
        rec("b", vec![tok.clone(); 4]),
    ])
    .unwrap();
    let report = disentanglement_score(&identical, 0.3, 7).unwrap();
    checks.push(Check::new(
        "disentanglement-identical-tokens",
        (report.score - 1.0).abs() < 1e-12,
        format!("identical-token corpus scored {}", report.score),
    ));
    checks
}

/// The fast oracle battery behind `repro oracle-suite`.
pub fn oracle_suite(seed: u64) -> Vec<Check> {
    let mut checks = vec![
        autodiff_reverse_check(100, seed),
        autodiff_jvp_check(100, seed),
        boundary_identity_check(1000, seed),
        linear_standin_check(seed),
    ];
    checks.extend(schedule_checks(seed));
    checks.extend(metric_fixture_checks());
    checks
}

// ---------------------------------------------------------------------------
// Trained pipelines.
// ---------------------------------------------------------------------------

/// Step budgets and evaluation sizes for the trained recipes.
#[derive(Clone, Copy, Debug)]
pub struct RecipeScale {
    pub fm_steps: u64,
    pub mf_steps: u64,
    pub batch: usize,
    pub hidden: usize,
    pub depth: usize,
    /// Per-condition sample count for headline metrics.
    pub quality_n: usize,
    /// Per-condition held-out count for energy distance.
    pub heldout_n: usize,
    /// The representation contrast runs a capacity-limited pair of models at
    /// its own budget: compositional embeddings fit in a narrow trunk almost
    /// immediately, entangled ones have to be memorized per condition, and
    /// the contrast is read out mid-convergence.
    pub contrast_fm_steps: u64,
    pub contrast_mf_steps: u64,
    pub contrast_hidden: usize,
    /// Per-condition sample count for the representation contrast.
    pub contrast_n: usize,
}

impl RecipeScale {
    /// The calibrated acceptance budget.
    pub fn full() -> Self {
        RecipeScale {
            fm_steps: 4000,
            mf_steps: 6000,
            batch: 256,
            hidden: 128,
            depth: 3,
            quality_n: 5000,
            heldout_n: 5000,
            contrast_fm_steps: 1500,
            contrast_mf_steps: 1000,
            contrast_hidden: 48,
            contrast_n: 2000,
        }
    }

    /// Minutes-to-seconds smoke scale for examples and CLI tests.
    pub fn smoke() -> Self {
        RecipeScale {
            fm_steps: 250,
            mf_steps: 350,
            batch: 64,
            hidden: 32,
            depth: 2,
            quality_n: 200,
            heldout_n: 200,
            contrast_fm_steps: 150,
            contrast_mf_steps: 150,
            contrast_hidden: 24,
            contrast_n: 100,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(RecipeScale::full()),
            "smoke" => Ok(RecipeScale::smoke()),
            other => Err(Error::InvalidArg(format!(
                "unknown scale {other:?}, expected full|smoke"
            ))),
        }
    }
}

/// Time featurization for the trained recipes. The top frequency is kept at
/// 8 rad: the bootstrapped flow-map target consumes d/dt of the embedding,
/// which scales with the top frequency, and ladders beyond ~30 rad make that
/// derivative large enough at initialization to destabilize finetuning.
fn recipe_time_embed() -> TimeEmbedConfig {
    TimeEmbedConfig {
        feature_dim: 32,
        min_freq: 1.0,
        max_freq: 8.0,
    }
}

fn base_train(scale: &RecipeScale, steps: u64) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: scale.batch,
        eval_every: 0,
        checkpoint_every: 0,
        eval_samples_per_condition: 512,
        v_source: VSourceChoice::Auto,
    }
}

/// Config for the analytic Gaussian oracle experiment. Uniform time sampling
/// is used so the endpoints of the probe grids sit inside the trained range.
pub fn gaussian_config(seed: u64, scale: &RecipeScale) -> ExperimentConfig {
    ExperimentConfig {
        task: TaskConfig::Gaussian {
            mean: vec![0.4, -0.7],
            std: 0.8,
        },
        embedding: EmbeddingConfig::Table {
            path: String::new(),
        },
        net: NetDims {
            data_dim: 2,
            cond_dim: 8,
            hidden_dim: scale.hidden,
            depth: scale.depth,
        },
        time_embed: recipe_time_embed(),
        schedule: ScheduleConfig {
            family: ScheduleFamily::Uniform,
            ..ScheduleConfig::default()
        },
        optim: AdamConfig::default(),
        train: base_train(scale, scale.fm_steps),
        seed,
        data_per_condition: 1000,
        heldout_per_condition: 1000,
    }
}

/// Mixture layout parameters shared by the generation-quality recipes.
#[derive(Clone, Copy, Debug)]
pub struct MixtureParams {
    pub values_per_attribute: usize,
    pub arm: f64,
    pub component_std: f64,
    pub separation: f64,
    pub mode: EmbedMode,
}

impl MixtureParams {
    /// The 2x2 layout of the one-step-quality and step-scaling experiments.
    pub fn two_by_two(mode: EmbedMode) -> Self {
        MixtureParams {
            values_per_attribute: 2,
            arm: 1.5,
            component_std: 0.3,
            separation: 4.0,
            mode,
        }
    }

    /// The 4x4 layout of the representation contrast: sixteen attribute
    /// combinations, enough that entangled embeddings must be memorized one
    /// by one while the compositional ones still factor per attribute.
    pub fn four_by_four(mode: EmbedMode) -> Self {
        MixtureParams {
            values_per_attribute: 4,
            arm: 1.5,
            component_std: 0.18,
            separation: 4.0,
            mode,
        }
    }
}

pub fn mixture_config(params: &MixtureParams, seed: u64, scale: &RecipeScale) -> ExperimentConfig {
    ExperimentConfig {
        task: TaskConfig::Mixture {
            n_attributes: 2,
            values_per_attribute: params.values_per_attribute,
            arm: params.arm,
            component_std: params.component_std,
        },
        embedding: EmbeddingConfig::Synthetic {
            spec: SyntheticEmbedSpec {
                n_attributes: 2,
                values_per_attribute: params.values_per_attribute,
                dim: 8,
                separation: params.separation,
                mode: params.mode,
            },
        },
        net: NetDims {
            data_dim: 2,
            cond_dim: 8,
            hidden_dim: scale.hidden,
            depth: scale.depth,
        },
        time_embed: recipe_time_embed(),
        schedule: ScheduleConfig::default(),
        optim: AdamConfig::default(),
        train: base_train(scale, scale.fm_steps),
        seed,
        data_per_condition: 1000,
        heldout_per_condition: scale.heldout_n,
    }
}

/// A pretrained + finetuned pair over one config.
pub struct PipelineArtifacts {
    pub cfg: ExperimentConfig,
    pub table: EmbeddingTable,
    pub fm: VelocityNet,
    pub mf: VelocityNet,
}

/// Flow-matching pretrain, then flow-map finetune from the pretrained
/// checkpoint (duplicated time embedding, frozen pretrained velocity source).
pub fn run_pipeline(
    mut cfg: ExperimentConfig,
    fm_steps: u64,
    mf_steps: u64,
) -> Result<PipelineArtifacts> {
    let table = build_embedding_table(&cfg)?;
    cfg.train.steps = fm_steps;
    let fm_init = prepare_training(&cfg, NetMode::Fm, None)?;
    let fm_out = run_training(&cfg, NetMode::Fm, fm_init, &table, None)?;
    let fm_ckpt = fm_out.to_checkpoint(&cfg)?;

    cfg.train.steps = mf_steps;
    let mf_init = prepare_training(&cfg, NetMode::Mf, Some(&fm_ckpt))?;
    let mf_out = run_training(&cfg, NetMode::Mf, mf_init, &table, None)?;

    Ok(PipelineArtifacts {
        cfg,
        table,
        fm: fm_out.net,
        mf: mf_out.net,
    })
}

/// Per-condition sampling runs for a trained net (flow-map or Euler updates
/// according to the net mode).
pub fn sample_conditions(
    net: &VelocityNet,
    cfg: &ExperimentConfig,
    table: &EmbeddingTable,
    steps: usize,
    n_per_condition: usize,
    seed: u64,
    record: bool,
) -> Result<BTreeMap<String, SampleRun>> {
    let mut out = BTreeMap::new();
    for (ci, cond) in cfg.task.condition_ids().iter().enumerate() {
        let psi = tile_condition(table.get(cond)?, n_per_condition);
        let mut rng = Rng::seed(seed_chain(seed, &[streams::SAMPLE, steps as u64, ci as u64]));
        let run = match net.mode() {
            NetMode::Mf => meanflow_sample(net, cfg.net.data_dim, &psi, steps, &mut rng, record)?,
            NetMode::Fm => fm_euler_sample(net, cfg.net.data_dim, &psi, steps, &mut rng, record)?,
        };
        out.insert(cond.clone(), run);
    }
    Ok(out)
}

fn heldout_by_condition(cfg: &ExperimentConfig, n: usize) -> Result<BTreeMap<String, Tensor>> {
    let mut rng = Rng::seed(seed_chain(cfg.seed, &[streams::HELDOUT]));
    let mut out = BTreeMap::new();
    for id in cfg.task.condition_ids() {
        let ids = vec![id.clone(); n];
        out.insert(id, cfg.task.sample_batch(&ids, &mut rng)?);
    }
    Ok(out)
}

fn pool_map(map: &BTreeMap<String, Tensor>) -> Result<Tensor> {
    let mut rows = Vec::new();
    for t in map.values() {
        for i in 0..t.rows() {
            rows.push(t.row_slice(i).to_vec());
        }
    }
    Tensor::from_rows(&rows)
}

fn samples_of(runs: &BTreeMap<String, SampleRun>) -> BTreeMap<String, Tensor> {
    runs.iter()
        .map(|(k, r)| (k.clone(), r.samples.clone()))
        .collect()
}

/// Fidelity and pooled energy distance of one sampling configuration.
pub fn quality_of(
    runs: &BTreeMap<String, SampleRun>,
    cfg: &ExperimentConfig,
    heldout: &BTreeMap<String, Tensor>,
) -> Result<(f64, f64)> {
    let samples = samples_of(runs);
    let fidelity = condition_fidelity(&samples, &cfg.task.component_means())?.overall;
    let ed = energy_distance(&pool_map(&samples)?, &pool_map(heldout)?)?;
    Ok((fidelity, ed))
}

// ---------------------------------------------------------------------------
// Recipe results.
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct GaussianOracleResult {
    pub fm_rmse: f64,
    pub mf_rmse: f64,
}

/// RMSE of the pretrained instantaneous field against the analytic marginal
/// velocity, probed on a grid over the +-3 sigma box of the path marginal at
/// each of ten interior times.
pub fn gaussian_fm_rmse(net: &VelocityNet, task: &GaussianTask, cond_dim: usize) -> Result<f64> {
    let mut se = 0.0;
    let mut count = 0usize;
    for k in 0..10 {
        let t = 0.05 + 0.1 * k as f64;
        let grid = gaussian_probe_grid(task, t, 9);
        let psi = Tensor::zeros(&[grid.rows(), cond_dim]);
        let pred = net.velocity_batch(&grid, &vec![t; grid.rows()], &psi)?;
        for i in 0..grid.rows() {
            let exact = analytic_marginal_velocity(task, grid.row_slice(i), t);
            for (p, e) in pred.row_slice(i).iter().zip(&exact) {
                se += (p - e) * (p - e);
                count += 1;
            }
        }
    }
    Ok((se / count as f64).sqrt())
}

/// Probe pairs with interval lengths 0.25, 0.5 and 1.0.
fn interval_probe_pairs() -> Vec<(f64, f64)> {
    let mut pairs = vec![(1.0, 0.0)];
    for k in 0..3 {
        let t = 0.5 + 0.25 * k as f64;
        pairs.push((t, t - 0.5));
    }
    for k in 0..4 {
        let t = 0.25 + 0.25 * k as f64;
        pairs.push((t, t - 0.25));
    }
    pairs
}

/// RMSE of the finetuned average-velocity field against the RK4 oracle on a
/// grid of `(z, t, r)` with interval lengths 0.25, 0.5 and 1.0.
pub fn gaussian_mf_rmse(net: &VelocityNet, task: &GaussianTask, cond_dim: usize) -> Result<f64> {
    let mut se = 0.0;
    let mut count = 0usize;
    for (t, r) in interval_probe_pairs() {
        let grid = gaussian_probe_grid(task, t, 7);
        let psi = Tensor::zeros(&[grid.rows(), cond_dim]);
        let pred =
            net.avg_velocity_batch(&grid, &vec![t; grid.rows()], &vec![r; grid.rows()], &psi)?;
        for i in 0..grid.rows() {
            let oracle = analytic_average_velocity(task, grid.row_slice(i), t, r, 1e-3)?;
            for (p, e) in pred.row_slice(i).iter().zip(&oracle) {
                se += (p - e) * (p - e);
                count += 1;
            }
        }
    }
    Ok((se / count as f64).sqrt())
}

fn gaussian_probe_grid(task: &GaussianTask, t: f64, side: usize) -> Tensor {
    let sd = task.marginal_std(t);
    let center: Vec<f64> = task.mean.iter().map(|m| (1.0 - t) * m).collect();
    let mut rows = Vec::with_capacity(side * side);
    for i in 0..side {
        for j in 0..side {
            let fx = -3.0 + 6.0 * i as f64 / (side - 1) as f64;
            let fy = -3.0 + 6.0 * j as f64 / (side - 1) as f64;
            rows.push(vec![center[0] + fx * sd, center[1] + fy * sd]);
        }
    }
    Tensor::from_rows(&rows).expect("grid rows")
}

/// The full analytic-oracle experiment: pretrain, finetune, probe both
/// fields against their oracles.
pub fn gaussian_oracle_recipe(seed: u64, scale: &RecipeScale) -> Result<(GaussianOracleResult, Vec<Check>)> {
    let cfg = gaussian_config(seed, scale);
    let task = cfg.task.as_gaussian().expect("gaussian config");
    let arts = run_pipeline(cfg, scale.fm_steps, scale.mf_steps)?;
    let fm_rmse = gaussian_fm_rmse(&arts.fm, &task, arts.cfg.net.cond_dim)?;
    let mf_rmse = gaussian_mf_rmse(&arts.mf, &task, arts.cfg.net.cond_dim)?;
    let checks = vec![
        Check::new(
            "gaussian-fm-oracle",
            fm_rmse < thresholds::GAUSSIAN_FM_RMSE,
            format!(
                "instantaneous field RMSE {fm_rmse:.4} vs analytic marginal (tol {})",
                thresholds::GAUSSIAN_FM_RMSE
            ),
        ),
        Check::new(
            "gaussian-mf-oracle",
            mf_rmse < thresholds::GAUSSIAN_MF_RMSE,
            format!(
                "average-velocity RMSE {mf_rmse:.4} vs RK4 oracle (tol {})",
                thresholds::GAUSSIAN_MF_RMSE
            ),
        ),
    ];
    Ok((GaussianOracleResult { fm_rmse, mf_rmse }, checks))
}

#[derive(Clone, Debug, Serialize)]
pub struct OneStepQualityResult {
    pub mf_fidelity: f64,
    pub mf_energy_distance: f64,
    pub fm_fidelity: f64,
    pub fm_energy_distance: f64,
}

/// One-step generation quality on the 2x2 mixture: the finetuned flow map
/// against the single-Euler-step baseline from the same pretraining.
pub fn one_step_quality(
    arts: &PipelineArtifacts,
    scale: &RecipeScale,
) -> Result<(OneStepQualityResult, Vec<Check>)> {
    let heldout = heldout_by_condition(&arts.cfg, scale.heldout_n)?;
    let mf_runs = sample_conditions(
        &arts.mf,
        &arts.cfg,
        &arts.table,
        1,
        scale.quality_n,
        arts.cfg.seed,
        false,
    )?;
    let (mf_fid, mf_ed) = quality_of(&mf_runs, &arts.cfg, &heldout)?;
    let fm_runs = sample_conditions(
        &arts.fm,
        &arts.cfg,
        &arts.table,
        1,
        scale.quality_n,
        arts.cfg.seed,
        false,
    )?;
    let (fm_fid, fm_ed) = quality_of(&fm_runs, &arts.cfg, &heldout)?;
    let result = OneStepQualityResult {
        mf_fidelity: mf_fid,
        mf_energy_distance: mf_ed,
        fm_fidelity: fm_fid,
        fm_energy_distance: fm_ed,
    };
    let checks = vec![
        Check::new(
            "one-step-energy-distance",
            mf_ed < thresholds::ONE_STEP_ED,
            format!("flow-map 1-step ED {mf_ed:.4} (tol {})", thresholds::ONE_STEP_ED),
        ),
        Check::new(
            "one-step-fidelity",
            mf_fid > thresholds::ONE_STEP_FIDELITY,
            format!(
                "flow-map 1-step fidelity {mf_fid:.4} (want > {})",
                thresholds::ONE_STEP_FIDELITY
            ),
        ),
        Check::new(
            "one-step-baseline-gap",
            fm_ed > mf_ed && fm_fid < mf_fid,
            format!(
                "Euler 1-step ED {fm_ed:.4} vs {mf_ed:.4}, fidelity {fm_fid:.4} vs {mf_fid:.4}"
            ),
        ),
    ];
    Ok((result, checks))
}

#[derive(Clone, Debug, Serialize)]
pub struct StepScalingResult {
    pub fidelity_by_steps: Vec<(usize, f64)>,
    pub euler_50_fidelity: f64,
}

/// Step-scaling monotonicity of the finetuned flow map, with the 50-step
/// Euler run from the same pretraining as the many-step reference.
pub fn step_scaling(
    arts: &PipelineArtifacts,
    scale: &RecipeScale,
) -> Result<(StepScalingResult, Vec<Check>)> {
    let mut fidelity_by_steps = Vec::new();
    for steps in [1usize, 2, 4] {
        let runs = sample_conditions(
            &arts.mf,
            &arts.cfg,
            &arts.table,
            steps,
            scale.quality_n,
            arts.cfg.seed ^ 0x57EB,
            false,
        )?;
        let fid = condition_fidelity(&samples_of(&runs), &arts.cfg.task.component_means())?.overall;
        fidelity_by_steps.push((steps, fid));
    }
    let euler_runs = sample_conditions(
        &arts.fm,
        &arts.cfg,
        &arts.table,
        50,
        scale.quality_n,
        arts.cfg.seed ^ 0x57EB,
        false,
    )?;
    let euler_50 =
        condition_fidelity(&samples_of(&euler_runs), &arts.cfg.task.component_means())?.overall;

    let (f1, f2, f4) = (
        fidelity_by_steps[0].1,
        fidelity_by_steps[1].1,
        fidelity_by_steps[2].1,
    );
    let m = thresholds::STEP_SCALING_MARGIN;
    let checks = vec![
        Check::new(
            "step-scaling-monotone",
            f1 <= f2 + m && f2 <= f4 + m,
            format!("fidelity 1/2/4-step = {f1:.4}/{f2:.4}/{f4:.4} (margin {m})"),
        ),
        Check::new(
            "step-scaling-baseline",
            f4 >= euler_50 - thresholds::BASELINE_GAP,
            format!(
                "4-step {f4:.4} vs 50-step Euler baseline {euler_50:.4} (gap tol {})",
                thresholds::BASELINE_GAP
            ),
        ),
    ];
    Ok((
        StepScalingResult {
            fidelity_by_steps,
            euler_50_fidelity: euler_50,
        },
        checks,
    ))
}

#[derive(Clone, Debug, Serialize)]
pub struct RepresentationContrastResult {
    pub separable_fidelity_1: f64,
    pub entangled_fidelity_1: f64,
    pub separable_curvature: f64,
    pub entangled_curvature: f64,
}

fn mean_fm_curvature(
    arts: &PipelineArtifacts,
    n_per_condition: usize,
    steps: usize,
) -> Result<f64> {
    let runs = sample_conditions(
        &arts.fm,
        &arts.cfg,
        &arts.table,
        steps,
        n_per_condition,
        arts.cfg.seed ^ 0xC0,
        true,
    )?;
    let mut sum = 0.0;
    let mut used = 0usize;
    for run in runs.values() {
        let c = trajectory_curvature(run)?;
        sum += c.mean * c.used as f64;
        used += c.used;
    }
    Ok(sum / used.max(1) as f64)
}

/// One side of the representation contrast: the 4x4 layout with the
/// capacity-limited trunk at the contrast budget.
pub fn contrast_pipeline(
    mode: EmbedMode,
    seed: u64,
    scale: &RecipeScale,
) -> Result<PipelineArtifacts> {
    let params = MixtureParams::four_by_four(mode);
    let mut cfg = mixture_config(&params, seed, scale);
    cfg.net.hidden_dim = scale.contrast_hidden;
    run_pipeline(cfg, scale.contrast_fm_steps, scale.contrast_mf_steps)
}

/// Two pipelines identical except for the embedding mode: separable
/// (disentangled) embeddings must beat entangled ones in 1-step fidelity,
/// and their pretrained flows must run straighter.
pub fn representation_contrast(
    separable: &PipelineArtifacts,
    entangled: &PipelineArtifacts,
    scale: &RecipeScale,
) -> Result<(RepresentationContrastResult, Vec<Check>)> {
    let heldout = heldout_by_condition(&separable.cfg, scale.contrast_n)?;
    let sep_runs = sample_conditions(
        &separable.mf,
        &separable.cfg,
        &separable.table,
        1,
        scale.contrast_n,
        separable.cfg.seed,
        false,
    )?;
    let (sep_fid, _) = quality_of(&sep_runs, &separable.cfg, &heldout)?;
    let ent_runs = sample_conditions(
        &entangled.mf,
        &entangled.cfg,
        &entangled.table,
        1,
        scale.contrast_n,
        entangled.cfg.seed,
        false,
    )?;
    let (ent_fid, _) = quality_of(&ent_runs, &entangled.cfg, &heldout)?;

    let sep_curv = mean_fm_curvature(separable, scale.contrast_n.min(500), 32)?;
    let ent_curv = mean_fm_curvature(entangled, scale.contrast_n.min(500), 32)?;

    let result = RepresentationContrastResult {
        separable_fidelity_1: sep_fid,
        entangled_fidelity_1: ent_fid,
        separable_curvature: sep_curv,
        entangled_curvature: ent_curv,
    };
    let checks = vec![
        Check::new(
            "representation-fidelity-gap",
            sep_fid - ent_fid >= thresholds::REPRESENTATION_GAP,
            format!(
                "1-step fidelity separable {sep_fid:.4} vs entangled {ent_fid:.4} (need gap >= {})",
                thresholds::REPRESENTATION_GAP
            ),
        ),
        Check::new(
            "representation-curvature",
            sep_curv < ent_curv,
            format!(
                "mean flow curvature separable {sep_curv:.4} vs entangled {ent_curv:.4}"
            ),
        ),
    ];
    Ok((result, checks))
}

/// Discriminability of synthetic corpora at two separations; larger
/// separation must score higher.
pub fn discriminability_ablation(seed: u64) -> Result<(f64, f64, Vec<Check>)> {
    let spec = |separation: f64| SyntheticEmbedSpec {
        n_attributes: 2,
        values_per_attribute: 2,
        dim: 8,
        separation,
        mode: EmbedMode::Disentangled,
    };
    let opts = AnalyzeOptions {
        metric: AnalyzeMetric::Discriminability,
        k: 2,
        rho: 0.3,
        seed,
        query_count: 60,
        mode: crate::embed::RetrievalMode::TextText,
    };
    let wide = crate::embed::synthetic_corpus(&spec(4.0), 25, 12, 0.5, seed)?;
    let narrow = crate::embed::synthetic_corpus(&spec(0.5), 25, 12, 0.5, seed)?;
    let w = analyze_corpus(&wide, &opts)?.score;
    let n = analyze_corpus(&narrow, &opts)?.score;
    let checks = vec![Check::new(
        "discriminability-separation-ordering",
        w > n,
        format!("discriminability at separation 4.0 = {w:.4} vs 0.5 = {n:.4}"),
    )];
    Ok((w, n, checks))
}

// ---------------------------------------------------------------------------
// Recipe dispatch.
// ---------------------------------------------------------------------------

pub fn available_recipes() -> Vec<&'static str> {
    vec![
        "oracle-suite",
        "gaussian-oracle",
        "one-step-quality",
        "step-scaling",
        "representation-contrast",
        "discriminability-ablation",
    ]
}

#[derive(Debug, Serialize)]
pub struct RecipeOutcome {
    pub recipe: String,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl RecipeOutcome {
    fn from_checks(recipe: &str, seed: u64, checks: Vec<Check>) -> RecipeOutcome {
        RecipeOutcome {
            recipe: recipe.to_string(),
            seed,
            passed: checks.iter().all(|c| c.pass),
            checks,
        }
    }
}

/// Runs a named recipe, writes `summary.json` under `out_dir` when given,
/// and returns the outcome (pass/fail per check).
pub fn run_recipe(
    name: &str,
    seed: u64,
    scale: &RecipeScale,
    out_dir: Option<&Path>,
) -> Result<RecipeOutcome> {
    let checks = match name {
        "oracle-suite" => oracle_suite(seed),
        "gaussian-oracle" => gaussian_oracle_recipe(seed, scale)?.1,
        "one-step-quality" => {
            let params = MixtureParams::two_by_two(EmbedMode::Disentangled);
            let arts = run_pipeline(
                mixture_config(&params, seed, scale),
                scale.fm_steps,
                scale.mf_steps,
            )?;
            one_step_quality(&arts, scale)?.1
        }
        "step-scaling" => {
            let params = MixtureParams::two_by_two(EmbedMode::Disentangled);
            let arts = run_pipeline(
                mixture_config(&params, seed, scale),
                scale.fm_steps,
                scale.mf_steps,
            )?;
            step_scaling(&arts, scale)?.1
        }
        "representation-contrast" => {
            let sep = contrast_pipeline(EmbedMode::Disentangled, seed, scale)?;
            let ent = contrast_pipeline(EmbedMode::Entangled, seed, scale)?;
            representation_contrast(&sep, &ent, scale)?.1
        }
        "discriminability-ablation" => discriminability_ablation(seed)?.2,
        other => {
            return Err(Error::UnknownRecipe {
                name: other.to_string(),
                available: available_recipes().join(", "),
            })
        }
    };
    let outcome = RecipeOutcome::from_checks(name, seed, checks);
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("summary.json");
        let text = serde_json::to_string_pretty(&outcome)?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(outcome)
}
