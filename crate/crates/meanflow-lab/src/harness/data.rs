//! Dataset and sample-set artifacts on disk.
//!
//! Layout of a data directory (from `gen-data`):
//! - `manifest.json` — task, condition ids, counts, seed, config digest;
//! - `dataset.jsonl` / `heldout.jsonl` — one `{condition, x}` per line;
//! - `embeddings.json` — the condition-embedding table.
//!
//! Layout of a sample directory (from `sample`):
//! - `summary.json` — grid, step count, seed, source checkpoint digest;
//! - `samples.jsonl` — one `{condition, x[, trajectory]}` per line.
//!
//! Nothing here carries timestamps; reruns with the same config and seed are
//! byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::harness::config::{EmbeddingConfig, ExperimentConfig};
use crate::harness::streams;
use crate::net::{Checkpoint, NetMode};
use crate::numcore::{seed_chain, Rng, Tensor};
use crate::sampler::{fm_euler_sample, meanflow_sample, tile_condition, SampleRun};
use crate::task::TaskConfig;

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config_digest: String,
    pub seed: u64,
    pub task: TaskConfig,
    pub condition_ids: Vec<String>,
    pub data_per_condition: usize,
    pub heldout_per_condition: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct DataPoint {
    condition: String,
    x: Vec<f64>,
}

/// A loaded data directory.
#[derive(Clone, Debug)]
pub struct DataSet {
    pub manifest: Manifest,
    pub table: EmbeddingTable,
    pub train: BTreeMap<String, Tensor>,
    pub heldout: BTreeMap<String, Tensor>,
}

/// Builds the condition-embedding table for a config. Mixture tasks with
/// synthetic embeddings generate them from the experiment seed; the gaussian
/// task conditions on the zero embedding.
pub fn build_embedding_table(cfg: &ExperimentConfig) -> Result<EmbeddingTable> {
    if matches!(cfg.task, TaskConfig::Gaussian { .. }) {
        return Ok(zero_table(cfg));
    }
    let table = match &cfg.embedding {
        EmbeddingConfig::Synthetic { spec } => {
            crate::embed::gen_synthetic_embeddings(spec, seed_chain(cfg.seed, &[streams::EMBED]))?
        }
        EmbeddingConfig::Table { path } => EmbeddingTable::load(Path::new(path))?,
    };
    for id in cfg.task.condition_ids() {
        table.get(&id)?;
    }
    Ok(table)
}

fn zero_table(cfg: &ExperimentConfig) -> EmbeddingTable {
    EmbeddingTable {
        dim: cfg.net.cond_dim,
        mode: crate::embed::EmbedMode::Disentangled,
        separation: 1.0,
        seed: cfg.seed,
        by_condition: BTreeMap::from([("g0".to_string(), vec![0.0; cfg.net.cond_dim])]),
    }
}

fn sample_split(
    task: &TaskConfig,
    per_condition: usize,
    seed: u64,
) -> Result<Vec<DataPoint>> {
    let mut rng = Rng::seed(seed);
    let mut points = Vec::new();
    for id in task.condition_ids() {
        for _ in 0..per_condition {
            points.push(DataPoint {
                condition: id.clone(),
                x: task.sample_point(&id, &mut rng)?,
            });
        }
    }
    Ok(points)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Generates dataset, held-out split, embedding table and manifest.
pub fn gen_data(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let table = build_embedding_table(cfg)?;
    let train = sample_split(
        &cfg.task,
        cfg.data_per_condition,
        seed_chain(cfg.seed, &[streams::DATA]),
    )?;
    let heldout = sample_split(
        &cfg.task,
        cfg.heldout_per_condition,
        seed_chain(cfg.seed, &[streams::HELDOUT]),
    )?;
    let manifest = Manifest {
        format_version: MANIFEST_FORMAT_VERSION,
        config_digest: cfg.digest(),
        seed: cfg.seed,
        task: cfg.task.clone(),
        condition_ids: cfg.task.condition_ids(),
        data_per_condition: cfg.data_per_condition,
        heldout_per_condition: cfg.heldout_per_condition,
    };
    write_jsonl(&out_dir.join("dataset.jsonl"), &train)?;
    write_jsonl(&out_dir.join("heldout.jsonl"), &heldout)?;
    table.save(&out_dir.join("embeddings.json"))?;
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn read_split(path: &Path) -> Result<BTreeMap<String, Tensor>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut by_condition: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let p: DataPoint = serde_json::from_str(line)?;
        by_condition.entry(p.condition).or_default().push(p.x);
    }
    by_condition
        .into_iter()
        .map(|(k, rows)| Ok((k, Tensor::from_rows(&rows)?)))
        .collect()
}

/// Loads a directory produced by [`gen_data`].
pub fn load_dataset(dir: &Path) -> Result<DataSet> {
    let manifest_text = fs::read_to_string(dir.join("manifest.json"))
        .map_err(|e| Error::io(dir.join("manifest.json"), e))?;
    let manifest: Manifest = serde_json::from_str(&manifest_text)?;
    if manifest.format_version != MANIFEST_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported manifest format_version {}",
            manifest.format_version
        )));
    }
    Ok(DataSet {
        table: EmbeddingTable::load(&dir.join("embeddings.json"))?,
        train: read_split(&dir.join("dataset.jsonl"))?,
        heldout: read_split(&dir.join("heldout.jsonl"))?,
        manifest,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SamplesSummary {
    pub format_version: u32,
    pub config_digest: String,
    pub checkpoint_step: u64,
    pub steps: usize,
    pub grid: Vec<f64>,
    pub seed: u64,
    pub n_per_condition: usize,
    pub conditions: Vec<String>,
    pub sampler: String,
    pub with_trajectory: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SampleRow {
    condition: String,
    x: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    trajectory: Option<Vec<Vec<f64>>>,
}

/// Draws `n` samples per listed condition from a checkpointed net and writes
/// `samples.jsonl` + `summary.json` into `out_dir`. The sampler follows the
/// checkpoint mode: flow-map updates for mf nets, Euler for fm nets. Initial
/// noise depends only on `(seed, condition)`, not on the step count.
pub fn sample_to_files(
    ckpt: &Checkpoint,
    table: &EmbeddingTable,
    conditions: &[String],
    steps: usize,
    n: usize,
    seed: u64,
    record_trajectory: bool,
    out_dir: &Path,
) -> Result<SamplesSummary> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let net = ckpt.to_net()?;
    let mode = ckpt.mode()?;
    let mut rows: Vec<SampleRow> = Vec::new();
    let mut grid = None;
    for (ci, cond) in conditions.iter().enumerate() {
        let psi = tile_condition(table.get(cond)?, n);
        let mut rng = Rng::seed(seed_chain(seed, &[streams::SAMPLE, ci as u64]));
        let run = match mode {
            NetMode::Mf => meanflow_sample(
                &net,
                net.dims().data_dim,
                &psi,
                steps,
                &mut rng,
                record_trajectory,
            )?,
            NetMode::Fm => fm_euler_sample(
                &net,
                net.dims().data_dim,
                &psi,
                steps,
                &mut rng,
                record_trajectory,
            )?,
        };
        grid.get_or_insert_with(|| run.grid.clone());
        push_rows(&mut rows, cond, &run);
    }
    let summary = SamplesSummary {
        format_version: 1,
        config_digest: ckpt.meta.config_digest.clone(),
        checkpoint_step: ckpt.meta.step,
        steps,
        grid: grid.expect("at least one condition"),
        seed,
        n_per_condition: n,
        conditions: conditions.to_vec(),
        sampler: match mode {
            NetMode::Mf => "meanflow".to_string(),
            NetMode::Fm => "euler".to_string(),
        },
        with_trajectory: record_trajectory,
    };
    write_jsonl(&out_dir.join("samples.jsonl"), &rows)?;
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

fn push_rows(rows: &mut Vec<SampleRow>, condition: &str, run: &SampleRun) {
    let n = run.samples.rows();
    for i in 0..n {
        let trajectory = run.trajectory.as_ref().map(|states| {
            states
                .iter()
                .map(|s| s.row_slice(i).to_vec())
                .collect::<Vec<_>>()
        });
        rows.push(SampleRow {
            condition: condition.to_string(),
            x: run.samples.row_slice(i).to_vec(),
            trajectory,
        });
    }
}

/// Loaded sample directory: per-condition final states plus optional
/// per-condition trajectories (state sequence per sample).
pub struct LoadedSamples {
    pub summary: SamplesSummary,
    pub by_condition: BTreeMap<String, Tensor>,
    pub trajectories: BTreeMap<String, Vec<Vec<Vec<f64>>>>,
}

pub fn load_samples(dir: &Path) -> Result<LoadedSamples> {
    let summary_text = fs::read_to_string(dir.join("summary.json"))
        .map_err(|e| Error::io(dir.join("summary.json"), e))?;
    let summary: SamplesSummary = serde_json::from_str(&summary_text)?;
    let text = fs::read_to_string(dir.join("samples.jsonl"))
        .map_err(|e| Error::io(dir.join("samples.jsonl"), e))?;
    let mut grouped: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    let mut trajectories: BTreeMap<String, Vec<Vec<Vec<f64>>>> = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let row: SampleRow = serde_json::from_str(line)?;
        if let Some(tr) = row.trajectory {
            trajectories.entry(row.condition.clone()).or_default().push(tr);
        }
        grouped.entry(row.condition).or_default().push(row.x);
    }
    let by_condition = grouped
        .into_iter()
        .map(|(k, rows)| Ok((k, Tensor::from_rows(&rows)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(LoadedSamples {
        summary,
        by_condition,
        trajectories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{EmbedMode, SyntheticEmbedSpec};
    use crate::flow::ScheduleConfig;
    use crate::net::{NetDims, TimeEmbedConfig};
    use crate::numcore::AdamConfig;

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            task: TaskConfig::Mixture {
                n_attributes: 2,
                values_per_attribute: 3,
                arm: 1.0,
                component_std: 0.2,
            },
            embedding: EmbeddingConfig::Synthetic {
                spec: SyntheticEmbedSpec {
                    n_attributes: 2,
                    values_per_attribute: 3,
                    dim: 8,
                    separation: 3.0,
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
            schedule: ScheduleConfig::default(),
            optim: AdamConfig::default(),
            train: crate::harness::TrainConfig {
                steps: 10,
                batch_size: 8,
                eval_every: 0,
                checkpoint_every: 0,
                eval_samples_per_condition: 16,
                v_source: Default::default(),
            },
            seed: 99,
            data_per_condition: 20,
            heldout_per_condition: 10,
        }
    }

    #[test]
    fn gen_data_is_byte_deterministic() {
        let cfg = tiny_config();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        gen_data(&cfg, d1.path()).unwrap();
        gen_data(&cfg, d2.path()).unwrap();
        for name in ["dataset.jsonl", "heldout.jsonl", "embeddings.json", "manifest.json"] {
            let a = fs::read(d1.path().join(name)).unwrap();
            let b = fs::read(d2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
    }

    #[test]
    fn three_by_three_manifest_lists_nine_conditions() {
        let cfg = tiny_config();
        let dir = tempfile::tempdir().unwrap();
        let manifest = gen_data(&cfg, dir.path()).unwrap();
        assert_eq!(manifest.condition_ids.len(), 9);
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.train.len(), 9);
        assert_eq!(ds.train["c00"].rows(), 20);
        assert_eq!(ds.heldout["c22"].rows(), 10);
    }

    #[test]
    fn gaussian_dataset_mean_within_clt_bound() {
        let mut cfg = tiny_config();
        cfg.task = TaskConfig::Gaussian {
            mean: vec![0.4, -0.7],
            std: 0.8,
        };
        cfg.embedding = EmbeddingConfig::Table {
            path: "unused".into(),
        };
        cfg.net.data_dim = 2;
        cfg.data_per_condition = 10_000;
        let dir = tempfile::tempdir().unwrap();
        gen_data(&cfg, dir.path()).unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        let t = &ds.train["g0"];
        let n = t.rows();
        for (k, want) in [(0usize, 0.4), (1usize, -0.7)] {
            let mean: f64 = (0..n).map(|i| t.row_slice(i)[k]).sum::<f64>() / n as f64;
            let bound = 4.0 * 0.8 / (n as f64).sqrt();
            assert!((mean - want).abs() < bound, "dim {k}: {mean} vs {want}");
        }
    }
}
