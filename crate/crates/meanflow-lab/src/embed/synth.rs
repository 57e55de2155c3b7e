//! Synthetic condition embeddings and corpora.
//!
//! The generators give controllable stand-ins for encoder properties:
//!
//! - `disentangled` embeddings are concatenations of per-attribute one-hot
//!   codes scaled by the separation, so conditions sharing attribute values
//!   share coordinates and ablating one attribute moves the vector minimally;
//! - `entangled` embeddings are fixed random Gaussian vectors per attribute
//!   combination, rescaled so the mean pairwise distance matches the
//!   disentangled layout. The geometry is non-compositional: nothing about
//!   one attribute can be read off a coordinate subset.
//!
//! The synthetic corpus builder extends the same contrast to token sequences:
//! disentangled records carry redundant per-attribute code tokens, entangled
//! records carry idiosyncratic per-slot directions whose meaning only exists
//! in aggregate, which makes their pooled embedding unstable under ablation.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::corpus::{Corpus, EmbeddingRecord};
use crate::error::{Error, Result};
use crate::numcore::{distance, seed_chain, Rng};
use crate::task::condition_id;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedMode {
    Disentangled,
    Entangled,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SyntheticEmbedSpec {
    pub n_attributes: usize,
    pub values_per_attribute: usize,
    pub dim: usize,
    /// Inter-cluster margin scale.
    pub separation: f64,
    pub mode: EmbedMode,
}

impl SyntheticEmbedSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_attributes == 0 || self.values_per_attribute == 0 {
            return Err(Error::InvalidArg(
                "embedding spec needs at least one attribute and one value".into(),
            ));
        }
        if self.separation <= 0.0 {
            return Err(Error::InvalidArg(format!(
                "separation must be positive, got {}",
                self.separation
            )));
        }
        if self.dim < self.n_attributes * self.values_per_attribute {
            return Err(Error::InvalidArg(format!(
                "dim {} too small to host {} attributes x {} values",
                self.dim, self.n_attributes, self.values_per_attribute
            )));
        }
        Ok(())
    }

    fn tuples(&self) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for _ in 0..self.n_attributes {
            let mut next = Vec::new();
            for prefix in &out {
                for v in 0..self.values_per_attribute {
                    let mut t = prefix.clone();
                    t.push(v);
                    next.push(t);
                }
            }
            out = next;
        }
        out
    }

    /// One-hot block code of `(attribute, value)` in the full dimension,
    /// scaled by the separation.
    fn attribute_code(&self, attribute: usize, value: usize) -> Vec<f64> {
        let mut code = vec![0.0; self.dim];
        code[attribute * self.values_per_attribute + value] = self.separation;
        code
    }

    fn disentangled_embedding(&self, values: &[usize]) -> Vec<f64> {
        let mut psi = vec![0.0; self.dim];
        for (a, &v) in values.iter().enumerate() {
            psi[a * self.values_per_attribute + v] = self.separation;
        }
        psi
    }
}

/// Condition-embedding table, persisted together with the seed that built it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub mode: EmbedMode,
    pub separation: f64,
    pub seed: u64,
    pub by_condition: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn get(&self, condition: &str) -> Result<&Vec<f64>> {
        self.by_condition
            .get(condition)
            .ok_or_else(|| Error::UnknownCondition(condition.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<EmbeddingTable> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn mean_pairwise_distance(&self) -> f64 {
        let vecs: Vec<&Vec<f64>> = self.by_condition.values().collect();
        if vecs.len() < 2 {
            return 0.0;
        }
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..vecs.len() {
            for j in (i + 1)..vecs.len() {
                sum += distance(vecs[i], vecs[j]);
                count += 1;
            }
        }
        sum / count as f64
    }
}

/// Builds the condition-embedding table for every attribute combination.
/// Deterministic: the same spec and seed always produce the same table.
pub fn gen_synthetic_embeddings(spec: &SyntheticEmbedSpec, seed: u64) -> Result<EmbeddingTable> {
    spec.validate()?;
    let tuples = spec.tuples();
    let mut by_condition = BTreeMap::new();
    match spec.mode {
        EmbedMode::Disentangled => {
            for vals in &tuples {
                by_condition.insert(condition_id(vals), spec.disentangled_embedding(vals));
            }
        }
        EmbedMode::Entangled => {
            // Fixed random Gaussian vector per combination, then rescale so
            // the mean pairwise distance matches the disentangled layout of
            // the same spec.
            let mut rng = Rng::seed(seed_chain(seed, &[0xE7]));
            let mut raw: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for vals in &tuples {
                raw.insert(condition_id(vals), rng.normal_vec(spec.dim));
            }
            let target = {
                let mut dis = BTreeMap::new();
                for vals in &tuples {
                    dis.insert(condition_id(vals), spec.disentangled_embedding(vals));
                }
                EmbeddingTable {
                    dim: spec.dim,
                    mode: EmbedMode::Disentangled,
                    separation: spec.separation,
                    seed,
                    by_condition: dis,
                }
                .mean_pairwise_distance()
            };
            let actual = EmbeddingTable {
                dim: spec.dim,
                mode: EmbedMode::Entangled,
                separation: spec.separation,
                seed,
                by_condition: raw.clone(),
            }
            .mean_pairwise_distance();
            let scale = if actual > 0.0 { target / actual } else { 1.0 };
            for (id, v) in raw {
                by_condition.insert(id, v.iter().map(|x| x * scale).collect());
            }
        }
    }
    Ok(EmbeddingTable {
        dim: spec.dim,
        mode: spec.mode,
        separation: spec.separation,
        seed,
        by_condition,
    })
}

/// Synthetic text-like corpus over the same condition layout, for the
/// retrieval and ablation metrics. Every record carries:
/// - `token_embeddings`: `tokens_per_record` tokens plus Gaussian token noise.
///   Disentangled mode cycles the per-attribute codes (redundant,
///   compositional); entangled mode uses one fixed random direction per
///   (condition, slot), scaled to the separation (idiosyncratic, meaning only
///   in aggregate).
/// - `image_embedding`: the condition embedding plus noise, same dimension as
///   the tokens (enables text-to-image retrieval).
/// - `vision_embedding`: the condition's lattice position plus noise, playing
///   the strong vision backbone.
pub fn synthetic_corpus(
    spec: &SyntheticEmbedSpec,
    per_condition: usize,
    tokens_per_record: usize,
    token_noise: f64,
    seed: u64,
) -> Result<Corpus> {
    spec.validate()?;
    if per_condition == 0 || tokens_per_record == 0 {
        return Err(Error::InvalidArg(
            "synthetic_corpus needs per_condition >= 1 and tokens_per_record >= 1".into(),
        ));
    }
    let table = gen_synthetic_embeddings(spec, seed)?;
    let vision_dim = spec.n_attributes.max(2);
    let mut records = Vec::new();
    for (ci, vals) in spec.tuples().iter().enumerate() {
        let cid = condition_id(vals);
        let psi = table.get(&cid)?.clone();
        // Per-slot token directions for the entangled mode, shared by all
        // records of this condition.
        let mut slot_rng = Rng::seed(seed_chain(seed, &[0x51, ci as u64]));
        let slot_codes: Vec<Vec<f64>> = (0..tokens_per_record)
            .map(|_| {
                let g = slot_rng.normal_vec(spec.dim);
                let n = crate::numcore::norm(&g).max(1e-12);
                g.iter().map(|x| x * spec.separation / n).collect()
            })
            .collect();
        let vision_base: Vec<f64> = (0..vision_dim)
            .map(|k| {
                vals.get(k)
                    .map(|&v| {
                        if spec.values_per_attribute == 1 {
                            0.0
                        } else {
                            2.0 * v as f64 / (spec.values_per_attribute - 1) as f64 - 1.0
                        }
                    })
                    .unwrap_or(0.3)
            })
            .collect();

        for k in 0..per_condition {
            let mut rng = Rng::seed(seed_chain(seed, &[0x0C, ci as u64, k as u64]));
            let tokens: Vec<Vec<f64>> = (0..tokens_per_record)
                .map(|slot| {
                    let base = match spec.mode {
                        EmbedMode::Disentangled => {
                            let a = slot % spec.n_attributes;
                            spec.attribute_code(a, vals[a])
                        }
                        EmbedMode::Entangled => slot_codes[slot].clone(),
                    };
                    base.iter().map(|b| b + token_noise * rng.normal()).collect()
                })
                .collect();
            let image_embedding: Vec<f64> =
                psi.iter().map(|p| p + 0.05 * rng.normal()).collect();
            let vision_embedding: Vec<f64> =
                vision_base.iter().map(|v| v + 0.05 * rng.normal()).collect();
            records.push(EmbeddingRecord {
                id: format!("{cid}-{k:04}"),
                token_embeddings: tokens,
                image_embedding: Some(image_embedding),
                vision_embedding: Some(vision_embedding),
                text: Some(format!("condition {cid}")),
            });
        }
    }
    Corpus::from_records(records)
}
