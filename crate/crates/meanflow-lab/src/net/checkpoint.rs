//! Versioned JSON checkpoints.
//!
//! Parameters are stored as named flat arrays next to the dimensions and
//! training metadata. serde_json emits the shortest decimal that round-trips
//! each f64 (up to 17 significant digits), so save -> load reproduces every
//! parameter bitwise; the round-trip test below pins that.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Affine, NetDims, NetMode, TimeEmbedConfig, VelocityNet};
use crate::numcore::{AdamState, Tensor};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl From<&Tensor> for ParamTensor {
    fn from(t: &Tensor) -> Self {
        ParamTensor {
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        }
    }
}

impl ParamTensor {
    fn to_tensor(&self) -> Result<Tensor> {
        Tensor::new(self.shape.clone(), self.data.clone())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Training steps completed when the checkpoint was written.
    pub step: u64,
    pub seed: u64,
    pub config_digest: String,
}

/// Optimizer moments, stored so a resumed run continues the exact trajectory
/// of an uninterrupted one.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimSnapshot {
    pub step: u64,
    pub m: BTreeMap<String, ParamTensor>,
    pub v: BTreeMap<String, ParamTensor>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    /// "fm" (single time embedding) or "mf" (duplicated embeddings).
    pub mode: String,
    pub dims: NetDims,
    pub time_embed: TimeEmbedConfig,
    pub params: BTreeMap<String, ParamTensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optim: Option<OptimSnapshot>,
    /// Parameters of the frozen single-time field an mf run bootstraps its
    /// targets from, when the velocity source is a pretrained net. Stored so
    /// a checkpoint is self-contained for exact resumption.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frozen_velocity: Option<BTreeMap<String, ParamTensor>>,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn from_net(net: &VelocityNet, meta: CheckpointMeta, optim: Option<&AdamState>) -> Self {
        let names = net.param_names();
        let tensors = net.param_tensors();
        let params: BTreeMap<String, ParamTensor> = names
            .iter()
            .zip(&tensors)
            .map(|(n, t)| (n.clone(), ParamTensor::from(*t)))
            .collect();
        let optim = optim.map(|s| OptimSnapshot {
            step: s.step,
            m: names
                .iter()
                .zip(&s.m)
                .map(|(n, t)| (n.clone(), ParamTensor::from(t)))
                .collect(),
            v: names
                .iter()
                .zip(&s.v)
                .map(|(n, t)| (n.clone(), ParamTensor::from(t)))
                .collect(),
        });
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            mode: net.mode().as_str().to_string(),
            dims: *net.dims(),
            time_embed: *net.time_cfg(),
            params,
            optim,
            frozen_velocity: None,
            meta,
        }
    }

    /// Attaches the frozen bootstrap field (a single-time net with the same
    /// dims) to this checkpoint.
    pub fn with_frozen_velocity(mut self, frozen: &VelocityNet) -> Result<Self> {
        if frozen.mode() != NetMode::Fm {
            return Err(Error::ModeMismatch {
                expected: "fm".into(),
                found: frozen.mode().as_str().into(),
            });
        }
        let names = frozen.param_names();
        let tensors = frozen.param_tensors();
        self.frozen_velocity = Some(
            names
                .iter()
                .zip(&tensors)
                .map(|(n, t)| (n.clone(), ParamTensor::from(*t)))
                .collect(),
        );
        Ok(self)
    }

    /// Reconstructs the frozen bootstrap field, when one is stored.
    pub fn frozen_net(&self) -> Result<Option<VelocityNet>> {
        let Some(params) = &self.frozen_velocity else {
            return Ok(None);
        };
        let get = |name: &str| -> Result<Tensor> {
            params
                .get(name)
                .ok_or_else(|| Error::Format(format!("frozen field missing {name:?}")))?
                .to_tensor()
        };
        let affine = |stem: &str| -> Result<Affine> {
            Ok(Affine {
                w: get(&format!("{stem}.w"))?,
                b: get(&format!("{stem}.b"))?,
            })
        };
        let mut trunk = Vec::with_capacity(self.dims.depth);
        for i in 0..self.dims.depth {
            trunk.push(affine(&format!("trunk{i}"))?);
        }
        Ok(Some(VelocityNet::from_parts(
            self.dims,
            self.time_embed,
            Some(affine("time")?),
            None,
            trunk,
        )?))
    }

    pub fn mode(&self) -> Result<NetMode> {
        NetMode::parse(&self.mode)
    }

    fn param(&self, name: &str) -> Result<Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Format(format!("checkpoint missing parameter {name:?}")))?
            .to_tensor()
    }

    fn affine(&self, stem: &str) -> Result<Affine> {
        Ok(Affine {
            w: self.param(&format!("{stem}.w"))?,
            b: self.param(&format!("{stem}.b"))?,
        })
    }

    /// Reconstructs the network exactly as saved.
    pub fn to_net(&self) -> Result<VelocityNet> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint format_version {}",
                self.format_version
            )));
        }
        let mode = self.mode()?;
        let mut trunk = Vec::with_capacity(self.dims.depth);
        for i in 0..self.dims.depth {
            trunk.push(self.affine(&format!("trunk{i}"))?);
        }
        match mode {
            NetMode::Fm => VelocityNet::from_parts(
                self.dims,
                self.time_embed,
                Some(self.affine("time")?),
                None,
                trunk,
            ),
            NetMode::Mf => VelocityNet::from_parts(
                self.dims,
                self.time_embed,
                None,
                Some((self.affine("time_interval")?, self.affine("time_end")?)),
                trunk,
            ),
        }
    }

    /// Restores the optimizer snapshot in this checkpoint, aligned with the
    /// canonical parameter order of `net`.
    pub fn to_adam_state(&self, net: &VelocityNet) -> Result<Option<AdamState>> {
        let Some(snap) = &self.optim else {
            return Ok(None);
        };
        let names = net.param_names();
        let mut m = Vec::with_capacity(names.len());
        let mut v = Vec::with_capacity(names.len());
        for n in &names {
            m.push(
                snap.m
                    .get(n)
                    .ok_or_else(|| Error::Format(format!("optimizer snapshot missing {n:?}")))?
                    .to_tensor()?,
            );
            v.push(
                snap.v
                    .get(n)
                    .ok_or_else(|| Error::Format(format!("optimizer snapshot missing {n:?}")))?
                    .to_tensor()?,
            );
        }
        Ok(Some(AdamState {
            step: snap.step,
            m,
            v,
        }))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Turns a flow-matching checkpoint into a dual-time net by duplicating the
/// pretrained single-time embedding into both the interval and the end
/// branch; the trunk is copied verbatim. Loading an mf checkpoint here is an
/// error.
pub fn duplicate_time_embedding(ckpt: &Checkpoint) -> Result<VelocityNet> {
    match ckpt.mode()? {
        NetMode::Fm => {}
        NetMode::Mf => {
            return Err(Error::ModeMismatch {
                expected: "fm checkpoint (single time embedding)".into(),
                found: "mf".into(),
            })
        }
    }
    let fm = ckpt.to_net()?;
    let single = fm
        .time_single()
        .expect("fm checkpoint has a single time embedding")
        .clone();
    VelocityNet::from_parts(
        *fm.dims(),
        *fm.time_cfg(),
        None,
        Some((single.clone(), single)),
        fm.trunk().to_vec(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            step: 17,
            seed: 42,
            config_digest: "deadbeef".into(),
        }
    }

    fn small_net(mode: NetMode) -> VelocityNet {
        let dims = NetDims {
            data_dim: 2,
            cond_dim: 3,
            hidden_dim: 6,
            depth: 2,
        };
        let tcfg = TimeEmbedConfig {
            feature_dim: 4,
            min_freq: 1.0,
            max_freq: 50.0,
        };
        let mut rng = Rng::seed(123);
        let mut net = VelocityNet::init(dims, tcfg, mode, &mut rng).unwrap();
        // Non-trivial final layer so forwards are informative.
        let n = net.param_tensors_mut();
        let k = n.len() - 2;
        *n.into_iter().nth(k).unwrap() = rng.normal_tensor(&[6, 2]);
        net
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let net = small_net(NetMode::Mf);
        let ck = Checkpoint::from_net(&net, meta(), None);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap().to_net().unwrap();
        for (a, b) in net.param_tensors().iter().zip(back.param_tensors()) {
            assert_eq!(a.shape(), b.shape());
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn duplication_requires_fm_checkpoint() {
        let mf = small_net(NetMode::Mf);
        let ck = Checkpoint::from_net(&mf, meta(), None);
        assert!(matches!(
            duplicate_time_embedding(&ck),
            Err(Error::ModeMismatch { .. })
        ));
    }

    #[test]
    fn duplication_adds_exactly_one_embedding_branch() {
        let fm = small_net(NetMode::Fm);
        let ck = Checkpoint::from_net(&fm, meta(), None);
        let mf = duplicate_time_embedding(&ck).unwrap();
        let branch = fm.time_single().unwrap();
        let branch_params = branch.w.numel() + branch.b.numel();
        assert_eq!(mf.param_count(), fm.param_count() + branch_params);
        assert_eq!(mf.mode(), NetMode::Mf);
    }

    #[test]
    fn duplicated_net_differs_only_by_constant_interval_branch() {
        // u_mf(z, t, t) must equal the fm forward once the fm time bias is
        // shifted by the interval branch evaluated at zero: the trunks are
        // identical, and the only new input term is that constant.
        let fm = small_net(NetMode::Fm);
        let ck = Checkpoint::from_net(&fm, meta(), None);
        let mf = duplicate_time_embedding(&ck).unwrap();

        let single = fm.time_single().unwrap();
        let freqs = fm.time_cfg().frequencies();
        let phi_zero = Tensor::column(&[0.0])
            .sin_cos_features(&freqs)
            .unwrap()
            .matmul(&single.w)
            .unwrap()
            .add(&single.b)
            .unwrap();

        let phi_zero = Tensor::new(vec![phi_zero.numel()], phi_zero.data().to_vec()).unwrap();
        let mut shifted = fm.clone();
        shifted.shift_single_time_bias(&phi_zero).unwrap();

        let mut rng = Rng::seed(7);
        let z = rng.normal_tensor(&[5, 2]);
        let psi = rng.normal_tensor(&[5, 3]);
        let t = [0.9, 0.1, 0.5, 0.33, 0.77];

        let dup_out = mf.avg_velocity_batch(&z, &t, &t, &psi).unwrap();
        let fm_shifted_out = shifted.velocity_batch(&z, &t, &psi).unwrap();
        for (a, b) in dup_out.data().iter().zip(fm_shifted_out.data()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn optimizer_snapshot_roundtrip() {
        let net = small_net(NetMode::Fm);
        let params = net.param_tensors();
        let mut state = AdamState::new(&params);
        state.step = 5;
        state.m[0].data_mut()[0] = 0.25;
        let ck = Checkpoint::from_net(&net, meta(), Some(&state));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        let restored = back.to_adam_state(&net).unwrap().unwrap();
        assert_eq!(restored.step, 5);
        assert_eq!(restored.m[0].data()[0].to_bits(), 0.25f64.to_bits());
    }
}
