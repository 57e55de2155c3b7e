//! Conditional velocity / flow-map network.
//!
//! The network predicts the average velocity `u(z, t, r, psi)` over the time
//! segment `[r, t]` (convention `t >= r`, `t = 1` pure noise, `t = 0` data).
//! Evaluated at `r = t` it degenerates to the instantaneous velocity
//! `v(z, t, psi)`, so the same trunk serves flow-matching pretraining and
//! flow-map finetuning.
//!
//! Time conditioning follows the duplicated-embedding scheme: a flow-matching
//! net carries a single embedding of `t`; a flow-map net carries two
//! embeddings with identical shapes, one of the interval length `t - r` and
//! one of the segment end `t`, combined additively. Finetuning starts by
//! literally duplicating the pretrained single-time embedding into both
//! branches (see [`checkpoint::duplicate_time_embedding`]).

pub mod checkpoint;

use crate::error::{Error, Result};
use crate::numcore::{Engine, Eval, Rng, Tensor};
use serde::{Deserialize, Serialize};

pub use checkpoint::{duplicate_time_embedding, Checkpoint, CheckpointMeta};

/// Sinusoidal time featurization: `feature_dim / 2` frequencies on a
/// geometric ladder from `min_freq` to `max_freq`, expanded to sin and cos.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct TimeEmbedConfig {
    pub feature_dim: usize,
    pub min_freq: f64,
    pub max_freq: f64,
}

impl Default for TimeEmbedConfig {
    fn default() -> Self {
        TimeEmbedConfig {
            feature_dim: 32,
            min_freq: 1.0,
            max_freq: 1000.0,
        }
    }
}

impl TimeEmbedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.feature_dim % 2 != 0 {
            return Err(Error::InvalidArg(format!(
                "feature_dim must be a positive even number, got {}",
                self.feature_dim
            )));
        }
        if !(self.min_freq > 0.0 && self.max_freq > self.min_freq) {
            return Err(Error::InvalidArg(format!(
                "need 0 < min_freq < max_freq, got {} and {}",
                self.min_freq, self.max_freq
            )));
        }
        Ok(())
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let n = self.feature_dim / 2;
        if n == 1 {
            return vec![self.min_freq];
        }
        let ratio = self.max_freq / self.min_freq;
        (0..n)
            .map(|j| self.min_freq * ratio.powf(j as f64 / (n - 1) as f64))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct NetDims {
    pub data_dim: usize,
    pub cond_dim: usize,
    pub hidden_dim: usize,
    pub depth: usize,
}

impl Default for NetDims {
    fn default() -> Self {
        NetDims {
            data_dim: 2,
            cond_dim: 8,
            hidden_dim: 128,
            depth: 3,
        }
    }
}

impl NetDims {
    pub fn validate(&self) -> Result<()> {
        if self.data_dim == 0 || self.cond_dim == 0 || self.hidden_dim == 0 || self.depth == 0 {
            return Err(Error::InvalidArg(format!("all net dims must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// One affine layer, weights `[in, out]`, bias `[out]`.
#[derive(Clone, Debug)]
pub struct Affine {
    pub w: Tensor,
    pub b: Tensor,
}

impl Affine {
    fn init(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Affine {
        let scale = 1.0 / (fan_in as f64).sqrt();
        Affine {
            w: rng.normal_tensor(&[fan_in, fan_out]).mul_scalar(scale),
            b: Tensor::zeros(&[fan_out]),
        }
    }

    fn zeros(fan_in: usize, fan_out: usize) -> Affine {
        Affine {
            w: Tensor::zeros(&[fan_in, fan_out]),
            b: Tensor::zeros(&[fan_out]),
        }
    }
}

/// Single-time (flow matching) vs dual-time (flow map) conditioning.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NetMode {
    Fm,
    Mf,
}

impl NetMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            NetMode::Fm => "fm",
            NetMode::Mf => "mf",
        }
    }

    pub fn parse(s: &str) -> Result<NetMode> {
        match s {
            "fm" => Ok(NetMode::Fm),
            "mf" => Ok(NetMode::Mf),
            other => Err(Error::InvalidArg(format!("unknown mode {other:?}, expected fm|mf"))),
        }
    }
}

#[derive(Clone, Debug)]
enum TimeEmbedding {
    Single(Affine),
    Dual { interval: Affine, end: Affine },
}

#[derive(Clone, Debug)]
pub struct VelocityNet {
    dims: NetDims,
    time_cfg: TimeEmbedConfig,
    freqs: Vec<f64>,
    time: TimeEmbedding,
    trunk: Vec<Affine>,
}

/// Engine-side handles for all parameters of one network.
pub(crate) struct Bound<V> {
    time: BoundTime<V>,
    trunk: Vec<BoundAffine<V>>,
}

pub(crate) struct BoundAffine<V> {
    w: V,
    b: V,
}

enum BoundTime<V> {
    Single(BoundAffine<V>),
    Dual {
        interval: BoundAffine<V>,
        end: BoundAffine<V>,
    },
}

impl<V> Bound<V> {
    /// Handles in canonical parameter order (same as `param_names`).
    pub(crate) fn handles(&self) -> Vec<&V> {
        let mut out = Vec::new();
        match &self.time {
            BoundTime::Single(a) => {
                out.push(&a.w);
                out.push(&a.b);
            }
            BoundTime::Dual { interval, end } => {
                out.push(&interval.w);
                out.push(&interval.b);
                out.push(&end.w);
                out.push(&end.b);
            }
        }
        for a in &self.trunk {
            out.push(&a.w);
            out.push(&a.b);
        }
        out
    }
}

impl VelocityNet {
    /// Fresh network. The final trunk layer is zero-initialized so the
    /// untrained field is the zero field.
    pub fn init(
        dims: NetDims,
        time_cfg: TimeEmbedConfig,
        mode: NetMode,
        rng: &mut Rng,
    ) -> Result<VelocityNet> {
        dims.validate()?;
        time_cfg.validate()?;
        let f = time_cfg.feature_dim;
        let h = dims.hidden_dim;
        let time = match mode {
            NetMode::Fm => TimeEmbedding::Single(Affine::init(f, h, rng)),
            NetMode::Mf => TimeEmbedding::Dual {
                interval: Affine::init(f, h, rng),
                end: Affine::init(f, h, rng),
            },
        };
        let mut trunk = Vec::with_capacity(dims.depth);
        let in0 = dims.data_dim + h + dims.cond_dim;
        for layer in 0..dims.depth {
            let fan_in = if layer == 0 { in0 } else { h };
            let fan_out = if layer == dims.depth - 1 { dims.data_dim } else { h };
            if layer == dims.depth - 1 {
                trunk.push(Affine::zeros(fan_in, fan_out));
            } else {
                trunk.push(Affine::init(fan_in, fan_out, rng));
            }
        }
        let freqs = time_cfg.frequencies();
        Ok(VelocityNet {
            dims,
            time_cfg,
            freqs,
            time,
            trunk,
        })
    }

    pub(crate) fn from_parts(
        dims: NetDims,
        time_cfg: TimeEmbedConfig,
        time_single: Option<Affine>,
        time_dual: Option<(Affine, Affine)>,
        trunk: Vec<Affine>,
    ) -> Result<VelocityNet> {
        dims.validate()?;
        time_cfg.validate()?;
        let time = match (time_single, time_dual) {
            (Some(a), None) => TimeEmbedding::Single(a),
            (None, Some((i, e))) => {
                if i.w.shape() != e.w.shape() || i.b.shape() != e.b.shape() {
                    return Err(Error::InvalidArg(
                        "interval and end embeddings must have identical shapes".into(),
                    ));
                }
                TimeEmbedding::Dual { interval: i, end: e }
            }
            _ => return Err(Error::InvalidArg("exactly one time embedding form required".into())),
        };
        let freqs = time_cfg.frequencies();
        Ok(VelocityNet {
            dims,
            time_cfg,
            freqs,
            time,
            trunk,
        })
    }

    pub fn mode(&self) -> NetMode {
        match self.time {
            TimeEmbedding::Single(_) => NetMode::Fm,
            TimeEmbedding::Dual { .. } => NetMode::Mf,
        }
    }

    pub fn dims(&self) -> &NetDims {
        &self.dims
    }

    pub fn time_cfg(&self) -> &TimeEmbedConfig {
        &self.time_cfg
    }

    /// Canonical parameter names, matching the order of `param_tensors`.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        match self.time {
            TimeEmbedding::Single(_) => {
                names.push("time.w".to_string());
                names.push("time.b".to_string());
            }
            TimeEmbedding::Dual { .. } => {
                names.push("time_interval.w".to_string());
                names.push("time_interval.b".to_string());
                names.push("time_end.w".to_string());
                names.push("time_end.b".to_string());
            }
        }
        for i in 0..self.trunk.len() {
            names.push(format!("trunk{i}.w"));
            names.push(format!("trunk{i}.b"));
        }
        names
    }

    pub fn param_tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        match &self.time {
            TimeEmbedding::Single(a) => {
                out.push(&a.w);
                out.push(&a.b);
            }
            TimeEmbedding::Dual { interval, end } => {
                out.push(&interval.w);
                out.push(&interval.b);
                out.push(&end.w);
                out.push(&end.b);
            }
        }
        for a in &self.trunk {
            out.push(&a.w);
            out.push(&a.b);
        }
        out
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        match &mut self.time {
            TimeEmbedding::Single(a) => {
                out.push(&mut a.w);
                out.push(&mut a.b);
            }
            TimeEmbedding::Dual { interval, end } => {
                out.push(&mut interval.w);
                out.push(&mut interval.b);
                out.push(&mut end.w);
                out.push(&mut end.b);
            }
        }
        for a in &mut self.trunk {
            out.push(&mut a.w);
            out.push(&mut a.b);
        }
        out
    }

    /// Total scalar parameter count.
    pub fn param_count(&self) -> usize {
        self.param_tensors().iter().map(|t| t.numel()).sum()
    }

    /// Lifts every parameter into the engine (as constants for Eval/Forward,
    /// as leaves on a tape).
    pub(crate) fn bind<E: Engine>(&self, e: &mut E) -> Bound<E::Value> {
        let bind_aff = |e: &mut E, a: &Affine| BoundAffine {
            w: e.lift(a.w.clone()),
            b: e.lift(a.b.clone()),
        };
        let time = match &self.time {
            TimeEmbedding::Single(a) => BoundTime::Single(bind_aff(e, a)),
            TimeEmbedding::Dual { interval, end } => BoundTime::Dual {
                interval: bind_aff(e, interval),
                end: bind_aff(e, end),
            },
        };
        let trunk = self.trunk.iter().map(|a| bind_aff(e, a)).collect();
        Bound { time, trunk }
    }

    /// Engine-generic forward pass. `z: [B, data_dim]`, `t, r: [B, 1]`,
    /// `psi: [B, cond_dim]`. Callers are responsible for the `t >= r`
    /// convention and for passing `t == r` to single-time nets; the public
    /// eval wrappers enforce both.
    pub(crate) fn forward_bound<E: Engine>(
        &self,
        e: &mut E,
        p: &Bound<E::Value>,
        z: &E::Value,
        t: &E::Value,
        r: &E::Value,
        psi: &E::Value,
    ) -> Result<E::Value> {
        let affine = |e: &mut E, a: &BoundAffine<E::Value>, x: &E::Value| -> Result<E::Value> {
            let y = e.matmul(x, &a.w)?;
            e.add(&y, &a.b)
        };
        let phi = match &p.time {
            BoundTime::Single(a) => {
                let feat = e.sin_cos_features(t, &self.freqs)?;
                affine(e, a, &feat)?
            }
            BoundTime::Dual { interval, end } => {
                let delta = e.sub(t, r)?;
                let feat_i = e.sin_cos_features(&delta, &self.freqs)?;
                let phi_i = affine(e, interval, &feat_i)?;
                let feat_e = e.sin_cos_features(t, &self.freqs)?;
                let phi_e = affine(e, end, &feat_e)?;
                e.add(&phi_i, &phi_e)?
            }
        };
        let zc = e.concat_last_dim(z, &phi)?;
        let mut h = e.concat_last_dim(&zc, psi)?;
        let last = self.trunk.len() - 1;
        for (i, layer) in p.trunk.iter().enumerate() {
            h = affine(e, layer, &h)?;
            if i != last {
                h = e.silu(&h)?;
            }
        }
        Ok(h)
    }

    fn validate_inputs(&self, z: &Tensor, t: &[f64], r: &[f64], psi: &Tensor) -> Result<()> {
        let b = z.rows();
        if z.shape().len() != 2 || z.last_dim() != self.dims.data_dim {
            return Err(Error::Shape {
                op: "forward",
                lhs: z.shape().to_vec(),
                rhs: vec![b, self.dims.data_dim],
            });
        }
        if psi.shape().len() != 2 || psi.last_dim() != self.dims.cond_dim || psi.rows() != b {
            return Err(Error::Shape {
                op: "forward",
                lhs: psi.shape().to_vec(),
                rhs: vec![b, self.dims.cond_dim],
            });
        }
        if t.len() != b || r.len() != b {
            return Err(Error::Shape {
                op: "forward",
                lhs: vec![t.len(), r.len()],
                rhs: vec![b, b],
            });
        }
        for (&ti, &ri) in t.iter().zip(r) {
            if !(ti.is_finite() && ri.is_finite()) {
                return Err(Error::NonFinite {
                    context: "forward times".into(),
                });
            }
            if ti < ri {
                return Err(Error::TimeOrder { t: ti, r: ri });
            }
        }
        if self.mode() == NetMode::Fm && t.iter().zip(r).any(|(a, b)| a != b) {
            return Err(Error::ModeMismatch {
                expected: "t == r for a single-time (fm) net".into(),
                found: "interval conditioning requires a dual-time (mf) net".into(),
            });
        }
        Ok(())
    }

    /// Average-velocity prediction for a batch with per-example times.
    pub fn avg_velocity_batch(
        &self,
        z: &Tensor,
        t: &[f64],
        r: &[f64],
        psi: &Tensor,
    ) -> Result<Tensor> {
        self.validate_inputs(z, t, r, psi)?;
        let mut e = Eval;
        let p = self.bind(&mut e);
        let (zv, tv, rv, pv) = (
            z.clone(),
            Tensor::column(t),
            Tensor::column(r),
            psi.clone(),
        );
        self.forward_bound(&mut e, &p, &zv, &tv, &rv, &pv)
    }

    /// Instantaneous-velocity prediction: the `r = t` boundary of the map.
    pub fn velocity_batch(&self, z: &Tensor, t: &[f64], psi: &Tensor) -> Result<Tensor> {
        self.avg_velocity_batch(z, t, t, psi)
    }

    /// Conditional temporal embedding of a single `(t, r)` pair, `[1, hidden]`.
    /// For a dual-time net this is interval-branch plus end-branch; a
    /// single-time net only admits `t == r` and returns its one embedding.
    pub fn cond_time_embedding(&self, t: f64, r: f64) -> Result<Tensor> {
        if t < r {
            return Err(Error::TimeOrder { t, r });
        }
        let feat_t = Tensor::column(&[t]).sin_cos_features(&self.freqs)?;
        match &self.time {
            TimeEmbedding::Single(a) => {
                if t != r {
                    return Err(Error::ModeMismatch {
                        expected: "t == r for a single-time (fm) net".into(),
                        found: format!("t={t}, r={r}"),
                    });
                }
                feat_t.matmul(&a.w)?.add(&a.b)
            }
            TimeEmbedding::Dual { interval, end } => {
                let feat_d = Tensor::column(&[t - r]).sin_cos_features(&self.freqs)?;
                let phi_i = feat_d.matmul(&interval.w)?.add(&interval.b)?;
                let phi_e = feat_t.matmul(&end.w)?.add(&end.b)?;
                phi_i.add(&phi_e)
            }
        }
    }

    pub(crate) fn trunk(&self) -> &[Affine] {
        &self.trunk
    }

    pub(crate) fn time_single(&self) -> Option<&Affine> {
        match &self.time {
            TimeEmbedding::Single(a) => Some(a),
            TimeEmbedding::Dual { .. } => None,
        }
    }

    /// The interval and end embedding branches of a dual-time net.
    pub fn time_dual(&self) -> Option<(&Affine, &Affine)> {
        match &self.time {
            TimeEmbedding::Single(_) => None,
            TimeEmbedding::Dual { interval, end } => Some((interval, end)),
        }
    }

    /// Test/diagnostic access: shifts the single-time embedding bias.
    pub fn shift_single_time_bias(&mut self, delta: &Tensor) -> Result<()> {
        match &mut self.time {
            TimeEmbedding::Single(a) => {
                a.b = a.b.add(delta)?;
                Ok(())
            }
            TimeEmbedding::Dual { .. } => Err(Error::ModeMismatch {
                expected: "fm".into(),
                found: "mf".into(),
            }),
        }
    }
}

/// A model whose average-velocity forward pass can run in any engine, which
/// is what the flow-map target construction differentiates through.
pub trait TimeVelocityModel {
    fn forward_in<E: Engine>(
        &self,
        e: &mut E,
        z: &E::Value,
        t: &E::Value,
        r: &E::Value,
        psi: &E::Value,
    ) -> Result<E::Value>;
}

impl TimeVelocityModel for VelocityNet {
    fn forward_in<E: Engine>(
        &self,
        e: &mut E,
        z: &E::Value,
        t: &E::Value,
        r: &E::Value,
        psi: &E::Value,
    ) -> Result<E::Value> {
        let p = self.bind(e);
        self.forward_bound(e, &p, z, t, r, psi)
    }
}

/// Eval-level average-velocity model used by the samplers and metrics. Times
/// are scalars shared by the whole batch.
pub trait FlowMap {
    fn avg_velocity(&self, z: &Tensor, t: f64, r: f64, psi: &Tensor) -> Result<Tensor>;

    fn velocity(&self, z: &Tensor, t: f64, psi: &Tensor) -> Result<Tensor> {
        self.avg_velocity(z, t, t, psi)
    }
}

impl FlowMap for VelocityNet {
    fn avg_velocity(&self, z: &Tensor, t: f64, r: f64, psi: &Tensor) -> Result<Tensor> {
        let b = z.rows();
        self.avg_velocity_batch(z, &vec![t; b], &vec![r; b], psi)
    }
}

/// Hand-built linear flow map `u(z, t, r) = z A + t b + r c` (row-vector
/// convention). Its exact chain rule is computable by hand, which makes it
/// the reference model for target-construction tests.
#[derive(Clone, Debug)]
pub struct LinearFlowMap {
    /// `[D, D]`, applied as `z A`.
    pub a: Tensor,
    /// `[1, D]`.
    pub b: Tensor,
    /// `[1, D]`.
    pub c: Tensor,
}

impl TimeVelocityModel for LinearFlowMap {
    fn forward_in<E: Engine>(
        &self,
        e: &mut E,
        z: &E::Value,
        t: &E::Value,
        r: &E::Value,
        _psi: &E::Value,
    ) -> Result<E::Value> {
        let a = e.lift(self.a.clone());
        let b = e.lift(self.b.clone());
        let c = e.lift(self.c.clone());
        let za = e.matmul(z, &a)?;
        let tb = e.matmul(t, &b)?;
        let rc = e.matmul(r, &c)?;
        let s = e.add(&za, &tb)?;
        e.add(&s, &rc)
    }
}

impl FlowMap for LinearFlowMap {
    fn avg_velocity(&self, z: &Tensor, t: f64, r: f64, _psi: &Tensor) -> Result<Tensor> {
        let b = z.rows();
        let mut e = Eval;
        let psi = Tensor::zeros(&[b, 1]);
        self.forward_in(
            &mut e,
            z,
            &Tensor::column(&vec![t; b]),
            &Tensor::column(&vec![r; b]),
            &psi,
        )
    }
}

/// Constant field `u == c`; useful for telescoping checks.
#[derive(Clone, Debug)]
pub struct ConstantField(pub Vec<f64>);

impl FlowMap for ConstantField {
    fn avg_velocity(&self, z: &Tensor, _t: f64, _r: f64, _psi: &Tensor) -> Result<Tensor> {
        let rows = z.rows();
        let mut data = Vec::with_capacity(rows * self.0.len());
        for _ in 0..rows {
            data.extend_from_slice(&self.0);
        }
        Tensor::new(vec![rows, self.0.len()], data)
    }
}
