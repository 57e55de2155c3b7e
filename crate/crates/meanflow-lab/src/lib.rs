//! Desk-scale laboratory for one- and few-step conditional generation with
//! average-velocity flow maps.
//!
//! The crate trains a small conditional velocity network in two stages —
//! flow-matching pretraining, then flow-map finetuning with a forward-mode
//! (JVP) self-consistency target and duplicated temporal embeddings — on
//! synthetic low-dimensional tasks where analytic oracles exist, and measures
//! the results with distribution distance, condition fidelity, trajectory
//! curvature, and embedding-quality metrics (retrieval discriminability and
//! ablation disentanglement).
//!
//! Module map:
//! - [`numcore`]: tensors, reverse-mode tape, forward-mode duals, rng, Adam.
//! - [`net`]: the conditional velocity/flow-map network and checkpoints.
//! - [`flow`]: interpolation paths, timestep schedules, analytic Gaussian
//!   oracles, the flow-map target and the training losses.
//! - [`sampler`]: n-step flow-map sampling and the Euler baseline.
//! - [`metrics`]: energy distance, condition fidelity, trajectory curvature.
//! - [`task`]: synthetic data tasks (isotropic Gaussian, compositional
//!   mixtures).
//! - [`embed`]: embedding corpora, pooling/cosine/retrieval metrics, and
//!   synthetic condition-embedding generators.
//! - [`harness`]: experiment configs, dataset generation, training
//!   orchestration, evaluation, and end-to-end recipes.
//!
//! The `examples/` directory is the guided tour; `mflab` is the thin CLI over
//! [`harness`].

pub mod cli;
pub mod embed;
pub mod error;
pub mod flow;
pub mod harness;
pub mod metrics;
pub mod net;
pub mod numcore;
pub mod sampler;
pub mod task;

pub use error::{Error, Result};
