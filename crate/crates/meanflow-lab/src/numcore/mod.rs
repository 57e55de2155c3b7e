//! Minimal deterministic tensor engine: reverse-mode gradients on a tape,
//! forward-mode JVPs on dual tensors, seeded randomness and Adam. Sufficient
//! for small multilayer networks; 64-bit floats everywhere.

pub mod dual;
pub mod engine;
pub mod optim;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use dual::{jvp, DualTensor, Forward};
pub use engine::{Engine, Eval};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use rng::{hash_bytes, seed_chain, Rng};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::{distance, norm, Tensor};
