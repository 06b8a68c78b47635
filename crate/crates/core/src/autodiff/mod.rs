//! Minimal reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every op applied to its [`Var`] handles. `backward`
//! sweeps the tape in reverse and adds gradients into the differentiable
//! leaves; running it twice without [`Tape::zero_grads`] doubles them.
//! Forward values are never modified by `backward`.
//!
//! GELU uses the tanh approximation
//! `0.5·x·(1 + tanh(0.7978845608028654·(x + 0.044715·x³)))`.

mod checkpoint;
pub mod gradcheck;
mod kernels;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_manifest, manifest_path, save_checkpoint,
    CheckpointManifest, TensorEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use params::{BoundParams, ParamStore, Parameter};
pub use scalar::Scalar;
pub use tape::{multi_head_attention, Tape, Var, GELU_A, GELU_C};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
