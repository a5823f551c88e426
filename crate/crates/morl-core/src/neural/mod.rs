//! Dense tensor math with reverse-mode gradients for the fixed network
//! topology: a 3-layer bidirectional GRU specification encoder (hidden 64,
//! encoding width 128) feeding a 4-layer Q-head (hidden 128, one output per
//! action).
//!
//! Forward passes are recorded on a [`Tape`]; [`Tape::backward`] accumulates
//! gradients into a [`ParamStore`]. Everything is `f64`.

mod adam;
mod checkpoint;
mod gru;
mod qnet;
mod tape;
mod tensor;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, TensorRecord, CHECKPOINT_FORMAT_VERSION};
pub use gru::{GruEncoder, TokenBatch, ENCODING_DIM, GRU_HIDDEN, GRU_LAYERS};
pub use qnet::{QHead, QNetwork, TargetParams, HEAD_HIDDEN, HEAD_LAYERS, N_ACTIONS};
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;

use alloc::string::String;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NeuralError {
    #[error("shape mismatch: {msg}")]
    Shape { msg: &'static str },
    #[error("no forward pass recorded on this tape")]
    NoTape,
    #[error("empty token sequence")]
    EmptySequence,
    #[error("incompatible checkpoint: {msg}")]
    Checkpoint { msg: &'static str },
}

/// Handle to a parameter tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// Read access to a set of parameter tensors; implemented by the live
/// [`ParamStore`] and by frozen [`TargetParams`] snapshots so forward passes
/// can run against either.
pub trait Params {
    fn tensor(&self, id: ParamId) -> &Tensor;
}

/// Owning container of named parameter tensors and their gradient buffers.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: String, mut tensor: Tensor) -> ParamId {
        tensor.ensure_grad();
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.zero_grad();
        }
    }

    pub fn accumulate_grad(&mut self, id: ParamId, grad: &[f64]) {
        self.tensors[id.0].add_to_grad(grad);
    }

    /// Deep copy of the parameter values (gradients are not copied).
    pub fn snapshot(&self) -> Vec<Tensor> {
        self.tensors
            .iter()
            .map(|t| {
                let mut c = t.clone();
                c.drop_grad();
                c
            })
            .collect()
    }
}

impl Params for ParamStore {
    fn tensor(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }
}
