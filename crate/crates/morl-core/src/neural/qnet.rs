//! The specification-conditioned Q-network: encoder output (or a padded goal
//! vector) concatenated with the state representation, passed through a
//! 4-layer rectified head that emits one Q-value per action.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)] // f64 math methods come from this trait in no_std builds
use num_traits::Float;
use rand::Rng;

use crate::rng::{stream, TAG_INIT};
use crate::speclang::TokenSequence;

use super::gru::{GruEncoder, TokenBatch, ENCODING_DIM};
use super::tape::{NodeId, Tape};
use super::tensor::Tensor;
use super::{NeuralError, ParamId, ParamStore, Params};

pub const N_ACTIONS: usize = 4;
pub const HEAD_HIDDEN: usize = 128;
pub const HEAD_LAYERS: usize = 4;

/// The 4-layer Q head. Input width is `state_dim + ENCODING_DIM`.
#[derive(Debug, Clone)]
pub struct QHead {
    w: [ParamId; HEAD_LAYERS],
    b: [ParamId; HEAD_LAYERS],
    in_dim: usize,
}

impl QHead {
    pub fn new<R: Rng>(store: &mut ParamStore, in_dim: usize, rng: &mut R) -> Self {
        let mut w = Vec::with_capacity(HEAD_LAYERS);
        let mut b = Vec::with_capacity(HEAD_LAYERS);
        for layer in 0..HEAD_LAYERS {
            let (fan_in, fan_out) = match layer {
                0 => (in_dim, HEAD_HIDDEN),
                1 | 2 => (HEAD_HIDDEN, HEAD_HIDDEN),
                _ => (HEAD_HIDDEN, N_ACTIONS),
            };
            let scale = 1.0 / (fan_in as f64).sqrt();
            w.push(store.add(format!("head.l{layer}.w"), Tensor::uniform(fan_in, fan_out, scale, rng)));
            b.push(store.add(format!("head.l{layer}.b"), Tensor::uniform(1, fan_out, scale, rng)));
        }
        Self {
            w: w.try_into().expect("four layers"),
            b: b.try_into().expect("four layers"),
            in_dim,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    /// Records the head forward pass on `input` (`[m, in_dim]`); returns the
    /// `[m, N_ACTIONS]` Q-value node.
    pub fn forward_traced<P: Params>(
        &self,
        tape: &mut Tape,
        params: &P,
        input: NodeId,
        record: bool,
    ) -> NodeId {
        let mut h = input;
        for layer in 0..HEAD_LAYERS {
            let w = tape.param(params, self.w[layer], record);
            let b = tape.param(params, self.b[layer], record);
            h = tape.matmul(h, w);
            h = tape.add_bias(h, b);
            if layer + 1 < HEAD_LAYERS {
                h = tape.relu(h);
            }
        }
        h
    }
}

/// Frozen deep copy of every network parameter, used as the target network.
#[derive(Debug, Clone)]
pub struct TargetParams(Vec<Tensor>);

impl Params for TargetParams {
    fn tensor(&self, id: ParamId) -> &Tensor {
        &self.0[id.0]
    }
}

/// Encoder plus Q-head with their shared parameter store.
#[derive(Debug, Clone)]
pub struct QNetwork {
    store: ParamStore,
    encoder: GruEncoder,
    head: QHead,
    state_dim: usize,
}

impl QNetwork {
    /// Fresh network with seeded uniform fan-in initialization.
    /// `state_dim` is the width of the state representation (one-hot over
    /// grid cells).
    pub fn new(state_dim: usize, seed: u64) -> Self {
        let mut rng = stream(seed, TAG_INIT, 0);
        let mut store = ParamStore::new();
        let encoder = GruEncoder::new(&mut store, &mut rng);
        let head = QHead::new(&mut store, state_dim + ENCODING_DIM, &mut rng);
        Self { store, encoder, head, state_dim }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn encoder(&self) -> &GruEncoder {
        &self.encoder
    }

    pub fn head(&self) -> &QHead {
        &self.head
    }

    /// Specification encoding under the live parameters.
    pub fn encode(&self, tokens: &TokenSequence) -> Result<Vec<f64>, NeuralError> {
        self.encoder.encode(&self.store, tokens)
    }

    /// Specification encoding under an arbitrary parameter set (e.g. the
    /// target copy).
    pub fn encode_in<P: Params>(&self, params: &P, tokens: &TokenSequence) -> Result<Vec<f64>, NeuralError> {
        self.encoder.encode(params, tokens)
    }

    /// Q-values for one (state, specification) pair.
    pub fn q_values(
        &self,
        state_features: &[f64],
        tokens: &TokenSequence,
    ) -> Result<[f64; N_ACTIONS], NeuralError> {
        let encoding = self.encode(tokens)?;
        self.q_values_with_encoding(state_features, &encoding)
    }

    /// Q-values with a precomputed (or synthetic) 128-wide goal slot.
    pub fn q_values_with_encoding(
        &self,
        state_features: &[f64],
        encoding: &[f64],
    ) -> Result<[f64; N_ACTIONS], NeuralError> {
        self.q_values_with_encoding_in(&self.store, state_features, encoding)
    }

    /// As [`QNetwork::q_values_with_encoding`] but against explicit params.
    pub fn q_values_with_encoding_in<P: Params>(
        &self,
        params: &P,
        state_features: &[f64],
        encoding: &[f64],
    ) -> Result<[f64; N_ACTIONS], NeuralError> {
        if state_features.len() != self.state_dim {
            return Err(NeuralError::Shape { msg: "state feature width" });
        }
        if encoding.len() != ENCODING_DIM {
            return Err(NeuralError::Shape { msg: "encoding width" });
        }
        let mut input = Vec::with_capacity(self.head.in_dim);
        input.extend_from_slice(state_features);
        input.extend_from_slice(encoding);
        let mut tape = Tape::new();
        let node = tape.constant(1, self.head.in_dim, input);
        let out = self.head.forward_traced(&mut tape, params, node, false);
        let v = tape.value(out);
        Ok([v[0], v[1], v[2], v[3]])
    }

    /// Batched encodings under arbitrary params; rows follow the batch order.
    pub fn encode_batch_in<P: Params>(&self, params: &P, batch: &TokenBatch) -> Vec<f64> {
        self.encoder.encode_batch(params, batch)
    }

    /// Deep copy of every parameter; training the live network never touches
    /// the copy. Copying twice from the same network yields identical params.
    pub fn copy_into_target(&self) -> TargetParams {
        TargetParams(self.store.snapshot())
    }
}
