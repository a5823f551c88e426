//! Bidirectional GRU specification encoder.
//!
//! Three stacked bidirectional layers of hidden size 64 consume token
//! sequences as one-hot vectors (realized as row gathers of the input weight
//! matrix). The specification encoding is the final hidden state of the last
//! layer in each direction, concatenated: 128 values.
//!
//! Sequences of different lengths are batched by padding to the longest and
//! masking: padded steps copy the hidden state through unchanged, so the
//! final time block always holds each sequence's true final state.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)] // f64 math methods come from this trait in no_std builds
use num_traits::Float;
use rand::Rng;

use crate::speclang::{TokenSequence, VOCAB_SIZE};

use super::tape::{NodeId, Tape};
use super::tensor::Tensor;
use super::{NeuralError, ParamId, ParamStore, Params};

pub const GRU_LAYERS: usize = 3;
pub const GRU_HIDDEN: usize = 64;
/// Encoder output width: final hidden state of each direction, concatenated.
pub const ENCODING_DIM: usize = 2 * GRU_HIDDEN;

#[derive(Debug, Clone, Copy)]
struct DirParams {
    w_x: ParamId,
    b_x: ParamId,
    w_h: ParamId,
    b_h: ParamId,
}

/// Parameter handles of the 3-layer bidirectional encoder.
#[derive(Debug, Clone)]
pub struct GruEncoder {
    layers: [[DirParams; 2]; GRU_LAYERS],
}

impl GruEncoder {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R) -> Self {
        let dir_params = |store: &mut ParamStore, rng: &mut R, layer: usize, dir: usize| {
            let in_dim = if layer == 0 { VOCAB_SIZE } else { ENCODING_DIM };
            let dname = if dir == 0 { "fwd" } else { "bwd" };
            let sx = 1.0 / (in_dim as f64).sqrt();
            let sh = 1.0 / (GRU_HIDDEN as f64).sqrt();
            DirParams {
                w_x: store.add(
                    format!("encoder.l{layer}.{dname}.w_x"),
                    Tensor::uniform(in_dim, 3 * GRU_HIDDEN, sx, rng),
                ),
                b_x: store.add(
                    format!("encoder.l{layer}.{dname}.b_x"),
                    Tensor::uniform(1, 3 * GRU_HIDDEN, sx, rng),
                ),
                w_h: store.add(
                    format!("encoder.l{layer}.{dname}.w_h"),
                    Tensor::uniform(GRU_HIDDEN, 3 * GRU_HIDDEN, sh, rng),
                ),
                b_h: store.add(
                    format!("encoder.l{layer}.{dname}.b_h"),
                    Tensor::uniform(1, 3 * GRU_HIDDEN, sh, rng),
                ),
            }
        };
        let mut layers = Vec::with_capacity(GRU_LAYERS);
        for layer in 0..GRU_LAYERS {
            layers.push([
                dir_params(store, rng, layer, 0),
                dir_params(store, rng, layer, 1),
            ]);
        }
        Self { layers: layers.try_into().expect("exactly three layers") }
    }

    /// Records the encoder forward pass for a batch; returns the `[B, 128]`
    /// encoding node.
    pub fn encode_traced<P: Params>(
        &self,
        tape: &mut Tape,
        params: &P,
        batch: &TokenBatch,
        record: bool,
    ) -> NodeId {
        let b = batch.batch_size;
        let l = batch.max_len;

        let mut fwd_in: Option<NodeId> = None; // layer input at original positions
        let mut finals: Option<(NodeId, NodeId)> = None;
        for layer in 0..GRU_LAYERS {
            let mut outputs: [Option<NodeId>; 2] = [None, None];
            for dir in 0..2 {
                let p = self.layers[layer][dir];
                let w_x = tape.param(params, p.w_x, record);
                let b_x = tape.param(params, p.b_x, record);
                let w_h = tape.param(params, p.w_h, record);
                let b_h = tape.param(params, p.b_h, record);

                // Input transform for all time steps in one op.
                let x_all = if layer == 0 {
                    let tokens =
                        if dir == 0 { batch.fwd_tokens.clone() } else { batch.bwd_tokens.clone() };
                    tape.gather_rows(w_x, tokens)
                } else {
                    let input = if dir == 0 {
                        fwd_in.expect("set after layer 0")
                    } else {
                        // The backward direction reads the sequence reversed.
                        tape.gather_rows(fwd_in.expect("set after layer 0"), batch.reindex.clone())
                    };
                    tape.matmul(input, w_x)
                };
                let x_all = tape.add_bias(x_all, b_x);

                let mut h = tape.constant(b, GRU_HIDDEN, alloc::vec![0.0; b * GRU_HIDDEN]);
                let mut steps = Vec::with_capacity(l);
                for t in 0..l {
                    let x_t = tape.slice_rows(x_all, t * b, b);
                    let mask = batch.mask[t * b..(t + 1) * b].to_vec();
                    h = tape.gru_step(x_t, h, w_h, b_h, mask);
                    steps.push(h);
                }
                outputs[dir] = Some(tape.concat_rows(steps));
            }
            let fwd_out = outputs[0].expect("both directions ran");
            let bwd_out = outputs[1].expect("both directions ran");
            // Final states sit in the last time block thanks to masking.
            let last_fwd = tape.slice_rows(fwd_out, (l - 1) * b, b);
            let last_bwd = tape.slice_rows(bwd_out, (l - 1) * b, b);
            finals = Some((last_fwd, last_bwd));
            if layer + 1 < GRU_LAYERS {
                // Un-reverse the backward outputs to original positions.
                let bwd_orig = tape.gather_rows(bwd_out, batch.reindex.clone());
                fwd_in = Some(tape.concat_cols(fwd_out, bwd_orig));
            }
        }
        let (last_fwd, last_bwd) = finals.expect("encoder has at least one layer");
        tape.concat_cols(last_fwd, last_bwd)
    }

    /// Encodes a batch without recording gradients; rows are the per-sequence
    /// encodings.
    pub fn encode_batch<P: Params>(&self, params: &P, batch: &TokenBatch) -> Vec<f64> {
        let mut tape = Tape::new();
        let node = self.encode_traced(&mut tape, params, batch, false);
        tape.value(node).to_vec()
    }

    /// Encoding of a single token sequence.
    pub fn encode<P: Params>(
        &self,
        params: &P,
        tokens: &TokenSequence,
    ) -> Result<Vec<f64>, NeuralError> {
        let batch = TokenBatch::new(&[tokens])?;
        Ok(self.encode_batch(params, &batch))
    }
}

/// Token sequences padded and indexed for lockstep batched encoding.
#[derive(Debug, Clone)]
pub struct TokenBatch {
    batch_size: usize,
    max_len: usize,
    /// Token ids per (time, sequence), padded with token 0.
    fwd_tokens: Vec<usize>,
    /// Same for the reversed sequences.
    bwd_tokens: Vec<usize>,
    /// 1.0 while the step is inside the sequence, else 0.0.
    mask: Vec<f64>,
    /// Row map that reverses each sequence in a time-major `[L*B]` block
    /// layout; applying it twice is the identity on live rows.
    reindex: Vec<usize>,
}

impl TokenBatch {
    pub fn new(seqs: &[&TokenSequence]) -> Result<Self, NeuralError> {
        if seqs.is_empty() || seqs.iter().any(|s| s.is_empty()) {
            return Err(NeuralError::EmptySequence);
        }
        let b = seqs.len();
        let l = seqs.iter().map(|s| s.len()).max().expect("nonempty");
        let mut fwd_tokens = alloc::vec![0usize; l * b];
        let mut bwd_tokens = alloc::vec![0usize; l * b];
        let mut mask = alloc::vec![0.0; l * b];
        let mut reindex = alloc::vec![0usize; l * b];
        for (i, seq) in seqs.iter().enumerate() {
            let ids = seq.ids();
            for t in 0..l {
                let row = t * b + i;
                if t < ids.len() {
                    fwd_tokens[row] = ids[t].index();
                    bwd_tokens[row] = ids[ids.len() - 1 - t].index();
                    mask[row] = 1.0;
                    reindex[row] = (ids.len() - 1 - t) * b + i;
                } else {
                    reindex[row] = i; // arbitrary live row; masked downstream
                }
            }
        }
        Ok(Self { batch_size: b, max_len: l, fwd_tokens, bwd_tokens, mask, reindex })
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::ChaCha8Rng;
    use crate::speclang::{parse, tokenize};
    use rand::SeedableRng;

    fn tokens(text: &str, n: usize) -> TokenSequence {
        tokenize(&parse(text, n).unwrap())
    }

    fn encoder(seed: u64) -> (ParamStore, GruEncoder) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let enc = GruEncoder::new(&mut store, &mut rng);
        (store, enc)
    }

    #[test]
    fn zero_parameters_give_zero_encoding() {
        let (mut store, enc) = encoder(0);
        for id in store.ids().collect::<Vec<_>>() {
            store.tensor_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let e = enc.encode(&store, &tokens("o1 & o2", 2)).unwrap();
        assert_eq!(e.len(), ENCODING_DIM);
        assert!(e.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encoding_is_deterministic() {
        let (store, enc) = encoder(1);
        let t = tokens("o1 & ( o2 | -o1 )", 2);
        let a = enc.encode(&store, &t).unwrap();
        let b = enc.encode(&store, &t).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn encoding_is_order_sensitive() {
        let (store, enc) = encoder(2);
        let a = enc.encode(&store, &tokens("o1 & o2", 2)).unwrap();
        let b = enc.encode(&store, &tokens("o2 & o1", 2)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn batched_encoding_matches_single() {
        let (store, enc) = encoder(3);
        let t1 = tokens("o1", 3);
        let t2 = tokens("o2 & ( o1 | o3 ) & o2 >= 0.4", 3);
        let t3 = tokens("-o3 | o1 <= 0.2", 3);
        let batch = TokenBatch::new(&[&t1, &t2, &t3]).unwrap();
        let all = enc.encode_batch(&store, &batch);
        for (i, t) in [&t1, &t2, &t3].iter().enumerate() {
            let single = enc.encode(&store, t).unwrap();
            let row = &all[i * ENCODING_DIM..(i + 1) * ENCODING_DIM];
            for (a, b) in row.iter().zip(&single) {
                assert!((a - b).abs() < 1e-12, "row {i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn empty_sequences_are_rejected(){
        let err = TokenBatch::new(&[]).unwrap_err();
        assert_eq!(err, NeuralError::EmptySequence);
    }

    #[test]
    fn encodings_stay_finite_with_large_parameters() {
        let (mut store, enc) = encoder(4);
        for id in store.ids().collect::<Vec<_>>() {
            for v in store.tensor_mut(id).data_mut() {
                *v = v.signum() * 1e3;
            }
        }
        let e = enc.encode(&store, &tokens("o1 & -o2 | o1 >= 0.9", 2)).unwrap();
        assert!(e.iter().all(|v| v.is_finite()));
    }
}
