//! Versioned checkpoint container: every parameter tensor with shape headers,
//! the optimizer moments, and the step counters. Loading a checkpoint
//! reproduces Q-values bit-identically, so all values are preserved exactly.

use alloc::string::String;
use alloc::vec::Vec;

use super::{Adam, NeuralError, ParamStore, Params, QNetwork};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TensorRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Checkpoint {
    pub format_version: u32,
    /// Environment steps taken when the checkpoint was captured.
    pub env_steps: u64,
    /// Optimizer updates applied so far.
    pub train_steps: u64,
    /// Width of the state representation the head was built for.
    pub state_dim: usize,
    /// Objective count of the world the agent was trained on.
    pub n_objectives: usize,
    /// "spec" or "linear".
    pub goal_mode: String,
    /// The run configuration, embedded verbatim for provenance.
    pub config_text: String,
    pub tensors: Vec<TensorRecord>,
    pub adam_m: Vec<Vec<f64>>,
    pub adam_v: Vec<Vec<f64>>,
    pub adam_steps: u64,
}

impl Checkpoint {
    pub fn capture(
        net: &QNetwork,
        adam: &Adam,
        env_steps: u64,
        train_steps: u64,
        n_objectives: usize,
        goal_mode: &str,
        config_text: &str,
    ) -> Self {
        let store = net.store();
        let tensors = store
            .ids()
            .map(|id| {
                let t = store.tensor(id);
                TensorRecord {
                    name: store.name(id).into(),
                    rows: t.rows(),
                    cols: t.cols(),
                    data: t.data().to_vec(),
                }
            })
            .collect();
        let (m, v, t) = adam.moments();
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            env_steps,
            train_steps,
            state_dim: net.state_dim(),
            n_objectives,
            goal_mode: goal_mode.into(),
            config_text: config_text.into(),
            tensors,
            adam_m: m.to_vec(),
            adam_v: v.to_vec(),
            adam_steps: t,
        }
    }

    /// Writes the stored tensors into `store`. Names and shapes must match
    /// the store layout exactly.
    pub fn restore_params(&self, store: &mut ParamStore) -> Result<(), NeuralError> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(NeuralError::Checkpoint { msg: "unknown format version" });
        }
        if self.tensors.len() != store.len() {
            return Err(NeuralError::Checkpoint { msg: "parameter count mismatch" });
        }
        for (record, id) in self.tensors.iter().zip(store.ids().collect::<Vec<_>>()) {
            if record.name != store.name(id) {
                return Err(NeuralError::Checkpoint { msg: "parameter name mismatch" });
            }
            let t = store.tensor_mut(id);
            if (record.rows, record.cols) != t.shape() || record.data.len() != t.len() {
                return Err(NeuralError::Checkpoint { msg: "parameter shape mismatch" });
            }
            t.data_mut().copy_from_slice(&record.data);
        }
        Ok(())
    }
}
