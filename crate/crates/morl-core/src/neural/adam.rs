//! Adam optimizer with bias correction; first and second moments persist per
//! parameter across steps.

use alloc::vec::Vec;

#[allow(unused_imports)] // f64 math methods come from this trait in no_std builds
use num_traits::Float;

use super::{NeuralError, ParamStore, Params};

#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64, store: &ParamStore) -> Self {
        let m = store.ids().map(|id| alloc::vec![0.0; store.tensor(id).len()]).collect();
        let v = store.ids().map(|id| alloc::vec![0.0; store.tensor(id).len()]).collect();
        Self { lr, beta1, beta2, eps, m, v, t: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update using the gradients currently held in `store`.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<(), NeuralError> {
        if self.m.len() != store.len() {
            return Err(NeuralError::Shape { msg: "optimizer moment count" });
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (idx, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let tensor = store.tensor_mut(id);
            let n = tensor.len();
            if self.m[idx].len() != n {
                return Err(NeuralError::Shape { msg: "optimizer moment length" });
            }
            tensor.ensure_grad();
            let (data, grad) = tensor.data_and_grad_mut();
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for i in 0..n {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    /// Zeroes the moments and the step counter (used by warm starts).
    pub fn reset(&mut self) {
        self.t = 0;
        for m in &mut self.m {
            m.iter_mut().for_each(|x| *x = 0.0);
        }
        for v in &mut self.v {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>], u64) {
        (&self.m, &self.v, self.t)
    }

    pub fn restore_moments(&mut self, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>, t: u64) -> Result<(), NeuralError> {
        if m.len() != self.m.len() || v.len() != self.v.len() {
            return Err(NeuralError::Checkpoint { msg: "moment count mismatch" });
        }
        for (a, b) in m.iter().zip(&self.m) {
            if a.len() != b.len() {
                return Err(NeuralError::Checkpoint { msg: "moment length mismatch" });
            }
        }
        self.m = m;
        self.v = v;
        self.t = t;
        Ok(())
    }
}
