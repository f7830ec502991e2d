use crate::error::{Error, Result};
use crate::numerics::TensorSet;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Bias-corrected Adam over a `TensorSet`. Moment buffers mirror the
/// parameter layout captured at construction.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(params: &impl TensorSet) -> Self {
        let layout: Vec<usize> = params.tensors().iter().map(|(_, s)| s.len()).collect();
        Adam {
            m: layout.iter().map(|&n| vec![0.0; n]).collect(),
            v: layout.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step<P: TensorSet, G: TensorSet>(
        &mut self,
        params: &mut P,
        grads: &G,
        lr: f64,
    ) -> Result<()> {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        let g_tensors = grads.tensors();
        let mut p_tensors = params.tensors_mut();
        if g_tensors.len() != p_tensors.len() || g_tensors.len() != self.m.len() {
            return Err(Error::InvalidInput(
                "optimizer state does not mirror the parameter layout".into(),
            ));
        }
        for ((p, g), (m, v)) in p_tensors
            .iter_mut()
            .zip(g_tensors.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if p.1.len() != g.1.len() || p.1.len() != m.len() {
                return Err(Error::shape("adam step", p.1.len(), g.1.len()));
            }
            for i in 0..m.len() {
                let gi = g.1[i];
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gi;
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p.1[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

/// Scales the gradient set so its global L2 norm does not exceed `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut impl TensorSet, max_norm: f64) -> f64 {
    let norm = grads.squared_l2().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for (_, s) in grads.tensors_mut() {
            for g in s {
                *g *= scale;
            }
        }
    }
    norm
}
