//! The multi-channel user encoder: a matrix of per-interest channel states
//! updated by erase-and-add writes with interest- and instance-level
//! attention, a local-proximity debuff and a highway channel, read back by
//! candidate-conditioned attention. A GRU cell is provided as the reference
//! single-vector encoder, and the classic memory-network configuration is
//! reachable through the ablation flags. All operations follow one
//! incremental contract: init → write(event) → read(item).

mod analytics;
mod gru;
mod sum;

#[cfg(test)]
mod tests;

pub use analytics::{channel_utilization, readout_attention_profile};
pub use gru::{GruCache, GruEncoder, GruParams};
pub use sum::{
    ReadCache, SumConfig, SumEncoder, SumParams, WriteCache, ALPHA_INIT, ALPHA_MAX, ALPHA_MIN,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, TensorSet, Vector};

/// One timestamped user behavior with its dense embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub user_id: String,
    pub x: Vector,
    pub timestamp: i64,
}

impl Event {
    pub fn new(user_id: impl Into<String>, x: Vector, timestamp: i64) -> Self {
        Event {
            user_id: user_id.into(),
            x,
            timestamp,
        }
    }
}

/// A user's channel matrix plus the previous event embedding and a write
/// counter; the unit of incremental update. Channel k occupies row k; when
/// the highway channel is enabled it is the last row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryState {
    pub channels: Matrix,
    pub prev_x: Option<Vector>,
    pub steps: u64,
}

impl MemoryState {
    pub fn zeros(k: usize, d: usize) -> Self {
        MemoryState {
            channels: Matrix::zeros(k, d),
            prev_x: None,
            steps: 0,
        }
    }

    pub fn k(&self) -> usize {
        self.channels.rows()
    }

    pub fn d(&self) -> usize {
        self.channels.cols()
    }

    pub fn validate(&self, k: usize, d: usize) -> Result<()> {
        if self.k() != k || self.d() != d {
            return Err(Error::shape(
                "memory state",
                format!("{k}x{d}"),
                format!("{}x{}", self.k(), self.d()),
            ));
        }
        if !self.channels.is_finite() {
            return Err(Error::NonFinite {
                context: "memory state channels".into(),
            });
        }
        if let Some(px) = &self.prev_x {
            if px.len() != d || !px.is_finite() {
                return Err(Error::InvalidInput("bad prev_x in memory state".into()));
            }
        }
        if (self.steps > 0) != self.prev_x.is_some() {
            return Err(Error::InvalidInput(
                "prev_x must be present exactly when steps > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Switches for disabling individual encoder components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    pub instance_level_attention: bool,
    pub local_proximity_debuff: bool,
    pub highway_channel: bool,
    pub legacy_read: bool,
}

impl AblationFlags {
    /// The full model: every component on, transform-based read.
    pub fn full() -> Self {
        AblationFlags {
            instance_level_attention: true,
            local_proximity_debuff: true,
            highway_channel: true,
            legacy_read: true,
        }
    }

    /// Classic user-memory-network configuration: event-only updating
    /// vectors, no debuff, no highway, head-table read.
    pub fn rum() -> Self {
        AblationFlags {
            instance_level_attention: false,
            local_proximity_debuff: false,
            highway_channel: false,
            legacy_read: true,
        }
    }
}

impl Default for AblationFlags {
    fn default() -> Self {
        let mut f = AblationFlags::full();
        f.legacy_read = false;
        f
    }
}

/// Which encoder architecture a model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Sum,
    Rum,
    Gru,
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(EncoderKind::Sum),
            "rum" => Ok(EncoderKind::Rum),
            "gru" => Ok(EncoderKind::Gru),
            other => Err(Error::InvalidConfig(format!("unknown encoder '{other}'"))),
        }
    }
}

/// Per-step cache retained for backpropagation through time.
#[derive(Debug, Clone)]
pub enum StepCache {
    Sum(WriteCache),
    Gru(GruCache),
}

/// A user encoder behind the shared incremental contract.
#[derive(Debug, Clone)]
pub enum Encoder {
    Sum(SumEncoder),
    Gru(GruEncoder),
}

/// Gradient accumulator mirroring an encoder's parameters.
#[derive(Debug, Clone)]
pub enum EncoderGrads {
    Sum(SumParams),
    Gru(GruParams),
}

impl Encoder {
    pub fn d(&self) -> usize {
        match self {
            Encoder::Sum(e) => e.cfg.d,
            Encoder::Gru(e) => e.d,
        }
    }

    pub fn k(&self) -> usize {
        match self {
            Encoder::Sum(e) => e.cfg.k,
            Encoder::Gru(_) => 1,
        }
    }

    pub fn init_state(&self) -> MemoryState {
        MemoryState::zeros(self.k(), self.d())
    }

    pub fn zero_grads(&self) -> EncoderGrads {
        match self {
            Encoder::Sum(e) => EncoderGrads::Sum(SumParams::zeros(&e.cfg)),
            Encoder::Gru(e) => EncoderGrads::Gru(GruParams::zeros(e.d)),
        }
    }

    /// Applies one event. Pure in (params, state, x); returns the new state
    /// and the write-attention vector (length K; a GRU reports [1.0]).
    pub fn write(&self, state: &MemoryState, x: &Vector) -> Result<(MemoryState, Vector)> {
        let (next, cache) = self.write_with_cache(state, x)?;
        let z = match &cache {
            StepCache::Sum(c) => c.z.clone(),
            StepCache::Gru(_) => Vector::from_raw(vec![1.0]),
        };
        Ok((next, z))
    }

    pub fn write_with_cache(
        &self,
        state: &MemoryState,
        x: &Vector,
    ) -> Result<(MemoryState, StepCache)> {
        match self {
            Encoder::Sum(e) => {
                let (next, cache) = e.write(state, x)?;
                Ok((next, StepCache::Sum(cache)))
            }
            Encoder::Gru(e) => {
                let (next, cache) = e.write(state, x)?;
                Ok((next, StepCache::Gru(cache)))
            }
        }
    }

    /// Merges the state into one user vector conditioned on the candidate.
    /// Returns (u, read-attention vector over channels).
    pub fn read(&self, state: &MemoryState, v: &Vector) -> Result<(Vector, Vector)> {
        match self {
            Encoder::Sum(e) => {
                let (u, cache) = e.read(state, v)?;
                Ok((u, cache.z))
            }
            Encoder::Gru(e) => Ok((e.read(state)?, Vector::from_raw(vec![1.0]))),
        }
    }

    pub fn read_with_cache(&self, state: &MemoryState, v: &Vector) -> Result<(Vector, ReadCache)> {
        match self {
            Encoder::Sum(e) => e.read(state, v),
            Encoder::Gru(e) => {
                // Uniform cache shape keeps sequence backward simple; a GRU
                // read is the identity on its single channel.
                let u = e.read(state)?;
                Ok((
                    u,
                    ReadCache {
                        v: v.clone(),
                        h: state.channels.clone(),
                        q: None,
                        z: Vector::from_raw(vec![1.0]),
                    },
                ))
            }
        }
    }

    /// Backpropagates through one write. `d_next` is the gradient w.r.t. the
    /// written state; returns the gradient w.r.t. the previous state and,
    /// when `want_input_grads`, the gradients w.r.t. (x, prev_x).
    pub fn write_backward(
        &self,
        cache: &StepCache,
        d_next: &Matrix,
        grads: &mut EncoderGrads,
        want_input_grads: bool,
    ) -> Result<(Matrix, Option<(Vector, Option<Vector>)>)> {
        match (self, cache, grads) {
            (Encoder::Sum(e), StepCache::Sum(c), EncoderGrads::Sum(g)) => {
                e.write_backward(c, d_next, g, want_input_grads)
            }
            (Encoder::Gru(e), StepCache::Gru(c), EncoderGrads::Gru(g)) => {
                let (dh, dx) = e.write_backward(c, d_next, g, want_input_grads)?;
                Ok((dh, dx.map(|v| (v, None))))
            }
            _ => Err(Error::InvalidInput(
                "mismatched encoder / cache / gradient kinds".into(),
            )),
        }
    }

    /// Backpropagates through the read. Returns the gradient w.r.t. the
    /// state and, when requested, w.r.t. the candidate vector.
    pub fn read_backward(
        &self,
        cache: &ReadCache,
        du: &Vector,
        grads: &mut EncoderGrads,
        want_input_grads: bool,
    ) -> Result<(Matrix, Option<Vector>)> {
        match (self, grads) {
            (Encoder::Sum(e), EncoderGrads::Sum(g)) => {
                e.read_backward(cache, du, g, want_input_grads)
            }
            (Encoder::Gru(_), EncoderGrads::Gru(_)) => {
                let mut dh = Matrix::zeros(1, du.len());
                dh.row_mut(0).copy_from_slice(du.as_slice());
                let dv = want_input_grads.then(|| Vector::zeros(cache.v.len()));
                Ok((dh, dv))
            }
            _ => Err(Error::InvalidInput(
                "mismatched encoder / gradient kinds".into(),
            )),
        }
    }
}

impl TensorSet for Encoder {
    fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        match self {
            Encoder::Sum(e) => e.params.tensors(),
            Encoder::Gru(e) => e.params.tensors(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        match self {
            Encoder::Sum(e) => e.params.tensors_mut(),
            Encoder::Gru(e) => e.params.tensors_mut(),
        }
    }
}

impl TensorSet for EncoderGrads {
    fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        match self {
            EncoderGrads::Sum(g) => g.tensors(),
            EncoderGrads::Gru(g) => g.tensors(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        match self {
            EncoderGrads::Sum(g) => g.tensors_mut(),
            EncoderGrads::Gru(g) => g.tensors_mut(),
        }
    }
}
