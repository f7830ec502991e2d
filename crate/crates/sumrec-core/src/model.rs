//! Encoder + ranker composition and backpropagation through the unrolled
//! write sequence.

use crate::encoder::{Encoder, EncoderGrads, Event, ReadCache, StepCache};
use crate::error::{Error, Result};
use crate::numerics::{TensorSet, Vector};
use crate::ranker::{score_backward, score_with_cache, RankerParams, ScoreCache};

/// One training/evaluation instance.
#[derive(Debug, Clone)]
pub struct Sample {
    pub user_id: String,
    /// Time-ascending events, already truncated to the configured maximum.
    pub history: Vec<Event>,
    pub target: Vector,
    pub label: u8,
}

impl Sample {
    pub fn validate(&self, d: usize, max_len: usize) -> Result<()> {
        if self.label > 1 {
            return Err(Error::InvalidInput(format!(
                "label {} is not binary",
                self.label
            )));
        }
        if self.history.len() > max_len {
            return Err(Error::InvalidInput(format!(
                "history of {} exceeds max_len {max_len}",
                self.history.len()
            )));
        }
        if self.target.len() != d || !self.target.is_finite() {
            return Err(Error::InvalidInput("bad target embedding".into()));
        }
        let mut last_ts = i64::MIN;
        for (i, e) in self.history.iter().enumerate() {
            if e.x.len() != d || !e.x.is_finite() {
                return Err(Error::InvalidInput(format!("bad event embedding at {i}")));
            }
            if e.timestamp < last_ts {
                return Err(Error::InvalidInput(format!(
                    "history not time-sorted at index {i}"
                )));
            }
            last_ts = e.timestamp;
        }
        Ok(())
    }
}

/// The full trainable model.
#[derive(Debug, Clone)]
pub struct Model {
    pub encoder: Encoder,
    pub ranker: RankerParams,
}

/// Gradient accumulator mirroring `Model`'s tensor layout.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub encoder: EncoderGrads,
    pub ranker: RankerParams,
}

impl Model {
    pub fn zero_grads(&self) -> ModelGrads {
        ModelGrads {
            encoder: self.encoder.zero_grads(),
            ranker: RankerParams::zeros(self.ranker.d(), self.ranker.hidden()),
        }
    }

    pub fn d(&self) -> usize {
        self.encoder.d()
    }

    pub fn k(&self) -> usize {
        self.encoder.k()
    }
}

impl TensorSet for Model {
    fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        let mut t = self.encoder.tensors();
        t.extend(self.ranker.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.ranker.tensors_mut());
        t
    }
}

impl TensorSet for ModelGrads {
    fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        let mut t = self.encoder.tensors();
        t.extend(self.ranker.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.ranker.tensors_mut());
        t
    }
}

/// Attention traces recorded while replaying a sample, for analytics.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub write_attn: Vec<Vector>,
    pub read_attn: Vector,
    pub y_hat: f64,
}

/// Everything retained by a cached forward pass for the backward sweep.
#[derive(Debug)]
pub struct SeqCache {
    pub steps: Vec<StepCache>,
    pub read: ReadCache,
    pub score: ScoreCache,
}

impl SeqCache {
    pub fn y_hat(&self) -> f64 {
        self.score.y_hat
    }
}

/// Gradients w.r.t. a sample's inputs, for jointly trained embeddings.
#[derive(Debug, Clone)]
pub struct InputGrads {
    pub d_history: Vec<Vector>,
    pub d_target: Vector,
}

/// Replays every write from a zero state, reads with the target item and
/// scores. Numeric failures carry the offending step index.
pub fn forward_sequence(model: &Model, sample: &Sample) -> Result<(f64, ForwardTrace)> {
    let mut state = model.encoder.init_state();
    let mut write_attn = Vec::with_capacity(sample.history.len());
    for (step, event) in sample.history.iter().enumerate() {
        let (next, z) = model
            .encoder
            .write(&state, &event.x)
            .map_err(|e| at_step(step, e))?;
        write_attn.push(z);
        state = next;
    }
    let (u, read_attn) = model.encoder.read(&state, &sample.target)?;
    let y_hat = crate::ranker::score(&model.ranker, &u, &sample.target)?;
    Ok((
        y_hat,
        ForwardTrace {
            write_attn,
            read_attn,
            y_hat,
        },
    ))
}

/// Forward pass retaining per-step caches for backpropagation.
pub fn forward_sequence_cached(model: &Model, sample: &Sample) -> Result<SeqCache> {
    let mut state = model.encoder.init_state();
    let mut steps = Vec::with_capacity(sample.history.len());
    for (step, event) in sample.history.iter().enumerate() {
        let (next, cache) = model
            .encoder
            .write_with_cache(&state, &event.x)
            .map_err(|e| at_step(step, e))?;
        steps.push(cache);
        state = next;
    }
    let (u, read) = model.encoder.read_with_cache(&state, &sample.target)?;
    let score = score_with_cache(&model.ranker, &u, &sample.target)?;
    Ok(SeqCache { steps, read, score })
}

/// Backpropagates through ranker, read and the unrolled writes.
/// `d_logit` seeds the chain (for mean BCE it is (ŷ − y)/N). Parameter
/// gradients accumulate into `grads`; input gradients are returned when
/// requested (used when embeddings are trained jointly).
pub fn backward_sequence(
    model: &Model,
    cache: &SeqCache,
    d_logit: f64,
    grads: &mut ModelGrads,
    want_input_grads: bool,
) -> Result<Option<InputGrads>> {
    let (du, dv_ranker) = score_backward(&model.ranker, &cache.score, d_logit, &mut grads.ranker)?;
    let (mut d_state, dv_read) =
        model
            .encoder
            .read_backward(&cache.read, &du, &mut grads.encoder, want_input_grads)?;

    let mut input = want_input_grads.then(|| InputGrads {
        d_history: vec![Vector::zeros(model.d()); cache.steps.len()],
        d_target: {
            let mut dv = dv_ranker;
            if let Some(extra) = dv_read {
                dv.axpy(1.0, &extra).expect("dim");
            }
            dv
        },
    });

    for t in (0..cache.steps.len()).rev() {
        let (d_prev_state, d_inputs) = model
            .encoder
            .write_backward(&cache.steps[t], &d_state, &mut grads.encoder, want_input_grads)
            .map_err(|e| at_step(t, e))?;
        d_state = d_prev_state;
        if let (Some(acc), Some((dx, dprev))) = (input.as_mut(), d_inputs) {
            acc.d_history[t].axpy(1.0, &dx).expect("dim");
            if let (Some(dprev), true) = (dprev, t > 0) {
                acc.d_history[t - 1].axpy(1.0, &dprev).expect("dim");
            }
        }
    }
    Ok(input)
}

fn at_step(step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { context } => Error::Numeric {
            step,
            reason: context,
        },
        other => other,
    }
}
