//! Mini-batch training of encoder + ranker by backpropagation through the
//! unrolled write sequence, with Adam, gradient clipping, and early stopping
//! on validation group AUC.

mod adam;
mod embedded;


pub use adam::{clip_global_norm, Adam, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use embedded::{materialize_samples, train_embedded, EmbeddingTables, IdSample, Vocab};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::encoder::{
    AblationFlags, Encoder, EncoderKind, GruEncoder, SumConfig, SumEncoder, ALPHA_MAX, ALPHA_MIN,
};
use crate::error::{Error, Result};
use crate::metrics::{group_auc, log_loss, ndcg_at_k, ScoredGroup};
use crate::model::{
    backward_sequence, forward_sequence, forward_sequence_cached, InputGrads, Model, ModelGrads,
    Sample,
};
use crate::numerics::TensorSet;
use crate::ranker::RankerParams;

/// Samples per parallel gradient chunk. Chunks are reduced in a fixed
/// order, keeping training bit-deterministic under a fixed seed.
const GRAD_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Number of non-improving validation epochs tolerated before stopping.
    pub patience: usize,
    pub d: usize,
    pub k: usize,
    pub beta_write: f64,
    pub beta_read: f64,
    pub hidden: usize,
    pub max_len: usize,
    pub encoder_kind: EncoderKind,
    pub flags: AblationFlags,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-4,
            lambda: 0.0,
            batch_size: 256,
            max_epochs: 20,
            patience: 2,
            d: 64,
            k: 5,
            beta_write: 1.0,
            beta_read: 1.0,
            hidden: 64,
            max_len: 100,
            encoder_kind: EncoderKind::Sum,
            flags: AblationFlags::default(),
            grad_clip: 5.0,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::InvalidConfig("lambda must be >= 0".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::InvalidConfig(
                "batch_size and max_epochs must be >= 1".into(),
            ));
        }
        if self.d == 0 || self.k == 0 || self.hidden == 0 || self.max_len == 0 {
            return Err(Error::InvalidConfig("dimensions must be >= 1".into()));
        }
        if self.grad_clip <= 0.0 {
            return Err(Error::InvalidConfig("grad_clip must be > 0".into()));
        }
        Ok(())
    }

    /// Flags actually used, honoring the encoder-kind presets.
    pub fn effective_flags(&self) -> AblationFlags {
        match self.encoder_kind {
            EncoderKind::Rum => AblationFlags::rum(),
            _ => self.flags,
        }
    }
}

/// Builds a freshly initialized model for the configuration.
pub fn build_model(cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Model> {
    cfg.validate()?;
    let encoder = match cfg.encoder_kind {
        EncoderKind::Gru => Encoder::Gru(GruEncoder::init(cfg.d, rng)?),
        _ => {
            let mut sum_cfg = SumConfig::new(cfg.d, cfg.k, cfg.effective_flags());
            sum_cfg.beta_write = cfg.beta_write;
            sum_cfg.beta_read = cfg.beta_read;
            Encoder::Sum(SumEncoder::init(sum_cfg, rng)?)
        }
    };
    let ranker = RankerParams::init(cfg.d, cfg.hidden, rng);
    Ok(Model { encoder, ranker })
}

fn add_grads(dst: &mut ModelGrads, src: &ModelGrads) {
    let mut d = dst.tensors_mut();
    let s = src.tensors();
    for ((_, a), (_, b)) in d.iter_mut().zip(s.iter()) {
        for (x, y) in a.iter_mut().zip(b.iter()) {
            *x += y;
        }
    }
}

pub(crate) struct BatchResult {
    pub grads: ModelGrads,
    /// Mean clipped BCE over the batch (no regularizer).
    pub bce: f64,
    pub input_grads: Option<Vec<InputGrads>>,
}

/// Mean-BCE gradients over a batch, evaluated in parallel chunks and
/// reduced in fixed chunk order for determinism.
pub(crate) fn batch_gradients(
    model: &Model,
    batch: &[&Sample],
    want_input_grads: bool,
) -> Result<BatchResult> {
    let n = batch.len() as f64;
    let chunks: Vec<&[&Sample]> = batch.chunks(GRAD_CHUNK).collect();
    let partials: Vec<Result<(ModelGrads, f64, Vec<InputGrads>)>> = chunks
        .par_iter()
        .map(|chunk| {
            let mut grads = model.zero_grads();
            let mut loss_sum = 0.0;
            let mut inputs = Vec::new();
            for sample in *chunk {
                let cache = forward_sequence_cached(model, sample)?;
                let y_hat = cache.y_hat();
                if !y_hat.is_finite() {
                    return Err(Error::NonFinite {
                        context: format!("prediction for user {}", sample.user_id),
                    });
                }
                let p = y_hat.clamp(crate::ranker::PRED_CLIP, 1.0 - crate::ranker::PRED_CLIP);
                loss_sum -= if sample.label == 1 {
                    p.ln()
                } else {
                    (1.0 - p).ln()
                };
                let d_logit = (y_hat - sample.label as f64) / n;
                let ig = backward_sequence(model, &cache, d_logit, &mut grads, want_input_grads)?;
                if let Some(ig) = ig {
                    inputs.push(ig);
                }
            }
            Ok((grads, loss_sum, inputs))
        })
        .collect();

    let mut grads = model.zero_grads();
    let mut loss_sum = 0.0;
    let mut input_grads = want_input_grads.then(Vec::new);
    for partial in partials {
        let (g, l, inputs) = partial?;
        add_grads(&mut grads, &g);
        loss_sum += l;
        if let Some(acc) = input_grads.as_mut() {
            acc.extend(inputs);
        }
    }
    Ok(BatchResult {
        grads,
        bce: loss_sum / n,
        input_grads,
    })
}

/// Adds the L2 regularizer gradient 2λθ for every trainable tensor.
pub(crate) fn add_l2_gradient(model: &Model, grads: &mut ModelGrads, lambda: f64) {
    if lambda == 0.0 {
        return;
    }
    let params = model.tensors();
    let mut gs = grads.tensors_mut();
    for ((_, p), (_, g)) in params.iter().zip(gs.iter_mut()) {
        for (pv, gv) in p.iter().zip(g.iter_mut()) {
            *gv += 2.0 * lambda * pv;
        }
    }
}

pub(crate) fn clamp_alpha(model: &mut Model) {
    if let Encoder::Sum(e) = &mut model.encoder {
        e.params.alpha = e.params.alpha.clamp(ALPHA_MIN, ALPHA_MAX);
    }
}

/// Scores every sample and groups (score, label) pairs per user.
pub fn score_dataset(model: &Model, samples: &[Sample]) -> Result<Vec<ScoredGroup>> {
    let scored: Vec<Result<(String, f64, u8)>> = samples
        .par_iter()
        .map(|s| {
            let (y, _) = forward_sequence(model, s)?;
            Ok((s.user_id.clone(), y, s.label))
        })
        .collect();
    let mut by_user: BTreeMap<String, Vec<(f64, u8)>> = BTreeMap::new();
    for r in scored {
        let (user, score, label) = r?;
        by_user.entry(user).or_default().push((score, label));
    }
    Ok(by_user
        .into_iter()
        .map(|(user_id, items)| ScoredGroup { user_id, items })
        .collect())
}

/// gAUC, NDCG@3 and LogLoss for a dataset.
pub fn evaluate(model: &Model, samples: &[Sample]) -> Result<EvalReport> {
    let groups = score_dataset(model, samples)?;
    let pairs: Vec<(f64, u8)> = groups.iter().flat_map(|g| g.items.clone()).collect();
    Ok(EvalReport {
        gauc: group_auc(&groups)?,
        ndcg3: ndcg_at_k(&groups, 3)?,
        logloss: log_loss(&pairs)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub gauc: f64,
    pub ndcg3: f64,
    pub logloss: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_gauc: f64,
    pub valid_ndcg3: f64,
    pub valid_logloss: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_gauc: f64,
}

/// Epochs of shuffled mini-batches with per-epoch validation; keeps the
/// best-gAUC model and stops after `patience` non-improving epochs.
/// Deterministic given the config seed.
pub fn train(cfg: &TrainConfig, train_set: &[Sample], valid_set: &[Sample]) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || valid_set.is_empty() {
        return Err(Error::InvalidInput("empty training or validation set".into()));
    }
    for s in train_set.iter().chain(valid_set) {
        s.validate(cfg.d, cfg.max_len)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = build_model(cfg, &mut rng)?;
    let mut adam = Adam::new(&model);

    let mut history = Vec::new();
    let mut best: Option<(Model, usize, f64)> = None;
    let mut bad_epochs = 0usize;

    let mut indices: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (step, batch_idx) in indices.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Sample> = batch_idx.iter().map(|&i| &train_set[i]).collect();
            let mut result = batch_gradients(&model, &batch, false).map_err(|e| match e {
                Error::NonFinite { context } => Error::Diverged {
                    epoch,
                    step,
                    reason: context,
                },
                other => other,
            })?;
            let batch_loss = result.bce + cfg.lambda * model.squared_l2();
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    reason: "non-finite batch loss".into(),
                });
            }
            epoch_loss += batch_loss * batch.len() as f64;
            add_l2_gradient(&model, &mut result.grads, cfg.lambda);
            clip_global_norm(&mut result.grads, cfg.grad_clip);
            adam.step(&mut model, &result.grads, cfg.learning_rate)?;
            clamp_alpha(&mut model);
        }
        let train_loss = epoch_loss / train_set.len() as f64;

        let report = evaluate(&model, valid_set)?;
        history.push(EpochStats {
            epoch,
            train_loss,
            valid_gauc: report.gauc,
            valid_ndcg3: report.ndcg3,
            valid_logloss: report.logloss,
        });

        let improved = best.as_ref().map_or(true, |(_, _, g)| report.gauc > *g);
        if improved {
            best = Some((model.clone(), epoch, report.gauc));
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs > cfg.patience {
                break;
            }
        }
    }

    let (model, best_epoch, best_gauc) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        best_gauc,
    })
}

/// Writes the per-epoch training history in the documented CSV schema.
pub fn write_history_csv(path: &std::path::Path, history: &[EpochStats]) -> Result<()> {
    let mut out = String::from("epoch,train_loss,valid_gauc,valid_ndcg3,valid_logloss\n");
    for h in history {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            h.epoch, h.train_loss, h.valid_gauc, h.valid_ndcg3, h.valid_logloss
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}
