//! Training with jointly learned item/category embedding tables. Histories
//! and targets arrive as item indices; event vectors are materialized from
//! the current tables each step and input gradients are scattered back into
//! the touched rows.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::Event;
use crate::error::{Error, Result};
use crate::model::{Model, Sample};
use crate::numerics::{Matrix, TensorSet, Vector};
use crate::trainer::{
    add_l2_gradient, batch_gradients, build_model, clamp_alpha, evaluate, Adam, EpochStats,
    TrainConfig, TrainOutcome,
};

/// Item/category identifier space shared by a dataset and its checkpoint.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Vocab {
    pub item_ids: Vec<String>,
    pub cat_ids: Vec<String>,
    /// Category index of each item.
    pub item_cat: Vec<u32>,
    /// Page-view counts per item (the popularity distribution).
    pub pv_counts: Vec<u64>,
}

impl Vocab {
    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn n_cats(&self) -> usize {
        self.cat_ids.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.item_cat.len() != self.item_ids.len() || self.pv_counts.len() != self.item_ids.len()
        {
            return Err(Error::Data("vocab arrays disagree in length".into()));
        }
        if let Some(&c) = self.item_cat.iter().find(|&&c| c as usize >= self.n_cats()) {
            return Err(Error::Data(format!("item category index {c} out of range")));
        }
        Ok(())
    }
}

/// Item representation = [item embedding row, category embedding row].
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTables {
    pub item: Matrix,
    pub cat: Matrix,
}

impl EmbeddingTables {
    pub fn init(vocab: &Vocab, item_dim: usize, cat_dim: usize, rng: &mut impl Rng) -> Self {
        let mut item = Matrix::zeros(vocab.n_items(), item_dim);
        let mut cat = Matrix::zeros(vocab.n_cats(), cat_dim);
        for v in item.as_mut_slice() {
            *v = rng.random_range(-0.1..0.1);
        }
        for v in cat.as_mut_slice() {
            *v = rng.random_range(-0.1..0.1);
        }
        EmbeddingTables { item, cat }
    }

    pub fn zeros_like(&self) -> Self {
        EmbeddingTables {
            item: Matrix::zeros(self.item.rows(), self.item.cols()),
            cat: Matrix::zeros(self.cat.rows(), self.cat.cols()),
        }
    }

    pub fn d(&self) -> usize {
        self.item.cols() + self.cat.cols()
    }

    pub fn embed(&self, vocab: &Vocab, item_idx: u32) -> Result<Vector> {
        let i = item_idx as usize;
        if i >= self.item.rows() {
            return Err(Error::InvalidInput(format!("item index {i} out of range")));
        }
        let c = vocab.item_cat[i] as usize;
        let mut data = Vec::with_capacity(self.d());
        data.extend_from_slice(self.item.row(i));
        data.extend_from_slice(self.cat.row(c));
        Ok(Vector::new(data)?)
    }

    fn scatter(&self, vocab: &Vocab, item_idx: u32, dx: &Vector, grads: &mut EmbeddingTables) {
        let i = item_idx as usize;
        let c = vocab.item_cat[i] as usize;
        let item_dim = self.item.cols();
        let gi = grads.item.row_mut(i);
        for (g, &v) in gi.iter_mut().zip(&dx.as_slice()[..item_dim]) {
            *g += v;
        }
        let gc = grads.cat.row_mut(c);
        for (g, &v) in gc.iter_mut().zip(&dx.as_slice()[item_dim..]) {
            *g += v;
        }
    }
}

impl TensorSet for EmbeddingTables {
    fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("item_embed", self.item.as_slice()),
            ("cat_embed", self.cat.as_slice()),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("item_embed", self.item.as_mut_slice()),
            ("cat_embed", self.cat.as_mut_slice()),
        ]
    }
}

/// An index-based sample; embeddings are looked up at train/eval time.
#[derive(Debug, Clone, PartialEq)]
pub struct IdSample {
    pub user_id: String,
    /// (item index, timestamp), time-ascending.
    pub history: Vec<(u32, i64)>,
    pub target: u32,
    pub label: u8,
}

pub(crate) fn materialize(
    s: &IdSample,
    vocab: &Vocab,
    tables: &EmbeddingTables,
) -> Result<Sample> {
    let history = s
        .history
        .iter()
        .map(|&(idx, ts)| Ok(Event::new(s.user_id.clone(), tables.embed(vocab, idx)?, ts)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Sample {
        user_id: s.user_id.clone(),
        history,
        target: tables.embed(vocab, s.target)?,
        label: s.label,
    })
}

/// Materializes id samples into dense samples with the given tables.
pub fn materialize_samples(
    samples: &[IdSample],
    vocab: &Vocab,
    tables: &EmbeddingTables,
) -> Result<Vec<Sample>> {
    samples
        .iter()
        .map(|s| materialize(s, vocab, tables))
        .collect()
}

/// Joint training of the model and the embedding tables.
pub fn train_embedded(
    cfg: &TrainConfig,
    vocab: &Vocab,
    train_set: &[IdSample],
    valid_set: &[IdSample],
    item_dim: usize,
    cat_dim: usize,
) -> Result<(TrainOutcome, EmbeddingTables)> {
    cfg.validate()?;
    vocab.validate()?;
    if item_dim + cat_dim != cfg.d {
        return Err(Error::InvalidConfig(format!(
            "d = {} must equal item_dim + cat_dim = {}",
            cfg.d,
            item_dim + cat_dim
        )));
    }
    if train_set.is_empty() || valid_set.is_empty() {
        return Err(Error::InvalidInput("empty training or validation set".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = build_model(cfg, &mut rng)?;
    let mut tables = EmbeddingTables::init(vocab, item_dim, cat_dim, &mut rng);
    let mut adam_model = Adam::new(&model);
    let mut adam_tables = Adam::new(&tables);

    let mut history = Vec::new();
    let mut best: Option<(Model, EmbeddingTables, usize, f64)> = None;
    let mut bad_epochs = 0usize;

    let mut indices: Vec<usize> = (0..train_set.len()).collect();
    use rand::seq::SliceRandom;
    for epoch in 1..=cfg.max_epochs {
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (step, batch_idx) in indices.chunks(cfg.batch_size).enumerate() {
            let ids: Vec<&IdSample> = batch_idx.iter().map(|&i| &train_set[i]).collect();
            let dense: Vec<Sample> = ids
                .iter()
                .map(|s| materialize(s, vocab, &tables))
                .collect::<Result<_>>()?;
            let refs: Vec<&Sample> = dense.iter().collect();
            let mut result = batch_gradients(&model, &refs, true).map_err(|e| match e {
                Error::NonFinite { context } => Error::Diverged {
                    epoch,
                    step,
                    reason: context,
                },
                other => other,
            })?;

            let mut tgrads = tables.zeros_like();
            let input_grads = result.input_grads.take().expect("input grads requested");
            for (s, ig) in ids.iter().zip(input_grads.iter()) {
                for (&(idx, _), dx) in s.history.iter().zip(ig.d_history.iter()) {
                    tables.scatter(vocab, idx, dx, &mut tgrads);
                }
                tables.scatter(vocab, s.target, &ig.d_target, &mut tgrads);
            }

            let batch_loss =
                result.bce + cfg.lambda * (model.squared_l2() + tables.squared_l2());
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    reason: "non-finite batch loss".into(),
                });
            }
            epoch_loss += batch_loss * ids.len() as f64;

            add_l2_gradient(&model, &mut result.grads, cfg.lambda);
            if cfg.lambda > 0.0 {
                let params = tables.tensors();
                let mut gs = tgrads.tensors_mut();
                for ((_, p), (_, g)) in params.iter().zip(gs.iter_mut()) {
                    for (pv, gv) in p.iter().zip(g.iter_mut()) {
                        *gv += 2.0 * cfg.lambda * pv;
                    }
                }
            }

            // One global-norm clip across model and table gradients.
            let norm = (result.grads.squared_l2() + tgrads.squared_l2()).sqrt();
            if norm > cfg.grad_clip {
                let scale = cfg.grad_clip / norm;
                for (_, s) in result.grads.tensors_mut() {
                    for g in s {
                        *g *= scale;
                    }
                }
                for (_, s) in tgrads.tensors_mut() {
                    for g in s {
                        *g *= scale;
                    }
                }
            }

            adam_model.step(&mut model, &result.grads, cfg.learning_rate)?;
            adam_tables.step(&mut tables, &tgrads, cfg.learning_rate)?;
            clamp_alpha(&mut model);
        }
        let train_loss = epoch_loss / train_set.len() as f64;

        let valid_dense = materialize_samples(valid_set, vocab, &tables)?;
        let report = evaluate(&model, &valid_dense)?;
        history.push(EpochStats {
            epoch,
            train_loss,
            valid_gauc: report.gauc,
            valid_ndcg3: report.ndcg3,
            valid_logloss: report.logloss,
        });

        let improved = best.as_ref().map_or(true, |(_, _, _, g)| report.gauc > *g);
        if improved {
            best = Some((model.clone(), tables.clone(), epoch, report.gauc));
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs > cfg.patience {
                break;
            }
        }
    }

    let (model, tables, best_epoch, best_gauc) = best.expect("at least one epoch ran");
    Ok((
        TrainOutcome {
            model,
            history,
            best_epoch,
            best_gauc,
        },
        tables,
    ))
}
