//! Versioned JSON checkpoint shared by the trainer, evaluator and the
//! serving loop: hyperparameters plus a name → {shape, row-major data}
//! tensor map, with embedding tables and vocabulary when present. Numbers
//! are written with full 64-bit round-trip precision.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{
    AblationFlags, Encoder, EncoderKind, GruEncoder, GruParams, SumConfig, SumEncoder, SumParams,
};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::{Matrix, TensorSet};
use crate::ranker::RankerParams;
use crate::trainer::{EmbeddingTables, Vocab};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Hyperparams {
    pub d: usize,
    pub k: usize,
    pub beta_write: f64,
    pub beta_read: f64,
    pub hidden: usize,
    pub encoder: EncoderKind,
    pub flags: AblationFlags,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cat_dim: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorDoc {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointDoc {
    pub format_version: u32,
    pub hyperparams: Hyperparams,
    pub tensors: BTreeMap<String, TensorDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<Vocab>,
}

/// A loaded checkpoint: the model plus embedding tables when the checkpoint
/// was trained with id-based items.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub hyperparams: Hyperparams,
    pub embeddings: Option<(Vocab, EmbeddingTables)>,
}

fn shape_map(model: &Model) -> BTreeMap<&'static str, Vec<usize>> {
    let mut shapes = BTreeMap::new();
    match &model.encoder {
        Encoder::Sum(e) => {
            let (d, k) = (e.cfg.d, e.cfg.k);
            shapes.insert("f_w", vec![e.cfg.n_content(), d]);
            shapes.insert("f_r", vec![d, d]);
            shapes.insert("f_r_legacy", vec![k, d]);
            shapes.insert("w_add", vec![d, 2 * d]);
            shapes.insert("b_add", vec![d]);
            shapes.insert("w_erase", vec![d, 2 * d]);
            shapes.insert("b_erase", vec![d]);
            shapes.insert("w_reset", vec![2 * d]);
            shapes.insert("b_reset", vec![1]);
            shapes.insert("w_add_ev", vec![d, d]);
            shapes.insert("b_add_ev", vec![d]);
            shapes.insert("w_erase_ev", vec![d, d]);
            shapes.insert("b_erase_ev", vec![d]);
            shapes.insert("alpha", vec![1]);
        }
        Encoder::Gru(e) => {
            let d = e.d;
            for name in ["w_keep", "w_reset", "w_cand"] {
                shapes.insert(name, vec![d, 2 * d]);
            }
            for name in ["b_keep", "b_reset", "b_cand"] {
                shapes.insert(name, vec![d]);
            }
        }
    }
    let (h, d2) = (model.ranker.hidden(), 2 * model.ranker.d());
    shapes.insert("ranker_w1", vec![h, d2]);
    shapes.insert("ranker_b1", vec![h]);
    shapes.insert("ranker_w2", vec![h]);
    shapes.insert("ranker_b2", vec![1]);
    shapes
}

/// Serializes a model (and optional embedding tables) to the checkpoint
/// document. Deterministic bytes for identical inputs.
pub fn checkpoint_to_json(
    model: &Model,
    kind: EncoderKind,
    embeddings: Option<(&Vocab, &EmbeddingTables)>,
) -> Result<String> {
    let (beta_write, beta_read, k, flags) = match &model.encoder {
        Encoder::Sum(e) => (e.cfg.beta_write, e.cfg.beta_read, e.cfg.k, e.cfg.flags),
        Encoder::Gru(_) => (1.0, 1.0, 1, AblationFlags::default()),
    };
    let hyperparams = Hyperparams {
        d: model.d(),
        k,
        beta_write,
        beta_read,
        hidden: model.ranker.hidden(),
        encoder: kind,
        flags,
        item_dim: embeddings.map(|(_, t)| t.item.cols()),
        cat_dim: embeddings.map(|(_, t)| t.cat.cols()),
    };

    let shapes = shape_map(model);
    let mut tensors = BTreeMap::new();
    for (name, data) in model.tensors() {
        let shape = shapes
            .get(name)
            .cloned()
            .ok_or_else(|| Error::Checkpoint(format!("no shape for tensor {name}")))?;
        tensors.insert(
            name.to_string(),
            TensorDoc {
                shape,
                data: data.to_vec(),
            },
        );
    }
    let mut vocab = None;
    if let Some((vc, tables)) = embeddings {
        tensors.insert(
            "item_embed".to_string(),
            TensorDoc {
                shape: vec![tables.item.rows(), tables.item.cols()],
                data: tables.item.as_slice().to_vec(),
            },
        );
        tensors.insert(
            "cat_embed".to_string(),
            TensorDoc {
                shape: vec![tables.cat.rows(), tables.cat.cols()],
                data: tables.cat.as_slice().to_vec(),
            },
        );
        vocab = Some(vc.clone());
    }

    let doc = CheckpointDoc {
        format_version: CHECKPOINT_FORMAT_VERSION,
        hyperparams,
        tensors,
        vocab,
    };
    Ok(serde_json::to_string(&doc)?)
}

fn take_tensor(
    tensors: &BTreeMap<String, TensorDoc>,
    name: &str,
    expect_len: usize,
) -> Result<Vec<f64>> {
    let doc = tensors
        .get(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
    let numel: usize = doc.shape.iter().product();
    if numel != doc.data.len() || doc.data.len() != expect_len {
        return Err(Error::Checkpoint(format!(
            "tensor {name}: shape {:?} / data {} / expected {expect_len}",
            doc.shape,
            doc.data.len()
        )));
    }
    if doc.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Checkpoint(format!("tensor {name} has non-finite values")));
    }
    Ok(doc.data.clone())
}

pub fn checkpoint_from_json(json: &str) -> Result<Checkpoint> {
    let doc: CheckpointDoc = serde_json::from_str(json)?;
    if doc.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format_version {}",
            doc.format_version
        )));
    }
    let hp = doc.hyperparams.clone();

    let encoder = match hp.encoder {
        EncoderKind::Gru => {
            let mut params = GruParams::zeros(hp.d);
            for (name, slice) in params.tensors_mut() {
                let data = take_tensor(&doc.tensors, name, slice.len())?;
                slice.copy_from_slice(&data);
            }
            Encoder::Gru(GruEncoder::new(hp.d, params)?)
        }
        EncoderKind::Sum | EncoderKind::Rum => {
            let flags = if hp.encoder == EncoderKind::Rum {
                AblationFlags::rum()
            } else {
                hp.flags
            };
            let mut cfg = SumConfig::new(hp.d, hp.k, flags);
            cfg.beta_write = hp.beta_write;
            cfg.beta_read = hp.beta_read;
            let mut params = SumParams::zeros(&cfg);
            for (name, slice) in params.tensors_mut() {
                let data = take_tensor(&doc.tensors, name, slice.len())?;
                slice.copy_from_slice(&data);
            }
            Encoder::Sum(SumEncoder::new(cfg, params)?)
        }
    };

    let mut ranker = RankerParams::zeros(hp.d, hp.hidden);
    for (name, slice) in ranker.tensors_mut() {
        let data = take_tensor(&doc.tensors, name, slice.len())?;
        slice.copy_from_slice(&data);
    }

    let embeddings = match (doc.vocab, hp.item_dim, hp.cat_dim) {
        (Some(vocab), Some(item_dim), Some(cat_dim)) => {
            vocab.validate()?;
            if item_dim + cat_dim != hp.d {
                return Err(Error::Checkpoint(
                    "item_dim + cat_dim must equal d".into(),
                ));
            }
            let item_data =
                take_tensor(&doc.tensors, "item_embed", vocab.n_items() * item_dim)?;
            let cat_data = take_tensor(&doc.tensors, "cat_embed", vocab.n_cats() * cat_dim)?;
            let tables = EmbeddingTables {
                item: Matrix::new(vocab.n_items(), item_dim, item_data)?,
                cat: Matrix::new(vocab.n_cats(), cat_dim, cat_data)?,
            };
            Some((vocab, tables))
        }
        (None, None, None) => None,
        _ => {
            return Err(Error::Checkpoint(
                "vocab and embedding dims must be present together".into(),
            ))
        }
    };

    Ok(Checkpoint {
        model: Model { encoder, ranker },
        hyperparams: hp,
        embeddings,
    })
}

pub fn save_checkpoint(
    path: &Path,
    model: &Model,
    kind: EncoderKind,
    embeddings: Option<(&Vocab, &EmbeddingTables)>,
) -> Result<()> {
    std::fs::write(path, checkpoint_to_json(model, kind, embeddings)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let json = std::fs::read_to_string(path)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    checkpoint_from_json(&json)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::{build_model, TrainConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tensors_equal(a: &Model, b: &Model) -> bool {
        a.tensors()
            .iter()
            .zip(b.tensors())
            .all(|((na, sa), (nb, sb))| na == &nb && sa == &sb)
    }

    #[test]
    fn round_trip_is_bit_identical_for_each_encoder_kind() {
        for kind in [EncoderKind::Sum, EncoderKind::Rum, EncoderKind::Gru] {
            let cfg = TrainConfig {
                d: 5,
                k: 3,
                hidden: 7,
                encoder_kind: kind,
                beta_write: 1.3,
                beta_read: 0.7,
                ..TrainConfig::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let model = build_model(&cfg, &mut rng).unwrap();
            let json = checkpoint_to_json(&model, kind, None).unwrap();
            let loaded = checkpoint_from_json(&json).unwrap();
            assert!(tensors_equal(&model, &loaded.model), "{kind:?}");
            // serializing again reproduces identical bytes
            let json2 = checkpoint_to_json(&loaded.model, kind, None).unwrap();
            assert_eq!(json, json2);
        }
    }

    #[test]
    fn round_trip_with_embedding_tables() {
        let vocab = Vocab {
            item_ids: vec!["a".into(), "b".into(), "c".into()],
            cat_ids: vec!["x".into(), "y".into()],
            item_cat: vec![0, 1, 0],
            pv_counts: vec![5, 2, 9],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tables = EmbeddingTables::init(&vocab, 3, 2, &mut rng);
        let cfg = TrainConfig {
            d: 5,
            k: 3,
            hidden: 4,
            ..TrainConfig::default()
        };
        let model = build_model(&cfg, &mut rng).unwrap();
        let json = checkpoint_to_json(&model, EncoderKind::Sum, Some((&vocab, &tables))).unwrap();
        let loaded = checkpoint_from_json(&json).unwrap();
        let (lv, lt) = loaded.embeddings.unwrap();
        assert_eq!(lv, vocab);
        assert_eq!(lt, tables);
    }

    #[test]
    fn rejects_bad_documents() {
        assert!(checkpoint_from_json("{}").is_err());
        assert!(checkpoint_from_json("not json").is_err());

        // tamper with a tensor shape
        let cfg = TrainConfig {
            d: 4,
            k: 3,
            hidden: 4,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = build_model(&cfg, &mut rng).unwrap();
        let json = checkpoint_to_json(&model, EncoderKind::Sum, None).unwrap();
        let mut doc: CheckpointDoc = serde_json::from_str(&json).unwrap();
        doc.tensors.get_mut("f_w").unwrap().data.pop();
        let bad = serde_json::to_string(&doc).unwrap();
        assert!(checkpoint_from_json(&bad).is_err());

        // non-finite value
        let mut doc: CheckpointDoc = serde_json::from_str(&json).unwrap();
        doc.tensors.get_mut("alpha").unwrap().data[0] = -1.0;
        let bad = serde_json::to_string(&doc).unwrap();
        assert!(checkpoint_from_json(&bad).is_err());
        let _ = rng.random_range(0..2);
    }
}
