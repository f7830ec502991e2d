use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;

use sumrec_core::checkpoint::save_checkpoint;
use sumrec_core::trainer::{train, train_embedded, write_history_csv, TrainConfig};

use crate::common::{
    config_echo, ensure_dir, load_data_dir, LoadedData, ModelFlags, Outputs, RunManifest,
};

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    /// Dataset directory (from gen-data or ingest-taobao).
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoint, history and manifest.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_train(args: &TrainArgs, outputs: &mut Outputs) -> Result<()> {
    let data = load_data_dir(&args.data)?;
    let mut cfg = args.model.train_config()?;

    // Id datasets train embedding tables jointly; their event dimension is
    // item_dim + cat_dim from the configuration.
    let embed_dims = if data.is_dense() {
        None
    } else {
        let file = args.model.config_file()?;
        let item_dim = file.get_usize("item_dim")?.unwrap_or(64);
        let cat_dim = file.get_usize("cat_dim")?.unwrap_or(16);
        let d = item_dim + cat_dim;
        if args.model.d.is_some() && args.model.d != Some(d) {
            bail!("--d must equal item_dim + cat_dim = {d} for id datasets");
        }
        cfg.d = d;
        Some((item_dim, cat_dim))
    };
    if let LoadedData::Dense { d, .. } = &data {
        if args.model.d.is_none() && args.model.config.is_none() {
            cfg.d = *d;
        } else if cfg.d != *d {
            bail!("dataset dimension {d} does not match configured d = {}", cfg.d);
        }
    }

    let (mut manifest, started) = RunManifest::new("train", cfg.seed, config_echo(&cfg));
    ensure_dir(&args.out)?;

    let (outcome, embeddings) = match &data {
        LoadedData::Dense {
            train: tr, valid, ..
        } => (train(&cfg, tr, valid)?, None),
        LoadedData::Ids {
            train: tr,
            valid,
            vocab,
            ..
        } => {
            let (item_dim, cat_dim) = embed_dims.expect("id dataset dims");
            let (outcome, tables) = train_embedded(&cfg, vocab, tr, valid, item_dim, cat_dim)?;
            (outcome, Some((vocab.clone(), tables)))
        }
    };

    let ck_path = args.out.join("checkpoint.json");
    save_checkpoint(
        &ck_path,
        &outcome.model,
        cfg.encoder_kind,
        embeddings.as_ref().map(|(v, t)| (v, t)),
    )
    .with_context(|| format!("writing {}", ck_path.display()))?;
    outputs.record(&ck_path);

    let hist_path = args.out.join("history.csv");
    write_history_csv(&hist_path, &outcome.history)?;
    outputs.record(&hist_path);

    let last = outcome.history.last().expect("at least one epoch");
    manifest.checkpoint = Some(ck_path.display().to_string());
    manifest
        .metrics
        .insert("best_valid_gauc".into(), outcome.best_gauc);
    manifest
        .metrics
        .insert("best_epoch".into(), outcome.best_epoch as f64);
    manifest
        .metrics
        .insert("epochs_run".into(), outcome.history.len() as f64);
    manifest
        .metrics
        .insert("final_train_loss".into(), last.train_loss);

    println!(
        "trained {:?} for {} epochs; best valid gAUC {:.4} at epoch {}; checkpoint {}",
        cfg.encoder_kind,
        outcome.history.len(),
        outcome.best_gauc,
        outcome.best_epoch,
        ck_path.display()
    );
    manifest.write(&args.out, started, outputs)?;
    Ok(())
}

/// Shared by ablate / sweep-k: trains one configuration and returns test
/// metrics (gauc, ndcg3, logloss).
pub fn train_and_test(
    cfg: &TrainConfig,
    data: &LoadedData,
) -> Result<(f64, f64, f64)> {
    use sumrec_core::trainer::evaluate;
    match data {
        LoadedData::Dense {
            train: tr,
            valid,
            test,
            ..
        } => {
            let outcome = train(cfg, tr, valid)?;
            let report = evaluate(&outcome.model, test)?;
            Ok((report.gauc, report.ndcg3, report.logloss))
        }
        LoadedData::Ids { .. } => {
            bail!("ablate / sweep-k run on dense datasets; train handles id datasets")
        }
    }
}
