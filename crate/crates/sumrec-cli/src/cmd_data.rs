use std::path::PathBuf;

use anyhow::Result;
use clap::Args;

use sumrec_core::data::{
    generate_synthetic, ingest_taobao, write_dense, write_id_samples, write_items, write_vocab,
    SyntheticConfig, TaobaoConfig,
};

use crate::common::{ensure_dir, ModelFlags, Outputs, RunManifest};

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    /// Output directory for the dataset files.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn gen_data(args: &GenDataArgs, outputs: &mut Outputs) -> Result<()> {
    let file = args.model.config_file()?;
    let mut cfg = SyntheticConfig::default();
    file.apply_synthetic(&mut cfg)?;
    if let Some(seed) = args.model.seed {
        cfg.seed = seed;
    }
    if let Some(d) = args.model.d {
        cfg.d = d;
    }

    let mut echo = std::collections::BTreeMap::new();
    echo.insert("n_users".into(), cfg.n_users.to_string());
    echo.insert("n_items".into(), cfg.n_items.to_string());
    echo.insert("n_interests".into(), cfg.n_interests.to_string());
    echo.insert(
        "interests_per_user".into(),
        cfg.interests_per_user.to_string(),
    );
    echo.insert("d".into(), cfg.d.to_string());
    echo.insert("seq_len_mean".into(), cfg.seq_len_mean.to_string());
    echo.insert("seq_len_cap".into(), cfg.seq_len_cap.to_string());
    echo.insert("session_burst_len".into(), cfg.session_burst_len.to_string());
    echo.insert("noise_std".into(), cfg.noise_std.to_string());
    echo.insert("neg_ratio".into(), cfg.neg_ratio.to_string());
    let (mut manifest, started) = RunManifest::new("gen-data", cfg.seed, echo);

    ensure_dir(&args.out)?;
    let data = generate_synthetic(&cfg)?;
    for (name, split) in [
        ("train.sumds", &data.train),
        ("valid.sumds", &data.valid),
        ("test.sumds", &data.test),
    ] {
        let path = args.out.join(name);
        write_dense(&path, split, data.d)?;
        outputs.record(path);
    }
    let items_path = args.out.join("items.sumitems");
    write_items(&items_path, &data.items, data.d)?;
    outputs.record(items_path);

    manifest
        .metrics
        .insert("train_samples".into(), data.train.len() as f64);
    manifest
        .metrics
        .insert("valid_samples".into(), data.valid.len() as f64);
    manifest
        .metrics
        .insert("test_samples".into(), data.test.len() as f64);
    println!(
        "generated {} train / {} valid / {} test samples (d={}) into {}",
        data.train.len(),
        data.valid.len(),
        data.test.len(),
        data.d,
        args.out.display()
    );
    manifest.write(&args.out, started, outputs)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    /// Behavior-log CSV (user_id,item_id,category_id,behavior_type,timestamp).
    #[arg(long)]
    pub csv: PathBuf,
    /// Output directory for the id-based dataset files.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn ingest(args: &IngestArgs, outputs: &mut Outputs) -> Result<()> {
    let file = args.model.config_file()?;
    let mut cfg = TaobaoConfig::default();
    file.apply_taobao(&mut cfg)?;
    if let Some(seed) = args.model.seed {
        cfg.seed = seed;
    }

    let mut echo = std::collections::BTreeMap::new();
    echo.insert("csv".into(), args.csv.display().to_string());
    echo.insert("max_len".into(), cfg.max_len.to_string());
    echo.insert("min_history".into(), cfg.min_history.to_string());
    echo.insert("neg_ratio".into(), cfg.neg_ratio.to_string());
    let (mut manifest, started) = RunManifest::new("ingest-taobao", cfg.seed, echo);

    ensure_dir(&args.out)?;
    let report = ingest_taobao(&args.csv, &cfg)?;
    for (name, split) in [
        ("train.sumids", &report.train),
        ("valid.sumids", &report.valid),
        ("test.sumids", &report.test),
    ] {
        let path = args.out.join(name);
        write_id_samples(&path, split)?;
        outputs.record(path);
    }
    let vocab_path = args.out.join("vocab.sumvocab");
    write_vocab(&vocab_path, &report.vocab)?;
    outputs.record(vocab_path);

    manifest
        .metrics
        .insert("rows_read".into(), report.rows_read as f64);
    manifest
        .metrics
        .insert("rows_malformed".into(), report.rows_malformed as f64);
    manifest
        .metrics
        .insert("users_kept".into(), report.users_kept as f64);
    manifest
        .metrics
        .insert("users_dropped".into(), report.users_dropped as f64);
    println!(
        "ingested {} rows ({} malformed), kept {} users: {} train / {} valid / {} test samples",
        report.rows_read,
        report.rows_malformed,
        report.users_kept,
        report.train.len(),
        report.valid.len(),
        report.test.len()
    );
    manifest.write(&args.out, started, outputs)?;
    Ok(())
}
