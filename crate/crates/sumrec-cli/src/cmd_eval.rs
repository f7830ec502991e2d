use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;

use sumrec_core::checkpoint::load_checkpoint;
use sumrec_core::encoder::{channel_utilization, readout_attention_profile, EncoderKind};
use sumrec_core::model::{forward_sequence, Sample};
use sumrec_core::trainer::{evaluate, materialize_samples, TrainConfig};

use crate::cmd_train::train_and_test;
use crate::common::{
    config_echo, ensure_dir, load_data_dir, LoadedData, ModelFlags, Outputs, RunManifest,
};

fn split_of<'a, T>(train: &'a [T], valid: &'a [T], test: &'a [T], name: &str) -> Result<&'a [T]> {
    match name {
        "train" => Ok(train),
        "valid" => Ok(valid),
        "test" => Ok(test),
        other => bail!("unknown split '{other}' (expected train/valid/test)"),
    }
}

/// Dense samples of the requested split, materializing id datasets through
/// the checkpoint's embedding tables.
fn dense_split(
    data: &LoadedData,
    split: &str,
    ck: &sumrec_core::checkpoint::Checkpoint,
) -> Result<Vec<Sample>> {
    match data {
        LoadedData::Dense {
            train,
            valid,
            test,
            ..
        } => Ok(split_of(train, valid, test, split)?.to_vec()),
        LoadedData::Ids {
            train,
            valid,
            test,
            vocab,
        } => {
            let Some((ck_vocab, tables)) = &ck.embeddings else {
                bail!("id dataset needs a checkpoint with embedding tables");
            };
            if ck_vocab != vocab {
                bail!("checkpoint vocabulary does not match the dataset's");
            }
            Ok(materialize_samples(
                split_of(train, valid, test, split)?,
                vocab,
                tables,
            )?)
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Trained checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Split to evaluate.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Output directory for eval.csv and the manifest.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn run_eval(args: &EvalArgs, outputs: &mut Outputs) -> Result<()> {
    let ck = load_checkpoint(&args.checkpoint)?;
    let data = load_data_dir(&args.data)?;
    let samples = dense_split(&data, &args.split, &ck)?;

    let mut echo = BTreeMap::new();
    echo.insert("checkpoint".into(), args.checkpoint.display().to_string());
    echo.insert("split".into(), args.split.clone());
    let (mut manifest, started) = RunManifest::new("eval", args.seed.unwrap_or(0), echo);

    let report = evaluate(&ck.model, &samples)?;
    let rows = vec![
        ("gauc".to_string(), report.gauc),
        ("logloss".to_string(), report.logloss),
        ("ndcg@3".to_string(), report.ndcg3),
    ];
    crate::common::print_metric_table(&rows);

    ensure_dir(&args.out)?;
    let csv_path = args.out.join("eval.csv");
    let mut csv = String::from("metric,value\n");
    for (name, value) in &rows {
        writeln!(csv, "{name},{value}").unwrap();
    }
    std::fs::write(&csv_path, csv).with_context(|| format!("writing {}", csv_path.display()))?;
    outputs.record(&csv_path);

    for (name, value) in rows {
        manifest.metrics.insert(name.replace('@', ""), value);
    }
    manifest.checkpoint = Some(args.checkpoint.display().to_string());
    manifest.write(&args.out, started, outputs)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// The four single-component-off variants next to the full model.
fn ablation_variants(base: &TrainConfig) -> Vec<(&'static str, TrainConfig)> {
    let full = {
        let mut c = base.clone();
        c.encoder_kind = EncoderKind::Sum;
        c.flags = Default::default();
        c
    };
    let mut rows = vec![("full", full.clone())];
    let mut v = full.clone();
    v.flags.instance_level_attention = false;
    rows.push(("no-instance-attention", v));
    let mut v = full.clone();
    v.flags.local_proximity_debuff = false;
    rows.push(("no-proximity-debuff", v));
    let mut v = full.clone();
    v.flags.highway_channel = false;
    rows.push(("no-highway-channel", v));
    let mut v = full;
    v.flags.legacy_read = true;
    rows.push(("legacy-read", v));
    rows
}

pub fn run_ablate(args: &AblateArgs, outputs: &mut Outputs) -> Result<()> {
    let data = load_data_dir(&args.data)?;
    let base = args.model.train_config()?;
    let (mut manifest, started) = RunManifest::new("ablate", base.seed, config_echo(&base));
    ensure_dir(&args.out)?;

    let mut csv = String::from("variant,gauc,ndcg3,logloss\n");
    println!("{:<24}  {:>8}  {:>8}  {:>8}", "variant", "gauc", "ndcg@3", "logloss");
    for (name, cfg) in ablation_variants(&base) {
        let (gauc, ndcg3, logloss) = train_and_test(&cfg, &data)?;
        println!("{name:<24}  {gauc:>8.4}  {ndcg3:>8.4}  {logloss:>8.4}");
        writeln!(csv, "{name},{gauc},{ndcg3},{logloss}").unwrap();
        manifest.metrics.insert(format!("gauc_{name}"), gauc);
    }
    let csv_path = args.out.join("ablate.csv");
    std::fs::write(&csv_path, csv)?;
    outputs.record(&csv_path);
    manifest.write(&args.out, started, outputs)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct SweepKArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Channel counts to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = vec![3usize, 4, 5, 8, 10])]
    pub ks: Vec<usize>,
}

pub fn run_sweep_k(args: &SweepKArgs, outputs: &mut Outputs) -> Result<()> {
    let data = load_data_dir(&args.data)?;
    let base = args.model.train_config()?;
    let (mut manifest, started) = RunManifest::new("sweep-k", base.seed, config_echo(&base));
    ensure_dir(&args.out)?;

    let mut csv = String::from("encoder,k,gauc,ndcg3,logloss\n");
    println!("{:<8}  {:>3}  {:>8}  {:>8}  {:>8}", "encoder", "k", "gauc", "ndcg@3", "logloss");
    for kind in [EncoderKind::Sum, EncoderKind::Rum] {
        for &k in &args.ks {
            let mut cfg = base.clone();
            cfg.encoder_kind = kind;
            cfg.k = k;
            let label = format!("{kind:?}").to_lowercase();
            let (gauc, ndcg3, logloss) = train_and_test(&cfg, &data)?;
            println!("{label:<8}  {k:>3}  {gauc:>8.4}  {ndcg3:>8.4}  {logloss:>8.4}");
            writeln!(csv, "{label},{k},{gauc},{ndcg3},{logloss}").unwrap();
            manifest.metrics.insert(format!("gauc_{label}_k{k}"), gauc);
        }
    }
    let csv_path = args.out.join("sweep_k.csv");
    std::fs::write(&csv_path, csv)?;
    outputs.record(&csv_path);
    manifest.write(&args.out, started, outputs)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Users included in the heatmap export.
    #[arg(long, default_value_t = 20)]
    pub users: usize,
}

pub fn run_inspect(args: &InspectArgs, outputs: &mut Outputs) -> Result<()> {
    let ck = load_checkpoint(&args.checkpoint)?;
    if ck.hyperparams.encoder == EncoderKind::Gru {
        bail!("channel analytics need a multi-channel encoder; this checkpoint is a GRU");
    }
    let k = ck.hyperparams.k;
    let data = load_data_dir(&args.data)?;
    let samples = dense_split(&data, &args.split, &ck)?;

    let mut echo = BTreeMap::new();
    echo.insert("checkpoint".into(), args.checkpoint.display().to_string());
    echo.insert("split".into(), args.split.clone());
    echo.insert("users".into(), args.users.to_string());
    let (mut manifest, started) = RunManifest::new("inspect", 0, echo);
    ensure_dir(&args.out)?;

    // one write trace per user (its first positive), read traces over all
    // positive instances
    let mut write_traces: Vec<(String, Vec<sumrec_core::numerics::Vector>)> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    let mut read_traces = Vec::new();
    for s in &samples {
        if s.label != 1 {
            continue;
        }
        let (_, trace) = forward_sequence(&ck.model, s)?;
        if seen.insert(s.user_id.clone()) {
            write_traces.push((s.user_id.clone(), trace.write_attn));
        }
        read_traces.push(trace.read_attn);
    }
    if write_traces.is_empty() {
        bail!("split '{}' has no positive instances", args.split);
    }

    // heatmap over the first N users
    let mut heatmap = String::from("user_id,step");
    for c in 0..k {
        heatmap.push_str(&format!(",z{c}"));
    }
    heatmap.push('\n');
    for (user, trace) in write_traces.iter().take(args.users) {
        for (step, z) in trace.iter().enumerate() {
            heatmap.push_str(&format!("{user},{step}"));
            for c in 0..k {
                heatmap.push_str(&format!(",{}", z[c]));
            }
            heatmap.push('\n');
        }
    }
    let heatmap_path = args.out.join("write_attention_heatmap.csv");
    std::fs::write(&heatmap_path, heatmap)?;
    outputs.record(&heatmap_path);

    let traces_only: Vec<Vec<sumrec_core::numerics::Vector>> =
        write_traces.iter().map(|(_, t)| t.clone()).collect();
    let utilization = channel_utilization(&traces_only, k)?;
    let profile = readout_attention_profile(&read_traces, k)?;

    let mut profile_csv = String::from("channel,share\n");
    for c in 0..k {
        writeln!(profile_csv, "{c},{}", profile[c]).unwrap();
    }
    let profile_path = args.out.join("readout_profile.csv");
    std::fs::write(&profile_path, profile_csv)?;
    outputs.record(&profile_path);

    println!(
        "writing utilization over {} users at K={k}: {utilization:.4}",
        write_traces.len()
    );
    println!(
        "readout attention profile ({} positive instances): {:?}",
        read_traces.len(),
        profile.as_slice()
    );
    manifest.metrics.insert("utilization".into(), utilization);
    manifest
        .metrics
        .insert("heatmap_users".into(), write_traces.len().min(args.users) as f64);
    manifest.checkpoint = Some(args.checkpoint.display().to_string());
    manifest.write(&args.out, started, outputs)?;
    Ok(())
}
