use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;

use sumrec_core::config::ConfigFile;
use sumrec_core::data::{read_dense, read_id_samples, read_vocab};
use sumrec_core::encoder::EncoderKind;
use sumrec_core::model::Sample;
use sumrec_core::trainer::{IdSample, TrainConfig, Vocab};

/// Model/trainer flags shared by every command, applied on top of the
/// config file.
#[derive(Debug, Args, Clone)]
pub struct ModelFlags {
    /// Key-value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// RNG seed (overrides the config file).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Encoder architecture.
    #[arg(long, value_parser = ["sum", "rum", "gru"])]
    pub encoder: Option<String>,
    /// Number of memory channels.
    #[arg(long)]
    pub k: Option<usize>,
    /// State / embedding dimension.
    #[arg(long)]
    pub d: Option<usize>,
    /// Softmax scale for both writing and reading attention.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Disable instance-level attention (event-only updating vectors).
    #[arg(long)]
    pub no_instance_att: bool,
    /// Disable the local proximity debuff.
    #[arg(long)]
    pub no_debuff: bool,
    /// Disable the highway channel.
    #[arg(long)]
    pub no_highway: bool,
    /// Use the head-table reading operation instead of the transform.
    #[arg(long)]
    pub legacy_read: bool,
}

impl ModelFlags {
    pub fn config_file(&self) -> Result<ConfigFile> {
        match &self.config {
            Some(path) => Ok(ConfigFile::from_path(path)?),
            None => Ok(ConfigFile::default()),
        }
    }

    /// Config file first, then explicit flags.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        self.config_file()?.apply_train(&mut cfg)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(e) = &self.encoder {
            cfg.encoder_kind = e.parse::<EncoderKind>()?;
        }
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(d) = self.d {
            cfg.d = d;
        }
        if let Some(beta) = self.beta {
            cfg.beta_write = beta;
            cfg.beta_read = beta;
        }
        if self.no_instance_att {
            cfg.flags.instance_level_attention = false;
        }
        if self.no_debuff {
            cfg.flags.local_proximity_debuff = false;
        }
        if self.no_highway {
            cfg.flags.highway_channel = false;
        }
        if self.legacy_read {
            cfg.flags.legacy_read = true;
        }
        Ok(cfg)
    }
}

pub fn config_echo(cfg: &TrainConfig) -> BTreeMap<String, String> {
    let flags = cfg.effective_flags();
    let mut m = BTreeMap::new();
    m.insert("encoder".into(), format!("{:?}", cfg.encoder_kind).to_lowercase());
    m.insert("d".into(), cfg.d.to_string());
    m.insert("k".into(), cfg.k.to_string());
    m.insert("beta_write".into(), cfg.beta_write.to_string());
    m.insert("beta_read".into(), cfg.beta_read.to_string());
    m.insert("hidden".into(), cfg.hidden.to_string());
    m.insert("learning_rate".into(), cfg.learning_rate.to_string());
    m.insert("lambda".into(), cfg.lambda.to_string());
    m.insert("batch_size".into(), cfg.batch_size.to_string());
    m.insert("max_epochs".into(), cfg.max_epochs.to_string());
    m.insert("patience".into(), cfg.patience.to_string());
    m.insert("max_len".into(), cfg.max_len.to_string());
    m.insert("grad_clip".into(), cfg.grad_clip.to_string());
    m.insert("seed".into(), cfg.seed.to_string());
    m.insert(
        "instance_att".into(),
        flags.instance_level_attention.to_string(),
    );
    m.insert("debuff".into(), flags.local_proximity_debuff.to_string());
    m.insert("highway".into(), flags.highway_channel.to_string());
    m.insert("legacy_read".into(), flags.legacy_read.to_string());
    m
}

/// Every run writes one of these next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub metrics: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    pub started_at_unix: u64,
    pub duration_secs: f64,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: BTreeMap<String, String>) -> (Self, Instant) {
        let manifest = RunManifest {
            command: command.to_string(),
            seed,
            config,
            outputs: Vec::new(),
            metrics: BTreeMap::new(),
            checkpoint: None,
            started_at_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            duration_secs: 0.0,
        };
        (manifest, Instant::now())
    }

    pub fn write(mut self, out_dir: &Path, started: Instant, tracker: &mut Outputs) -> Result<()> {
        self.duration_secs = started.elapsed().as_secs_f64();
        self.outputs = tracker
            .paths()
            .iter()
            .map(|p| p.display().to_string())
            .collect();
        let path = out_dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&self)?)
            .with_context(|| format!("writing {}", path.display()))?;
        tracker.record(path);
        Ok(())
    }
}

/// Tracks files created by the running command so a failure can remove
/// partial outputs before the process exits nonzero.
#[derive(Debug, Default)]
pub struct Outputs {
    created: Vec<PathBuf>,
}

impl Outputs {
    pub fn record(&mut self, path: impl Into<PathBuf>) {
        self.created.push(path.into());
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.created
    }

    pub fn remove_all(&self) {
        for p in &self.created {
            let _ = std::fs::remove_file(p);
        }
    }
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

/// A loaded dataset directory: either dense samples or id samples plus the
/// vocabulary for jointly trained embeddings.
pub enum LoadedData {
    Dense {
        train: Vec<Sample>,
        valid: Vec<Sample>,
        test: Vec<Sample>,
        d: usize,
    },
    Ids {
        train: Vec<IdSample>,
        valid: Vec<IdSample>,
        test: Vec<IdSample>,
        vocab: Vocab,
    },
}

impl LoadedData {
    pub fn is_dense(&self) -> bool {
        matches!(self, LoadedData::Dense { .. })
    }
}

pub fn load_data_dir(dir: &Path) -> Result<LoadedData> {
    let dense = dir.join("train.sumds");
    let ids = dir.join("train.sumids");
    if dense.exists() {
        let (train, d) = read_dense(&dense)?;
        let (valid, dv) = read_dense(&dir.join("valid.sumds"))?;
        let (test, dt) = read_dense(&dir.join("test.sumds"))?;
        if dv != d || dt != d {
            bail!("splits disagree on embedding dimension");
        }
        Ok(LoadedData::Dense {
            train,
            valid,
            test,
            d,
        })
    } else if ids.exists() {
        Ok(LoadedData::Ids {
            train: read_id_samples(&ids)?,
            valid: read_id_samples(&dir.join("valid.sumids"))?,
            test: read_id_samples(&dir.join("test.sumids"))?,
            vocab: read_vocab(&dir.join("vocab.sumvocab"))?,
        })
    } else {
        bail!(
            "no dataset found in {} (expected train.sumds or train.sumids)",
            dir.display()
        );
    }
}

pub fn print_metric_table(rows: &[(String, f64)]) {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(6).max(6);
    println!("{:<width$}  value", "metric");
    for (name, value) in rows {
        println!("{name:<width$}  {value:.6}");
    }
}
