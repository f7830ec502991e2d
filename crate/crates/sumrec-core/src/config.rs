//! Flat `key = value` configuration files shared by every command. Lines
//! starting with `#` and blank lines are ignored; unknown keys are rejected
//! with the offending name so typos surface immediately.

use std::collections::BTreeMap;
use std::path::Path;

use crate::data::{SyntheticConfig, TaobaoConfig};
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

const KNOWN_KEYS: &[&str] = &[
    // model / trainer
    "encoder",
    "d",
    "k",
    "beta",
    "beta_write",
    "beta_read",
    "hidden",
    "learning_rate",
    "lambda",
    "batch_size",
    "max_epochs",
    "patience",
    "max_len",
    "grad_clip",
    "seed",
    "instance_att",
    "debuff",
    "highway",
    "legacy_read",
    // synthetic data
    "n_users",
    "n_items",
    "n_interests",
    "interests_per_user",
    "seq_len_mean",
    "seq_len_cap",
    "session_burst_len",
    "noise_std",
    "neg_ratio",
    // behavior-log ingestion
    "min_history",
    "item_dim",
    "cat_dim",
];

#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    map: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "line {}: unknown key '{key}'",
                    lineno + 1
                )));
            }
            map.insert(key, value.trim().to_string());
        }
        Ok(ConfigFile { map })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| Error::InvalidConfig(format!("key '{key}': {e}"))),
        }
    }

    fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        match self.map.get(key).map(|s| s.as_str()) {
            None => Ok(None),
            Some("true") | Some("1") | Some("on") => Ok(Some(true)),
            Some("false") | Some("0") | Some("off") => Ok(Some(false)),
            Some(other) => Err(Error::InvalidConfig(format!(
                "key '{key}': expected a boolean, got '{other}'"
            ))),
        }
    }

    /// Overlays the file's trainer keys onto `cfg`.
    pub fn apply_train(&self, cfg: &mut TrainConfig) -> Result<()> {
        if let Some(v) = self.get_parsed("encoder")? {
            cfg.encoder_kind = v;
        }
        if let Some(v) = self.get_parsed("d")? {
            cfg.d = v;
        }
        if let Some(v) = self.get_parsed("k")? {
            cfg.k = v;
        }
        if let Some(v) = self.get_parsed::<f64>("beta")? {
            cfg.beta_write = v;
            cfg.beta_read = v;
        }
        if let Some(v) = self.get_parsed("beta_write")? {
            cfg.beta_write = v;
        }
        if let Some(v) = self.get_parsed("beta_read")? {
            cfg.beta_read = v;
        }
        if let Some(v) = self.get_parsed("hidden")? {
            cfg.hidden = v;
        }
        if let Some(v) = self.get_parsed("learning_rate")? {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.get_parsed("lambda")? {
            cfg.lambda = v;
        }
        if let Some(v) = self.get_parsed("batch_size")? {
            cfg.batch_size = v;
        }
        if let Some(v) = self.get_parsed("max_epochs")? {
            cfg.max_epochs = v;
        }
        if let Some(v) = self.get_parsed("patience")? {
            cfg.patience = v;
        }
        if let Some(v) = self.get_parsed("max_len")? {
            cfg.max_len = v;
        }
        if let Some(v) = self.get_parsed("grad_clip")? {
            cfg.grad_clip = v;
        }
        if let Some(v) = self.get_parsed("seed")? {
            cfg.seed = v;
        }
        if let Some(v) = self.get_bool("instance_att")? {
            cfg.flags.instance_level_attention = v;
        }
        if let Some(v) = self.get_bool("debuff")? {
            cfg.flags.local_proximity_debuff = v;
        }
        if let Some(v) = self.get_bool("highway")? {
            cfg.flags.highway_channel = v;
        }
        if let Some(v) = self.get_bool("legacy_read")? {
            cfg.flags.legacy_read = v;
        }
        Ok(())
    }

    /// Overlays the file's generator keys onto `cfg`.
    pub fn apply_synthetic(&self, cfg: &mut SyntheticConfig) -> Result<()> {
        if let Some(v) = self.get_parsed("n_users")? {
            cfg.n_users = v;
        }
        if let Some(v) = self.get_parsed("n_items")? {
            cfg.n_items = v;
        }
        if let Some(v) = self.get_parsed("n_interests")? {
            cfg.n_interests = v;
        }
        if let Some(v) = self.get_parsed("interests_per_user")? {
            cfg.interests_per_user = v;
        }
        if let Some(v) = self.get_parsed("d")? {
            cfg.d = v;
        }
        if let Some(v) = self.get_parsed("seq_len_mean")? {
            cfg.seq_len_mean = v;
        }
        if let Some(v) = self.get_parsed("seq_len_cap")? {
            cfg.seq_len_cap = v;
        }
        if let Some(v) = self.get_parsed("session_burst_len")? {
            cfg.session_burst_len = v;
        }
        if let Some(v) = self.get_parsed("noise_std")? {
            cfg.noise_std = v;
        }
        if let Some(v) = self.get_parsed("neg_ratio")? {
            cfg.neg_ratio = v;
        }
        if let Some(v) = self.get_parsed("seed")? {
            cfg.seed = v;
        }
        Ok(())
    }

    /// Overlays the file's ingestion keys onto `cfg`.
    pub fn apply_taobao(&self, cfg: &mut TaobaoConfig) -> Result<()> {
        if let Some(v) = self.get_parsed("max_len")? {
            cfg.max_len = v;
        }
        if let Some(v) = self.get_parsed("min_history")? {
            cfg.min_history = v;
        }
        if let Some(v) = self.get_parsed("neg_ratio")? {
            cfg.neg_ratio = v;
        }
        if let Some(v) = self.get_parsed("seed")? {
            cfg.seed = v;
        }
        Ok(())
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        self.get_parsed(key)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_overlays() {
        let text = "\n# comment\nencoder = rum\nd = 16\nlearning_rate = 0.001\nhighway = off\n";
        let file = ConfigFile::parse(text).unwrap();
        let mut cfg = TrainConfig::default();
        file.apply_train(&mut cfg).unwrap();
        assert_eq!(cfg.encoder_kind, crate::encoder::EncoderKind::Rum);
        assert_eq!(cfg.d, 16);
        assert_eq!(cfg.learning_rate, 0.001);
        assert!(!cfg.flags.highway_channel);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_lines() {
        assert!(ConfigFile::parse("nope = 1").is_err());
        assert!(ConfigFile::parse("just a line").is_err());
        let f = ConfigFile::parse("d = not_a_number").unwrap();
        let mut cfg = TrainConfig::default();
        assert!(f.apply_train(&mut cfg).is_err());
    }
}
