use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::trainer::{IdSample, Vocab};

/// One behavior-log row: user_id,item_id,category_id,behavior_type,timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorRecord {
    pub user_id: String,
    pub item_id: String,
    pub category_id: String,
    pub behavior: BehaviorType,
    pub timestamp: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BehaviorType {
    PageView,
    Buy,
    Cart,
    Favorite,
}

impl BehaviorType {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "pv" => Some(BehaviorType::PageView),
            "buy" => Some(BehaviorType::Buy),
            "cart" => Some(BehaviorType::Cart),
            "fav" => Some(BehaviorType::Favorite),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaobaoConfig {
    /// Histories keep at most this many page views before the purchase.
    pub max_len: usize,
    /// Users must have strictly more page views than this to be included.
    pub min_history: usize,
    pub neg_ratio: usize,
    pub seed: u64,
}

impl Default for TaobaoConfig {
    fn default() -> Self {
        TaobaoConfig {
            max_len: 100,
            min_history: 20,
            neg_ratio: 4,
            seed: 42,
        }
    }
}

#[derive(Debug)]
pub struct IngestReport {
    pub train: Vec<IdSample>,
    pub valid: Vec<IdSample>,
    pub test: Vec<IdSample>,
    pub vocab: Vocab,
    pub rows_read: usize,
    pub rows_malformed: usize,
    pub users_kept: usize,
    pub users_dropped: usize,
}

fn parse_row(line: &str) -> Option<BehaviorRecord> {
    let mut parts = line.split(',');
    let user_id = parts.next()?.trim();
    let item_id = parts.next()?.trim();
    let category_id = parts.next()?.trim();
    let behavior = BehaviorType::parse(parts.next()?.trim())?;
    let timestamp: i64 = parts.next()?.trim().parse().ok()?;
    if parts.next().is_some() || user_id.is_empty() || item_id.is_empty() {
        return None;
    }
    Some(BehaviorRecord {
        user_id: user_id.to_string(),
        item_id: item_id.to_string(),
        category_id: category_id.to_string(),
        behavior,
        timestamp,
    })
}

/// Ingests a behavior-log CSV into id-based samples: each purchase becomes a
/// positive with the last ≤ max_len page views strictly before it as
/// history, plus popularity-sampled negatives sharing that history. Users
/// are split 70/15/15. Malformed rows are counted and skipped; more than 1%
/// malformed aborts the ingestion.
pub fn ingest_taobao(path: &Path, cfg: &TaobaoConfig) -> Result<IngestReport> {
    if cfg.neg_ratio == 0 || cfg.max_len == 0 {
        return Err(Error::InvalidConfig(
            "neg_ratio and max_len must be >= 1".into(),
        ));
    }
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let reader = BufReader::new(file);

    // Vocabulary indices in first-appearance order; per-user rows with the
    // file position retained so equal timestamps keep file order.
    let mut item_index: BTreeMap<String, u32> = BTreeMap::new();
    let mut item_ids: Vec<String> = Vec::new();
    let mut item_cat: Vec<u32> = Vec::new();
    let mut cat_index: BTreeMap<String, u32> = BTreeMap::new();
    let mut cat_ids: Vec<String> = Vec::new();

    let mut users: BTreeMap<String, Vec<(u32, BehaviorType, i64, usize)>> = BTreeMap::new();
    let mut rows_read = 0usize;
    let mut rows_malformed = 0usize;

    for (pos, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows_read += 1;
        let Some(rec) = parse_row(&line) else {
            rows_malformed += 1;
            continue;
        };
        let cat = *cat_index.entry(rec.category_id.clone()).or_insert_with(|| {
            cat_ids.push(rec.category_id.clone());
            (cat_ids.len() - 1) as u32
        });
        let item = *item_index.entry(rec.item_id.clone()).or_insert_with(|| {
            item_ids.push(rec.item_id.clone());
            item_cat.push(cat);
            (item_ids.len() - 1) as u32
        });
        users
            .entry(rec.user_id)
            .or_default()
            .push((item, rec.behavior, rec.timestamp, pos));
    }

    if rows_read == 0 {
        return Err(Error::Data("no rows in input".into()));
    }
    if rows_malformed * 100 > rows_read {
        return Err(Error::Data(format!(
            "{rows_malformed} of {rows_read} rows malformed (> 1%), aborting"
        )));
    }

    // Keep users with strictly more than min_history page views.
    let mut kept_users: Vec<String> = Vec::new();
    let mut users_dropped = 0usize;
    for (user, rows) in &users {
        let pv = rows
            .iter()
            .filter(|(_, b, _, _)| *b == BehaviorType::PageView)
            .count();
        if pv > cfg.min_history {
            kept_users.push(user.clone());
        } else {
            users_dropped += 1;
        }
    }
    if kept_users.is_empty() {
        return Err(Error::Data(format!(
            "no user has more than {} page views",
            cfg.min_history
        )));
    }

    // Popularity over kept users' page views.
    let mut pv_counts = vec![0u64; item_ids.len()];
    for user in &kept_users {
        for (item, b, _, _) in &users[user] {
            if *b == BehaviorType::PageView {
                pv_counts[*item as usize] += 1;
            }
        }
    }
    let weights: Vec<f64> = pv_counts.iter().map(|&c| c as f64).collect();
    let sampler = rand::distr::weighted::WeightedIndex::new(&weights)
        .map_err(|e| Error::Data(format!("popularity weights: {e}")))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut per_user: BTreeMap<&str, Vec<IdSample>> = BTreeMap::new();
    for user in &kept_users {
        let mut rows = users[user].clone();
        rows.sort_by_key(|&(_, _, ts, pos)| (ts, pos));
        let pvs: Vec<(u32, i64)> = rows
            .iter()
            .filter(|(_, b, _, _)| *b == BehaviorType::PageView)
            .map(|&(item, _, ts, _)| (item, ts))
            .collect();
        let mut samples = Vec::new();
        for &(buy_item, behavior, buy_ts, _) in &rows {
            if behavior != BehaviorType::Buy {
                continue;
            }
            // page views strictly before the purchase, latest max_len
            let before: Vec<(u32, i64)> = pvs.iter().filter(|&&(_, ts)| ts < buy_ts).copied().collect();
            if before.is_empty() {
                continue;
            }
            let start = before.len().saturating_sub(cfg.max_len);
            let history = before[start..].to_vec();
            samples.push(IdSample {
                user_id: user.clone(),
                history: history.clone(),
                target: buy_item,
                label: 1,
            });
            for _ in 0..cfg.neg_ratio {
                let mut neg = sampler.sample(&mut rng) as u32;
                let mut guard = 0;
                while neg == buy_item && guard < 1000 {
                    neg = sampler.sample(&mut rng) as u32;
                    guard += 1;
                }
                samples.push(IdSample {
                    user_id: user.clone(),
                    history: history.clone(),
                    target: neg,
                    label: 0,
                });
            }
        }
        if !samples.is_empty() {
            per_user.insert(user, samples);
        }
    }
    if per_user.is_empty() {
        return Err(Error::Data(
            "no purchase with preceding page views found".into(),
        ));
    }

    // 70/15/15 split by user.
    let mut split_users: Vec<&str> = per_user.keys().copied().collect();
    split_users.shuffle(&mut rng);
    let n = split_users.len();
    let n_train = (n * 70) / 100;
    let n_valid = (n * 15) / 100;
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (rank, user) in split_users.iter().enumerate() {
        let bucket = if rank < n_train {
            &mut train
        } else if rank < n_train + n_valid {
            &mut valid
        } else {
            &mut test
        };
        bucket.extend(per_user[user].iter().cloned());
    }

    let users_kept = per_user.len();
    Ok(IngestReport {
        train,
        valid,
        test,
        vocab: Vocab {
            item_ids,
            cat_ids,
            item_cat,
            pv_counts,
        },
        rows_read,
        rows_malformed,
        users_kept,
        users_dropped,
    })
}
