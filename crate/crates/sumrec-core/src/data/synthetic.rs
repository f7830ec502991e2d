use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Geometric, Poisson, StandardNormal};

use crate::encoder::Event;
use crate::error::{Error, Result};
use crate::model::Sample;
use crate::numerics::Vector;

/// Desk-scale multi-interest sequence generator. Each latent interest is a
/// unit centroid; items scatter around their interest; user histories come
/// in same-interest bursts so consecutive events are similar by
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_interests: usize,
    pub interests_per_user: usize,
    pub d: usize,
    pub seq_len_mean: f64,
    pub seq_len_cap: usize,
    /// Mean run length of same-interest event bursts.
    pub session_burst_len: f64,
    pub noise_std: f64,
    /// Negatives per positive, sampled by global item popularity.
    pub neg_ratio: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_users: 1000,
            n_items: 2000,
            n_interests: 4,
            interests_per_user: 2,
            d: 64,
            seq_len_mean: 40.0,
            seq_len_cap: 100,
            session_burst_len: 5.0,
            noise_std: 0.15,
            neg_ratio: 4,
            seed: 42,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_interests < 2 {
            return Err(Error::InvalidConfig("n_interests must be >= 2".into()));
        }
        if self.interests_per_user == 0 || self.interests_per_user > self.n_interests {
            return Err(Error::InvalidConfig(
                "interests_per_user must be in 1..=n_interests".into(),
            ));
        }
        if self.seq_len_cap == 0 || self.seq_len_cap > 100 {
            return Err(Error::InvalidConfig("seq_len_cap must be in 1..=100".into()));
        }
        if self.n_items < self.n_interests || self.n_items < 2 {
            return Err(Error::InvalidConfig(
                "need at least one item per interest and two items overall".into(),
            ));
        }
        if self.n_users < 1 || self.d == 0 {
            return Err(Error::InvalidConfig("n_users and d must be >= 1".into()));
        }
        if self.seq_len_mean < 1.0 || self.session_burst_len < 1.0 {
            return Err(Error::InvalidConfig(
                "seq_len_mean and session_burst_len must be >= 1".into(),
            ));
        }
        if self.noise_std < 0.0 {
            return Err(Error::InvalidConfig("noise_std must be >= 0".into()));
        }
        if self.neg_ratio == 0 {
            return Err(Error::InvalidConfig("neg_ratio must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub train: Vec<Sample>,
    pub valid: Vec<Sample>,
    pub test: Vec<Sample>,
    pub items: Vec<Vector>,
    pub d: usize,
}

fn normalize(mut v: Vec<f64>) -> Vector {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    Vector::from_raw(v)
}

fn unit_gaussian(d: usize, rng: &mut ChaCha8Rng) -> Vector {
    normalize((0..d).map(|_| StandardNormal.sample(rng)).collect())
}

// Items are assigned to interests round-robin: item i belongs to interest
// i % n_interests, so interest g's pool is {g, g + K, g + 2K, ...}.
fn pool_item(interest: usize, j: usize, n_interests: usize) -> u32 {
    (interest + j * n_interests) as u32
}

fn pool_size(interest: usize, n_items: usize, n_interests: usize) -> usize {
    let base = n_items / n_interests;
    if interest < n_items % n_interests {
        base + 1
    } else {
        base
    }
}

/// Generates train/valid/test splits (70/15/15 by user) plus the item table.
/// Deterministic for a fixed seed.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let centroids: Vec<Vector> = (0..cfg.n_interests)
        .map(|_| unit_gaussian(cfg.d, &mut rng))
        .collect();

    let items: Vec<Vector> = (0..cfg.n_items)
        .map(|i| {
            let c = &centroids[i % cfg.n_interests];
            normalize(
                c.iter()
                    .map(|&x| {
                        let n: f64 = StandardNormal.sample(&mut rng);
                        x + cfg.noise_std * n
                    })
                    .collect(),
            )
        })
        .collect();

    let poisson = Poisson::new(cfg.seq_len_mean)
        .map_err(|e| Error::InvalidConfig(format!("seq_len_mean: {e}")))?;
    let geometric = Geometric::new(1.0 / cfg.session_burst_len)
        .map_err(|e| Error::InvalidConfig(format!("session_burst_len: {e}")))?;

    // Pass 1: users, interests, burst histories, positive targets.
    // Popularity counts accumulate over every history draw.
    struct UserDraft {
        user_id: String,
        history: Vec<u32>,
        positive: u32,
    }
    let mut pop_counts = vec![0u64; cfg.n_items];
    let mut drafts = Vec::with_capacity(cfg.n_users);
    let mut interest_order: Vec<usize> = (0..cfg.n_interests).collect();
    for u in 0..cfg.n_users {
        interest_order.shuffle(&mut rng);
        let interests = &interest_order[..cfg.interests_per_user];
        let target_len = (poisson.sample(&mut rng) as usize).clamp(2, cfg.seq_len_cap);
        let mut history = Vec::with_capacity(target_len);
        while history.len() < target_len {
            let interest = interests[rng.random_range(0..interests.len())];
            let n_pool = pool_size(interest, cfg.n_items, cfg.n_interests);
            let burst = geometric.sample(&mut rng) as usize + 1;
            for _ in 0..burst {
                if history.len() >= target_len {
                    break;
                }
                let item = pool_item(interest, rng.random_range(0..n_pool), cfg.n_interests);
                pop_counts[item as usize] += 1;
                history.push(item);
            }
        }
        let pos_interest = interests[rng.random_range(0..interests.len())];
        let n_pool = pool_size(pos_interest, cfg.n_items, cfg.n_interests);
        let positive = pool_item(pos_interest, rng.random_range(0..n_pool), cfg.n_interests);
        drafts.push(UserDraft {
            user_id: format!("u{u:05}"),
            history,
            positive,
        });
    }

    // Pass 2: popularity-weighted negatives, excluding the positive item.
    let weights: Vec<f64> = pop_counts.iter().map(|&c| c as f64).collect();
    let sampler = rand::distr::weighted::WeightedIndex::new(&weights)
        .map_err(|e| Error::InvalidConfig(format!("popularity weights: {e}")))?;

    let mut per_user_samples: Vec<Vec<Sample>> = Vec::with_capacity(cfg.n_users);
    for draft in &drafts {
        let history: Vec<Event> = draft
            .history
            .iter()
            .enumerate()
            .map(|(t, &item)| {
                Event::new(draft.user_id.clone(), items[item as usize].clone(), t as i64)
            })
            .collect();
        let mut samples = Vec::with_capacity(1 + cfg.neg_ratio);
        samples.push(Sample {
            user_id: draft.user_id.clone(),
            history: history.clone(),
            target: items[draft.positive as usize].clone(),
            label: 1,
        });
        for _ in 0..cfg.neg_ratio {
            let mut neg = sampler.sample(&mut rng) as u32;
            let mut guard = 0;
            while neg == draft.positive && guard < 1000 {
                neg = sampler.sample(&mut rng) as u32;
                guard += 1;
            }
            samples.push(Sample {
                user_id: draft.user_id.clone(),
                history: history.clone(),
                target: items[neg as usize].clone(),
                label: 0,
            });
        }
        per_user_samples.push(samples);
    }

    // 70/15/15 split by user id.
    let mut order: Vec<usize> = (0..cfg.n_users).collect();
    order.shuffle(&mut rng);
    let n_train = (cfg.n_users * 70) / 100;
    let n_valid = (cfg.n_users * 15) / 100;
    let mut out = SyntheticData {
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
        items,
        d: cfg.d,
    };
    for (rank, &u) in order.iter().enumerate() {
        let bucket = if rank < n_train {
            &mut out.train
        } else if rank < n_train + n_valid {
            &mut out.valid
        } else {
            &mut out.test
        };
        bucket.extend(per_user_samples[u].iter().cloned());
    }
    Ok(out)
}
