//! Ranking metrics computed over per-user candidate groups: group AUC,
//! NDCG@k with binary relevance, and plain log loss.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ranker::bce_loss;

/// One user's scored candidates.
#[derive(Debug, Clone)]
pub struct ScoredGroup {
    pub user_id: String,
    /// (score, binary label) pairs in arrival order.
    pub items: Vec<(f64, u8)>,
}

impl ScoredGroup {
    pub fn new(user_id: impl Into<String>, items: Vec<(f64, u8)>) -> Self {
        ScoredGroup {
            user_id: user_id.into(),
            items,
        }
    }

    fn validate(&self) -> Result<()> {
        for &(s, l) in &self.items {
            if !s.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("score for user {}", self.user_id),
                });
            }
            if l > 1 {
                return Err(Error::InvalidInput(format!(
                    "label {l} for user {} is not binary",
                    self.user_id
                )));
            }
        }
        Ok(())
    }
}

/// AUC for one group via average ranks (Mann–Whitney), ties counted 0.5.
/// Returns None when the group lacks a positive or a negative.
fn auc_single(items: &[(f64, u8)]) -> Option<f64> {
    let n_pos = items.iter().filter(|&&(_, l)| l == 1).count();
    let n_neg = items.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| items[a].0.partial_cmp(&items[b].0).unwrap());

    // Average ranks over tied score runs; rank sum of positives gives the
    // number of correctly ordered (pos, neg) pairs with ties as 0.5.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && items[order[j + 1]].0 == items[order[i]].0 {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share the average
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if items[idx].1 == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Per-user AUC averaged (unweighted) over users having both classes;
/// errors when no user qualifies.
pub fn group_auc(groups: &[ScoredGroup]) -> Result<f64> {
    for g in groups {
        g.validate()?;
    }
    let aucs: Vec<f64> = groups
        .par_iter()
        .filter_map(|g| auc_single(&g.items))
        .collect();
    if aucs.is_empty() {
        return Err(Error::UndefinedMetric(
            "group AUC needs at least one user with both a positive and a negative".into(),
        ));
    }
    Ok(aucs.iter().sum::<f64>() / aucs.len() as f64)
}

fn dcg_at_k(labels_in_rank_order: impl Iterator<Item = u8>, k: usize) -> f64 {
    labels_in_rank_order
        .take(k)
        .enumerate()
        .map(|(i, rel)| rel as f64 / ((i + 2) as f64).log2())
        .sum()
}

/// Binary-relevance NDCG@k, scores sorted descending with stable ties,
/// averaged over groups that contain at least one positive.
pub fn ndcg_at_k(groups: &[ScoredGroup], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidInput("ndcg needs k >= 1".into()));
    }
    for g in groups {
        g.validate()?;
    }
    let scores: Vec<f64> = groups
        .par_iter()
        .filter_map(|g| {
            let n_pos = g.items.iter().filter(|&&(_, l)| l == 1).count();
            if n_pos == 0 {
                return None;
            }
            let mut order: Vec<usize> = (0..g.items.len()).collect();
            // Stable sort keeps input order among equal scores.
            order.sort_by(|&a, &b| g.items[b].0.partial_cmp(&g.items[a].0).unwrap());
            let dcg = dcg_at_k(order.iter().map(|&i| g.items[i].1), k);
            let ideal = dcg_at_k(std::iter::repeat_n(1u8, n_pos), k);
            Some(dcg / ideal)
        })
        .collect();
    if scores.is_empty() {
        return Err(Error::UndefinedMetric(
            "NDCG needs at least one group with a positive".into(),
        ));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Mean clipped binary cross-entropy over all instances, ungrouped.
pub fn log_loss(pairs: &[(f64, u8)]) -> Result<f64> {
    let (preds, labels): (Vec<f64>, Vec<u8>) = pairs.iter().copied().unzip();
    bce_loss(&preds, &labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn group(items: &[(f64, u8)]) -> ScoredGroup {
        ScoredGroup::new("u", items.to_vec())
    }

    #[test]
    fn auc_separable() {
        let g = vec![group(&[(0.9, 1), (0.1, 0)])];
        assert_eq!(group_auc(&g).unwrap(), 1.0);
    }

    #[test]
    fn auc_mean_over_users() {
        let g = vec![
            group(&[(0.9, 1), (0.1, 0)]), // AUC 1
            group(&[(0.1, 1), (0.9, 0)]), // AUC 0
        ];
        assert_eq!(group_auc(&g).unwrap(), 0.5);
    }

    #[test]
    fn auc_ties_half() {
        let g = vec![group(&[(0.5, 1), (0.5, 0)])];
        assert_eq!(group_auc(&g).unwrap(), 0.5);
    }

    #[test]
    fn auc_skips_single_class_users() {
        let g = vec![group(&[(0.9, 1)]), group(&[(0.8, 1), (0.2, 0)])];
        assert_eq!(group_auc(&g).unwrap(), 1.0);
        assert!(group_auc(&[group(&[(0.9, 1)])]).is_err());
    }

    #[test]
    fn ndcg_anchors() {
        // single positive ranked first
        let g = vec![group(&[(0.9, 1), (0.5, 0), (0.1, 0)])];
        assert_eq!(ndcg_at_k(&g, 3).unwrap(), 1.0);
        // single positive ranked second: 1/log2(3)
        let g = vec![group(&[(0.9, 0), (0.5, 1), (0.1, 0)])];
        let expect = 1.0 / 3f64.log2();
        assert!((ndcg_at_k(&g, 3).unwrap() - expect).abs() < 1e-12);
        assert!((expect - 0.6309).abs() < 1e-4);
    }

    #[test]
    fn ndcg_stable_ties_keep_input_order() {
        // Tie between a leading negative and the positive: input order wins.
        let g = vec![group(&[(0.5, 0), (0.5, 1)])];
        let expect = 1.0 / 3f64.log2();
        assert!((ndcg_at_k(&g, 3).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn ndcg_skips_groups_without_positives() {
        let g = vec![group(&[(0.9, 0)]), group(&[(0.9, 1), (0.2, 0)])];
        assert_eq!(ndcg_at_k(&g, 3).unwrap(), 1.0);
        assert!(ndcg_at_k(&[group(&[(0.3, 0)])], 3).is_err());
    }

    #[test]
    fn log_loss_anchors() {
        let pairs = vec![(0.5, 1), (0.5, 0)];
        assert!((log_loss(&pairs).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(log_loss(&[(1.0, 1), (0.0, 0)]).unwrap() <= 1e-6);
        assert!(log_loss(&[]).is_err());
    }

    #[test]
    fn log_loss_equals_unregularized_ranker_loss() {
        let pairs = vec![(0.81, 1u8), (0.33, 0), (0.5, 1), (0.02, 0)];
        let (p, l): (Vec<f64>, Vec<u8>) = pairs.iter().copied().unzip();
        let via_ranker =
            crate::ranker::loss(&p, &l, 0.0, &crate::ranker::RankerParams::zeros(1, 1)).unwrap();
        assert_eq!(log_loss(&pairs).unwrap(), via_ranker);
    }

    /// O(n²) pairwise AUC with ties as 0.5 — the independent oracle.
    fn pairwise_auc(items: &[(f64, u8)]) -> Option<f64> {
        let pos: Vec<f64> = items.iter().filter(|x| x.1 == 1).map(|x| x.0).collect();
        let neg: Vec<f64> = items.iter().filter(|x| x.1 == 0).map(|x| x.0).collect();
        if pos.is_empty() || neg.is_empty() {
            return None;
        }
        let mut num = 0.0;
        for &p in &pos {
            for &n in &neg {
                num += if p > n {
                    1.0
                } else if p == n {
                    0.5
                } else {
                    0.0
                };
            }
        }
        Some(num / (pos.len() * neg.len()) as f64)
    }

    /// Ideal DCG@k by exhaustive permutation of the group's labels.
    fn brute_force_ideal_dcg(labels: &[u8], k: usize) -> f64 {
        fn permutations(items: &[u8]) -> Vec<Vec<u8>> {
            if items.len() <= 1 {
                return vec![items.to_vec()];
            }
            let mut out = Vec::new();
            for i in 0..items.len() {
                let mut rest = items.to_vec();
                let head = rest.remove(i);
                for mut tail in permutations(&rest) {
                    tail.insert(0, head);
                    out.push(tail);
                }
            }
            out
        }
        permutations(labels)
            .into_iter()
            .map(|perm| dcg_at_k(perm.into_iter(), k))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn auc_matches_pairwise_oracle_on_random_groups() {
        use rand::{Rng, SeedableRng};
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..300 {
            let n = r.random_range(2..20);
            // coarse score grid to force plenty of ties
            let items: Vec<(f64, u8)> = (0..n)
                .map(|_| {
                    (
                        (r.random_range(0..8) as f64) / 8.0,
                        r.random_range(0..2) as u8,
                    )
                })
                .collect();
            let ours = auc_single(&items);
            let oracle = pairwise_auc(&items);
            match (ours, oracle) {
                (None, None) => {}
                (Some(a), Some(b)) => assert_eq!(a, b, "items {items:?}"),
                other => panic!("qualification disagreement {other:?}"),
            }
        }
    }

    #[test]
    fn ndcg_ideal_matches_brute_force_permutations() {
        use rand::{Rng, SeedableRng};
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(37);
        for _ in 0..100 {
            let n = r.random_range(1..7);
            let labels: Vec<u8> = (0..n).map(|_| r.random_range(0..2) as u8).collect();
            let n_pos = labels.iter().filter(|&&l| l == 1).count();
            if n_pos == 0 {
                continue;
            }
            for k in 1..=3 {
                let ideal = dcg_at_k(std::iter::repeat_n(1u8, n_pos), k);
                let brute = brute_force_ideal_dcg(&labels, k);
                assert!((ideal - brute).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn metrics_invariant_under_monotone_score_transforms() {
        use rand::{Rng, SeedableRng};
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        let groups: Vec<ScoredGroup> = (0..20)
            .map(|u| {
                let n = r.random_range(3..10);
                ScoredGroup::new(
                    format!("u{u}"),
                    (0..n)
                        .map(|_| (r.random_range(-2.0..2.0), r.random_range(0..2) as u8))
                        .collect(),
                )
            })
            .collect();
        let transformed: Vec<ScoredGroup> = groups
            .iter()
            .map(|g| {
                ScoredGroup::new(
                    g.user_id.clone(),
                    g.items
                        .iter()
                        .map(|&(s, l)| (3.0 * s.exp() + 1.0, l))
                        .collect(),
                )
            })
            .collect();
        assert!(
            (group_auc(&groups).unwrap() - group_auc(&transformed).unwrap()).abs() < 1e-12
        );
        assert!(
            (ndcg_at_k(&groups, 3).unwrap() - ndcg_at_k(&transformed, 3).unwrap()).abs() < 1e-12
        );
    }

    #[test]
    fn random_labels_give_gauc_near_half() {
        use rand::{Rng, SeedableRng};
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(43);
        let groups: Vec<ScoredGroup> = (0..1000)
            .map(|u| {
                ScoredGroup::new(
                    format!("u{u}"),
                    (0..10)
                        .map(|_| (r.random_range(0.0..1.0), r.random_range(0..2) as u8))
                        .collect(),
                )
            })
            .collect();
        let auc = group_auc(&groups).unwrap();
        assert!((auc - 0.5).abs() < 0.05, "gAUC {auc} not near 0.5");
        assert!((0.0..=1.0).contains(&auc));
    }
}
