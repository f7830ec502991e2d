use crate::error::{Error, Result};
use crate::numerics::Vector;

/// Writing-channel utilization. For each user, the fraction of content
/// channels that were the argmax of at least one write-attention vector,
/// averaged over users. The last index of each attention vector is treated
/// as the highway channel and excluded from both the argmax domain and the
/// denominator. Empty traces are excluded from the average.
pub fn channel_utilization(traces: &[Vec<Vector>], k: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::InvalidInput(
            "utilization needs at least one content channel".into(),
        ));
    }
    let n_content = k - 1;
    let mut total = 0.0;
    let mut users = 0usize;
    for trace in traces {
        if trace.is_empty() {
            continue;
        }
        let mut hit = vec![false; n_content];
        for z in trace {
            if z.len() != k {
                return Err(Error::shape("utilization trace", k, z.len()));
            }
            let mut best = 0usize;
            for c in 1..n_content {
                if z[c] > z[best] {
                    best = c;
                }
            }
            hit[best] = true;
        }
        let distinct = hit.iter().filter(|&&h| h).count();
        total += distinct as f64 / n_content as f64;
        users += 1;
    }
    if users == 0 {
        return Err(Error::UndefinedMetric(
            "utilization over empty traces".into(),
        ));
    }
    Ok(total / users as f64)
}

/// Cumulative readout-attention profile: sums the read-attention vectors
/// over all positive instances and normalizes the per-channel totals to
/// sum to 1.
pub fn readout_attention_profile(traces: &[Vector], k: usize) -> Result<Vector> {
    if traces.is_empty() {
        return Err(Error::InvalidInput("no readout traces".into()));
    }
    let mut acc = Vector::zeros(k);
    for z in traces {
        if z.len() != k {
            return Err(Error::shape("readout trace", k, z.len()));
        }
        acc.axpy(1.0, z)?;
    }
    let total = acc.sum();
    if total <= 0.0 {
        return Err(Error::InvalidInput("readout traces sum to zero".into()));
    }
    acc.scale(1.0 / total);
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(s: &[f64]) -> Vector {
        Vector::new(s.to_vec()).unwrap()
    }

    #[test]
    fn utilization_single_channel_hit() {
        // All events routed to one content channel at K=5 → 1/(5−1)
        let trace = vec![vec![
            v(&[0.9, 0.03, 0.03, 0.04, 1.0]),
            v(&[0.8, 0.1, 0.05, 0.05, 1.0]),
        ]];
        assert_eq!(channel_utilization(&trace, 5).unwrap(), 0.25);
    }

    #[test]
    fn utilization_full_spread() {
        let trace = vec![vec![
            v(&[0.9, 0.0, 0.0, 0.0, 1.0]),
            v(&[0.0, 0.9, 0.0, 0.0, 1.0]),
            v(&[0.0, 0.0, 0.9, 0.0, 1.0]),
            v(&[0.0, 0.0, 0.0, 0.9, 1.0]),
        ]];
        assert_eq!(channel_utilization(&trace, 5).unwrap(), 1.0);
    }

    #[test]
    fn utilization_skips_empty_traces() {
        let traces = vec![vec![], vec![v(&[0.9, 0.1, 1.0])]];
        assert_eq!(channel_utilization(&traces, 3).unwrap(), 0.5);
        assert!(channel_utilization(&[vec![], vec![]], 3).is_err());
    }

    #[test]
    fn utilization_ignores_highway_even_when_largest() {
        // Highway entry is 1.0 > any content entry; argmax must stay on content.
        let trace = vec![vec![v(&[0.2, 0.8, 1.0])]];
        assert_eq!(channel_utilization(&trace, 3).unwrap(), 0.5);
    }

    #[test]
    fn profile_uniform() {
        let traces = vec![v(&[0.25; 4]), v(&[0.25; 4])];
        let prof = readout_attention_profile(&traces, 4).unwrap();
        for &x in prof.iter() {
            assert!((x - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn profile_single_instance_is_normalized_z() {
        let traces = vec![v(&[0.2, 0.3, 0.5])];
        let prof = readout_attention_profile(&traces, 3).unwrap();
        assert!((prof[0] - 0.2).abs() < 1e-15);
        assert!((prof[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn profile_two_onehot_instances() {
        let traces = vec![v(&[1.0, 0.0]), v(&[0.0, 1.0])];
        let prof = readout_attention_profile(&traces, 2).unwrap();
        assert_eq!(prof.as_slice(), &[0.5, 0.5]);
    }
}
