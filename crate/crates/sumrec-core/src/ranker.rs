//! User–item preference scorer: [u, v] through a two-layer fully connected
//! network with ReLU, sigmoid output, plus the regularized log-likelihood
//! training loss.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{affine, relu, sigmoid, Matrix, TensorSet, Vector};

/// Predicted probabilities are clipped into [1e-7, 1−1e-7] before logs.
pub const PRED_CLIP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct RankerParams {
    /// First layer over the concatenated [u, v] (H × 2D).
    pub w1: Matrix,
    pub b1: Vector,
    /// Output unit (length H).
    pub w2: Vector,
    pub b2: f64,
}

impl RankerParams {
    pub fn zeros(d: usize, hidden: usize) -> Self {
        RankerParams {
            w1: Matrix::zeros(hidden, 2 * d),
            b1: Vector::zeros(hidden),
            w2: Vector::zeros(hidden),
            b2: 0.0,
        }
    }

    pub fn init(d: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut p = RankerParams::zeros(d, hidden);
        let bound1 = (6.0 / (2 * d + hidden) as f64).sqrt();
        for v in p.w1.as_mut_slice() {
            *v = rng.random_range(-bound1..bound1);
        }
        let bound2 = (6.0 / (hidden + 1) as f64).sqrt();
        for v in p.w2.as_mut_slice() {
            *v = rng.random_range(-bound2..bound2);
        }
        p
    }

    pub fn d(&self) -> usize {
        self.w1.cols() / 2
    }

    pub fn hidden(&self) -> usize {
        self.w1.rows()
    }
}

impl TensorSet for RankerParams {
    fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("ranker_w1", self.w1.as_slice()),
            ("ranker_b1", self.b1.as_slice()),
            ("ranker_w2", self.w2.as_slice()),
            ("ranker_b2", std::slice::from_ref(&self.b2)),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("ranker_w1", self.w1.as_mut_slice()),
            ("ranker_b1", self.b1.as_mut_slice()),
            ("ranker_w2", self.w2.as_mut_slice()),
            ("ranker_b2", std::slice::from_mut(&mut self.b2)),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct ScoreCache {
    pub u: Vector,
    pub v: Vector,
    pub pre1: Vector,
    pub a1: Vector,
    pub y_hat: f64,
}

/// ŷ = σ(W2·relu(W1·[u,v] + b1) + b2)
pub fn score(params: &RankerParams, u: &Vector, v: &Vector) -> Result<f64> {
    Ok(score_with_cache(params, u, v)?.y_hat)
}

pub fn score_with_cache(params: &RankerParams, u: &Vector, v: &Vector) -> Result<ScoreCache> {
    let d = params.d();
    if u.len() != d || v.len() != d {
        return Err(Error::shape(
            "ranker score",
            format!("u,v of dim {d}"),
            format!("{},{}", u.len(), v.len()),
        ));
    }
    let cat = Vector::concat(u, v);
    let pre1 = affine(&params.w1, &cat, &params.b1)?;
    let a1 = pre1.map(relu);
    let logit = params.w2.dot(&a1)? + params.b2;
    let y_hat = sigmoid(logit);
    Ok(ScoreCache {
        u: u.clone(),
        v: v.clone(),
        pre1,
        a1,
        y_hat,
    })
}

/// Backward from the logit gradient (for BCE this is (ŷ − y)/N per sample).
/// Accumulates ranker gradients and returns (du, dv).
pub fn score_backward(
    params: &RankerParams,
    cache: &ScoreCache,
    d_logit: f64,
    grads: &mut RankerParams,
) -> Result<(Vector, Vector)> {
    let d = params.d();
    let hidden = params.hidden();

    // logit = w2·a1 + b2
    grads.w2.axpy(d_logit, &cache.a1)?;
    grads.b2 += d_logit;

    // a1 = relu(pre1)
    let mut dpre1 = Vector::zeros(hidden);
    for i in 0..hidden {
        if cache.pre1[i] > 0.0 {
            dpre1[i] = d_logit * params.w2[i];
        }
    }

    let cat = Vector::concat(&cache.u, &cache.v);
    grads.w1.outer_acc(&dpre1, &cat)?;
    grads.b1.axpy(1.0, &dpre1)?;
    let mut dcat = Vector::zeros(2 * d);
    params.w1.matvec_t_acc(&dpre1, &mut dcat)?;

    let du = Vector::from_raw(dcat.as_slice()[..d].to_vec());
    let dv = Vector::from_raw(dcat.as_slice()[d..].to_vec());
    Ok((du, dv))
}

/// Mean binary cross-entropy over (ŷ, y) pairs plus λ‖Θ‖² over every
/// trainable tensor. Labels must be exactly 0 or 1.
pub fn loss<P: TensorSet>(
    predictions: &[f64],
    labels: &[u8],
    lambda: f64,
    all_params: &P,
) -> Result<f64> {
    let data = bce_loss(predictions, labels)?;
    Ok(data + lambda * all_params.squared_l2())
}

/// Mean clipped binary cross-entropy.
pub fn bce_loss(predictions: &[f64], labels: &[u8]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "loss needs matched nonempty predictions/labels, got {}/{}",
            predictions.len(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (&p, &y) in predictions.iter().zip(labels) {
        if y > 1 {
            return Err(Error::InvalidInput(format!("label {y} is not binary")));
        }
        if !p.is_finite() {
            return Err(Error::NonFinite {
                context: "loss prediction".into(),
            });
        }
        let p = p.clamp(PRED_CLIP, 1.0 - PRED_CLIP);
        total -= if y == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(total / predictions.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec64(v: &[f64]) -> Vector {
        Vector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn zero_weights_score_half() {
        let p = RankerParams::zeros(3, 8);
        let y = score(&p, &vec64(&[1.0, 2.0, 3.0]), &vec64(&[-1.0, 0.0, 1.0])).unwrap();
        assert_eq!(y, 0.5);
    }

    #[test]
    fn large_bias_saturates() {
        let mut p = RankerParams::zeros(2, 4);
        p.b2 = 20.0;
        let y = score(&p, &Vector::zeros(2), &Vector::zeros(2)).unwrap();
        assert!(y > 0.999);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let p = RankerParams::zeros(3, 4);
        assert!(score(&p, &Vector::zeros(2), &Vector::zeros(3)).is_err());
    }

    #[test]
    fn loss_anchors() {
        // ŷ=0.5, y=1, λ=0 → ln 2
        let p = RankerParams::zeros(2, 2);
        let l = loss(&[0.5], &[1], 0.0, &p).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);

        // perfect fit after clipping
        let l = loss(&[1.0, 0.0], &[1, 0], 0.0, &p).unwrap();
        assert!(l <= 1e-6);

        // pure L2: single weight 2.0, λ=0.01, data term as good as it gets
        let mut p = RankerParams::zeros(1, 1);
        p.b2 = 2.0;
        let data = bce_loss(&[1.0], &[1]).unwrap();
        let l = loss(&[1.0], &[1], 0.01, &p).unwrap();
        assert!((l - data - 0.04).abs() < 1e-12);
    }

    #[test]
    fn loss_rejects_bad_labels() {
        let p = RankerParams::zeros(1, 1);
        assert!(loss(&[0.5], &[2], 0.0, &p).is_err());
        assert!(loss(&[], &[], 0.0, &p).is_err());
    }

    #[test]
    fn loss_label_swap_symmetry() {
        let l1 = bce_loss(&[0.73], &[1]).unwrap();
        let l0 = bce_loss(&[1.0 - 0.73], &[0]).unwrap();
        assert!((l1 - l0).abs() < 1e-12);
    }

    #[test]
    fn logit_gradient_is_residual() {
        // d(BCE)/d(logit) = ŷ − y, checked against central differences.
        let logit = 0.37;
        let y = 1u8;
        let f = |l: f64| bce_loss(&[sigmoid(l)], &[y]).unwrap();
        let h = 1e-6;
        let numeric = (f(logit + h) - f(logit - h)) / (2.0 * h);
        let analytic = sigmoid(logit) - 1.0;
        assert!((numeric - analytic).abs() < 1e-8);
    }
}
