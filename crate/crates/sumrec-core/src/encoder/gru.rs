use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{
    affine, affine_backward, sigmoid_vec, tanh_vec, Matrix, TensorSet, Vector,
};

use super::MemoryState;

/// Gated recurrent cell over a single D-dimensional state (stored as a
/// 1×D memory matrix so it shares the incremental-update contract).
/// Convention: h' = keep ⊙ h + (1 − keep) ⊙ candidate, so saturating the
/// keep gate's bias preserves the previous state.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_keep: Matrix,
    pub b_keep: Vector,
    pub w_reset: Matrix,
    pub b_reset: Vector,
    pub w_cand: Matrix,
    pub b_cand: Vector,
}

impl GruParams {
    pub fn zeros(d: usize) -> Self {
        GruParams {
            w_keep: Matrix::zeros(d, 2 * d),
            b_keep: Vector::zeros(d),
            w_reset: Matrix::zeros(d, 2 * d),
            b_reset: Vector::zeros(d),
            w_cand: Matrix::zeros(d, 2 * d),
            b_cand: Vector::zeros(d),
        }
    }

    pub fn init(d: usize, rng: &mut impl Rng) -> Self {
        let mut p = GruParams::zeros(d);
        let bound = (6.0 / (3 * d) as f64).sqrt();
        for m in [&mut p.w_keep, &mut p.w_reset, &mut p.w_cand] {
            for v in m.as_mut_slice() {
                *v = rng.random_range(-bound..bound);
            }
        }
        p
    }
}

impl TensorSet for GruParams {
    fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("w_keep", self.w_keep.as_slice()),
            ("b_keep", self.b_keep.as_slice()),
            ("w_reset", self.w_reset.as_slice()),
            ("b_reset", self.b_reset.as_slice()),
            ("w_cand", self.w_cand.as_slice()),
            ("b_cand", self.b_cand.as_slice()),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("w_keep", self.w_keep.as_mut_slice()),
            ("b_keep", self.b_keep.as_mut_slice()),
            ("w_reset", self.w_reset.as_mut_slice()),
            ("b_reset", self.b_reset.as_mut_slice()),
            ("w_cand", self.w_cand.as_mut_slice()),
            ("b_cand", self.b_cand.as_mut_slice()),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct GruCache {
    pub x: Vector,
    pub h_old: Vector,
    pub keep: Vector,
    pub reset: Vector,
    pub cand: Vector,
}

#[derive(Debug, Clone)]
pub struct GruEncoder {
    pub d: usize,
    pub params: GruParams,
}

impl GruEncoder {
    pub fn new(d: usize, params: GruParams) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidConfig("d must be >= 1".into()));
        }
        Ok(GruEncoder { d, params })
    }

    pub fn init(d: usize, rng: &mut impl Rng) -> Result<Self> {
        GruEncoder::new(d, GruParams::init(d, rng))
    }

    pub fn write(&self, state: &MemoryState, x: &Vector) -> Result<(MemoryState, GruCache)> {
        state.validate(1, self.d)?;
        if x.len() != self.d {
            return Err(Error::shape("gru write", self.d, x.len()));
        }
        let h = Vector::from_raw(state.channels.row(0).to_vec());
        let cat = Vector::concat(x, &h);
        let keep = sigmoid_vec(&affine(&self.params.w_keep, &cat, &self.params.b_keep)?);
        let reset = sigmoid_vec(&affine(&self.params.w_reset, &cat, &self.params.b_reset)?);
        let mut gated = Vector::zeros(self.d);
        for i in 0..self.d {
            gated[i] = reset[i] * h[i];
        }
        let catc = Vector::concat(x, &gated);
        let cand = tanh_vec(&affine(&self.params.w_cand, &catc, &self.params.b_cand)?);

        let mut channels = Matrix::zeros(1, self.d);
        {
            let row = channels.row_mut(0);
            for i in 0..self.d {
                row[i] = keep[i] * h[i] + (1.0 - keep[i]) * cand[i];
            }
        }
        if !channels.is_finite() {
            return Err(Error::NonFinite {
                context: "gru write".into(),
            });
        }
        let next = MemoryState {
            channels,
            prev_x: Some(x.clone()),
            steps: state.steps + 1,
        };
        Ok((
            next,
            GruCache {
                x: x.clone(),
                h_old: h,
                keep,
                reset,
                cand,
            },
        ))
    }

    /// A single-vector encoder reads out its state unchanged.
    pub fn read(&self, state: &MemoryState) -> Result<Vector> {
        state.validate(1, self.d)?;
        Ok(Vector::from_raw(state.channels.row(0).to_vec()))
    }

    pub fn write_backward(
        &self,
        cache: &GruCache,
        d_next: &Matrix,
        grads: &mut GruParams,
        want_input_grads: bool,
    ) -> Result<(Matrix, Option<Vector>)> {
        let d = self.d;
        let p = &self.params;
        let dh_new = d_next.row(0);

        let mut dkeep = Vector::zeros(d);
        let mut dcand = Vector::zeros(d);
        let mut dh = Vector::zeros(d);
        for i in 0..d {
            dkeep[i] = dh_new[i] * (cache.h_old[i] - cache.cand[i]);
            dcand[i] = dh_new[i] * (1.0 - cache.keep[i]);
            dh[i] = dh_new[i] * cache.keep[i];
        }

        let cat = Vector::concat(&cache.x, &cache.h_old);
        let mut gated = Vector::zeros(d);
        for i in 0..d {
            gated[i] = cache.reset[i] * cache.h_old[i];
        }
        let catc = Vector::concat(&cache.x, &gated);

        // candidate = tanh(W_cand catc + b_cand)
        let dpre_c = Vector::from_raw(
            dcand
                .iter()
                .zip(cache.cand.iter())
                .map(|(&g, &c)| g * (1.0 - c * c))
                .collect(),
        );
        let dcatc = affine_backward(&p.w_cand, &catc, &dpre_c, &mut grads.w_cand, &mut grads.b_cand)?;
        let mut dx = Vector::zeros(d);
        let mut dreset = Vector::zeros(d);
        for i in 0..d {
            dx[i] += dcatc[i];
            dreset[i] = dcatc[d + i] * cache.h_old[i];
            dh[i] += dcatc[d + i] * cache.reset[i];
        }

        // gates
        let dpre_r = Vector::from_raw(
            dreset
                .iter()
                .zip(cache.reset.iter())
                .map(|(&g, &r)| g * r * (1.0 - r))
                .collect(),
        );
        let mut dcat =
            affine_backward(&p.w_reset, &cat, &dpre_r, &mut grads.w_reset, &mut grads.b_reset)?;
        let dpre_k = Vector::from_raw(
            dkeep
                .iter()
                .zip(cache.keep.iter())
                .map(|(&g, &z)| g * z * (1.0 - z))
                .collect(),
        );
        let dcat_k =
            affine_backward(&p.w_keep, &cat, &dpre_k, &mut grads.w_keep, &mut grads.b_keep)?;
        dcat.axpy(1.0, &dcat_k)?;
        for i in 0..d {
            dx[i] += dcat[i];
            dh[i] += dcat[d + i];
        }

        let mut d_h_old = Matrix::zeros(1, d);
        d_h_old.row_mut(0).copy_from_slice(dh.as_slice());
        Ok((d_h_old, want_input_grads.then_some(dx)))
    }
}
