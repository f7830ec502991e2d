use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{
    affine, affine_backward, cosine, cosine_backward, sigmoid, sigmoid_vec, softmax_scaled,
    softmax_scaled_backward, tanh_vec, Matrix, TensorSet, Vector,
};

use super::{AblationFlags, MemoryState};

/// Trainable debuff base stays inside this interval (clamped after each
/// optimizer step) so α^sim remains well-defined and bounded.
pub const ALPHA_MIN: f64 = 1e-3;
pub const ALPHA_MAX: f64 = 1.499;
pub const ALPHA_INIT: f64 = 0.98;

/// Structural hyperparameters of the multi-channel encoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SumConfig {
    pub d: usize,
    pub k: usize,
    pub beta_write: f64,
    pub beta_read: f64,
    pub flags: AblationFlags,
}

impl SumConfig {
    pub fn new(d: usize, k: usize, flags: AblationFlags) -> Self {
        SumConfig {
            d,
            k,
            beta_write: 1.0,
            beta_read: 1.0,
            flags,
        }
    }

    /// Channels the writing softmax spans: all K, or K−1 when the last
    /// channel is reserved as the highway.
    pub fn n_content(&self) -> usize {
        if self.flags.highway_channel {
            self.k - 1
        } else {
            self.k
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidConfig("d must be >= 1".into()));
        }
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be >= 1".into()));
        }
        if self.flags.highway_channel && self.k < 2 {
            return Err(Error::InvalidConfig(
                "highway channel requires k >= 2 (at least one content channel)".into(),
            ));
        }
        if !(self.beta_write > 0.0 && self.beta_write.is_finite()) {
            return Err(Error::InvalidConfig("beta_write must be positive".into()));
        }
        if !(self.beta_read > 0.0 && self.beta_read.is_finite()) {
            return Err(Error::InvalidConfig("beta_read must be positive".into()));
        }
        Ok(())
    }
}

/// All trainable tensors of the encoder. The event-only writer tensors
/// (`*_ev`) and the legacy reading head table are always allocated so a
/// checkpoint's tensor map does not depend on the ablation flags; whichever
/// set is unused by the active flags receives exactly zero gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct SumParams {
    /// Writing heads, one row per content channel.
    pub f_w: Matrix,
    /// Reading transform (D×D).
    pub f_r: Matrix,
    /// Legacy reading head table, one row per channel (K×D).
    pub f_r_legacy: Matrix,
    /// Instance-aware writer: add/erase act on [x, merged state].
    pub w_add: Matrix,
    pub b_add: Vector,
    pub w_erase: Matrix,
    pub b_erase: Vector,
    pub w_reset: Vector,
    pub b_reset: f64,
    /// Event-only writer used when instance-level attention is disabled.
    pub w_add_ev: Matrix,
    pub b_add_ev: Vector,
    pub w_erase_ev: Matrix,
    pub b_erase_ev: Vector,
    /// Local proximity debuff base.
    pub alpha: f64,
}

impl SumParams {
    pub fn zeros(cfg: &SumConfig) -> Self {
        let d = cfg.d;
        SumParams {
            f_w: Matrix::zeros(cfg.n_content(), d),
            f_r: Matrix::zeros(d, d),
            f_r_legacy: Matrix::zeros(cfg.k, d),
            w_add: Matrix::zeros(d, 2 * d),
            b_add: Vector::zeros(d),
            w_erase: Matrix::zeros(d, 2 * d),
            b_erase: Vector::zeros(d),
            w_reset: Vector::zeros(2 * d),
            b_reset: 0.0,
            w_add_ev: Matrix::zeros(d, d),
            b_add_ev: Vector::zeros(d),
            w_erase_ev: Matrix::zeros(d, d),
            b_erase_ev: Vector::zeros(d),
            alpha: 0.0,
        }
    }

    /// Xavier-uniform weights, zero biases, α at its nominal init.
    pub fn init(cfg: &SumConfig, rng: &mut impl Rng) -> Self {
        let mut p = SumParams::zeros(cfg);
        init_matrix(&mut p.f_w, rng);
        init_matrix(&mut p.f_r, rng);
        init_matrix(&mut p.f_r_legacy, rng);
        init_matrix(&mut p.w_add, rng);
        init_matrix(&mut p.w_erase, rng);
        init_slice(p.w_reset.as_mut_slice(), 2 * cfg.d, 1, rng);
        init_matrix(&mut p.w_add_ev, rng);
        init_matrix(&mut p.w_erase_ev, rng);
        p.alpha = ALPHA_INIT;
        p
    }

    pub fn validate(&self, cfg: &SumConfig) -> Result<()> {
        let d = cfg.d;
        let checks = [
            ("f_w", self.f_w.rows(), self.f_w.cols(), cfg.n_content(), d),
            ("f_r", self.f_r.rows(), self.f_r.cols(), d, d),
            (
                "f_r_legacy",
                self.f_r_legacy.rows(),
                self.f_r_legacy.cols(),
                cfg.k,
                d,
            ),
            ("w_add", self.w_add.rows(), self.w_add.cols(), d, 2 * d),
            ("w_erase", self.w_erase.rows(), self.w_erase.cols(), d, 2 * d),
            ("w_add_ev", self.w_add_ev.rows(), self.w_add_ev.cols(), d, d),
            (
                "w_erase_ev",
                self.w_erase_ev.rows(),
                self.w_erase_ev.cols(),
                d,
                d,
            ),
        ];
        for (name, r, c, er, ec) in checks {
            if r != er || c != ec {
                return Err(Error::shape(
                    "sum params",
                    format!("{name} {er}x{ec}"),
                    format!("{r}x{c}"),
                ));
            }
        }
        if self.w_reset.len() != 2 * d || self.b_add.len() != d || self.b_erase.len() != d {
            return Err(Error::shape("sum params", "gate vectors", "mismatch"));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::InvalidConfig("alpha must be positive".into()));
        }
        Ok(())
    }
}

fn init_matrix(m: &mut Matrix, rng: &mut impl Rng) {
    let (fan_out, fan_in) = (m.rows(), m.cols());
    init_slice(m.as_mut_slice(), fan_in, fan_out, rng);
}

fn init_slice(s: &mut [f64], fan_in: usize, fan_out: usize, rng: &mut impl Rng) {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in s {
        *v = rng.random_range(-bound..bound);
    }
}

impl TensorSet for SumParams {
    fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("f_w", self.f_w.as_slice()),
            ("f_r", self.f_r.as_slice()),
            ("f_r_legacy", self.f_r_legacy.as_slice()),
            ("w_add", self.w_add.as_slice()),
            ("b_add", self.b_add.as_slice()),
            ("w_erase", self.w_erase.as_slice()),
            ("b_erase", self.b_erase.as_slice()),
            ("w_reset", self.w_reset.as_slice()),
            ("b_reset", std::slice::from_ref(&self.b_reset)),
            ("w_add_ev", self.w_add_ev.as_slice()),
            ("b_add_ev", self.b_add_ev.as_slice()),
            ("w_erase_ev", self.w_erase_ev.as_slice()),
            ("b_erase_ev", self.b_erase_ev.as_slice()),
            ("alpha", std::slice::from_ref(&self.alpha)),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        vec![
            ("f_w", self.f_w.as_mut_slice()),
            ("f_r", self.f_r.as_mut_slice()),
            ("f_r_legacy", self.f_r_legacy.as_mut_slice()),
            ("w_add", self.w_add.as_mut_slice()),
            ("b_add", self.b_add.as_mut_slice()),
            ("w_erase", self.w_erase.as_mut_slice()),
            ("b_erase", self.b_erase.as_mut_slice()),
            ("w_reset", self.w_reset.as_mut_slice()),
            ("b_reset", std::slice::from_mut(&mut self.b_reset)),
            ("w_add_ev", self.w_add_ev.as_mut_slice()),
            ("b_add_ev", self.b_add_ev.as_mut_slice()),
            ("w_erase_ev", self.w_erase_ev.as_mut_slice()),
            ("b_erase_ev", self.b_erase_ev.as_mut_slice()),
            ("alpha", std::slice::from_mut(&mut self.alpha)),
        ]
    }
}

/// Everything the backward pass of one write needs.
#[derive(Debug, Clone)]
pub struct WriteCache {
    pub x: Vector,
    pub prev_x: Option<Vector>,
    pub h_old: Matrix,
    /// Content softmax before the debuff.
    pub p: Vector,
    pub sim: f64,
    pub factor: f64,
    pub debuff_active: bool,
    /// Full write-attention vector over K channels.
    pub z: Vector,
    /// Merged state (instance-aware writer only).
    pub h_hat: Option<Vector>,
    pub reset: f64,
    pub add: Vector,
    pub erase: Vector,
}

/// Cache for backpropagating the read.
#[derive(Debug, Clone)]
pub struct ReadCache {
    pub v: Vector,
    pub h: Matrix,
    /// Transform read: q = F_rᵀ v. Absent for the legacy head-table read.
    pub q: Option<Vector>,
    pub z: Vector,
}

#[derive(Debug, Clone)]
pub struct SumEncoder {
    pub cfg: SumConfig,
    pub params: SumParams,
}

impl SumEncoder {
    pub fn new(cfg: SumConfig, params: SumParams) -> Result<Self> {
        cfg.validate()?;
        params.validate(&cfg)?;
        Ok(SumEncoder { cfg, params })
    }

    pub fn init(cfg: SumConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let params = SumParams::init(&cfg, rng);
        Ok(SumEncoder { cfg, params })
    }

    pub fn init_state(&self) -> MemoryState {
        MemoryState::zeros(self.cfg.k, self.cfg.d)
    }

    /// Writing attention over the K channels: a scaled softmax of head
    /// scores over the content channels, a constant 1 on the highway, and
    /// the proximity debuff α^cos(x, prev_x) applied to content entries.
    pub fn write_attention(&self, x: &Vector, prev_x: Option<&Vector>) -> Result<Vector> {
        let (_, _, _, _, z) = self.attention_parts(x, prev_x)?;
        Ok(z)
    }

    /// Returns (scores, content softmax, sim, factor, full z).
    fn attention_parts(
        &self,
        x: &Vector,
        prev_x: Option<&Vector>,
    ) -> Result<(Vector, Vector, f64, f64, Vector)> {
        let cfg = &self.cfg;
        if x.len() != cfg.d {
            return Err(Error::shape("write_attention", cfg.d, x.len()));
        }
        let n_content = cfg.n_content();
        let scores = self.params.f_w.matvec(x)?;
        let p = softmax_scaled(&scores, cfg.beta_write)?;

        let (sim, factor) = match prev_x {
            Some(px) if cfg.flags.local_proximity_debuff => {
                if px.len() != cfg.d {
                    return Err(Error::shape("write_attention prev_x", cfg.d, px.len()));
                }
                let sim = cosine(x, px)?;
                (sim, self.params.alpha.powf(sim))
            }
            _ => (0.0, 1.0),
        };

        let mut z = Vector::zeros(cfg.k);
        for c in 0..n_content {
            z[c] = p[c] * factor;
        }
        if cfg.flags.highway_channel {
            z[cfg.k - 1] = 1.0;
        }
        Ok((scores, p, sim, factor, z))
    }

    /// One erase-and-add update. Each bit of channel k moves to
    /// add·q + old·(1−q) with q = min(erase·z_k, 1); z_k can exceed 1 when
    /// the debuff factor is above 1, so q is capped to keep the update a
    /// true interpolation.
    pub fn write(&self, state: &MemoryState, x: &Vector) -> Result<(MemoryState, WriteCache)> {
        let cfg = &self.cfg;
        state.validate(cfg.k, cfg.d)?;
        let (_, p, sim, factor, z) = self.attention_parts(x, state.prev_x.as_ref())?;
        let debuff_active = cfg.flags.local_proximity_debuff && state.prev_x.is_some();

        let (h_hat, reset, add, erase) = if cfg.flags.instance_level_attention {
            let mut h_hat = Vector::zeros(cfg.d);
            for k in 0..cfg.k {
                let hk = state.channels.row(k);
                let zk = z[k];
                for (acc, &h) in h_hat.as_mut_slice().iter_mut().zip(hk) {
                    *acc += zk * h;
                }
            }
            let cat = Vector::concat(x, &h_hat);
            let reset = sigmoid(self.params.w_reset.dot(&cat)? + self.params.b_reset);
            let mut gated = h_hat.clone();
            gated.scale(reset);
            let catr = Vector::concat(x, &gated);
            let add = tanh_vec(&affine(&self.params.w_add, &catr, &self.params.b_add)?);
            let erase = sigmoid_vec(&affine(&self.params.w_erase, &cat, &self.params.b_erase)?);
            (Some(h_hat), reset, add, erase)
        } else {
            let add = tanh_vec(&affine(&self.params.w_add_ev, x, &self.params.b_add_ev)?);
            let erase = sigmoid_vec(&affine(&self.params.w_erase_ev, x, &self.params.b_erase_ev)?);
            (None, 0.0, add, erase)
        };

        let mut channels = state.channels.clone();
        for k in 0..cfg.k {
            let zk = z[k];
            let row = channels.row_mut(k);
            for i in 0..cfg.d {
                let q = (erase[i] * zk).min(1.0);
                row[i] = add[i] * q + row[i] * (1.0 - q);
            }
        }
        if !channels.is_finite() {
            return Err(Error::NonFinite {
                context: "memory write".into(),
            });
        }

        let next = MemoryState {
            channels,
            prev_x: Some(x.clone()),
            steps: state.steps + 1,
        };
        let cache = WriteCache {
            x: x.clone(),
            prev_x: state.prev_x.clone(),
            h_old: state.channels.clone(),
            p,
            sim,
            factor,
            debuff_active,
            z,
            h_hat,
            reset,
            add,
            erase,
        };
        Ok((next, cache))
    }

    /// Reads the state into one user vector conditioned on candidate v.
    /// Transform read scores each channel by vᵀ F_r h_k; the legacy read
    /// scores by v·f_k against the head table. Softmax spans all K channels,
    /// highway included.
    pub fn read(&self, state: &MemoryState, v: &Vector) -> Result<(Vector, ReadCache)> {
        let cfg = &self.cfg;
        state.validate(cfg.k, cfg.d)?;
        if v.len() != cfg.d {
            return Err(Error::shape("read", cfg.d, v.len()));
        }

        let (q, w) = if cfg.flags.legacy_read {
            (None, self.params.f_r_legacy.matvec(v)?)
        } else {
            let mut q = Vector::zeros(cfg.d);
            self.params.f_r.matvec_t_acc(v, &mut q)?;
            let mut w = Vector::zeros(cfg.k);
            for k in 0..cfg.k {
                w[k] = crate::numerics::dot(state.channels.row(k), q.as_slice());
            }
            (Some(q), w)
        };

        let z = softmax_scaled(&w, cfg.beta_read)?;
        let mut u = Vector::zeros(cfg.d);
        for k in 0..cfg.k {
            let zk = z[k];
            for (acc, &h) in u.as_mut_slice().iter_mut().zip(state.channels.row(k)) {
                *acc += zk * h;
            }
        }
        let cache = ReadCache {
            v: v.clone(),
            h: state.channels.clone(),
            q,
            z,
        };
        Ok((u, cache))
    }

    /// Backward through one write. Accumulates parameter gradients into
    /// `grads`, returns the gradient w.r.t. the previous state, and — when
    /// `want_input_grads` — the gradients w.r.t. x and prev_x (the latter
    /// flows through the debuff cosine).
    pub fn write_backward(
        &self,
        cache: &WriteCache,
        d_next: &Matrix,
        grads: &mut SumParams,
        want_input_grads: bool,
    ) -> Result<(Matrix, Option<(Vector, Option<Vector>)>)> {
        let cfg = &self.cfg;
        let d = cfg.d;
        let k_total = cfg.k;
        let n_content = cfg.n_content();
        let p = &self.params;

        let mut d_h_old = Matrix::zeros(k_total, d);
        let mut da = Vector::zeros(d);
        let mut de = Vector::zeros(d);
        let mut dz = Vector::zeros(k_total);
        let mut dx = Vector::zeros(d);

        // Eq. update: h' = add·q + h·(1−q), q = min(erase·z_k, 1)
        for k in 0..k_total {
            let zk = cache.z[k];
            let dn = d_next.row(k);
            let ho = cache.h_old.row(k);
            let dho = d_h_old.row_mut(k);
            for i in 0..d {
                let raw = cache.erase[i] * zk;
                let q = raw.min(1.0);
                da[i] += dn[i] * q;
                dho[i] += dn[i] * (1.0 - q);
                if raw < 1.0 {
                    let dq = dn[i] * (cache.add[i] - ho[i]);
                    de[i] += dq * zk;
                    dz[k] += dq * cache.erase[i];
                }
            }
        }

        // Gates
        let mut dh_hat = Vector::zeros(d);
        if cfg.flags.instance_level_attention {
            let h_hat = cache.h_hat.as_ref().expect("instance cache");
            let cat = Vector::concat(&cache.x, h_hat);
            let mut gated = h_hat.clone();
            gated.scale(cache.reset);
            let catr = Vector::concat(&cache.x, &gated);

            // add = tanh(W_add catr + b_add)
            let dpre_a = Vector::from_raw(
                da.iter()
                    .zip(cache.add.iter())
                    .map(|(&g, &a)| g * (1.0 - a * a))
                    .collect(),
            );
            let dcatr = affine_backward(&p.w_add, &catr, &dpre_a, &mut grads.w_add, &mut grads.b_add)?;
            for i in 0..d {
                dx[i] += dcatr[i];
            }
            let drh = &dcatr.as_slice()[d..2 * d];
            let mut dreset = 0.0;
            for i in 0..d {
                dreset += drh[i] * h_hat[i];
                dh_hat[i] += drh[i] * cache.reset;
            }

            // erase = σ(W_erase cat + b_erase)
            let dpre_e = Vector::from_raw(
                de.iter()
                    .zip(cache.erase.iter())
                    .map(|(&g, &e)| g * e * (1.0 - e))
                    .collect(),
            );
            let mut dcat =
                affine_backward(&p.w_erase, &cat, &dpre_e, &mut grads.w_erase, &mut grads.b_erase)?;

            // reset = σ(w_reset·cat + b_reset)
            let dpre_r = dreset * cache.reset * (1.0 - cache.reset);
            grads.w_reset.axpy(dpre_r, &cat)?;
            grads.b_reset += dpre_r;
            dcat.axpy(dpre_r, &p.w_reset)?;

            for i in 0..d {
                dx[i] += dcat[i];
                dh_hat[i] += dcat[d + i];
            }

            // h_hat = Σ_k z_k h_k
            for k in 0..k_total {
                let hk = cache.h_old.row(k);
                let zk = cache.z[k];
                let dho = d_h_old.row_mut(k);
                let mut acc = 0.0;
                for i in 0..d {
                    acc += dh_hat[i] * hk[i];
                    dho[i] += zk * dh_hat[i];
                }
                dz[k] += acc;
            }
        } else {
            let dpre_a = Vector::from_raw(
                da.iter()
                    .zip(cache.add.iter())
                    .map(|(&g, &a)| g * (1.0 - a * a))
                    .collect(),
            );
            let dxa = affine_backward(
                &p.w_add_ev,
                &cache.x,
                &dpre_a,
                &mut grads.w_add_ev,
                &mut grads.b_add_ev,
            )?;
            dx.axpy(1.0, &dxa)?;
            let dpre_e = Vector::from_raw(
                de.iter()
                    .zip(cache.erase.iter())
                    .map(|(&g, &e)| g * e * (1.0 - e))
                    .collect(),
            );
            let dxe = affine_backward(
                &p.w_erase_ev,
                &cache.x,
                &dpre_e,
                &mut grads.w_erase_ev,
                &mut grads.b_erase_ev,
            )?;
            dx.axpy(1.0, &dxe)?;
        }

        // Attention: z_c = p_c · factor on content channels; highway z is the
        // constant 1 and absorbs no gradient.
        let mut dp = Vector::zeros(n_content);
        let mut dfactor = 0.0;
        for c in 0..n_content {
            dp[c] = dz[c] * cache.factor;
            dfactor += dz[c] * cache.p[c];
        }

        let mut dprev_x = cache.prev_x.as_ref().map(|px| Vector::zeros(px.len()));
        if cache.debuff_active {
            // factor = α^sim
            grads.alpha += dfactor * cache.sim * p.alpha.powf(cache.sim - 1.0);
            if want_input_grads {
                let dsim = dfactor * p.alpha.ln() * cache.factor;
                let px = cache.prev_x.as_ref().expect("debuff cache");
                let dpx = dprev_x.as_mut().expect("debuff grad");
                cosine_backward(&cache.x, px, dsim, &mut dx, dpx)?;
            }
        }

        // softmax over content scores, then scores s_c = f_w[c]·x
        let ds = softmax_scaled_backward(&cache.p, &dp, cfg.beta_write)?;
        for c in 0..n_content {
            let dsc = ds[c];
            grads
                .f_w
                .row_mut(c)
                .iter_mut()
                .zip(cache.x.iter())
                .for_each(|(g, &xv)| *g += dsc * xv);
            if want_input_grads {
                dx.as_mut_slice()
                    .iter_mut()
                    .zip(p.f_w.row(c))
                    .for_each(|(g, &fv)| *g += dsc * fv);
            }
        }

        let input = want_input_grads.then_some((dx, dprev_x));
        Ok((d_h_old, input))
    }

    /// Backward through the read given the gradient w.r.t. u.
    pub fn read_backward(
        &self,
        cache: &ReadCache,
        du: &Vector,
        grads: &mut SumParams,
        want_input_grads: bool,
    ) -> Result<(Matrix, Option<Vector>)> {
        let cfg = &self.cfg;
        let d = cfg.d;
        let k_total = cfg.k;
        let mut dh = Matrix::zeros(k_total, d);
        let mut dz = Vector::zeros(k_total);

        // u = Σ_k z_k h_k
        for k in 0..k_total {
            let hk = cache.h.row(k);
            let zk = cache.z[k];
            let dhk = dh.row_mut(k);
            let mut acc = 0.0;
            for i in 0..d {
                acc += du[i] * hk[i];
                dhk[i] += zk * du[i];
            }
            dz[k] = acc;
        }

        let dw = softmax_scaled_backward(&cache.z, &dz, cfg.beta_read)?;
        let mut dv = want_input_grads.then(|| Vector::zeros(d));

        if cfg.flags.legacy_read {
            // w_k = f_k · v
            for k in 0..k_total {
                let dwk = dw[k];
                grads
                    .f_r_legacy
                    .row_mut(k)
                    .iter_mut()
                    .zip(cache.v.iter())
                    .for_each(|(g, &vv)| *g += dwk * vv);
                if let Some(dv) = dv.as_mut() {
                    dv.as_mut_slice()
                        .iter_mut()
                        .zip(self.params.f_r_legacy.row(k))
                        .for_each(|(g, &fv)| *g += dwk * fv);
                }
            }
        } else {
            // w_k = q·h_k with q = F_rᵀ v
            let q = cache.q.as_ref().expect("transform cache");
            let mut dq = Vector::zeros(d);
            for k in 0..k_total {
                let dwk = dw[k];
                let hk = cache.h.row(k);
                let dhk = dh.row_mut(k);
                for i in 0..d {
                    dq[i] += dwk * hk[i];
                    dhk[i] += dwk * q[i];
                }
            }
            grads.f_r.outer_acc(&cache.v, &dq)?;
            if let Some(dv) = dv.as_mut() {
                let add = self.params.f_r.matvec(&dq)?;
                dv.axpy(1.0, &add)?;
            }
        }
        Ok((dh, dv))
    }
}
