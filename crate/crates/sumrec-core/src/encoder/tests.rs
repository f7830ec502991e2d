//! Encoder unit tests. The scripted oracles below re-derive every update
//! from the defining formulas with plain loops and stay independent of the
//! implementation code paths they check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numerics::Vector;

fn v(s: &[f64]) -> Vector {
    Vector::new(s.to_vec()).unwrap()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_vec(d: usize, r: &mut ChaCha8Rng) -> Vector {
    Vector::from_raw((0..d).map(|_| r.random_range(-1.0..1.0)).collect())
}

fn flags_from_bits(bits: u8) -> AblationFlags {
    AblationFlags {
        instance_level_attention: bits & 1 != 0,
        local_proximity_debuff: bits & 2 != 0,
        highway_channel: bits & 4 != 0,
        legacy_read: bits & 8 != 0,
    }
}

// ---------- scripted oracles ----------

fn naive_softmax(w: &[f64], beta: f64) -> Vec<f64> {
    let m = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = w.iter().map(|&x| (beta * (x - m)).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|&x| x / s).collect()
}

fn naive_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < 1e-12 || nb < 1e-12 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn naive_sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn mat_rows(m: &crate::numerics::Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

/// Straight-line transcription of one write: attention, debuff, merged
/// state, gates, erase-and-add.
fn oracle_write(
    enc: &SumEncoder,
    h: &[Vec<f64>],
    prev_x: Option<&[f64]>,
    x: &[f64],
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let cfg = &enc.cfg;
    let p = &enc.params;
    let d = cfg.d;
    let k = cfg.k;
    let n_content = if cfg.flags.highway_channel { k - 1 } else { k };

    let fw = mat_rows(&p.f_w);
    let scores: Vec<f64> = (0..n_content)
        .map(|c| (0..d).map(|i| fw[c][i] * x[i]).sum())
        .collect();
    let mut z: Vec<f64> = naive_softmax(&scores, cfg.beta_write);
    if cfg.flags.local_proximity_debuff {
        if let Some(px) = prev_x {
            let sim = naive_cosine(x, px);
            let factor = p.alpha.powf(sim);
            for zc in z.iter_mut() {
                *zc *= factor;
            }
        }
    }
    if cfg.flags.highway_channel {
        z.push(1.0);
    }

    let (add, erase) = if cfg.flags.instance_level_attention {
        let mut h_hat = vec![0.0; d];
        for kk in 0..k {
            for i in 0..d {
                h_hat[i] += z[kk] * h[kk][i];
            }
        }
        let mut cat = x.to_vec();
        cat.extend_from_slice(&h_hat);
        let reset_pre: f64 = (0..2 * d).map(|i| p.w_reset[i] * cat[i]).sum::<f64>() + p.b_reset;
        let reset = naive_sigmoid(reset_pre);
        let mut catr = x.to_vec();
        catr.extend(h_hat.iter().map(|&v| reset * v));
        let wa = mat_rows(&p.w_add);
        let we = mat_rows(&p.w_erase);
        let add: Vec<f64> = (0..d)
            .map(|r| {
                ((0..2 * d).map(|i| wa[r][i] * catr[i]).sum::<f64>() + p.b_add[r]).tanh()
            })
            .collect();
        let erase: Vec<f64> = (0..d)
            .map(|r| {
                naive_sigmoid((0..2 * d).map(|i| we[r][i] * cat[i]).sum::<f64>() + p.b_erase[r])
            })
            .collect();
        (add, erase)
    } else {
        let wa = mat_rows(&p.w_add_ev);
        let we = mat_rows(&p.w_erase_ev);
        let add: Vec<f64> = (0..d)
            .map(|r| ((0..d).map(|i| wa[r][i] * x[i]).sum::<f64>() + p.b_add_ev[r]).tanh())
            .collect();
        let erase: Vec<f64> = (0..d)
            .map(|r| naive_sigmoid((0..d).map(|i| we[r][i] * x[i]).sum::<f64>() + p.b_erase_ev[r]))
            .collect();
        (add, erase)
    };

    let mut out = vec![vec![0.0; d]; k];
    for kk in 0..k {
        for i in 0..d {
            let q = (erase[i] * z[kk]).min(1.0);
            out[kk][i] = add[i] * q + h[kk][i] * (1.0 - q);
        }
    }
    (out, z)
}

/// Straight-line transcription of the read (transform and legacy variants).
fn oracle_read(enc: &SumEncoder, h: &[Vec<f64>], candidate: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let cfg = &enc.cfg;
    let d = cfg.d;
    let k = cfg.k;
    let w: Vec<f64> = if cfg.flags.legacy_read {
        let fr = mat_rows(&enc.params.f_r_legacy);
        (0..k)
            .map(|kk| (0..d).map(|i| candidate[i] * fr[kk][i]).sum())
            .collect()
    } else {
        let fr = mat_rows(&enc.params.f_r);
        (0..k)
            .map(|kk| {
                let mut total = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        total += candidate[i] * fr[i][j] * h[kk][j];
                    }
                }
                total
            })
            .collect()
    };
    let z = naive_softmax(&w, cfg.beta_read);
    let mut u = vec![0.0; d];
    for kk in 0..k {
        for i in 0..d {
            u[i] += z[kk] * h[kk][i];
        }
    }
    (u, z)
}

fn random_encoder(d: usize, k: usize, flags: AblationFlags, seed: u64) -> SumEncoder {
    let mut cfg = SumConfig::new(d, k, flags);
    cfg.beta_write = 1.3;
    cfg.beta_read = 0.8;
    SumEncoder::init(cfg, &mut rng(seed)).unwrap()
}

fn random_state(enc: &SumEncoder, with_prev: bool, r: &mut ChaCha8Rng) -> MemoryState {
    let mut state = enc.init_state();
    for s in state.channels.as_mut_slice() {
        *s = r.random_range(-1.0..1.0);
    }
    if with_prev {
        state.prev_x = Some(rand_vec(enc.cfg.d, r));
        state.steps = 1;
    }
    state
}

// ---------- init / attention ----------

#[test]
fn init_state_is_zero() {
    let enc = random_encoder(4, 5, AblationFlags::default(), 1);
    let s = enc.init_state();
    assert_eq!(s.k(), 5);
    assert_eq!(s.d(), 4);
    assert!(s.channels.as_slice().iter().all(|&x| x == 0.0));
    assert!(s.prev_x.is_none());
    assert_eq!(s.steps, 0);
}

#[test]
fn highway_needs_two_channels() {
    let cfg = SumConfig::new(4, 1, AblationFlags::default());
    assert!(SumEncoder::init(cfg, &mut rng(0)).is_err());
    let mut no_hw = AblationFlags::default();
    no_hw.highway_channel = false;
    let cfg = SumConfig::new(4, 1, no_hw);
    assert!(SumEncoder::init(cfg, &mut rng(0)).is_ok());
}

#[test]
fn read_on_fresh_state_is_zero() {
    let enc = random_encoder(6, 4, AblationFlags::default(), 2);
    let (u, _) = enc.read(&enc.init_state(), &rand_vec(6, &mut rng(3))).unwrap();
    assert!(u.iter().all(|&x| x == 0.0));
}

#[test]
fn users_do_not_share_state() {
    let enc = random_encoder(4, 3, AblationFlags::default(), 4);
    let mut r = rng(5);
    let (written, _) = enc.write(&enc.init_state(), &rand_vec(4, &mut r)).unwrap();
    assert_ne!(written.channels.as_slice(), enc.init_state().channels.as_slice());
    // a fresh init is unaffected by the other user's write
    assert!(enc.init_state().channels.as_slice().iter().all(|&x| x == 0.0));
}

#[test]
fn attention_singleton_content_plus_highway() {
    let enc = random_encoder(4, 2, AblationFlags::default(), 6);
    let z = enc.write_attention(&rand_vec(4, &mut rng(7)), None).unwrap();
    assert_eq!(z.as_slice(), &[1.0, 1.0]);
}

#[test]
fn attention_equidistant_heads() {
    let mut enc = random_encoder(2, 3, AblationFlags::default(), 8);
    // both heads score x identically
    enc.params.f_w.row_mut(0).copy_from_slice(&[1.0, 0.5]);
    enc.params.f_w.row_mut(1).copy_from_slice(&[1.0, 0.5]);
    let z = enc.write_attention(&v(&[0.7, -0.2]), None).unwrap();
    assert_eq!(z.as_slice(), &[0.5, 0.5, 1.0]);
}

#[test]
fn debuff_scales_content_by_alpha_at_cosine_one() {
    let mut enc = random_encoder(3, 4, AblationFlags::default(), 9);
    enc.params.alpha = 0.98;
    let x = v(&[0.3, -0.4, 0.5]);
    let base = enc.write_attention(&x, None).unwrap();
    let debuffed = enc.write_attention(&x, Some(&x)).unwrap();
    for c in 0..3 {
        assert!((debuffed[c] - 0.98 * base[c]).abs() < 1e-15);
    }
    assert_eq!(debuffed[3], 1.0);
}

#[test]
fn debuff_is_strictly_monotone_in_similarity() {
    // α < 1: higher cosine with the previous event → strictly smaller
    // content entries, everything else fixed.
    let enc = random_encoder(4, 4, AblationFlags::default(), 10);
    let x = v(&[0.5, 0.5, 0.5, 0.5]);
    let prev = |t: f64| {
        // interpolate between x and an orthogonal direction
        let o = [0.5, -0.5, 0.5, -0.5];
        let mut p = [0.0; 4];
        for i in 0..4 {
            p[i] = t * x[i] + (1.0 - t) * o[i];
        }
        v(&p)
    };
    let mut last: Option<Vec<f64>> = None;
    for step in 0..=4 {
        let t = step as f64 / 4.0;
        let z = enc.write_attention(&x, Some(&prev(t))).unwrap();
        let content = z.as_slice()[..3].to_vec();
        if let Some(prev_z) = &last {
            for (a, b) in prev_z.iter().zip(content.iter()) {
                assert!(b < a, "entries must strictly shrink as cosine grows");
            }
        }
        last = Some(content);
    }
}

// ---------- write ----------

#[test]
fn saturated_erase_on_highway_replaces_state_with_add() {
    // z = 1 on the highway; a hugely positive erase bias makes σ = 1 in
    // 64-bit, so the highway row becomes exactly add.
    let mut enc = random_encoder(3, 2, AblationFlags::default(), 11);
    for b in enc.params.b_erase.as_mut_slice() {
        *b = 1000.0;
    }
    let mut r = rng(12);
    let state = random_state(&enc, false, &mut r);
    let x = rand_vec(3, &mut r);
    let (next, cache) = enc.write(&state, &x).unwrap();
    assert!(cache.erase.iter().all(|&e| e == 1.0));
    for i in 0..3 {
        assert_eq!(next.channels.row(1)[i], cache.add[i]);
    }
}

#[test]
fn zero_attention_leaves_channel_untouched() {
    // β huge: the content softmax underflows to exactly [1, 0].
    let mut flags = AblationFlags::default();
    flags.highway_channel = false;
    flags.local_proximity_debuff = false;
    let mut cfg = SumConfig::new(2, 2, flags);
    cfg.beta_write = 1e4;
    let mut enc = SumEncoder::init(cfg, &mut rng(13)).unwrap();
    enc.params.f_w.row_mut(0).copy_from_slice(&[1.0, 0.0]);
    enc.params.f_w.row_mut(1).copy_from_slice(&[-1.0, 0.0]);
    let mut r = rng(14);
    let state = random_state(&enc, false, &mut r);
    let (next, cache) = enc.write(&state, &v(&[1.0, 0.0])).unwrap();
    assert_eq!(cache.z[1], 0.0);
    assert_eq!(next.channels.row(1), state.channels.row(1));
}

#[test]
fn write_matches_scripted_oracle_for_all_flag_combinations() {
    for bits in 0..16u8 {
        let flags = flags_from_bits(bits);
        for inst in 0..5 {
            let seed = 100 + bits as u64 * 10 + inst;
            let enc = random_encoder(3, 3, flags, seed);
            let mut r = rng(seed + 1);
            let state = random_state(&enc, true, &mut r);
            let x = rand_vec(3, &mut r);

            let (next, cache) = enc.write(&state, &x).unwrap();
            let (expect_h, expect_z) = oracle_write(
                &enc,
                &mat_rows(&state.channels),
                state.prev_x.as_ref().map(|p| p.as_slice()),
                x.as_slice(),
            );
            for k in 0..3 {
                assert!(
                    (cache.z[k] - expect_z[k]).abs() < 1e-12,
                    "z mismatch flags={flags:?}"
                );
                for i in 0..3 {
                    assert!(
                        (next.channels.row(k)[i] - expect_h[k][i]).abs() < 1e-12,
                        "state mismatch flags={flags:?}"
                    );
                }
            }
            assert_eq!(next.steps, state.steps + 1);
            assert_eq!(next.prev_x.as_ref().unwrap().as_slice(), x.as_slice());
        }
    }
}

#[test]
fn write_is_deterministic_bit_for_bit() {
    let enc = random_encoder(5, 4, AblationFlags::default(), 15);
    let mut r = rng(16);
    let events: Vec<Vector> = (0..8).map(|_| rand_vec(5, &mut r)).collect();
    let replay = || {
        let mut s = enc.init_state();
        for e in &events {
            s = enc.write(&s, e).unwrap().0;
        }
        s
    };
    let a = replay();
    let b = replay();
    assert_eq!(a, b);
}

#[test]
fn eq6_is_a_convex_interpolation() {
    let mut r = rng(17);
    for trial in 0..200 {
        let flags = flags_from_bits((trial % 16) as u8);
        let enc = random_encoder(4, 3, flags, 400 + trial);
        let state = random_state(&enc, true, &mut r);
        let x = rand_vec(4, &mut r);
        let (next, cache) = enc.write(&state, &x).unwrap();
        for k in 0..3 {
            for i in 0..4 {
                let q = (cache.erase[i] * cache.z[k]).min(1.0);
                assert!((0.0..=1.0).contains(&q));
                let old = state.channels.row(k)[i];
                let lo = old.min(cache.add[i]) - 1e-12;
                let hi = old.max(cache.add[i]) + 1e-12;
                let new = next.channels.row(k)[i];
                assert!(new >= lo && new <= hi, "bit escaped [old, add] interval");
            }
        }
    }
}

#[test]
fn content_attention_sums_to_debuff_factor() {
    let mut r = rng(18);
    for trial in 0..100 {
        let enc = random_encoder(4, 5, AblationFlags::default(), 600 + trial);
        let x = rand_vec(4, &mut r);
        let px = rand_vec(4, &mut r);
        let z = enc.write_attention(&x, Some(&px)).unwrap();
        let sim = naive_cosine(x.as_slice(), px.as_slice());
        let factor = enc.params.alpha.powf(sim);
        let content_sum: f64 = z.as_slice()[..4].iter().sum();
        assert!((content_sum - factor).abs() < 1e-12);
        // with α ≤ 1 and non-negative similarity the sum is ≤ 1,
        // equality only when the factor is exactly 1
        if enc.params.alpha <= 1.0 && sim >= 0.0 {
            assert!(content_sum <= 1.0 + 1e-15);
            if (content_sum - 1.0).abs() < 1e-15 {
                assert!((factor - 1.0).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn highway_makes_write_order_sensitive() {
    // random search: some event pair must leave different highway states
    // when applied in opposite orders
    let enc = random_encoder(4, 3, AblationFlags::default(), 19);
    let mut r = rng(20);
    let mut found = false;
    for _ in 0..50 {
        let a = rand_vec(4, &mut r);
        let b = rand_vec(4, &mut r);
        let ab = {
            let s = enc.write(&enc.init_state(), &a).unwrap().0;
            enc.write(&s, &b).unwrap().0
        };
        let ba = {
            let s = enc.write(&enc.init_state(), &b).unwrap().0;
            enc.write(&s, &a).unwrap().0
        };
        if ab.channels.row(2) != ba.channels.row(2) {
            found = true;
            break;
        }
    }
    assert!(found, "no order-sensitive pair found in 50 random draws");
}

// ---------- read ----------

#[test]
fn read_of_identical_channels_returns_that_vector() {
    let enc = random_encoder(3, 4, AblationFlags::default(), 21);
    let mut state = enc.init_state();
    let h = v(&[0.4, -0.2, 0.9]);
    for k in 0..4 {
        state.channels.row_mut(k).copy_from_slice(h.as_slice());
    }
    let (u, _) = enc.read(&state, &rand_vec(3, &mut rng(22))).unwrap();
    for i in 0..3 {
        assert!((u[i] - h[i]).abs() < 1e-12);
    }
}

#[test]
fn read_single_channel_is_identity() {
    let mut flags = AblationFlags::default();
    flags.highway_channel = false;
    let enc = random_encoder(3, 1, flags, 23);
    let mut state = enc.init_state();
    state.channels.row_mut(0).copy_from_slice(&[1.0, 2.0, 3.0]);
    let (u, cache) = enc.read(&state, &rand_vec(3, &mut rng(24))).unwrap();
    assert_eq!(u.as_slice(), &[1.0, 2.0, 3.0]);
    assert_eq!(cache.z.as_slice(), &[1.0]);
}

#[test]
fn read_matches_scripted_oracle() {
    for legacy in [false, true] {
        let mut flags = AblationFlags::default();
        flags.legacy_read = legacy;
        for inst in 0..10 {
            let enc = random_encoder(2, 2, flags, 700 + inst);
            let mut r = rng(800 + inst);
            let state = random_state(&enc, false, &mut r);
            let cand = rand_vec(2, &mut r);
            let (u, cache) = enc.read(&state, &cand).unwrap();
            let (expect_u, expect_z) =
                oracle_read(&enc, &mat_rows(&state.channels), cand.as_slice());
            for i in 0..2 {
                assert!((u[i] - expect_u[i]).abs() < 1e-12);
                assert!((cache.z[i] - expect_z[i]).abs() < 1e-12);
            }
        }
    }
}

// ---------- GRU ----------

#[test]
fn gru_zero_everything_stays_zero() {
    let gru = GruEncoder::new(3, GruParams::zeros(3)).unwrap();
    let state = MemoryState::zeros(1, 3);
    let (next, _) = gru.write(&state, &Vector::zeros(3)).unwrap();
    assert!(next.channels.as_slice().iter().all(|&x| x == 0.0));
}

#[test]
fn gru_saturated_keep_gate_preserves_state() {
    let mut gru = GruEncoder::init(3, &mut rng(25)).unwrap();
    for b in gru.params.b_keep.as_mut_slice() {
        *b = 1000.0;
    }
    let mut state = MemoryState::zeros(1, 3);
    state.channels.row_mut(0).copy_from_slice(&[0.3, -0.7, 0.2]);
    state.prev_x = Some(Vector::zeros(3));
    state.steps = 1;
    let (next, _) = gru.write(&state, &rand_vec(3, &mut rng(26))).unwrap();
    assert_eq!(next.channels.row(0), &[0.3, -0.7, 0.2]);
}

// ---------- RUM reference ----------

/// Independent transcription of the classic user-memory-network encoder:
/// softmax head routing over all K channels, event-only tanh/σ updating
/// vectors, erase-and-add, head-table read.
struct RumOracle {
    fw: Vec<Vec<f64>>,
    fr: Vec<Vec<f64>>,
    wa: Vec<Vec<f64>>,
    ba: Vec<f64>,
    we: Vec<Vec<f64>>,
    be: Vec<f64>,
    beta_w: f64,
    beta_r: f64,
}

impl RumOracle {
    fn write(&self, h: &mut [Vec<f64>], x: &[f64]) {
        let k = h.len();
        let d = x.len();
        let scores: Vec<f64> = (0..k)
            .map(|c| (0..d).map(|i| self.fw[c][i] * x[i]).sum())
            .collect();
        let z = naive_softmax(&scores, self.beta_w);
        let add: Vec<f64> = (0..d)
            .map(|r| ((0..d).map(|i| self.wa[r][i] * x[i]).sum::<f64>() + self.ba[r]).tanh())
            .collect();
        let erase: Vec<f64> = (0..d)
            .map(|r| {
                naive_sigmoid((0..d).map(|i| self.we[r][i] * x[i]).sum::<f64>() + self.be[r])
            })
            .collect();
        for kk in 0..k {
            for i in 0..d {
                let q = (erase[i] * z[kk]).min(1.0);
                h[kk][i] = add[i] * q + h[kk][i] * (1.0 - q);
            }
        }
    }

    fn read(&self, h: &[Vec<f64>], cand: &[f64]) -> Vec<f64> {
        let k = h.len();
        let d = cand.len();
        let w: Vec<f64> = (0..k)
            .map(|kk| (0..d).map(|i| cand[i] * self.fr[kk][i]).sum())
            .collect();
        let z = naive_softmax(&w, self.beta_r);
        let mut u = vec![0.0; d];
        for kk in 0..k {
            for i in 0..d {
                u[i] += z[kk] * h[kk][i];
            }
        }
        u
    }
}

#[test]
fn rum_configuration_matches_independent_rum_oracle() {
    let enc = random_encoder(4, 3, AblationFlags::rum(), 27);
    let oracle = RumOracle {
        fw: mat_rows(&enc.params.f_w),
        fr: mat_rows(&enc.params.f_r_legacy),
        wa: mat_rows(&enc.params.w_add_ev),
        ba: enc.params.b_add_ev.as_slice().to_vec(),
        we: mat_rows(&enc.params.w_erase_ev),
        be: enc.params.b_erase_ev.as_slice().to_vec(),
        beta_w: enc.cfg.beta_write,
        beta_r: enc.cfg.beta_read,
    };

    let mut r = rng(28);
    let events: Vec<Vector> = (0..5).map(|_| rand_vec(4, &mut r)).collect();
    let cand = rand_vec(4, &mut r);

    let mut state = enc.init_state();
    for e in &events {
        state = enc.write(&state, e).unwrap().0;
    }
    let (u, _) = enc.read(&state, &cand).unwrap();

    let mut h = vec![vec![0.0; 4]; 3];
    for e in &events {
        oracle.write(&mut h, e.as_slice());
    }
    let expect_u = oracle.read(&h, cand.as_slice());

    for k in 0..3 {
        for i in 0..4 {
            assert!((state.channels.row(k)[i] - h[k][i]).abs() < 1e-12);
        }
    }
    for i in 0..4 {
        assert!((u[i] - expect_u[i]).abs() < 1e-12);
    }
}
