//! Two-phase training for both autoencoder levels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::Waveform;
use crate::config::RunConfig;
use crate::dsp;
use crate::error::{Error, Result};
use crate::nn::graph::{Graph, NodeId};
use crate::nn::losses::{hinge_d_loss, hinge_g_loss, r1_penalty};
use crate::nn::optim::AdamParams;
use crate::nn::params::{ParamStore, Session};
use crate::nn::scalar::Scalar;

use super::{
    batch_logmag, batch_wave, graph_logmag, graph_multiscale, level1_chain, Level1Ae, Level2Ae,
    SpectroDisc, AE1_DISC_PREFIX, AE1_ENC_PREFIX, AE1_PREFIX, AE2_DISC_PREFIX, AE2_ENC_PREFIX,
    AE2_PREFIX, DISC_FFT_FACTOR,
};

// ---------------------------------------------------------------------------
// Excerpt sampling
// ---------------------------------------------------------------------------

/// Deterministic excerpt source over a mono-reduced corpus. Supports single
/// excerpts and contiguous adjacent pairs.
pub struct ExcerptSampler {
    monos: Vec<Vec<f32>>,
    rng: ChaCha8Rng,
}

impl ExcerptSampler {
    pub fn new(dataset: &[Waveform], seed: u64) -> Self {
        ExcerptSampler {
            monos: dataset.iter().map(|w| w.to_mono()).collect(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn from_monos(monos: Vec<Vec<f32>>, seed: u64) -> Self {
        ExcerptSampler {
            monos,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn draw(&mut self, len: usize) -> Result<Vec<f32>> {
        let eligible: Vec<usize> = (0..self.monos.len())
            .filter(|&i| self.monos[i].len() >= len)
            .collect();
        if eligible.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no source long enough for {len}-sample excerpts"
            )));
        }
        let src = eligible[self.rng.random_range(0..eligible.len())];
        let max_start = self.monos[src].len() - len;
        let start = if max_start == 0 {
            0
        } else {
            self.rng.random_range(0..=max_start)
        };
        Ok(self.monos[src][start..start + len].to_vec())
    }

    pub fn batch(&mut self, n: usize, len: usize) -> Result<Vec<Vec<f32>>> {
        (0..n).map(|_| self.draw(len)).collect()
    }

    /// Contiguous pairs: each draw yields two adjacent `len`-sample excerpts.
    pub fn pair_batch(&mut self, n: usize, len: usize) -> Result<(Vec<Vec<f32>>, Vec<Vec<f32>>)> {
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        for _ in 0..n {
            let both = self.draw(2 * len)?;
            a.push(both[..len].to_vec());
            b.push(both[len..].to_vec());
        }
        Ok((a, b))
    }
}

// ---------------------------------------------------------------------------
// Loss logging
// ---------------------------------------------------------------------------

/// Loss-curve accumulator, serialized as `step,loss_name,value` CSV.
#[derive(Default)]
pub struct TrainLog {
    pub rows: Vec<(u64, String, f64)>,
}

impl TrainLog {
    pub fn push(&mut self, step: u64, name: &str, value: f64) {
        self.rows.push((step, name.to_string(), value));
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        use std::io::Write;
        let mut f =
            std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        writeln!(f, "step,loss_name,value").map_err(|e| Error::io(path, e))?;
        for (s, n, v) in &self.rows {
            writeln!(f, "{s},{n},{v}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    /// Mean of a named series over steps in `[lo, hi)`.
    pub fn mean_in(&self, name: &str, lo: u64, hi: u64) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|(s, n, _)| n == name && *s >= lo && *s < hi)
            .map(|(_, _, v)| *v)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }

    pub fn first(&self, name: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|(_, n, _)| n == name)
            .map(|(_, _, v)| *v)
    }

    pub fn last(&self, name: &str) -> Option<f64> {
        self.rows
            .iter()
            .rev()
            .find(|(_, n, _)| n == name)
            .map(|(_, _, v)| *v)
    }
}

fn check_finite(name: &str, step: u64, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!(
            "{name} became non-finite ({v}) at step {step}; aborting"
        )))
    }
}

fn adam_of(cfg: &RunConfig) -> AdamParams {
    AdamParams {
        lr: cfg.ae.lr,
        beta1: cfg.ae.beta1,
        beta2: cfg.ae.beta2,
        eps: cfg.ae.adam_eps,
    }
}

fn mean_value<S: Scalar>(g: &Graph<S>, id: NodeId) -> f64 {
    let v = g.value(id);
    v.data().iter().map(|x| x.as_f64()).sum::<f64>() / v.numel() as f64
}

/// Aborts adversarial training when the discriminator runs away for 1000
/// consecutive steps.
struct CollapseDetector {
    run: usize,
}

impl CollapseDetector {
    fn new() -> Self {
        CollapseDetector { run: 0 }
    }

    fn observe(&mut self, gap: f64, step: u64) -> Result<()> {
        self.run = if gap.abs() > 50.0 { self.run + 1 } else { 0 };
        if self.run >= 1000 {
            Err(Error::Numeric(format!(
                "discriminator collapse: |D(real)-D(fake)| > 50 for 1000 consecutive steps (at step {step})"
            )))
        } else {
            Ok(())
        }
    }
}

// ---------------------------------------------------------------------------
// Level 1, phase 1: joint L1 reconstruction of log-magnitude spectrograms
// ---------------------------------------------------------------------------

pub fn train_phase1(
    cfg: &RunConfig,
    ae1: &Level1Ae,
    store: &mut ParamStore<f32>,
    sampler: &mut ExcerptSampler,
    steps: usize,
    log: &mut TrainLog,
) -> Result<()> {
    let hp = adam_of(cfg);
    let (fft, hop) = (cfg.ae.fft_size, cfg.ae.hop_size);
    let len = cfg.excerpt_samples();
    for step in 0..steps as u64 {
        let batch = sampler.batch(cfg.ae.batch, len)?;
        let s_t = batch_logmag::<f32>(&batch, fft, hop, dsp::LOG_EPS);
        let frames = s_t.dims()[2];
        let mut g = Graph::new();
        let mut sess = Session::new(&mut g, store);
        let s = sess.g.leaf(s_t, false);
        let c = ae1.encode(&mut sess, s);
        let out = ae1.decode(&mut sess, c);
        let target = sess.g.slice_time(
            s,
            Level1Ae::ENC_SHRINK,
            frames - Level1Ae::ENC_SHRINK - Level1Ae::DEC_SHRINK,
        );
        let loss = sess.g.l1_loss(out.logmag, target);
        let lv = check_finite("phase1 L1", step, sess.g.value(loss).item() as f64)?;
        let grads = sess.g.backward(loss);
        sess.apply_grads(&grads, &hp, AE1_PREFIX)?;
        log.push(step, "ae1_phase1_l1", lv);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Level 1, phase 2: frozen encoder, adversarial decoder
// ---------------------------------------------------------------------------

struct PairFakes {
    /// Concatenated fake log-magnitude pair at discriminator geometry.
    fake_pair: NodeId,
    /// Reconstruction chains of both halves (for decoder losses).
    logmag_a: NodeId,
    logmag_b: NodeId,
    w_tilde_a: NodeId,
    w_tilde_b: NodeId,
}

fn build_level1_fakes<S: Scalar>(
    sess: &mut Session<S>,
    ae1: &Level1Ae,
    ex_a: &[Vec<f32>],
    ex_b: &[Vec<f32>],
    fft: usize,
    hop: usize,
    dfft: usize,
) -> PairFakes {
    let sa = batch_logmag::<S>(ex_a, fft, hop, dsp::LOG_EPS);
    let sb = batch_logmag::<S>(ex_b, fft, hop, dsp::LOG_EPS);
    let sa = sess.g.leaf(sa, false);
    let sb = sess.g.leaf(sb, false);
    let ca = level1_chain(sess, ae1, sa, fft, hop);
    let cb = level1_chain(sess, ae1, sb, fft, hop);
    let la = graph_logmag(sess.g, ca.w_tilde, dfft, hop, dsp::LOG_EPS);
    let lb = graph_logmag(sess.g, cb.w_tilde, dfft, hop, dsp::LOG_EPS);
    let fake_pair = sess.g.concat_time(la, lb);
    PairFakes {
        fake_pair,
        logmag_a: ca.logmag,
        logmag_b: cb.logmag,
        w_tilde_a: ca.w_tilde,
        w_tilde_b: cb.w_tilde,
    }
}

/// The sample span a level-1 reconstruction covers inside its excerpt.
fn recon_span(excerpt_len: usize, fft: usize, hop: usize) -> (usize, usize) {
    let frames = dsp::frame_count(excerpt_len, fft, hop);
    let rec_frames = frames - Level1Ae::ENC_SHRINK - Level1Ae::DEC_SHRINK;
    let off = Level1Ae::ENC_SHRINK * hop;
    (off, dsp::covered_samples(rec_frames, fft, hop))
}

/// Real pair for the discriminator: original adjacent excerpts cropped to the
/// reconstruction's sample span, at discriminator geometry.
fn real_pair_tensor<S: Scalar>(
    ex_a: &[Vec<f32>],
    ex_b: &[Vec<f32>],
    fft: usize,
    hop: usize,
    dfft: usize,
) -> crate::nn::tensor::Tensor<S> {
    let (off, l) = recon_span(ex_a[0].len(), fft, hop);
    let crop = |ex: &Vec<f32>| ex[off..off + l].to_vec();
    let a: Vec<Vec<f32>> = ex_a.iter().map(crop).collect();
    let b: Vec<Vec<f32>> = ex_b.iter().map(crop).collect();
    // One tensor (B,1,F,2T): compute both halves and butt them together.
    let bins = dfft / 2 + 1;
    let frames = dsp::frame_count(l, dfft, hop);
    let mut out = crate::nn::tensor::Tensor::zeros(&[ex_a.len(), 1, bins, 2 * frames]);
    for (bi, (xa, xb)) in a.iter().zip(&b).enumerate() {
        for (half, x) in [xa, xb].into_iter().enumerate() {
            let xs: Vec<S> = x.iter().map(|&v| S::of_f64(v as f64)).collect();
            let sp = dsp::stft(&xs, dfft, hop).unwrap();
            let lm = dsp::log_mag(&sp, S::of_f64(dsp::LOG_EPS));
            for t in 0..frames {
                for f in 0..bins {
                    out.data_mut()[((bi * bins) + f) * 2 * frames + half * frames + t] =
                        lm.values[t * bins + f];
                }
            }
        }
    }
    out
}

pub fn train_phase2(
    cfg: &RunConfig,
    ae1: &Level1Ae,
    disc: &SpectroDisc,
    store: &mut ParamStore<f32>,
    sampler: &mut ExcerptSampler,
    steps: usize,
    log: &mut TrainLog,
) -> Result<()> {
    let hp = adam_of(cfg);
    let (fft, hop) = (cfg.ae.fft_size, cfg.ae.hop_size);
    let dfft = DISC_FFT_FACTOR * hop;
    let len = cfg.excerpt_samples();
    store.set_trainable_matching(AE1_ENC_PREFIX, false);

    let mut collapse = CollapseDetector::new();
    for step in 0..steps as u64 {
        let (ex_a, ex_b) = sampler.pair_batch(cfg.ae.batch, len)?;

        // Discriminator step.
        {
            let mut g = Graph::new();
            let mut sess = Session::new(&mut g, store);
            let fakes = build_level1_fakes(&mut sess, ae1, &ex_a, &ex_b, fft, hop, dfft);
            let fake = sess.g.detach(fakes.fake_pair);
            let real_t = real_pair_tensor::<f32>(&ex_a, &ex_b, fft, hop, dfft);
            let real = sess.g.leaf(real_t, true);
            let d_real = disc.forward(&mut sess, real);
            let d_fake = disc.forward(&mut sess, fake);
            let hinge = hinge_d_loss(sess.g, d_real, d_fake);
            let r1 = r1_penalty(sess.g, d_real, real, cfg.ae.r1_gamma);
            let loss = sess.g.add(hinge, r1);
            let lv = check_finite("level1 D loss", step, sess.g.value(loss).item() as f64)?;
            let gap = mean_value(sess.g, d_real) - mean_value(sess.g, d_fake);
            let grads = sess.g.backward(loss);
            sess.apply_grads(&grads, &hp, AE1_DISC_PREFIX)?;
            log.push(step, "ae1_d_loss", lv);
            log.push(step, "ae1_d_gap", gap);
            collapse.observe(gap, step)?;
        }

        // Decoder step.
        {
            let mut g = Graph::new();
            let mut sess = Session::new(&mut g, store);
            sess.update_spectral = false; // discriminator is a fixed critic here
            let fakes = build_level1_fakes(&mut sess, ae1, &ex_a, &ex_b, fft, hop, dfft);
            let d_fake = disc.forward(&mut sess, fakes.fake_pair);
            let adv = hinge_g_loss(sess.g, d_fake);

            // lambda_rec * L1 on the log-magnitude heads.
            let sa = batch_logmag::<f32>(&ex_a, fft, hop, dsp::LOG_EPS);
            let sb = batch_logmag::<f32>(&ex_b, fft, hop, dsp::LOG_EPS);
            let frames = sa.dims()[2];
            let keep = frames - Level1Ae::ENC_SHRINK - Level1Ae::DEC_SHRINK;
            let sa = sess.g.leaf(sa, false);
            let sb = sess.g.leaf(sb, false);
            let ta = sess.g.slice_time(sa, Level1Ae::ENC_SHRINK, keep);
            let tb = sess.g.slice_time(sb, Level1Ae::ENC_SHRINK, keep);
            let l1a = sess.g.l1_loss(fakes.logmag_a, ta);
            let l1b = sess.g.l1_loss(fakes.logmag_b, tb);
            let l1 = sess.g.add(l1a, l1b);
            let l1 = sess.g.scale(l1, 0.5);

            // lambda_ms * multi-scale distance on edge-trimmed waveforms.
            let (off, l) = recon_span(len, fft, hop);
            let trim = fft / 2;
            let ms = {
                let wa = batch_wave::<f32>(&ex_a);
                let wb = batch_wave::<f32>(&ex_b);
                let wa = sess.g.leaf(wa, false);
                let wb = sess.g.leaf(wb, false);
                let ra = sess.g.slice_time(wa, off + trim, l - 2 * trim);
                let rb = sess.g.slice_time(wb, off + trim, l - 2 * trim);
                let wta = sess.g.slice_time(fakes.w_tilde_a, trim, l - 2 * trim);
                let wtb = sess.g.slice_time(fakes.w_tilde_b, trim, l - 2 * trim);
                let ma = graph_multiscale(sess.g, ra, wta, dsp::LOG_EPS);
                let mb = graph_multiscale(sess.g, rb, wtb, dsp::LOG_EPS);
                let m = sess.g.add(ma, mb);
                sess.g.scale(m, 0.5)
            };

            let l1w = sess.g.scale(l1, cfg.ae.lambda_rec);
            let msw = sess.g.scale(ms, cfg.ae.lambda_ms);
            let rec = sess.g.add(l1w, msw);
            let loss = sess.g.add(adv, rec);
            let lv = check_finite("level1 Dec loss", step, sess.g.value(loss).item() as f64)?;
            let grads = sess.g.backward(loss);
            sess.apply_grads(&grads, &hp, AE1_PREFIX)?;
            log.push(step, "ae1_dec_loss", lv);
            log.push(step, "ae1_dec_adv", sess.g.value(adv).item() as f64);
            log.push(step, "ae1_dec_ms", sess.g.value(ms).item() as f64);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Level 2
// ---------------------------------------------------------------------------

/// Level-2 phase 1: L1 between `dec2(enc2(c1))` and the aligned slice of `c1`,
/// with all level-1 parameters frozen.
pub fn train_level2_phase1(
    cfg: &RunConfig,
    ae1: &Level1Ae,
    ae2: &Level2Ae,
    store: &mut ParamStore<f32>,
    sampler: &mut ExcerptSampler,
    steps: usize,
    log: &mut TrainLog,
) -> Result<()> {
    let hp = adam_of(cfg);
    let (fft, hop) = (cfg.ae.fft_size, cfg.ae.hop_size);
    let len = cfg.excerpt_samples();
    store.set_trainable_matching(AE1_PREFIX, false);
    store.set_trainable_matching(AE1_DISC_PREFIX, false);

    for step in 0..steps as u64 {
        let batch = sampler.batch(cfg.ae.batch, len)?;
        let s_t = batch_logmag::<f32>(&batch, fft, hop, dsp::LOG_EPS);
        let mut g = Graph::new();
        let mut sess = Session::new(&mut g, store);
        let s = sess.g.leaf(s_t, false);
        let c1 = ae1.encode(&mut sess, s);
        let t_c1 = sess.g.value(c1).dims3().2;
        let c2 = ae2.encode(&mut sess, c1);
        let c1_hat = ae2.decode(&mut sess, c2);
        let (off, len2) = ae2.round_trip_align(t_c1);
        let c1_ref = sess.g.slice_time(c1, off, len2);
        let c1_ref = sess.g.detach(c1_ref);
        let loss = sess.g.l1_loss(c1_hat, c1_ref);
        let lv = check_finite("level2 phase1 L1", step, sess.g.value(loss).item() as f64)?;
        let grads = sess.g.backward(loss);
        sess.apply_grads(&grads, &hp, AE2_PREFIX)?;
        log.push(step, "ae2_phase1_l1", lv);
    }
    Ok(())
}

struct Level2Fakes {
    fake_pair: NodeId,
    real_pair_value: crate::nn::tensor::Tensor<f32>,
    c1_hat_a: NodeId,
    c1_hat_b: NodeId,
    c1_ref_a: NodeId,
    c1_ref_b: NodeId,
    w1_a: NodeId,
    w1_b: NodeId,
    w2_a: NodeId,
    w2_b: NodeId,
}

/// Build the level-2 adversarial pair: "real" is reconstructed by the frozen
/// level-1 decoder alone; "fake" goes through the full two-level stack.
fn build_level2_fakes(
    sess: &mut Session<f32>,
    ae1: &Level1Ae,
    ae2: &Level2Ae,
    ex_a: &[Vec<f32>],
    ex_b: &[Vec<f32>],
    fft: usize,
    hop: usize,
    dfft: usize,
) -> Level2Fakes {
    let mut half = |ex: &[Vec<f32>]| -> (NodeId, NodeId, NodeId, NodeId, NodeId) {
        let s_t = batch_logmag::<f32>(ex, fft, hop, dsp::LOG_EPS);
        let s = sess.g.leaf(s_t, false);
        let c1 = ae1.encode(sess, s);
        let t_c1 = sess.g.value(c1).dims3().2;
        let c2 = ae2.encode(sess, c1);
        let c1_hat = ae2.decode(sess, c2);
        let (off, len2) = ae2.round_trip_align(t_c1);
        let c1_ref = sess.g.slice_time(c1, off, len2);
        let c1_ref = sess.g.detach(c1_ref);
        // Frozen level-1 decode of both latent sequences.
        let out_fake = ae1.decode(sess, c1_hat);
        let z_fake = super::heads_to_complex(sess.g, &out_fake);
        let w2 = sess.g.istft(z_fake, fft, hop);
        let out_real = ae1.decode(sess, c1_ref);
        let z_real = super::heads_to_complex(sess.g, &out_real);
        let w1 = sess.g.istft(z_real, fft, hop);
        let w1 = sess.g.detach(w1);
        let lm_fake = graph_logmag(sess.g, w2, dfft, hop, dsp::LOG_EPS);
        (lm_fake, c1_hat, c1_ref, w1, w2)
    };
    let (lm_a, c1_hat_a, c1_ref_a, w1_a, w2_a) = half(ex_a);
    let (lm_b, c1_hat_b, c1_ref_b, w1_b, w2_b) = half(ex_b);
    let fake_pair = sess.g.concat_time(lm_a, lm_b);

    // Real side at discriminator geometry, as a plain tensor.
    let real_pair_value = {
        let la = graph_logmag(sess.g, w1_a, dfft, hop, dsp::LOG_EPS);
        let lb = graph_logmag(sess.g, w1_b, dfft, hop, dsp::LOG_EPS);
        let pair = sess.g.concat_time(la, lb);
        sess.g.value(pair).clone()
    };
    Level2Fakes {
        fake_pair,
        real_pair_value,
        c1_hat_a,
        c1_hat_b,
        c1_ref_a,
        c1_ref_b,
        w1_a,
        w1_b,
        w2_a,
        w2_b,
    }
}

pub fn train_level2_phase2(
    cfg: &RunConfig,
    ae1: &Level1Ae,
    ae2: &Level2Ae,
    disc: &SpectroDisc,
    store: &mut ParamStore<f32>,
    sampler: &mut ExcerptSampler,
    steps: usize,
    log: &mut TrainLog,
) -> Result<()> {
    let hp = adam_of(cfg);
    let (fft, hop) = (cfg.ae.fft_size, cfg.ae.hop_size);
    let dfft = DISC_FFT_FACTOR * hop;
    let len = cfg.excerpt_samples();
    store.set_trainable_matching(AE1_PREFIX, false);
    store.set_trainable_matching(AE1_DISC_PREFIX, false);
    store.set_trainable_matching(AE2_ENC_PREFIX, false);

    let mut collapse = CollapseDetector::new();
    for step in 0..steps as u64 {
        let (ex_a, ex_b) = sampler.pair_batch(cfg.ae.batch, len)?;

        // Discriminator step.
        {
            let mut g = Graph::new();
            let mut sess = Session::new(&mut g, store);
            let fakes = build_level2_fakes(&mut sess, ae1, ae2, &ex_a, &ex_b, fft, hop, dfft);
            let fake = sess.g.detach(fakes.fake_pair);
            let real = sess.g.leaf(fakes.real_pair_value.clone(), true);
            let d_real = disc.forward(&mut sess, real);
            let d_fake = disc.forward(&mut sess, fake);
            let hinge = hinge_d_loss(sess.g, d_real, d_fake);
            let r1 = r1_penalty(sess.g, d_real, real, cfg.ae.r1_gamma);
            let loss = sess.g.add(hinge, r1);
            let lv = check_finite("level2 D loss", step, sess.g.value(loss).item() as f64)?;
            let gap = mean_value(sess.g, d_real) - mean_value(sess.g, d_fake);
            let grads = sess.g.backward(loss);
            sess.apply_grads(&grads, &hp, AE2_DISC_PREFIX)?;
            log.push(step, "ae2_d_loss", lv);
            log.push(step, "ae2_d_gap", gap);
            collapse.observe(gap, step)?;
        }

        // Level-2 decoder step.
        {
            let mut g = Graph::new();
            let mut sess = Session::new(&mut g, store);
            sess.update_spectral = false;
            let fakes = build_level2_fakes(&mut sess, ae1, ae2, &ex_a, &ex_b, fft, hop, dfft);
            let d_fake = disc.forward(&mut sess, fakes.fake_pair);
            let adv = hinge_g_loss(sess.g, d_fake);

            let l1a = sess.g.l1_loss(fakes.c1_hat_a, fakes.c1_ref_a);
            let l1b = sess.g.l1_loss(fakes.c1_hat_b, fakes.c1_ref_b);
            let l1 = sess.g.add(l1a, l1b);
            let l1 = sess.g.scale(l1, 0.5);

            let trim = fft / 2;
            let lw = sess.g.value(fakes.w1_a).dims3().2;
            let ms = {
                let cut = |sess: &mut Session<f32>, w: NodeId| {
                    sess.g.slice_time(w, trim, lw - 2 * trim)
                };
                let r_a = cut(&mut sess, fakes.w1_a);
                let r_b = cut(&mut sess, fakes.w1_b);
                let f_a = cut(&mut sess, fakes.w2_a);
                let f_b = cut(&mut sess, fakes.w2_b);
                let ma = graph_multiscale(sess.g, r_a, f_a, dsp::LOG_EPS);
                let mb = graph_multiscale(sess.g, r_b, f_b, dsp::LOG_EPS);
                let m = sess.g.add(ma, mb);
                sess.g.scale(m, 0.5)
            };

            let l1w = sess.g.scale(l1, cfg.ae.lambda_rec);
            let msw = sess.g.scale(ms, cfg.ae.lambda_ms);
            let rec = sess.g.add(l1w, msw);
            let loss = sess.g.add(adv, rec);
            let lv = check_finite("level2 Dec loss", step, sess.g.value(loss).item() as f64)?;
            let grads = sess.g.backward(loss);
            sess.apply_grads(&grads, &hp, AE2_PREFIX)?;
            log.push(step, "ae2_dec_loss", lv);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::synth::synthesize_song;

    fn toy_cfg() -> RunConfig {
        let mut cfg = RunConfig::preset("toy").unwrap();
        // Shrink further for unit-test speed; acceptance runs the real toy.
        cfg.ae.width1 = 12;
        cfg.ae.width2 = 10;
        cfg.ae.d_width = 6;
        cfg.ae.latent1_dim = 8;
        cfg.ae.latent2_dim = 4;
        cfg.ae.batch = 2;
        cfg
    }

    fn toy_corpus(seconds: f64) -> Vec<Waveform> {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        (0..2)
            .map(|_| synthesize_song(&mut rng, seconds, 22050, 1.0, 5.0))
            .collect()
    }

    #[test]
    fn phase1_loss_decreases_on_tiny_run() {
        let cfg = toy_cfg();
        let ae1 = Level1Ae::from_cfg(&cfg);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        ae1.init(&mut store, &mut rng);
        let corpus = toy_corpus(4.0);
        let mut sampler = ExcerptSampler::new(&corpus, 9);
        let mut log = TrainLog::default();
        train_phase1(&cfg, &ae1, &mut store, &mut sampler, 60, &mut log).unwrap();
        let first = log.mean_in("ae1_phase1_l1", 0, 10).unwrap();
        let last = log.mean_in("ae1_phase1_l1", 50, 60).unwrap();
        assert!(last < first, "no descent: {first} -> {last}");
    }

    #[test]
    fn phase1_step0_loss_matches_reference_recomputation() {
        let cfg = toy_cfg();
        let ae1 = Level1Ae::from_cfg(&cfg);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        ae1.init(&mut store, &mut rng);
        let corpus = toy_corpus(3.0);

        // Run one step and capture the logged loss.
        let mut sampler = ExcerptSampler::new(&corpus, 11);
        let mut log = TrainLog::default();
        // Clone parameters before the step mutates them.
        let frozen = store.cast::<f32>();
        train_phase1(&cfg, &ae1, &mut store, &mut sampler, 1, &mut log).unwrap();
        let logged = log.first("ae1_phase1_l1").unwrap();

        // Recompute E|s - Dec(Enc(s))| independently with the frozen weights
        // and the same excerpt stream.
        let mut sampler2 = ExcerptSampler::new(&corpus, 11);
        let batch = sampler2.batch(cfg.ae.batch, cfg.excerpt_samples()).unwrap();
        let s_t = batch_logmag::<f32>(&batch, cfg.ae.fft_size, cfg.ae.hop_size, dsp::LOG_EPS);
        let mut frozen = frozen;
        let mut g = Graph::new();
        let mut sess = Session::new(&mut g, &mut frozen);
        let s = sess.g.leaf(s_t.clone(), false);
        let c = ae1.encode(&mut sess, s);
        let out = ae1.decode(&mut sess, c);
        let recon = sess.g.value(out.logmag).clone();
        // Plain scalar reference: mean |target - recon|.
        let frames = s_t.dims()[2];
        let keep = frames - Level1Ae::ENC_SHRINK - Level1Ae::DEC_SHRINK;
        let (b, bins) = (s_t.dims()[0], s_t.dims()[1]);
        let mut acc = 0.0f64;
        for bi in 0..b {
            for f in 0..bins {
                for t in 0..keep {
                    let target = s_t.at3(bi, f, t + Level1Ae::ENC_SHRINK);
                    acc += (target - recon.at3(bi, f, t)).abs() as f64;
                }
            }
        }
        let reference = acc / (b * bins * keep) as f64;
        assert!(
            (logged - reference).abs() / reference.abs().max(1.0) < 1e-4,
            "{logged} vs {reference}"
        );
    }

    #[test]
    fn phase1_batch_order_symmetry() {
        // The loss is a batch mean: permuting excerpts must not change it.
        let cfg = toy_cfg();
        let ae1 = Level1Ae::from_cfg(&cfg);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        ae1.init(&mut store, &mut rng);
        let corpus = toy_corpus(3.0);
        let mut sampler = ExcerptSampler::new(&corpus, 4);
        let batch = sampler.batch(3, cfg.excerpt_samples()).unwrap();
        let mut permuted = batch.clone();
        permuted.rotate_left(1);

        let eval = |excerpts: &[Vec<f32>], store: &mut ParamStore<f32>| -> f64 {
            let s_t = batch_logmag::<f32>(excerpts, cfg.ae.fft_size, cfg.ae.hop_size, dsp::LOG_EPS);
            let frames = s_t.dims()[2];
            let mut g = Graph::new();
            let mut sess = Session::new(&mut g, store);
            let s = sess.g.leaf(s_t, false);
            let c = ae1.encode(&mut sess, s);
            let out = ae1.decode(&mut sess, c);
            let target = sess.g.slice_time(
                s,
                Level1Ae::ENC_SHRINK,
                frames - Level1Ae::ENC_SHRINK - Level1Ae::DEC_SHRINK,
            );
            let loss = sess.g.l1_loss(out.logmag, target);
            sess.g.value(loss).item() as f64
        };
        let a = eval(&batch, &mut store);
        let b = eval(&permuted, &mut store);
        assert!((a - b).abs() / a.abs().max(1.0) < 1e-4, "{a} vs {b}");
    }

    #[test]
    fn phase2_freezes_encoder_and_runs() {
        let cfg = toy_cfg();
        let ae1 = Level1Ae::from_cfg(&cfg);
        let disc = SpectroDisc::new(AE1_DISC_PREFIX, cfg.ae.d_width);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        ae1.init(&mut store, &mut rng);
        disc.init(&mut store, &mut rng);
        let corpus = toy_corpus(4.0);
        let mut sampler = ExcerptSampler::new(&corpus, 5);
        let mut log = TrainLog::default();
        let enc_before = store.hash_matching(AE1_ENC_PREFIX);
        let dec_before = store.hash_matching("ae1.dec.");
        train_phase2(&cfg, &ae1, &disc, &mut store, &mut sampler, 4, &mut log).unwrap();
        assert_eq!(
            enc_before,
            store.hash_matching(AE1_ENC_PREFIX),
            "encoder changed during phase 2"
        );
        assert_ne!(
            dec_before,
            store.hash_matching("ae1.dec."),
            "decoder never updated"
        );
        // Adjacent-pair input to D has twice the frames of one excerpt.
        let (off, l) = recon_span(cfg.excerpt_samples(), cfg.ae.fft_size, cfg.ae.hop_size);
        let _ = off;
        let one = dsp::frame_count(l, DISC_FFT_FACTOR * cfg.ae.hop_size, cfg.ae.hop_size);
        let real = real_pair_tensor::<f32>(
            &[vec![0.1; cfg.excerpt_samples()]],
            &[vec![0.1; cfg.excerpt_samples()]],
            cfg.ae.fft_size,
            cfg.ae.hop_size,
            DISC_FFT_FACTOR * cfg.ae.hop_size,
        );
        assert_eq!(real.dims()[3], 2 * one);
    }

    #[test]
    fn level2_training_freezes_level1_and_descends() {
        let cfg = toy_cfg();
        let ae1 = Level1Ae::from_cfg(&cfg);
        let ae2 = Level2Ae::from_cfg(&cfg);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        ae1.init(&mut store, &mut rng);
        ae2.init(&mut store, &mut rng);
        let corpus = toy_corpus(4.0);
        let mut sampler = ExcerptSampler::new(&corpus, 8);
        let mut log = TrainLog::default();
        let l1_hash = store.hash_matching(AE1_PREFIX);
        train_level2_phase1(&cfg, &ae1, &ae2, &mut store, &mut sampler, 50, &mut log).unwrap();
        assert_eq!(l1_hash, store.hash_matching(AE1_PREFIX));
        let first = log.mean_in("ae2_phase1_l1", 0, 10).unwrap();
        let last = log.mean_in("ae2_phase1_l1", 40, 50).unwrap();
        assert!(last < first, "no descent: {first} -> {last}");
    }

    #[test]
    fn level2_real_fake_identity_when_round_trip_is_identity() {
        // With dec2(enc2(.)) contrived to the identity on the aligned slice,
        // the real and fake discriminator inputs coincide.
        let cfg = toy_cfg();
        let ae1 = Level1Ae::from_cfg(&cfg);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        ae1.init(&mut store, &mut rng);
        let corpus = toy_corpus(3.0);
        let mut sampler = ExcerptSampler::new(&corpus, 3);
        let batch = sampler.batch(1, cfg.excerpt_samples()).unwrap();
        let s_t = batch_logmag::<f32>(&batch, cfg.ae.fft_size, cfg.ae.hop_size, dsp::LOG_EPS);

        let mut g = Graph::new();
        let mut sess = Session::new(&mut g, &mut store);
        let s = sess.g.leaf(s_t, false);
        let c1 = ae1.encode(&mut sess, s);
        let t_c1 = sess.g.value(c1).dims3().2;
        // Identity "round trip": just slice the aligned window.
        let off = 3;
        let c1_hat = sess.g.slice_time(c1, off, t_c1 - 2 * off);
        let c1_ref = sess.g.slice_time(c1, off, t_c1 - 2 * off);
        let out_fake = ae1.decode(&mut sess, c1_hat);
        let out_real = ae1.decode(&mut sess, c1_ref);
        let zf = super::super::heads_to_complex(sess.g, &out_fake);
        let zr = super::super::heads_to_complex(sess.g, &out_real);
        let wf = sess.g.istft(zf, cfg.ae.fft_size, cfg.ae.hop_size);
        let wr = sess.g.istft(zr, cfg.ae.fft_size, cfg.ae.hop_size);
        assert_eq!(sess.g.value(wf).data(), sess.g.value(wr).data());
    }
}
