//! Two-level invertible audio representation.
//!
//! Level 1 maps log-magnitude spectrograms to a latent sequence (1D convs
//! over time with frequency bins as channels, stride 1, no padding, tanh
//! bottleneck) and decodes back to magnitude and phase heads. Level 2
//! compresses level-1 latents by `r_time2` with strided convs.
//!
//! Training ([`train`]) is two-phase per level: an L1 reconstruction phase,
//! then an adversarial phase with a frozen encoder where the decoder also
//! produces phases. Phase realism is learned indirectly: the reconstructed
//! waveform is re-analyzed (istft, stft, log) and a 2D discriminator judges
//! log-magnitude spectrograms of two adjacent excerpts, so phase errors and
//! boundary artifacts both cost the decoder.

pub mod train;

pub use train::{
    train_level2_phase1, train_level2_phase2, train_phase1, train_phase2, ExcerptSampler,
    TrainLog,
};

use rand::Rng;

use crate::config::RunConfig;
use crate::dsp;
use crate::nn::graph::{Graph, NodeId};
use crate::nn::layers::{Conv1dSpec, Conv2dSpec, ConvT1dSpec};
use crate::nn::params::{ParamStore, Session};
use crate::nn::scalar::Scalar;
use crate::nn::tensor::Tensor;

/// Discriminator STFT geometry: fft = 6 * hop (the hop is shared with the
/// autoencoder input geometry).
pub const DISC_FFT_FACTOR: usize = 6;

/// Parameter-name prefixes; freeze contracts and checkpoints key off these.
pub const AE1_PREFIX: &str = "ae1.";
pub const AE1_ENC_PREFIX: &str = "ae1.enc.";
pub const AE1_DISC_PREFIX: &str = "ae1d.";
pub const AE2_PREFIX: &str = "ae2.";
pub const AE2_ENC_PREFIX: &str = "ae2.enc.";
pub const AE2_DISC_PREFIX: &str = "ae2d.";

// ---------------------------------------------------------------------------
// Level 1
// ---------------------------------------------------------------------------

/// Level-1 spectrogram autoencoder.
pub struct Level1Ae {
    pub bins: usize,
    pub latent_dim: usize,
    enc: Vec<Conv1dSpec>,
    dec: Vec<Conv1dSpec>,
    mag_head: Conv1dSpec,
    phase_head: Conv1dSpec,
}

pub struct Dec1Out {
    /// Log-magnitude head (trained against the input spectrogram).
    pub logmag: NodeId,
    /// Phase head in radians (pi * tanh).
    pub phase: NodeId,
}

impl Level1Ae {
    /// Frames lost by the encoder (receptive field 9, stride 1).
    pub const ENC_SHRINK: usize = 8;
    /// Frames lost by the decoder.
    pub const DEC_SHRINK: usize = 8;

    pub fn new(fft_size: usize, latent_dim: usize, width: usize) -> Self {
        let bins = fft_size / 2 + 1;
        Level1Ae {
            bins,
            latent_dim,
            enc: vec![
                Conv1dSpec::new("ae1.enc.c0", bins, width, 5, 1),
                Conv1dSpec::new("ae1.enc.c1", width, width, 3, 1),
                Conv1dSpec::new("ae1.enc.c2", width, latent_dim, 3, 1),
            ],
            dec: vec![
                Conv1dSpec::new("ae1.dec.c0", latent_dim, width, 3, 1),
                Conv1dSpec::new("ae1.dec.c1", width, width, 3, 1),
            ],
            mag_head: Conv1dSpec::new("ae1.dec.mag", width, bins, 5, 1),
            phase_head: Conv1dSpec::new("ae1.dec.phase", width, bins, 5, 1),
        }
    }

    pub fn from_cfg(cfg: &RunConfig) -> Self {
        Self::new(cfg.ae.fft_size, cfg.ae.latent1_dim, cfg.ae.width1)
    }

    pub fn init<S: Scalar, R: Rng>(&self, store: &mut ParamStore<S>, rng: &mut R) {
        for c in self.enc.iter().chain(&self.dec) {
            c.init(store, rng);
        }
        self.mag_head.init(store, rng);
        self.phase_head.init(store, rng);
    }

    /// (B, bins, T) -> (B, latent_dim, T - 8), components in (-1, 1).
    pub fn encode<S: Scalar>(&self, sess: &mut Session<S>, s: NodeId) -> NodeId {
        let t = sess.g.value(s).dims3().2;
        assert!(
            t > Self::ENC_SHRINK,
            "need more than {} frames, got {t}",
            Self::ENC_SHRINK
        );
        let mut h = s;
        for (i, c) in self.enc.iter().enumerate() {
            h = c.forward(sess, h);
            if i + 1 < self.enc.len() {
                h = sess.g.leaky_relu(h, 0.2);
            }
        }
        sess.g.tanh(h)
    }

    /// (B, latent_dim, T) -> heads of length T - 8.
    pub fn decode<S: Scalar>(&self, sess: &mut Session<S>, c: NodeId) -> Dec1Out {
        let t = sess.g.value(c).dims3().2;
        assert!(t > Self::DEC_SHRINK, "latent too short: {t}");
        let mut h = c;
        for conv in &self.dec {
            h = conv.forward(sess, h);
            h = sess.g.leaky_relu(h, 0.2);
        }
        let logmag = self.mag_head.forward(sess, h);
        let ph_raw = self.phase_head.forward(sess, h);
        let ph_t = sess.g.tanh(ph_raw);
        let phase = sess.g.scale(ph_t, std::f64::consts::PI);
        Dec1Out { logmag, phase }
    }
}

// ---------------------------------------------------------------------------
// Level 2
// ---------------------------------------------------------------------------

/// Level-2 latent autoencoder: compresses level-1 latents by `r_time2`.
pub struct Level2Ae {
    pub r_time2: usize,
    pub latent_dim: usize,
    enc_pre: Conv1dSpec,
    enc_down: Vec<Conv1dSpec>,
    enc_out: Conv1dSpec,
    dec_in: Conv1dSpec,
    dec_up: Vec<ConvT1dSpec>,
    dec_refine: Conv1dSpec,
    dec_out: Conv1dSpec,
}

impl Level2Ae {
    pub fn new(latent1_dim: usize, latent2_dim: usize, r_time2: usize, width: usize) -> Self {
        assert!(r_time2.is_power_of_two() && r_time2 >= 2);
        let downs = r_time2.trailing_zeros() as usize;
        let enc_down = (0..downs)
            .map(|i| Conv1dSpec::new(format!("ae2.enc.d{i}"), width, width, 4, 2))
            .collect();
        let dec_up = (0..downs)
            .map(|i| ConvT1dSpec::new(format!("ae2.dec.u{i}"), width, width, 4, 2))
            .collect();
        Level2Ae {
            r_time2,
            latent_dim: latent2_dim,
            enc_pre: Conv1dSpec::new("ae2.enc.pre", latent1_dim, width, 3, 1),
            enc_down,
            enc_out: Conv1dSpec::new("ae2.enc.out", width, latent2_dim, 1, 1),
            dec_in: Conv1dSpec::new("ae2.dec.in", latent2_dim, width, 1, 1),
            dec_up,
            dec_refine: Conv1dSpec::new("ae2.dec.refine", width, width, 3, 1),
            dec_out: Conv1dSpec::new("ae2.dec.out", width, latent1_dim, 1, 1),
        }
    }

    pub fn from_cfg(cfg: &RunConfig) -> Self {
        Self::new(
            cfg.ae.latent1_dim,
            cfg.ae.latent2_dim,
            cfg.ae.r_time2,
            cfg.ae.width2,
        )
    }

    pub fn init<S: Scalar, R: Rng>(&self, store: &mut ParamStore<S>, rng: &mut R) {
        self.enc_pre.init(store, rng);
        for c in &self.enc_down {
            c.init(store, rng);
        }
        self.enc_out.init(store, rng);
        self.dec_in.init(store, rng);
        for c in &self.dec_up {
            c.init(store, rng);
        }
        self.dec_refine.init(store, rng);
        self.dec_out.init(store, rng);
    }

    /// Smallest level-1 latent length the encoder accepts.
    pub fn min_input_len(&self) -> usize {
        let mut need = 1usize;
        for _ in 0..self.enc_down.len() {
            need = (need - 1) * 2 + 4;
        }
        need + 2
    }

    pub fn encode_len(&self, mut t: usize) -> usize {
        t -= 2;
        for _ in 0..self.enc_down.len() {
            t = (t - 4) / 2 + 1;
        }
        t
    }

    pub fn decode_len(&self, mut t: usize) -> usize {
        for _ in 0..self.dec_up.len() {
            t = (t - 1) * 2 + 4;
        }
        t - 2
    }

    /// Centered alignment of `decode(encode(c1))` inside `c1`: returns
    /// (offset, length) of the covered slice.
    pub fn round_trip_align(&self, t_c1: usize) -> (usize, usize) {
        let out = self.decode_len(self.encode_len(t_c1));
        ((t_c1 - out) / 2, out)
    }

    pub fn encode<S: Scalar>(&self, sess: &mut Session<S>, c1: NodeId) -> NodeId {
        let mut h = self.enc_pre.forward(sess, c1);
        h = sess.g.leaky_relu(h, 0.2);
        for c in &self.enc_down {
            h = c.forward(sess, h);
            h = sess.g.leaky_relu(h, 0.2);
        }
        let out = self.enc_out.forward(sess, h);
        sess.g.tanh(out)
    }

    pub fn decode<S: Scalar>(&self, sess: &mut Session<S>, c2: NodeId) -> NodeId {
        let mut h = self.dec_in.forward(sess, c2);
        h = sess.g.leaky_relu(h, 0.2);
        for c in &self.dec_up {
            h = c.forward(sess, h);
            h = sess.g.leaky_relu(h, 0.2);
        }
        h = self.dec_refine.forward(sess, h);
        h = sess.g.leaky_relu(h, 0.2);
        let out = self.dec_out.forward(sess, h);
        sess.g.tanh(out)
    }
}

// ---------------------------------------------------------------------------
// Spectrogram discriminator (2D convs, spectral norm, patch-map output)
// ---------------------------------------------------------------------------

pub struct SpectroDisc {
    convs: Vec<Conv2dSpec>,
    head: Conv2dSpec,
}

impl SpectroDisc {
    pub fn new(prefix: &str, width: usize) -> Self {
        SpectroDisc {
            convs: vec![
                Conv2dSpec::new(format!("{prefix}c0"), 1, width, (7, 5), (4, 2)).spectral(),
                Conv2dSpec::new(format!("{prefix}c1"), width, width, (7, 5), (4, 2)).spectral(),
                Conv2dSpec::new(format!("{prefix}c2"), width, width, (3, 3), (2, 2)).spectral(),
            ],
            head: Conv2dSpec::new(format!("{prefix}head"), width, 1, (3, 3), (1, 1)).spectral(),
        }
    }

    pub fn init<S: Scalar, R: Rng>(&self, store: &mut ParamStore<S>, rng: &mut R) {
        for c in &self.convs {
            c.init(store, rng);
        }
        self.head.init(store, rng);
    }

    /// (B,1,F,T) -> patch map (B,1,F',T').
    pub fn forward<S: Scalar>(&self, sess: &mut Session<S>, x: NodeId) -> NodeId {
        let mut h = x;
        for c in &self.convs {
            h = c.forward(sess, h);
            h = sess.g.leaky_relu(h, 0.2);
        }
        self.head.forward(sess, h)
    }
}

// ---------------------------------------------------------------------------
// Spectrogram plumbing shared by training, generation, and the grad checks
// ---------------------------------------------------------------------------

/// Log-magnitude spectrogram batch tensor (B, bins, frames) from excerpts.
pub fn batch_logmag<S: Scalar>(
    excerpts: &[Vec<f32>],
    fft: usize,
    hop: usize,
    eps: f64,
) -> Tensor<S> {
    let b = excerpts.len();
    let bins = fft / 2 + 1;
    let frames = dsp::frame_count(excerpts[0].len(), fft, hop);
    let mut out = Tensor::zeros(&[b, bins, frames]);
    for (bi, x) in excerpts.iter().enumerate() {
        let xs: Vec<S> = x.iter().map(|&v| S::of_f64(v as f64)).collect();
        let sp = dsp::stft(&xs, fft, hop).expect("excerpt shorter than one frame");
        let lm = dsp::log_mag(&sp, S::of_f64(eps));
        for t in 0..frames {
            for f in 0..bins {
                out.data_mut()[(bi * bins + f) * frames + t] = lm.values[t * bins + f];
            }
        }
    }
    out
}

/// Waveform batch tensor (B, 1, N).
pub fn batch_wave<S: Scalar>(excerpts: &[Vec<f32>]) -> Tensor<S> {
    let b = excerpts.len();
    let n = excerpts[0].len();
    Tensor::from_fn(&[b, 1, n], |i| S::of_f64(excerpts[i / n][i % n] as f64))
}

/// Combine decoder heads into a (B,2,bins,T) re/im spectrogram:
/// `mag = exp(logmag/2)`, `(re, im) = mag * (cos phase, sin phase)`.
pub fn heads_to_complex<S: Scalar>(g: &mut Graph<S>, out: &Dec1Out) -> NodeId {
    let (b, bins, t) = g.value(out.logmag).dims3();
    let half = g.scale(out.logmag, 0.5);
    let mag = g.exp(half);
    let cosp = g.cos(out.phase);
    let sinp = g.sin(out.phase);
    let re = g.mul(mag, cosp);
    let im = g.mul(mag, sinp);
    let re4 = g.reshape(re, &[b, 1, bins, t]);
    let im4 = g.reshape(im, &[b, 1, bins, t]);
    g.concat_channel(re4, im4)
}

/// `log(|STFT(w)|^2 + eps)` as a rank-4 (B,1,F,T) node.
pub fn graph_logmag<S: Scalar>(
    g: &mut Graph<S>,
    w: NodeId,
    fft: usize,
    hop: usize,
    eps: f64,
) -> NodeId {
    let z = g.stft(w, fft, hop);
    let re = g.slice_channel(z, 0, 1);
    let im = g.slice_channel(z, 1, 1);
    let re2 = g.mul(re, re);
    let im2 = g.mul(im, im);
    let p = g.add(re2, im2);
    let pe = g.add_const(p, eps);
    g.ln(pe)
}

/// `|STFT(w)|` as a rank-4 node.
pub fn graph_mag<S: Scalar>(g: &mut Graph<S>, w: NodeId, fft: usize, hop: usize) -> NodeId {
    let z = g.stft(w, fft, hop);
    let re = g.slice_channel(z, 0, 1);
    let im = g.slice_channel(z, 1, 1);
    let re2 = g.mul(re, re);
    let im2 = g.mul(im, im);
    let p = g.add(re2, im2);
    g.sqrt(p)
}

/// Per-item multi-scale spectral loss between two (B,1,N) waveform nodes:
/// `mean_b sum_scales log(|| |STFT(a)| - |STFT(b)| ||_1 + eps)`.
pub fn graph_multiscale<S: Scalar>(
    g: &mut Graph<S>,
    w_ref: NodeId,
    w_rec: NodeId,
    eps: f64,
) -> NodeId {
    let b = g.value(w_ref).dims3().0;
    let mut total: Option<NodeId> = None;
    for &hop in dsp::MULTISCALE_HOPS.iter() {
        let fft = 4 * hop;
        let mag_a = graph_mag(g, w_ref, fft, hop);
        let mag_b = graph_mag(g, w_rec, fft, hop);
        let diff = g.sub(mag_a, mag_b);
        let ad = g.abs(diff);
        let (bb, _, f, t) = g.value(ad).dims4();
        debug_assert_eq!(b, bb);
        let flat = g.reshape(ad, &[b, 1, f * t]);
        let l1 = g.sum_time(flat); // (B, 1)
        let l1e = g.add_const(l1, eps);
        let lg = g.ln(l1e);
        let m = g.mean_all(lg);
        total = Some(match total {
            Some(acc) => g.add(acc, m),
            None => m,
        });
    }
    total.unwrap()
}

/// Full level-1 reconstruction chain: encode, decode, inverse STFT.
pub struct Level1Chain {
    pub latent: NodeId,
    pub logmag: NodeId,
    /// Reconstructed waveform (B,1,L), covering input samples starting at
    /// `ENC_SHRINK * hop`.
    pub w_tilde: NodeId,
}

pub fn level1_chain<S: Scalar>(
    sess: &mut Session<S>,
    ae1: &Level1Ae,
    s: NodeId,
    fft: usize,
    hop: usize,
) -> Level1Chain {
    let latent = ae1.encode(sess, s);
    let out = ae1.decode(sess, latent);
    let z = heads_to_complex(sess.g, &out);
    let w_tilde = sess.g.istft(z, fft, hop);
    Level1Chain {
        latent,
        logmag: out.logmag,
        w_tilde,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::Graph;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_ae1() -> Level1Ae {
        Level1Ae::new(64, 6, 8) // bins = 33
    }

    fn rand_spect(rng: &mut ChaCha8Rng, b: usize, bins: usize, t: usize) -> Tensor<f32> {
        Tensor::from_fn(&[b, bins, t], |_| rng.random_range(-3.0..3.0))
    }

    #[test]
    fn encoder_output_in_tanh_range_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let ae = tiny_ae1();
        let mut store = ParamStore::<f32>::new();
        ae.init(&mut store, &mut rng);
        let s_t = rand_spect(&mut rng, 2, ae.bins, 20);
        let run = |store: &mut ParamStore<f32>| {
            let mut g = Graph::new();
            let mut sess = Session::new(&mut g, store);
            let s = sess.g.leaf(s_t.clone(), false);
            let c = ae.encode(&mut sess, s);
            sess.g.value(c).clone()
        };
        let a = run(&mut store);
        let b = run(&mut store);
        assert_eq!(a, b);
        assert_eq!(a.dims(), &[2, 6, 12]);
        assert!(a.data().iter().all(|v| v.abs() < 1.0));

        // Zero input also stays strictly inside (-1, 1).
        let mut g = Graph::new();
        let mut sess = Session::new(&mut g, &mut store);
        let z = sess.g.leaf(Tensor::zeros(&[1, ae.bins, 12]), false);
        let c = ae.encode(&mut sess, z);
        assert!(sess.g.value(c).data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn encoder_is_exactly_shift_equivariant() {
        // Stride-1, no padding: shifting input frames shifts latents with
        // bit-identical values on the overlap.
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let ae = tiny_ae1();
        let mut store = ParamStore::<f32>::new();
        ae.init(&mut store, &mut rng);
        let t = 26;
        let s_t = rand_spect(&mut rng, 1, ae.bins, t);
        let k = 3usize;
        let shifted = {
            let mut out = Tensor::zeros(&[1, ae.bins, t - k]);
            for f in 0..ae.bins {
                for ti in 0..t - k {
                    out.data_mut()[f * (t - k) + ti] = s_t.at3(0, f, ti + k);
                }
            }
            out
        };
        let mut g = Graph::new();
        let mut sess = Session::new(&mut g, &mut store);
        let a = sess.g.leaf(s_t, false);
        let b = sess.g.leaf(shifted, false);
        let ca = ae.encode(&mut sess, a);
        let cb = ae.encode(&mut sess, b);
        let (va, vb) = (sess.g.value(ca), sess.g.value(cb));
        let tb = vb.dims3().2;
        for c in 0..6 {
            for ti in 0..tb {
                assert_eq!(
                    va.at3(0, c, ti + k).to_bits(),
                    vb.at3(0, c, ti).to_bits(),
                    "c={c} t={ti}"
                );
            }
        }
    }

    #[test]
    fn receptive_field_input_gives_length_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        let ae = tiny_ae1();
        let mut store = ParamStore::<f32>::new();
        ae.init(&mut store, &mut rng);
        let mut g = Graph::new();
        let mut sess = Session::new(&mut g, &mut store);
        let s = sess.g.leaf(rand_spect(&mut rng, 1, ae.bins, 9), false);
        let c = ae.encode(&mut sess, s);
        assert_eq!(sess.g.value(c).dims(), &[1, 6, 1]);
    }

    #[test]
    fn decoder_magnitude_positive_and_shapes_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        let ae = tiny_ae1();
        let mut store = ParamStore::<f32>::new();
        ae.init(&mut store, &mut rng);
        let mut g = Graph::new();
        let mut sess = Session::new(&mut g, &mut store);
        let c = sess
            .g
            .leaf(Tensor::from_fn(&[2, 6, 15], |_| rng.random_range(-0.9..0.9)), false);
        let out = ae.decode(&mut sess, c);
        assert_eq!(sess.g.value(out.logmag).dims(), &[2, ae.bins, 7]);
        let z = heads_to_complex(sess.g, &out);
        assert_eq!(sess.g.value(z).dims(), &[2, 2, ae.bins, 7]);
        // Magnitude is exp(logmag/2) > 0; phase within [-pi, pi].
        let ph = sess.g.value(out.phase);
        assert!(ph.data().iter().all(|v| v.abs() <= std::f32::consts::PI));
    }

    #[test]
    fn reconstruction_chain_length_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(74);
        let ae = tiny_ae1();
        let (fft, hop) = (64usize, 16usize);
        let mut store = ParamStore::<f32>::new();
        ae.init(&mut store, &mut rng);
        for frames in [20usize, 31, 44] {
            let mut g = Graph::new();
            let mut sess = Session::new(&mut g, &mut store);
            let s = sess.g.leaf(rand_spect(&mut rng, 1, ae.bins, frames), false);
            let ch = level1_chain(&mut sess, &ae, s, fft, hop);
            let rec_frames = frames - Level1Ae::ENC_SHRINK - Level1Ae::DEC_SHRINK;
            let expect = (rec_frames - 1) * hop + fft;
            assert_eq!(sess.g.value(ch.w_tilde).dims(), &[1, 1, expect]);
        }
    }

    #[test]
    fn level2_round_trip_shapes_and_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(75);
        for r2 in [4usize, 8, 16] {
            let ae2 = Level2Ae::new(6, 4, r2, 8);
            let mut store = ParamStore::<f32>::new();
            ae2.init(&mut store, &mut rng);
            let t = ae2.min_input_len() + 3 * r2;
            let mut g = Graph::new();
            let mut sess = Session::new(&mut g, &mut store);
            let c1 = sess
                .g
                .leaf(Tensor::from_fn(&[1, 6, t], |_| rng.random_range(-0.9..0.9)), false);
            let c2 = ae2.encode(&mut sess, c1);
            assert_eq!(sess.g.value(c2).dims()[2], ae2.encode_len(t), "r2={r2}");
            assert!(sess.g.value(c2).data().iter().all(|v| v.abs() < 1.0));
            let back = ae2.decode(&mut sess, c2);
            assert_eq!(
                sess.g.value(back).dims()[2],
                ae2.decode_len(ae2.encode_len(t))
            );
            assert!(sess.g.value(back).data().iter().all(|v| v.abs() < 1.0));
            let (off, len) = ae2.round_trip_align(t);
            assert!(off + len <= t);
        }
    }

    #[test]
    fn level2_shift_equivariance_at_stride_granularity() {
        let mut rng = ChaCha8Rng::seed_from_u64(76);
        let ae2 = Level2Ae::new(5, 3, 4, 8);
        let mut store = ParamStore::<f32>::new();
        ae2.init(&mut store, &mut rng);
        let t = 40;
        let x = Tensor::from_fn(&[1, 5, t], |_| rng.random_range(-0.9f32..0.9));
        let shift = ae2.r_time2; // total encoder stride
        let shifted = {
            let mut out = Tensor::zeros(&[1, 5, t - shift]);
            for c in 0..5 {
                for ti in 0..t - shift {
                    out.data_mut()[c * (t - shift) + ti] = x.at3(0, c, ti + shift);
                }
            }
            out
        };
        let mut g = Graph::new();
        let mut sess = Session::new(&mut g, &mut store);
        let a = sess.g.leaf(x, false);
        let b = sess.g.leaf(shifted, false);
        let ca = ae2.encode(&mut sess, a);
        let cb = ae2.encode(&mut sess, b);
        let (va, vb) = (sess.g.value(ca), sess.g.value(cb));
        let tb = vb.dims3().2;
        for c in 0..3 {
            for ti in 0..tb {
                assert_eq!(
                    va.at3(0, c, ti + 1).to_bits(),
                    vb.at3(0, c, ti).to_bits(),
                    "c={c} t={ti}"
                );
            }
        }
    }

    #[test]
    fn multiscale_graph_matches_plain_function() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 2100;
        let a: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f32> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let eps = dsp::LOG_EPS;
        let mut g = Graph::<f64>::new();
        let at = g.leaf(batch_wave::<f64>(&[a.clone()]), false);
        let bt = g.leaf(batch_wave::<f64>(&[b.clone()]), false);
        let node = graph_multiscale(&mut g, at, bt, eps);
        let a64: Vec<f64> = a.iter().map(|&v| v as f64).collect();
        let b64: Vec<f64> = b.iter().map(|&v| v as f64).collect();
        let reference = dsp::multiscale_spectral_distance(&a64, &b64, eps).unwrap();
        assert!(
            (g.value(node).item() - reference).abs() < 1e-6,
            "{} vs {}",
            g.value(node).item(),
            reference
        );
    }
}
