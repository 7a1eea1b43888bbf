//! Latent-sequence discriminator: a spectral-normalized 1D conv stack over
//! `2 * seq_len` windows, plus a single lightweight decoder that reconstructs
//! the discriminator's whole input from the mid-depth feature map (the
//! self-supervision that keeps the critic's features grounded).

use rand::Rng;

use crate::nn::graph::NodeId;
use crate::nn::layers::{Conv1dSpec, ConvT1dSpec};
use crate::nn::params::{ParamStore, Session};
use crate::nn::scalar::Scalar;

pub struct LatentDisc {
    /// Channels of the judged sequence (stereo-stacked latents + conditioning).
    pub in_ch: usize,
    /// Channels the auxiliary decoder reconstructs (the latent part only).
    pub latent_ch: usize,
    d0: Conv1dSpec,
    d1: Conv1dSpec,
    d2: Conv1dSpec,
    head: Conv1dSpec,
    aux_u0: ConvT1dSpec,
    aux_u1: ConvT1dSpec,
    aux_out: Conv1dSpec,
}

pub struct DiscOut {
    /// Patch-map scores (B, 1, T').
    pub score: NodeId,
    /// Reconstruction of the input latents (B, latent_ch, Ta).
    pub recon: NodeId,
    /// Time offset of the reconstruction inside the input window.
    pub recon_offset: usize,
}

impl LatentDisc {
    pub fn new(in_ch: usize, latent_ch: usize, width: usize) -> Self {
        LatentDisc {
            in_ch,
            latent_ch,
            d0: Conv1dSpec::new("gan.d.c0", in_ch, width, 4, 2).spectral(),
            d1: Conv1dSpec::new("gan.d.c1", width, width, 4, 2).spectral(),
            d2: Conv1dSpec::new("gan.d.c2", width, width, 3, 1).spectral(),
            head: Conv1dSpec::new("gan.d.head", width, 1, 3, 1).spectral(),
            aux_u0: ConvT1dSpec::new("gan.d.aux_u0", width, width, 4, 2),
            aux_u1: ConvT1dSpec::new("gan.d.aux_u1", width, width, 4, 2),
            aux_out: Conv1dSpec::new("gan.d.aux_out", width, latent_ch, 1, 1),
        }
    }

    pub fn init<S: Scalar, R: Rng>(&self, store: &mut ParamStore<S>, rng: &mut R) {
        for c in [&self.d0, &self.d1, &self.d2, &self.head] {
            c.init(store, rng);
        }
        self.aux_u0.init(store, rng);
        self.aux_u1.init(store, rng);
        self.aux_out.init(store, rng);
    }

    /// Length of the auxiliary reconstruction for an input of length `t`.
    pub fn recon_len(&self, t: usize) -> usize {
        let t0 = (t - 4) / 2 + 1;
        let t1 = (t0 - 4) / 2 + 1;
        let t2 = t1 - 2;
        let u0 = (t2 - 1) * 2 + 4;
        (u0 - 1) * 2 + 4
    }

    pub fn forward<S: Scalar>(&self, sess: &mut Session<S>, x: NodeId) -> DiscOut {
        let t_in = sess.g.value(x).dims3().2;
        let mut h = self.d0.forward(sess, x);
        h = sess.g.leaky_relu(h, 0.2);
        h = self.d1.forward(sess, h);
        h = sess.g.leaky_relu(h, 0.2);
        h = self.d2.forward(sess, h);
        h = sess.g.leaky_relu(h, 0.2);
        let mid = h;
        let score = self.head.forward(sess, mid);

        let mut r = self.aux_u0.forward(sess, mid);
        r = sess.g.leaky_relu(r, 0.2);
        r = self.aux_u1.forward(sess, r);
        r = sess.g.leaky_relu(r, 0.2);
        let r = self.aux_out.forward(sess, r);
        let recon = sess.g.tanh(r);
        let ta = sess.g.value(recon).dims3().2;
        assert!(ta <= t_in, "aux decoder overshoots its input: {ta} > {t_in}");
        DiscOut {
            score,
            recon,
            recon_offset: (t_in - ta) / 2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::graph::Graph;
    use crate::nn::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shapes_for_toy_and_full_presets() {
        let mut rng = ChaCha8Rng::seed_from_u64(95);
        for (seq_len, ch) in [(16usize, 8usize), (64, 32), (128, 128)] {
            let d = LatentDisc::new(ch + 1, ch, 12);
            let mut store = ParamStore::<f32>::new();
            d.init(&mut store, &mut rng);
            let mut g = Graph::new();
            let mut sess = Session::new(&mut g, &mut store);
            let x = sess.g.leaf(
                Tensor::from_fn(&[2, ch + 1, 2 * seq_len], |_| rng.random_range(-0.9..0.9)),
                false,
            );
            let out = d.forward(&mut sess, x);
            assert_eq!(sess.g.value(out.score).dims()[0..2], [2, 1]);
            let rd = sess.g.value(out.recon).dims().to_vec();
            assert_eq!(rd[1], ch);
            assert_eq!(rd[2], d.recon_len(2 * seq_len));
            assert!(out.recon_offset + rd[2] <= 2 * seq_len);
            // Reconstruction stays in the latent range.
            assert!(sess.g.value(out.recon).data().iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn spectral_norm_keeps_layers_near_nonexpansive() {
        // Per normalized layer, |f(x) - f(y)| <= (1 + 1e-2) |x - y| on random
        // probes (power iteration slightly underestimates sigma).
        let mut rng = ChaCha8Rng::seed_from_u64(96);
        let d = LatentDisc::new(5, 4, 8);
        let mut store = ParamStore::<f32>::new();
        d.init(&mut store, &mut rng);
        // Give sigma estimates a few iterations to settle.
        for _ in 0..30 {
            let mut g = Graph::new();
            let mut sess = Session::new(&mut g, &mut store);
            let x = sess.g.leaf(Tensor::zeros(&[1, 5, 32]), false);
            let _ = d.forward(&mut sess, x);
        }
        let mut g = Graph::new();
        let mut sess = Session::new(&mut g, &mut store);
        sess.update_spectral = false;
        let w = sess.param_spectral("gan.d.c0.w");
        let wv = sess.g.value(w).clone();
        // Apply the normalized weight matrix to single windows (input length
        // = kernel size so the conv is exactly one matrix application).
        let k = 4usize;
        for _ in 0..20 {
            let xa = Tensor::from_fn(&[1, 5, k], |_| rng.random_range(-1.0f32..1.0));
            let xb = Tensor::from_fn(&[1, 5, k], |_| rng.random_range(-1.0f32..1.0));
            let a = sess.g.leaf(xa.clone(), false);
            let b = sess.g.leaf(xb.clone(), false);
            let wn = sess.g.constant(wv.clone());
            let ya = sess.g.conv1d(a, wn, 2);
            let yb = sess.g.conv1d(b, wn, 2);
            let dy = {
                let d = sess.g.sub(ya, yb);
                let sq = sess.g.mul(d, d);
                let s = sess.g.sum_all(sq);
                sess.g.value(s).item().sqrt()
            };
            let dx = {
                let d = xa.zip(&xb, |p, q| p - q);
                d.data().iter().map(|v| (v * v) as f64).sum::<f64>().sqrt() as f32
            };
            assert!(
                dy <= 1.01 * dx + 1e-6,
                "normalized layer expanded: |dy| {dy} vs |dx| {dx}"
            );
        }
    }
}
