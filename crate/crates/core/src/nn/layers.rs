//! Layer building blocks: convolution specs, normalizations, coordinate/style
//! modulation (SA-AdaIN) and skip-layer excitation gates.
//!
//! Two flavors of the statistics-based blocks exist:
//!
//! * the plain versions (`instance_norm`, `sa_adain`, `sle_gate`) use global
//!   statistics over the whole time axis, and
//! * `local_*` variants compute statistics over a fixed window so the output
//!   at a position depends only on a finite receptive field. The generator is
//!   assembled exclusively from local blocks: that is what makes patches from
//!   overlapping coordinate windows agree exactly on the overlap.

use rand::Rng;

use super::graph::NodeId;
use super::init::uniform_fan_in;
use super::params::{ParamStore, Session};
use super::scalar::Scalar;
use super::tensor::Tensor;

/// A 1D convolution layer (no padding).
#[derive(Clone, Debug)]
pub struct Conv1dSpec {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub spectral: bool,
}

impl Conv1dSpec {
    pub fn new(name: impl Into<String>, in_ch: usize, out_ch: usize, k: usize, stride: usize) -> Self {
        Conv1dSpec {
            name: name.into(),
            in_ch,
            out_ch,
            k,
            stride,
            spectral: false,
        }
    }

    pub fn spectral(mut self) -> Self {
        self.spectral = true;
        self
    }

    pub fn init<S: Scalar, R: Rng>(&self, store: &mut ParamStore<S>, rng: &mut R) {
        let w = uniform_fan_in(rng, &[self.out_ch, self.in_ch, self.k], self.in_ch * self.k);
        store.insert(&format!("{}.w", self.name), w, true);
        store.insert(
            &format!("{}.b", self.name),
            Tensor::zeros(&[self.out_ch]),
            true,
        );
    }

    pub fn out_len(&self, t_in: usize) -> usize {
        (t_in - self.k) / self.stride + 1
    }

    pub fn forward<S: Scalar>(&self, sess: &mut Session<S>, x: NodeId) -> NodeId {
        let w = if self.spectral {
            sess.param_spectral(&format!("{}.w", self.name))
        } else {
            sess.param(&format!("{}.w", self.name))
        };
        let b = sess.param(&format!("{}.b", self.name));
        let y = sess.g.conv1d(x, w, self.stride);
        sess.g.add_bias(y, b)
    }
}

/// A transposed 1D convolution layer (upsampling), output length
/// `(T-1)*stride + k`.
#[derive(Clone, Debug)]
pub struct ConvT1dSpec {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
}

impl ConvT1dSpec {
    pub fn new(name: impl Into<String>, in_ch: usize, out_ch: usize, k: usize, stride: usize) -> Self {
        ConvT1dSpec {
            name: name.into(),
            in_ch,
            out_ch,
            k,
            stride,
        }
    }

    pub fn init<S: Scalar, R: Rng>(&self, store: &mut ParamStore<S>, rng: &mut R) {
        // Weight layout matches the conv it is adjoint to: (in_ch, out_ch, k).
        let w = uniform_fan_in(rng, &[self.in_ch, self.out_ch, self.k], self.in_ch * self.k);
        store.insert(&format!("{}.w", self.name), w, true);
        store.insert(
            &format!("{}.b", self.name),
            Tensor::zeros(&[self.out_ch]),
            true,
        );
    }

    pub fn out_len(&self, t_in: usize) -> usize {
        (t_in - 1) * self.stride + self.k
    }

    pub fn forward<S: Scalar>(&self, sess: &mut Session<S>, x: NodeId) -> NodeId {
        let w = sess.param(&format!("{}.w", self.name));
        let b = sess.param(&format!("{}.b", self.name));
        let t_in = sess.g.value(x).dims3().2;
        let y = sess.g.conv_t1d(x, w, self.stride, self.out_len(t_in));
        sess.g.add_bias(y, b)
    }
}

/// A 2D convolution layer (no padding), for spectrogram discriminators.
#[derive(Clone, Debug)]
pub struct Conv2dSpec {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: (usize, usize),
    pub stride: (usize, usize),
    pub spectral: bool,
}

impl Conv2dSpec {
    pub fn new(
        name: impl Into<String>,
        in_ch: usize,
        out_ch: usize,
        k: (usize, usize),
        stride: (usize, usize),
    ) -> Self {
        Conv2dSpec {
            name: name.into(),
            in_ch,
            out_ch,
            k,
            stride,
            spectral: false,
        }
    }

    pub fn spectral(mut self) -> Self {
        self.spectral = true;
        self
    }

    pub fn init<S: Scalar, R: Rng>(&self, store: &mut ParamStore<S>, rng: &mut R) {
        let fan_in = self.in_ch * self.k.0 * self.k.1;
        let w = uniform_fan_in(rng, &[self.out_ch, self.in_ch, self.k.0, self.k.1], fan_in);
        store.insert(&format!("{}.w", self.name), w, true);
        store.insert(
            &format!("{}.b", self.name),
            Tensor::zeros(&[self.out_ch]),
            true,
        );
    }

    pub fn out_hw(&self, f: usize, t: usize) -> (usize, usize) {
        ((f - self.k.0) / self.stride.0 + 1, (t - self.k.1) / self.stride.1 + 1)
    }

    pub fn forward<S: Scalar>(&self, sess: &mut Session<S>, x: NodeId) -> NodeId {
        let w = if self.spectral {
            sess.param_spectral(&format!("{}.w", self.name))
        } else {
            sess.param(&format!("{}.w", self.name))
        };
        let b = sess.param(&format!("{}.b", self.name));
        let y = sess.g.conv2d(x, w, self.stride);
        sess.g.add_bias(y, b)
    }
}

/// Instance normalization over the whole time axis: per (batch, channel),
/// zero mean and unit variance.
pub fn instance_norm<S: Scalar>(
    g: &mut super::graph::Graph<S>,
    x: NodeId,
    eps: f64,
) -> NodeId {
    let t = g.value(x).dims3().2;
    let mean = g.mean_time(x);
    let mean_b = g.broadcast_time(mean, t);
    let centered = g.sub(x, mean_b);
    let sq = g.mul(centered, centered);
    let var = g.mean_time(sq);
    let var_eps = g.add_const(var, eps);
    let std = g.sqrt(var_eps);
    let std_b = g.broadcast_time(std, t);
    g.div(centered, std_b)
}

/// Windowed instance normalization: statistics over a centered window of
/// `window` steps. Output is `T - window + 1` long (valid positions only), so
/// each output depends on a finite receptive field.
pub fn local_instance_norm<S: Scalar>(
    g: &mut super::graph::Graph<S>,
    x: NodeId,
    window: usize,
    eps: f64,
) -> NodeId {
    let t = g.value(x).dims3().2;
    assert!(t >= window, "local_instance_norm: length {t} < window {window}");
    let to = t - window + 1;
    let inv_k = 1.0 / window as f64;
    let sums = g.mov_sum_time(x, window);
    let mean = g.scale(sums, inv_k);
    let x2 = g.mul(x, x);
    let sums2 = g.mov_sum_time(x2, window);
    let mean2 = g.scale(sums2, inv_k);
    let mean_sq = g.mul(mean, mean);
    let var = g.sub(mean2, mean_sq);
    // E[x^2]-E[x]^2 can dip epsilon-negative in floating point.
    let var = g.relu(var);
    let var_eps = g.add_const(var, eps);
    let std = g.sqrt(var_eps);
    let off = (window - 1) / 2;
    let x_c = g.slice_time(x, off, to);
    let centered = g.sub(x_c, mean);
    g.div(centered, std)
}

/// Spatially aligned adaptive instance normalization: normalize per channel
/// over time, then scale/shift with per-timestep affine functions of
/// `mod_input` (coordinates/conditioning/style stacked channelwise):
/// `y = IN(x) * (1 + scale(t)) + shift(t)`.
///
/// With zero modulation weights this reduces to plain instance norm.
pub fn sa_adain<S: Scalar>(
    sess: &mut Session<S>,
    name: &str,
    x: NodeId,
    mod_input: NodeId,
    eps: f64,
) -> NodeId {
    let xn = instance_norm(sess.g, x, eps);
    modulate(sess, name, xn, mod_input)
}

/// Local variant: windowed instance norm followed by the same modulation.
/// `mod_input` must already be aligned to the normalized (shrunken) output.
pub fn sa_adain_local<S: Scalar>(
    sess: &mut Session<S>,
    name: &str,
    x: NodeId,
    mod_input: NodeId,
    window: usize,
    eps: f64,
) -> NodeId {
    let xn = local_instance_norm(sess.g, x, window, eps);
    modulate(sess, name, xn, mod_input)
}

fn modulate<S: Scalar>(
    sess: &mut Session<S>,
    name: &str,
    xn: NodeId,
    mod_input: NodeId,
) -> NodeId {
    let (_, c, t) = sess.g.value(xn).dims3();
    let (_, _, tm) = sess.g.value(mod_input).dims3();
    assert_eq!(t, tm, "modulation input misaligned: {t} vs {tm}");
    let w = sess.param(&format!("{name}.mod.w"));
    let b = sess.param(&format!("{name}.mod.b"));
    let sb = sess.g.conv1d(mod_input, w, 1);
    let sb = sess.g.add_bias(sb, b);
    let scale = sess.g.slice_channel(sb, 0, c);
    let shift = sess.g.slice_channel(sb, c, c);
    let gain = sess.g.add_const(scale, 1.0);
    let scaled = sess.g.mul(xn, gain);
    sess.g.add(scaled, shift)
}

/// Register the modulation map parameters for a (local or global) SA-AdaIN
/// block with `channels` feature channels and `mod_ch` modulation channels.
pub fn init_sa_adain<S: Scalar, R: Rng>(
    store: &mut ParamStore<S>,
    rng: &mut R,
    name: &str,
    channels: usize,
    mod_ch: usize,
) {
    let w = uniform_fan_in(rng, &[2 * channels, mod_ch, 1], mod_ch);
    store.insert(&format!("{name}.mod.w"), w, true);
    store.insert(&format!("{name}.mod.b"), Tensor::zeros(&[2 * channels]), true);
}

/// Skip-layer excitation: pool `low` over its whole extent, squeeze through a
/// small MLP, and gate `high` channelwise with a sigmoid.
pub fn sle_gate<S: Scalar>(
    sess: &mut Session<S>,
    name: &str,
    low: NodeId,
    high: NodeId,
) -> NodeId {
    let (b, c_low, _) = sess.g.value(low).dims3();
    let t_high = sess.g.value(high).dims3().2;
    let pooled = sess.g.mean_time(low);
    let pooled = sess.g.reshape(pooled, &[b, c_low, 1]);
    let gate = sle_mlp(sess, name, pooled);
    let gate2 = {
        let ch = sess.g.value(gate).dims3().1;
        let r = sess.g.reshape(gate, &[b, ch]);
        sess.g.broadcast_time(r, t_high)
    };
    sess.g.mul(high, gate2)
}

/// Local skip-layer excitation: pool `low` over sliding windows instead of
/// globally, upsample the gate to `high`'s rate, and gate elementwise.
///
/// `offset` is the position shift (in high-rate steps) between the gate and
/// `high`; callers derive it from tracked layer geometry. A length-derived
/// centering would silently differ between window sizes and break the
/// joint-versus-tiled equality.
pub fn sle_gate_local<S: Scalar>(
    sess: &mut Session<S>,
    name: &str,
    low: NodeId,
    high: NodeId,
    window: usize,
    upsample: usize,
    offset: usize,
) -> NodeId {
    let pooled = if window > 1 {
        let sums = sess.g.mov_sum_time(low, window);
        sess.g.scale(sums, 1.0 / window as f64)
    } else {
        low
    };
    let gate = sle_mlp(sess, name, pooled);
    let gate_up = sess.g.upsample_nearest(gate, upsample);
    let t_high = sess.g.value(high).dims3().2;
    let t_gate = sess.g.value(gate_up).dims3().2;
    assert!(
        offset + t_high <= t_gate,
        "sle gate too short: {t_gate} < {offset} + {t_high} (window {window}, up {upsample})"
    );
    let gate_cut = sess.g.slice_time(gate_up, offset, t_high);
    sess.g.mul(high, gate_cut)
}

fn sle_mlp<S: Scalar>(sess: &mut Session<S>, name: &str, pooled: NodeId) -> NodeId {
    let w1 = sess.param(&format!("{name}.sle.w1"));
    let b1 = sess.param(&format!("{name}.sle.b1"));
    let w2 = sess.param(&format!("{name}.sle.w2"));
    let b2 = sess.param(&format!("{name}.sle.b2"));
    let h = sess.g.conv1d(pooled, w1, 1);
    let h = sess.g.add_bias(h, b1);
    let h = sess.g.leaky_relu(h, 0.2);
    let h = sess.g.conv1d(h, w2, 1);
    let h = sess.g.add_bias(h, b2);
    sess.g.sigmoid(h)
}

pub fn init_sle<S: Scalar, R: Rng>(
    store: &mut ParamStore<S>,
    rng: &mut R,
    name: &str,
    c_low: usize,
    c_high: usize,
) {
    let mid = (c_low / 2).max(2);
    let w1 = uniform_fan_in(rng, &[mid, c_low, 1], c_low);
    store.insert(&format!("{name}.sle.w1"), w1, true);
    store.insert(&format!("{name}.sle.b1"), Tensor::zeros(&[mid]), true);
    let w2 = uniform_fan_in(rng, &[c_high, mid, 1], mid);
    store.insert(&format!("{name}.sle.w2"), w2, true);
    store.insert(&format!("{name}.sle.b2"), Tensor::zeros(&[c_high]), true);
}
