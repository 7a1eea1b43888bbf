//! The coordinate-conditioned latent generator.
//!
//! A padding-free 1D trunk: coordinates enter at the output grid, a strided
//! conv drops to 1/4 rate, two transposed convs climb back, and every hidden
//! layer is modulated by windowed-local SA-AdaIN driven by the (coordinates,
//! style, conditioning) stack at that layer's resolution. Skip-layer
//! excitation gates couple the coarse trunk into the fine layers.
//!
//! Every operation depends on a finite receptive field, so the generator is
//! exactly shift-covariant in steps of its internal stride (4): patches
//! generated from overlapping coordinate windows agree bit-for-bit on the
//! overlap, and concatenating patch outputs equals generating the joined
//! window in one call. That property is what makes infinite tiled generation
//! seamless by construction, and it is asserted by tests rather than assumed.

use rand::Rng;

use crate::nn::graph::NodeId;
use crate::nn::layers::{
    init_sa_adain, init_sle, sa_adain_local, sle_gate_local, Conv1dSpec, ConvT1dSpec,
};
use crate::nn::params::{ParamStore, Session};
use crate::nn::scalar::Scalar;
use crate::nn::tensor::Tensor;

/// Coordinate steps the window extends past the requested patch on each side.
pub const MARGIN: usize = 32;
/// Window of the local instance-norm statistics inside SA-AdaIN.
pub const NORM_WINDOW: usize = 5;
/// Internal downsampling stride; window starts must agree modulo this for
/// bit-exact overlap (patch tiling uses multiples of seq_len, which the
/// config forces to a multiple of 4).
pub const STRIDE: usize = 4;

/// One generation request: a coordinate window with margins, the shared
/// style vector, and an optional per-position conditioning channel.
#[derive(Clone, Debug)]
pub struct GenWindow {
    /// `len + 2 * MARGIN` coordinate vectors.
    pub coords: Vec<Vec<f64>>,
    pub style: Vec<f64>,
    /// Conditioning values aligned with `coords` (same length), if any.
    pub cond: Option<Vec<f64>>,
    /// Output patch length.
    pub len: usize,
}

pub struct Generator {
    pub coord_dim: usize,
    pub conditional: bool,
    pub out_ch: usize,
    pub width: usize,
    l0: Conv1dSpec,
    l1: Conv1dSpec,
    l2: ConvT1dSpec,
    l3: ConvT1dSpec,
    l4: Conv1dSpec,
    head: Conv1dSpec,
}

/// Geometry of an intermediate feature map relative to the window start:
/// feature `j` sits at coordinate position `off + rate * j` (leftmost
/// dependency convention).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Geom {
    off: usize,
    rate: usize,
}

impl Generator {
    pub fn new(coord_dim: usize, conditional: bool, out_ch: usize, width: usize) -> Self {
        let in_ch = coord_dim + usize::from(conditional);
        Generator {
            coord_dim,
            conditional,
            out_ch,
            width,
            l0: Conv1dSpec::new("gan.g.l0", in_ch, width, 8, 4),
            l1: Conv1dSpec::new("gan.g.l1", width, width, 3, 1),
            l2: ConvT1dSpec::new("gan.g.l2", width, width, 4, 2),
            l3: ConvT1dSpec::new("gan.g.l3", width, width, 4, 2),
            l4: Conv1dSpec::new("gan.g.l4", width, width, 3, 1),
            head: Conv1dSpec::new("gan.g.head", width, out_ch, 1, 1),
        }
    }

    fn mod_ch(&self) -> usize {
        2 * self.coord_dim + usize::from(self.conditional)
    }

    pub fn init<S: Scalar, R: Rng>(&self, store: &mut ParamStore<S>, rng: &mut R) {
        self.l0.init(store, rng);
        self.l1.init(store, rng);
        self.l2.init(store, rng);
        self.l3.init(store, rng);
        self.l4.init(store, rng);
        self.head.init(store, rng);
        for i in 0..5 {
            init_sa_adain(store, rng, &format!("gan.g.adain{i}"), self.width, self.mod_ch());
        }
        init_sle(store, rng, "gan.g.sle0", self.width, self.width);
        init_sle(store, rng, "gan.g.sle1", self.width, self.width);
    }

    /// Input tensor (B, d + cond, Lw) from the windows' coordinate vectors.
    fn input_tensor<S: Scalar>(&self, windows: &[GenWindow]) -> Tensor<S> {
        let b = windows.len();
        let lw = windows[0].coords.len();
        let in_ch = self.coord_dim + usize::from(self.conditional);
        let mut t = Tensor::zeros(&[b, in_ch, lw]);
        for (bi, w) in windows.iter().enumerate() {
            assert_eq!(w.coords.len(), lw, "mixed window lengths");
            for (ti, v) in w.coords.iter().enumerate() {
                assert_eq!(v.len(), self.coord_dim);
                for (ci, &x) in v.iter().enumerate() {
                    t.data_mut()[(bi * in_ch + ci) * lw + ti] = S::of_f64(x);
                }
            }
            if self.conditional {
                let cond = w
                    .cond
                    .as_ref()
                    .expect("conditional generator needs a conditioning track");
                assert_eq!(cond.len(), lw);
                for (ti, &x) in cond.iter().enumerate() {
                    t.data_mut()[(bi * in_ch + self.coord_dim) * lw + ti] = S::of_f64(x);
                }
            }
        }
        t
    }

    /// Modulation stack (B, 2d + cond, len) sampled at the layer's positions
    /// `off + rate * j`.
    fn modulation_tensor<S: Scalar>(
        &self,
        windows: &[GenWindow],
        geom: Geom,
        len: usize,
    ) -> Tensor<S> {
        let b = windows.len();
        let ch = self.mod_ch();
        let lw = windows[0].coords.len();
        let mut t = Tensor::zeros(&[b, ch, len]);
        for (bi, w) in windows.iter().enumerate() {
            for j in 0..len {
                let pos = geom.off + geom.rate * j;
                assert!(pos < lw, "modulation position {pos} outside window {lw}");
                for ci in 0..self.coord_dim {
                    t.data_mut()[(bi * ch + ci) * len + j] = S::of_f64(w.coords[pos][ci]);
                }
                for ci in 0..self.coord_dim {
                    t.data_mut()[(bi * ch + self.coord_dim + ci) * len + j] =
                        S::of_f64(w.style[ci]);
                }
                if self.conditional {
                    let cond = w.cond.as_ref().unwrap();
                    t.data_mut()[(bi * ch + 2 * self.coord_dim) * len + j] =
                        S::of_f64(cond[pos]);
                }
            }
        }
        t
    }

    fn adain<S: Scalar>(
        &self,
        sess: &mut Session<S>,
        idx: usize,
        x: NodeId,
        windows: &[GenWindow],
        geom: Geom,
    ) -> (NodeId, Geom) {
        let t_in = sess.g.value(x).dims3().2;
        let out_len = t_in - NORM_WINDOW + 1;
        let out_geom = Geom {
            off: geom.off + geom.rate * ((NORM_WINDOW - 1) / 2),
            rate: geom.rate,
        };
        let mod_t = self.modulation_tensor::<S>(windows, out_geom, out_len);
        let mod_in = sess.g.constant(mod_t);
        let y = sa_adain_local(
            sess,
            &format!("gan.g.adain{idx}"),
            x,
            mod_in,
            NORM_WINDOW,
            1e-5,
        );
        (y, out_geom)
    }

    /// Generate patches for a batch of equal-length windows:
    /// returns (B, out_ch, len) with output j at coordinate position
    /// `window_start + MARGIN + j`.
    pub fn generate<S: Scalar>(&self, sess: &mut Session<S>, windows: &[GenWindow]) -> NodeId {
        assert!(!windows.is_empty());
        let len = windows[0].len;
        assert!(windows.iter().all(|w| w.len == len));
        let lw = len + 2 * MARGIN;
        assert!(windows.iter().all(|w| w.coords.len() == lw));
        assert_eq!(len % STRIDE, 0, "patch length must be a multiple of {STRIDE}");

        let x = sess.g.leaf(self.input_tensor::<S>(windows), false);

        // l0: rate 1 -> 4.
        let mut g = Geom { off: 0, rate: 1 };
        let mut h = self.l0.forward(sess, x);
        g = Geom { off: g.off, rate: g.rate * 4 };
        let (mut h2, mut g2) = self.adain(sess, 0, h, windows, g);
        h2 = sess.g.leaky_relu(h2, 0.2);
        let sle1_src = (h2, g2);

        // l1: stride 1 at rate 4.
        h = self.l1.forward(sess, h2);
        (h2, g2) = self.adain(sess, 1, h, windows, g2);
        h2 = sess.g.leaky_relu(h2, 0.2);
        let sle0_src = (h2, g2);

        // l2: rate 4 -> 2.
        h = self.l2.forward(sess, h2);
        g = Geom { off: g2.off, rate: g2.rate / 2 };
        (h2, g2) = self.adain(sess, 2, h, windows, g);
        h2 = sess.g.leaky_relu(h2, 0.2);

        // l3: rate 2 -> 1.
        h = self.l3.forward(sess, h2);
        g = Geom { off: g2.off, rate: g2.rate / 2 };
        (h2, g2) = self.adain(sess, 3, h, windows, g);
        h2 = sess.g.leaky_relu(h2, 0.2);
        // Gate from the rate-4 trunk (l1 features).
        let offset0 = (g2.off - sle0_src.1.off) / g2.rate;
        h2 = sle_gate_local(
            sess,
            "gan.g.sle0",
            sle0_src.0,
            h2,
            1,
            sle0_src.1.rate / g2.rate,
            offset0,
        );

        // l4: stride 1 at rate 1.
        h = self.l4.forward(sess, h2);
        (h2, g2) = self.adain(sess, 4, h, windows, g2);
        h2 = sess.g.leaky_relu(h2, 0.2);
        let offset1 = (g2.off - sle1_src.1.off) / g2.rate;
        h2 = sle_gate_local(
            sess,
            "gan.g.sle1",
            sle1_src.0,
            h2,
            1,
            sle1_src.1.rate / g2.rate,
            offset1,
        );

        // Output head.
        let raw = self.head.forward(sess, h2);
        let out = sess.g.tanh(raw);

        // Slice the requested patch out of the raw (slightly longer) output.
        let raw_len = sess.g.value(out).dims3().2;
        assert_eq!(g2.rate, 1);
        assert!(g2.off <= MARGIN, "geometry drift: off {} > margin", g2.off);
        let slice_at = MARGIN - g2.off;
        assert!(
            slice_at + len <= raw_len,
            "window too small: raw {raw_len}, need {}",
            slice_at + len
        );
        sess.g.slice_time(out, slice_at, len)
    }
}
