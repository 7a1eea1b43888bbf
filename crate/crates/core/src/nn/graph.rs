//! Tape-based autodiff.
//!
//! Operators execute eagerly and append a node to the tape. `backward` walks
//! the tape in reverse and *records the gradient computation as new tape
//! nodes*, so a gradient is itself differentiable — the R1 penalty
//! differentiates the discriminator's input gradient with respect to its
//! weights through exactly this mechanism.
//!
//! The operator set is closed under differentiation: every backward rule is
//! expressed through forward operators (convolutions pair with their
//! adjoints, STFT with its adjoint, elementwise ops with elementwise ops).

use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::dsp;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct NodeId(pub usize);

#[derive(Clone, Debug)]
pub enum Op {
    Leaf,
    // elementwise unary
    Neg,
    Exp,
    Ln,
    Sqrt,
    Tanh,
    Sigmoid,
    Sin,
    Cos,
    Abs,
    LeakyRelu { slope: f64 },
    Scale { c: f64 },
    AddConst { c: f64 },
    ClampMin { c: f64 },
    /// 1.0 where x > c, else 0.0. Not differentiable; used for safe masks.
    GtMask { c: f64 },
    // elementwise binary (same shape, or one side rank-0)
    Add,
    Sub,
    Mul,
    Div,
    // reductions and broadcasts
    SumAll,
    BroadcastAs { dims: Vec<usize> },
    SumTime,
    BroadcastTime { t: usize },
    SumToChannel,
    BroadcastChannel { dims: Vec<usize> },
    // movement
    Reshape { dims: Vec<usize> },
    SliceTime { start: usize, len: usize },
    EmbedTime { start: usize, total: usize },
    ConcatTime,
    SliceChannel { start: usize, len: usize },
    EmbedChannel { start: usize, total: usize },
    ConcatChannel,
    UpsampleNearest { factor: usize },
    SumPool { factor: usize },
    /// Valid moving sum of width k along time: out length T - k + 1.
    MovSumTime { k: usize },
    MovSumAdjTime { k: usize, total: usize },
    /// (2B,C,T) -> (B,C,2T): adjacent batch items become one sequence.
    PairTime,
    /// Inverse permutation of PairTime.
    UnpairTime,
    // convolutions (no padding anywhere)
    Conv1d { stride: usize },
    ConvT1d { stride: usize, out_len: usize },
    Conv1dWGrad { stride: usize, k: usize },
    Conv2d { stride: (usize, usize) },
    ConvT2d { stride: (usize, usize), out_hw: (usize, usize) },
    Conv2dWGrad { stride: (usize, usize), khw: (usize, usize) },
    // waveform <-> spectrogram boundary
    Stft { fft: usize, hop: usize },
    StftAdj { fft: usize, hop: usize, out_len: usize },
    Istft { fft: usize, hop: usize },
    IstftAdj { fft: usize, hop: usize },
}

pub struct Node<S: Scalar> {
    pub op: Op,
    pub inputs: Vec<NodeId>,
    pub value: Tensor<S>,
    pub needs_grad: bool,
}

/// Per-step computation tape.
pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
}

/// Result of a backward pass: gradient node per original node (if reached).
pub struct Grads {
    map: Vec<Option<NodeId>>,
}

impl Grads {
    pub fn get(&self, id: NodeId) -> Option<NodeId> {
        self.map.get(id.0).copied().flatten()
    }
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        &self.nodes[id.0].value
    }

    pub fn dims(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.dims()
    }

    pub fn needs_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Scan every node value for NaN/Inf; used by tests and step validation.
    pub fn all_finite(&self) -> bool {
        self.nodes.iter().all(|n| n.value.is_finite())
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor<S>) -> NodeId {
        let needs_grad = !matches!(op, Op::GtMask { .. })
            && inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            op,
            inputs,
            value,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<S>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            inputs: vec![],
            value,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> NodeId {
        self.leaf(value, false)
    }

    pub fn scalar_const(&mut self, v: f64) -> NodeId {
        self.constant(Tensor::scalar(S::of_f64(v)))
    }

    /// Copy a node's value into a fresh gradient-stopped leaf.
    pub fn detach(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).clone();
        self.constant(v)
    }

    // ---- elementwise unary ----------------------------------------------

    fn unary(&mut self, op: Op, x: NodeId, f: impl Fn(S) -> S) -> NodeId {
        let v = self.value(x).map(f);
        self.push(op, vec![x], v)
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Neg, x, |v| -v)
    }
    pub fn exp(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Exp, x, |v| v.exp())
    }
    pub fn ln(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Ln, x, |v| v.ln())
    }
    pub fn sqrt(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Sqrt, x, |v| v.sqrt())
    }
    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Tanh, x, |v| v.tanh())
    }
    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Sigmoid, x, |v| S::one() / (S::one() + (-v).exp()))
    }
    pub fn sin(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Sin, x, |v| v.sin())
    }
    pub fn cos(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Cos, x, |v| v.cos())
    }
    pub fn abs(&mut self, x: NodeId) -> NodeId {
        self.unary(Op::Abs, x, |v| v.abs())
    }
    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let s = S::of_f64(slope);
        self.unary(Op::LeakyRelu { slope }, x, move |v| {
            if v > S::zero() {
                v
            } else {
                v * s
            }
        })
    }
    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.leaky_relu(x, 0.0)
    }
    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let s = S::of_f64(c);
        self.unary(Op::Scale { c }, x, move |v| v * s)
    }
    pub fn add_const(&mut self, x: NodeId, c: f64) -> NodeId {
        let s = S::of_f64(c);
        self.unary(Op::AddConst { c }, x, move |v| v + s)
    }
    pub fn clamp_min(&mut self, x: NodeId, c: f64) -> NodeId {
        let s = S::of_f64(c);
        self.unary(Op::ClampMin { c }, x, move |v| if v > s { v } else { s })
    }
    pub fn gt_mask(&mut self, x: NodeId, c: f64) -> NodeId {
        let s = S::of_f64(c);
        self.unary(Op::GtMask { c }, x, move |v| {
            if v > s {
                S::one()
            } else {
                S::zero()
            }
        })
    }

    // ---- elementwise binary ---------------------------------------------

    fn binary(&mut self, op: Op, a: NodeId, b: NodeId, f: impl Fn(S, S) -> S) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        let value = if va.dims() == vb.dims() {
            va.zip(vb, f)
        } else if vb.rank() == 0 {
            let s = vb.item();
            va.map(|x| f(x, s))
        } else if va.rank() == 0 {
            let s = va.item();
            vb.map(|x| f(s, x))
        } else {
            panic!(
                "binary op shape mismatch: {:?} vs {:?}",
                va.dims(),
                vb.dims()
            );
        };
        self.push(op, vec![a, b], value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(Op::Add, a, b, |x, y| x + y)
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(Op::Sub, a, b, |x, y| x - y)
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(Op::Mul, a, b, |x, y| x * y)
    }
    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.binary(Op::Div, a, b, |x, y| x / y)
    }

    // ---- reductions / broadcasts ----------------------------------------

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: S = self.value(x).data().iter().cloned().sum();
        self.push(Op::SumAll, vec![x], Tensor::scalar(s))
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).numel();
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n as f64)
    }

    pub fn broadcast_as(&mut self, x: NodeId, dims: &[usize]) -> NodeId {
        assert_eq!(self.value(x).rank(), 0, "broadcast_as wants a scalar");
        let v = self.value(x).item();
        self.push(
            Op::BroadcastAs { dims: dims.to_vec() },
            vec![x],
            Tensor::full(dims, v),
        )
    }

    /// (B,C,T) -> (B,C): sum over the time axis.
    pub fn sum_time(&mut self, x: NodeId) -> NodeId {
        let (b, c, t) = self.value(x).dims3();
        let xv = self.value(x);
        let mut out = Tensor::zeros(&[b, c]);
        for bi in 0..b {
            for ci in 0..c {
                let mut acc = S::zero();
                for ti in 0..t {
                    acc += xv.at3(bi, ci, ti);
                }
                out.data_mut()[bi * c + ci] = acc;
            }
        }
        self.push(Op::SumTime, vec![x], out)
    }

    pub fn mean_time(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x).dims3().2;
        let s = self.sum_time(x);
        self.scale(s, 1.0 / t as f64)
    }

    /// (B,C) -> (B,C,T): repeat along a new time axis.
    pub fn broadcast_time(&mut self, x: NodeId, t: usize) -> NodeId {
        let dims = self.value(x).dims().to_vec();
        assert_eq!(dims.len(), 2, "broadcast_time wants (B,C)");
        let (b, c) = (dims[0], dims[1]);
        let xv = self.value(x);
        let mut out = Tensor::zeros(&[b, c, t]);
        for bi in 0..b {
            for ci in 0..c {
                let v = xv.data()[bi * c + ci];
                for ti in 0..t {
                    out.data_mut()[(bi * c + ci) * t + ti] = v;
                }
            }
        }
        self.push(Op::BroadcastTime { t }, vec![x], out)
    }

    /// (B,C,...) -> (C,): sum over batch and trailing axes.
    pub fn sum_to_channel(&mut self, x: NodeId) -> NodeId {
        let dims = self.value(x).dims().to_vec();
        assert!(dims.len() >= 2);
        let (b, c) = (dims[0], dims[1]);
        let rest: usize = dims[2..].iter().product();
        let xv = self.value(x);
        let mut out = Tensor::zeros(&[c]);
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * rest;
                let mut acc = S::zero();
                for r in 0..rest {
                    acc += xv.data()[base + r];
                }
                out.data_mut()[ci] += acc;
            }
        }
        self.push(Op::SumToChannel, vec![x], out)
    }

    /// (C,) -> dims (rank >= 2 with dims[1] == C).
    pub fn broadcast_channel(&mut self, x: NodeId, dims: &[usize]) -> NodeId {
        let c = self.value(x).numel();
        assert!(dims.len() >= 2 && dims[1] == c, "broadcast_channel shape");
        let b = dims[0];
        let rest: usize = dims[2..].iter().product();
        let xv = self.value(x);
        let mut out = Tensor::zeros(dims);
        for bi in 0..b {
            for ci in 0..c {
                let v = xv.data()[ci];
                let base = (bi * c + ci) * rest;
                for r in 0..rest {
                    out.data_mut()[base + r] = v;
                }
            }
        }
        self.push(
            Op::BroadcastChannel { dims: dims.to_vec() },
            vec![x],
            out,
        )
    }

    // ---- movement ---------------------------------------------------------

    pub fn reshape(&mut self, x: NodeId, dims: &[usize]) -> NodeId {
        let v = self.value(x);
        assert_eq!(
            v.numel(),
            dims.iter().product::<usize>(),
            "reshape {:?} -> {:?}",
            v.dims(),
            dims
        );
        let out = Tensor::new(dims.to_vec(), v.data().to_vec());
        self.push(Op::Reshape { dims: dims.to_vec() }, vec![x], out)
    }

    /// Slice `[start, start+len)` along the last axis.
    pub fn slice_time(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let dims = self.value(x).dims().to_vec();
        let t = *dims.last().expect("slice_time needs rank >= 1");
        assert!(start + len <= t, "slice [{start}, {}) of T={t}", start + len);
        let rows: usize = dims[..dims.len() - 1].iter().product();
        let xv = self.value(x);
        let mut out_dims = dims.clone();
        *out_dims.last_mut().unwrap() = len;
        let mut out = Tensor::zeros(&out_dims);
        for r in 0..rows {
            let src = &xv.data()[r * t + start..r * t + start + len];
            out.data_mut()[r * len..(r + 1) * len].copy_from_slice(src);
        }
        self.push(Op::SliceTime { start, len }, vec![x], out)
    }

    /// Embed into zeros of `total` along the last axis (adjoint of slice).
    pub fn embed_time(&mut self, x: NodeId, start: usize, total: usize) -> NodeId {
        let dims = self.value(x).dims().to_vec();
        let len = *dims.last().unwrap();
        assert!(start + len <= total);
        let rows: usize = dims[..dims.len() - 1].iter().product();
        let xv = self.value(x);
        let mut out_dims = dims.clone();
        *out_dims.last_mut().unwrap() = total;
        let mut out = Tensor::zeros(&out_dims);
        for r in 0..rows {
            let dst = &mut out.data_mut()[r * total + start..r * total + start + len];
            dst.copy_from_slice(&xv.data()[r * len..(r + 1) * len]);
        }
        self.push(Op::EmbedTime { start, total }, vec![x], out)
    }

    /// Concatenate along the last axis.
    pub fn concat_time(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let da = self.value(a).dims().to_vec();
        let db = self.value(b).dims().to_vec();
        assert_eq!(da[..da.len() - 1], db[..db.len() - 1], "concat_time dims");
        let (ta, tb) = (*da.last().unwrap(), *db.last().unwrap());
        let rows: usize = da[..da.len() - 1].iter().product();
        let mut out_dims = da.clone();
        *out_dims.last_mut().unwrap() = ta + tb;
        let mut out = Tensor::zeros(&out_dims);
        {
            let (av, bv) = (self.value(a), self.value(b));
            for r in 0..rows {
                out.data_mut()[r * (ta + tb)..r * (ta + tb) + ta]
                    .copy_from_slice(&av.data()[r * ta..(r + 1) * ta]);
                out.data_mut()[r * (ta + tb) + ta..(r + 1) * (ta + tb)]
                    .copy_from_slice(&bv.data()[r * tb..(r + 1) * tb]);
            }
        }
        self.push(Op::ConcatTime, vec![a, b], out)
    }

    /// Slice `[start, start+len)` along the channel axis (axis 1).
    pub fn slice_channel(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let dims = self.value(x).dims().to_vec();
        assert!(dims.len() >= 2);
        let (b, c) = (dims[0], dims[1]);
        assert!(start + len <= c);
        let rest: usize = dims[2..].iter().product();
        let xv = self.value(x);
        let mut out_dims = dims.clone();
        out_dims[1] = len;
        let mut out = Tensor::zeros(&out_dims);
        for bi in 0..b {
            for ci in 0..len {
                let src = ((bi * c) + start + ci) * rest;
                let dst = ((bi * len) + ci) * rest;
                out.data_mut()[dst..dst + rest]
                    .copy_from_slice(&xv.data()[src..src + rest]);
            }
        }
        self.push(Op::SliceChannel { start, len }, vec![x], out)
    }

    pub fn embed_channel(&mut self, x: NodeId, start: usize, total: usize) -> NodeId {
        let dims = self.value(x).dims().to_vec();
        assert!(dims.len() >= 2);
        let (b, c) = (dims[0], dims[1]);
        assert!(start + c <= total);
        let rest: usize = dims[2..].iter().product();
        let xv = self.value(x);
        let mut out_dims = dims.clone();
        out_dims[1] = total;
        let mut out = Tensor::zeros(&out_dims);
        for bi in 0..b {
            for ci in 0..c {
                let src = ((bi * c) + ci) * rest;
                let dst = ((bi * total) + start + ci) * rest;
                out.data_mut()[dst..dst + rest]
                    .copy_from_slice(&xv.data()[src..src + rest]);
            }
        }
        self.push(Op::EmbedChannel { start, total }, vec![x], out)
    }

    pub fn concat_channel(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let da = self.value(a).dims().to_vec();
        let db = self.value(b).dims().to_vec();
        assert_eq!(da[0], db[0], "concat_channel batch");
        assert_eq!(da[2..], db[2..], "concat_channel trailing dims");
        let (b_, ca, cb) = (da[0], da[1], db[1]);
        let rest: usize = da[2..].iter().product();
        let mut out_dims = da.clone();
        out_dims[1] = ca + cb;
        let mut out = Tensor::zeros(&out_dims);
        {
            let (av, bv) = (self.value(a), self.value(b));
            for bi in 0..b_ {
                for ci in 0..ca {
                    let dst = ((bi * (ca + cb)) + ci) * rest;
                    let src = ((bi * ca) + ci) * rest;
                    out.data_mut()[dst..dst + rest]
                        .copy_from_slice(&av.data()[src..src + rest]);
                }
                for ci in 0..cb {
                    let dst = ((bi * (ca + cb)) + ca + ci) * rest;
                    let src = ((bi * cb) + ci) * rest;
                    out.data_mut()[dst..dst + rest]
                        .copy_from_slice(&bv.data()[src..src + rest]);
                }
            }
        }
        self.push(Op::ConcatChannel, vec![a, b], out)
    }

    /// Repeat each time step `factor` times (nearest-neighbor upsample).
    pub fn upsample_nearest(&mut self, x: NodeId, factor: usize) -> NodeId {
        assert!(factor >= 1);
        let dims = self.value(x).dims().to_vec();
        let t = *dims.last().unwrap();
        let rows: usize = dims[..dims.len() - 1].iter().product();
        let xv = self.value(x);
        let mut out_dims = dims.clone();
        *out_dims.last_mut().unwrap() = t * factor;
        let mut out = Tensor::zeros(&out_dims);
        for r in 0..rows {
            for ti in 0..t {
                let v = xv.data()[r * t + ti];
                for j in 0..factor {
                    out.data_mut()[r * t * factor + ti * factor + j] = v;
                }
            }
        }
        self.push(Op::UpsampleNearest { factor }, vec![x], out)
    }

    /// Sum over non-overlapping windows of `factor` (adjoint of upsample).
    pub fn sum_pool(&mut self, x: NodeId, factor: usize) -> NodeId {
        let dims = self.value(x).dims().to_vec();
        let t = *dims.last().unwrap();
        assert_eq!(t % factor, 0, "sum_pool length {t} not divisible by {factor}");
        let rows: usize = dims[..dims.len() - 1].iter().product();
        let to = t / factor;
        let xv = self.value(x);
        let mut out_dims = dims.clone();
        *out_dims.last_mut().unwrap() = to;
        let mut out = Tensor::zeros(&out_dims);
        for r in 0..rows {
            for ti in 0..to {
                let mut acc = S::zero();
                for j in 0..factor {
                    acc += xv.data()[r * t + ti * factor + j];
                }
                out.data_mut()[r * to + ti] = acc;
            }
        }
        self.push(Op::SumPool { factor }, vec![x], out)
    }

    /// Valid moving sum along the last axis; linear, channel-preserving.
    pub fn mov_sum_time(&mut self, x: NodeId, k: usize) -> NodeId {
        let dims = self.value(x).dims().to_vec();
        let t = *dims.last().unwrap();
        assert!(t >= k, "mov_sum_time window {k} exceeds length {t}");
        let rows: usize = dims[..dims.len() - 1].iter().product();
        let to = t - k + 1;
        let xv = self.value(x);
        let mut out_dims = dims.clone();
        *out_dims.last_mut().unwrap() = to;
        let mut out = Tensor::zeros(&out_dims);
        for r in 0..rows {
            let row = &xv.data()[r * t..(r + 1) * t];
            // Each window is summed independently (not via a rolling update):
            // the value at a position must be bit-identical no matter where
            // the window sits, or patch overlap equality breaks.
            for ti in 0..to {
                let mut acc = S::zero();
                for j in 0..k {
                    acc += row[ti + j];
                }
                out.data_mut()[r * to + ti] = acc;
            }
        }
        self.push(Op::MovSumTime { k }, vec![x], out)
    }

    /// Adjoint of [`Graph::mov_sum_time`]: scatter each window sum back.
    pub fn mov_sum_adj_time(&mut self, g: NodeId, k: usize, total: usize) -> NodeId {
        let dims = self.value(g).dims().to_vec();
        let to = *dims.last().unwrap();
        assert_eq!(to, total - k + 1, "mov_sum_adj geometry");
        let rows: usize = dims[..dims.len() - 1].iter().product();
        let gv = self.value(g);
        let mut out_dims = dims.clone();
        *out_dims.last_mut().unwrap() = total;
        let mut out = Tensor::zeros(&out_dims);
        for r in 0..rows {
            for ti in 0..to {
                let v = gv.data()[r * to + ti];
                for j in 0..k {
                    out.data_mut()[r * total + ti + j] += v;
                }
            }
        }
        self.push(Op::MovSumAdjTime { k, total }, vec![g], out)
    }

    /// (2B,C,T) -> (B,C,2T): concatenate each even/odd batch pair along time.
    pub fn pair_time(&mut self, x: NodeId) -> NodeId {
        let (b2, c, t) = self.value(x).dims3();
        assert_eq!(b2 % 2, 0, "pair_time needs an even batch");
        let b = b2 / 2;
        let xv = self.value(x);
        let mut out = Tensor::zeros(&[b, c, 2 * t]);
        for bi in 0..b {
            for ci in 0..c {
                for half in 0..2 {
                    let src = ((2 * bi + half) * c + ci) * t;
                    let dst = (bi * c + ci) * 2 * t + half * t;
                    out.data_mut()[dst..dst + t].copy_from_slice(&xv.data()[src..src + t]);
                }
            }
        }
        self.push(Op::PairTime, vec![x], out)
    }

    /// (B,C,2T) -> (2B,C,T): inverse of [`Graph::pair_time`].
    pub fn unpair_time(&mut self, x: NodeId) -> NodeId {
        let (b, c, t2) = self.value(x).dims3();
        assert_eq!(t2 % 2, 0, "unpair_time needs an even length");
        let t = t2 / 2;
        let xv = self.value(x);
        let mut out = Tensor::zeros(&[2 * b, c, t]);
        for bi in 0..b {
            for ci in 0..c {
                for half in 0..2 {
                    let src = (bi * c + ci) * t2 + half * t;
                    let dst = ((2 * bi + half) * c + ci) * t;
                    out.data_mut()[dst..dst + t].copy_from_slice(&xv.data()[src..src + t]);
                }
            }
        }
        self.push(Op::UnpairTime, vec![x], out)
    }

    // ---- convolutions -----------------------------------------------------

    /// 1D cross-correlation, no padding: x (B,Ci,T), w (Co,Ci,K) -> (B,Co,To).
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, stride: usize) -> NodeId {
        let (b, ci, t) = self.value(x).dims3();
        let (co, ci_w, k) = self.value(w).dims3();
        assert_eq!(ci, ci_w, "conv1d channel mismatch");
        assert!(t >= k, "conv1d kernel {k} longer than input {t}");
        let to = (t - k) / stride + 1;
        let mut out = Tensor::zeros(&[b, co, to]);
        {
            let (xv, wv) = (self.value(x), self.value(w));
            let (xd, wd) = (xv.data(), wv.data());
            let od = out.data_mut();
            for bi in 0..b {
                for o in 0..co {
                    let obase = (bi * co + o) * to;
                    for i in 0..ci {
                        let xbase = (bi * ci + i) * t;
                        let wbase = (o * ci + i) * k;
                        for kk in 0..k {
                            let wv = wd[wbase + kk];
                            if wv == S::zero() {
                                continue;
                            }
                            let xoff = xbase + kk;
                            for ti in 0..to {
                                od[obase + ti] += xd[xoff + ti * stride] * wv;
                            }
                        }
                    }
                }
            }
        }
        self.push(Op::Conv1d { stride }, vec![x, w], out)
    }

    /// Adjoint of [`Graph::conv1d`] in its first argument.
    pub fn conv_t1d(&mut self, z: NodeId, w: NodeId, stride: usize, out_len: usize) -> NodeId {
        let (b, co, tz) = self.value(z).dims3();
        let (co_w, ci, k) = self.value(w).dims3();
        assert_eq!(co, co_w, "conv_t1d channel mismatch");
        let mut out = Tensor::zeros(&[b, ci, out_len]);
        {
            let (zv, wv) = (self.value(z), self.value(w));
            let (zd, wd) = (zv.data(), wv.data());
            let od = out.data_mut();
            for bi in 0..b {
                for o in 0..co {
                    let zbase = (bi * co + o) * tz;
                    for i in 0..ci {
                        let obase = (bi * ci + i) * out_len;
                        let wbase = (o * ci + i) * k;
                        for kk in 0..k {
                            let wval = wd[wbase + kk];
                            if wval == S::zero() {
                                continue;
                            }
                            for ti in 0..tz {
                                let m = ti * stride + kk;
                                if m < out_len {
                                    od[obase + m] += zd[zbase + ti] * wval;
                                }
                            }
                        }
                    }
                }
            }
        }
        self.push(Op::ConvT1d { stride, out_len }, vec![z, w], out)
    }

    /// Weight cotangent of conv1d: (x, gy) -> (Co,Ci,K).
    pub fn conv1d_wgrad(&mut self, x: NodeId, gy: NodeId, stride: usize, k: usize) -> NodeId {
        let (b, ci, t) = self.value(x).dims3();
        let (b_g, co, tz) = self.value(gy).dims3();
        assert_eq!(b, b_g);
        let mut out = Tensor::zeros(&[co, ci, k]);
        {
            let (xv, gv) = (self.value(x), self.value(gy));
            let (xd, gd) = (xv.data(), gv.data());
            let od = out.data_mut();
            for bi in 0..b {
                for o in 0..co {
                    let gbase = (bi * co + o) * tz;
                    for i in 0..ci {
                        let xbase = (bi * ci + i) * t;
                        let wbase = (o * ci + i) * k;
                        for kk in 0..k {
                            let mut acc = S::zero();
                            for ti in 0..tz {
                                let m = ti * stride + kk;
                                if m < t {
                                    acc += gd[gbase + ti] * xd[xbase + m];
                                }
                            }
                            od[wbase + kk] += acc;
                        }
                    }
                }
            }
        }
        self.push(Op::Conv1dWGrad { stride, k }, vec![x, gy], out)
    }

    /// 2D cross-correlation, no padding: x (B,C,F,T), w (O,C,KF,KT).
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, stride: (usize, usize)) -> NodeId {
        let (b, c, f, t) = self.value(x).dims4();
        let (o, c_w, kf, kt) = self.value(w).dims4();
        assert_eq!(c, c_w, "conv2d channel mismatch");
        assert!(f >= kf && t >= kt, "conv2d kernel larger than input");
        let (sf, st) = stride;
        let fo = (f - kf) / sf + 1;
        let to = (t - kt) / st + 1;
        let mut out = Tensor::zeros(&[b, o, fo, to]);
        {
            let (xv, wv) = (self.value(x), self.value(w));
            let (xd, wd) = (xv.data(), wv.data());
            let od = out.data_mut();
            for bi in 0..b {
                for oi in 0..o {
                    for ci in 0..c {
                        for kfi in 0..kf {
                            for kti in 0..kt {
                                let wval = wd[((oi * c + ci) * kf + kfi) * kt + kti];
                                if wval == S::zero() {
                                    continue;
                                }
                                for foi in 0..fo {
                                    let xrow = ((bi * c + ci) * f + foi * sf + kfi) * t + kti;
                                    let orow = ((bi * o + oi) * fo + foi) * to;
                                    for toi in 0..to {
                                        od[orow + toi] += xd[xrow + toi * st] * wval;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        self.push(Op::Conv2d { stride }, vec![x, w], out)
    }

    pub fn conv_t2d(
        &mut self,
        z: NodeId,
        w: NodeId,
        stride: (usize, usize),
        out_hw: (usize, usize),
    ) -> NodeId {
        let (b, o, fz, tz) = self.value(z).dims4();
        let (o_w, c, kf, kt) = self.value(w).dims4();
        assert_eq!(o, o_w);
        let (sf, st) = stride;
        let (of, ot) = out_hw;
        let mut out = Tensor::zeros(&[b, c, of, ot]);
        {
            let (zv, wv) = (self.value(z), self.value(w));
            let (zd, wd) = (zv.data(), wv.data());
            let od = out.data_mut();
            for bi in 0..b {
                for oi in 0..o {
                    for ci in 0..c {
                        for kfi in 0..kf {
                            for kti in 0..kt {
                                let wval = wd[((oi * c + ci) * kf + kfi) * kt + kti];
                                if wval == S::zero() {
                                    continue;
                                }
                                for fzi in 0..fz {
                                    let mf = fzi * sf + kfi;
                                    if mf >= of {
                                        continue;
                                    }
                                    let zrow = ((bi * o + oi) * fz + fzi) * tz;
                                    let orow = ((bi * c + ci) * of + mf) * ot;
                                    for tzi in 0..tz {
                                        let mt = tzi * st + kti;
                                        if mt < ot {
                                            od[orow + mt] += zd[zrow + tzi] * wval;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        self.push(Op::ConvT2d { stride, out_hw }, vec![z, w], out)
    }

    pub fn conv2d_wgrad(
        &mut self,
        x: NodeId,
        gy: NodeId,
        stride: (usize, usize),
        khw: (usize, usize),
    ) -> NodeId {
        let (b, c, f, t) = self.value(x).dims4();
        let (b_g, o, fz, tz) = self.value(gy).dims4();
        assert_eq!(b, b_g);
        let (sf, st) = stride;
        let (kf, kt) = khw;
        let mut out = Tensor::zeros(&[o, c, kf, kt]);
        {
            let (xv, gv) = (self.value(x), self.value(gy));
            let (xd, gd) = (xv.data(), gv.data());
            let od = out.data_mut();
            for bi in 0..b {
                for oi in 0..o {
                    for ci in 0..c {
                        for kfi in 0..kf {
                            for kti in 0..kt {
                                let mut acc = S::zero();
                                for fzi in 0..fz {
                                    let mf = fzi * sf + kfi;
                                    if mf >= f {
                                        continue;
                                    }
                                    let grow = ((bi * o + oi) * fz + fzi) * tz;
                                    let xrow = ((bi * c + ci) * f + mf) * t + kti;
                                    for tzi in 0..tz {
                                        let mt = tzi * st;
                                        if mt + kti < t {
                                            acc += gd[grow + tzi] * xd[xrow + mt];
                                        }
                                    }
                                }
                                od[((oi * c + ci) * kf + kfi) * kt + kti] += acc;
                            }
                        }
                    }
                }
            }
        }
        self.push(Op::Conv2dWGrad { stride, khw }, vec![x, gy], out)
    }

    // ---- waveform <-> spectrogram ----------------------------------------

    /// STFT of (B,1,T) -> (B,2,bins,frames); channel 0 real, channel 1 imag.
    pub fn stft(&mut self, x: NodeId, fft: usize, hop: usize) -> NodeId {
        let (b, c, t) = self.value(x).dims3();
        assert_eq!(c, 1, "stft wants a single channel");
        assert!(t >= fft, "waveform shorter than one frame");
        let bins = fft / 2 + 1;
        let frames = dsp::frame_count(t, fft, hop);
        let mut out = Tensor::zeros(&[b, 2, bins, frames]);
        {
            let xv = self.value(x);
            let od = out.data_mut();
            for bi in 0..b {
                let row = &xv.data()[bi * t..(bi + 1) * t];
                let (re, im, _) = dsp::stft_kernel(row, fft, hop);
                // dsp kernels are frames x bins; the tensor is bins x frames.
                for fr in 0..frames {
                    for bn in 0..bins {
                        od[((bi * 2) * bins + bn) * frames + fr] = re[fr * bins + bn];
                        od[((bi * 2 + 1) * bins + bn) * frames + fr] = im[fr * bins + bn];
                    }
                }
            }
        }
        self.push(Op::Stft { fft, hop }, vec![x], out)
    }

    pub fn stft_adj(&mut self, z: NodeId, fft: usize, hop: usize, out_len: usize) -> NodeId {
        let (b, two, bins, frames) = self.value(z).dims4();
        assert_eq!(two, 2);
        assert_eq!(bins, fft / 2 + 1);
        let mut out = Tensor::zeros(&[b, 1, out_len]);
        {
            let zv = self.value(z);
            let od = out.data_mut();
            for bi in 0..b {
                let mut g_re = vec![S::zero(); frames * bins];
                let mut g_im = vec![S::zero(); frames * bins];
                for fr in 0..frames {
                    for bn in 0..bins {
                        g_re[fr * bins + bn] = zv.at4(bi, 0, bn, fr);
                        g_im[fr * bins + bn] = zv.at4(bi, 1, bn, fr);
                    }
                }
                let gx = dsp::stft_adjoint_kernel(&g_re, &g_im, fft, hop, frames, out_len);
                od[bi * out_len..(bi + 1) * out_len].copy_from_slice(&gx);
            }
        }
        self.push(Op::StftAdj { fft, hop, out_len }, vec![z], out)
    }

    /// Normalized-overlap-add inverse STFT of (B,2,bins,frames) -> (B,1,T).
    pub fn istft(&mut self, z: NodeId, fft: usize, hop: usize) -> NodeId {
        let (b, two, bins, frames) = self.value(z).dims4();
        assert_eq!(two, 2);
        assert_eq!(bins, fft / 2 + 1);
        let out_len = dsp::covered_samples(frames, fft, hop);
        let mut out = Tensor::zeros(&[b, 1, out_len]);
        {
            let zv = self.value(z);
            let od = out.data_mut();
            for bi in 0..b {
                let mut re = vec![S::zero(); frames * bins];
                let mut im = vec![S::zero(); frames * bins];
                for fr in 0..frames {
                    for bn in 0..bins {
                        re[fr * bins + bn] = zv.at4(bi, 0, bn, fr);
                        im[fr * bins + bn] = zv.at4(bi, 1, bn, fr);
                    }
                }
                let y = dsp::istft_kernel(&re, &im, fft, hop);
                od[bi * out_len..(bi + 1) * out_len].copy_from_slice(&y);
            }
        }
        self.push(Op::Istft { fft, hop }, vec![z], out)
    }

    pub fn istft_adj(&mut self, g: NodeId, fft: usize, hop: usize) -> NodeId {
        let (b, c, t) = self.value(g).dims3();
        assert_eq!(c, 1);
        let frames = dsp::frame_count(t, fft, hop);
        assert_eq!(
            dsp::covered_samples(frames, fft, hop),
            t,
            "istft_adj length not frame-aligned"
        );
        let bins = fft / 2 + 1;
        let mut out = Tensor::zeros(&[b, 2, bins, frames]);
        {
            let gv = self.value(g);
            let od = out.data_mut();
            for bi in 0..b {
                let row = &gv.data()[bi * t..(bi + 1) * t];
                let (gr, gi) = dsp::istft_adjoint_kernel(row, fft, hop, frames);
                for fr in 0..frames {
                    for bn in 0..bins {
                        od[((bi * 2) * bins + bn) * frames + fr] = gr[fr * bins + bn];
                        od[((bi * 2 + 1) * bins + bn) * frames + fr] = gi[fr * bins + bn];
                    }
                }
            }
        }
        self.push(Op::IstftAdj { fft, hop }, vec![g], out)
    }

    // ---- backward ---------------------------------------------------------

    /// Reverse pass from a scalar `root`. Gradients are recorded on the tape,
    /// so the result is differentiable in turn.
    pub fn backward(&mut self, root: NodeId) -> Grads {
        assert_eq!(
            self.value(root).numel(),
            1,
            "backward root must be scalar-like"
        );
        let n0 = self.nodes.len();
        let mut map: Vec<Option<NodeId>> = vec![None; n0];
        let seed_dims = self.value(root).dims().to_vec();
        let one = self.constant(Tensor::full(&seed_dims, S::one()));
        map[root.0] = Some(one);

        for id in (0..=root.0).rev() {
            let Some(g) = map[id] else { continue };
            if !self.nodes[id].needs_grad || matches!(self.nodes[id].op, Op::Leaf) {
                continue;
            }
            let op = self.nodes[id].op.clone();
            let inputs = self.nodes[id].inputs.clone();
            let contribs = self.op_backward(NodeId(id), g, &op, &inputs);
            for (inp, contrib) in inputs.iter().zip(contribs) {
                if let Some(c) = contrib {
                    if self.nodes[inp.0].needs_grad {
                        map[inp.0] = Some(match map[inp.0] {
                            Some(old) => self.add(old, c),
                            None => c,
                        });
                    }
                }
            }
        }
        Grads { map }
    }

    /// Gradient of `root` with respect to `x` as a tape node (create-graph
    /// semantics). Returns a zero tensor node if `x` is unreachable.
    pub fn grad_of(&mut self, root: NodeId, x: NodeId) -> NodeId {
        let grads = self.backward(root);
        match grads.get(x) {
            Some(g) => g,
            None => {
                let dims = self.value(x).dims().to_vec();
                self.constant(Tensor::zeros(&dims))
            }
        }
    }

    /// Reduce a gradient contribution to the shape of operand `target` for the
    /// scalar-broadcast binary ops.
    fn reduce_to(&mut self, g: NodeId, target: NodeId) -> NodeId {
        if self.value(target).rank() == 0 && self.value(g).rank() != 0 {
            self.sum_all(g)
        } else {
            g
        }
    }

    fn op_backward(
        &mut self,
        id: NodeId,
        g: NodeId,
        op: &Op,
        inputs: &[NodeId],
    ) -> Vec<Option<NodeId>> {
        match op {
            Op::Leaf => vec![],
            Op::Neg => vec![Some(self.neg(g))],
            Op::Exp => vec![Some(self.mul(g, id))],
            Op::Ln => vec![Some(self.div(g, inputs[0]))],
            Op::Sqrt => {
                // Guarded: zero gradient where the output is (numerically) zero.
                let tiny = 1e-30;
                let mask = self.gt_mask(id, tiny);
                let safe = self.clamp_min(id, tiny);
                let gm = self.mul(g, mask);
                let q = self.div(gm, safe);
                vec![Some(self.scale(q, 0.5))]
            }
            Op::Tanh => {
                let y2 = self.mul(id, id);
                let n = self.scale(y2, -1.0);
                let one_minus = self.add_const(n, 1.0);
                vec![Some(self.mul(g, one_minus))]
            }
            Op::Sigmoid => {
                let n = self.scale(id, -1.0);
                let one_minus = self.add_const(n, 1.0);
                let d = self.mul(id, one_minus);
                vec![Some(self.mul(g, d))]
            }
            Op::Sin => {
                let c = self.cos(inputs[0]);
                vec![Some(self.mul(g, c))]
            }
            Op::Cos => {
                let s = self.sin(inputs[0]);
                let m = self.mul(g, s);
                vec![Some(self.neg(m))]
            }
            Op::Abs => {
                let sgn = self.value(inputs[0]).map(|v| {
                    if v > S::zero() {
                        S::one()
                    } else if v < S::zero() {
                        -S::one()
                    } else {
                        S::zero()
                    }
                });
                let sgn = self.constant(sgn);
                vec![Some(self.mul(g, sgn))]
            }
            Op::LeakyRelu { slope } => {
                let s = S::of_f64(*slope);
                let mask = self
                    .value(inputs[0])
                    .map(|v| if v > S::zero() { S::one() } else { s });
                let mask = self.constant(mask);
                vec![Some(self.mul(g, mask))]
            }
            Op::Scale { c } => vec![Some(self.scale(g, *c))],
            Op::AddConst { .. } => vec![Some(g)],
            Op::ClampMin { c } => {
                let mask = self.gt_mask(inputs[0], *c);
                vec![Some(self.mul(g, mask))]
            }
            Op::GtMask { .. } => vec![None],
            Op::Add => {
                let ga = self.reduce_to(g, inputs[0]);
                let gb = self.reduce_to(g, inputs[1]);
                vec![Some(ga), Some(gb)]
            }
            Op::Sub => {
                let ga = self.reduce_to(g, inputs[0]);
                let n = self.neg(g);
                let gb = self.reduce_to(n, inputs[1]);
                vec![Some(ga), Some(gb)]
            }
            Op::Mul => {
                let gb_full = self.mul(g, inputs[0]);
                let ga_full = self.mul(g, inputs[1]);
                let ga = self.reduce_to(ga_full, inputs[0]);
                let gb = self.reduce_to(gb_full, inputs[1]);
                vec![Some(ga), Some(gb)]
            }
            Op::Div => {
                let ga_full = self.div(g, inputs[1]);
                let ga = self.reduce_to(ga_full, inputs[0]);
                let gy = self.mul(g, id);
                let gyb = self.div(gy, inputs[1]);
                let gb_full = self.neg(gyb);
                let gb = self.reduce_to(gb_full, inputs[1]);
                vec![Some(ga), Some(gb)]
            }
            Op::SumAll => {
                let dims = self.value(inputs[0]).dims().to_vec();
                vec![Some(self.broadcast_as(g, &dims))]
            }
            Op::BroadcastAs { .. } => vec![Some(self.sum_all(g))],
            Op::SumTime => {
                let t = self.value(inputs[0]).dims3().2;
                vec![Some(self.broadcast_time(g, t))]
            }
            Op::BroadcastTime { .. } => vec![Some(self.sum_time(g))],
            Op::SumToChannel => {
                let dims = self.value(inputs[0]).dims().to_vec();
                vec![Some(self.broadcast_channel(g, &dims))]
            }
            Op::BroadcastChannel { .. } => vec![Some(self.sum_to_channel(g))],
            Op::Reshape { .. } => {
                let dims = self.value(inputs[0]).dims().to_vec();
                vec![Some(self.reshape(g, &dims))]
            }
            Op::SliceTime { start, .. } => {
                let total = *self.value(inputs[0]).dims().last().unwrap();
                vec![Some(self.embed_time(g, *start, total))]
            }
            Op::EmbedTime { start, .. } => {
                let len = *self.value(inputs[0]).dims().last().unwrap();
                vec![Some(self.slice_time(g, *start, len))]
            }
            Op::ConcatTime => {
                let ta = *self.value(inputs[0]).dims().last().unwrap();
                let tb = *self.value(inputs[1]).dims().last().unwrap();
                let ga = self.slice_time(g, 0, ta);
                let gb = self.slice_time(g, ta, tb);
                vec![Some(ga), Some(gb)]
            }
            Op::SliceChannel { start, .. } => {
                let total = self.value(inputs[0]).dims()[1];
                vec![Some(self.embed_channel(g, *start, total))]
            }
            Op::EmbedChannel { start, .. } => {
                let len = self.value(inputs[0]).dims()[1];
                vec![Some(self.slice_channel(g, *start, len))]
            }
            Op::ConcatChannel => {
                let ca = self.value(inputs[0]).dims()[1];
                let cb = self.value(inputs[1]).dims()[1];
                let ga = self.slice_channel(g, 0, ca);
                let gb = self.slice_channel(g, ca, cb);
                vec![Some(ga), Some(gb)]
            }
            Op::UpsampleNearest { factor } => vec![Some(self.sum_pool(g, *factor))],
            Op::SumPool { factor } => vec![Some(self.upsample_nearest(g, *factor))],
            Op::MovSumTime { k } => {
                let total = *self.value(inputs[0]).dims().last().unwrap();
                vec![Some(self.mov_sum_adj_time(g, *k, total))]
            }
            Op::MovSumAdjTime { k, .. } => vec![Some(self.mov_sum_time(g, *k))],
            Op::PairTime => vec![Some(self.unpair_time(g))],
            Op::UnpairTime => vec![Some(self.pair_time(g))],
            Op::Conv1d { stride } => {
                let t = self.value(inputs[0]).dims3().2;
                let k = self.value(inputs[1]).dims3().2;
                let gx = self.conv_t1d(g, inputs[1], *stride, t);
                let gw = self.conv1d_wgrad(inputs[0], g, *stride, k);
                vec![Some(gx), Some(gw)]
            }
            Op::ConvT1d { stride, .. } => {
                let k = self.value(inputs[1]).dims3().2;
                let gz = self.conv1d(g, inputs[1], *stride);
                let gw = self.conv1d_wgrad(g, inputs[0], *stride, k);
                vec![Some(gz), Some(gw)]
            }
            Op::Conv1dWGrad { stride, .. } => {
                let t = self.value(inputs[0]).dims3().2;
                let gx = self.conv_t1d(inputs[1], g, *stride, t);
                let gz = self.conv1d(inputs[0], g, *stride);
                vec![Some(gx), Some(gz)]
            }
            Op::Conv2d { stride } => {
                let (_, _, f, t) = self.value(inputs[0]).dims4();
                let (_, _, kf, kt) = self.value(inputs[1]).dims4();
                let gx = self.conv_t2d(g, inputs[1], *stride, (f, t));
                let gw = self.conv2d_wgrad(inputs[0], g, *stride, (kf, kt));
                vec![Some(gx), Some(gw)]
            }
            Op::ConvT2d { stride, .. } => {
                let (_, _, kf, kt) = self.value(inputs[1]).dims4();
                let gz = self.conv2d(g, inputs[1], *stride);
                let gw = self.conv2d_wgrad(g, inputs[0], *stride, (kf, kt));
                vec![Some(gz), Some(gw)]
            }
            Op::Conv2dWGrad { stride, .. } => {
                let (_, _, f, t) = self.value(inputs[0]).dims4();
                let gx = self.conv_t2d(inputs[1], g, *stride, (f, t));
                let gz = self.conv2d(inputs[0], g, *stride);
                vec![Some(gx), Some(gz)]
            }
            Op::Stft { fft, hop } => {
                let t = self.value(inputs[0]).dims3().2;
                vec![Some(self.stft_adj(g, *fft, *hop, t))]
            }
            Op::StftAdj { fft, hop, .. } => vec![Some(self.stft(g, *fft, *hop))],
            Op::Istft { fft, hop } => vec![Some(self.istft_adj(g, *fft, *hop))],
            Op::IstftAdj { fft, hop } => vec![Some(self.istft(g, *fft, *hop))],
        }
    }

    // ---- composite helpers --------------------------------------------------

    /// Mean absolute error between two same-shaped nodes.
    pub fn l1_loss(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let d = self.sub(a, b);
        let ad = self.abs(d);
        self.mean_all(ad)
    }

    /// Add a per-channel bias (C,) to (B,C,...).
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let dims = self.value(x).dims().to_vec();
        let bb = self.broadcast_channel(bias, &dims);
        self.add(x, bb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(dims, |_| rng.random_range(-1.0..1.0))
    }

    fn inner(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn conv1d_identity_kernel_is_identity() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new(vec![1, 1, 5], vec![1., 2., 3., 4., 5.]), false);
        let w = g.leaf(Tensor::new(vec![1, 1, 1], vec![1.0]), false);
        let y = g.conv1d(x, w, 1);
        assert_eq!(g.value(y).data(), &[1., 2., 3., 4., 5.]);
    }

    #[test]
    fn conv1d_averaging_kernel_on_constant_input() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::full(&[1, 1, 8], 3.0), false);
        let w = g.leaf(Tensor::full(&[1, 1, 4], 0.25), false);
        let y = g.conv1d(x, w, 1);
        for v in g.value(y).data() {
            assert!((v - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn conv1d_matches_nested_loop_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (b, ci, co, t, k, s) = (2, 3, 4, 9, 3, 2);
        let mut g = Graph::<f64>::new();
        let xv = rand_tensor(&mut rng, &[b, ci, t]);
        let wv = rand_tensor(&mut rng, &[co, ci, k]);
        let x = g.leaf(xv.clone(), false);
        let w = g.leaf(wv.clone(), false);
        let y = g.conv1d(x, w, s);
        let to = (t - k) / s + 1;
        assert_eq!(g.dims(y), &[b, co, to]);
        for bi in 0..b {
            for o in 0..co {
                for ti in 0..to {
                    let mut acc = 0.0;
                    for i in 0..ci {
                        for kk in 0..k {
                            acc += xv.at3(bi, i, ti * s + kk) * wv.at3(o, i, kk);
                        }
                    }
                    assert!((g.value(y).at3(bi, o, ti) - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_transpose_shapes_and_identity() {
        let mut g = Graph::<f64>::new();
        // stride 1, K=1 identity
        let x = g.leaf(Tensor::new(vec![1, 1, 4], vec![1., 2., 3., 4.]), false);
        let w = g.leaf(Tensor::new(vec![1, 1, 1], vec![1.0]), false);
        let y = g.conv_t1d(x, w, 1, 4);
        assert_eq!(g.value(y).data(), &[1., 2., 3., 4.]);
        // stride 2 on length-4 input, K=2 -> length 8
        let w2 = g.leaf(Tensor::full(&[1, 1, 2], 1.0), false);
        let y2 = g.conv_t1d(x, w2, 2, 8);
        assert_eq!(g.dims(y2), &[1, 1, 8]);
    }

    #[test]
    fn conv1d_and_transpose_are_adjoint() {
        // <conv1d(x,w), y> == <x, conv_t1d(y,w)> over random draws, including
        // a stride that does not divide the input length evenly.
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for &(t, k, s) in &[(11usize, 3usize, 1usize), (12, 4, 2), (13, 3, 2), (16, 5, 3)] {
            let (b, ci, co) = (2, 3, 2);
            let mut g = Graph::<f64>::new();
            let xv = rand_tensor(&mut rng, &[b, ci, t]);
            let wv = rand_tensor(&mut rng, &[co, ci, k]);
            let x = g.leaf(xv.clone(), false);
            let w = g.leaf(wv.clone(), false);
            let y = g.conv1d(x, w, s);
            let yv = rand_tensor(&mut rng, &[b, co, g.dims(y)[2]]);
            let yn = g.leaf(yv.clone(), false);
            let xt = g.conv_t1d(yn, w, s, t);
            let lhs = inner(g.value(y), &yv);
            let rhs = inner(&xv, g.value(xt));
            assert!(
                (lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0),
                "t={t} k={k} s={s}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn conv2d_and_transpose_are_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (b, c, o, f, t, kf, kt, sf, st) = (1, 2, 3, 9, 10, 3, 4, 2, 2);
        let mut g = Graph::<f64>::new();
        let xv = rand_tensor(&mut rng, &[b, c, f, t]);
        let wv = rand_tensor(&mut rng, &[o, c, kf, kt]);
        let x = g.leaf(xv.clone(), false);
        let w = g.leaf(wv.clone(), false);
        let y = g.conv2d(x, w, (sf, st));
        let yd = g.dims(y).to_vec();
        let yv = rand_tensor(&mut rng, &yd);
        let yn = g.leaf(yv.clone(), false);
        let xt = g.conv_t2d(yn, w, (sf, st), (f, t));
        let lhs = inner(g.value(y), &yv);
        let rhs = inner(&xv, g.value(xt));
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn upsample_and_sum_pool_are_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let mut g = Graph::<f64>::new();
        let xv = rand_tensor(&mut rng, &[2, 3, 5]);
        let x = g.leaf(xv.clone(), false);
        let y = g.upsample_nearest(x, 4);
        let zv = rand_tensor(&mut rng, &[2, 3, 20]);
        let z = g.leaf(zv.clone(), false);
        let pooled = g.sum_pool(z, 4);
        let lhs = inner(g.value(y), &zv);
        let rhs = inner(&xv, g.value(pooled));
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn backward_through_simple_chain() {
        // y = sum(tanh(x)^2): dy/dx = 2 tanh(x)(1 - tanh(x)^2)
        let mut g = Graph::<f64>::new();
        let xv = Tensor::new(vec![1, 1, 3], vec![0.3, -0.7, 1.2]);
        let x = g.leaf(xv.clone(), true);
        let t = g.tanh(x);
        let sq = g.mul(t, t);
        let y = g.sum_all(sq);
        let grads = g.backward(y);
        let gx = grads.get(x).unwrap();
        for i in 0..3 {
            let th = xv.data()[i].tanh();
            let expect = 2.0 * th * (1.0 - th * th);
            assert!((g.value(gx).data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn second_order_gradients_through_taped_backward() {
        // f(x) = sum(x^3). g = df/dx = 3x^2. h = sum(g) -> dh/dx = 6x.
        let mut g = Graph::<f64>::new();
        let xv = Tensor::new(vec![1, 1, 3], vec![0.5, -1.0, 2.0]);
        let x = g.leaf(xv.clone(), true);
        let x2 = g.mul(x, x);
        let x3 = g.mul(x2, x);
        let f = g.sum_all(x3);
        let gx = g.grad_of(f, x);
        for i in 0..3 {
            let expect = 3.0 * xv.data()[i] * xv.data()[i];
            assert!((g.value(gx).data()[i] - expect).abs() < 1e-12);
        }
        let h = g.sum_all(gx);
        let gx2 = g.grad_of(h, x);
        for i in 0..3 {
            let expect = 6.0 * xv.data()[i];
            assert!(
                (g.value(gx2).data()[i] - expect).abs() < 1e-12,
                "{} vs {}",
                g.value(gx2).data()[i],
                expect
            );
        }
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let mut g = Graph::<f64>::new();
        let a = g.leaf(Tensor::new(vec![1, 2, 2], vec![1., 2., 3., 4.]), false);
        let b = g.leaf(Tensor::new(vec![1, 2, 3], vec![5., 6., 7., 8., 9., 10.]), false);
        let c = g.concat_time(a, b);
        assert_eq!(g.dims(c), &[1, 2, 5]);
        assert_eq!(g.value(c).data(), &[1., 2., 5., 6., 7., 3., 4., 8., 9., 10.]);
        let s = g.slice_time(c, 2, 3);
        assert_eq!(g.value(s).data(), &[5., 6., 7., 8., 9., 10.]);

        let cc = g.concat_channel(a, a);
        assert_eq!(g.dims(cc), &[1, 4, 2]);
        let sc = g.slice_channel(cc, 2, 2);
        assert_eq!(g.value(sc).data(), &[1., 2., 3., 4.]);
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let xv = rand_tensor(&mut rng, &[1, 4, 16]);
        let wv = rand_tensor(&mut rng, &[4, 4, 3]);
        let run = || {
            let mut g = Graph::<f64>::new();
            let x = g.leaf(xv.clone(), false);
            let w = g.leaf(wv.clone(), false);
            let y = g.conv1d(x, w, 1);
            let t = g.tanh(y);
            g.value(t).data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn stft_istft_ops_round_trip_inside_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let n = 2048;
        let xv = Tensor::from_fn(&[1, 1, n], |_| rng.random_range(-1.0..1.0));
        let mut g = Graph::<f64>::new();
        let x = g.leaf(xv.clone(), false);
        let z = g.stft(x, 256, 64);
        let y = g.istft(z, 256, 64);
        let yd = g.value(y);
        let covered = dsp::covered_samples(dsp::frame_count(n, 256, 64), 256, 64);
        for m in 128..covered - 128 {
            assert!((yd.data()[m] - xv.data()[m]).abs() < 1e-8, "sample {m}");
        }
    }
}
