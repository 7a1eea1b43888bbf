//! Anchor vectors, the interpolated latent coordinate system, and the style
//! vector.
//!
//! Coordinates live on the level-2 latent grid: one d-dimensional vector per
//! output timestep, anchored at positions that are multiples of
//! `2 * seq_len` and linearly interpolated in between. Beyond the terminal
//! anchors the sequence extends by holding the edge value, which is what lets
//! generator windows reach past the ends without special cases.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::nn::init::normal_sample;

/// The three training anchors (left, center, right), i.i.d. standard normal.
#[derive(Clone, Debug)]
pub struct AnchorSet {
    pub left: Vec<f64>,
    pub center: Vec<f64>,
    pub right: Vec<f64>,
}

impl AnchorSet {
    pub fn sample(rng: &mut ChaCha8Rng, dim: usize) -> Self {
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| normal_sample(rng)).collect() };
        AnchorSet {
            left: draw(dim),
            center: draw(dim),
            right: draw(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.left.len()
    }
}

/// A global style vector, i.i.d. standard normal, shared by every patch of
/// one generation.
#[derive(Clone, Debug)]
pub struct StyleVector(pub Vec<f64>);

impl StyleVector {
    pub fn sample(rng: &mut ChaCha8Rng, dim: usize) -> Self {
        StyleVector((0..dim).map(|_| normal_sample(rng)).collect())
    }
}

/// The training coordinate construction: length `4 * seq_len + 1` with the
/// anchors at indices 0, `2 * seq_len`, and `4 * seq_len`.
#[derive(Clone, Debug)]
pub struct CoordinateSequence {
    pub vectors: Vec<Vec<f64>>,
    pub seq_len: usize,
    pub anchor_positions: [usize; 3],
}

/// Build the anchored, linearly interpolated training sequence:
/// `v[i] = (1-k) * A + k * B` with `k = offset / (2 * seq_len)` between
/// adjacent anchors.
pub fn build_coordinate_sequence(anchors: &AnchorSet, seq_len: usize) -> CoordinateSequence {
    assert!(seq_len >= 1);
    let dim = anchors.dim();
    let span = 2 * seq_len;
    let total = 4 * seq_len + 1;
    let mut vectors = Vec::with_capacity(total);
    for i in 0..total {
        let (a, b, off) = if i <= span {
            (&anchors.left, &anchors.center, i)
        } else {
            (&anchors.center, &anchors.right, i - span)
        };
        let k = off as f64 / span as f64;
        vectors.push((0..dim).map(|j| (1.0 - k) * a[j] + k * b[j]).collect());
    }
    CoordinateSequence {
        vectors,
        seq_len,
        anchor_positions: [0, span, 2 * span],
    }
}

impl CoordinateSequence {
    /// Coordinate at a (possibly out-of-range) position, extending the
    /// terminal anchors by constant extrapolation.
    pub fn at(&self, pos: i64) -> &[f64] {
        let idx = pos.clamp(0, self.vectors.len() as i64 - 1) as usize;
        &self.vectors[idx]
    }
}

/// Random training crop: a contiguous `2 * seq_len` slice starting uniformly
/// in `[0, 2 * seq_len]`, split into two adjacent windows of `seq_len`.
/// Returns the start offset (the two windows are `[start, start+L)` and
/// `[start+L, start+2L)` on the sequence's coordinate axis).
pub fn sample_training_crops(cs: &CoordinateSequence, rng: &mut ChaCha8Rng) -> usize {
    assert_eq!(
        cs.vectors.len(),
        4 * cs.seq_len + 1,
        "crops want the 4*seq_len+1 training construction"
    );
    rng.random_range(0..=2 * cs.seq_len)
}

/// An arbitrarily long anchor field for inference: anchors at positions
/// `0, 2L, 4L, ...`, linear interpolation in between, constant extrapolation
/// beyond both ends.
#[derive(Clone, Debug)]
pub struct CoordinateField {
    pub anchors: Vec<Vec<f64>>,
    pub seq_len: usize,
}

impl CoordinateField {
    /// Enough anchors to cover `total_len` coordinate positions.
    pub fn sample(rng: &mut ChaCha8Rng, dim: usize, seq_len: usize, total_len: usize) -> Self {
        let span = 2 * seq_len;
        let n_anchors = total_len.div_ceil(span) + 1;
        let anchors = (0..n_anchors)
            .map(|_| (0..dim).map(|_| normal_sample(rng)).collect())
            .collect();
        CoordinateField { anchors, seq_len }
    }

    pub fn dim(&self) -> usize {
        self.anchors[0].len()
    }

    pub fn at(&self, pos: i64) -> Vec<f64> {
        let span = (2 * self.seq_len) as i64;
        let max_pos = (self.anchors.len() as i64 - 1) * span;
        let p = pos.clamp(0, max_pos);
        let seg = (p / span).min(self.anchors.len() as i64 - 2).max(0) as usize;
        let off = p - (seg as i64) * span;
        let k = off as f64 / span as f64;
        let (a, b) = (&self.anchors[seg], &self.anchors[seg + 1]);
        (0..a.len()).map(|j| (1.0 - k) * a[j] + k * b[j]).collect()
    }
}
