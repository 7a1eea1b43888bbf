//! Cross-channel mixing: a random orthogonal 2x2 mixture of the stereo
//! channel groups, applied per batch item before the discriminator.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::nn::graph::{Graph, NodeId};
use crate::nn::scalar::Scalar;
use crate::nn::tensor::Tensor;

/// Per-item orthogonal 2x2 mixing matrices `[a b; c d]`.
#[derive(Clone, Debug)]
pub struct CcmMix {
    pub mats: Vec<[f64; 4]>,
}

impl CcmMix {
    pub fn identity(batch: usize) -> Self {
        CcmMix {
            mats: vec![[1.0, 0.0, 0.0, 1.0]; batch],
        }
    }

    /// Rotations, with a reflection half the time (covers all of O(2)).
    pub fn sample(rng: &mut ChaCha8Rng, batch: usize) -> Self {
        let mats = (0..batch)
            .map(|_| {
                let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let (s, c) = theta.sin_cos();
                if rng.random_range(0.0..1.0) < 0.5 {
                    [c, -s, s, c]
                } else {
                    [c, s, s, -c] // reflection
                }
            })
            .collect();
        CcmMix { mats }
    }

    pub fn transpose(&self) -> CcmMix {
        CcmMix {
            mats: self.mats.iter().map(|m| [m[0], m[2], m[1], m[3]]).collect(),
        }
    }
}

/// Mix the two stereo groups of a channel-stacked latent batch
/// (B, 2*dim, T): `y_l = a x_l + b x_r`, `y_r = c x_l + d x_r` per item.
pub fn apply_ccm<S: Scalar>(g: &mut Graph<S>, x: NodeId, mix: &CcmMix) -> NodeId {
    let (b, ch, t) = g.value(x).dims3();
    assert_eq!(ch % 2, 0, "ccm wants stereo-stacked channels");
    assert_eq!(b, mix.mats.len());
    let half = ch / 2;
    let xl = g.slice_channel(x, 0, half);
    let xr = g.slice_channel(x, half, half);
    let coeff = |g: &mut Graph<S>, idx: usize| -> NodeId {
        let t_ = Tensor::from_fn(&[b, half, t], |i| {
            let bi = i / (half * t);
            S::of_f64(mix.mats[bi][idx])
        });
        g.constant(t_)
    };
    let (a, bc, c, d) = (coeff(g, 0), coeff(g, 1), coeff(g, 2), coeff(g, 3));
    let yl = {
        let p = g.mul(xl, a);
        let q = g.mul(xr, bc);
        g.add(p, q)
    };
    let yr = {
        let p = g.mul(xl, c);
        let q = g.mul(xr, d);
        g.add(p, q)
    };
    g.concat_channel(yl, yr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rand_stereo(rng: &mut ChaCha8Rng, b: usize, dim: usize, t: usize) -> Tensor<f64> {
        Tensor::from_fn(&[b, 2 * dim, t], |_| rng.random_range(-0.9..0.9))
    }

    #[test]
    fn identity_matrix_leaves_input_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(97);
        let x_t = rand_stereo(&mut rng, 2, 3, 5);
        let mut g = Graph::new();
        let x = g.leaf(x_t.clone(), false);
        let y = apply_ccm(&mut g, x, &CcmMix::identity(2));
        assert_eq!(g.value(y).data(), x_t.data());
    }

    #[test]
    fn mixing_preserves_per_timestep_stereo_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(98);
        let (b, dim, t) = (3usize, 4usize, 6usize);
        let x_t = rand_stereo(&mut rng, b, dim, t);
        let mix = CcmMix::sample(&mut rng, b);
        let mut g = Graph::new();
        let x = g.leaf(x_t.clone(), false);
        let y = apply_ccm(&mut g, x, &mix);
        let yv = g.value(y);
        for bi in 0..b {
            for di in 0..dim {
                for ti in 0..t {
                    let nx = x_t.at3(bi, di, ti).powi(2) + x_t.at3(bi, dim + di, ti).powi(2);
                    let ny = yv.at3(bi, di, ti).powi(2) + yv.at3(bi, dim + di, ti).powi(2);
                    assert!((nx - ny).abs() < 1e-12, "b {bi} d {di} t {ti}");
                }
            }
        }
    }

    #[test]
    fn transpose_inverts_the_mixture() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (b, dim, t) = (4usize, 2usize, 7usize);
        let x_t = rand_stereo(&mut rng, b, dim, t);
        let mix = CcmMix::sample(&mut rng, b);
        let mut g = Graph::new();
        let x = g.leaf(x_t.clone(), false);
        let y = apply_ccm(&mut g, x, &mix);
        let back = apply_ccm(&mut g, y, &mix.transpose());
        for (a, b) in g.value(back).data().iter().zip(x_t.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}
