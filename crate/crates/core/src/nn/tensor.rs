//! Dense row-major tensors.
//!
//! Shapes follow two conventions: `(batch, channels, time)` for 1D paths and
//! `(batch, channels, freq, time)` for 2D paths. Rank-0 tensors hold scalars
//! (losses). Nothing here is clever; the autodiff tape in [`super::graph`]
//! does the bookkeeping.

use super::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    dims: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(dims: Vec<usize>, data: Vec<S>) -> Self {
        assert_eq!(
            dims.iter().product::<usize>(),
            data.len(),
            "tensor dims {:?} do not match data length {}",
            dims,
            data.len()
        );
        Tensor { dims, data }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let n = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![S::zero(); n],
        }
    }

    pub fn full(dims: &[usize], v: S) -> Self {
        let n = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![v; n],
        }
    }

    /// Rank-0 scalar tensor.
    pub fn scalar(v: S) -> Self {
        Tensor {
            dims: vec![],
            data: vec![v],
        }
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> S) -> Self {
        let n = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: (0..n).map(|i| f(i)).collect(),
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Value of a rank-0 tensor.
    pub fn item(&self) -> S {
        assert_eq!(self.numel(), 1, "item() on tensor with {} elements", self.numel());
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Shape `(b, c, t)` of a rank-3 tensor.
    pub fn dims3(&self) -> (usize, usize, usize) {
        assert_eq!(self.rank(), 3, "expected rank 3, got {:?}", self.dims);
        (self.dims[0], self.dims[1], self.dims[2])
    }

    /// Shape `(b, c, f, t)` of a rank-4 tensor.
    pub fn dims4(&self) -> (usize, usize, usize, usize) {
        assert_eq!(self.rank(), 4, "expected rank 4, got {:?}", self.dims);
        (self.dims[0], self.dims[1], self.dims[2], self.dims[3])
    }

    #[inline]
    pub fn at3(&self, b: usize, c: usize, t: usize) -> S {
        let (_, nc, nt) = (self.dims[0], self.dims[1], self.dims[2]);
        debug_assert!(c < nc && t < nt);
        self.data[(b * nc + c) * nt + t]
    }

    #[inline]
    pub fn at4(&self, b: usize, c: usize, f: usize, t: usize) -> S {
        let (nc, nf, nt) = (self.dims[1], self.dims[2], self.dims[3]);
        debug_assert!(c < nc && f < nf && t < nt);
        self.data[((b * nc + c) * nf + f) * nt + t]
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Tensor<S> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip(&self, other: &Tensor<S>, f: impl Fn(S, S) -> S) -> Tensor<S> {
        assert_eq!(self.dims, other.dims, "zip shape mismatch");
        Tensor {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Convert element type (used to lift f32 checkpoints into f64 graphs).
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| T::of_f64(v.as_f64())).collect(),
        }
    }
}
