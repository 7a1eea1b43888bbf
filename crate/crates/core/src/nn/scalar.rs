//! Floating-point abstraction over f32/f64.

use num_traits::Float;

/// Element type for tensors and DSP kernels. Training uses `f32`; gradient
/// checks instantiate the same code with `f64`.
pub trait Scalar:
    Float + rustfft::FftNum + num_traits::NumAssign + std::iter::Sum + std::fmt::Display
{
    const NAME: &'static str;

    fn of_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    fn of_f32(v: f32) -> Self {
        Self::of_f64(v as f64)
    }
    fn as_f32(self) -> f32 {
        self.as_f64() as f32
    }
    fn of_usize(v: usize) -> Self {
        Self::of_f64(v as f64)
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn of_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn of_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
