//! Bias-corrected Adam.

use crate::error::{Error, Result};

use super::scalar::Scalar;
use super::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState<S> {
    pub m: Tensor<S>,
    pub v: Tensor<S>,
    pub step: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(dims: &[usize]) -> Self {
        AdamState {
            m: Tensor::zeros(dims),
            v: Tensor::zeros(dims),
            step: 0,
        }
    }
}

/// One in-place Adam update. Rejects non-finite gradients.
pub fn adam_step<S: Scalar>(
    value: &mut Tensor<S>,
    grad: &Tensor<S>,
    state: &mut AdamState<S>,
    hp: &AdamParams,
) -> Result<()> {
    if value.dims() != grad.dims() {
        return Err(Error::Shape(format!(
            "adam: value {:?} vs grad {:?}",
            value.dims(),
            grad.dims()
        )));
    }
    if !grad.is_finite() {
        return Err(Error::Numeric("NaN/Inf gradient in adam_step".into()));
    }
    state.step += 1;
    let b1 = S::of_f64(hp.beta1);
    let b2 = S::of_f64(hp.beta2);
    let one = S::one();
    let bc1 = S::of_f64(1.0 - hp.beta1.powi(state.step as i32));
    let bc2 = S::of_f64(1.0 - hp.beta2.powi(state.step as i32));
    let lr = S::of_f64(hp.lr);
    let eps = S::of_f64(hp.eps);

    let vd = value.data_mut();
    let md = state.m.data_mut();
    let sd = state.v.data_mut();
    for i in 0..vd.len() {
        let g = grad.data()[i];
        md[i] = b1 * md[i] + (one - b1) * g;
        sd[i] = b2 * sd[i] + (one - b2) * g * g;
        let m_hat = md[i] / bc1;
        let v_hat = sd[i] / bc2;
        vd[i] = vd[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut value = Tensor::<f64>::new(vec![3], vec![1.0, -2.0, 0.5]);
        let before = value.clone();
        let grad = Tensor::zeros(&[3]);
        let mut st = AdamState::new(&[3]);
        for _ in 0..10 {
            adam_step(&mut value, &grad, &mut st, &AdamParams::default()).unwrap();
        }
        assert_eq!(value, before);
    }

    #[test]
    fn first_step_with_unit_gradient_moves_by_lr() {
        // Bias correction makes m_hat/sqrt(v_hat) = 1 on the first step, so the
        // update is -lr/(1 + eps) which equals -1e-4 to within 1e-8.
        let mut value = Tensor::<f64>::scalar(0.0);
        let grad = Tensor::scalar(1.0);
        let mut st = AdamState::new(&[]);
        adam_step(&mut value, &grad, &mut st, &AdamParams::default()).unwrap();
        assert!((value.item() + 1e-4).abs() < 1e-8, "{}", value.item());
    }

    #[test]
    fn identical_gradients_produce_identical_updates() {
        let mut a = Tensor::<f32>::scalar(0.7);
        let mut b = Tensor::<f32>::scalar(0.7);
        let mut sa = AdamState::new(&[]);
        let mut sb = AdamState::new(&[]);
        for step in 0..20 {
            let gv = (step as f32 * 0.37).sin();
            let g = Tensor::scalar(gv);
            adam_step(&mut a, &g, &mut sa, &AdamParams::default()).unwrap();
            adam_step(&mut b, &g, &mut sb, &AdamParams::default()).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn nan_gradient_is_rejected() {
        let mut value = Tensor::<f64>::scalar(0.0);
        let grad = Tensor::scalar(f64::NAN);
        let mut st = AdamState::new(&[]);
        assert!(adam_step(&mut value, &grad, &mut st, &AdamParams::default()).is_err());
    }
}
