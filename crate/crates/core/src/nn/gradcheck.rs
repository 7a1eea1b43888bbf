//! Central finite-difference gradient verification.
//!
//! Every operator (and, in the integration tests, every network) is checked
//! by rebuilding its graph at perturbed inputs and comparing the backprop
//! gradient against `(f(x+h) - f(x-h)) / 2h` coordinate by coordinate.

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;

/// Relative-error metric used across all checks:
/// `|a - b| / max(|a|, |b|, 1)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Check the gradients of a scalar-valued graph builder with respect to every
/// coordinate of every input. Returns the maximum relative error.
///
/// `builder` receives a fresh graph plus leaves holding `inputs` (in order)
/// and must return a scalar root node. It is re-invoked ~2N times for the
/// finite differences.
pub fn check_builder(
    builder: &dyn Fn(&mut Graph<f64>, &[NodeId]) -> NodeId,
    inputs: &[Tensor<f64>],
    h: f64,
) -> f64 {
    // Analytic gradients.
    let mut g = Graph::<f64>::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let root = builder(&mut g, &ids);
    assert_eq!(g.value(root).numel(), 1, "gradcheck root must be scalar");
    let grads = g.backward(root);
    let analytic: Vec<Tensor<f64>> = ids
        .iter()
        .zip(inputs)
        .map(|(id, t)| match grads.get(*id) {
            Some(gid) => g.value(gid).clone(),
            None => Tensor::zeros(t.dims()),
        })
        .collect();

    let eval = |tensors: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::<f64>::new();
        let ids: Vec<NodeId> = tensors.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let root = builder(&mut g, &ids);
        g.value(root).item()
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (ti, tensor) in inputs.iter().enumerate() {
        for j in 0..tensor.numel() {
            let x0 = tensor.data()[j];
            let step = h * x0.abs().max(1.0);
            work[ti].data_mut()[j] = x0 + step;
            let fp = eval(&work);
            work[ti].data_mut()[j] = x0 - step;
            let fm = eval(&work);
            work[ti].data_mut()[j] = x0;
            let fd = (fp - fm) / (2.0 * step);
            let an = analytic[ti].data()[j];
            let e = rel_err(an, fd);
            if e > worst {
                worst = e;
            }
        }
    }
    worst
}
