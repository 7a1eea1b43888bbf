//! GAN objectives on the tape.

use super::graph::{Graph, NodeId};
use super::scalar::Scalar;

/// Hinge discriminator loss:
/// `-E[min(0, -1 + D(real))] - E[min(0, -1 - D(fake))]`,
/// i.e. `E[relu(1 - D(real))] + E[relu(1 + D(fake))]`.
/// Patch-map outputs are averaged over every element.
pub fn hinge_d_loss<S: Scalar>(g: &mut Graph<S>, d_real: NodeId, d_fake: NodeId) -> NodeId {
    let nr = g.scale(d_real, -1.0);
    let margin_r = g.add_const(nr, 1.0);
    let relu_r = g.relu(margin_r);
    let loss_r = g.mean_all(relu_r);

    let margin_f = g.add_const(d_fake, 1.0);
    let relu_f = g.relu(margin_f);
    let loss_f = g.mean_all(relu_f);

    g.add(loss_r, loss_f)
}

/// Hinge generator loss: `-E[D(fake)]`.
pub fn hinge_g_loss<S: Scalar>(g: &mut Graph<S>, d_fake: NodeId) -> NodeId {
    let m = g.mean_all(d_fake);
    g.neg(m)
}

/// R1 gradient penalty: `(gamma/2) * E_batch[ ||d D(x) / d x||^2 ]`.
///
/// `d_out` is the discriminator's output on the real batch (scalar or patch
/// map); `real_in` is the real-batch leaf (must require grad). The inner
/// gradient is taped, so this loss backpropagates exactly into the
/// discriminator's weights.
pub fn r1_penalty<S: Scalar>(
    g: &mut Graph<S>,
    d_out: NodeId,
    real_in: NodeId,
    gamma: f64,
) -> NodeId {
    let batch = g.value(real_in).dims()[0];
    let numel = g.value(d_out).numel();
    assert!(
        numel >= batch && numel % batch == 0,
        "r1_penalty wants per-item outputs, got {} values for batch {}",
        numel,
        batch
    );
    // Summing per-item outputs gives each item's own input gradient: the
    // discriminator treats batch items independently. Patch maps are averaged
    // into one scalar per item first.
    let per_item_scale = 1.0 / (numel / batch) as f64;
    let total = g.sum_all(d_out);
    let total = g.scale(total, per_item_scale);
    let gx = g.grad_of(total, real_in);
    let sq = g.mul(gx, gx);
    let sum_sq = g.sum_all(sq);
    g.scale(sum_sq, gamma / 2.0 / batch as f64)
}
