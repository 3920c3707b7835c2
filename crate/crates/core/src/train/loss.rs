use crate::error::Result;
use crate::ndgrad::{Graph, NodeId, Scalar};

/// Default score-difference scale.
pub const DEFAULT_SIGMA: f64 = 0.1;

/// `log(1 + exp(-sigma * delta))` without overflow for large `|sigma * delta|`.
pub fn ranknet_loss(delta: f64, sigma: f64) -> f64 {
    let z = -sigma * delta;
    if z > 30.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Derivative of [`ranknet_loss`] with respect to `delta`:
/// `-sigma * sigmoid(-sigma * delta)`.
pub fn ranknet_loss_grad(delta: f64, sigma: f64) -> f64 {
    let z = -sigma * delta;
    let s = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    -sigma * s
}

/// Pairwise loss in its two-way softmax cross-entropy form:
/// `-log softmax(sigma * [s_pos, s_neg])[0]`.
pub fn softmax_pair_loss(s_pos: f64, s_neg: f64, sigma: f64) -> f64 {
    let (a, b) = (sigma * s_pos, sigma * s_neg);
    let m = a.max(b);
    let lse = m + ((a - m).exp() + (b - m).exp()).ln();
    lse - a
}

/// Applies [`ranknet_loss`] elementwise to a graph node.
pub fn ranknet_loss_node<T: Scalar>(
    g: &mut Graph<'_, T>,
    delta: NodeId,
    sigma: f64,
) -> Result<NodeId> {
    g.map(
        delta,
        |d| T::from_f64(ranknet_loss(d.as_f64(), sigma)),
        |d| T::from_f64(ranknet_loss_grad(d.as_f64(), sigma)),
    )
}
