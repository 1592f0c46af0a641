//! Central finite differences — the independent oracle for tape gradients.

use crate::nn::tape::MlpGrads;
use crate::nn::MlpParams;

/// Central-difference gradient estimate of `loss_fn` with respect to every
/// parameter entry. `loss_fn` must be deterministic given the parameters.
///
/// Callers must avoid probing at non-differentiable points (ReLU kinks,
/// norms at zero): the estimate is reported as-is with no smoothing.
pub fn finite_diff_grad(
    loss_fn: impl Fn(&MlpParams) -> f64,
    params: &MlpParams,
    h: f64,
) -> MlpGrads {
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut grads = MlpGrads::zeros_like(params);
    let mut probe = params.clone();
    for li in 0..params.layers.len() {
        for idx in 0..params.layers[li].w.len() {
            let orig = params.layers[li].w.as_slice().unwrap()[idx];
            probe.layers[li].w.as_slice_mut().unwrap()[idx] = orig + h;
            let hi = loss_fn(&probe);
            probe.layers[li].w.as_slice_mut().unwrap()[idx] = orig - h;
            let lo = loss_fn(&probe);
            probe.layers[li].w.as_slice_mut().unwrap()[idx] = orig;
            grads.layers[li].0.as_slice_mut().unwrap()[idx] = (hi - lo) / (2.0 * h);
        }
        for idx in 0..params.layers[li].b.len() {
            let orig = params.layers[li].b[idx];
            probe.layers[li].b[idx] = orig + h;
            let hi = loss_fn(&probe);
            probe.layers[li].b[idx] = orig - h;
            let lo = loss_fn(&probe);
            probe.layers[li].b[idx] = orig;
            grads.layers[li].1[idx] = (hi - lo) / (2.0 * h);
        }
    }
    grads
}

/// Max relative error between two gradient sets, with an absolute floor to
/// avoid blowing up on near-zero entries.
pub fn max_rel_error(a: &MlpGrads, b: &MlpGrads, floor: f64) -> f64 {
    let mut worst = 0.0f64;
    for (la, lb) in a.layers.iter().zip(b.layers.iter()) {
        for (x, y) in la.0.iter().zip(lb.0.iter()).chain(la.1.iter().zip(lb.1.iter())) {
            let denom = x.abs().max(y.abs()).max(floor);
            worst = worst.max((x - y).abs() / denom);
        }
    }
    worst
}
