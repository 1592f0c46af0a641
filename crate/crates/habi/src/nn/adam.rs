//! Bias-corrected Adam.

use ndarray::{Array1, Array2};

use crate::error::{HabiError, Result};
use crate::nn::tape::MlpGrads;
use crate::nn::MlpParams;

#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<(Array2<f64>, Array1<f64>)>,
    v: Vec<(Array2<f64>, Array1<f64>)>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(net: &MlpParams) -> Self {
        let zeros = || {
            net.layers
                .iter()
                .map(|l| (Array2::zeros(l.w.dim()), Array1::zeros(l.b.len())))
                .collect::<Vec<_>>()
        };
        AdamState { m: zeros(), v: zeros(), step_count: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn second_moment_nonneg(&self) -> bool {
        self.v.iter().all(|(w, b)| w.iter().all(|&x| x >= 0.0) && b.iter().all(|&x| x >= 0.0))
    }
}

/// One Adam step. `module` names the network in training errors.
pub fn adam_update(
    params: &mut MlpParams,
    grads: &MlpGrads,
    state: &mut AdamState,
    lr: f64,
    module: &str,
) -> Result<()> {
    assert!(lr > 0.0, "learning rate must be positive");
    assert_eq!(params.layers.len(), grads.layers.len(), "gradient/parameter layer mismatch");
    if !grads.is_finite() {
        return Err(HabiError::training(module, "non-finite gradient"));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (i, layer) in params.layers.iter_mut().enumerate() {
        let (gw, gb) = &grads.layers[i];
        let (mw, mb) = &mut state.m[i];
        let (vw, vb) = &mut state.v[i];
        step_array(layer.w.as_slice_mut().unwrap(), gw.as_slice().unwrap(), mw.as_slice_mut().unwrap(), vw.as_slice_mut().unwrap(), state.beta1, state.beta2, state.eps, lr, bc1, bc2);
        step_array(layer.b.as_slice_mut().unwrap(), gb.as_slice().unwrap(), mb.as_slice_mut().unwrap(), vb.as_slice_mut().unwrap(), state.beta1, state.beta2, state.eps, lr, bc1, bc2);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn step_array(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    beta1: f64,
    beta2: f64,
    eps: f64,
    lr: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..p.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;

    fn scalar_net(w: f64) -> MlpParams {
        let mut net = MlpParams::zeros(&[1, 1], Activation::Identity);
        net.layers[0].w[[0, 0]] = w;
        net
    }

    fn scalar_grad(net: &MlpParams, g: f64) -> MlpGrads {
        let mut grads = MlpGrads::zeros_like(net);
        grads.layers[0].0[[0, 0]] = g;
        grads
    }

    #[test]
    fn zero_gradient_is_exact_fixed_point() {
        let mut net = scalar_net(0.37);
        let grads = MlpGrads::zeros_like(&net);
        let mut st = AdamState::new(&net);
        adam_update(&mut net, &grads, &mut st, 1e-3, "test").unwrap();
        assert_eq!(net.layers[0].w[[0, 0]], 0.37);
        assert_eq!(st.step_count, 1);
        assert!(st.second_moment_nonneg());
    }

    #[test]
    fn first_step_is_bias_corrected_sign_step() {
        let mut net = scalar_net(0.0);
        let grads = scalar_grad(&net, 0.5);
        let mut st = AdamState::new(&net);
        adam_update(&mut net, &grads, &mut st, 1e-3, "test").unwrap();
        // First bias-corrected step is ~= -lr * sign(g).
        let delta = net.layers[0].w[[0, 0]];
        assert!((delta - -1e-3).abs() < 1e-7, "delta = {delta}");
    }

    #[test]
    fn constant_gradient_steps_have_similar_magnitude() {
        let mut net = scalar_net(0.0);
        let mut st = AdamState::new(&net);
        let grads = scalar_grad(&net, 0.5);
        adam_update(&mut net, &grads, &mut st, 1e-3, "test").unwrap();
        let first = net.layers[0].w[[0, 0]].abs();
        let before = net.layers[0].w[[0, 0]];
        adam_update(&mut net, &grads, &mut st, 1e-3, "test").unwrap();
        let second = (net.layers[0].w[[0, 0]] - before).abs();
        assert!((second - first).abs() / first < 0.01);
        assert_eq!(st.step_count, 2);
    }

    #[test]
    fn non_finite_gradient_names_module() {
        let mut net = scalar_net(0.0);
        let grads = scalar_grad(&net, f64::NAN);
        let mut st = AdamState::new(&net);
        let err = adam_update(&mut net, &grads, &mut st, 1e-3, "denoiser").unwrap_err();
        assert!(err.to_string().contains("denoiser"));
    }
}
