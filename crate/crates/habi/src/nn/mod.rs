//! Minimal dense-network core: MLP parameters and forward passes, a Wengert
//! tape for reverse-mode gradients, Adam, finite-difference probes, and a
//! single-precision fast path for inference benchmarks.
//!
//! Training and gradient checks run in `f64`; the latency-critical inference
//! path ([`fast::FastMlp`]) runs in `f32`.

pub mod adam;
pub mod checkpoint;
pub mod fast;
pub mod fdiff;
pub mod tape;

use ndarray::{Array1, Array2};
use rand::Rng;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Activation {
    Relu,
    Identity,
    Tanh,
}

impl Activation {
    pub fn apply(self, v: &mut [f64]) {
        match self {
            Activation::Relu => v.iter_mut().for_each(|x| *x = x.max(0.0)),
            Activation::Identity => {}
            Activation::Tanh => v.iter_mut().for_each(|x| *x = x.tanh()),
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Identity => 1,
            Activation::Tanh => 2,
        }
    }

    pub(crate) fn from_tag(t: u8) -> Option<Self> {
        match t {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Identity),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Layer {
    /// Row-major weight matrix, shape (out, in).
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// A plain fully-connected network. Hidden layers use `hidden_activation`
/// (ReLU everywhere in this crate), the last layer uses `output_activation`.
///
/// Immutable after training; safe to share across threads for read-only
/// inference.
#[derive(Clone, Debug)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl MlpParams {
    /// Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)], zero biases.
    pub fn new<R: Rng>(dims: &[usize], output_activation: Activation, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let layers = dims
            .windows(2)
            .map(|d| {
                let (fan_in, fan_out) = (d[0], d[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let w = Array2::from_shape_fn((fan_out, fan_in), |_| rng.gen_range(-bound..bound));
                Layer { w, b: Array1::zeros(fan_out) }
            })
            .collect();
        MlpParams { layers, hidden_activation: Activation::Relu, output_activation }
    }

    pub fn zeros(dims: &[usize], output_activation: Activation) -> Self {
        let layers = dims
            .windows(2)
            .map(|d| Layer { w: Array2::zeros((d[1], d[0])), b: Array1::zeros(d[1]) })
            .collect();
        MlpParams { layers, hidden_activation: Activation::Relu, output_activation }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().w.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().all(|x| x.is_finite()) && l.b.iter().all(|x| x.is_finite()))
    }

    /// Tape-free forward pass. Panics on a dimension mismatch; shape-checked
    /// entry points live at the module boundaries that construct inputs.
    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        assert_eq!(input.len(), self.in_dim(), "mlp input dimension mismatch");
        let mut x = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = layer.b.to_vec();
            for (row, yo) in layer.w.rows().into_iter().zip(y.iter_mut()) {
                let mut acc = 0.0;
                for (wv, xv) in row.iter().zip(x.iter()) {
                    acc += wv * xv;
                }
                *yo += acc;
            }
            self.activation_for(i).apply(&mut y);
            x = y;
        }
        x
    }

    /// Batched forward pass: one input per row.
    pub fn forward_batch(&self, input: &Array2<f64>) -> Array2<f64> {
        assert_eq!(input.ncols(), self.in_dim(), "mlp batch input dimension mismatch");
        let mut x = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = x.dot(&layer.w.t());
            y += &layer.b;
            let act = self.activation_for(i);
            if act != Activation::Identity {
                y.iter_mut().for_each(|v| {
                    let mut s = [*v];
                    act.apply(&mut s);
                    *v = s[0];
                });
            }
            x = y;
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let net = MlpParams::zeros(&[3, 4, 2], Activation::Identity);
        assert_eq!(net.forward(&[1.0, -2.0, 0.5]), vec![0.0, 0.0]);
    }

    #[test]
    fn single_layer_hand_case() {
        let mut net = MlpParams::zeros(&[1, 1], Activation::Identity);
        net.layers[0].w[[0, 0]] = 2.0;
        net.layers[0].b[0] = 1.0;
        assert_eq!(net.forward(&[3.0]), vec![7.0]);
    }

    #[test]
    fn relu_clips_negative_preactivation() {
        let mut net = MlpParams::zeros(&[1, 1], Activation::Relu);
        net.layers[0].w[[0, 0]] = -1.0;
        // Pre-activation is -5, ReLU clips to 0.
        assert_eq!(net.forward(&[5.0]), vec![0.0]);
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = MlpParams::new(&[4, 8, 2], Activation::Tanh, &mut rng);
        let x = [0.1, -0.7, 2.0, 0.0];
        let a = net.forward(&x);
        let b = net.forward(&x);
        assert_eq!(a, b);
    }

    #[test]
    fn batch_forward_matches_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = MlpParams::new(&[3, 16, 16, 2], Activation::Identity, &mut rng);
        let rows = vec![vec![0.3, -1.2, 0.8], vec![0.0, 0.0, 0.0], vec![2.0, 1.0, -0.5]];
        let batch = Array2::from_shape_fn((3, 3), |(i, j)| rows[i][j]);
        let out = net.forward_batch(&batch);
        for (i, row) in rows.iter().enumerate() {
            let single = net.forward(row);
            for j in 0..2 {
                assert!((out[[i, j]] - single[j]).abs() < 1e-12);
            }
        }
    }
}
