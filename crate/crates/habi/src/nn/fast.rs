//! Single-precision forward-only networks for the inference hot path.
//!
//! Converted once from trained `f64` parameters; immutable afterwards and
//! safe to share across threads. An atomic call counter supports the tests
//! that assert which networks a code path touches.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::nn::{Activation, MlpParams};

struct FastLayer {
    w: Vec<f32>, // row-major (out, in)
    b: Vec<f32>,
    out: usize,
    inp: usize,
}

pub struct FastMlp {
    layers: Vec<FastLayer>,
    hidden: Activation,
    output: Activation,
    calls: AtomicU64,
}

/// Reusable buffers so a forward pass allocates nothing.
#[derive(Default)]
pub struct Scratch {
    a: Vec<f32>,
    b: Vec<f32>,
}

impl FastMlp {
    pub fn from_params(net: &MlpParams) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| FastLayer {
                w: l.w.iter().map(|&x| x as f32).collect(),
                b: l.b.iter().map(|&x| x as f32).collect(),
                out: l.w.nrows(),
                inp: l.w.ncols(),
            })
            .collect();
        FastMlp {
            layers,
            hidden: net.hidden_activation,
            output: net.output_activation,
            calls: AtomicU64::new(0),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].inp
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out
    }

    /// Number of forward passes executed so far.
    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    /// Forward pass writing the result into `scratch`; returns a slice into it.
    pub fn forward_into<'s>(&self, input: &[f32], scratch: &'s mut Scratch) -> &'s [f32] {
        assert_eq!(input.len(), self.in_dim(), "fast mlp input dimension mismatch");
        self.calls.fetch_add(1, Ordering::Relaxed);
        scratch.a.clear();
        scratch.a.extend_from_slice(input);
        for (li, layer) in self.layers.iter().enumerate() {
            scratch.b.clear();
            scratch.b.resize(layer.out, 0.0);
            for o in 0..layer.out {
                let row = &layer.w[o * layer.inp..(o + 1) * layer.inp];
                let mut acc = layer.b[o];
                for (wv, xv) in row.iter().zip(scratch.a.iter()) {
                    acc += wv * xv;
                }
                scratch.b[o] = acc;
            }
            let act = if li + 1 == self.layers.len() { self.output } else { self.hidden };
            match act {
                Activation::Relu => scratch.b.iter_mut().for_each(|x| *x = x.max(0.0)),
                Activation::Identity => {}
                Activation::Tanh => scratch.b.iter_mut().for_each(|x| *x = x.tanh()),
            }
            std::mem::swap(&mut scratch.a, &mut scratch.b);
        }
        &scratch.a
    }

    pub fn forward(&self, input: &[f32]) -> Vec<f32> {
        let mut scratch = Scratch::default();
        self.forward_into(input, &mut scratch).to_vec()
    }
}
