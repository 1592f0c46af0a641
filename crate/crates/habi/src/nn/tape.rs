//! Wengert tape for reverse-mode differentiation.
//!
//! The tape records vector-valued primitive operations during a forward pass
//! and replays them backward to accumulate exactly one gradient contribution
//! per parameter entry. Networks are registered once per tape (a cheap clone);
//! affine nodes reference them by index so the backward pass can read the
//! weight matrices without further copies. A fresh tape is built per training
//! step; the inference path never touches this module.

use ndarray::{Array1, Array2};

use crate::error::{HabiError, Result};
use crate::nn::{Activation, MlpParams};

pub type NodeId = usize;

enum Op {
    Const,
    /// y = W x + b for the given registered net/layer.
    Affine { net: usize, layer: usize, x: NodeId },
    Act { kind: Activation, x: NodeId },
    /// y = softplus(x) + shift, elementwise.
    SoftplusShift { x: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: f64 },
    Concat { a: NodeId, b: NodeId },
    /// Identity value, gradient blocked.
    Detach,
    Sum { x: NodeId },
    /// sqrt(sum x^2 + eps); the epsilon guards the root at zero.
    Norm2 { x: NodeId },
    MeanSquare { x: NodeId },
    /// Closed-form KL between two diagonal Gaussians, summed over dimensions.
    KlDiag { mu_q: NodeId, sigma_q: NodeId, mu_p: NodeId, sigma_p: NodeId },
    /// Elementwise mean of same-shaped nodes.
    Mean { xs: Vec<NodeId> },
}

struct Node {
    op: Op,
    value: Vec<f64>,
}

/// Per-network gradients, shape-matching [`MlpParams::layers`].
#[derive(Clone, Debug)]
pub struct MlpGrads {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl MlpGrads {
    pub fn zeros_like(net: &MlpParams) -> Self {
        let layers = net
            .layers
            .iter()
            .map(|l| (Array2::zeros(l.w.dim()), Array1::zeros(l.b.len())))
            .collect();
        MlpGrads { layers }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().all(|x| x.is_finite()) && b.iter().all(|x| x.is_finite()))
    }
}

/// Gradients for every net registered on a tape, indexed by registration id.
pub struct Gradients {
    pub nets: Vec<MlpGrads>,
}

impl Gradients {
    pub fn net(&self, id: usize) -> &MlpGrads {
        &self.nets[id]
    }
}

pub struct Tape {
    nodes: Vec<Node>,
    nets: Vec<MlpParams>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), nets: Vec::new() }
    }

    /// Snapshot a network onto the tape. Returns the id used by
    /// [`Tape::mlp_forward`] and [`Gradients::net`].
    pub fn register_net(&mut self, net: &MlpParams) -> usize {
        self.nets.push(net.clone());
        self.nets.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].value
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> NodeId {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    pub fn constant(&mut self, v: &[f64]) -> NodeId {
        self.push(Op::Const, v.to_vec())
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.push(Op::Const, vec![v])
    }

    pub fn affine(&mut self, net: usize, layer: usize, x: NodeId) -> NodeId {
        let l = &self.nets[net].layers[layer];
        let xv = &self.nodes[x].value;
        assert_eq!(xv.len(), l.w.ncols(), "affine input dimension mismatch");
        let mut y = l.b.to_vec();
        for (row, yo) in l.w.rows().into_iter().zip(y.iter_mut()) {
            let mut acc = 0.0;
            for (wv, xv) in row.iter().zip(xv.iter()) {
                acc += wv * xv;
            }
            *yo += acc;
        }
        self.push(Op::Affine { net, layer, x }, y)
    }

    pub fn activation(&mut self, kind: Activation, x: NodeId) -> NodeId {
        let mut v = self.nodes[x].value.clone();
        kind.apply(&mut v);
        self.push(Op::Act { kind, x }, v)
    }

    /// Records a full MLP forward pass through a registered net.
    pub fn mlp_forward(&mut self, net: usize, x: NodeId) -> NodeId {
        let n_layers = self.nets[net].layers.len();
        let mut cur = x;
        for i in 0..n_layers {
            cur = self.affine(net, i, cur);
            let act = self.nets[net].activation_for(i);
            if act != Activation::Identity {
                cur = self.activation(act, cur);
            }
        }
        cur
    }

    pub fn softplus_shift(&mut self, x: NodeId, shift: f64) -> NodeId {
        let v: Vec<f64> = self.nodes[x].value.iter().map(|&t| softplus(t) + shift).collect();
        // shift is recovered from value - softplus on backward; not needed there.
        self.push(Op::SoftplusShift { x }, v)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = zip_with(&self.nodes[a].value, &self.nodes[b].value, |x, y| x + y);
        self.push(Op::Add { a, b }, v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = zip_with(&self.nodes[a].value, &self.nodes[b].value, |x, y| x - y);
        self.push(Op::Sub { a, b }, v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = zip_with(&self.nodes[a].value, &self.nodes[b].value, |x, y| x * y);
        self.push(Op::Mul { a, b }, v)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let v: Vec<f64> = self.nodes[x].value.iter().map(|t| t * c).collect();
        self.push(Op::Scale { x, c }, v)
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut v = self.nodes[a].value.clone();
        v.extend_from_slice(&self.nodes[b].value);
        self.push(Op::Concat { a, b }, v)
    }

    pub fn detach(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x].value.clone();
        self.push(Op::Detach, v)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.nodes[x].value.iter().sum();
        self.push(Op::Sum { x }, vec![s])
    }

    pub fn norm2(&mut self, x: NodeId, eps: f64) -> NodeId {
        let s: f64 = self.nodes[x].value.iter().map(|t| t * t).sum();
        self.push(Op::Norm2 { x }, vec![(s + eps).sqrt()])
    }

    pub fn mean_square(&mut self, x: NodeId) -> NodeId {
        let n = self.nodes[x].value.len() as f64;
        let s: f64 = self.nodes[x].value.iter().map(|t| t * t).sum();
        self.push(Op::MeanSquare { x }, vec![s / n])
    }

    pub fn kl_diag(&mut self, mu_q: NodeId, sigma_q: NodeId, mu_p: NodeId, sigma_p: NodeId) -> NodeId {
        let (mq, sq, mp, sp) = (
            &self.nodes[mu_q].value,
            &self.nodes[sigma_q].value,
            &self.nodes[mu_p].value,
            &self.nodes[sigma_p].value,
        );
        assert!(mq.len() == sq.len() && mq.len() == mp.len() && mq.len() == sp.len());
        let mut kl = 0.0;
        for i in 0..mq.len() {
            let dm = mq[i] - mp[i];
            kl += (sp[i] / sq[i]).ln() + (sq[i] * sq[i] + dm * dm) / (2.0 * sp[i] * sp[i]) - 0.5;
        }
        self.push(Op::KlDiag { mu_q, sigma_q, mu_p, sigma_p }, vec![kl])
    }

    pub fn mean(&mut self, xs: &[NodeId]) -> NodeId {
        assert!(!xs.is_empty());
        let dim = self.nodes[xs[0]].value.len();
        let mut v = vec![0.0; dim];
        for &x in xs {
            for (acc, t) in v.iter_mut().zip(self.nodes[x].value.iter()) {
                *acc += t;
            }
        }
        let inv = 1.0 / xs.len() as f64;
        v.iter_mut().for_each(|t| *t *= inv);
        self.push(Op::Mean { xs: xs.to_vec() }, v)
    }

    /// Reverse sweep from a scalar loss node. Parameters of registered nets
    /// that did not participate get zero gradients.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.nodes[loss].value.len() != 1 {
            return Err(HabiError::Usage(format!(
                "backward requires a scalar loss node, got length {}",
                self.nodes[loss].value.len()
            )));
        }
        let mut grads = Gradients { nets: self.nets.iter().map(MlpGrads::zeros_like).collect() };
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[loss] = Some(vec![1.0]);

        for id in (0..=loss).rev() {
            let g = match adj[id].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[id].op {
                Op::Const | Op::Detach => {}
                Op::Affine { net, layer, x } => {
                    let l = &self.nets[*net].layers[*layer];
                    let xv = &self.nodes[*x].value;
                    let gl = &mut grads.nets[*net].layers[*layer];
                    for (i, gi) in g.iter().enumerate() {
                        gl.1[i] += gi;
                        for (j, xj) in xv.iter().enumerate() {
                            gl.0[[i, j]] += gi * xj;
                        }
                    }
                    let gx = accum(&mut adj[*x], xv.len());
                    for (i, gi) in g.iter().enumerate() {
                        let row = l.w.row(i);
                        for (j, wv) in row.iter().enumerate() {
                            gx[j] += gi * wv;
                        }
                    }
                }
                Op::Act { kind, x } => {
                    let gx = accum(&mut adj[*x], g.len());
                    match kind {
                        Activation::Relu => {
                            let pre = &self.nodes[*x].value;
                            for (i, gi) in g.iter().enumerate() {
                                if pre[i] > 0.0 {
                                    gx[i] += gi;
                                }
                            }
                        }
                        Activation::Identity => {
                            for (i, gi) in g.iter().enumerate() {
                                gx[i] += gi;
                            }
                        }
                        Activation::Tanh => {
                            let y = &self.nodes[id].value;
                            for (i, gi) in g.iter().enumerate() {
                                gx[i] += gi * (1.0 - y[i] * y[i]);
                            }
                        }
                    }
                }
                Op::SoftplusShift { x } => {
                    let xv = &self.nodes[*x].value;
                    let gx = accum(&mut adj[*x], g.len());
                    for (i, gi) in g.iter().enumerate() {
                        gx[i] += gi * sigmoid(xv[i]);
                    }
                }
                Op::Add { a, b } => {
                    add_into(accum(&mut adj[*a], g.len()), &g, 1.0);
                    add_into(accum(&mut adj[*b], g.len()), &g, 1.0);
                }
                Op::Sub { a, b } => {
                    add_into(accum(&mut adj[*a], g.len()), &g, 1.0);
                    add_into(accum(&mut adj[*b], g.len()), &g, -1.0);
                }
                Op::Mul { a, b } => {
                    let (av, bv) = (self.nodes[*a].value.clone(), self.nodes[*b].value.clone());
                    {
                        let ga = accum(&mut adj[*a], g.len());
                        for i in 0..g.len() {
                            ga[i] += g[i] * bv[i];
                        }
                    }
                    let gb = accum(&mut adj[*b], g.len());
                    for i in 0..g.len() {
                        gb[i] += g[i] * av[i];
                    }
                }
                Op::Scale { x, c } => {
                    add_into(accum(&mut adj[*x], g.len()), &g, *c);
                }
                Op::Concat { a, b } => {
                    let na = self.nodes[*a].value.len();
                    add_into(accum(&mut adj[*a], na), &g[..na], 1.0);
                    add_into(accum(&mut adj[*b], g.len() - na), &g[na..], 1.0);
                }
                Op::Sum { x } => {
                    let n = self.nodes[*x].value.len();
                    let gx = accum(&mut adj[*x], n);
                    for t in gx.iter_mut() {
                        *t += g[0];
                    }
                }
                Op::Norm2 { x } => {
                    let y = self.nodes[id].value[0];
                    let xv = &self.nodes[*x].value;
                    let gx = accum(&mut adj[*x], xv.len());
                    for (i, xi) in xv.iter().enumerate() {
                        gx[i] += g[0] * xi / y;
                    }
                }
                Op::MeanSquare { x } => {
                    let xv = &self.nodes[*x].value;
                    let n = xv.len() as f64;
                    let gx = accum(&mut adj[*x], xv.len());
                    for (i, xi) in xv.iter().enumerate() {
                        gx[i] += g[0] * 2.0 * xi / n;
                    }
                }
                Op::KlDiag { mu_q, sigma_q, mu_p, sigma_p } => {
                    let d = self.nodes[*mu_q].value.len();
                    let (mq, sq, mp, sp) = (
                        self.nodes[*mu_q].value.clone(),
                        self.nodes[*sigma_q].value.clone(),
                        self.nodes[*mu_p].value.clone(),
                        self.nodes[*sigma_p].value.clone(),
                    );
                    let g0 = g[0];
                    {
                        let gmq = accum(&mut adj[*mu_q], d);
                        for i in 0..d {
                            gmq[i] += g0 * (mq[i] - mp[i]) / (sp[i] * sp[i]);
                        }
                    }
                    {
                        let gsq = accum(&mut adj[*sigma_q], d);
                        for i in 0..d {
                            gsq[i] += g0 * (-1.0 / sq[i] + sq[i] / (sp[i] * sp[i]));
                        }
                    }
                    {
                        let gmp = accum(&mut adj[*mu_p], d);
                        for i in 0..d {
                            gmp[i] -= g0 * (mq[i] - mp[i]) / (sp[i] * sp[i]);
                        }
                    }
                    let gsp = accum(&mut adj[*sigma_p], d);
                    for i in 0..d {
                        let dm = mq[i] - mp[i];
                        gsp[i] += g0 * (1.0 / sp[i] - (sq[i] * sq[i] + dm * dm) / (sp[i] * sp[i] * sp[i]));
                    }
                }
                Op::Mean { xs } => {
                    let inv = 1.0 / xs.len() as f64;
                    for &x in xs {
                        add_into(accum(&mut adj[x], g.len()), &g, inv);
                    }
                }
            }
        }
        Ok(grads)
    }
}

impl MlpParams {
    pub(crate) fn activation_for(&self, layer_idx: usize) -> Activation {
        if layer_idx + 1 == self.layers.len() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }
}

pub fn softplus(x: f64) -> f64 {
    // Stable form: max(x, 0) + ln(1 + exp(-|x|)).
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn zip_with(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    assert_eq!(a.len(), b.len(), "elementwise op shape mismatch");
    a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect()
}

fn accum(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src.iter()) {
        *d += s * scale;
    }
}
