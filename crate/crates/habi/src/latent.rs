//! Diagonal-Gaussian latent machinery: encoder heads, reparameterized
//! sampling, the closed-form KL between diagonal Gaussians, and the adaptive
//! KL-weight controller.

use crate::error::{HabiError, Result};
use crate::nn::tape::softplus;
use crate::nn::MlpParams;

/// Additive floor on every encoder standard deviation.
pub const SIGMA_FLOOR: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalGaussian {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Self {
        assert_eq!(mu.len(), sigma.len(), "mu/sigma length mismatch");
        debug_assert!(sigma.iter().all(|&s| s > 0.0), "sigma must be positive");
        DiagonalGaussian { mu, sigma }
    }

    pub fn standard(dim: usize) -> Self {
        DiagonalGaussian { mu: vec![0.0; dim], sigma: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn log_density(&self, z: &[f64]) -> f64 {
        const LN_2PI: f64 = 1.8378770664093453;
        self.mu
            .iter()
            .zip(self.sigma.iter())
            .zip(z.iter())
            .map(|((&m, &s), &zi)| {
                let d = (zi - m) / s;
                -0.5 * (d * d + LN_2PI) - s.ln()
            })
            .sum()
    }
}

/// Elementwise softplus(xi) + 0.01; strictly positive and floored.
pub fn sigma_from_raw(xi: &[f64]) -> Vec<f64> {
    xi.iter().map(|&x| softplus(x) + SIGMA_FLOOR).collect()
}

/// An encoder head is a pair of MLPs sharing an input: one for the mean,
/// one for the raw (pre-softplus) standard deviation.
#[derive(Clone, Debug)]
pub struct GaussianHead {
    pub mu_net: MlpParams,
    pub xi_net: MlpParams,
}

impl GaussianHead {
    pub fn encode(&self, input: &[f64]) -> DiagonalGaussian {
        let mu = self.mu_net.forward(input);
        let sigma = sigma_from_raw(&self.xi_net.forward(input));
        DiagonalGaussian { mu, sigma }
    }

    pub fn in_dim(&self) -> usize {
        self.mu_net.in_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.mu_net.out_dim()
    }
}

pub fn encode_prior(head: &GaussianHead, state: &[f64]) -> Result<DiagonalGaussian> {
    if state.len() != head.in_dim() {
        return Err(HabiError::Config(format!(
            "prior encoder expects state of dimension {}, got {}",
            head.in_dim(),
            state.len()
        )));
    }
    Ok(head.encode(state))
}

pub fn encode_posterior(head: &GaussianHead, state: &[f64], action: &[f64]) -> Result<DiagonalGaussian> {
    if state.len() + action.len() != head.in_dim() {
        return Err(HabiError::Config(format!(
            "posterior encoder expects state+action of dimension {}, got {}",
            head.in_dim(),
            state.len() + action.len()
        )));
    }
    let mut input = Vec::with_capacity(head.in_dim());
    input.extend_from_slice(state);
    input.extend_from_slice(action);
    Ok(head.encode(&input))
}

/// z = mu + sigma .* noise.
pub fn reparam_sample(g: &DiagonalGaussian, noise: &[f64]) -> Vec<f64> {
    assert_eq!(noise.len(), g.dim(), "noise length must equal latent dimension");
    g.mu
        .iter()
        .zip(g.sigma.iter())
        .zip(noise.iter())
        .map(|((&m, &s), &n)| m + s * n)
        .collect()
}

/// Closed-form KL(q || p) between diagonal Gaussians, summed over dimensions.
pub fn kl_divergence(q: &DiagonalGaussian, p: &DiagonalGaussian) -> f64 {
    assert_eq!(q.dim(), p.dim(), "KL requires equal dimensions");
    q.mu
        .iter()
        .zip(q.sigma.iter())
        .zip(p.mu.iter().zip(p.sigma.iter()))
        .map(|((&mq, &sq), (&mp, &sp))| {
            let dm = mq - mp;
            (sp / sq).ln() + (sq * sq + dm * dm) / (2.0 * sp * sp) - 0.5
        })
        .sum()
}

/// Adaptive KL-weight controller: dual-ascent on log(beta) driven by the
/// log10 gap between the observed (smoothed) KL and the target.
#[derive(Clone, Debug)]
pub struct KlWeightController {
    pub log_beta: f64,
    pub target_kl: f64,
    pub lr_beta: f64,
    pub log_beta_min: f64,
    pub log_beta_max: f64,
    /// Exponential moving average (decay 0.99) of per-batch KL; NaN until the
    /// first observation.
    pub smoothed_kl: f64,
}

pub const KL_EMA_DECAY: f64 = 0.99;

impl KlWeightController {
    pub fn new(target_kl: f64, lr_beta: f64) -> Self {
        assert!(target_kl > 0.0 && lr_beta > 0.0);
        KlWeightController {
            log_beta: 0.0,
            target_kl,
            lr_beta,
            log_beta_min: (1e-4f64).ln(),
            log_beta_max: (1e4f64).ln(),
            smoothed_kl: f64::NAN,
        }
    }

    pub fn beta(&self) -> f64 {
        self.log_beta.exp()
    }

    pub fn at_clamp(&self) -> bool {
        self.log_beta <= self.log_beta_min || self.log_beta >= self.log_beta_max
    }

    /// Raw update rule: beta rises when the observed KL exceeds the target.
    pub fn beta_update(&mut self, observed_kl: f64) {
        let kl = observed_kl.max(1e-8);
        let err = kl.log10() - self.target_kl.log10();
        self.log_beta = (self.log_beta + self.lr_beta * err).clamp(self.log_beta_min, self.log_beta_max);
    }

    /// Folds a fresh batch KL into the moving average, then updates beta
    /// against the smoothed value.
    pub fn observe(&mut self, batch_kl: f64) {
        self.smoothed_kl = if self.smoothed_kl.is_nan() {
            batch_kl
        } else {
            KL_EMA_DECAY * self.smoothed_kl + (1.0 - KL_EMA_DECAY) * batch_kl
        };
        self.beta_update(self.smoothed_kl);
    }
}
