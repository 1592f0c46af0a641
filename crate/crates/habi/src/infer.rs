//! Habitual inference: the fast prior-encoder → decoder → critic decision
//! path. Draws a handful of prior latents, decodes each to an action, and
//! keeps the one the critic scores highest — no iterative refinement, no
//! posterior encoder anywhere on this path.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{HabiError, Result};
use crate::nn::fast::{FastMlp, Scratch};
use crate::nn::MlpParams;

/// Single-precision softplus with the same +0.01 floor the trainers use.
fn sigma_f32(xi: f32) -> f32 {
    let sp = if xi > 20.0 { xi } else { (1.0 + xi.exp()).ln() };
    sp + 0.01
}

/// Reusable buffers so one decision allocates nothing.
#[derive(Default)]
pub struct HiScratch {
    state: Vec<f32>,
    mu: Vec<f32>,
    sigma: Vec<f32>,
    z: Vec<f32>,
    za: Vec<f32>,
    best_action: Vec<f32>,
    net: Scratch,
}

pub struct HiPolicy {
    pub prior_mu: FastMlp,
    pub prior_xi: FastMlp,
    pub decoder: FastMlp,
    pub critic: FastMlp,
    pub n_candidates: usize,
}

impl HiPolicy {
    pub fn from_nets(
        prior_mu: &MlpParams,
        prior_xi: &MlpParams,
        decoder: &MlpParams,
        critic: &MlpParams,
        n_candidates: usize,
    ) -> Result<Self> {
        if n_candidates == 0 {
            return Err(HabiError::Config("n_candidates must be at least 1".into()));
        }
        let d_z = prior_mu.out_dim();
        if prior_xi.out_dim() != d_z
            || decoder.in_dim() != d_z
            || critic.in_dim() != d_z + decoder.out_dim()
            || critic.out_dim() != 1
        {
            return Err(HabiError::Config("inconsistent network dimensions for habitual inference".into()));
        }
        Ok(HiPolicy {
            prior_mu: FastMlp::from_params(prior_mu),
            prior_xi: FastMlp::from_params(prior_xi),
            decoder: FastMlp::from_params(decoder),
            critic: FastMlp::from_params(critic),
            n_candidates,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.prior_mu.in_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.decoder.out_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.prior_mu.out_dim()
    }

    fn encode_prior(&self, state: &[f64], s: &mut HiScratch) {
        s.state.clear();
        s.state.extend(state.iter().map(|&x| x as f32));
        s.mu.clear();
        {
            let mu = self.prior_mu.forward_into(&s.state, &mut s.net);
            s.mu.extend_from_slice(mu);
        }
        s.sigma.clear();
        {
            let xi = self.prior_xi.forward_into(&s.state, &mut s.net);
            s.sigma.extend(xi.iter().map(|&x| sigma_f32(x)));
        }
    }

    fn sample_and_decode(&self, rng: &mut ChaCha8Rng, s: &mut HiScratch) {
        let d_z = s.mu.len();
        s.z.clear();
        for d in 0..d_z {
            let n: f64 = rng.sample(StandardNormal);
            s.z.push(s.mu[d] + s.sigma[d] * n as f32);
        }
        s.za.clear();
        s.za.extend_from_slice(&s.z);
        let a = self.decoder.forward_into(&s.z, &mut s.net);
        // Score the action that would actually be executed: the critic only
        // ever saw bounded candidate actions in training, and raw decodes
        // outside the bounds would let it extrapolate arbitrarily.
        s.za.extend(a.iter().map(|&v| v.clamp(-1.0, 1.0)));
    }

    /// One habitual decision: sample `n_candidates` prior latents, decode
    /// each, keep the critic's favorite (ties → lowest index). Actions are
    /// clamped to [-1, 1] before scoring and on return.
    pub fn hi_act(
        &self,
        state: &[f64],
        rng: &mut ChaCha8Rng,
        scratch: &mut HiScratch,
        scores_out: Option<&mut Vec<f64>>,
    ) -> (Vec<f64>, usize) {
        self.encode_prior(state, scratch);
        let d_z = self.latent_dim();
        let mut best_idx = 0usize;
        let mut best_score = f32::NEG_INFINITY;
        let mut scores_local = scores_out;
        if let Some(s) = scores_local.as_deref_mut() {
            s.clear();
        }
        for i in 0..self.n_candidates {
            self.sample_and_decode(rng, scratch);
            let score = self.critic.forward_into(&scratch.za, &mut scratch.net)[0];
            if let Some(s) = scores_local.as_deref_mut() {
                s.push(score as f64);
            }
            // Strict > keeps the lowest index on exact ties.
            if score > best_score {
                best_score = score;
                best_idx = i;
                scratch.best_action.clear();
                scratch.best_action.extend_from_slice(&scratch.za[d_z..]);
            }
        }
        let action = scratch
            .best_action
            .iter()
            .map(|&a| (a as f64).clamp(-1.0, 1.0))
            .collect();
        (action, best_idx)
    }

    /// Critic-free ablation: decode a single prior sample and take it. With
    /// the same rng stream this reproduces `hi_act` at `n_candidates = 1`
    /// bit for bit, while never touching the critic.
    pub fn hi_act_no_critic(&self, state: &[f64], rng: &mut ChaCha8Rng, scratch: &mut HiScratch) -> Vec<f64> {
        self.encode_prior(state, scratch);
        self.sample_and_decode(rng, scratch);
        let d_z = self.latent_dim();
        scratch.za[d_z..].iter().map(|&a| (a as f64).clamp(-1.0, 1.0)).collect()
    }
}
