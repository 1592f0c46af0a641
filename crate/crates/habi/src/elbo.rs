//! Numerical lower-bound checker on a tractable linear-Gaussian toy model.
//!
//! The toy decoder is x = a .* z + b + eps with eps ~ N(0, noise_sigma^2 I)
//! and a diagonal `a`, so the exact posterior and log evidence stay diagonal
//! and closed-form. The check compares a Monte-Carlo ELBO under q against an
//! importance-weighted log-evidence estimate under p.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{HabiError, Result};
use crate::latent::{kl_divergence, reparam_sample, DiagonalGaussian};

#[derive(Clone, Debug)]
pub struct LinearGaussianModel {
    /// Diagonal decoder weights.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub noise_sigma: f64,
    /// Observed data point.
    pub x: Vec<f64>,
}

impl LinearGaussianModel {
    pub fn log_likelihood(&self, z: &[f64]) -> f64 {
        const LN_2PI: f64 = 1.8378770664093453;
        let s = self.noise_sigma;
        self.x
            .iter()
            .zip(self.a.iter().zip(self.b.iter()))
            .zip(z.iter())
            .map(|((&xi, (&ai, &bi)), &zi)| {
                let d = (xi - ai * zi - bi) / s;
                -0.5 * (d * d + LN_2PI) - s.ln()
            })
            .sum()
    }

    /// Exact posterior over z given x under prior p (diagonal throughout).
    pub fn exact_posterior(&self, p: &DiagonalGaussian) -> DiagonalGaussian {
        let s2 = self.noise_sigma * self.noise_sigma;
        let mut mu = Vec::with_capacity(p.dim());
        let mut sigma = Vec::with_capacity(p.dim());
        for i in 0..p.dim() {
            let prec = 1.0 / (p.sigma[i] * p.sigma[i]) + self.a[i] * self.a[i] / s2;
            let var = 1.0 / prec;
            let m = var * (p.mu[i] / (p.sigma[i] * p.sigma[i]) + self.a[i] * (self.x[i] - self.b[i]) / s2);
            mu.push(m);
            sigma.push(var.sqrt());
        }
        DiagonalGaussian::new(mu, sigma)
    }

    /// Exact log evidence log E_{z~p} P(x|z): marginal is Gaussian with
    /// variance noise_sigma^2 + a^2 sigma_p^2 per dimension.
    pub fn exact_log_evidence(&self, p: &DiagonalGaussian) -> f64 {
        const LN_2PI: f64 = 1.8378770664093453;
        let s2 = self.noise_sigma * self.noise_sigma;
        (0..p.dim())
            .map(|i| {
                let var = s2 + self.a[i] * self.a[i] * p.sigma[i] * p.sigma[i];
                let d = self.x[i] - self.a[i] * p.mu[i] - self.b[i];
                -0.5 * (d * d / var + LN_2PI + var.ln())
            })
            .sum()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ElboCheck {
    pub elbo: f64,
    pub elbo_se: f64,
    pub log_evidence_estimate: f64,
    pub log_evidence_se: f64,
}

/// Monte-Carlo ELBO under q minus KL, and an importance-weighted
/// log-evidence estimate over the prior. Standard errors accompany both so
/// callers can test the bound up to sampling noise.
pub fn elbo_bound_check<R: Rng>(
    model: &LinearGaussianModel,
    q: &DiagonalGaussian,
    p: &DiagonalGaussian,
    n_mc: usize,
    rng: &mut R,
) -> Result<ElboCheck> {
    assert!(n_mc >= 10_000, "n_mc must be at least 1e4");
    if model.noise_sigma <= 0.0 || !model.noise_sigma.is_finite() {
        return Err(HabiError::Numerical("degenerate likelihood: noise_sigma must be positive".into()));
    }
    let dim = q.dim();

    // E_{z~q}[log P(x|z)] with its standard error.
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..n_mc {
        let noise: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let z = reparam_sample(q, &noise);
        let ll = model.log_likelihood(&z);
        sum += ll;
        sumsq += ll * ll;
    }
    let mean_ll = sum / n_mc as f64;
    let var_ll = (sumsq / n_mc as f64 - mean_ll * mean_ll).max(0.0);
    let elbo = mean_ll - kl_divergence(q, p);
    let elbo_se = (var_ll / n_mc as f64).sqrt();

    // log (1/M) sum P(x|z_i) over z ~ p, computed in log space.
    let mut logw = Vec::with_capacity(n_mc);
    for _ in 0..n_mc {
        let noise: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let z = reparam_sample(p, &noise);
        logw.push(model.log_likelihood(&z));
    }
    let m = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(HabiError::Numerical("likelihood is zero everywhere under the prior".into()));
    }
    let w: Vec<f64> = logw.iter().map(|&l| (l - m).exp()).collect();
    let mean_w = w.iter().sum::<f64>() / n_mc as f64;
    let var_w = w.iter().map(|&x| (x - mean_w).powi(2)).sum::<f64>() / n_mc as f64;
    let log_evidence_estimate = m + mean_w.ln();
    // Delta method: se(log mean) = se(mean) / mean.
    let log_evidence_se = (var_w / n_mc as f64).sqrt() / mean_w;

    Ok(ElboCheck { elbo, elbo_se, log_evidence_estimate, log_evidence_se })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy(rng: &mut ChaCha8Rng, dim: usize) -> (LinearGaussianModel, DiagonalGaussian) {
        let p = DiagonalGaussian::new(
            (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            (0..dim).map(|_| rng.gen_range(0.5..1.5)).collect(),
        );
        let model = LinearGaussianModel {
            a: (0..dim).map(|_| rng.gen_range(0.5..1.5)).collect(),
            b: (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            noise_sigma: 0.7,
            x: (0..dim).map(|_| rng.gen_range(-1.5..1.5)).collect(),
        };
        (model, p)
    }

    #[test]
    fn bound_is_tight_at_exact_posterior() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (model, p) = toy(&mut rng, 4);
        let q = model.exact_posterior(&p);
        let check = elbo_bound_check(&model, &q, &p, 20_000, &mut rng).unwrap();
        let exact = model.exact_log_evidence(&p);
        // At the true posterior the ELBO equals the log evidence.
        assert!((check.elbo - exact).abs() < 4.0 * check.elbo_se + 1e-3, "{} vs {exact}", check.elbo);
    }

    #[test]
    fn random_q_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..5 {
            let (model, p) = toy(&mut rng, 4);
            let q = DiagonalGaussian::new(
                (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                (0..4).map(|_| rng.gen_range(0.2..2.0)).collect(),
            );
            let check = elbo_bound_check(&model, &q, &p, 20_000, &mut rng).unwrap();
            let slack = 3.0 * (check.elbo_se + check.log_evidence_se);
            assert!(check.elbo <= check.log_evidence_estimate + slack);
        }
    }

    #[test]
    fn offset_q_is_strictly_looser() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let (model, p) = toy(&mut rng, 4);
        let tight = model.exact_posterior(&p);
        let mut off = tight.clone();
        off.mu.iter_mut().for_each(|m| *m += 10.0);
        let t = elbo_bound_check(&model, &tight, &p, 20_000, &mut rng).unwrap();
        let o = elbo_bound_check(&model, &off, &p, 20_000, &mut rng).unwrap();
        assert!(o.elbo < t.elbo - 10.0);
    }

    #[test]
    fn degenerate_likelihood_is_numerical_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let (mut model, p) = toy(&mut rng, 2);
        model.noise_sigma = 0.0;
        let q = DiagonalGaussian::standard(2);
        assert!(matches!(
            elbo_bound_check(&model, &q, &p, 10_000, &mut rng),
            Err(HabiError::Numerical(_))
        ));
    }
}
