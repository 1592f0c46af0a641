//! Habitization: distill the slow planner into the fast habitual policy.
//!
//! The teacher is queried offline for candidate actions and their values;
//! the prior encoder, posterior encoder and decoder are then trained with a
//! reconstruction + β·KL objective, while the critic regresses the teacher's
//! values on a detached copy of the posterior latent. The policy nets see
//! only the teacher's best action; the critic sees every candidate.

use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{HabiError, Result};
use crate::infer::HiPolicy;
use crate::latent::{GaussianHead, KlWeightController, SIGMA_FLOOR};
use crate::nn::adam::{adam_update, AdamState};
use crate::nn::checkpoint;
use crate::nn::tape::Tape;
use crate::nn::{Activation, MlpParams};
use crate::teacher::{plan, TeacherPlanner};

/// One teacher query: the state, every sampled candidate with its value, and
/// the index of the candidate the teacher would execute.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherSample {
    pub state: Vec<f64>,
    /// (first action, Q) per candidate plan.
    pub candidates: Vec<(Vec<f64>, f64)>,
    pub best: usize,
}

impl TeacherSample {
    pub fn best_action(&self) -> &[f64] {
        &self.candidates[self.best].0
    }
}

/// Queries the teacher once per state. Each state gets its own rng stream
/// derived from (seed, index), so the result is independent of `threads`.
pub fn generate_teacher_dataset(
    planner: &TeacherPlanner,
    states: &[Vec<f64>],
    seed: u64,
    threads: usize,
) -> Result<Vec<TeacherSample>> {
    if states.is_empty() {
        return Err(HabiError::Usage("teacher dataset needs at least one state".into()));
    }
    let n_cand = planner.n_candidates_train.max(1);
    let query = |i: usize, state: &Vec<f64>| {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, &format!("teacher-{i}")));
        let (cands, best) = plan(planner, state, n_cand, &mut rng);
        TeacherSample {
            state: state.clone(),
            candidates: cands.into_iter().map(|c| (c.action, c.q)).collect(),
            best,
        }
    };

    let threads = threads.max(1).min(states.len());
    if threads == 1 {
        return Ok(states.iter().enumerate().map(|(i, s)| query(i, s)).collect());
    }
    let mut out: Vec<Option<TeacherSample>> = (0..states.len()).map(|_| None).collect();
    let chunk = states.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let mut rest: &mut [Option<TeacherSample>] = &mut out;
        let mut offset = 0;
        while !rest.is_empty() {
            let take = chunk.min(rest.len());
            let (head, tail) = rest.split_at_mut(take);
            let start = offset;
            scope.spawn(move || {
                for (j, slot) in head.iter_mut().enumerate() {
                    let i = start + j;
                    *slot = Some(query(i, &states[i]));
                }
            });
            rest = tail;
            offset += take;
        }
    });
    Ok(out.into_iter().map(|s| s.expect("all states queried")).collect())
}

#[derive(Clone, Debug)]
pub struct HabiModel {
    pub prior: GaussianHead,
    pub posterior: GaussianHead,
    pub decoder: MlpParams,
    pub critic: MlpParams,
    pub kl_ctrl: KlWeightController,
    pub state_dim: usize,
    pub action_dim: usize,
    pub d_z: usize,
    /// Completed habitization steps; advanced by [`run_habitization`].
    pub step: usize,
}

impl HabiModel {
    pub fn new<R: Rng>(
        state_dim: usize,
        action_dim: usize,
        d_z: usize,
        hidden: usize,
        target_kl: f64,
        lr_beta: f64,
        rng: &mut R,
    ) -> Self {
        let head = |in_dim: usize, rng: &mut R| GaussianHead {
            mu_net: MlpParams::new(&[in_dim, hidden, hidden, d_z], Activation::Identity, rng),
            xi_net: MlpParams::new(&[in_dim, hidden, hidden, d_z], Activation::Identity, rng),
        };
        HabiModel {
            prior: head(state_dim, rng),
            posterior: head(state_dim + action_dim, rng),
            decoder: MlpParams::new(&[d_z, hidden, hidden, action_dim], Activation::Identity, rng),
            critic: MlpParams::new(&[d_z + action_dim, hidden, hidden, 1], Activation::Identity, rng),
            kl_ctrl: KlWeightController::new(target_kl, lr_beta),
            state_dim,
            action_dim,
            d_z,
            step: 0,
        }
    }

    /// Fast inference view over the trained prior/decoder/critic.
    pub fn hi_policy(&self, n_candidates: usize) -> Result<HiPolicy> {
        HiPolicy::from_nets(
            &self.prior.mu_net,
            &self.prior.xi_net,
            &self.decoder,
            &self.critic,
            n_candidates,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        checkpoint::write_meta(
            &mut w,
            &[self.state_dim as f64, self.action_dim as f64, self.d_z as f64, self.step as f64],
        )?;
        checkpoint::write_net(&mut w, "prior_mu", &self.prior.mu_net)?;
        checkpoint::write_net(&mut w, "prior_xi", &self.prior.xi_net)?;
        checkpoint::write_net(&mut w, "post_mu", &self.posterior.mu_net)?;
        checkpoint::write_net(&mut w, "post_xi", &self.posterior.xi_net)?;
        checkpoint::write_net(&mut w, "decoder", &self.decoder)?;
        checkpoint::write_net(&mut w, "critic", &self.critic)?;
        let c = &self.kl_ctrl;
        checkpoint::write_controller(
            &mut w,
            &[c.log_beta, c.target_kl, c.lr_beta, c.log_beta_min, c.log_beta_max, c.smoothed_kl],
        )?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path).map_err(|e| {
            HabiError::Usage(format!("missing habitual-policy checkpoint {}: {e}", path.display()))
        })?);
        let meta = checkpoint::read_meta(&mut r, 4)?;
        let prior = GaussianHead {
            mu_net: checkpoint::read_named_net(&mut r, "prior_mu")?,
            xi_net: checkpoint::read_named_net(&mut r, "prior_xi")?,
        };
        let posterior = GaussianHead {
            mu_net: checkpoint::read_named_net(&mut r, "post_mu")?,
            xi_net: checkpoint::read_named_net(&mut r, "post_xi")?,
        };
        let decoder = checkpoint::read_named_net(&mut r, "decoder")?;
        let critic = checkpoint::read_named_net(&mut r, "critic")?;
        let c = checkpoint::read_controller(&mut r)?;
        let mut kl_ctrl = KlWeightController::new(c[1], c[2]);
        kl_ctrl.log_beta = c[0];
        kl_ctrl.log_beta_min = c[3];
        kl_ctrl.log_beta_max = c[4];
        kl_ctrl.smoothed_kl = c[5];
        let model = HabiModel {
            prior,
            posterior,
            decoder,
            critic,
            kl_ctrl,
            state_dim: meta[0] as usize,
            action_dim: meta[1] as usize,
            d_z: meta[2] as usize,
            step: meta[3] as usize,
        };
        if model.prior.in_dim() != model.state_dim
            || model.posterior.in_dim() != model.state_dim + model.action_dim
            || model.decoder.in_dim() != model.d_z
            || model.critic.in_dim() != model.d_z + model.action_dim
        {
            return Err(HabiError::Checkpoint("habitual-policy dimensions are inconsistent".into()));
        }
        Ok(model)
    }
}

/// Adam moments for every trainable network of a [`HabiModel`]. These are
/// not part of the checkpoint; resuming restarts the optimizer.
pub struct HabiOptimizers {
    pub prior_mu: AdamState,
    pub prior_xi: AdamState,
    pub post_mu: AdamState,
    pub post_xi: AdamState,
    pub decoder: AdamState,
    pub critic: AdamState,
}

impl HabiOptimizers {
    pub fn new(model: &HabiModel) -> Self {
        HabiOptimizers {
            prior_mu: AdamState::new(&model.prior.mu_net),
            prior_xi: AdamState::new(&model.prior.xi_net),
            post_mu: AdamState::new(&model.posterior.mu_net),
            post_xi: AdamState::new(&model.posterior.xi_net),
            decoder: AdamState::new(&model.decoder),
            critic: AdamState::new(&model.critic),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LossReport {
    pub recon: f64,
    pub kl: f64,
    pub critic: f64,
    pub beta: f64,
    /// Largest critic-loss gradient magnitude reaching any non-critic
    /// network. Must be exactly zero: the latent is detached.
    pub critic_grad_leak: f64,
}

/// One joint training step (policy nets and critic) on a minibatch.
///
/// Policy loss per sample: ‖Decoder(z_q) − a*‖₂ + β·KL(q‖p), averaged over
/// the batch, with z_q a reparameterized posterior sample. The critic loss
/// averages |Critic(detach(z_q), a_i) − Q_i| over every teacher candidate.
pub fn habitize_step(
    model: &mut HabiModel,
    opts: &mut HabiOptimizers,
    batch: &[&TeacherSample],
    lr: f64,
    recon_squared: bool,
    rng: &mut ChaCha8Rng,
) -> Result<LossReport> {
    assert!(!batch.is_empty(), "habitize_step requires a non-empty batch");
    let beta = model.kl_ctrl.beta();

    let mut tape = Tape::new();
    let prior_mu = tape.register_net(&model.prior.mu_net);
    let prior_xi = tape.register_net(&model.prior.xi_net);
    let post_mu = tape.register_net(&model.posterior.mu_net);
    let post_xi = tape.register_net(&model.posterior.xi_net);
    let decoder = tape.register_net(&model.decoder);
    let critic = tape.register_net(&model.critic);

    let mut per_policy = Vec::with_capacity(batch.len());
    let mut per_kl = Vec::with_capacity(batch.len());
    let mut per_recon = Vec::with_capacity(batch.len());
    let mut z_q_nodes = Vec::with_capacity(batch.len());

    for sample in batch {
        let a_star = sample.best_action();
        let s_node = tape.constant(&sample.state);
        let a_node = tape.constant(a_star);
        let sa_node = tape.concat(s_node, a_node);

        let mu_q = tape.mlp_forward(post_mu, sa_node);
        let xi_q = tape.mlp_forward(post_xi, sa_node);
        let sigma_q = tape.softplus_shift(xi_q, SIGMA_FLOOR);
        let mu_p = tape.mlp_forward(prior_mu, s_node);
        let xi_p = tape.mlp_forward(prior_xi, s_node);
        let sigma_p = tape.softplus_shift(xi_p, SIGMA_FLOOR);

        let noise: Vec<f64> = (0..model.d_z).map(|_| rng.sample(StandardNormal)).collect();
        let noise_node = tape.constant(&noise);
        let scaled = tape.mul(sigma_q, noise_node);
        let z_q = tape.add(mu_q, scaled);
        z_q_nodes.push(z_q);

        let a_hat = tape.mlp_forward(decoder, z_q);
        let diff = tape.sub(a_hat, a_node);
        let recon = if recon_squared { tape.mean_square(diff) } else { tape.norm2(diff, 1e-12) };
        let kl = tape.kl_diag(mu_q, sigma_q, mu_p, sigma_p);
        let weighted = tape.scale(kl, beta);
        per_policy.push(tape.add(recon, weighted));
        per_kl.push(kl);
        per_recon.push(recon);
    }

    let policy_loss = tape.mean(&per_policy);
    let kl_mean = tape.mean(&per_kl);
    let recon_mean = tape.mean(&per_recon);
    let recon_val = tape.value(recon_mean)[0];
    let kl_val = tape.value(kl_mean)[0];
    if !recon_val.is_finite() {
        return Err(HabiError::training("habitize", format!("non-finite reconstruction loss {recon_val}")));
    }
    if !kl_val.is_finite() {
        return Err(HabiError::training("habitize", format!("non-finite KL {kl_val}")));
    }
    let policy_grads = tape.backward(policy_loss)?;
    adam_update(&mut model.prior.mu_net, policy_grads.net(prior_mu), &mut opts.prior_mu, lr, "prior_mu")?;
    adam_update(&mut model.prior.xi_net, policy_grads.net(prior_xi), &mut opts.prior_xi, lr, "prior_xi")?;
    adam_update(&mut model.posterior.mu_net, policy_grads.net(post_mu), &mut opts.post_mu, lr, "post_mu")?;
    adam_update(&mut model.posterior.xi_net, policy_grads.net(post_xi), &mut opts.post_xi, lr, "post_xi")?;
    adam_update(&mut model.decoder, policy_grads.net(decoder), &mut opts.decoder, lr, "decoder")?;

    // Critic stage: same tape, gradients cut off at the detached latent.
    let mut per_critic = Vec::new();
    for (sample, &z_q) in batch.iter().zip(z_q_nodes.iter()) {
        let z_det = tape.detach(z_q);
        for (action, q) in &sample.candidates {
            let a_node = tape.constant(action);
            let za = tape.concat(z_det, a_node);
            let pred = tape.mlp_forward(critic, za);
            let target = tape.constant(&[*q]);
            let diff = tape.sub(pred, target);
            per_critic.push(tape.norm2(diff, 1e-12));
        }
    }
    let critic_loss = tape.mean(&per_critic);
    let critic_val = tape.value(critic_loss)[0];
    if !critic_val.is_finite() {
        return Err(HabiError::training("habitize", format!("non-finite critic loss {critic_val}")));
    }
    let critic_grads = tape.backward(critic_loss)?;
    let critic_grad_leak = [prior_mu, prior_xi, post_mu, post_xi, decoder]
        .iter()
        .map(|&id| critic_grads.net(id).max_abs())
        .fold(0.0f64, f64::max);
    adam_update(&mut model.critic, critic_grads.net(critic), &mut opts.critic, lr, "critic")?;

    model.kl_ctrl.observe(kl_val);

    Ok(LossReport { recon: recon_val, kl: kl_val, critic: critic_val, beta, critic_grad_leak })
}

#[derive(Clone, Debug)]
pub struct HabitizeOptions {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub checkpoint_every: usize,
    pub log_every: usize,
    pub recon_squared: bool,
}

/// Runs (or resumes) the habitization loop, streaming metrics.csv and
/// periodically checkpointing `model_latest.ckpt` into `out_dir`. Training
/// resumes from `model.step`; per-step rng streams are derived from the
/// global seed so an interrupted and resumed run matches an uninterrupted
/// one batch for batch.
pub fn run_habitization(
    model: &mut HabiModel,
    data: &[TeacherSample],
    options: &HabitizeOptions,
    out_dir: &Path,
    seed: u64,
) -> Result<Vec<LossReport>> {
    if data.is_empty() {
        return Err(HabiError::Usage("habitization needs a non-empty teacher dataset".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let metrics_path = out_dir.join("metrics.csv");
    let resuming = model.step > 0 && metrics_path.exists();
    let mut metrics = if resuming {
        OpenOptions::new().append(true).open(&metrics_path)?
    } else {
        let mut f = File::create(&metrics_path)?;
        writeln!(f, "step,recon,kl,beta,critic")?;
        f
    };

    let mut opts = HabiOptimizers::new(model);
    let mut reports = Vec::new();
    let ckpt_path = out_dir.join("model_latest.ckpt");
    while model.step < options.steps {
        let step = model.step;
        let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, &format!("habitize-{step}")));
        let batch: Vec<&TeacherSample> =
            (0..options.batch_size).map(|_| &data[rng.gen_range(0..data.len())]).collect();
        let report = habitize_step(model, &mut opts, &batch, options.lr, options.recon_squared, &mut rng)?;
        model.step = step + 1;
        if model.step % options.log_every == 0 || model.step == options.steps {
            writeln!(
                metrics,
                "{},{:.6},{:.6},{:.6},{:.6}",
                model.step, report.recon, report.kl, report.beta, report.critic
            )?;
        }
        if model.step % options.checkpoint_every == 0 || model.step == options.steps {
            model.save(&ckpt_path)?;
        }
        reports.push(report);
    }
    Ok(reports)
}

/// Direct-distillation baseline: a plain MLP regressed on (state → best
/// teacher action) pairs with mean-squared error. No latent, no critic.
pub fn train_direct_distill(
    data: &[TeacherSample],
    hidden: usize,
    steps: usize,
    batch_size: usize,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<MlpParams> {
    if data.is_empty() {
        return Err(HabiError::Usage("direct distillation needs a non-empty teacher dataset".into()));
    }
    let state_dim = data[0].state.len();
    let action_dim = data[0].best_action().len();
    let mut net = MlpParams::new(&[state_dim, hidden, hidden, action_dim], Activation::Identity, rng);
    let mut opt = AdamState::new(&net);
    for _ in 0..steps {
        let mut tape = Tape::new();
        let id = tape.register_net(&net);
        let mut per_sample = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let sample = &data[rng.gen_range(0..data.len())];
            let x = tape.constant(&sample.state);
            let pred = tape.mlp_forward(id, x);
            let target = tape.constant(sample.best_action());
            let diff = tape.sub(pred, target);
            per_sample.push(tape.mean_square(diff));
        }
        let loss = tape.mean(&per_sample);
        let loss_val = tape.value(loss)[0];
        if !loss_val.is_finite() {
            return Err(HabiError::training("direct-distill", format!("non-finite loss {loss_val}")));
        }
        let grads = tape.backward(loss)?;
        adam_update(&mut net, grads.net(id), &mut opt, lr, "direct-distill")?;
    }
    Ok(net)
}

// ── Teacher-dataset binary I/O ───────────────────────────────────────

const TD_MAGIC: &[u8; 4] = b"HABI";
const TD_VERSION: u32 = 1;

pub fn save_teacher_dataset(data: &[TeacherSample], path: &Path) -> Result<()> {
    if data.is_empty() {
        return Err(HabiError::Usage("refusing to write an empty teacher dataset".into()));
    }
    let state_dim = data[0].state.len();
    let action_dim = data[0].candidates[0].0.len();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(TD_MAGIC)?;
    w.write_all(&TD_VERSION.to_le_bytes())?;
    w.write_all(&(data.len() as u32).to_le_bytes())?;
    w.write_all(&(state_dim as u32).to_le_bytes())?;
    w.write_all(&(action_dim as u32).to_le_bytes())?;
    for sample in data {
        w.write_all(&(sample.candidates.len() as u32).to_le_bytes())?;
        w.write_all(&(sample.best as u32).to_le_bytes())?;
        for &v in &sample.state {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        for (action, q) in &sample.candidates {
            for &v in action {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
            w.write_all(&(*q as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_teacher_dataset(path: &Path) -> Result<Vec<TeacherSample>> {
    let mut r = BufReader::new(File::open(path).map_err(|e| {
        HabiError::Usage(format!("missing teacher dataset {}: {e}", path.display()))
    })?);
    let mut b4 = [0u8; 4];
    let read_u32 = |r: &mut BufReader<File>| -> Result<u32> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)
            .map_err(|e| HabiError::Checkpoint(format!("truncated teacher dataset: {e}")))?;
        Ok(u32::from_le_bytes(b))
    };
    let read_f32 = |r: &mut BufReader<File>| -> Result<f64> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)
            .map_err(|e| HabiError::Checkpoint(format!("truncated teacher dataset: {e}")))?;
        Ok(f32::from_le_bytes(b) as f64)
    };
    r.read_exact(&mut b4).map_err(|e| HabiError::Checkpoint(format!("truncated teacher dataset: {e}")))?;
    if &b4 != TD_MAGIC {
        return Err(HabiError::Checkpoint("bad teacher-dataset magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != TD_VERSION {
        return Err(HabiError::Checkpoint(format!("unsupported teacher-dataset version {version}")));
    }
    let n = read_u32(&mut r)? as usize;
    let state_dim = read_u32(&mut r)? as usize;
    let action_dim = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let n_cand = read_u32(&mut r)? as usize;
        let best = read_u32(&mut r)? as usize;
        if n_cand == 0 || best >= n_cand || n_cand > 4096 {
            return Err(HabiError::Checkpoint("implausible teacher-sample candidate count".into()));
        }
        let mut state = Vec::with_capacity(state_dim);
        for _ in 0..state_dim {
            state.push(read_f32(&mut r)?);
        }
        let mut candidates = Vec::with_capacity(n_cand);
        for _ in 0..n_cand {
            let mut action = Vec::with_capacity(action_dim);
            for _ in 0..action_dim {
                action.push(read_f32(&mut r)?);
            }
            let q = read_f32(&mut r)?;
            candidates.push((action, q));
        }
        out.push(TeacherSample { state, candidates, best });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::teacher::NoiseSchedule;

    fn toy_teacher_dataset(n: usize, seed: u64) -> Vec<TeacherSample> {
        // Synthetic "teacher": best action = tanh(2 s), candidates jittered
        // around it with Q decreasing in the jitter.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let s: f64 = rng.gen_range(-1.0..1.0);
                let a_star = (2.0 * s).tanh();
                let candidates: Vec<(Vec<f64>, f64)> = (0..4)
                    .map(|j| {
                        let jitter = 0.2 * j as f64;
                        (vec![a_star - jitter], 1.0 - jitter)
                    })
                    .collect();
                TeacherSample { state: vec![s], candidates, best: 0 }
            })
            .collect()
    }

    fn toy_model(seed: u64) -> HabiModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        HabiModel::new(1, 1, 4, 16, 1.0, 0.03, &mut rng)
    }

    #[test]
    fn habitize_step_reports_finite_losses_and_no_leak() {
        let mut model = toy_model(1);
        let mut opts = HabiOptimizers::new(&model);
        let data = toy_teacher_dataset(64, 2);
        let batch: Vec<&TeacherSample> = data.iter().take(16).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let report = habitize_step(&mut model, &mut opts, &batch, 3e-4, false, &mut rng).unwrap();
        assert!(report.recon.is_finite() && report.recon > 0.0);
        assert!(report.kl.is_finite() && report.kl >= 0.0);
        assert!(report.critic.is_finite());
        assert_eq!(report.critic_grad_leak, 0.0, "critic gradients leaked past the detach");
    }

    #[test]
    fn habitization_reduces_reconstruction_error() {
        let mut model = toy_model(4);
        let mut opts = HabiOptimizers::new(&model);
        let data = toy_teacher_dataset(256, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut first = 0.0;
        let mut last = 0.0;
        let steps = 800;
        for step in 0..steps {
            let batch: Vec<&TeacherSample> =
                (0..32).map(|_| &data[rng.gen_range(0..data.len())]).collect();
            let r = habitize_step(&mut model, &mut opts, &batch, 1e-3, false, &mut rng).unwrap();
            if step < 20 {
                first += r.recon / 20.0;
            }
            if step >= steps - 20 {
                last += r.recon / 20.0;
            }
        }
        assert!(last < 0.5 * first, "recon {first} -> {last}");
    }

    #[test]
    fn critic_learns_candidate_ranking() {
        let mut model = toy_model(7);
        let mut opts = HabiOptimizers::new(&model);
        let data = toy_teacher_dataset(256, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..600 {
            let batch: Vec<&TeacherSample> =
                (0..16).map(|_| &data[rng.gen_range(0..data.len())]).collect();
            habitize_step(&mut model, &mut opts, &batch, 1e-3, false, &mut rng).unwrap();
        }
        // The critic should score the teacher's best candidate above the worst.
        let mut wins = 0;
        for sample in data.iter().take(50) {
            let q = crate::latent::encode_posterior(&model.posterior, &sample.state, sample.best_action())
                .unwrap();
            let z = q.mu.clone();
            let score = |a: &[f64]| {
                let mut input = z.clone();
                input.extend_from_slice(a);
                model.critic.forward(&input)[0]
            };
            if score(&sample.candidates[0].0) > score(&sample.candidates[3].0) {
                wins += 1;
            }
        }
        assert!(wins >= 40, "critic ranked best over worst in only {wins}/50 cases");
    }

    #[test]
    fn run_habitization_writes_metrics_and_resumes_identically() {
        let data = toy_teacher_dataset(64, 10);
        let options = HabitizeOptions {
            steps: 30,
            batch_size: 8,
            lr: 1e-3,
            checkpoint_every: 10,
            log_every: 5,
            recon_squared: false,
        };
        let dir_a = tempfile::tempdir().unwrap();
        let mut full = toy_model(11);
        run_habitization(&mut full, &data, &options, dir_a.path(), 99).unwrap();

        // Interrupted run: stop at 10 steps, reload the checkpoint, finish.
        let dir_b = tempfile::tempdir().unwrap();
        let mut part = toy_model(11);
        let short = HabitizeOptions { steps: 10, ..options.clone() };
        run_habitization(&mut part, &data, &short, dir_b.path(), 99).unwrap();
        let mut resumed = HabiModel::load(&dir_b.path().join("model_latest.ckpt")).unwrap();
        assert_eq!(resumed.step, 10);
        run_habitization(&mut resumed, &data, &options, dir_b.path(), 99).unwrap();
        assert_eq!(resumed.step, full.step);
        // f32 checkpointing truncates, so compare loosely.
        let probe = [0.3];
        let a = full.prior.mu_net.forward(&probe);
        let b = resumed.prior.mu_net.forward(&probe);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-2, "{x} vs {y}");
        }
        let metrics = std::fs::read_to_string(dir_a.path().join("metrics.csv")).unwrap();
        assert!(metrics.starts_with("step,recon,kl,beta,critic"));
        assert!(metrics.lines().count() > 3);
    }

    #[test]
    fn corrupt_checkpoint_fails_to_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model_latest.ckpt");
        let model = toy_model(12);
        model.save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] ^= 0xff;
        std::fs::write(&path, &bytes).unwrap();
        assert!(HabiModel::load(&path).is_err());
    }

    #[test]
    fn model_checkpoint_round_trip_is_bit_exact_on_resave() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("m1.ckpt");
        let p2 = dir.path().join("m2.ckpt");
        let model = toy_model(13);
        model.save(&p1).unwrap();
        HabiModel::load(&p1).unwrap().save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn direct_distill_fits_the_teacher_map() {
        let data = toy_teacher_dataset(256, 14);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let net = train_direct_distill(&data, 16, 1500, 32, 1e-3, &mut rng).unwrap();
        let mut err = 0.0;
        for s in [-0.8, -0.3, 0.2, 0.7] {
            err += (net.forward(&[s])[0] - (2.0 * s).tanh()).abs();
        }
        assert!(err / 4.0 < 0.15, "mean abs error {}", err / 4.0);
    }

    #[test]
    fn teacher_dataset_generation_is_thread_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let schedule = NoiseSchedule::linear(3, 1e-4, 0.2).unwrap();
        let planner = TeacherPlanner::new(1, 1, 1, 8, schedule, 3, &mut rng);
        let states: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 / 10.0]).collect();
        let a = generate_teacher_dataset(&planner, &states, 7, 1).unwrap();
        let b = generate_teacher_dataset(&planner, &states, 7, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        assert_eq!(a[0].candidates.len(), 3);
    }

    #[test]
    fn teacher_dataset_file_round_trip() {
        let data = toy_teacher_dataset(20, 17);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("teacher.bin");
        save_teacher_dataset(&data, &path).unwrap();
        let loaded = load_teacher_dataset(&path).unwrap();
        assert_eq!(loaded.len(), data.len());
        assert_eq!(loaded[3].best, data[3].best);
        assert!((loaded[3].state[0] - data[3].state[0]).abs() < 1e-6);
        // Exact on a second pass: f32 in, f32 out.
        let path2 = dir.path().join("teacher2.bin");
        save_teacher_dataset(&loaded, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }
}
