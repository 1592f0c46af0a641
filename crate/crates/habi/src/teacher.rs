//! The slow goal-directed teacher: a conditional DDPM over action sequences,
//! a value network regressed on discounted returns-to-go, and a planning
//! routine that samples candidates, scores their first actions, and keeps
//! the best one.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{HabiError, Result};
use crate::nn::adam::{adam_update, AdamState};
use crate::nn::checkpoint;
use crate::nn::tape::Tape;
use crate::nn::{Activation, MlpParams};

pub const TIME_EMBED_DIM: usize = 16;

/// Forward-process schedule. Betas strictly increasing in (0, 1); the
/// cumulative products alpha_bar are strictly decreasing and stay positive.
#[derive(Clone, Debug)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(HabiError::Config("noise schedule needs at least one step".into()));
        }
        for w in betas.windows(2) {
            if w[1] <= w[0] {
                return Err(HabiError::Config("betas must be strictly increasing".into()));
            }
        }
        if betas.iter().any(|&b| b <= 0.0 || b >= 1.0) {
            return Err(HabiError::Config("betas must lie in (0, 1)".into()));
        }
        let alphas: Vec<f64> = betas.iter().map(|&b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut prod = 1.0;
        for &a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        Ok(NoiseSchedule { betas, alphas, alpha_bars })
    }

    pub fn linear(t_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_steps == 1 {
            return Self::from_betas(vec![beta_end]);
        }
        let betas = (0..t_steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (t_steps - 1) as f64)
            .collect();
        Self::from_betas(betas)
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }
}

/// Sinusoidal features of the (1-based) diffusion timestep.
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut emb = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = (10_000f64).powf(-(i as f64) / half as f64);
        emb.push((t as f64 * freq).sin());
        emb.push((t as f64 * freq).cos());
    }
    emb.truncate(dim);
    emb
}

/// An action-sequence sample conditioned on a state.
#[derive(Clone, Debug)]
pub struct TrajectoryPlan {
    /// (horizon, action_dim), clamped to the action bound.
    pub actions: Array2<f64>,
    pub state: Vec<f64>,
}

impl TrajectoryPlan {
    pub fn first_action(&self) -> Vec<f64> {
        self.actions.row(0).to_vec()
    }
}

#[derive(Clone, Debug)]
pub struct Candidate {
    pub action: Vec<f64>,
    pub q: f64,
}

#[derive(Clone, Debug)]
pub struct TeacherPlanner {
    pub denoiser: MlpParams,
    pub value_net: MlpParams,
    pub schedule: NoiseSchedule,
    pub state_dim: usize,
    pub action_dim: usize,
    pub horizon: usize,
    pub action_bound: f64,
    pub n_candidates_train: usize,
}

impl TeacherPlanner {
    pub fn new<R: Rng>(
        state_dim: usize,
        action_dim: usize,
        horizon: usize,
        hidden: usize,
        schedule: NoiseSchedule,
        n_candidates_train: usize,
        rng: &mut R,
    ) -> Self {
        let seq = horizon * action_dim;
        let denoiser_in = state_dim + seq + TIME_EMBED_DIM;
        let denoiser = MlpParams::new(&[denoiser_in, hidden, hidden, seq], Activation::Identity, rng);
        let value_net =
            MlpParams::new(&[state_dim + action_dim, hidden, hidden, 1], Activation::Identity, rng);
        TeacherPlanner {
            denoiser,
            value_net,
            schedule,
            state_dim,
            action_dim,
            horizon,
            action_bound: 1.0,
            n_candidates_train,
        }
    }

    pub fn seq_dim(&self) -> usize {
        self.horizon * self.action_dim
    }

    fn denoiser_input(&self, state: &[f64], noisy: &[f64], t: usize) -> Vec<f64> {
        let mut input = Vec::with_capacity(self.denoiser.in_dim());
        input.extend_from_slice(state);
        input.extend_from_slice(noisy);
        input.extend_from_slice(&timestep_embedding(t, TIME_EMBED_DIM));
        input
    }

    pub fn q_value(&self, state: &[f64], action: &[f64]) -> f64 {
        let mut input = Vec::with_capacity(state.len() + action.len());
        input.extend_from_slice(state);
        input.extend_from_slice(action);
        self.value_net.forward(&input)[0]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        checkpoint::write_meta(
            &mut w,
            &[
                self.state_dim as f64,
                self.action_dim as f64,
                self.horizon as f64,
                self.n_candidates_train as f64,
                self.action_bound,
            ],
        )?;
        checkpoint::write_net(&mut w, "denoiser", &self.denoiser)?;
        checkpoint::write_net(&mut w, "value", &self.value_net)?;
        checkpoint::write_schedule(&mut w, &self.schedule.betas)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path).map_err(|e| {
            HabiError::Usage(format!("missing planner checkpoint {}: {e}", path.display()))
        })?);
        let meta = checkpoint::read_meta(&mut r, 5)?;
        let denoiser = checkpoint::read_named_net(&mut r, "denoiser")?;
        let value_net = checkpoint::read_named_net(&mut r, "value")?;
        let schedule = NoiseSchedule::from_betas(checkpoint::read_schedule(&mut r)?)?;
        let planner = TeacherPlanner {
            denoiser,
            value_net,
            schedule,
            state_dim: meta[0] as usize,
            action_dim: meta[1] as usize,
            horizon: meta[2] as usize,
            action_bound: meta[4],
            n_candidates_train: meta[3] as usize,
        };
        if planner.denoiser.in_dim() != planner.state_dim + planner.seq_dim() + TIME_EMBED_DIM {
            return Err(HabiError::Checkpoint("planner dimensions are inconsistent".into()));
        }
        Ok(planner)
    }
}

/// One noise-prediction training step over a batch of horizon-H windows.
/// Returns the batch loss (mean squared error per dimension).
pub fn ddpm_train_step(
    planner: &mut TeacherPlanner,
    opt: &mut AdamState,
    batch: &[(Vec<f64>, Vec<f64>)],
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    assert!(!batch.is_empty());
    let seq = planner.seq_dim();
    let t_max = planner.schedule.len();
    let mut tape = Tape::new();
    let net = tape.register_net(&planner.denoiser);
    let mut per_sample = Vec::with_capacity(batch.len());
    for (state, actions) in batch {
        assert_eq!(actions.len(), seq, "action sequence length mismatch");
        let t = rng.gen_range(1..=t_max);
        let abar = planner.schedule.alpha_bars[t - 1];
        let eps: Vec<f64> = (0..seq).map(|_| rng.sample(StandardNormal)).collect();
        let noisy: Vec<f64> = actions
            .iter()
            .zip(eps.iter())
            .map(|(&a, &e)| abar.sqrt() * a + (1.0 - abar).sqrt() * e)
            .collect();
        let input = tape.constant(&planner.denoiser_input(state, &noisy, t));
        let pred = tape.mlp_forward(net, input);
        let target = tape.constant(&eps);
        let diff = tape.sub(pred, target);
        per_sample.push(tape.mean_square(diff));
    }
    let loss = tape.mean(&per_sample);
    let loss_val = tape.value(loss)[0];
    if !loss_val.is_finite() {
        return Err(HabiError::training("denoiser", format!("non-finite loss {loss_val}")));
    }
    let grads = tape.backward(loss)?;
    adam_update(&mut planner.denoiser, grads.net(net), opt, lr, "denoiser")?;
    Ok(loss_val)
}

/// Ancestral reverse diffusion: `n` independent rollouts from pure noise,
/// conditioned on `state`. Deterministic given the rng stream.
pub fn ddpm_sample(
    planner: &TeacherPlanner,
    state: &[f64],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<TrajectoryPlan> {
    assert!(n >= 1);
    assert_eq!(state.len(), planner.state_dim, "state dimension mismatch");
    let seq = planner.seq_dim();
    let t_max = planner.schedule.len();
    let mut x = Array2::from_shape_fn((n, seq), |_| rng.sample(StandardNormal));
    let in_dim = planner.denoiser.in_dim();

    for t in (1..=t_max).rev() {
        let ti = t - 1;
        let beta = planner.schedule.betas[ti];
        let alpha = planner.schedule.alphas[ti];
        let abar = planner.schedule.alpha_bars[ti];
        let emb = timestep_embedding(t, TIME_EMBED_DIM);
        let mut input = Array2::zeros((n, in_dim));
        for i in 0..n {
            for (j, &s) in state.iter().enumerate() {
                input[[i, j]] = s;
            }
            for j in 0..seq {
                input[[i, planner.state_dim + j]] = x[[i, j]];
            }
            for (j, &e) in emb.iter().enumerate() {
                input[[i, planner.state_dim + seq + j]] = e;
            }
        }
        let eps_hat = planner.denoiser.forward_batch(&input);
        let coef = beta / (1.0 - abar).sqrt();
        let inv_sqrt_alpha = 1.0 / alpha.sqrt();
        let sigma = if t > 1 {
            let abar_prev = planner.schedule.alpha_bars[ti - 1];
            ((1.0 - abar_prev) / (1.0 - abar) * beta).sqrt()
        } else {
            0.0
        };
        for i in 0..n {
            for j in 0..seq {
                let mut v = inv_sqrt_alpha * (x[[i, j]] - coef * eps_hat[[i, j]]);
                if sigma > 0.0 {
                    let z: f64 = rng.sample(StandardNormal);
                    v += sigma * z;
                }
                x[[i, j]] = v;
            }
        }
    }

    let bound = planner.action_bound;
    (0..n)
        .map(|i| {
            let actions = Array2::from_shape_fn((planner.horizon, planner.action_dim), |(h, a)| {
                x[[i, h * planner.action_dim + a]].clamp(-bound, bound)
            });
            TrajectoryPlan { actions, state: state.to_vec() }
        })
        .collect()
}

/// Regresses Q(s, a) onto observed discounted returns-to-go.
pub fn train_value(
    value_net: &mut MlpParams,
    opt: &mut AdamState,
    data: &[(Vec<f64>, Vec<f64>, f64)],
    steps: usize,
    batch_size: usize,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(HabiError::Usage("cannot train the value network on an empty dataset".into()));
    }
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut tape = Tape::new();
        let net = tape.register_net(value_net);
        let mut per_sample = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let (s, a, rtg) = &data[rng.gen_range(0..data.len())];
            let mut input = Vec::with_capacity(s.len() + a.len());
            input.extend_from_slice(s);
            input.extend_from_slice(a);
            let x = tape.constant(&input);
            let pred = tape.mlp_forward(net, x);
            let target = tape.constant(&[*rtg]);
            let diff = tape.sub(pred, target);
            per_sample.push(tape.mean_square(diff));
        }
        let loss = tape.mean(&per_sample);
        let loss_val = tape.value(loss)[0];
        if !loss_val.is_finite() {
            return Err(HabiError::training("value", format!("non-finite loss {loss_val}")));
        }
        let grads = tape.backward(loss)?;
        adam_update(value_net, grads.net(net), opt, lr, "value")?;
        losses.push(loss_val);
    }
    Ok(losses)
}

/// Argmax with ties broken by the lowest index.
pub fn argmax_tie_low(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Samples `n` candidate plans, scores their first actions with the value
/// network, and returns all candidates plus the index of the best one.
pub fn plan(
    planner: &TeacherPlanner,
    state: &[f64],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<Candidate>, usize) {
    assert!(n >= 1);
    let plans = ddpm_sample(planner, state, n, rng);
    let candidates: Vec<Candidate> = plans
        .iter()
        .map(|p| {
            let action = p.first_action();
            let q = planner.q_value(state, &action);
            Candidate { action, q }
        })
        .collect();
    let scores: Vec<f64> = candidates.iter().map(|c| c.q).collect();
    (candidates, argmax_tie_low(&scores))
}
