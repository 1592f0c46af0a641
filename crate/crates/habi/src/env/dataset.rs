//! Offline datasets: scripted behavior rollouts with per-transition
//! discounted returns-to-go, plus the packed binary file format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::env::make_env;
use crate::error::{HabiError, Result};

/// Gaussian action noise applied to the scripted expert.
pub const EXPERT_NOISE_SIGMA: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Behavior {
    NoisyExpert,
    Random,
    Mixed,
}

impl Behavior {
    pub fn as_str(self) -> &'static str {
        match self {
            Behavior::NoisyExpert => "noisy-expert",
            Behavior::Random => "random",
            Behavior::Mixed => "mixed",
        }
    }
}

impl FromStr for Behavior {
    type Err = HabiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noisy-expert" => Ok(Behavior::NoisyExpert),
            "random" => Ok(Behavior::Random),
            "mixed" => Ok(Behavior::Mixed),
            other => Err(HabiError::Config(format!("unknown behavior policy '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
    pub return_to_go: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OfflineDataset {
    pub transitions: Vec<Transition>,
    /// Index of the first transition of each episode.
    pub episode_starts: Vec<usize>,
    pub env_name: String,
    pub behavior: String,
    pub seed: u64,
    pub gamma: f64,
}

impl OfflineDataset {
    pub fn state_dim(&self) -> usize {
        self.transitions[0].state.len()
    }

    pub fn action_dim(&self) -> usize {
        self.transitions[0].action.len()
    }

    /// (state, action, return-to-go) triples for value regression.
    pub fn value_triples(&self) -> Vec<(Vec<f64>, Vec<f64>, f64)> {
        self.transitions
            .iter()
            .map(|t| (t.state.clone(), t.action.clone(), t.return_to_go))
            .collect()
    }

    /// Horizon-H action windows per state, padded by repeating the last
    /// action at episode ends.
    pub fn horizon_windows(&self, horizon: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut out = Vec::with_capacity(self.transitions.len());
        let bounds: Vec<(usize, usize)> = self
            .episode_starts
            .iter()
            .enumerate()
            .map(|(e, &s)| {
                let end = self.episode_starts.get(e + 1).copied().unwrap_or(self.transitions.len());
                (s, end)
            })
            .collect();
        for &(start, end) in &bounds {
            for i in start..end {
                let mut seq = Vec::with_capacity(horizon * self.action_dim());
                for h in 0..horizon {
                    let j = (i + h).min(end - 1);
                    seq.extend_from_slice(&self.transitions[j].action);
                }
                out.push((self.transitions[i].state.clone(), seq));
            }
        }
        out
    }
}

/// Rolls scripted behavior episodes and fills in discounted returns-to-go.
pub fn generate_offline_dataset(
    preset: &str,
    behavior: Behavior,
    n_episodes: usize,
    seed: u64,
) -> Result<OfflineDataset> {
    if n_episodes == 0 {
        return Err(HabiError::Usage("need at least one episode".into()));
    }
    let mut env = make_env(preset)?;
    let gamma = env.gamma();
    let mut expert = env.make_expert();
    let mut transitions = Vec::new();
    let mut episode_starts = Vec::new();

    for ep in 0..n_episodes {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, &format!("episode-{ep}")));
        let use_random = match behavior {
            Behavior::Random => true,
            Behavior::NoisyExpert => false,
            Behavior::Mixed => ep % 2 == 1,
        };
        let mut state = env.reset_random(&mut rng);
        expert.reset();
        episode_starts.push(transitions.len());
        let ep_start = transitions.len();
        loop {
            let action = if use_random {
                (0..env.action_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect()
            } else {
                expert.act(&state, EXPERT_NOISE_SIGMA, &mut rng)
            };
            let (next_state, reward, done) = env.step(&action);
            transitions.push(Transition {
                state: state.clone(),
                action,
                reward,
                next_state: next_state.clone(),
                done,
                return_to_go: 0.0,
            });
            state = next_state;
            if done {
                break;
            }
        }
        // Backward recursion: R_t = r_t + gamma * R_{t+1}.
        let mut acc = 0.0;
        for t in (ep_start..transitions.len()).rev() {
            acc = transitions[t].reward + gamma * acc;
            transitions[t].return_to_go = acc;
        }
    }

    Ok(OfflineDataset {
        transitions,
        episode_starts,
        env_name: preset.to_string(),
        behavior: behavior.as_str().to_string(),
        seed,
        gamma,
    })
}

// ── Binary file format ───────────────────────────────────────────────
//
// magic "HABI", version u32, then UTF-8 env name and behavior descriptor
// (u32 length prefix each), seed u64, gamma f64, n_transitions u32,
// n_episodes u32, state_dim u32, action_dim u32, episode starts (u32 each),
// then per transition: state, action, reward, next_state (f32 LE each),
// done u8, return_to_go f32.

const MAGIC: &[u8; 4] = b"HABI";
const VERSION: u32 = 1;

fn w_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn w_str(w: &mut impl Write, s: &str) -> Result<()> {
    w_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn w_f32s(w: &mut impl Write, vs: &[f64]) -> Result<()> {
    for &v in vs {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

fn r_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| HabiError::Checkpoint(format!("truncated dataset: {e}")))
}

fn r_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn r_str(r: &mut impl Read) -> Result<String> {
    let n = r_u32(r)? as usize;
    if n > 4096 {
        return Err(HabiError::Checkpoint("implausible string length".into()));
    }
    let mut b = vec![0u8; n];
    r_exact(r, &mut b)?;
    String::from_utf8(b).map_err(|_| HabiError::Checkpoint("dataset string is not UTF-8".into()))
}

fn r_f32s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 4];
    for _ in 0..n {
        r_exact(r, &mut b)?;
        out.push(f32::from_le_bytes(b) as f64);
    }
    Ok(out)
}

pub fn save_dataset(ds: &OfflineDataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w_u32(&mut w, VERSION)?;
    w_str(&mut w, &ds.env_name)?;
    w_str(&mut w, &ds.behavior)?;
    w.write_all(&ds.seed.to_le_bytes())?;
    w.write_all(&ds.gamma.to_le_bytes())?;
    w_u32(&mut w, ds.transitions.len() as u32)?;
    w_u32(&mut w, ds.episode_starts.len() as u32)?;
    w_u32(&mut w, ds.state_dim() as u32)?;
    w_u32(&mut w, ds.action_dim() as u32)?;
    for &s in &ds.episode_starts {
        w_u32(&mut w, s as u32)?;
    }
    for t in &ds.transitions {
        w_f32s(&mut w, &t.state)?;
        w_f32s(&mut w, &t.action)?;
        w.write_all(&(t.reward as f32).to_le_bytes())?;
        w_f32s(&mut w, &t.next_state)?;
        w.write_all(&[t.done as u8])?;
        w.write_all(&(t.return_to_go as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<OfflineDataset> {
    let mut r = BufReader::new(File::open(path).map_err(|e| {
        HabiError::Usage(format!("missing dataset {}: {e}", path.display()))
    })?);
    let mut magic = [0u8; 4];
    r_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(HabiError::Checkpoint("bad dataset magic".into()));
    }
    let version = r_u32(&mut r)?;
    if version != VERSION {
        return Err(HabiError::Checkpoint(format!("unsupported dataset version {version}")));
    }
    let env_name = r_str(&mut r)?;
    let behavior = r_str(&mut r)?;
    let mut b8 = [0u8; 8];
    r_exact(&mut r, &mut b8)?;
    let seed = u64::from_le_bytes(b8);
    r_exact(&mut r, &mut b8)?;
    let gamma = f64::from_le_bytes(b8);
    let n_transitions = r_u32(&mut r)? as usize;
    let n_episodes = r_u32(&mut r)? as usize;
    let state_dim = r_u32(&mut r)? as usize;
    let action_dim = r_u32(&mut r)? as usize;
    let mut episode_starts = Vec::with_capacity(n_episodes);
    for _ in 0..n_episodes {
        episode_starts.push(r_u32(&mut r)? as usize);
    }
    let mut transitions = Vec::with_capacity(n_transitions);
    for _ in 0..n_transitions {
        let state = r_f32s(&mut r, state_dim)?;
        let action = r_f32s(&mut r, action_dim)?;
        let mut b4 = [0u8; 4];
        r_exact(&mut r, &mut b4)?;
        let reward = f32::from_le_bytes(b4) as f64;
        let next_state = r_f32s(&mut r, state_dim)?;
        let mut b1 = [0u8; 1];
        r_exact(&mut r, &mut b1)?;
        r_exact(&mut r, &mut b4)?;
        transitions.push(Transition {
            state,
            action,
            reward,
            next_state,
            done: b1[0] != 0,
            return_to_go: f32::from_le_bytes(b4) as f64,
        });
    }
    Ok(OfflineDataset { transitions, episode_starts, env_name, behavior, seed, gamma })
}
