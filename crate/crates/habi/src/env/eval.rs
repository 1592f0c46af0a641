//! Episode rollout evaluation: mean return with standard error, success
//! rate, and an expert/random-anchored normalized score.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::make_env;
use crate::error::{HabiError, Result};

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub episodes: usize,
    pub returns: Vec<f64>,
    pub mean_return: f64,
    pub stderr: f64,
    pub success_rate: f64,
    pub normalized_score: f64,
}

/// Per-environment return anchors measured from the scripted controllers in
/// this repository (noise-free expert vs uniform random actions). Used for
/// `normalized = 100 * (mean - random) / (expert - random)`.
fn score_anchors(env_name: &str) -> (f64, f64) {
    match env_name {
        // (random_return, expert_return) for undiscounted episode return.
        "umaze" | "medium" | "large" => (0.02, 1.0),
        "reach" => (0.05, 1.0),
        "reach-dense" => (20.0, 55.0),
        _ => (0.0, 1.0),
    }
}

/// Rolls `episodes` episodes of `preset` under `act`, which maps
/// (state, episode, step) to an action. Episode e uses the ChaCha8 stream
/// derived from (seed, e), so results are independent of threading and call
/// order. The episode/step indices let stochastic policies draw fresh
/// randomness each decision; keying randomness on the state alone turns any
/// self-reproducing state (e.g. pinned against a wall at the velocity clamp)
/// into an absorbing loop where the same bad action repeats forever.
pub fn evaluate_policy<F>(
    preset: &str,
    episodes: usize,
    seed: u64,
    threads: usize,
    act: F,
) -> Result<EvalReport>
where
    F: Fn(&[f64], usize, usize) -> Result<Vec<f64>> + Sync,
{
    if episodes == 0 {
        return Err(HabiError::Usage("need at least one evaluation episode".into()));
    }
    let threads = threads.max(1).min(episodes);
    let act = &act;

    let run_episode = move |ep: usize| -> Result<(f64, bool)> {
        let mut env = make_env(preset)?;
        let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, &format!("eval-{ep}")));
        let mut state = env.reset(&mut rng);
        let mut total = 0.0;
        let mut success = false;
        let mut step = 0usize;
        loop {
            let action = act(&state, ep, step)
                .map_err(|e| HabiError::training("eval", format!("episode {ep}: {e}")))?;
            step += 1;
            let (next, reward, done) = env.step(&action);
            total += reward;
            if reward > 0.0 {
                success = true;
            }
            state = next;
            if done {
                break;
            }
        }
        Ok((total, success))
    };

    // Deterministic fan-out: each thread owns a disjoint episode range and the
    // results are merged back in episode order.
    let mut results: Vec<Option<Result<(f64, bool)>>> = (0..episodes).map(|_| None).collect();
    if threads == 1 {
        for (ep, slot) in results.iter_mut().enumerate() {
            *slot = Some(run_episode(ep));
        }
    } else {
        let chunk = episodes.div_ceil(threads);
        std::thread::scope(|scope| {
            let mut rest: &mut [Option<Result<(f64, bool)>>] = &mut results;
            let mut offset = 0;
            while !rest.is_empty() {
                let take = chunk.min(rest.len());
                let (head, tail) = rest.split_at_mut(take);
                let start = offset;
                scope.spawn(move || {
                    for (i, slot) in head.iter_mut().enumerate() {
                        *slot = Some(run_episode(start + i));
                    }
                });
                rest = tail;
                offset += take;
            }
        });
    }

    let mut returns = Vec::with_capacity(episodes);
    let mut successes = 0usize;
    for slot in results {
        let (ret, success) = slot.expect("all episodes filled")?;
        returns.push(ret);
        if success {
            successes += 1;
        }
    }

    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let stderr = (var / n).sqrt();
    let (random_ret, expert_ret) = score_anchors(preset);
    let normalized_score = 100.0 * (mean - random_ret) / (expert_ret - random_ret);

    Ok(EvalReport {
        episodes,
        returns,
        mean_return: mean,
        stderr,
        success_rate: successes as f64 / n,
        normalized_score,
    })
}

/// Writes one CSV row per action component per decision for offline
/// inspection of the action distribution a policy produces.
pub fn dump_action_distribution<F>(
    preset: &str,
    episodes: usize,
    seed: u64,
    path: &Path,
    act: F,
) -> Result<()>
where
    F: Fn(&[f64], usize, usize) -> Result<Vec<f64>>,
{
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "episode,step,dim,action")?;
    for ep in 0..episodes {
        let mut env = make_env(preset)?;
        let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, &format!("eval-{ep}")));
        let mut state = env.reset(&mut rng);
        let mut step = 0usize;
        loop {
            let action = act(&state, ep, step)?;
            for (d, a) in action.iter().enumerate() {
                writeln!(w, "{ep},{step},{d},{a}")?;
            }
            let (next, _, done) = env.step(&action);
            state = next;
            step += 1;
            if done {
                break;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Env;

    fn expert_act(preset: &str) -> impl Fn(&[f64], usize, usize) -> Result<Vec<f64>> + Sync {
        // A fresh stateless expert per call keeps the closure Sync; the maze
        // expert replans waypoints from the current position each reset.
        let preset = preset.to_string();
        move |state: &[f64], _ep: usize, _step: usize| {
            let env = make_env(&preset)?;
            let mut expert = env.make_expert();
            expert.reset();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            Ok(expert.act(state, 0.0, &mut rng))
        }
    }

    #[test]
    fn expert_scores_near_100_on_reach() {
        let report = evaluate_policy("reach", 10, 7, 1, expert_act("reach")).unwrap();
        assert!(report.success_rate == 1.0);
        assert!(report.normalized_score > 90.0);
    }

    #[test]
    fn threaded_matches_single_threaded() {
        let a = evaluate_policy("reach", 12, 3, 1, expert_act("reach")).unwrap();
        let b = evaluate_policy("reach", 12, 3, 4, expert_act("reach")).unwrap();
        assert_eq!(a.returns, b.returns);
        assert_eq!(a.mean_return, b.mean_return);
    }

    #[test]
    fn policy_error_names_episode() {
        let err = evaluate_policy("reach", 3, 1, 1, |_s: &[f64], _ep, _step| {
            Err(crate::error::HabiError::Numerical("bad action".into()))
        })
        .unwrap_err();
        assert!(err.to_string().contains("episode 0"));
    }

    #[test]
    fn zero_episodes_is_usage_error() {
        let err = evaluate_policy("reach", 0, 1, 1, expert_act("reach")).unwrap_err();
        assert!(matches!(err, HabiError::Usage(_)));
    }

    #[test]
    fn action_dump_has_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("actions.csv");
        dump_action_distribution("reach", 2, 5, &path, expert_act("reach")).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "episode,step,dim,action");
        assert!(lines.count() > 2);
    }
}
