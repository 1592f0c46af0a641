//! 1-D reach task for fast unit tests: slide a point along [-1, 1] to a
//! fixed goal. Sparse 0/1 reward by default, dense variant via config.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::env::{clamp_action, Env, Expert};

#[derive(Clone, Debug)]
pub struct ReachEnv {
    pub goal: f64,
    pub goal_radius: f64,
    pub dt: f64,
    pub max_steps: usize,
    pub gamma: f64,
    pub dense_reward: bool,
    pos: f64,
    steps: usize,
}

impl ReachEnv {
    pub fn new(dense_reward: bool) -> Self {
        ReachEnv {
            goal: 0.6,
            goal_radius: 0.05,
            dt: 0.1,
            max_steps: 60,
            gamma: 0.99,
            dense_reward,
            pos: -0.5,
            steps: 0,
        }
    }
}

impl Env for ReachEnv {
    fn name(&self) -> &str {
        if self.dense_reward {
            "reach-dense"
        } else {
            "reach"
        }
    }

    fn state_dim(&self) -> usize {
        1
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn max_steps(&self) -> usize {
        self.max_steps
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.pos = -0.5 + rng.gen_range(-0.1..0.1);
        self.steps = 0;
        vec![self.pos]
    }

    fn step(&mut self, action: &[f64]) -> (Vec<f64>, f64, bool) {
        let a = clamp_action(action);
        self.pos = (self.pos + a[0] * self.dt).clamp(-1.0, 1.0);
        self.steps += 1;
        let at_goal = (self.pos - self.goal).abs() < self.goal_radius;
        let reward = if self.dense_reward {
            1.0 - (self.pos - self.goal).abs()
        } else if at_goal {
            1.0
        } else {
            0.0
        };
        let done = at_goal || self.steps >= self.max_steps;
        (vec![self.pos], reward, done)
    }

    fn make_expert(&self) -> Box<dyn Expert> {
        Box::new(ReachExpert { goal: self.goal })
    }
}

pub struct ReachExpert {
    goal: f64,
}

impl Expert for ReachExpert {
    fn reset(&mut self) {}

    fn act(&mut self, state: &[f64], noise_sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut a = 5.0 * (self.goal - state[0]);
        if noise_sigma > 0.0 {
            a += noise_sigma * rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        vec![a.clamp(-1.0, 1.0)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn expert_reaches_goal() {
        let mut env = ReachEnv::new(false);
        let mut expert = env.make_expert();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = env.reset(&mut rng);
        let mut total = 0.0;
        for _ in 0..env.max_steps {
            let a = expert.act(&s, 0.0, &mut rng);
            let (ns, r, done) = env.step(&a);
            s = ns;
            total += r;
            if done {
                break;
            }
        }
        assert_eq!(total, 1.0);
    }

    #[test]
    fn dense_variant_rewards_progress_toward_goal() {
        let mut env = ReachEnv::new(true);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        env.reset(&mut rng);
        let (_, r0, _) = env.step(&[0.0]);
        let (_, r1, _) = env.step(&[1.0]);
        let (_, r2, _) = env.step(&[1.0]);
        assert!(r1 > r0 && r2 > r1, "{r0} {r1} {r2}");
        assert!(r2 < 1.0);
    }
}
