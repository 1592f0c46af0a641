//! Desk-scale continuous-control testbeds and offline data: a 2-D point-mass
//! maze, a 1-D reach task for fast tests, scripted behavior policies, and
//! episode evaluation with in-repo normalization anchors.

pub mod dataset;
pub mod eval;
pub mod maze;
pub mod reach;

use rand_chacha::ChaCha8Rng;

use crate::error::{HabiError, Result};

pub trait Env: Send {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn max_steps(&self) -> usize;
    fn gamma(&self) -> f64;
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64>;
    /// Reset to a random admissible state for offline data collection, so
    /// the dataset covers the whole workspace; evaluation keeps the
    /// canonical `reset`. Defaults to the canonical reset.
    fn reset_random(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.reset(rng)
    }
    /// Returns (next_state, reward, done). Actions are clamped to [-1, 1]
    /// per dimension at this boundary.
    fn step(&mut self, action: &[f64]) -> (Vec<f64>, f64, bool);
    /// Scripted expert controller for this environment; stateful per episode.
    fn make_expert(&self) -> Box<dyn Expert>;
}

pub trait Expert: Send {
    fn reset(&mut self);
    /// `noise_sigma` is the per-component Gaussian action noise; 0 gives the
    /// deterministic expert used as the normalization anchor.
    fn act(&mut self, state: &[f64], noise_sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64>;
}

pub fn make_env(preset: &str) -> Result<Box<dyn Env>> {
    match preset {
        "umaze" | "medium" | "large" => Ok(Box::new(maze::PointMazeEnv::preset(preset)?)),
        "reach" => Ok(Box::new(reach::ReachEnv::new(false))),
        "reach-dense" => Ok(Box::new(reach::ReachEnv::new(true))),
        other => Err(HabiError::Config(format!(
            "unknown environment preset '{other}' (expected umaze, medium, large, reach, reach-dense)"
        ))),
    }
}

pub(crate) fn clamp_action(action: &[f64]) -> Vec<f64> {
    action.iter().map(|&a| a.clamp(-1.0, 1.0)).collect()
}
