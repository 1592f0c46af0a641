//! Habitization: distilling a slow sampling-based planner into a fast
//! habitual policy.
//!
//! The crate trains a conditional diffusion planner with a learned value
//! function on small offline control tasks, then compresses it into a
//! prior-encoder → decoder → critic policy via a reconstruction + adaptive
//! β·KL objective. The habitual policy answers in a handful of tiny MLP
//! forward passes, which is what the benchmark and report stages quantify
//! against the planner.
//!
//! Layout:
//! - [`nn`] — dense networks, reverse-mode tape, Adam, finite differences,
//!   f32 inference nets, checkpoint serialization.
//! - [`latent`] / [`elbo`] — diagonal-Gaussian machinery, KL, the adaptive
//!   KL-weight controller, and an ELBO lower-bound self-check.
//! - [`teacher`] — the diffusion planner and value network.
//! - [`habit`] — habitization training and the direct-distillation baseline.
//! - [`infer`] — the fast habitual-inference path.
//! - [`env`] — toy environments, offline datasets, policy evaluation.
//! - [`bench`] / [`report`] / [`pipeline`] / [`config`] — benchmarking and
//!   experiment orchestration behind the `habi` binary.

pub mod bench;
pub mod config;
pub mod elbo;
pub mod env;
pub mod error;
pub mod habit;
pub mod infer;
pub mod latent;
pub mod nn;
pub mod pipeline;
pub mod report;
pub mod teacher;

pub use error::{HabiError, Result};

/// Derives an independent stream seed from a base seed and a purpose tag.
/// Deterministic within a build; used everywhere a component needs its own
/// rng stream (episodes, training steps, worker threads).
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    use std::hash::{Hash, Hasher};
    let mut hasher = std::collections::hash_map::DefaultHasher::new();
    seed.hash(&mut hasher);
    tag.hash(&mut hasher);
    hasher.finish()
}
