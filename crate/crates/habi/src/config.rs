//! Run configuration: a flat `section.key = value` text format with strict
//! parsing (unknown keys rejected, ranges validated) and a lossless
//! serialize/parse round trip. Command-line `--set key=value` overrides go
//! through the same validated path.

use std::path::Path;
use std::str::FromStr;

use crate::error::{HabiError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    // [run]
    pub seeds: Vec<u64>,
    pub threads: usize,
    // [env]
    pub env_preset: String,
    pub n_episodes_data: usize,
    pub behavior: String,
    // [planner]
    pub t_steps: usize,
    pub horizon: usize,
    pub planner_hidden: usize,
    pub planner_train_steps: usize,
    pub planner_batch_size: usize,
    pub n_candidates_train: usize,
    pub planner_lr: f64,
    pub value_train_steps: usize,
    // [habi]
    pub d_z: usize,
    pub habi_hidden: usize,
    pub habi_lr: f64,
    pub habi_steps: usize,
    pub habi_batch_size: usize,
    pub target_kl: f64,
    pub lr_beta: f64,
    pub teacher_states: usize,
    pub checkpoint_every: usize,
    pub log_every: usize,
    pub recon_squared: bool,
    pub distill_steps: usize,
    // [inference]
    pub n_candidates_infer: Vec<usize>,
    // [eval]
    pub eval_episodes: usize,
    // [bench]
    pub bench_reps: usize,
    pub bench_warmup: usize,
    pub bench_teacher_n: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seeds: vec![0, 1, 2],
            threads: 4,
            env_preset: "medium".into(),
            n_episodes_data: 200,
            behavior: "noisy-expert".into(),
            t_steps: 20,
            horizon: 4,
            planner_hidden: 128,
            planner_train_steps: 20_000,
            planner_batch_size: 256,
            n_candidates_train: 50,
            planner_lr: 3e-4,
            value_train_steps: 10_000,
            d_z: 64,
            habi_hidden: 128,
            habi_lr: 3e-4,
            habi_steps: 100_000,
            habi_batch_size: 256,
            target_kl: 1.0,
            lr_beta: 0.01,
            teacher_states: 4_000,
            checkpoint_every: 5_000,
            log_every: 100,
            recon_squared: false,
            distill_steps: 20_000,
            n_candidates_infer: vec![1, 5],
            eval_episodes: 100,
            bench_reps: 1_000,
            bench_warmup: 100,
            bench_teacher_n: 50,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| HabiError::Config(format!("invalid value '{value}' for {key}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn fmt_list<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "run.seeds" => self.seeds = parse_list(key, value)?,
            "run.threads" => self.threads = parse_num(key, value)?,
            "env.preset" => self.env_preset = value.to_string(),
            "env.n_episodes_data" => self.n_episodes_data = parse_num(key, value)?,
            "env.behavior" => self.behavior = value.to_string(),
            "planner.t_steps" => self.t_steps = parse_num(key, value)?,
            "planner.horizon" => self.horizon = parse_num(key, value)?,
            "planner.hidden" => self.planner_hidden = parse_num(key, value)?,
            "planner.train_steps" => self.planner_train_steps = parse_num(key, value)?,
            "planner.batch_size" => self.planner_batch_size = parse_num(key, value)?,
            "planner.n_candidates_train" => self.n_candidates_train = parse_num(key, value)?,
            "planner.lr" => self.planner_lr = parse_num(key, value)?,
            "planner.value_train_steps" => self.value_train_steps = parse_num(key, value)?,
            "habi.d_z" => self.d_z = parse_num(key, value)?,
            "habi.hidden" => self.habi_hidden = parse_num(key, value)?,
            "habi.lr" => self.habi_lr = parse_num(key, value)?,
            "habi.steps" => self.habi_steps = parse_num(key, value)?,
            "habi.batch_size" => self.habi_batch_size = parse_num(key, value)?,
            "habi.target_kl" => self.target_kl = parse_num(key, value)?,
            "habi.lr_beta" => self.lr_beta = parse_num(key, value)?,
            "habi.teacher_states" => self.teacher_states = parse_num(key, value)?,
            "habi.checkpoint_every" => self.checkpoint_every = parse_num(key, value)?,
            "habi.log_every" => self.log_every = parse_num(key, value)?,
            "habi.recon_squared" => self.recon_squared = parse_num(key, value)?,
            "habi.distill_steps" => self.distill_steps = parse_num(key, value)?,
            "inference.n_candidates" => self.n_candidates_infer = parse_list(key, value)?,
            "eval.episodes" => self.eval_episodes = parse_num(key, value)?,
            "bench.reps" => self.bench_reps = parse_num(key, value)?,
            "bench.warmup" => self.bench_warmup = parse_num(key, value)?,
            "bench.teacher_n" => self.bench_teacher_n = parse_num(key, value)?,
            other => return Err(HabiError::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    pub fn serialize(&self) -> String {
        let c = self;
        format!(
            "run.seeds = {}\n\
             run.threads = {}\n\
             env.preset = {}\n\
             env.n_episodes_data = {}\n\
             env.behavior = {}\n\
             planner.t_steps = {}\n\
             planner.horizon = {}\n\
             planner.hidden = {}\n\
             planner.train_steps = {}\n\
             planner.batch_size = {}\n\
             planner.n_candidates_train = {}\n\
             planner.lr = {}\n\
             planner.value_train_steps = {}\n\
             habi.d_z = {}\n\
             habi.hidden = {}\n\
             habi.lr = {}\n\
             habi.steps = {}\n\
             habi.batch_size = {}\n\
             habi.target_kl = {}\n\
             habi.lr_beta = {}\n\
             habi.teacher_states = {}\n\
             habi.checkpoint_every = {}\n\
             habi.log_every = {}\n\
             habi.recon_squared = {}\n\
             habi.distill_steps = {}\n\
             inference.n_candidates = {}\n\
             eval.episodes = {}\n\
             bench.reps = {}\n\
             bench.warmup = {}\n\
             bench.teacher_n = {}\n",
            fmt_list(&c.seeds),
            c.threads,
            c.env_preset,
            c.n_episodes_data,
            c.behavior,
            c.t_steps,
            c.horizon,
            c.planner_hidden,
            c.planner_train_steps,
            c.planner_batch_size,
            c.n_candidates_train,
            c.planner_lr,
            c.value_train_steps,
            c.d_z,
            c.habi_hidden,
            c.habi_lr,
            c.habi_steps,
            c.habi_batch_size,
            c.target_kl,
            c.lr_beta,
            c.teacher_states,
            c.checkpoint_every,
            c.log_every,
            c.recon_squared,
            c.distill_steps,
            fmt_list(&c.n_candidates_infer),
            c.eval_episodes,
            c.bench_reps,
            c.bench_warmup,
            c.bench_teacher_n,
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut config = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                HabiError::Config(format!("line {}: expected 'key = value', got '{line}'", lineno + 1))
            })?;
            config.set(key.trim(), value.trim())?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HabiError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("run.threads", self.threads),
            ("env.n_episodes_data", self.n_episodes_data),
            ("planner.t_steps", self.t_steps),
            ("planner.horizon", self.horizon),
            ("planner.hidden", self.planner_hidden),
            ("planner.batch_size", self.planner_batch_size),
            ("planner.n_candidates_train", self.n_candidates_train),
            ("habi.d_z", self.d_z),
            ("habi.hidden", self.habi_hidden),
            ("habi.batch_size", self.habi_batch_size),
            ("habi.teacher_states", self.teacher_states),
            ("habi.checkpoint_every", self.checkpoint_every),
            ("habi.log_every", self.log_every),
            ("eval.episodes", self.eval_episodes),
            ("bench.teacher_n", self.bench_teacher_n),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(HabiError::Config(format!("{key} must be positive")));
            }
        }
        if self.seeds.is_empty() {
            return Err(HabiError::Config("run.seeds must name at least one seed".into()));
        }
        if self.n_candidates_infer.is_empty() || self.n_candidates_infer.contains(&0) {
            return Err(HabiError::Config("inference.n_candidates must be positive integers".into()));
        }
        for (key, v) in [
            ("planner.lr", self.planner_lr),
            ("habi.lr", self.habi_lr),
            ("habi.target_kl", self.target_kl),
            ("habi.lr_beta", self.lr_beta),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(HabiError::Config(format!("{key} must be a positive number")));
            }
        }
        crate::env::make_env(&self.env_preset).map(|_| ())?;
        self.behavior.parse::<crate::env::dataset::Behavior>().map(|_| ())?;
        Ok(())
    }

    /// Applies a list of `key=value` override strings.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for item in overrides {
            let (key, value) = item.split_once('=').ok_or_else(|| {
                HabiError::Usage(format!("--set expects key=value, got '{item}'"))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        self.validate()
    }
}
