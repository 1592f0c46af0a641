//! Experiment orchestration: the gen-data → train-planner → habitize →
//! eval → bench → report pipeline over a run directory, plus a small
//! end-to-end demo configuration.
//!
//! Each stage writes into its own subdirectory of the run directory. Stage
//! directories get an incrementing numeric suffix (`eval`, `eval-2`, ...)
//! so reruns never overwrite earlier results; readers use the latest one.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bench::{append_bench_row, measure_frequency};
use crate::config::RunConfig;
use crate::env::dataset::{generate_offline_dataset, load_dataset, save_dataset, Behavior};
use crate::env::eval::evaluate_policy;
use crate::env::make_env;
use crate::error::{HabiError, Result};
use crate::habit::{
    generate_teacher_dataset, run_habitization, save_teacher_dataset, train_direct_distill,
    HabiModel, HabitizeOptions,
};
use crate::infer::HiScratch;
use crate::nn::adam::AdamState;
use crate::nn::checkpoint;
use crate::nn::fast::FastMlp;
use crate::nn::MlpParams;
use crate::teacher::{ddpm_train_step, plan, train_value, NoiseSchedule, TeacherPlanner};

/// Allocates the next `name` / `name-2` / `name-3` ... directory.
pub fn next_stage_dir(run_dir: &Path, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(run_dir)?;
    for i in 1..10_000 {
        let candidate = if i == 1 {
            run_dir.join(name)
        } else {
            run_dir.join(format!("{name}-{i}"))
        };
        if !candidate.exists() {
            std::fs::create_dir(&candidate)?;
            return Ok(candidate);
        }
    }
    Err(HabiError::Usage(format!("too many '{name}' stage directories in {}", run_dir.display())))
}

/// Highest-numbered existing stage directory, if any.
pub fn latest_stage_dir(run_dir: &Path, name: &str) -> Option<PathBuf> {
    let mut best: Option<PathBuf> = None;
    for i in 1..10_000 {
        let candidate = if i == 1 {
            run_dir.join(name)
        } else {
            run_dir.join(format!("{name}-{i}"))
        };
        if candidate.is_dir() {
            best = Some(candidate);
        } else if i > 1 {
            break;
        }
    }
    best
}

fn require_stage_file(run_dir: &Path, stage: &str, file: &str) -> Result<PathBuf> {
    let dir = latest_stage_dir(run_dir, stage).ok_or_else(|| {
        HabiError::Usage(format!(
            "stage '{stage}' has not been run in {} (missing {file})",
            run_dir.display()
        ))
    })?;
    let path = dir.join(file);
    if !path.exists() {
        return Err(HabiError::Usage(format!("missing prerequisite file {}", path.display())));
    }
    Ok(path)
}

/// Deterministic per-decision seed, so stochastic policies are reproducible
/// and thread-invariant while still drawing fresh randomness every step.
fn decision_seed(seed: u64, episode: usize, step: usize) -> u64 {
    crate::derive_seed(seed, &format!("decision-{episode}-{step}"))
}

pub fn stage_gen_data(config: &RunConfig, run_dir: &Path) -> Result<PathBuf> {
    let behavior: Behavior = config.behavior.parse()?;
    let dataset = generate_offline_dataset(
        &config.env_preset,
        behavior,
        config.n_episodes_data,
        config.seeds[0],
    )?;
    let dir = next_stage_dir(run_dir, "data")?;
    let path = dir.join("dataset.bin");
    save_dataset(&dataset, &path)?;
    eprintln!(
        "gen-data: {} transitions over {} episodes -> {}",
        dataset.transitions.len(),
        dataset.episode_starts.len(),
        path.display()
    );
    Ok(dir)
}

pub fn stage_train_planner(config: &RunConfig, run_dir: &Path) -> Result<PathBuf> {
    let data_path = require_stage_file(run_dir, "data", "dataset.bin")?;
    let dataset = load_dataset(&data_path)?;
    let dir = next_stage_dir(run_dir, "planner")?;
    let seed = config.seeds[0];
    let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, "planner-init"));
    let schedule = NoiseSchedule::linear(config.t_steps, 1e-4, 0.2)?;
    let mut planner = TeacherPlanner::new(
        dataset.state_dim(),
        dataset.action_dim(),
        config.horizon,
        config.planner_hidden,
        schedule,
        config.n_candidates_train,
        &mut rng,
    );

    let windows = dataset.horizon_windows(config.horizon);
    let mut opt = AdamState::new(&planner.denoiser);
    let mut losses = Vec::new();
    let mut train_rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, "planner-train"));
    for step in 0..config.planner_train_steps {
        let batch: Vec<_> = (0..config.planner_batch_size)
            .map(|_| windows[train_rng.gen_range(0..windows.len())].clone())
            .collect();
        let loss = ddpm_train_step(&mut planner, &mut opt, &batch, config.planner_lr, &mut train_rng)?;
        if step % 100 == 0 {
            losses.push((step, loss));
        }
    }

    let triples = dataset.value_triples();
    let mut value_opt = AdamState::new(&planner.value_net);
    let mut value_rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, "value-train"));
    let value_losses = train_value(
        &mut planner.value_net,
        &mut value_opt,
        &triples,
        config.value_train_steps,
        config.planner_batch_size.min(64),
        config.planner_lr,
        &mut value_rng,
    )?;

    let ckpt = dir.join("planner.ckpt");
    planner.save(&ckpt)?;
    let mut curve = String::from("step,denoiser_loss\n");
    for (step, loss) in &losses {
        curve.push_str(&format!("{step},{loss:.6}\n"));
    }
    std::fs::write(dir.join("planner_loss.csv"), curve)?;
    eprintln!(
        "train-planner: final denoiser loss {:.4}, value loss {:.4} -> {}",
        losses.last().map(|l| l.1).unwrap_or(f64::NAN),
        value_losses.last().copied().unwrap_or(f64::NAN),
        ckpt.display()
    );
    Ok(dir)
}

/// Subsamples states from the offline dataset for teacher queries.
fn teacher_query_states(config: &RunConfig, run_dir: &Path, seed: u64) -> Result<Vec<Vec<f64>>> {
    let data_path = require_stage_file(run_dir, "data", "dataset.bin")?;
    let dataset = load_dataset(&data_path)?;
    let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, "teacher-states"));
    Ok((0..config.teacher_states)
        .map(|_| dataset.transitions[rng.gen_range(0..dataset.transitions.len())].state.clone())
        .collect())
}

pub fn stage_habitize(config: &RunConfig, run_dir: &Path) -> Result<PathBuf> {
    let planner_path = require_stage_file(run_dir, "planner", "planner.ckpt")?;
    let planner = TeacherPlanner::load(&planner_path)?;
    let dir = next_stage_dir(run_dir, "habitize")?;

    for &seed in &config.seeds {
        let seed_dir = dir.join(format!("seed_{seed}"));
        std::fs::create_dir_all(&seed_dir)?;
        let states = teacher_query_states(config, run_dir, seed)?;
        let teacher_data = generate_teacher_dataset(&planner, &states, seed, config.threads)?;
        save_teacher_dataset(&teacher_data, &seed_dir.join("teacher.bin"))?;

        let mut init_rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, "habi-init"));
        let mut model = HabiModel::new(
            planner.state_dim,
            planner.action_dim,
            config.d_z,
            config.habi_hidden,
            config.target_kl,
            config.lr_beta,
            &mut init_rng,
        );
        let options = HabitizeOptions {
            steps: config.habi_steps,
            batch_size: config.habi_batch_size,
            lr: config.habi_lr,
            checkpoint_every: config.checkpoint_every,
            log_every: config.log_every,
            recon_squared: config.recon_squared,
        };
        let reports = run_habitization(&mut model, &teacher_data, &options, &seed_dir, seed)?;
        if let Some(last) = reports.last() {
            eprintln!(
                "habitize seed {seed}: recon {:.4}, kl {:.4}, beta {:.4}, critic {:.4}",
                last.recon, last.kl, last.beta, last.critic
            );
        }

        let mut distill_rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, "distill"));
        let distill = train_direct_distill(
            &teacher_data,
            config.habi_hidden,
            config.distill_steps,
            config.habi_batch_size,
            config.habi_lr,
            &mut distill_rng,
        )?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(seed_dir.join("distill.ckpt"))?);
        checkpoint::write_net(&mut w, "distill", &distill)?;
    }
    Ok(dir)
}

fn load_distill(path: &Path) -> Result<MlpParams> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path).map_err(|e| {
        HabiError::Usage(format!("missing distill checkpoint {}: {e}", path.display()))
    })?);
    checkpoint::read_named_net(&mut r, "distill")
}

/// Teacher decision: sample candidate plans, execute the best first action.
fn teacher_act(planner: &TeacherPlanner, state: &[f64], n: usize, rng_seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let (cands, best) = plan(planner, state, n, &mut rng);
    cands[best].action.clone()
}

pub fn stage_eval(config: &RunConfig, run_dir: &Path) -> Result<PathBuf> {
    let planner_path = require_stage_file(run_dir, "planner", "planner.ckpt")?;
    let planner = TeacherPlanner::load(&planner_path)?;
    let habitize_dir = latest_stage_dir(run_dir, "habitize").ok_or_else(|| {
        HabiError::Usage(format!("stage 'habitize' has not been run in {}", run_dir.display()))
    })?;
    let dir = next_stage_dir(run_dir, "eval")?;
    let mut csv = String::from(
        "policy,seed,n_candidates,episodes,mean_return,stderr,success_rate,normalized_score\n",
    );

    let mut record = |policy: &str, seed: u64, n: usize, report: &crate::env::eval::EvalReport| {
        csv.push_str(&format!(
            "{policy},{seed},{n},{},{:.6},{:.6},{:.4},{:.3}\n",
            report.episodes,
            report.mean_return,
            report.stderr,
            report.success_rate,
            report.normalized_score
        ));
    };

    for &seed in &config.seeds {
        let seed_dir = habitize_dir.join(format!("seed_{seed}"));
        let model = HabiModel::load(&seed_dir.join("model_latest.ckpt"))?;

        let teacher_n = config.n_candidates_train;
        let report = evaluate_policy(&config.env_preset, config.eval_episodes, seed, config.threads, |s, ep, step| {
            Ok(teacher_act(&planner, s, teacher_n, decision_seed(seed, ep, step)))
        })?;
        eprintln!("eval seed {seed} teacher: score {:.1}", report.normalized_score);
        record("teacher", seed, teacher_n, &report);

        for &n in &config.n_candidates_infer {
            let policy = model.hi_policy(n)?;
            let report =
                evaluate_policy(&config.env_preset, config.eval_episodes, seed, config.threads, |s, ep, step| {
                    let mut rng = ChaCha8Rng::seed_from_u64(decision_seed(seed, ep, step));
                    let mut scratch = HiScratch::default();
                    Ok(policy.hi_act(s, &mut rng, &mut scratch, None).0)
                })?;
            eprintln!("eval seed {seed} hi({n}): score {:.1}", report.normalized_score);
            record("hi", seed, n, &report);
        }

        let policy = model.hi_policy(1)?;
        let report =
            evaluate_policy(&config.env_preset, config.eval_episodes, seed, config.threads, |s, ep, step| {
                let mut rng = ChaCha8Rng::seed_from_u64(decision_seed(seed, ep, step));
                let mut scratch = HiScratch::default();
                Ok(policy.hi_act_no_critic(s, &mut rng, &mut scratch))
            })?;
        record("hi-no-critic", seed, 1, &report);

        let distill = load_distill(&seed_dir.join("distill.ckpt"))?;
        let fast = FastMlp::from_params(&distill);
        let report =
            evaluate_policy(&config.env_preset, config.eval_episodes, seed, config.threads, |s, _ep, _step| {
                let input: Vec<f32> = s.iter().map(|&v| v as f32).collect();
                Ok(fast.forward(&input).iter().map(|&a| (a as f64).clamp(-1.0, 1.0)).collect())
            })?;
        record("direct-distill", seed, 1, &report);
    }
    std::fs::write(dir.join("eval.csv"), csv)?;
    Ok(dir)
}

/// Probe states for benchmarking: reset states of the task environment.
pub fn probe_states(preset: &str, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut env = make_env(preset)?;
    let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, "bench-probes"));
    Ok((0..n).map(|_| env.reset(&mut rng)).collect())
}

pub fn stage_bench(config: &RunConfig, run_dir: &Path) -> Result<PathBuf> {
    let planner_path = require_stage_file(run_dir, "planner", "planner.ckpt")?;
    let planner = TeacherPlanner::load(&planner_path)?;
    let habitize_dir = latest_stage_dir(run_dir, "habitize").ok_or_else(|| {
        HabiError::Usage(format!("stage 'habitize' has not been run in {}", run_dir.display()))
    })?;
    let seed = config.seeds[0];
    let model = HabiModel::load(&habitize_dir.join(format!("seed_{seed}")).join("model_latest.ckpt"))?;
    let dir = next_stage_dir(run_dir, "bench")?;
    let csv_path = dir.join("bench.csv");
    let states = probe_states(&config.env_preset, 32, seed)?;
    let task = config.env_preset.as_str();

    // Teacher rows use fewer reps: one decision is orders of magnitude slower.
    let teacher_reps = config.bench_reps.min(200).max(100);
    let mut bench_rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, "bench-teacher"));
    let report = measure_frequency(
        |s| {
            let (cands, best) = plan(&planner, s, config.bench_teacher_n, &mut bench_rng);
            std::hint::black_box(&cands[best].action);
        },
        &states,
        config.bench_warmup.min(10),
        teacher_reps,
    )?;
    std::fs::write(dir.join("freq_teacher.txt"), report.as_text())?;
    append_bench_row(&csv_path, "teacher", task, config.bench_teacher_n, &report, 1)?;
    eprintln!("bench teacher: {:.1} Hz", report.hz_single_stream);

    for &n in &config.n_candidates_infer {
        let policy = model.hi_policy(n)?;
        let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, "bench-hi"));
        let mut scratch = HiScratch::default();
        let report = measure_frequency(
            |s| {
                let out = policy.hi_act(s, &mut rng, &mut scratch, None);
                std::hint::black_box(&out);
            },
            &states,
            config.bench_warmup,
            config.bench_reps,
        )?;
        std::fs::write(dir.join(format!("freq_hi_{n}.txt")), report.as_text())?;
        append_bench_row(&csv_path, "hi", task, n, &report, 1)?;
        eprintln!("bench hi({n}): {:.1} Hz", report.hz_single_stream);
    }

    {
        let policy = model.hi_policy(1)?;
        let mut rng = ChaCha8Rng::seed_from_u64(crate::derive_seed(seed, "bench-nocritic"));
        let mut scratch = HiScratch::default();
        let report = measure_frequency(
            |s| {
                let out = policy.hi_act_no_critic(s, &mut rng, &mut scratch);
                std::hint::black_box(&out);
            },
            &states,
            config.bench_warmup,
            config.bench_reps,
        )?;
        append_bench_row(&csv_path, "hi-no-critic", task, 1, &report, 1)?;
    }

    {
        let distill =
            load_distill(&habitize_dir.join(format!("seed_{seed}")).join("distill.ckpt"))?;
        let fast = FastMlp::from_params(&distill);
        let mut scratch = crate::nn::fast::Scratch::default();
        let mut input: Vec<f32> = Vec::new();
        let report = measure_frequency(
            |s| {
                input.clear();
                input.extend(s.iter().map(|&v| v as f32));
                let out = fast.forward_into(&input, &mut scratch);
                std::hint::black_box(out);
            },
            &states,
            config.bench_warmup,
            config.bench_reps,
        )?;
        append_bench_row(&csv_path, "direct-distill", task, 1, &report, 1)?;
    }
    Ok(dir)
}

pub fn stage_report(config: &RunConfig, run_dir: &Path) -> Result<PathBuf> {
    let eval_csv = require_stage_file(run_dir, "eval", "eval.csv")?;
    // bench.csv is optional: missing rows are reported as MISSING.
    let bench_csv = latest_stage_dir(run_dir, "bench").map(|d| d.join("bench.csv"));
    let dir = next_stage_dir(run_dir, "report")?;
    crate::report::assemble_report(config, &eval_csv, bench_csv.as_deref(), &dir)?;
    Ok(dir)
}

/// Small end-to-end configuration: every stage in a few minutes.
pub fn demo_config() -> RunConfig {
    let mut config = RunConfig::default();
    config.seeds = vec![0];
    config.env_preset = "reach".into();
    config.n_episodes_data = 40;
    config.t_steps = 5;
    config.horizon = 2;
    config.planner_hidden = 32;
    config.planner_train_steps = 400;
    config.planner_batch_size = 32;
    config.n_candidates_train = 8;
    config.value_train_steps = 500;
    config.d_z = 4;
    config.habi_hidden = 32;
    config.habi_steps = 400;
    config.habi_batch_size = 32;
    config.lr_beta = 0.03;
    config.teacher_states = 200;
    config.checkpoint_every = 200;
    config.log_every = 50;
    config.distill_steps = 400;
    config.n_candidates_infer = vec![1, 5];
    config.eval_episodes = 10;
    config.bench_reps = 200;
    config.bench_warmup = 20;
    config.bench_teacher_n = 8;
    config
}

pub fn run_all(config: &RunConfig, run_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(run_dir)?;
    std::fs::write(run_dir.join("config.txt"), config.serialize())?;
    stage_gen_data(config, run_dir)?;
    stage_train_planner(config, run_dir)?;
    stage_habitize(config, run_dir)?;
    stage_eval(config, run_dir)?;
    stage_bench(config, run_dir)?;
    stage_report(config, run_dir)?;
    Ok(())
}
