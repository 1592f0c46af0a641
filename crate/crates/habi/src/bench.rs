//! Decision-rate benchmarking: single-stream wall-clock decisions/sec with
//! latency percentiles, harness self-calibration, and the bench.csv sink.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::error::{HabiError, Result};

#[derive(Clone, Debug)]
pub struct FrequencyReport {
    pub hz_single_stream: f64,
    pub p50_us: f64,
    pub p99_us: f64,
    pub reps: usize,
    /// Mean per-call harness overhead (empty closure), microseconds.
    pub overhead_us: f64,
    /// Set when median latency is within 10x of the measured timer/harness
    /// overhead, i.e. the numbers should not be trusted.
    pub timer_unreliable: bool,
}

impl FrequencyReport {
    pub fn as_text(&self) -> String {
        format!(
            "hz_single_stream = {:.1}\np50_us = {:.3}\np99_us = {:.3}\nreps = {}\noverhead_us = {:.4}\ntimer_unreliable = {}\n",
            self.hz_single_stream, self.p50_us, self.p99_us, self.reps, self.overhead_us, self.timer_unreliable
        )
    }
}

fn percentile(sorted_us: &[f64], p: f64) -> f64 {
    let idx = ((sorted_us.len() as f64 - 1.0) * p).round() as usize;
    sorted_us[idx]
}

/// Times `act` on `states` round-robin, one call per rep, single thread.
/// `warmup` untimed calls precede the measurement; `reps >= 100` is enforced
/// so the percentiles mean something.
pub fn measure_frequency<F>(
    mut act: F,
    states: &[Vec<f64>],
    warmup: usize,
    reps: usize,
) -> Result<FrequencyReport>
where
    F: FnMut(&[f64]),
{
    if reps < 100 {
        return Err(HabiError::Usage(format!("bench reps must be >= 100, got {reps}")));
    }
    if states.is_empty() {
        return Err(HabiError::Usage("bench needs at least one probe state".into()));
    }

    // Self-calibrate: time the harness loop with an empty body.
    let cal_start = Instant::now();
    let cal_reps = 10_000u64;
    for i in 0..cal_reps {
        let s = &states[(i as usize) % states.len()];
        std::hint::black_box(s);
    }
    let overhead_us = cal_start.elapsed().as_secs_f64() * 1e6 / cal_reps as f64;

    for i in 0..warmup {
        act(&states[i % states.len()]);
    }

    let mut lat_us = Vec::with_capacity(reps);
    let total_start = Instant::now();
    for i in 0..reps {
        let s = &states[i % states.len()];
        let t = Instant::now();
        act(s);
        lat_us.push(t.elapsed().as_secs_f64() * 1e6);
    }
    let total = total_start.elapsed().as_secs_f64();

    lat_us.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let p50_us = percentile(&lat_us, 0.50);
    let p99_us = percentile(&lat_us, 0.99);

    Ok(FrequencyReport {
        hz_single_stream: reps as f64 / total,
        p50_us,
        p99_us,
        reps,
        overhead_us,
        timer_unreliable: p50_us < 10.0 * overhead_us.max(0.01),
    })
}

/// Appends one machine-readable row, writing the header first if the file is
/// new or empty.
pub fn append_bench_row(
    path: &Path,
    policy: &str,
    task: &str,
    n_candidates: usize,
    report: &FrequencyReport,
    threads: usize,
) -> Result<()> {
    let need_header = !path.exists() || std::fs::metadata(path)?.len() == 0;
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    if need_header {
        writeln!(f, "policy,task,n_candidates,hz,p50_us,p99_us,threads")?;
    }
    writeln!(
        f,
        "{policy},{task},{n_candidates},{:.3},{:.3},{:.3},{threads}",
        report.hz_single_stream, report.p50_us, report.p99_us
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn too_few_reps_is_usage_error() {
        let err = measure_frequency(|_s| {}, &[vec![0.0]], 0, 10).unwrap_err();
        assert!(matches!(err, HabiError::Usage(_)));
    }

    #[test]
    fn sleepy_workload_measures_in_range() {
        let states = vec![vec![0.0]];
        let report = measure_frequency(
            |_s| std::thread::sleep(std::time::Duration::from_micros(200)),
            &states,
            5,
            100,
        )
        .unwrap();
        // ~200us of sleep per call plus scheduler slack.
        assert!(report.hz_single_stream < 5_500.0, "{}", report.hz_single_stream);
        assert!(report.hz_single_stream > 500.0, "{}", report.hz_single_stream);
        assert!(report.p99_us >= report.p50_us);
        assert!(!report.timer_unreliable);
    }

    #[test]
    fn noop_workload_flags_timer_resolution() {
        let report = measure_frequency(|_s| {}, &[vec![0.0]], 10, 1000).unwrap();
        assert!(report.timer_unreliable);
    }

    #[test]
    fn csv_rows_accumulate_under_one_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bench.csv");
        let report = FrequencyReport {
            hz_single_stream: 1234.5,
            p50_us: 800.0,
            p99_us: 900.0,
            reps: 100,
            overhead_us: 0.01,
            timer_unreliable: false,
        };
        append_bench_row(&path, "hi", "medium", 5, &report, 1).unwrap();
        append_bench_row(&path, "teacher", "medium", 50, &report, 1).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "policy,task,n_candidates,hz,p50_us,p99_us,threads");
        assert!(lines[1].starts_with("hi,medium,5,"));
    }
}
