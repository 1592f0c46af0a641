//! Report assembly: merges evaluation scores and benchmark rates into
//! report.csv (machine-readable, with provenance) and report.txt (a small
//! aligned table with a Performance row and a decisions/sec row).

use std::collections::BTreeMap;
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{HabiError, Result};

#[derive(Clone, Debug, Default)]
struct PolicyRow {
    scores: Vec<f64>,
    stderrs: Vec<f64>,
    seeds: Vec<u64>,
    episodes: usize,
    hz: Option<f64>,
}

/// (policy, n_candidates) → stable display label.
fn label(policy: &str, n: usize) -> String {
    match policy {
        "hi" => format!("hi(N={n})"),
        other => other.to_string(),
    }
}

fn parse_eval_csv(path: &Path) -> Result<BTreeMap<(String, usize), PolicyRow>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HabiError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut rows: BTreeMap<(String, usize), PolicyRow> = BTreeMap::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(HabiError::Usage(format!("malformed eval.csv line {}", i + 1)));
        }
        let key = (f[0].to_string(), f[2].parse().map_err(|_| bad(path, i))?);
        let row = rows.entry(key).or_default();
        row.seeds.push(f[1].parse().map_err(|_| bad(path, i))?);
        row.episodes = f[3].parse().map_err(|_| bad(path, i))?;
        row.stderrs.push(f[5].parse().map_err(|_| bad(path, i))?);
        row.scores.push(f[7].parse().map_err(|_| bad(path, i))?);
    }
    Ok(rows)
}

fn bad(path: &Path, line: usize) -> HabiError {
    HabiError::Usage(format!("malformed number in {} line {}", path.display(), line + 1))
}

fn parse_bench_csv(path: &Path) -> Result<BTreeMap<(String, usize), f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HabiError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut hz = BTreeMap::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(HabiError::Usage(format!("malformed bench.csv line {}", i + 1)));
        }
        hz.insert(
            (f[0].to_string(), f[2].parse().map_err(|_| bad(path, i))?),
            f[3].parse().map_err(|_| bad(path, i))?,
        );
    }
    Ok(hz)
}

pub fn assemble_report(
    config: &RunConfig,
    eval_csv: &Path,
    bench_csv: Option<&Path>,
    out_dir: &Path,
) -> Result<()> {
    let mut rows = parse_eval_csv(eval_csv)?;
    let bench = match bench_csv {
        Some(p) if p.exists() => Some(parse_bench_csv(p)?),
        _ => None,
    };
    if let Some(bench) = &bench {
        for (key, row) in rows.iter_mut() {
            row.hz = bench.get(key).copied();
        }
    }
    let teacher_hz = rows
        .iter()
        .find(|((p, _), _)| p == "teacher")
        .and_then(|(_, r)| r.hz);

    let eval_name = eval_csv.file_name().unwrap().to_string_lossy().into_owned();
    let bench_name = bench_csv
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .unwrap_or_else(|| "MISSING".into());

    let mut csv = String::from(
        "policy,n_candidates,episodes,seeds,normalized_score,score_stderr,hz,speedup_vs_teacher,provenance\n",
    );
    let mut labels = Vec::new();
    let mut perf = Vec::new();
    let mut rates = Vec::new();
    for ((policy, n), row) in &rows {
        let k = row.scores.len() as f64;
        let score = row.scores.iter().sum::<f64>() / k;
        // Pooled per-seed standard errors (independent seeds).
        let stderr = (row.stderrs.iter().map(|s| s * s).sum::<f64>()).sqrt() / k;
        let (hz_s, speedup_s, provenance) = match row.hz {
            Some(hz) => {
                let speedup = match teacher_hz {
                    Some(t) if t > 0.0 => format!("{:.1}", hz / t),
                    _ => "MISSING".into(),
                };
                (format!("{hz:.1}"), speedup, format!("{eval_name};{bench_name}"))
            }
            None => ("MISSING".into(), "MISSING".into(), eval_name.clone()),
        };
        let seeds = row.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";");
        csv.push_str(&format!(
            "{policy},{n},{},{seeds},{score:.2},{stderr:.2},{hz_s},{speedup_s},{provenance}\n",
            row.episodes
        ));
        labels.push(label(policy, *n));
        perf.push(format!("{score:.1}±{stderr:.1}"));
        rates.push(row.hz.map(|h| format!("{h:.1}")).unwrap_or_else(|| "MISSING".into()));
    }
    std::fs::write(out_dir.join("report.csv"), &csv)?;

    // Aligned text table: one column per policy, Performance and Hz rows.
    let mut widths: Vec<usize> = labels.iter().map(|l| l.len()).collect();
    for (i, w) in widths.iter_mut().enumerate() {
        *w = (*w).max(perf[i].len()).max(rates[i].len());
    }
    let head_w = "Action Frequency (Hz)".len();
    let fmt_row = |head: &str, cells: &[String]| {
        let mut line = format!("{head:<head_w$}");
        for (cell, w) in cells.iter().zip(widths.iter()) {
            line.push_str(&format!("  {cell:>w$}"));
        }
        line.push('\n');
        line
    };
    let mut txt = format!(
        "Task: {}   episodes/seed: {}   seeds: {:?}\n\n",
        config.env_preset, config.eval_episodes, config.seeds
    );
    txt.push_str(&fmt_row("Policy", &labels));
    txt.push_str(&fmt_row("Performance", &perf));
    txt.push_str(&fmt_row("Action Frequency (Hz)", &rates));
    std::fs::write(out_dir.join("report.txt"), txt)?;
    Ok(())
}
