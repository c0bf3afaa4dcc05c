use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::Benchmark;
use crate::alcoi::{run_alcoi, run_baseline_aopt, run_baseline_random, ObjectiveKind};
use crate::rng::derive_seed;
use crate::{Error, Result};

/// Offset of the stream that draws a run's initial parameter guess.
const GUESS_STREAM: u64 = 0x6775_6573;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "alcoi")]
    Alcoi,
    #[serde(rename = "a-optimal")]
    AOptimal,
    #[serde(rename = "random")]
    Random,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Alcoi, Method::AOptimal, Method::Random];

    pub fn name(self) -> &'static str {
        match self {
            Method::Alcoi => "alcoi",
            Method::AOptimal => "a-optimal",
            Method::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: Method,
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
    pub excess_cost: f64,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub method: Method,
    #[serde(rename = "N")]
    pub n: usize,
    pub count: usize,
    pub mean: f64,
    pub std_err: f64,
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub summaries: Vec<SweepSummary>,
    /// Runs that returned an error and therefore have no row.
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrderingCheck {
    pub passed: bool,
    pub detail: String,
}

fn run_one(bench: &Benchmark, alcoi: Option<&Value>, method: Method, n: usize, seed: u64) -> Result<f64> {
    let exp = bench.experiment(derive_seed(seed, GUESS_STREAM))?;
    let mut cfg = bench.alcoi_config(alcoi)?;
    cfg.n_episodes = n;
    let report = match method {
        Method::Alcoi => {
            cfg.objective = ObjectiveKind::ControlOriented;
            run_alcoi(&exp, &cfg, seed)?
        }
        Method::AOptimal => run_baseline_aopt(&exp, &cfg, seed)?,
        Method::Random => run_baseline_random(&exp, &cfg, seed)?,
    };
    Ok(report.excess_cost)
}

/// Runs every (method, N, seed) triple. Run `i` uses `derive_seed(base_seed, i)`
/// for all methods and all N, so methods are compared on common randomness.
pub fn run_sweep(
    bench: &Benchmark,
    alcoi_overrides: Option<&Value>,
    methods: &[Method],
    sweep: &[usize],
    n_seeds: usize,
    base_seed: u64,
) -> Result<SweepOutcome> {
    if n_seeds < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 seeds, got {n_seeds}")));
    }
    if sweep.is_empty() || methods.is_empty() {
        return Err(Error::InvalidArgument("empty sweep".into()));
    }
    bench.alcoi_config(alcoi_overrides)?;

    let mut jobs = Vec::new();
    for &method in methods {
        for &n in sweep {
            for i in 0..n_seeds {
                jobs.push((method, n, derive_seed(base_seed, i as u64)));
            }
        }
    }
    let results: Vec<_> = jobs
        .into_par_iter()
        .map(|(method, n, seed)| {
            let start = Instant::now();
            let out = run_one(bench, alcoi_overrides, method, n, seed);
            let wall_ms = start.elapsed().as_millis() as u64;
            match out {
                Ok(c) if c.is_finite() => Ok(SweepRow { method, n, seed, excess_cost: c, wall_ms }),
                Ok(c) => {
                    log::warn!("{} N={n} seed={seed}: non-finite excess cost {c}", method.name());
                    Err(())
                }
                Err(e) => {
                    log::warn!("{} N={n} seed={seed}: {e}", method.name());
                    Err(())
                }
            }
        })
        .collect();

    let failures = results.iter().filter(|r| r.is_err()).count();
    let mut rows: Vec<SweepRow> = results.into_iter().flatten().collect();
    rows.sort_by(|a, b| (a.method, a.n, a.seed).cmp(&(b.method, b.n, b.seed)));
    let summaries = summarize(&rows);
    Ok(SweepOutcome { rows, summaries, failures })
}

/// Mean and standard error of the excess cost per (method, N).
pub fn summarize(rows: &[SweepRow]) -> Vec<SweepSummary> {
    let mut keys: Vec<(Method, usize)> = rows.iter().map(|r| (r.method, r.n)).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(method, n)| {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.method == method && r.n == n)
                .map(|r| r.excess_cost)
                .collect();
            let count = vals.len();
            let mean = vals.iter().sum::<f64>() / count as f64;
            let std_err = if count > 1 {
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
                (var / count as f64).sqrt()
            } else {
                f64::NAN
            };
            SweepSummary { method, n, count, mean, std_err }
        })
        .collect()
}

fn find(summaries: &[SweepSummary], method: Method, n: usize) -> Option<&SweepSummary> {
    summaries.iter().find(|s| s.method == method && s.n == n)
}

/// Checks at the largest N that ALCOI beats random by `min_separation` pooled
/// standard errors. With `strict_chain`, also requires ALCOI < A-optimal < random.
pub fn ordering_check(summaries: &[SweepSummary], strict_chain: bool, min_separation: f64) -> OrderingCheck {
    let Some(n) = summaries.iter().map(|s| s.n).max() else {
        return OrderingCheck { passed: false, detail: "no completed runs".into() };
    };
    let (Some(a), Some(r)) = (find(summaries, Method::Alcoi, n), find(summaries, Method::Random, n)) else {
        return OrderingCheck { passed: false, detail: format!("missing alcoi or random summary at N={n}") };
    };
    let pooled = (a.std_err.powi(2) + r.std_err.powi(2)).sqrt();
    let gap = r.mean - a.mean;
    let mut passed = gap >= min_separation * pooled;
    let mut detail = format!(
        "N={n}: alcoi {:.4e} ± {:.2e}, random {:.4e} ± {:.2e}, gap {:.2} pooled SE",
        a.mean,
        a.std_err,
        r.mean,
        r.std_err,
        gap / pooled
    );
    if strict_chain {
        match find(summaries, Method::AOptimal, n) {
            Some(o) => {
                passed &= a.mean < o.mean && o.mean < r.mean;
                detail.push_str(&format!(", a-optimal {:.4e} ± {:.2e}", o.mean, o.std_err));
            }
            None => {
                passed = false;
                detail.push_str(", a-optimal missing");
            }
        }
    }
    OrderingCheck { passed, detail }
}

/// `out.csv` becomes `out_summary.csv`.
pub fn summary_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = out.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
    out.with_file_name(format!("{stem}_summary{ext}"))
}

pub fn write_rows_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(["method", "N", "seed", "excess_cost", "wall_ms"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv(path: &Path, summaries: &[SweepSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if summaries.is_empty() {
        w.write_record(["method", "N", "count", "mean", "std_err"])?;
    }
    for s in summaries {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

fn split_config(config: Option<&Value>) -> (Option<&Value>, Option<&Value>) {
    (config.and_then(|c| c.get("system")), config.and_then(|c| c.get("alcoi")))
}

fn run_figure(
    system: &str,
    strict_chain: bool,
    min_separation: f64,
    sweep: &[usize],
    n_seeds: usize,
    out: &Path,
    seed: u64,
    config: Option<&Value>,
) -> Result<(SweepOutcome, OrderingCheck)> {
    let (sys, alcoi) = split_config(config);
    let bench = Benchmark::from_name(system, sys)?;
    let outcome = run_sweep(&bench, alcoi, &Method::ALL, sweep, n_seeds, seed)?;
    write_rows_csv(out, &outcome.rows)?;
    write_summary_csv(&summary_path(out), &outcome.summaries)?;
    let check = ordering_check(&outcome.summaries, strict_chain, min_separation);
    Ok((outcome, check))
}

/// Bump-system sweep over all three methods.
pub fn run_figure2(
    sweep: &[usize],
    n_seeds: usize,
    out: &Path,
    seed: u64,
    config: Option<&Value>,
) -> Result<(SweepOutcome, OrderingCheck)> {
    run_figure("illustrative2d", true, 2.0, sweep, n_seeds, out, seed, config)
}

/// Cartpole swing-up sweep over all three methods.
pub fn run_figure3(
    sweep: &[usize],
    n_seeds: usize,
    out: &Path,
    seed: u64,
    config: Option<&Value>,
) -> Result<(SweepOutcome, OrderingCheck)> {
    run_figure("cartpole", false, 1.0, sweep, n_seeds, out, seed, config)
}
