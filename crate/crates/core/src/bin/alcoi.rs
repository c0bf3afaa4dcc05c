use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use alcoi::benchmarks::checks::{doed_trace, hessian_check, rate_check};
use alcoi::benchmarks::{run_figure2, run_figure3, Benchmark, SweepOutcome};

#[derive(Parser)]
#[command(name = "alcoi", version, about = "Control-oriented active identification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Number of seeds per sweep point.
    #[arg(long)]
    n_seeds: Option<usize>,
    /// Comma-separated episode counts.
    #[arg(long, value_delimiter = ',')]
    sweep: Option<Vec<usize>>,
    /// Output CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON file of the form {"system": {...}, "alcoi": {...}}.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Excess cost against episodes on the bump system, three methods.
    Figure2(Common),
    /// Excess cost against episodes on the cartpole swing-up, three methods.
    Figure3(Common),
    /// Log-log slope of the parameter error on a linear system.
    RateCheck(Common),
    /// Model-task Hessian of the one-step toy against its closed form.
    HessianCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100_000)]
        n_mc: usize,
        #[arg(long, default_value_t = 1e-2)]
        fd_step: f64,
    },
    /// Design objective per epoch of the design loop on the bump system.
    DoedTrace(Common),
}

impl Common {
    fn out_or(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }

    fn load_config(&self) -> anyhow::Result<Option<Value>> {
        self.config
            .as_ref()
            .map(|p| {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
            })
            .transpose()
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn report_sweep(outcome: &SweepOutcome, out: &Path) {
    for s in &outcome.summaries {
        println!("{:>10} N={:<5} n={:<3} mean={:.5e} se={:.2e}", s.method.name(), s.n, s.count, s.mean, s.std_err);
    }
    if outcome.failures > 0 {
        println!("{} runs failed and were left out", outcome.failures);
    }
    println!("wrote {}", out.display());
}

fn verdict(name: &str, passed: bool, detail: &str) -> bool {
    println!("{name}: {} ({detail})", if passed { "PASS" } else { "FAIL" });
    passed
}

fn run(command: Command) -> anyhow::Result<bool> {
    match command {
        Command::Figure2(c) => {
            let out = c.out_or("figure2.csv");
            let sweep = c.sweep.clone().unwrap_or_else(|| vec![64, 128, 256, 512]);
            let cfg = c.load_config()?;
            let (outcome, check) = run_figure2(&sweep, c.n_seeds.unwrap_or(50), &out, c.seed, cfg.as_ref())?;
            report_sweep(&outcome, &out);
            Ok(verdict("figure2 ordering", check.passed, &check.detail))
        }
        Command::Figure3(c) => {
            let out = c.out_or("figure3.csv");
            let sweep = c.sweep.clone().unwrap_or_else(|| vec![32, 64, 128]);
            let cfg = c.load_config()?;
            let (outcome, check) = run_figure3(&sweep, c.n_seeds.unwrap_or(30), &out, c.seed, cfg.as_ref())?;
            report_sweep(&outcome, &out);
            Ok(verdict("figure3 ordering", check.passed, &check.detail))
        }
        Command::RateCheck(c) => {
            let out = c.out_or("rate_check.csv");
            let sweep = c.sweep.clone().unwrap_or_else(|| vec![16, 64, 256, 1024]);
            let check = rate_check(&sweep, c.n_seeds.unwrap_or(30), c.seed)?;
            write_csv(&out, &check.rows)?;
            for (n, m) in &check.means {
                println!("N={n:<5} mean squared error {m:.5e}");
            }
            Ok(verdict("identification rate", check.passed, &format!("slope {:.3}", check.slope)))
        }
        Command::HessianCheck { common, n_mc, fd_step } => {
            let out = common.out_or("hessian_check.csv");
            let check = hessian_check(n_mc, fd_step, common.seed)?;
            write_csv(&out, std::slice::from_ref(&check))?;
            Ok(verdict(
                "model-task hessian",
                check.passed,
                &format!(
                    "H(h)={:.5}, H(h/2)={:.5}, error {:.2}%, half-step gap {:.3}%",
                    check.estimate,
                    check.half_step_estimate,
                    100.0 * check.relative_error,
                    100.0 * check.half_step_gap
                ),
            ))
        }
        Command::DoedTrace(c) => {
            let out = c.out_or("doed_trace.csv");
            let n = c.sweep.as_ref().and_then(|s| s.first().copied()).unwrap_or(256);
            let cfg = c.load_config()?;
            let bench = Benchmark::from_name("illustrative2d", cfg.as_ref().and_then(|v| v.get("system")))?;
            let trace = doed_trace(&bench, cfg.as_ref().and_then(|v| v.get("alcoi")), n, c.n_seeds.unwrap_or(10), c.seed)?;
            write_csv(&out, &trace.rows)?;
            Ok(verdict(
                "design non-worsening",
                trace.passed,
                &format!("mean initial {:.5e}, mean final {:.5e}", trace.mean_initial, trace.mean_final),
            ))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    let cli = Cli::parse();
    let threads = match &cli.command {
        Command::Figure2(c) | Command::Figure3(c) | Command::RateCheck(c) | Command::DoedTrace(c) => c.threads,
        Command::HessianCheck { common, .. } => common.threads,
    };
    if let Some(t) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
