//! Acceptance criteria at their pinned tolerances. Runs as a plain binary and
//! prints one PASS/FAIL line per criterion; exits non-zero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::{dvector, DMatrix, DVector};
use rand::Rng as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use alcoi::benchmarks::bump::bump_offset_experiment;
use alcoi::benchmarks::checks::{doed_trace, hessian_check, rate_check};
use alcoi::benchmarks::linear::scalar_linear_model;
use alcoi::benchmarks::toy::one_step_problem;
use alcoi::benchmarks::{run_figure2, run_figure3, Benchmark, BumpConfig, LinearConfig};
use alcoi::control::{excess_cost, synthesize_ce};
use alcoi::design::DesignObjective;
use alcoi::dynamics::{rollout_batch, Policy};
use alcoi::estimation::{empirical_gram, least_squares_fit, EpisodeDataset, LsqOptions, Normalization};

type Outcome = Result<String, String>;

fn judge(passed: bool, detail: String) -> Outcome {
    if passed {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn slope(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let b = sxy / sxx;
    (b, my - b * mx)
}

fn figure2_ordering(dir: &Path) -> Outcome {
    let (out, check) =
        run_figure2(&[64, 128, 256, 512], 50, &dir.join("figure2.csv"), 0, None).map_err(|e| e.to_string())?;
    judge(check.passed, format!("{}; {} failed runs", check.detail, out.failures))
}

fn figure3_ordering(dir: &Path) -> Outcome {
    let (out, check) = run_figure3(&[32, 64, 128], 30, &dir.join("figure3.csv"), 0, None).map_err(|e| e.to_string())?;
    judge(check.passed, format!("{}; {} failed runs", check.detail, out.failures))
}

fn identification_rate() -> Outcome {
    let c = rate_check(&[16, 64, 256, 1024], 30, 0).map_err(|e| e.to_string())?;
    judge((-1.3..=-0.7).contains(&c.slope), format!("slope {:.3}", c.slope))
}

fn quadratic_expansion() -> Outcome {
    let problem = one_step_problem(0.0).map_err(|e| e.to_string())?;
    let truth = dvector![1.0];
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for k in 0..12 {
        let mag = 1e-3 * 100f64.powf(k as f64 / 11.0);
        for sign in [-1.0, 1.0] {
            let est = dvector![1.0 + sign * mag];
            let e = excess_cost(&problem, &est, &truth, 16, 7).map_err(|e| e.to_string())?;
            xs.push(mag.ln());
            ys.push(e.ln());
        }
    }
    let (exponent, intercept) = slope(&xs, &ys);
    let hessian = 2.0 * intercept.exp();
    let closed_form = 2.0;
    judge(
        (1.8..=2.2).contains(&exponent) && (hessian - closed_form).abs() <= 0.3 * closed_form,
        format!("exponent {exponent:.4}, implied curvature {hessian:.4} vs {closed_form}"),
    )
}

fn hessian_oracle() -> Outcome {
    let c = hessian_check(100_000, 1e-2, 0).map_err(|e| e.to_string())?;
    judge(
        c.relative_error <= 0.05 && c.half_step_gap <= 0.01,
        format!(
            "H = {:.5} (error {:.3}%), half-step gap {:.4}%",
            c.estimate,
            100.0 * c.relative_error,
            100.0 * c.half_step_gap
        ),
    )
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(n, n) * shift
}

fn design_gradient_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(2..=6);
        let h = random_spd(&mut rng, n, 0.1);
        let gram = random_spd(&mut rng, n, 0.0);
        let lambda = rng.random_range(0.05..1.0);
        let obj = DesignObjective::new(h.clone(), lambda).map_err(|e| e.to_string())?;
        let grad = obj.gradient(&gram).map_err(|e| e.to_string())?;
        let value = |l: &DMatrix<f64>| {
            let m = (l + DMatrix::identity(n, n) * lambda).try_inverse().expect("invertible");
            (&h * m).trace()
        };
        for i in 0..n {
            for j in i..n {
                let step = 1e-5 * (1.0 + gram[(i, j)].abs());
                let mut dir = DMatrix::zeros(n, n);
                dir[(i, j)] = 1.0;
                dir[(j, i)] = 1.0;
                let fd = (value(&(&gram + &dir * step)) - value(&(&gram - &dir * step))) / (2.0 * step);
                let analytic = (&grad.component_mul(&dir)).sum();
                worst = worst.max((fd - analytic).abs() / grad.abs().max());
            }
        }
    }
    judge(worst <= 1e-6, format!("max relative error {worst:.3e}"))
}

fn least_squares_oracle() -> Outcome {
    let cfg = BumpConfig::default();
    let mut worst = 0.0f64;
    for d in 0..20u64 {
        let exp = bump_offset_experiment(&cfg, 100 + d).map_err(|e| e.to_string())?;
        let model = &exp.problem.model;
        let theta = synthesize_ce(&exp.problem, &exp.truth, 1, 0).map_err(|e| e.to_string())?.theta;
        let policy = exp.problem.policy(DVector::from_vec(theta));
        let eps = rollout_batch(model, &policy, &exp.truth, 20, 500 + d).map_err(|e| e.to_string())?;
        let data = EpisodeDataset::from_episodes(model, eps).map_err(|e| e.to_string())?;
        let fit = least_squares_fit(&data, model, &exp.initial_guess, &LsqOptions::default()).map_err(|e| e.to_string())?;

        let objective = |phi: f64| -> f64 {
            let p = dvector![phi];
            data.transitions().map(|(x, u, xn)| (xn - model.predict(x, u, &p)).norm_squared()).sum()
        };
        let (mut best_phi, mut best_val) = (f64::NAN, f64::INFINITY);
        for k in 0..=20_000 {
            let phi = -1.0 + 1e-4 * k as f64;
            let v = objective(phi);
            if v < best_val {
                best_val = v;
                best_phi = phi;
            }
        }
        worst = worst.max((fit.params[0] - best_phi).abs());
    }
    judge(worst <= 2e-4, format!("max |solver - grid| = {worst:.2e}"))
}

fn gram_concentration() -> Outcome {
    let cfg = LinearConfig::default();
    let model = scalar_linear_model(&cfg).map_err(|e| e.to_string())?;
    let truth = dvector![cfg.a];
    let policy = Policy::random_energy(cfg.budget);
    let per_step = cfg.budget / cfg.horizon as f64 + cfg.noise_std.powi(2);
    let (mut second, mut sigma) = (0.0, 0.0);
    for _ in 0..cfg.horizon {
        sigma += second;
        second = cfg.a * cfg.a * second + per_step;
    }
    let reps = 20;
    let mean_error = |k: usize| -> Result<f64, String> {
        let mut total = 0.0;
        for r in 0..reps {
            let eps = rollout_batch(&model, &policy, &truth, k, 1_000 * k as u64 + r).map_err(|e| e.to_string())?;
            let data = EpisodeDataset::from_episodes(&model, eps).map_err(|e| e.to_string())?;
            let g = empirical_gram(&data, &model, &truth, Normalization::PerEpisodeMean).map_err(|e| e.to_string())?;
            total += (g.matrix()[(0, 0)] - sigma).abs();
        }
        Ok(total / reps as f64)
    };
    let (small, large) = (mean_error(100)?, mean_error(10_000)?);
    let ratio = small / large;
    judge(ratio >= 5.0, format!("error ratio {ratio:.2} (K=100: {small:.3e}, K=1e4: {large:.3e})"))
}

fn design_non_worsening() -> Outcome {
    let bench = Benchmark::from_name("illustrative2d", None).map_err(|e| e.to_string())?;
    let t = doed_trace(&bench, None, 256, 10, 0).map_err(|e| e.to_string())?;
    judge(
        t.mean_final <= t.mean_initial,
        format!("mean initial {:.4e}, mean final {:.4e}", t.mean_initial, t.mean_final),
    )
}

fn csv_without_wall_ms(path: &Path) -> Result<Vec<Vec<String>>, String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let headers = r.headers().map_err(|e| e.to_string())?.clone();
    let keep: Vec<usize> = (0..headers.len()).filter(|&i| &headers[i] != "wall_ms").collect();
    let mut rows = vec![keep.iter().map(|&i| headers[i].to_string()).collect()];
    for rec in r.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        rows.push(keep.iter().map(|&i| rec[i].to_string()).collect());
    }
    Ok(rows)
}

fn cli_determinism(dir: &Path) -> Outcome {
    let bin = env!("CARGO_BIN_EXE_alcoi");
    let cases: [(&str, &[&str]); 5] = [
        ("figure2", &["--sweep", "16", "--n-seeds", "2"]),
        ("figure3", &["--sweep", "16", "--n-seeds", "2"]),
        ("rate-check", &["--sweep", "16,64", "--n-seeds", "3"]),
        ("hessian-check", &["--n-mc", "2000"]),
        ("doed-trace", &["--sweep", "16", "--n-seeds", "2"]),
    ];
    let mut mismatched = Vec::new();
    for (sub, args) in cases {
        let mut bodies = Vec::new();
        for (run, threads) in [(0, "1"), (1, "2")] {
            let out = dir.join(format!("{sub}_{run}.csv"));
            let status = Command::new(bin)
                .arg(sub)
                .args(args)
                .args(["--seed", "11", "--threads", threads, "--out"])
                .arg(&out)
                .output()
                .map_err(|e| e.to_string())?;
            if !out.exists() {
                return Err(format!("{sub} wrote no CSV: {}", String::from_utf8_lossy(&status.stderr)));
            }
            bodies.push(csv_without_wall_ms(&out)?);
        }
        if bodies[0] != bodies[1] {
            mismatched.push(sub);
        }
    }
    judge(mismatched.is_empty(), format!("subcommands with differing output: {mismatched:?}"))
}

fn main() {
    let dir = tempfile::tempdir().expect("temporary directory");
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("1 bump ordering", Box::new(|| figure2_ordering(dir.path()))),
        ("2 cartpole ordering", Box::new(|| figure3_ordering(dir.path()))),
        ("3 identification rate", Box::new(identification_rate)),
        ("4 quadratic excess cost", Box::new(quadratic_expansion)),
        ("5 model-task hessian", Box::new(hessian_oracle)),
        ("6 design gradient", Box::new(design_gradient_exactness)),
        ("7 least squares vs grid", Box::new(least_squares_oracle)),
        ("8 gram concentration", Box::new(gram_concentration)),
        ("9 design non-worsening", Box::new(design_non_worsening)),
        ("10 cli determinism", Box::new(|| cli_determinism(dir.path()))),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in &criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS  criterion {name} [{secs:.1}s]: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL  criterion {name} [{secs:.1}s]: {d}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
