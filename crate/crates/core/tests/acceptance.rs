//! End-to-end acceptance checks. Each check prints one PASS/FAIL line; the
//! process exits with status 1 if any check fails.

use std::time::{Duration, Instant};

use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};
use volterra_ldp::kernels::{covariance, modulus_estimate};
use volterra_ldp::mc::ldp_slope;
use volterra_ldp::rate::{psi, psi_m, symmetric_values};
use volterra_ldp::rng::{fill_normals, replication_rng};
use volterra_ldp::simulate::approx_gap_tail;
use volterra_ldp::stats::least_squares;
use volterra_ldp::{
    CellWeights, ControlFunction, EventSpec, Grid, KernelSpec, McEstimate, ModelSpec, Objective, PathHypothesis,
    RateConfig, RateSolver, ScalarFunction, SlopeOptions, SlopeReport, SpeedSchedule,
};

const ZERO: ScalarFunction = ScalarFunction::Constant { c: 0.0 };
const SCHEDULE: [f64; 5] = [0.5, 0.4, 0.3, 0.25, 0.2];

struct Check {
    passed: bool,
    detail: String,
}

fn check(passed: bool, detail: impl Into<String>) -> Check {
    Check {
        passed,
        detail: detail.into(),
    }
}

fn model(sigma: ScalarFunction, rho: f64, kernel: KernelSpec) -> ModelSpec {
    ModelSpec::new(ZERO, sigma, rho, 0.0, 1.0, kernel).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn kernel_exactness() -> Check {
    let bm = KernelSpec::brownian(1.0).unwrap();
    let mut worst: f64 = 0.0;
    for i in 1..=64 {
        for j in 1..=64 {
            let (t, s) = (i as f64 / 64.0, j as f64 / 64.0);
            worst = worst.max((covariance(&bm, t, s, 64).unwrap() - t.min(s)).abs());
        }
    }
    check(worst <= 1e-12, format!("max |cov - min(t,s)| = {worst:.2e} on 64 nodes"))
}

fn fbm_covariance() -> Check {
    let mut worst: f64 = 0.0;
    for h in [0.3, 0.7] {
        let fbm = KernelSpec::fbm(h, 1.0).unwrap();
        for i in 1..=16 {
            for j in 1..=16 {
                let (t, s) = (i as f64 / 16.0, j as f64 / 16.0);
                let exact = 0.5 * (t.powf(2.0 * h) + s.powf(2.0 * h) - (t - s).abs().powf(2.0 * h));
                worst = worst.max(rel(covariance(&fbm, t, s, 2048).unwrap(), exact));
            }
        }
    }
    check(worst <= 0.01, format!("max relative error {worst:.2e} over 16x16 probes, H in {{0.3, 0.7}}"))
}

fn modulus_exponents() -> Check {
    let deltas: Vec<f64> = (1..=8).map(|k| 0.5f64.powi(k)).collect();
    let bm = modulus_estimate(&KernelSpec::brownian(1.0).unwrap(), &deltas).unwrap().alpha_hat;
    let rl = modulus_estimate(&KernelSpec::riemann_liouville(0.3, 1.0).unwrap(), &deltas)
        .unwrap()
        .alpha_hat;
    check(
        (bm - 1.0).abs() <= 0.1 && (rl - 0.6).abs() <= 0.15,
        format!("alpha_hat BM = {bm:.4} (target 1), RL(0.3) = {rl:.4} (target 0.6)"),
    )
}

fn frozen_volatility_convergence() -> Check {
    let m = model(
        ScalarFunction::PowerGrowth { c: 1.0, beta: 1.0 },
        -0.5,
        KernelSpec::riemann_liouville(0.3, 1.0).unwrap(),
    );
    let grid = Grid::new(1024, 1.0).unwrap();
    let weights = CellWeights::build(m.kernel(), &grid).unwrap();
    let mut rng = replication_rng(2024, 0);
    let mut worst_ratio: f64 = 0.0;
    let mut all = true;
    for _ in 0..20 {
        // low-frequency controls; white noise averages out under the lift
        let mut modes = [0.0; 6];
        fill_normals(&mut rng, &mut modes);
        let mut fdot: Vec<f64> = (0..grid.cells())
            .map(|k| {
                let t = grid.midpoint(k + 1);
                modes
                    .iter()
                    .enumerate()
                    .map(|(j, a)| a / (1.0 + j as f64) * (j as f64 * std::f64::consts::PI * t).cos())
                    .sum()
            })
            .collect();
        let target = 2.0 * rng.random_range(0.05..=1.0);
        let e = 0.5 * fdot.iter().map(|v| v * v).sum::<f64>() * grid.step();
        fdot.iter_mut().for_each(|v| *v *= (target / e).sqrt());
        let control = ControlFunction::new(grid, fdot).unwrap();
        let full = psi(&m, &control, &weights).unwrap();
        let f_path = control.path();
        let g_path = weights.lift(control.fdot());
        let gap = |blocks: usize| {
            let approx = psi_m(&m, blocks, &f_path, &g_path, &grid).unwrap();
            full.iter().zip(&approx).fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()))
        };
        let (coarse, fine) = (gap(16), gap(256));
        all &= fine < coarse;
        worst_ratio = worst_ratio.max(fine / coarse);
    }
    check(all, format!("20 controls, worst gap ratio m=256 / m=16 = {worst_ratio:.3}"))
}

fn terminal_closed_form() -> Check {
    let grid = Grid::new(256, 1.0).unwrap();
    let exact = 0.3f64 * 0.3 / (2.0 * 0.2 * 0.2);
    let mut worst: f64 = 0.0;
    let mut slow = Duration::ZERO;
    for rho in [0.0, 0.5, -0.5] {
        let start = Instant::now();
        let m = model(ScalarFunction::Constant { c: 0.2 }, rho, KernelSpec::brownian(1.0).unwrap());
        let r = RateSolver::new(&m, &grid).unwrap().terminal(0.3, &RateConfig::default()).unwrap();
        worst = worst.max(rel(r.value, exact));
        slow = slow.max(start.elapsed());
    }
    check(
        worst <= 0.02 && slow < Duration::from_secs(60),
        format!("worst relative error {worst:.2e} vs {exact}, slowest rho {:.2}s", slow.as_secs_f64()),
    )
}

fn crossing_closed_form() -> Check {
    let grid = Grid::new(256, 1.0).unwrap();
    let exact = 0.3f64 * 0.3 / (2.0 * 0.2 * 0.2);
    let m = model(ScalarFunction::Constant { c: 0.2 }, 0.0, KernelSpec::brownian(1.0).unwrap());
    let r = RateSolver::new(&m, &grid)
        .unwrap()
        .crossing(0.3f64.exp(), &RateConfig::default())
        .unwrap();
    let t_star = r.t_star.unwrap();
    check(
        rel(r.value, exact) <= 0.02 && (t_star - 1.0).abs() < 1e-12,
        format!("rate {:.6} vs {exact}, t* = {t_star}", r.value),
    )
}

fn optimizer_vs_oracle() -> Check {
    let grid = Grid::new(96, 1.0).unwrap();
    let kernels = [
        ("RL(0.3)", KernelSpec::riemann_liouville(0.3, 1.0).unwrap()),
        ("fBM(0.7)", KernelSpec::fbm(0.7, 1.0).unwrap()),
    ];
    let mut all = true;
    let mut lines = Vec::new();
    for (name, kernel) in kernels {
        let m = model(ScalarFunction::PowerGrowth { c: 0.2, beta: 1.0 }, -0.5, kernel);
        let solver = RateSolver::new(&m, &grid).unwrap();
        let objectives = [
            ("path", Objective::Pathwise(PathHypothesis::from_fn(grid, |t| 0.25 * t))),
            ("terminal", Objective::Terminal { y: 0.3 }),
            ("crossing", Objective::Crossing { barrier: 0.3f64.exp() }),
        ];
        for (label, objective) in objectives {
            let at_zero = solver.value(&objective, &ControlFunction::zeros(grid)).unwrap();
            let values = symmetric_values((2.0 * at_zero / grid.horizon()).sqrt(), 21);
            let oracle = solver.oracle(&objective, 3, &values).unwrap().value;
            let opt = solver.minimize(&objective, &RateConfig::default()).unwrap().value;
            let ok = opt <= oracle && opt >= oracle * 0.95;
            all &= ok;
            lines.push(format!("{name}/{label}: {opt:.5} vs oracle {oracle:.5}"));
        }
    }
    check(all, lines.join("; "))
}

fn gradient_check() -> Check {
    let grid = Grid::new(64, 1.0).unwrap();
    let m = model(
        ScalarFunction::PowerGrowth { c: 0.2, beta: 1.0 },
        -0.5,
        KernelSpec::riemann_liouville(0.3, 1.0).unwrap(),
    );
    let solver = RateSolver::new(&m, &grid).unwrap();
    let objectives = [
        Objective::Pathwise(PathHypothesis::from_fn(grid, |t| 0.2 * t - 0.1 * t * t)),
        Objective::Terminal { y: 0.3 },
        Objective::Crossing { barrier: 0.3f64.exp() },
    ];
    let mut rng = replication_rng(99, 0);
    let mut worst: f64 = 0.0;
    for k in 0..20 {
        let objective = &objectives[k % objectives.len()];
        let mut fdot = vec![0.0; grid.cells()];
        fill_normals(&mut rng, &mut fdot);
        fdot.iter_mut().for_each(|v| *v *= 0.5);
        let control = ControlFunction::new(grid, fdot.clone()).unwrap();
        let g = solver.gradient(objective, &control).unwrap();
        let gmax = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut err: f64 = 0.0;
        for j in 0..fdot.len() {
            let h = 1e-5 * fdot[j].abs().max(1.0);
            let mut up = fdot.clone();
            up[j] += h;
            let mut down = fdot.clone();
            down[j] -= h;
            let vu = solver.value(objective, &ControlFunction::new(grid, up).unwrap()).unwrap();
            let vd = solver.value(objective, &ControlFunction::new(grid, down).unwrap()).unwrap();
            err = err.max(((vu - vd) / (2.0 * h) - g[j]).abs());
        }
        worst = worst.max(err / gmax);
    }
    check(worst <= 1e-4, format!("worst max|g_fd - g| / max|g| = {worst:.2e} over 20 points"))
}

fn exact_tail(s0: f64, eps: f64, y: f64) -> f64 {
    let sd = eps * s0;
    1.0 - Normal::new(-0.5 * sd * sd, sd).unwrap().cdf(y)
}

fn exact_law_slope() -> (Check, SlopeReport) {
    let m = model(ScalarFunction::Constant { c: 0.2 }, 0.0, KernelSpec::brownian(1.0).unwrap());
    let grid = Grid::new(16, 1.0).unwrap();
    let schedule = SpeedSchedule::new(SCHEDULE.to_vec()).unwrap();
    let report = ldp_slope(
        &m,
        &grid,
        &schedule,
        EventSpec::Terminal { y: 0.3 },
        1_000_000,
        9,
        &SlopeOptions::default(),
    )
    .unwrap();
    let (xs, ys): (Vec<f64>, Vec<f64>) = SCHEDULE
        .iter()
        .map(|&e| (1.0 / (e * e), exact_tail(0.2, e, 0.3).ln()))
        .unzip();
    let exact_slope = least_squares(&xs, &ys).unwrap().slope;
    let c = check(
        rel(report.slope, -1.125) <= 0.15 && rel(report.slope, exact_slope) <= 0.10,
        format!(
            "slope {:.4} vs -1.125 ({:.1}%), vs exact-law slope {exact_slope:.4} ({:.1}%)",
            report.slope,
            100.0 * rel(report.slope, -1.125),
            100.0 * rel(report.slope, exact_slope)
        ),
    );
    (c, report)
}

fn volterra_slope() -> (Check, SlopeReport) {
    let m = model(
        ScalarFunction::PowerGrowth { c: 0.2, beta: 1.0 },
        -0.5,
        KernelSpec::riemann_liouville(0.3, 1.0).unwrap(),
    );
    let grid = Grid::new(64, 1.0).unwrap();
    let schedule = SpeedSchedule::new(SCHEDULE.to_vec()).unwrap();
    let report = ldp_slope(
        &m,
        &grid,
        &schedule,
        EventSpec::Crossing { barrier: 0.25f64.exp() },
        1_000_000,
        10,
        &SlopeOptions::default(),
    )
    .unwrap();
    let c = check(
        report.rel_error <= 0.20,
        format!(
            "slope {:.4} vs -rate {:.4} (relative error {:.3})",
            report.slope, report.predicted, report.rel_error
        ),
    );
    (c, report)
}

fn approximation_proxy() -> (Check, Vec<McEstimate>) {
    // strong vol-of-vol and correlation so the gap is visible at δ = 0.05;
    // the grid is finer than every m
    let m = model(
        ScalarFunction::PowerGrowth { c: 1.5, beta: 1.0 },
        -0.8,
        KernelSpec::riemann_liouville(0.3, 1.0).unwrap(),
    );
    let grid = Grid::new(256, 1.0).unwrap();
    let estimates: Vec<McEstimate> = [4, 16, 64]
        .iter()
        .map(|&blocks| approx_gap_tail(&m, &grid, 0.3, blocks, 0.05, 200_000, 11).unwrap())
        .collect();
    let ok = estimates[0].n_hits > 0
        && estimates.windows(2).all(|w| w[1].p_hat <= w[0].p_hat || w[1].ci_lo <= w[0].ci_hi);
    let text: Vec<String> = estimates
        .iter()
        .zip([4, 16, 64])
        .map(|(e, b)| format!("m={b}: {:.4} [{:.4}, {:.4}]", e.p_hat, e.ci_lo, e.ci_hi))
        .collect();
    (check(ok, text.join(", ")), estimates)
}

fn artifacts(c9: &SlopeReport, c10: &SlopeReport, c11: &[McEstimate]) -> Vec<String> {
    vec![
        c9.to_csv(),
        c9.summary_json().to_string(),
        c10.to_csv(),
        c10.summary_json().to_string(),
        serde_json::to_string(c11).unwrap(),
    ]
}

fn main() {
    let mut failures = 0;
    let mut report = |id: usize, name: &str, limit: Duration, run: &mut dyn FnMut() -> Check| {
        let start = Instant::now();
        let c = run();
        let elapsed = start.elapsed();
        let passed = c.passed && elapsed < limit;
        if !passed {
            failures += 1;
        }
        println!(
            "{} {id:>2} {name}: {} ({:.1}s, limit {}s)",
            if passed { "PASS" } else { "FAIL" },
            c.detail,
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
    };
    let secs = Duration::from_secs;
    report(1, "kernel exactness", secs(1), &mut kernel_exactness);
    report(2, "fBM covariance quadrature", secs(30), &mut fbm_covariance);
    report(3, "modulus exponents", secs(30), &mut modulus_exponents);
    report(4, "frozen-volatility convergence", secs(10), &mut frozen_volatility_convergence);
    report(5, "terminal-rate closed form", secs(180), &mut terminal_closed_form);
    report(6, "crossing-rate closed form", secs(60), &mut crossing_closed_form);
    report(7, "optimizer vs oracle", secs(600), &mut optimizer_vs_oracle);
    report(8, "gradient check", secs(30), &mut gradient_check);

    let mut first = None;
    report(9, "exact-law LDP slope", secs(600), &mut || {
        let (c, r) = exact_law_slope();
        first = Some(r);
        c
    });
    let mut second = None;
    report(10, "Volterra LDP slope", secs(1200), &mut || {
        let (c, r) = volterra_slope();
        second = Some(r);
        c
    });
    let mut third = None;
    report(11, "frozen-volatility gap tail", secs(300), &mut || {
        let (c, e) = approximation_proxy();
        third = Some(e);
        c
    });
    report(12, "determinism", secs(2100), &mut || {
        let before = artifacts(first.as_ref().unwrap(), second.as_ref().unwrap(), third.as_ref().unwrap());
        let after = artifacts(&exact_law_slope().1, &volterra_slope().1, &approximation_proxy().1);
        let same = before.iter().zip(&after).filter(|(a, b)| a.as_bytes() == b.as_bytes()).count();
        check(same == before.len(), format!("{same}/{} artifacts byte-identical on rerun", before.len()))
    });
    if failures > 0 {
        println!("{failures} acceptance check(s) failed");
        std::process::exit(1);
    }
}
