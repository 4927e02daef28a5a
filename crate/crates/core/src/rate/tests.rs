use super::*;
use crate::kernels::KernelSpec;
use crate::model::ScalarFunction;
use crate::quadrature::{integrate, QuadConfig};
use proptest::prelude::*;

const ZERO: ScalarFunction = ScalarFunction::Constant { c: 0.0 };

fn constant_model(s0: f64, rho: f64) -> ModelSpec {
    ModelSpec::new(
        ZERO,
        ScalarFunction::Constant { c: s0 },
        rho,
        0.0,
        1.0,
        KernelSpec::brownian(1.0).unwrap(),
    )
    .unwrap()
}

fn rough_model(rho: f64) -> ModelSpec {
    ModelSpec::new(
        ScalarFunction::AffineFloor { a: 0.05, b: 0.1, floor: -1.0 },
        ScalarFunction::PowerGrowth { c: 0.2, beta: 1.0 },
        rho,
        0.0,
        1.0,
        KernelSpec::riemann_liouville(0.3, 1.0).unwrap(),
    )
    .unwrap()
}

fn random_fdot(n: usize, seed: u64, amp: f64) -> Vec<f64> {
    let mut v = vec![0.0; n];
    fill_normals(&mut replication_rng(seed, 0), &mut v);
    v.iter_mut().for_each(|x| *x *= amp);
    v
}

fn weights(model: &ModelSpec, n: usize) -> CellWeights {
    CellWeights::build(model.kernel(), &Grid::new(n, model.horizon()).unwrap()).unwrap()
}

#[test]
fn psi_of_zero_and_constant_sigma() {
    let grid = Grid::new(32, 1.0).unwrap();
    let m = rough_model(-0.5);
    let w = weights(&m, 32);
    assert!(psi(&m, &ControlFunction::zeros(grid), &w).unwrap().iter().all(|v| *v == 0.0));
    let c = constant_model(0.3, 0.2);
    let wb = weights(&c, 32);
    let ctrl = ControlFunction::new(grid, random_fdot(32, 1, 1.0)).unwrap();
    let p = psi(&c, &ctrl, &wb).unwrap();
    for (a, f) in p.iter().zip(ctrl.path()) {
        assert!((a - 0.3 * f).abs() < 1e-14);
    }
}

#[test]
fn psi_m_properties() {
    let n = 64;
    let grid = Grid::new(n, 1.0).unwrap();
    let m = rough_model(-0.5);
    let w = weights(&m, n);
    let ctrl = ControlFunction::new(grid, random_fdot(n, 2, 1.5)).unwrap();
    let f = ctrl.path();
    let g = w.lift(ctrl.fdot());
    assert!(psi_m(&m, 4, &vec![0.0; n + 1], &g, &grid).unwrap().iter().all(|v| *v == 0.0));
    let c = constant_model(0.3, 0.2);
    for mm in [1, 2, 8, 64] {
        for (a, b) in psi_m(&c, mm, &f, &g, &grid).unwrap().iter().zip(&f) {
            assert!((a - 0.3 * b).abs() < 1e-14);
        }
    }
    // frozen left-point quadrature of σ(f̂(⌊ms/T⌋T/m)) ḟ(s)
    let mm = 8;
    let block = n / mm;
    let got = psi_m(&m, mm, &f, &g, &grid).unwrap();
    let mut acc = 0.0;
    for k in 0..n {
        acc += m.sigma().eval(g[(k / block) * block]) * ctrl.fdot()[k] * grid.step();
        assert!((got[k + 1] - acc).abs() < 1e-13);
    }
    let full = psi(&m, &ctrl, &w).unwrap();
    for (a, b) in psi_m(&m, n, &f, &g, &grid).unwrap().iter().zip(&full) {
        assert!((a - b).abs() < 1e-13);
    }
    assert!(psi_m(&m, 5, &f, &g, &grid).is_err());
}

#[test]
fn psi_m_converges_to_psi() {
    let n = 1024;
    let grid = Grid::new(n, 1.0).unwrap();
    let m = ModelSpec::new(
        ZERO,
        ScalarFunction::PowerGrowth { c: 1.0, beta: 1.0 },
        -0.5,
        0.0,
        1.0,
        KernelSpec::riemann_liouville(0.3, 1.0).unwrap(),
    )
    .unwrap();
    let w = weights(&m, n);
    for seed in 0..5 {
        let ctrl = ControlFunction::new(grid, random_fdot(n, seed, 1.0)).unwrap();
        let full = psi(&m, &ctrl, &w).unwrap();
        let f = ctrl.path();
        let g = w.lift(ctrl.fdot());
        let gaps: Vec<f64> = [4, 16, 64, 256]
            .iter()
            .map(|&mm| {
                psi_m(&m, mm, &f, &g, &grid)
                    .unwrap()
                    .iter()
                    .zip(&full)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        assert!(gaps[3] < gaps[0], "{gaps:?}");
    }
}

#[test]
fn conditional_rate_examples() {
    let grid = Grid::new(50, 1.0).unwrap();
    let m = ModelSpec::new(
        ScalarFunction::Constant { c: 0.1 },
        ScalarFunction::Constant { c: 0.2 },
        0.6,
        0.0,
        1.0,
        KernelSpec::brownian(1.0).unwrap(),
    )
    .unwrap();
    let phi = vec![0.0; 51];
    let x = PathHypothesis::from_fn(grid, |t| 0.1 * t);
    assert!(conditional_rate(&m, &x, &phi).unwrap().abs() < 1e-24);
    let c = constant_model(0.2, 0.6);
    let x = PathHypothesis::from_fn(grid, |t| c.rho_bar() * 0.2 * t);
    assert!((conditional_rate(&c, &x, &phi).unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn conditional_rate_matches_fine_quadrature() {
    let m = rough_model(-0.3);
    let n = 4096;
    let grid = Grid::new(n, 1.0).unwrap();
    let phi_fn = |t: f64| 0.8 * (2.0 * std::f64::consts::PI * t).sin();
    let x = PathHypothesis::from_fn(grid, |t| 0.2 * t + 0.3 * t * t);
    let phi: Vec<f64> = grid.nodes().into_iter().map(phi_fn).collect();
    let got = conditional_rate(&m, &x, &phi).unwrap();
    let rb = m.rho_bar();
    let oracle = integrate(
        |t| {
            let p = phi_fn(t);
            let r = (0.2 + 0.6 * t - m.mu().eval(p)) / (rb * m.sigma().eval(p));
            0.5 * r * r
        },
        0.0,
        1.0,
        QuadConfig::default(),
    )
    .unwrap();
    assert!((got - oracle).abs() < 1e-3 * oracle, "{got} vs {oracle}");
}

#[test]
fn energy_examples() {
    let grid = Grid::new(40, 1.0).unwrap();
    let m = rough_model(-0.5);
    let w = weights(&m, 40);
    let zero_mu = m.clone();
    let zm = ModelSpec::new(ZERO, *zero_mu.sigma(), -0.5, 0.0, 1.0, m.kernel().clone()).unwrap();
    let x0 = PathHypothesis::from_fn(grid, |_| 0.0);
    assert_eq!(energy(&zm, &ControlFunction::zeros(grid), &x0, &w).unwrap(), 0.0);

    // ρ = 0: ½‖f‖² + J(x | f̂)
    let m0 = m.with_rho(0.0).unwrap();
    let ctrl = ControlFunction::new(grid, random_fdot(40, 3, 0.7)).unwrap();
    let x = PathHypothesis::from_fn(grid, |t| 0.3 * t - 0.1 * t * t);
    let phi = w.lift(ctrl.fdot());
    let lhs = energy(&m0, &ctrl, &x, &w).unwrap();
    let rhs = ctrl.energy() + conditional_rate(&m0, &x, &phi).unwrap();
    assert!((lhs - rhs).abs() < 1e-13);

    // closed form for constant σ, ḟ ≡ c, ẋ ≡ v
    let (s0, rho, c, v) = (0.2, 0.5, 0.7, 0.3);
    let cm = constant_model(s0, rho);
    let wb = weights(&cm, 40);
    let rb2 = 1.0 - rho * rho;
    let expect = 0.5 * c * c + (v - rho * s0 * c).powi(2) / (2.0 * rb2 * s0 * s0);
    let got = energy(
        &cm,
        &ControlFunction::constant(grid, c),
        &PathHypothesis::from_fn(grid, |t| v * t),
        &wb,
    )
    .unwrap();
    assert!((got - expect).abs() < 1e-12);
}

#[test]
fn energy_equals_shifted_conditional_rate() {
    let n = 64;
    let grid = Grid::new(n, 1.0).unwrap();
    let m = rough_model(-0.6);
    let w = weights(&m, n);
    for seed in 0..10 {
        let ctrl = ControlFunction::new(grid, random_fdot(n, seed, 1.2)).unwrap();
        let x = PathHypothesis::from_fn(grid, |t| 0.4 * t + 0.1 * (5.0 * t).sin());
        let h = energy(&m, &ctrl, &x, &w).unwrap();
        let phi = w.lift(ctrl.fdot());
        let p = psi(&m, &ctrl, &w).unwrap();
        let shifted: Vec<f64> = x.values().iter().zip(&p).map(|(a, b)| a - m.rho() * b).collect();
        let xs = PathHypothesis::new(grid, shifted).unwrap();
        let via_psi = ctrl.energy() + conditional_rate(&m, &xs, &phi).unwrap();
        assert!((h - via_psi).abs() < 1e-10);
        let pm = psi_m(&m, n, &ctrl.path(), &phi, &grid).unwrap();
        let shifted: Vec<f64> = x.values().iter().zip(&pm).map(|(a, b)| a - m.rho() * b).collect();
        let xm = PathHypothesis::new(grid, shifted).unwrap();
        let via_psi_m = ctrl.energy() + conditional_rate(&m, &xm, &phi).unwrap();
        assert!((h - via_psi_m).abs() < 1e-10);
    }
}

#[test]
fn frozen_energy_approaches_energy() {
    let n = 512;
    let grid = Grid::new(n, 1.0).unwrap();
    let m = rough_model(-0.7);
    let w = weights(&m, n);
    let x = PathHypothesis::from_fn(grid, |t| 0.3 * t);
    for seed in 0..5 {
        let ctrl = ControlFunction::new(grid, random_fdot(n, seed + 20, 1.0)).unwrap();
        let h = energy(&m, &ctrl, &x, &w).unwrap();
        let phi = w.lift(ctrl.fdot());
        let gap = |mm: usize| {
            let pm = psi_m(&m, mm, &ctrl.path(), &phi, &grid).unwrap();
            let shifted: Vec<f64> = x.values().iter().zip(&pm).map(|(a, b)| a - m.rho() * b).collect();
            let xm = PathHypothesis::new(grid, shifted).unwrap();
            (ctrl.energy() + conditional_rate(&m, &xm, &phi).unwrap() - h).abs()
        };
        assert!(gap(128) < gap(2), "{} {}", gap(128), gap(2));
        assert!(gap(n) < 1e-12);
    }
}

fn relative_fd_error(solver: &RateSolver, obj: &Objective, fdot: Vec<f64>) -> f64 {
    let grid = *solver.grid();
    let ctrl = ControlFunction::new(grid, fdot.clone()).unwrap();
    let g = solver.gradient(obj, &ctrl).unwrap();
    let scale = fdot.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let h = 1e-5 * scale;
    let mut fd = vec![0.0; fdot.len()];
    for k in 0..fdot.len() {
        let mut up = fdot.clone();
        up[k] += h;
        let mut down = fdot.clone();
        down[k] -= h;
        let vu = solver.value(obj, &ControlFunction::new(grid, up).unwrap()).unwrap();
        let vd = solver.value(obj, &ControlFunction::new(grid, down).unwrap()).unwrap();
        fd[k] = (vu - vd) / (2.0 * h);
    }
    let diff: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = g.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / norm
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let n = 24;
    let grid = Grid::new(n, 1.0).unwrap();
    for m in [rough_model(-0.5), rough_model(0.4)] {
        let solver = RateSolver::new(&m, &grid).unwrap();
        let objs = [
            Objective::Pathwise(PathHypothesis::from_fn(grid, |t| 0.3 * t + 0.05 * t * t)),
            Objective::Terminal { y: 0.3 },
            Objective::Crossing { barrier: 0.25f64.exp() },
        ];
        for obj in &objs {
            for seed in 0..4 {
                let err = relative_fd_error(&solver, obj, random_fdot(n, seed + 100, 0.8));
                assert!(err < 1e-4, "{obj:?}: {err}");
            }
        }
    }
}

fn cfg() -> RateConfig {
    RateConfig::default()
}

#[test]
fn pathwise_rate_examples() {
    let grid = Grid::new(32, 1.0).unwrap();
    let m = ModelSpec::new(ZERO, ScalarFunction::PowerGrowth { c: 0.2, beta: 1.0 }, -0.5, 0.0, 1.0,
        KernelSpec::riemann_liouville(0.3, 1.0).unwrap()).unwrap();
    let r = pathwise_rate(&m, &PathHypothesis::from_fn(grid, |_| 0.0), &cfg()).unwrap();
    assert!(r.value.abs() < 1e-12);
    assert!(r.argmin.fdot().iter().all(|v| v.abs() < 1e-6));
    assert!(r.t_star.is_none());
    for rho in [0.0, 0.5, -0.5] {
        let (s0, v) = (0.2, 0.3);
        let r = pathwise_rate(&constant_model(s0, rho), &PathHypothesis::from_fn(grid, |t| v * t), &cfg())
            .unwrap();
        let expect = v * v / (2.0 * s0 * s0);
        assert!((r.value - expect).abs() < 1e-9, "{rho}: {}", r.value);
        assert!(r.converged);
        assert!(r.fd_error.unwrap() < 1e-5);
    }
}

#[test]
fn terminal_rate_closed_form_and_zero_drift_point() {
    let grid = Grid::new(64, 1.0).unwrap();
    for rho in [0.0, 0.5, -0.5] {
        let r = terminal_rate(&constant_model(0.2, rho), 0.3, &grid, &cfg()).unwrap();
        assert!((r.value - 1.125).abs() < 1e-8, "{rho}: {}", r.value);
        assert_eq!(r.t_star, Some(1.0));
    }
    let m = rough_model(-0.5);
    let y = m.mu().eval(0.0) * m.horizon();
    let r = terminal_rate(&m, y, &grid, &cfg()).unwrap();
    assert!(r.value.abs() < 1e-12);
    assert!(r.argmin.fdot().iter().all(|v| v.abs() < 1e-6));
}

#[test]
fn terminal_rate_uncorrelated_matches_straight_line_search() {
    // ρ = 0, constant σ: contraction over terminal-pinned straight lines
    let grid = Grid::new(32, 1.0).unwrap();
    let m = constant_model(0.25, 0.0);
    let y = 0.4;
    let term = terminal_rate(&m, y, &grid, &cfg()).unwrap();
    let line = pathwise_rate(&m, &PathHypothesis::from_fn(grid, |t| y * t), &cfg()).unwrap();
    assert!((term.value - line.value).abs() < 1e-9);
    // bent paths with the same endpoint are never cheaper
    for bend in [-0.2, 0.1, 0.3] {
        let p = PathHypothesis::from_fn(grid, |t| y * t + bend * t * (1.0 - t));
        assert!(pathwise_rate(&m, &p, &cfg()).unwrap().value >= term.value - 1e-9);
    }
}

#[test]
fn crossing_rate_closed_form() {
    let grid = Grid::new(64, 1.0).unwrap();
    for rho in [0.0, -0.5] {
        let r = crossing_rate(&constant_model(0.2, rho), 0.3f64.exp(), &grid, &cfg()).unwrap();
        assert!((r.value - 1.125).abs() < 1e-8, "{}", r.value);
        assert_eq!(r.t_star, Some(1.0));
    }
    let m = constant_model(0.2, 0.0);
    let near = crossing_rate(&m, 1e-4f64.exp(), &grid, &cfg()).unwrap();
    assert!(near.value < 1e-6);
    assert!(crossing_rate(&m, 1.0, &grid, &cfg()).is_err());
    assert!(crossing_rate(&m, 0.5, &grid, &cfg()).is_err());
}

#[test]
fn crossing_rate_nonincreasing_in_horizon() {
    let base = ModelSpec::new(ZERO, ScalarFunction::PowerGrowth { c: 0.2, beta: 1.0 }, -0.5, 0.0, 2.0,
        KernelSpec::riemann_liouville(0.3, 2.0).unwrap()).unwrap();
    let mut last = f64::INFINITY;
    for t in [0.5, 1.0, 2.0] {
        let m = base.with_horizon(t).unwrap();
        let grid = Grid::new(32, t).unwrap();
        let v = crossing_rate(&m, 0.25f64.exp(), &grid, &cfg()).unwrap().value;
        assert!(v <= last * (1.0 + 1e-3), "{t}: {v} > {last}");
        last = v;
    }
}

#[test]
fn contraction_inequalities() {
    let grid = Grid::new(48, 1.0).unwrap();
    let m = ModelSpec::new(ZERO, ScalarFunction::PowerGrowth { c: 0.2, beta: 1.0 }, -0.5, 0.0, 1.0,
        KernelSpec::riemann_liouville(0.3, 1.0).unwrap()).unwrap();
    let solver = RateSolver::new(&m, &grid).unwrap();
    let y = 0.25;
    let term = solver.terminal(y, &cfg()).unwrap();
    for shape in [0.0, 0.5, -0.5] {
        let x = PathHypothesis::from_fn(grid, |t| y * t + shape * t * (1.0 - t));
        let p = solver.pathwise(&x, &cfg()).unwrap();
        assert!(term.value <= p.value + 1e-6, "{} > {}", term.value, p.value);
    }
    let cross = solver.crossing(y.exp(), &cfg()).unwrap();
    assert!(cross.value <= term.value + 1e-6);
}

#[test]
fn oracle_examples() {
    let grid = Grid::new(30, 1.0).unwrap();
    let m = constant_model(0.2, 0.0);
    let vals = symmetric_values(2.0, 41);
    let o = oracle_rate(&m, &Objective::Terminal { y: 0.3 }, &grid, 3, &vals).unwrap();
    assert!(o.value >= 1.125 - 1e-12 && o.value <= 1.125 * 1.05, "{}", o.value);
    let o = oracle_rate(&m, &Objective::Crossing { barrier: 0.3f64.exp() }, &grid, 3, &vals).unwrap();
    assert!(o.value >= 1.125 - 1e-12 && o.value <= 1.125 * 1.05);
    let o = oracle_rate(&m, &Objective::Pathwise(PathHypothesis::from_fn(grid, |_| 0.0)), &grid, 2, &vals)
        .unwrap();
    assert_eq!(o.value, 0.0);
    assert!(oracle_rate(&m, &Objective::Terminal { y: 0.3 }, &grid, 5, &vals).is_err());
}

#[test]
fn optimizer_beats_oracle() {
    let grid = Grid::new(24, 1.0).unwrap();
    let m = ModelSpec::new(ZERO, ScalarFunction::PowerGrowth { c: 0.3, beta: 1.0 }, -0.5, 0.0, 1.0,
        KernelSpec::riemann_liouville(0.3, 1.0).unwrap()).unwrap();
    let solver = RateSolver::new(&m, &grid).unwrap();
    let vals = symmetric_values(3.0, 13);
    for obj in [
        Objective::Terminal { y: 0.3 },
        Objective::Crossing { barrier: 0.3f64.exp() },
        Objective::Pathwise(PathHypothesis::from_fn(grid, |t| 0.3 * t)),
    ] {
        let o = solver.oracle(&obj, 3, &vals).unwrap();
        let r = solver.minimize(&obj, &cfg()).unwrap();
        assert!(r.value <= o.value + 1e-9, "{obj:?}: {} > {}", r.value, o.value);
        assert!(r.converged);
    }
}

#[test]
fn multistarts_are_deterministic() {
    let grid = Grid::new(32, 1.0).unwrap();
    let m = rough_model(-0.5);
    let a = terminal_rate(&m, 0.3, &grid, &cfg()).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let b = pool.install(|| terminal_rate(&m, 0.3, &grid, &cfg()).unwrap());
    assert_eq!(a, b);
    assert_eq!(a.start_values.len(), 8);
}

#[test]
fn w_control_shifts_mean_to_target() {
    // constant σ, ρ = 0: ẏ = y / (σ0 T) moves E[Z_T] to y
    let grid = Grid::new(16, 1.0).unwrap();
    let r = terminal_rate(&constant_model(0.2, 0.0), 0.3, &grid, &cfg()).unwrap();
    for v in &r.w_control {
        assert!((v - 0.3 / 0.2).abs() < 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn energy_is_nonnegative(seed in 0u64..1000, amp in 0.0f64..3.0, v in -1.0f64..1.0, rho in -0.9f64..0.9) {
        let grid = Grid::new(16, 1.0).unwrap();
        let m = rough_model(rho);
        let w = weights(&m, 16);
        let ctrl = ControlFunction::new(grid, random_fdot(16, seed, amp)).unwrap();
        let x = PathHypothesis::from_fn(grid, |t| v * t);
        prop_assert!(energy(&m, &ctrl, &x, &w).unwrap() >= 0.0);
    }
}
