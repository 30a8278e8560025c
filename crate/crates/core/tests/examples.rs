//! Worked examples checked against independent reference computations.

use approx::assert_relative_eq;

use adanorm::harness::{initial_point, run_sweep, summarize, B0Grid, EtaPolicy, SweepConfig};
use adanorm::linalg::median;
use adanorm::oracles::dense_sym_eig_max;
use adanorm::problems::{
    estimate_lipschitz, make_gaussian_least_squares, ProblemKind, ProblemSpec, QuadraticProblem,
};
use adanorm::theory::{lemma42_empirical_check, Lemma42Outcome};
use adanorm::{
    run, AlgorithmConfig, AlgorithmKind, GradientOracle, LeastSquaresProblem, Objective, OracleKind, RunOptions,
};

/// `F(x) = (1/2) sum_k scale_k x_k^2`.
struct DiagonalQuadratic {
    scales: Vec<f64>,
}

impl Objective for DiagonalQuadratic {
    fn dim(&self) -> usize {
        self.scales.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        0.5 * x.iter().zip(&self.scales).map(|(v, s)| s * v * v).sum::<f64>()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.scales).map(|(v, s)| s * v).collect()
    }

    fn f_star(&self) -> Option<f64> {
        Some(0.0)
    }

    fn description(&self) -> String {
        format!("diag{:?}/2", self.scales)
    }
}

fn sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn deterministic_run(
    problem: &dyn Objective,
    algo: AlgorithmKind,
    b0: f64,
    eta: f64,
    x0: &[f64],
    opts: &RunOptions,
) -> adanorm::RunTrace {
    run(
        problem,
        &mut GradientOracle::deterministic(),
        &AlgorithmConfig::new(algo, b0, eta),
        x0,
        opts,
    )
    .unwrap()
}

#[test]
fn initial_loss_matches_double_loop() {
    let p = make_gaussian_least_squares(50, 10, 7, true).unwrap();
    let x0 = initial_point(10, 7);
    assert!(x0.iter().all(|v| (0.0..1.0).contains(v)));
    let a = p.matrix();
    let y = p.targets();
    let mut total = 0.0;
    for i in 0..50 {
        let mut r = 0.0;
        for j in 0..10 {
            r += a[i * 10 + j] * x0[j];
        }
        total += (r - y[i]) * (r - y[i]);
    }
    assert_relative_eq!(p.value(&x0), total / 100.0, max_relative = 1e-13);
}

#[test]
fn lipschitz_matches_jacobi_on_gram() {
    let p = make_gaussian_least_squares(50, 10, 11, false).unwrap();
    let mut gram = vec![0.0; 100];
    for i in 0..50 {
        let row = p.row(i);
        for r in 0..10 {
            for c in 0..10 {
                gram[r * 10 + c] += row[r] * row[c] / 50.0;
            }
        }
    }
    let jacobi = dense_sym_eig_max(&gram, 10).unwrap();
    let power = estimate_lipschitz(&p, 1e-10).unwrap();
    assert_relative_eq!(power, jacobi, max_relative = 1e-8);
}

#[test]
fn adagrad_norm_accumulator_limit() {
    let p = QuadraticProblem::new(1, 1.0).unwrap();
    let iters = 100_000;
    let trace = deterministic_run(
        &p,
        AlgorithmKind::AdagradNorm,
        0.01,
        1.0,
        &[10.0],
        &RunOptions::every_step(200, vec![]),
    );
    let crossing = trace.checkpoints.iter().find(|c| c.b_value > 1.0).map(|c| c.iteration);
    assert!(crossing.is_some(), "b never exceeded eta * L");

    let long = deterministic_run(
        &p,
        AlgorithmKind::AdagradNorm,
        0.01,
        1.0,
        &[10.0],
        &RunOptions::new(iters, vec![iters], vec![]),
    );

    let (mut x, mut b) = (10.0f64, 0.01f64);
    let mut first_above = None;
    for j in 1..=2 * iters {
        b = (b * b + x * x).sqrt();
        x -= x / b;
        if first_above.is_none() && b > 1.0 {
            first_above = Some(j);
        }
    }
    assert_eq!(crossing, first_above);
    assert!((long.last().b_value - b).abs() < 1e-6, "{} vs {b}", long.last().b_value);
}

#[test]
fn coordinate_beats_norm_on_ill_conditioned_quadratic() {
    let p = DiagonalQuadratic {
        scales: vec![100.0, 1.0],
    };
    let x0 = [1.0, 1.0];
    let (b0, eta, eps) = (1e-3, 1.0, 1e-4);
    let opts = RunOptions::new(100_000, vec![], vec![eps]).stopping_at_targets();
    let norm_hit = deterministic_run(&p, AlgorithmKind::AdagradNorm, b0, eta, &x0, &opts).first_hit_for(eps);
    let coord_hit = deterministic_run(&p, AlgorithmKind::AdagradCoord, b0, eta, &x0, &opts).first_hit_for(eps);

    let reference = |per_coordinate: bool| {
        let mut x = x0.to_vec();
        let mut b = [b0, b0];
        for j in 0..=100_000u64 {
            let g = p.gradient(&x);
            if sq(&g) <= eps {
                return Some(j);
            }
            if per_coordinate {
                for k in 0..2 {
                    b[k] = (b[k] * b[k] + g[k] * g[k]).sqrt();
                    x[k] -= eta / b[k] * g[k];
                }
            } else {
                b[0] = (b[0] * b[0] + sq(&g)).sqrt();
                for k in 0..2 {
                    x[k] -= eta / b[0] * g[k];
                }
            }
        }
        None
    };
    assert_eq!(norm_hit, reference(false));
    assert_eq!(coord_hit, reference(true));
    assert!(coord_hit.unwrap() < norm_hit.unwrap(), "coord {coord_hit:?} norm {norm_hit:?}");
}

#[test]
fn wngrad_and_adagrad_norm_both_converge() {
    let p = make_gaussian_least_squares(50, 10, 3, true).unwrap();
    let x0 = initial_point(10, 3);
    let eta = p.value(&x0);
    let (b0, eps, iters) = (1.0, 1e-3, 20_000);
    let opts = RunOptions::new(iters, vec![iters], vec![eps]);
    let ada = deterministic_run(&p, AlgorithmKind::AdagradNorm, b0, eta, &x0, &opts);
    let wn = deterministic_run(&p, AlgorithmKind::Wngrad, b0, eta, &x0, &opts);

    let reference = |wngrad: bool| {
        let (mut x, mut b) = (x0.clone(), b0);
        for j in 0..=iters {
            let g = p.gradient(&x);
            let gsq = sq(&g);
            if gsq <= eps {
                return Some(j);
            }
            b = if wngrad { b + gsq / b } else { (b * b + gsq).sqrt() };
            x.iter_mut().zip(&g).for_each(|(xi, gi)| *xi -= eta / b * gi);
        }
        None
    };
    assert!(ada.first_hit_for(eps).is_some() && wn.first_hit_for(eps).is_some());
    assert_eq!(ada.first_hit_for(eps), reference(false));
    assert_eq!(wn.first_hit_for(eps), reference(true));
    assert_ne!(ada.last().loss, wn.last().loss);
}

#[test]
fn stochastic_least_squares_run_is_reproducible() {
    let spec = ProblemSpec {
        kind: ProblemKind::LeastSquares,
        m: 200,
        d: 100,
        seed: 5,
        consistent: true,
        curvature: None,
    };
    let once = || {
        let p = spec.build().unwrap();
        let x0 = initial_point(100, 5);
        let eta = p.value(&x0);
        let mut oracle = GradientOracle::new(OracleKind::MiniBatch { batch: 20 }, 99);
        run(
            &p,
            &mut oracle,
            &AlgorithmConfig::new(AlgorithmKind::AdagradNorm, 1e-3, eta),
            &x0,
            &RunOptions::new(5000, vec![10, 2000, 5000], vec![1e-3]),
        )
        .unwrap()
    };
    let (a, b) = (once(), once());
    assert!(a.first_hit_for(1e-3).is_some());
    assert_eq!(a.first_hit_for(1e-3), b.first_hit_for(1e-3));
    assert_eq!(a.checkpoints, b.checkpoints);
}

#[test]
fn pre_threshold_loss_bound_against_reference() {
    for curvature in [1.0, 4.0] {
        let p = QuadraticProblem::new(1, curvature).unwrap();
        let (b0, eta, x0) = (0.01, 1.0, 10.0);
        let trace = deterministic_run(
            &p,
            AlgorithmKind::AdagradNorm,
            b0,
            eta,
            &[x0],
            &RunOptions::every_step(500, vec![]),
        );
        let Lemma42Outcome::Checked { k0, lhs, rhs, holds } =
            lemma42_empirical_check(&trace, curvature, eta, b0, 0.0).unwrap()
        else {
            panic!("threshold never crossed for L={curvature}");
        };

        let (mut x, mut b) = (x0, b0);
        let mut history = vec![(0.5 * curvature * x * x, b)];
        while b < eta * curvature {
            let g = curvature * x;
            b = (b * b + g * g).sqrt();
            x -= eta / b * g;
            history.push((0.5 * curvature * x * x, b));
        }
        let ref_k0 = history.len() - 1;
        let (f_prev, b_prev) = history[ref_k0 - 1];
        let ref_rhs = history[0].0 + eta * eta * curvature / 2.0 * (1.0 + 2.0 * (b_prev / b0).ln());
        assert_eq!(k0 as usize, ref_k0);
        assert_relative_eq!(lhs, f_prev, max_relative = 1e-12);
        assert_relative_eq!(rhs, ref_rhs, max_relative = 1e-12);
        assert!(holds);
    }
}

fn desk_config(oracle: OracleKind, algorithms: &[AlgorithmKind], iters: u64, checkpoints: Vec<u64>) -> SweepConfig {
    SweepConfig {
        problem: ProblemSpec {
            kind: ProblemKind::LeastSquares,
            m: 200,
            d: 100,
            seed: 0,
            consistent: true,
            curvature: None,
        },
        oracle,
        algorithms: algorithms.iter().map(|&a| a.into()).collect(),
        b0_grid: B0Grid::log(1e-3, 1e4, 15),
        eta_policy: EtaPolicy::FromInitialLoss,
        iters,
        checkpoints,
        eps_targets: vec![],
        num_seeds: 3,
        base_seed: 0,
        out_path: None,
    }
}

#[test]
fn stochastic_sweep_divergence_threshold_and_robust_ranges() {
    let cfg = desk_config(
        OracleKind::MiniBatch { batch: 20 },
        &[
            AlgorithmKind::AdagradNorm,
            AlgorithmKind::AdagradCoord,
            AlgorithmKind::SgdConst,
            AlgorithmKind::SgdDecaySqrt,
        ],
        5000,
        vec![10, 2000, 5000],
    );
    let traces = run_sweep(&cfg).unwrap();
    assert_eq!(traces.len(), 4 * 15 * 3);
    assert!(traces
        .iter()
        .filter(|t| t.algorithm == AlgorithmKind::AdagradNorm)
        .all(|t| !t.status.is_diverged()));

    let grid = cfg.b0_grid.points();
    let sgd_fails = |b0: f64| {
        traces
            .iter()
            .filter(|t| t.algorithm == AlgorithmKind::SgdConst && t.b0 == b0)
            .any(|t| t.status.is_diverged() || t.last().grad_norm_sq > t.initial.grad_norm_sq)
    };
    let threshold_index = grid.iter().position(|&b0| !sgd_fails(b0)).expect("sgd never converged");
    assert!(threshold_index > 0);
    assert!(grid[..threshold_index].iter().all(|&b0| sgd_fails(b0)));

    let problem = cfg.problem.build().unwrap();
    let lipschitz = estimate_lipschitz(problem.as_least_squares().unwrap(), 1e-10).unwrap();
    let etas: Vec<f64> = traces.iter().map(|t| t.eta).collect();
    let eta_l = median(&etas) * lipschitz;
    let (below, above) = (grid[threshold_index - 1], grid[threshold_index]);
    assert!(above >= eta_l / 4.0 && below <= 4.0 * eta_l, "threshold in ({below}, {above}], eta*L={eta_l}");

    let summary = summarize(&traces);
    let range = |algo: AlgorithmKind| summary.robust_ranges.iter().find(|r| r.algorithm == algo).unwrap();
    let ada = range(AlgorithmKind::AdagradNorm);
    let sgd = range(AlgorithmKind::SgdConst);
    assert!(ada.strictly_contains(sgd), "{ada:?} vs {sgd:?}");
}

#[test]
fn deterministic_sweep_line_search_is_best_and_costliest() {
    let algorithms = [
        AlgorithmKind::AdagradNorm,
        AlgorithmKind::AdagradCoord,
        AlgorithmKind::SgdConst,
        AlgorithmKind::SgdDecaySqrt,
        AlgorithmKind::Wngrad,
        AlgorithmKind::GdLinesearch,
    ];
    let cfg = desk_config(OracleKind::Deterministic, &algorithms, 200, vec![50, 100, 200]);
    let traces = run_sweep(&cfg).unwrap();
    let grid_best = |algo: AlgorithmKind, it: u64| {
        traces
            .iter()
            .filter(|t| t.algorithm == algo)
            .map(|t| t.checkpoint(it).unwrap().grad_norm_sq)
            .fold(f64::INFINITY, f64::min)
    };
    let evals = |algo: AlgorithmKind| -> u64 {
        traces.iter().filter(|t| t.algorithm == algo).map(|t| t.function_evals).sum()
    };
    for it in [50, 100, 200] {
        let ls = grid_best(AlgorithmKind::GdLinesearch, it);
        for &algo in &algorithms[..5] {
            assert!(ls <= grid_best(algo, it), "{algo} beat line search at {it}");
        }
    }
    for &algo in &algorithms[..5] {
        assert!(evals(AlgorithmKind::GdLinesearch) > evals(algo));
    }
}

#[test]
fn least_squares_gradient_is_exact_at_planted_solution() {
    let p: LeastSquaresProblem = make_gaussian_least_squares(30, 5, 2, true).unwrap();
    let x_star = p.x_star().unwrap().to_vec();
    assert!(sq(&p.gradient(&x_star)) < 1e-24);
    assert!(p.value(&x_star) < 1e-24);
}
