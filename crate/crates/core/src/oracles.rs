//! Independent verification machinery.
//!
//! Nothing here calls into the step rules: gradients are checked against
//! finite differences, mini-batch means against exhaustive subset
//! enumeration, power iteration against cyclic Jacobi, and noise levels
//! against Monte Carlo averages.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, norm, norm_sq};
use crate::problems::{
    estimate_lipschitz, make_gaussian_least_squares, make_log_smooth_problem, uniform_initial_point,
    GradientOracle, LeastSquaresProblem, Objective, OracleKind, QuadraticProblem,
};
use crate::theory::{lemma41_check, lemma_logsum_check, escape_steps};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub samples: u64,
    pub tolerance: f64,
    pub passed: bool,
    /// Worst offenders, most severe first.
    pub details: Vec<String>,
}

impl CheckReport {
    fn from_errors(name: impl Into<String>, tolerance: f64, errors: Vec<(f64, f64, String)>) -> Self {
        let samples = errors.len() as u64;
        let max_abs_err = errors.iter().map(|e| e.0).fold(0.0, f64::max);
        let max_rel_err = errors.iter().map(|e| e.1).fold(0.0, f64::max);
        let mut worst: Vec<_> = errors.into_iter().filter(|e| e.1 > 0.0).collect();
        worst.sort_by(|a, b| b.1.total_cmp(&a.1));
        let details = worst.into_iter().take(5).map(|e| e.2).collect();
        Self {
            name: name.into(),
            max_abs_err,
            max_rel_err,
            samples,
            tolerance,
            passed: max_rel_err <= tolerance,
            details,
        }
    }
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 0.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Central differences along random unit directions.
///
/// Relative error is `|fd - <grad, u>| / (1 + |<grad, u>|)`.
pub fn fd_gradient_check(
    problem: &dyn Objective,
    points: &[Vec<f64>],
    h: f64,
    tol: f64,
    seed: u64,
) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = problem.dim();
    let directions: Vec<Vec<f64>> = points.iter().map(|_| random_unit(&mut rng, d)).collect();
    fd_gradient_check_along(problem, points, &directions, h, tol)
}

/// As [`fd_gradient_check`] with caller-chosen directions.
pub fn fd_gradient_check_along(
    problem: &dyn Objective,
    points: &[Vec<f64>],
    directions: &[Vec<f64>],
    h: f64,
    tol: f64,
) -> Result<CheckReport> {
    if !(h > 0.0) || !(tol > 0.0) {
        return Err(invalid("fd_gradient_check needs h > 0 and tol > 0"));
    }
    if points.len() != directions.len() {
        return Err(invalid("one direction per point"));
    }
    let errors = points
        .iter()
        .zip(directions)
        .enumerate()
        .map(|(i, (x, u))| {
            let plus: Vec<f64> = x.iter().zip(u).map(|(a, b)| a + h * b).collect();
            let minus: Vec<f64> = x.iter().zip(u).map(|(a, b)| a - h * b).collect();
            let fd = (problem.value(&plus) - problem.value(&minus)) / (2.0 * h);
            let analytic = dot(&problem.gradient(x), u);
            let abs = (fd - analytic).abs();
            let rel = abs / (1.0 + analytic.abs());
            (abs, rel, format!("point {i}: fd={fd:e} analytic={analytic:e}"))
        })
        .collect();
    Ok(CheckReport::from_errors(
        format!("fd_gradient[{}]", problem.description()),
        tol,
        errors,
    ))
}

fn for_each_subset(m: usize, n: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(start: usize, m: usize, n: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if cur.len() == n {
            f(cur);
            return;
        }
        for i in start..m {
            if m - i < n - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, m, n, cur, f);
            cur.pop();
        }
    }
    rec(0, m, n, &mut Vec::with_capacity(n), f);
}

/// Averages the size-`n` mini-batch gradient over all `C(m, n)` row subsets.
pub fn minibatch_expectation_check(problem: &LeastSquaresProblem, n: usize, x: &[f64]) -> Result<CheckReport> {
    const MAX_ROWS: usize = 8;
    const TOL: f64 = 1e-12;
    let m = problem.rows();
    if m > MAX_ROWS {
        return Err(Error::Precondition(format!(
            "subset enumeration limited to m <= {MAX_ROWS}, got {m}"
        )));
    }
    if n == 0 || n > m {
        return Err(invalid(format!("batch size {n} outside [1, {m}]")));
    }
    let d = problem.cols();
    let mut sum = vec![0.0; d];
    let mut count = 0u64;
    for_each_subset(m, n, &mut |rows| {
        // Per-row residual form, independent of the oracle's batch code.
        for &i in rows {
            let row = problem.row(i);
            let r = dot(row, x) - problem.targets()[i];
            for (s, a) in sum.iter_mut().zip(row) {
                *s += r * a / n as f64;
            }
        }
        count += 1;
    });
    let full = problem.gradient(x);
    let errors = sum
        .iter()
        .zip(&full)
        .enumerate()
        .map(|(k, (s, g))| {
            let mean = s / count as f64;
            let abs = (mean - g).abs();
            (abs, abs / (1.0 + g.abs()), format!("coord {k}: mean={mean:e} full={g:e}"))
        })
        .collect();
    let mut report = CheckReport::from_errors(format!("minibatch_expectation[m={m},n={n}]"), TOL, errors);
    report.samples = count;
    Ok(report)
}

/// Largest eigenvalue of a symmetric `k x k` matrix (row-major) by cyclic Jacobi rotations.
pub fn dense_sym_eig_max(s: &[f64], k: usize) -> Result<f64> {
    const MAX_K: usize = 64;
    if k == 0 || k > MAX_K {
        return Err(invalid(format!("dense_sym_eig_max supports 1 <= k <= {MAX_K}")));
    }
    if s.len() != k * k {
        return Err(invalid("matrix has the wrong number of entries"));
    }
    let scale = s.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    for i in 0..k {
        for j in 0..i {
            if (s[i * k + j] - s[j * k + i]).abs() > 1e-12 * scale {
                return Err(invalid(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    let mut a = s.to_vec();
    let frob = norm(&a);
    let off = |a: &[f64]| -> f64 {
        let mut acc = 0.0;
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    acc += a[i * k + j] * a[i * k + j];
                }
            }
        }
        acc.sqrt()
    };
    for _sweep in 0..100 {
        if off(&a) <= 1e-12 * frob.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..k {
            for q in p + 1..k {
                let apq = a[p * k + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * k + p];
                let aqq = a[q * k + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for r in 0..k {
                    let arp = a[r * k + p];
                    let arq = a[r * k + q];
                    a[r * k + p] = c * arp - sn * arq;
                    a[r * k + q] = sn * arp + c * arq;
                }
                for r in 0..k {
                    let apr = a[p * k + r];
                    let aqr = a[q * k + r];
                    a[p * k + r] = c * apr - sn * aqr;
                    a[q * k + r] = sn * apr + c * aqr;
                }
            }
        }
    }
    Ok((0..k).map(|i| a[i * k + i]).fold(f64::NEG_INFINITY, f64::max))
}

/// `A^T A / m` formed explicitly.
pub fn gram_matrix(problem: &LeastSquaresProblem) -> Vec<f64> {
    let (m, d) = (problem.rows(), problem.cols());
    let mut g = vec![0.0; d * d];
    for i in 0..m {
        let row = problem.row(i);
        for p in 0..d {
            for q in 0..d {
                g[p * d + q] += row[p] * row[q];
            }
        }
    }
    g.iter_mut().for_each(|v| *v /= m as f64);
    g
}

/// Monte Carlo estimate of `E ||G - grad F||^2`.
///
/// Gaussian oracles pass when the mean is within 5% of `sigma^2` (exactly 0
/// when `sigma = 0`); mini-batch variance is reported and always passes.
/// Draws run in parallel, each a pure function of `(seed, draw index)`.
pub fn noise_variance_check(
    oracle: &GradientOracle,
    problem: &dyn Objective,
    x: &[f64],
    draws: u64,
) -> Result<CheckReport> {
    const TOL: f64 = 0.05;
    if draws < 10_000 {
        return Err(invalid("noise_variance_check needs at least 10^4 draws"));
    }
    oracle.validate_for(problem)?;
    let exact = problem.gradient(x);
    let start = oracle.draw_counter();
    let deviations: Vec<f64> = (0..draws)
        .into_par_iter()
        .map(|k| -> Result<f64> {
            let g = oracle.sample_at(problem, x, start + k)?;
            Ok(g.iter().zip(&exact).map(|(a, b)| (a - b) * (a - b)).sum())
        })
        .collect::<Result<_>>()?;
    let mean = deviations.iter().sum::<f64>() / draws as f64;
    let (name, abs, rel) = match oracle.kind {
        OracleKind::AdditiveGaussian { sigma } => {
            let s2 = sigma * sigma;
            let abs = (mean - s2).abs();
            let rel = if s2 == 0.0 { abs } else { abs / s2 };
            (format!("noise_variance[gauss sigma={sigma}]"), abs, rel)
        }
        OracleKind::Deterministic => ("noise_variance[deterministic]".to_string(), mean, mean),
        OracleKind::MiniBatch { batch } => (format!("noise_variance[minibatch n={batch}]"), 0.0, 0.0),
    };
    Ok(CheckReport {
        name,
        max_abs_err: abs,
        max_rel_err: rel,
        samples: draws,
        tolerance: TOL,
        passed: rel <= TOL,
        details: vec![format!("empirical mean ||G - grad F||^2 = {mean:e}")],
    })
}

/// Which `check` suite to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Grad,
    Lemmas,
    Oracles,
    All,
}

impl Suite {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "grad" => Ok(Self::Grad),
            "lemmas" => Ok(Self::Lemmas),
            "oracles" => Ok(Self::Oracles),
            "all" => Ok(Self::All),
            _ => Err(invalid(format!("unknown suite `{s}`"))),
        }
    }
}

fn uniform_points(d: usize, count: usize, lo: f64, hi: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..d).map(|_| rng.random_range(lo..hi)).collect())
        .collect()
}

fn grad_suite() -> Result<Vec<CheckReport>> {
    const H: f64 = 1e-5;
    const TOL: f64 = 1e-6;
    let mut out = Vec::new();
    for d in [1, 10] {
        let p = make_log_smooth_problem(d)?;
        out.push(fd_gradient_check(&p, &uniform_points(d, 100, -3.0, 3.0, 1), H, TOL, 2)?);
    }
    let q = QuadraticProblem::new(3, 4.0)?;
    out.push(fd_gradient_check(&q, &uniform_points(3, 100, -3.0, 3.0, 3), H, TOL, 4)?);
    let ls = make_gaussian_least_squares(50, 10, 7, true)?;
    out.push(fd_gradient_check(&ls, &uniform_points(10, 100, 0.0, 1.0, 5), H, TOL, 6)?);
    Ok(out)
}

/// Random sequences with `a_1 >= 1` built from scaled half-normal draws.
pub fn random_logsum_sequence(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let len = rng.random_range(1..=100usize);
    let sigma = 10f64.powf(rng.random_range(-2.0..2.0));
    let mut a: Vec<f64> = (0..len)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal).abs())
        .collect();
    if a[0] == 0.0 {
        a[0] = 1.0;
    } else if a[0] < 1.0 {
        let scale = 1.0 / a[0];
        a.iter_mut().for_each(|v| *v *= scale);
        a[0] = 1.0;
    }
    a
}

/// Random `(b0, C, eps, a)` for the escape lemma, sized to exactly `N` terms.
pub fn random_escape_instance(rng: &mut ChaCha8Rng) -> (f64, f64, f64, Vec<f64>) {
    let b0 = 10f64.powf(rng.random_range(-2.0..1.0));
    let c = 10f64.powf(rng.random_range(-1.0..1.0));
    let eps = 10f64.powf(rng.random_range(-2.0..0.0));
    let n = escape_steps(b0, c, eps) as usize;
    // Terms straddle eps so both disjuncts get exercised.
    let level = eps * 10f64.powf(rng.random_range(-0.5..1.5));
    let a = (0..n).map(|_| level * rng.random_range(0.5..2.0)).collect();
    (b0, c, eps, a)
}

fn lemma_suite() -> Result<Vec<CheckReport>> {
    const INSTANCES: u64 = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut violations = Vec::new();
    for i in 0..INSTANCES {
        let a = random_logsum_sequence(&mut rng);
        let r = lemma_logsum_check(&a)?;
        if !r.holds {
            violations.push(format!("instance {i}: lhs={} rhs={}", r.lhs, r.rhs));
        }
    }
    let logsum = CheckReport {
        name: "lemma_logsum".into(),
        max_abs_err: violations.len() as f64,
        max_rel_err: violations.len() as f64,
        samples: INSTANCES,
        tolerance: 0.0,
        passed: violations.is_empty(),
        details: violations.into_iter().take(5).collect(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let mut violations = Vec::new();
    for i in 0..INSTANCES {
        let (b0, c, eps, a) = random_escape_instance(&mut rng);
        let r = lemma41_check(b0, c, eps, &a)?;
        if !r.holds {
            violations.push(format!("instance {i}: b0={b0} C={c} eps={eps}"));
        }
    }
    let escape = CheckReport {
        name: "lemma_escape".into(),
        max_abs_err: violations.len() as f64,
        max_rel_err: violations.len() as f64,
        samples: INSTANCES,
        tolerance: 0.0,
        passed: violations.is_empty(),
        details: violations.into_iter().take(5).collect(),
    };
    Ok(vec![logsum, escape])
}

/// Power iteration versus Jacobi on random Gram matrices.
pub fn eigen_cross_check(count: u64, seed: u64, tol: f64) -> Result<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::with_capacity(count as usize);
    for i in 0..count {
        let k = rng.random_range(2..=32usize);
        let m = rng.random_range(k..=3 * k);
        let p = make_gaussian_least_squares(m, k, rng.random(), false)?;
        let jacobi = dense_sym_eig_max(&gram_matrix(&p), k)?;
        let power = estimate_lipschitz(&p, 1e-13)?;
        let abs = (jacobi - power).abs();
        errors.push((abs, abs / jacobi.abs().max(1e-300), format!("matrix {i} (k={k}): jacobi={jacobi} power={power}")));
    }
    Ok(CheckReport::from_errors("eig_max_power_vs_jacobi", tol, errors))
}

fn oracle_suite() -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    for (m, n, seed) in [(2, 1, 1), (6, 3, 2), (6, 6, 3), (5, 2, 4)] {
        let p = make_gaussian_least_squares(m, 3, seed, false)?;
        out.push(minibatch_expectation_check(&p, n, &uniform_initial_point(3, seed))?);
    }
    out.push(eigen_cross_check(100, 41, 1e-8)?);
    let p = make_log_smooth_problem(10)?;
    let x = vec![0.5; 10];
    for sigma in [0.0, 0.5, 2.0] {
        let o = GradientOracle::new(OracleKind::AdditiveGaussian { sigma }, 43);
        out.push(noise_variance_check(&o, &p, &x, 100_000)?);
    }
    let ls = make_gaussian_least_squares(40, 5, 9, true)?;
    let x = uniform_initial_point(5, 9);
    for batch in [5, 40] {
        let o = GradientOracle::new(OracleKind::MiniBatch { batch }, 47);
        out.push(noise_variance_check(&o, &ls, &x, 10_000)?);
    }
    Ok(out)
}

/// Runs the named suite; every report is deterministic.
pub fn run_check_suite(suite: Suite) -> Result<Vec<CheckReport>> {
    let mut out = Vec::new();
    if matches!(suite, Suite::Grad | Suite::All) {
        out.extend(grad_suite()?);
    }
    if matches!(suite, Suite::Lemmas | Suite::All) {
        out.extend(lemma_suite()?);
    }
    if matches!(suite, Suite::Oracles | Suite::All) {
        out.extend(oracle_suite()?);
    }
    Ok(out)
}

/// `||grad F(x)||^2` helper for callers building their own reports.
pub fn grad_norm_sq(problem: &dyn Objective, x: &[f64]) -> f64 {
    norm_sq(&problem.gradient(x))
}
