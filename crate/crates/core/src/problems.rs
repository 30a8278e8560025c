//! Objectives, synthetic least-squares data and stochastic gradient oracles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, norm, norm_sq};

/// A differentiable objective with a hand-coded gradient and whatever
/// constants are known for it.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    fn gradient(&self, x: &[f64]) -> Vec<f64>;

    /// Known infimum F*.
    fn f_star(&self) -> Option<f64> {
        None
    }

    /// Smoothness constant L of the gradient.
    fn lipschitz(&self) -> Option<f64> {
        None
    }

    /// Uniform bound on the gradient norm.
    fn gamma(&self) -> Option<f64> {
        None
    }

    fn description(&self) -> String;

    /// Row structure, needed by mini-batch oracles.
    fn as_least_squares(&self) -> Option<&LeastSquaresProblem> {
        None
    }
}

/// `F(x) = (1/2m) ||Ax - y||^2` with `A` stored row-major.
#[derive(Debug, Clone)]
pub struct LeastSquaresProblem {
    a: Vec<f64>,
    y: Vec<f64>,
    m: usize,
    d: usize,
    x_star: Option<Vec<f64>>,
    lipschitz: Option<f64>,
}

impl LeastSquaresProblem {
    pub fn new(a: Vec<f64>, y: Vec<f64>, m: usize, d: usize) -> Result<Self> {
        if m == 0 || d == 0 {
            return Err(invalid("least squares needs m >= 1 and d >= 1"));
        }
        if a.len() != m * d {
            return Err(invalid(format!("A has {} entries, expected {}x{}", a.len(), m, d)));
        }
        if y.len() != m {
            return Err(invalid(format!("y has length {}, expected {}", y.len(), m)));
        }
        Ok(Self {
            a,
            y,
            m,
            d,
            x_star: None,
            lipschitz: None,
        })
    }

    /// Attach a planted solution. The caller asserts `y = A x_star`.
    pub fn with_planted_solution(mut self, x_star: Vec<f64>) -> Result<Self> {
        if x_star.len() != self.d {
            return Err(invalid("planted solution has the wrong dimension"));
        }
        self.x_star = Some(x_star);
        Ok(self)
    }

    /// Declare `L` from a power-iteration estimate at relative tolerance `tol`.
    pub fn with_estimated_lipschitz(mut self, tol: f64) -> Result<Self> {
        self.lipschitz = Some(estimate_lipschitz(&self, tol)?);
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.a[i * self.d..(i + 1) * self.d]
    }

    pub fn matrix(&self) -> &[f64] {
        &self.a
    }

    pub fn targets(&self) -> &[f64] {
        &self.y
    }

    pub fn x_star(&self) -> Option<&[f64]> {
        self.x_star.as_deref()
    }

    /// `A_S^T (A_S x - y_S) / |S|` over the given row subset.
    pub fn batch_gradient(&self, x: &[f64], rows: &[usize]) -> Vec<f64> {
        let mut g = vec![0.0; self.d];
        for &i in rows {
            let row = self.row(i);
            let r = dot(row, x) - self.y[i];
            for (gk, ak) in g.iter_mut().zip(row) {
                *gk += r * ak;
            }
        }
        let scale = 1.0 / rows.len() as f64;
        g.iter_mut().for_each(|v| *v *= scale);
        g
    }

    /// `A^T A v / m`
    fn gram_apply(&self, v: &[f64]) -> Vec<f64> {
        let mut w = vec![0.0; self.d];
        for i in 0..self.m {
            let row = self.row(i);
            let r = dot(row, v);
            for (wk, ak) in w.iter_mut().zip(row) {
                *wk += r * ak;
            }
        }
        let scale = 1.0 / self.m as f64;
        w.iter_mut().for_each(|v| *v *= scale);
        w
    }
}

impl Objective for LeastSquaresProblem {
    fn dim(&self) -> usize {
        self.d
    }

    fn value(&self, x: &[f64]) -> f64 {
        let ss: f64 = (0..self.m)
            .map(|i| {
                let r = dot(self.row(i), x) - self.y[i];
                r * r
            })
            .sum();
        ss / (2.0 * self.m as f64)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.d];
        for i in 0..self.m {
            let row = self.row(i);
            let r = dot(row, x) - self.y[i];
            for (gk, ak) in g.iter_mut().zip(row) {
                *gk += r * ak;
            }
        }
        let scale = 1.0 / self.m as f64;
        g.iter_mut().for_each(|v| *v *= scale);
        g
    }

    fn f_star(&self) -> Option<f64> {
        self.x_star.as_ref().map(|_| 0.0)
    }

    fn lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }

    fn description(&self) -> String {
        format!("least squares (1/2m)||Ax - y||^2, m={}, d={}", self.m, self.d)
    }

    fn as_least_squares(&self) -> Option<&LeastSquaresProblem> {
        Some(self)
    }
}

/// `F(x) = sum_i log(1 + x_i^2)`: nonconvex, 2-smooth, gradient norm at most sqrt(d).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogSmoothProblem {
    d: usize,
}

impl Objective for LogSmoothProblem {
    fn dim(&self) -> usize {
        self.d
    }

    fn value(&self, x: &[f64]) -> f64 {
        x.iter().map(|v| v.mul_add(*v, 1.0).ln()).sum()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| 2.0 * v / v.mul_add(*v, 1.0)).collect()
    }

    fn f_star(&self) -> Option<f64> {
        Some(0.0)
    }

    fn lipschitz(&self) -> Option<f64> {
        Some(2.0)
    }

    fn gamma(&self) -> Option<f64> {
        Some((self.d as f64).sqrt())
    }

    fn description(&self) -> String {
        format!("log-smooth sum log(1 + x_i^2), d={}", self.d)
    }
}

/// `F(x) = (c/2)||x||^2`, so `L = c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticProblem {
    d: usize,
    curvature: f64,
}

impl QuadraticProblem {
    pub fn new(d: usize, curvature: f64) -> Result<Self> {
        if d == 0 {
            return Err(invalid("quadratic needs d >= 1"));
        }
        if !(curvature > 0.0 && curvature.is_finite()) {
            return Err(invalid("quadratic curvature must be positive"));
        }
        Ok(Self { d, curvature })
    }
}

impl Objective for QuadraticProblem {
    fn dim(&self) -> usize {
        self.d
    }

    fn value(&self, x: &[f64]) -> f64 {
        0.5 * self.curvature * norm_sq(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| self.curvature * v).collect()
    }

    fn f_star(&self) -> Option<f64> {
        Some(0.0)
    }

    fn lipschitz(&self) -> Option<f64> {
        Some(self.curvature)
    }

    fn description(&self) -> String {
        format!("quadratic ({}/2)||x||^2, d={}", self.curvature, self.d)
    }
}

pub fn make_log_smooth_problem(d: usize) -> Result<LogSmoothProblem> {
    if d == 0 {
        return Err(invalid("log-smooth problem needs d >= 1"));
    }
    Ok(LogSmoothProblem { d })
}

/// Gaussian least squares. Entries of `A` are drawn row-major first, then
/// `x*` (consistent) or `y` (inconsistent), all from one ChaCha8 stream.
pub fn make_gaussian_least_squares(
    m: usize,
    d: usize,
    seed: u64,
    consistent: bool,
) -> Result<LeastSquaresProblem> {
    if m == 0 || d == 0 {
        return Err(invalid("make_gaussian_least_squares needs m >= 1 and d >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<f64> = (0..m * d).map(|_| rng.sample(StandardNormal)).collect();
    if consistent {
        let x_star: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let y = (0..m).map(|i| dot(&a[i * d..(i + 1) * d], &x_star)).collect();
        LeastSquaresProblem::new(a, y, m, d)?.with_planted_solution(x_star)
    } else {
        let y = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        LeastSquaresProblem::new(a, y, m, d)
    }
}

/// i.i.d. Uniform[0,1] starting point.
pub fn uniform_initial_point(d: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..d).map(|_| rng.random::<f64>()).collect()
}

/// `lambda_max(A^T A) / m` by power iteration from the normalized all-ones vector.
///
/// Stops once the eigen-residual `||S v - lambda v||` drops below `tol * lambda`,
/// which bounds the Rayleigh-quotient error well inside `tol`.
pub fn estimate_lipschitz(problem: &LeastSquaresProblem, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(invalid("estimate_lipschitz needs tol > 0"));
    }
    const MAX_ITERS: usize = 1_000_000;
    let d = problem.cols();
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut lambda = 0.0;
    for _ in 0..MAX_ITERS {
        let w = problem.gram_apply(&v);
        lambda = dot(&v, &w);
        let wn = norm(&w);
        if wn == 0.0 {
            return Ok(0.0);
        }
        let residual: f64 = w
            .iter()
            .zip(&v)
            .map(|(wi, vi)| (wi - lambda * vi).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual <= tol * lambda {
            return Ok(lambda);
        }
        v = w.into_iter().map(|x| x / wn).collect();
    }
    Ok(lambda)
}

/// How one stochastic gradient sample is produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum OracleKind {
    Deterministic,
    MiniBatch { batch: usize },
    AdditiveGaussian { sigma: f64 },
}

impl OracleKind {
    /// Parses `det`, `minibatch` (with an explicit batch size), or `gauss:SIGMA`.
    pub fn parse(spec: &str, batch: Option<usize>) -> Result<Self> {
        match spec {
            "det" | "deterministic" => Ok(Self::Deterministic),
            "minibatch" => {
                let batch = batch.ok_or_else(|| invalid("minibatch oracle needs a batch size"))?;
                Ok(Self::MiniBatch { batch })
            }
            s => {
                let sigma = s
                    .strip_prefix("gauss:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| invalid(format!("unrecognized oracle `{s}`")))?;
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    return Err(invalid("gaussian sigma must be finite and non-negative"));
                }
                Ok(Self::AdditiveGaussian { sigma })
            }
        }
    }

    /// `sigma^2` when known exactly.
    pub fn variance(&self) -> Option<f64> {
        match *self {
            Self::Deterministic => Some(0.0),
            Self::MiniBatch { .. } => None,
            Self::AdditiveGaussian { sigma } => Some(sigma * sigma),
        }
    }
}

/// Sampler for `G(x, xi)`.
///
/// Draw number `k` uses ChaCha8 seeded with `seed` on stream `k`, so every
/// sample is a pure function of `(seed, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientOracle {
    pub kind: OracleKind,
    pub seed: u64,
    draw_counter: u64,
}

impl GradientOracle {
    pub fn new(kind: OracleKind, seed: u64) -> Self {
        Self {
            kind,
            seed,
            draw_counter: 0,
        }
    }

    pub fn deterministic() -> Self {
        Self::new(OracleKind::Deterministic, 0)
    }

    pub fn draw_counter(&self) -> u64 {
        self.draw_counter
    }

    /// Checks that this oracle can sample gradients of `problem`.
    pub fn validate_for(&self, problem: &dyn Objective) -> Result<()> {
        match self.kind {
            OracleKind::Deterministic => Ok(()),
            OracleKind::MiniBatch { batch } => {
                let ls = problem.as_least_squares().ok_or_else(|| {
                    Error::UnsupportedOracle(format!(
                        "mini-batch sampling needs row structure; got {}",
                        problem.description()
                    ))
                })?;
                if batch == 0 || batch > ls.rows() {
                    return Err(invalid(format!(
                        "batch size {batch} outside [1, {}]",
                        ls.rows()
                    )));
                }
                Ok(())
            }
            OracleKind::AdditiveGaussian { sigma } => {
                if sigma >= 0.0 && sigma.is_finite() {
                    Ok(())
                } else {
                    Err(invalid("gaussian sigma must be finite and non-negative"))
                }
            }
        }
    }

    /// Draws one sample and advances the counter.
    pub fn sample_gradient(&mut self, problem: &dyn Objective, x: &[f64]) -> Result<Vec<f64>> {
        let g = self.sample_at(problem, x, self.draw_counter)?;
        self.draw_counter += 1;
        Ok(g)
    }

    /// The sample that draw number `counter` would produce. Does not mutate.
    pub fn sample_at(&self, problem: &dyn Objective, x: &[f64], counter: u64) -> Result<Vec<f64>> {
        if x.len() != problem.dim() {
            return Err(invalid(format!(
                "point has dimension {}, problem has {}",
                x.len(),
                problem.dim()
            )));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(invalid("gradient requested at a non-finite point"));
        }
        self.validate_for(problem)?;
        match self.kind {
            OracleKind::Deterministic => Ok(problem.gradient(x)),
            OracleKind::MiniBatch { batch } => {
                let ls = problem.as_least_squares().expect("validated above");
                if batch == ls.rows() {
                    return Ok(ls.gradient(x));
                }
                let mut rng = self.rng_for(counter);
                let mut rows = rand::seq::index::sample(&mut rng, ls.rows(), batch).into_vec();
                rows.sort_unstable();
                Ok(ls.batch_gradient(x, &rows))
            }
            OracleKind::AdditiveGaussian { sigma } => {
                let mut g = problem.gradient(x);
                if sigma == 0.0 {
                    return Ok(g);
                }
                let sd = sigma / (g.len() as f64).sqrt();
                let noise = Normal::new(0.0, sd).map_err(|e| invalid(e.to_string()))?;
                let mut rng = self.rng_for(counter);
                for gk in g.iter_mut() {
                    *gk += noise.sample(&mut rng);
                }
                Ok(g)
            }
        }
    }

    fn rng_for(&self, counter: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(counter);
        rng
    }
}

/// Serializable recipe that regenerates a problem bit-identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    #[serde(default = "default_one")]
    pub m: usize,
    pub d: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub consistent: bool,
    /// Only used by `quadratic`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curvature: Option<f64>,
}

fn default_one() -> usize {
    1
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    LeastSquares,
    LogSmooth,
    Quadratic,
}

impl ProblemSpec {
    pub fn build(&self) -> Result<Problem> {
        match self.kind {
            ProblemKind::LeastSquares => Ok(Problem::LeastSquares(make_gaussian_least_squares(
                self.m,
                self.d,
                self.seed,
                self.consistent,
            )?)),
            ProblemKind::LogSmooth => Ok(Problem::LogSmooth(make_log_smooth_problem(self.d)?)),
            ProblemKind::Quadratic => Ok(Problem::Quadratic(QuadraticProblem::new(
                self.d,
                self.curvature.unwrap_or(1.0),
            )?)),
        }
    }
}

/// Closed set of built-in problems.
#[derive(Debug, Clone)]
pub enum Problem {
    LeastSquares(LeastSquaresProblem),
    LogSmooth(LogSmoothProblem),
    Quadratic(QuadraticProblem),
}

impl Problem {
    fn inner(&self) -> &dyn Objective {
        match self {
            Self::LeastSquares(p) => p,
            Self::LogSmooth(p) => p,
            Self::Quadratic(p) => p,
        }
    }
}

impl Objective for Problem {
    fn dim(&self) -> usize {
        self.inner().dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.inner().value(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.inner().gradient(x)
    }

    fn f_star(&self) -> Option<f64> {
        self.inner().f_star()
    }

    fn lipschitz(&self) -> Option<f64> {
        self.inner().lipschitz()
    }

    fn gamma(&self) -> Option<f64> {
        self.inner().gamma()
    }

    fn description(&self) -> String {
        self.inner().description()
    }

    fn as_least_squares(&self) -> Option<&LeastSquaresProblem> {
        self.inner().as_least_squares()
    }
}
