//! Step rules as pure state transitions.
//!
//! Every `step` takes the current state by reference and returns the next
//! one, so trajectories can be replayed or compared without cloning drivers.
//! A non-finite gradient or iterate yields [`Error::Diverged`] carrying the
//! 1-based index of the offending step.

mod run;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{all_finite, median, norm_sq};
use crate::problems::Objective;

pub use run::{run, CheckpointRecord, FirstHit, LogSumStats, RunOptions, RunTrace, TraceStatus};

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

fn check_gradient(g: &[f64], d: usize, step: u64) -> Result<()> {
    if g.len() != d {
        return Err(invalid(format!("gradient has dimension {}, iterate has {d}", g.len())));
    }
    if !all_finite(g) {
        return Err(Error::Diverged { step });
    }
    Ok(())
}

fn check_iterate(x: &[f64], step: u64) -> Result<()> {
    if all_finite(x) {
        Ok(())
    } else {
        Err(Error::Diverged { step })
    }
}

/// AdaGrad-Norm: one scalar accumulator `b` for the whole vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaGradNormState {
    pub x: Vec<f64>,
    pub b: f64,
    pub eta: f64,
    pub step_count: u64,
}

impl AdaGradNormState {
    pub fn new(x0: Vec<f64>, b0: f64, eta: f64) -> Result<Self> {
        check_positive("b0", b0)?;
        check_positive("eta", eta)?;
        Ok(Self {
            x: x0,
            b: b0,
            eta,
            step_count: 0,
        })
    }

    /// `b' = sqrt(b^2 + ||g||^2)`, then `x' = x - (eta / b') g`.
    pub fn step(&self, g: &[f64]) -> Result<Self> {
        let step = self.step_count + 1;
        check_gradient(g, self.x.len(), step)?;
        let b = self.b.hypot(norm_sq(g).sqrt());
        let scale = self.eta / b;
        let x: Vec<f64> = self.x.iter().zip(g).map(|(xi, gi)| xi - scale * gi).collect();
        check_iterate(&x, step)?;
        Ok(Self {
            x,
            b,
            eta: self.eta,
            step_count: step,
        })
    }

    pub fn effective_lr(&self) -> f64 {
        self.eta / self.b
    }
}

/// Per-coordinate AdaGrad.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaGradCoordState {
    pub x: Vec<f64>,
    pub b: Vec<f64>,
    pub eta: f64,
    pub step_count: u64,
}

impl AdaGradCoordState {
    pub fn new(x0: Vec<f64>, b0: f64, eta: f64) -> Result<Self> {
        check_positive("b0", b0)?;
        check_positive("eta", eta)?;
        let b = vec![b0; x0.len()];
        Ok(Self {
            x: x0,
            b,
            eta,
            step_count: 0,
        })
    }

    pub fn step(&self, g: &[f64]) -> Result<Self> {
        let step = self.step_count + 1;
        check_gradient(g, self.x.len(), step)?;
        let b: Vec<f64> = self.b.iter().zip(g).map(|(bk, gk)| bk.hypot(*gk)).collect();
        let x: Vec<f64> = self
            .x
            .iter()
            .zip(g)
            .zip(&b)
            .map(|((xk, gk), bk)| xk - self.eta / bk * gk)
            .collect();
        check_iterate(&x, step)?;
        Ok(Self {
            x,
            b,
            eta: self.eta,
            step_count: step,
        })
    }

    /// Median over coordinates of `eta / b(k)`.
    pub fn effective_lr(&self) -> f64 {
        let rates: Vec<f64> = self.b.iter().map(|bk| self.eta / bk).collect();
        median(&rates)
    }

    pub fn median_b(&self) -> f64 {
        median(&self.b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decay {
    Constant,
    InverseSqrt,
}

/// Plain SGD with a constant or `1/sqrt(j)` stepsize.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub x: Vec<f64>,
    pub eta: f64,
    pub b0: f64,
    pub decay: Decay,
    pub step_count: u64,
}

impl SgdState {
    pub fn new(x0: Vec<f64>, b0: f64, eta: f64, decay: Decay) -> Result<Self> {
        check_positive("b0", b0)?;
        check_positive("eta", eta)?;
        Ok(Self {
            x: x0,
            eta,
            b0,
            decay,
            step_count: 0,
        })
    }

    /// Stepsize applied on step `j` (1-based).
    pub fn stepsize_at(&self, j: u64) -> f64 {
        match self.decay {
            Decay::Constant => self.eta / self.b0,
            Decay::InverseSqrt => self.eta / (self.b0 * (j.max(1) as f64).sqrt()),
        }
    }

    /// Inverse stepsize on step `j`, scaled so that `eta / inverse = stepsize`.
    pub fn inverse_scale_at(&self, j: u64) -> f64 {
        match self.decay {
            Decay::Constant => self.b0,
            Decay::InverseSqrt => self.b0 * (j.max(1) as f64).sqrt(),
        }
    }

    pub fn step(&self, g: &[f64]) -> Result<Self> {
        let step = self.step_count + 1;
        check_gradient(g, self.x.len(), step)?;
        let lr = self.stepsize_at(step);
        let x: Vec<f64> = self.x.iter().zip(g).map(|(xi, gi)| xi - lr * gi).collect();
        check_iterate(&x, step)?;
        Ok(Self {
            x,
            step_count: step,
            ..self.clone()
        })
    }
}

/// WNGrad: `b' = b + ||g||^2 / b`, then `x' = x - (eta / b') g`.
#[derive(Debug, Clone, PartialEq)]
pub struct WnGradState {
    pub x: Vec<f64>,
    pub b: f64,
    pub eta: f64,
    pub step_count: u64,
}

impl WnGradState {
    pub fn new(x0: Vec<f64>, b0: f64, eta: f64) -> Result<Self> {
        check_positive("b0", b0)?;
        check_positive("eta", eta)?;
        Ok(Self {
            x: x0,
            b: b0,
            eta,
            step_count: 0,
        })
    }

    pub fn step(&self, g: &[f64]) -> Result<Self> {
        let step = self.step_count + 1;
        check_gradient(g, self.x.len(), step)?;
        let b = self.b + norm_sq(g) / self.b;
        if !b.is_finite() {
            return Err(Error::Diverged { step });
        }
        let scale = self.eta / b;
        let x: Vec<f64> = self.x.iter().zip(g).map(|(xi, gi)| xi - scale * gi).collect();
        check_iterate(&x, step)?;
        Ok(Self {
            x,
            b,
            eta: self.eta,
            step_count: step,
        })
    }

    pub fn effective_lr(&self) -> f64 {
        self.eta / self.b
    }
}

/// AdaGrad-Norm with heavy-ball momentum on the update direction.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumState {
    pub x: Vec<f64>,
    pub b: f64,
    pub v: Vec<f64>,
    pub beta: f64,
    pub eta: f64,
    pub step_count: u64,
}

impl MomentumState {
    pub const DEFAULT_BETA: f64 = 0.9;

    pub fn new(x0: Vec<f64>, b0: f64, eta: f64, beta: f64) -> Result<Self> {
        check_positive("b0", b0)?;
        check_positive("eta", eta)?;
        if !(0.0..1.0).contains(&beta) {
            return Err(invalid(format!("momentum beta must lie in [0, 1), got {beta}")));
        }
        let v = vec![0.0; x0.len()];
        Ok(Self {
            x: x0,
            b: b0,
            v,
            beta,
            eta,
            step_count: 0,
        })
    }

    /// `v' = beta v + (1 - beta) g`, `b' = sqrt(b^2 + ||g||^2)`, `x' = x - (eta / b') v'`.
    pub fn step(&self, g: &[f64]) -> Result<Self> {
        let step = self.step_count + 1;
        check_gradient(g, self.x.len(), step)?;
        let v: Vec<f64> = self
            .v
            .iter()
            .zip(g)
            .map(|(vk, gk)| self.beta * vk + (1.0 - self.beta) * gk)
            .collect();
        let b = self.b.hypot(norm_sq(g).sqrt());
        let scale = self.eta / b;
        let x: Vec<f64> = self.x.iter().zip(&v).map(|(xi, vi)| xi - scale * vi).collect();
        check_iterate(&x, step)?;
        Ok(Self {
            x,
            b,
            v,
            beta: self.beta,
            eta: self.eta,
            step_count: step,
        })
    }

    pub fn effective_lr(&self) -> f64 {
        self.eta / self.b
    }
}

/// Gradient descent with a doubling backtracking line search.
#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchState {
    pub x: Vec<f64>,
    /// Inverse stepsize each search starts from.
    pub b0: f64,
    /// Inverse stepsize accepted by the most recent search.
    pub b: f64,
    /// Trial evaluations of `F` across all searches.
    pub function_evals: u64,
    pub step_count: u64,
    /// Set when the gradient vanished exactly.
    pub converged: bool,
}

impl LineSearchState {
    /// Searches give up once `b` exceeds this.
    pub const MAX_INVERSE_STEP: f64 = 1e30;

    pub fn new(x0: Vec<f64>, b0: f64) -> Result<Self> {
        check_positive("b0", b0)?;
        Ok(Self {
            x: x0,
            b0,
            b: b0,
            function_evals: 0,
            step_count: 0,
            converged: false,
        })
    }

    /// One outer step: doubles `b` from `b0` until
    /// `F(x - g/b) <= F(x) - ||g||^2 / (2b)` holds for the exact gradient `g`.
    pub fn step(&self, problem: &dyn Objective) -> Result<Self> {
        let step = self.step_count + 1;
        let g = problem.gradient(&self.x);
        check_gradient(&g, self.x.len(), step)?;
        let g_sq = norm_sq(&g);
        if g_sq == 0.0 {
            return Ok(Self {
                converged: true,
                ..self.clone()
            });
        }
        let fx = problem.value(&self.x);
        if !fx.is_finite() {
            return Err(Error::Diverged { step });
        }
        let mut b = self.b0;
        let mut evals = self.function_evals;
        loop {
            let x_new: Vec<f64> = self.x.iter().zip(&g).map(|(xi, gi)| xi - gi / b).collect();
            let f_new = problem.value(&x_new);
            evals += 1;
            if f_new <= fx - g_sq / (2.0 * b) {
                check_iterate(&x_new, step)?;
                return Ok(Self {
                    x: x_new,
                    b0: self.b0,
                    b,
                    function_evals: evals,
                    step_count: step,
                    converged: false,
                });
            }
            b *= 2.0;
            if b > Self::MAX_INVERSE_STEP {
                return Err(Error::LineSearchFailure { b });
            }
        }
    }

    pub fn effective_lr(&self) -> f64 {
        1.0 / self.b
    }
}

/// Name of a step rule as used in configs and CSV output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgorithmKind {
    AdagradNorm,
    AdagradCoord,
    SgdConst,
    SgdDecaySqrt,
    Wngrad,
    GdLinesearch,
    AdagradNormMomentum,
}

impl AlgorithmKind {
    pub const ALL: [AlgorithmKind; 7] = [
        Self::AdagradNorm,
        Self::AdagradCoord,
        Self::SgdConst,
        Self::SgdDecaySqrt,
        Self::Wngrad,
        Self::GdLinesearch,
        Self::AdagradNormMomentum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::AdagradNorm => "adagrad-norm",
            Self::AdagradCoord => "adagrad-coord",
            Self::SgdConst => "sgd-const",
            Self::SgdDecaySqrt => "sgd-decay-sqrt",
            Self::Wngrad => "wngrad",
            Self::GdLinesearch => "gd-linesearch",
            Self::AdagradNormMomentum => "adagrad-norm-momentum",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| invalid(format!("unknown algorithm `{name}`")))
    }
}

impl std::fmt::Display for AlgorithmKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// `{algo, b0, eta, beta?}`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    pub algo: AlgorithmKind,
    pub b0: f64,
    pub eta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

impl AlgorithmConfig {
    pub fn new(algo: AlgorithmKind, b0: f64, eta: f64) -> Self {
        Self {
            algo,
            b0,
            eta,
            beta: None,
        }
    }

    pub fn init(&self, x0: Vec<f64>) -> Result<OptimizerState> {
        Ok(match self.algo {
            AlgorithmKind::AdagradNorm => {
                OptimizerState::AdaGradNorm(AdaGradNormState::new(x0, self.b0, self.eta)?)
            }
            AlgorithmKind::AdagradCoord => {
                OptimizerState::AdaGradCoord(AdaGradCoordState::new(x0, self.b0, self.eta)?)
            }
            AlgorithmKind::SgdConst => {
                OptimizerState::Sgd(SgdState::new(x0, self.b0, self.eta, Decay::Constant)?)
            }
            AlgorithmKind::SgdDecaySqrt => {
                OptimizerState::Sgd(SgdState::new(x0, self.b0, self.eta, Decay::InverseSqrt)?)
            }
            AlgorithmKind::Wngrad => OptimizerState::WnGrad(WnGradState::new(x0, self.b0, self.eta)?),
            AlgorithmKind::GdLinesearch => {
                OptimizerState::LineSearch(LineSearchState::new(x0, self.b0)?)
            }
            AlgorithmKind::AdagradNormMomentum => OptimizerState::Momentum(MomentumState::new(
                x0,
                self.b0,
                self.eta,
                self.beta.unwrap_or(MomentumState::DEFAULT_BETA),
            )?),
        })
    }
}

/// Any of the step rules, for uniform driving.
#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    AdaGradNorm(AdaGradNormState),
    AdaGradCoord(AdaGradCoordState),
    Sgd(SgdState),
    WnGrad(WnGradState),
    LineSearch(LineSearchState),
    Momentum(MomentumState),
}

impl OptimizerState {
    pub fn x(&self) -> &[f64] {
        match self {
            Self::AdaGradNorm(s) => &s.x,
            Self::AdaGradCoord(s) => &s.x,
            Self::Sgd(s) => &s.x,
            Self::WnGrad(s) => &s.x,
            Self::LineSearch(s) => &s.x,
            Self::Momentum(s) => &s.x,
        }
    }

    /// Multiplier applied to the gradient on the most recent step
    /// (before any step: the initial one).
    pub fn effective_lr(&self) -> f64 {
        match self {
            Self::AdaGradNorm(s) => s.effective_lr(),
            Self::AdaGradCoord(s) => s.effective_lr(),
            Self::Sgd(s) => s.stepsize_at(s.step_count),
            Self::WnGrad(s) => s.effective_lr(),
            Self::LineSearch(s) => s.effective_lr(),
            Self::Momentum(s) => s.effective_lr(),
        }
    }

    /// Scalar accumulator (median for per-coordinate, inverse scale for SGD).
    pub fn b_value(&self) -> f64 {
        match self {
            Self::AdaGradNorm(s) => s.b,
            Self::AdaGradCoord(s) => s.median_b(),
            Self::Sgd(s) => s.inverse_scale_at(s.step_count),
            Self::WnGrad(s) => s.b,
            Self::LineSearch(s) => s.b,
            Self::Momentum(s) => s.b,
        }
    }

    /// Whether the rule consumes oracle samples (line search uses exact gradients).
    pub fn uses_oracle(&self) -> bool {
        !matches!(self, Self::LineSearch(_))
    }

    /// Advance with gradient sample `g`, or with the exact gradient for line search.
    pub fn step(&self, problem: &dyn Objective, g: Option<&[f64]>) -> Result<Self> {
        let need = |g: Option<&[f64]>| {
            g.map(|v| v.to_vec())
                .ok_or_else(|| invalid("gradient sample required for this step rule"))
        };
        Ok(match self {
            Self::AdaGradNorm(s) => Self::AdaGradNorm(s.step(&need(g)?)?),
            Self::AdaGradCoord(s) => Self::AdaGradCoord(s.step(&need(g)?)?),
            Self::Sgd(s) => Self::Sgd(s.step(&need(g)?)?),
            Self::WnGrad(s) => Self::WnGrad(s.step(&need(g)?)?),
            Self::Momentum(s) => Self::Momentum(s.step(&need(g)?)?),
            Self::LineSearch(s) => Self::LineSearch(s.step(problem)?),
        })
    }
}
