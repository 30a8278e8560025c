use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{AlgorithmConfig, AlgorithmKind, OptimizerState};
use crate::error::{invalid, Error, Result};
use crate::linalg::norm_sq;
use crate::problems::{GradientOracle, Objective};

/// Full-gradient snapshot at one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub iteration: u64,
    pub loss: f64,
    /// `||grad F(x_j)||^2` from the exact gradient, not the sample.
    pub grad_norm_sq: f64,
    pub effective_lr: f64,
    pub b_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum TraceStatus {
    ConvergedToTarget,
    Completed,
    Diverged { step: u64 },
}

impl TraceStatus {
    pub fn is_diverged(&self) -> bool {
        matches!(self, Self::Diverged { .. })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::ConvergedToTarget => "converged_to_target",
            Self::Completed => "completed",
            Self::Diverged { .. } => "diverged",
        }
    }
}

/// First iteration `j` at which `min_{i<=j} ||grad F(x_i)||^2 <= eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstHit {
    pub eps: f64,
    pub iteration: Option<u64>,
}

/// Realized accumulator quantities for the log-sum inequality
/// `sum_k ||G_k||^2 / b_{k+1}^2 <= log(b_N^2 / b_0^2) + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogSumStats {
    pub ratio_sum: f64,
    pub b0: f64,
    pub b_final: f64,
    /// `sum_k ||G_k||^2`
    pub sample_norm_sq_sum: f64,
    pub sample_norm_sq_max: f64,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub run_id: String,
    pub algorithm: AlgorithmKind,
    pub b0: f64,
    pub eta: f64,
    pub seed: u64,
    pub status: TraceStatus,
    /// State before the first step (iteration 0).
    pub initial: CheckpointRecord,
    pub checkpoints: Vec<CheckpointRecord>,
    pub first_hit: Vec<FirstHit>,
    /// Running minimum of the exact gradient norm over `x_0..x_iters`,
    /// tracked only when `eps_targets` is non-empty.
    pub min_grad_norm_sq: Option<f64>,
    /// Gradient evaluations plus objective evaluations made by the rule itself.
    pub function_evals: u64,
    /// Present for AdaGrad-Norm and its momentum variant.
    pub log_sum: Option<LogSumStats>,
    pub elapsed_ms: f64,
}

impl RunTrace {
    pub fn checkpoint(&self, iteration: u64) -> Option<&CheckpointRecord> {
        self.checkpoints.iter().find(|c| c.iteration == iteration)
    }

    pub fn first_hit_for(&self, eps: f64) -> Option<u64> {
        self.first_hit
            .iter()
            .find(|h| h.eps == eps)
            .and_then(|h| h.iteration)
    }

    pub fn last(&self) -> &CheckpointRecord {
        self.checkpoints.last().unwrap_or(&self.initial)
    }
}

/// What to record during [`run`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunOptions {
    pub iters: u64,
    /// Sorted, within `[1, iters]`.
    pub checkpoints: Vec<u64>,
    pub eps_targets: Vec<f64>,
    /// Stop as soon as every eps target has been hit; checkpoints past that
    /// point are then not recorded.
    pub stop_at_targets: bool,
}

impl RunOptions {
    pub fn new(iters: u64, checkpoints: Vec<u64>, eps_targets: Vec<f64>) -> Self {
        Self {
            iters,
            checkpoints,
            eps_targets,
            stop_at_targets: false,
        }
    }

    pub fn stopping_at_targets(mut self) -> Self {
        self.stop_at_targets = true;
        self
    }

    /// Record every iteration.
    pub fn every_step(iters: u64, eps_targets: Vec<f64>) -> Self {
        Self::new(iters, (1..=iters).collect(), eps_targets)
    }

    fn validate(&self) -> Result<()> {
        if self.iters == 0 {
            return Err(invalid("run needs iters >= 1"));
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("checkpoints must be strictly increasing"));
        }
        if let (Some(&first), Some(&last)) = (self.checkpoints.first(), self.checkpoints.last()) {
            if first < 1 || last > self.iters {
                return Err(invalid(format!("checkpoints must lie in [1, {}]", self.iters)));
            }
        }
        if self.eps_targets.iter().any(|e| !(*e > 0.0)) {
            return Err(invalid("eps targets must be positive"));
        }
        Ok(())
    }
}

/// Drives one step rule for `opts.iters` iterations from `x0`.
///
/// Divergence (a non-finite sample, iterate, loss, or a failed line search)
/// halts the loop and is reported through [`TraceStatus::Diverged`]; later
/// checkpoints carry `inf` for loss and gradient norm.
pub fn run(
    problem: &dyn Objective,
    oracle: &mut GradientOracle,
    config: &AlgorithmConfig,
    x0: &[f64],
    opts: &RunOptions,
) -> Result<RunTrace> {
    opts.validate()?;
    if x0.len() != problem.dim() {
        return Err(invalid(format!(
            "x0 has dimension {}, problem has {}",
            x0.len(),
            problem.dim()
        )));
    }
    let mut state = config.init(x0.to_vec())?;
    if state.uses_oracle() {
        oracle.validate_for(problem)?;
    }
    let started = Instant::now();

    let track = !opts.eps_targets.is_empty();
    let mut first_hit: Vec<FirstHit> = opts
        .eps_targets
        .iter()
        .map(|&eps| FirstHit { eps, iteration: None })
        .collect();
    let mut min_grad = f64::INFINITY;
    let mut note_grad = |j: u64, gsq: f64, first_hit: &mut Vec<FirstHit>| {
        min_grad = min_grad.min(gsq);
        for h in first_hit.iter_mut() {
            if h.iteration.is_none() && min_grad <= h.eps {
                h.iteration = Some(j);
            }
        }
        min_grad
    };

    let initial = CheckpointRecord {
        iteration: 0,
        loss: problem.value(x0),
        grad_norm_sq: norm_sq(&problem.gradient(x0)),
        effective_lr: state.effective_lr(),
        b_value: state.b_value(),
    };
    let mut min_seen = None;
    if track {
        min_seen = Some(note_grad(0, initial.grad_norm_sq, &mut first_hit));
    }

    let mut log_sum = match state {
        OptimizerState::AdaGradNorm(_) | OptimizerState::Momentum(_) => Some(LogSumStats {
            ratio_sum: 0.0,
            b0: config.b0,
            b_final: config.b0,
            sample_norm_sq_sum: 0.0,
            sample_norm_sq_max: 0.0,
            steps: 0,
        }),
        _ => None,
    };

    let mut checkpoints = Vec::with_capacity(opts.checkpoints.len());
    let mut next_cp = opts.checkpoints.iter().copied().peekable();
    let mut status = None;
    let mut gradient_calls = 0u64;

    for j in 1..=opts.iters {
        let sample = if state.uses_oracle() {
            gradient_calls += 1;
            Some(oracle.sample_gradient(problem, state.x())?)
        } else {
            None
        };
        match state.step(problem, sample.as_deref()) {
            Ok(next) => state = next,
            Err(Error::Diverged { step }) => {
                status = Some(TraceStatus::Diverged { step });
                break;
            }
            Err(Error::LineSearchFailure { .. }) => {
                status = Some(TraceStatus::Diverged { step: j });
                break;
            }
            Err(e) => return Err(e),
        }
        if let (Some(stats), Some(g)) = (log_sum.as_mut(), sample.as_deref()) {
            let b = match &state {
                OptimizerState::AdaGradNorm(s) => s.b,
                OptimizerState::Momentum(s) => s.b,
                _ => unreachable!("log-sum stats only for scalar accumulators"),
            };
            let gsq = norm_sq(g);
            stats.ratio_sum += gsq / (b * b);
            stats.b_final = b;
            stats.sample_norm_sq_sum += gsq;
            stats.sample_norm_sq_max = stats.sample_norm_sq_max.max(gsq);
            stats.steps += 1;
        }

        let at_checkpoint = next_cp.peek() == Some(&j);
        if !(track || at_checkpoint) {
            continue;
        }
        let x = state.x();
        let loss = problem.value(x);
        let gsq = norm_sq(&problem.gradient(x));
        if !loss.is_finite() || !gsq.is_finite() {
            status = Some(TraceStatus::Diverged { step: j });
            break;
        }
        if track {
            min_seen = Some(note_grad(j, gsq, &mut first_hit));
        }
        let stop = opts.stop_at_targets && track && first_hit.iter().all(|h| h.iteration.is_some());
        if at_checkpoint {
            next_cp.next();
            checkpoints.push(CheckpointRecord {
                iteration: j,
                loss,
                grad_norm_sq: gsq,
                effective_lr: state.effective_lr(),
                b_value: state.b_value(),
            });
        }
        if stop {
            break;
        }
    }

    let stopped_early = status.is_none();
    for iteration in next_cp.filter(|_| !stopped_early) {
        checkpoints.push(CheckpointRecord {
            iteration,
            loss: f64::INFINITY,
            grad_norm_sq: f64::INFINITY,
            effective_lr: state.effective_lr(),
            b_value: state.b_value(),
        });
    }

    let status = status.unwrap_or_else(|| {
        if track && first_hit.iter().all(|h| h.iteration.is_some()) {
            TraceStatus::ConvergedToTarget
        } else {
            TraceStatus::Completed
        }
    });
    let function_evals = match &state {
        OptimizerState::LineSearch(s) => s.function_evals + 2 * s.step_count,
        _ => gradient_calls,
    };

    Ok(RunTrace {
        run_id: String::new(),
        algorithm: config.algo,
        b0: config.b0,
        eta: config.eta,
        seed: oracle.seed,
        status,
        initial,
        checkpoints,
        first_hit,
        min_grad_norm_sq: min_seen,
        function_evals,
        log_sum,
        elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_log_smooth_problem, QuadraticProblem};

    #[test]
    fn single_step_fields() {
        let p = QuadraticProblem::new(1, 1.0).unwrap();
        let mut o = GradientOracle::deterministic();
        let cfg = AlgorithmConfig::new(AlgorithmKind::AdagradNorm, 100.0, 1.0);
        let t = run(&p, &mut o, &cfg, &[10.0], &RunOptions::new(1, vec![1], vec![])).unwrap();
        let b1 = (100f64 * 100.0 + 100.0).sqrt();
        let x1 = 10.0 - 10.0 / b1;
        let cp = t.checkpoint(1).unwrap();
        assert_eq!(cp.b_value, b1);
        assert_eq!(cp.loss, 0.5 * x1 * x1);
        assert_eq!(cp.grad_norm_sq, x1 * x1);
        assert_eq!(cp.effective_lr, 1.0 / b1);
        assert_eq!(t.status, TraceStatus::Completed);
        assert_eq!(t.initial.loss, 50.0);
        assert_eq!(t.function_evals, 1);
    }

    #[test]
    fn oscillating_sgd_never_hits_target() {
        let p = QuadraticProblem::new(1, 1.0).unwrap();
        let mut o = GradientOracle::deterministic();
        let cfg = AlgorithmConfig::new(AlgorithmKind::SgdConst, 0.5, 1.0);
        let t = run(&p, &mut o, &cfg, &[1.0], &RunOptions::new(100, vec![10, 50, 100], vec![0.5])).unwrap();
        assert_eq!(t.status, TraceStatus::Completed);
        assert_eq!(t.first_hit_for(0.5), None);
        assert!(t.checkpoints.iter().all(|c| c.grad_norm_sq == 1.0));
    }

    #[test]
    fn divergence_is_a_flag() {
        let p = QuadraticProblem::new(1, 1.0).unwrap();
        let mut o = GradientOracle::deterministic();
        let cfg = AlgorithmConfig::new(AlgorithmKind::SgdConst, 0.1, 1.0);
        let t = run(&p, &mut o, &cfg, &[1.0], &RunOptions::new(2000, vec![10, 2000], vec![])).unwrap();
        let TraceStatus::Diverged { step } = t.status else {
            panic!("expected divergence, got {:?}", t.status)
        };
        assert!(step > 10 && step < 2000);
        assert_eq!(t.checkpoints.len(), 2);
        assert!(t.checkpoints[0].grad_norm_sq.is_finite());
        assert_eq!(t.checkpoints[1].grad_norm_sq, f64::INFINITY);
    }

    #[test]
    fn option_validation() {
        let p = make_log_smooth_problem(2).unwrap();
        let mut o = GradientOracle::deterministic();
        let cfg = AlgorithmConfig::new(AlgorithmKind::AdagradNorm, 1.0, 1.0);
        let x0 = [1.0, 1.0];
        for opts in [
            RunOptions::new(0, vec![], vec![]),
            RunOptions::new(5, vec![6], vec![]),
            RunOptions::new(5, vec![0], vec![]),
            RunOptions::new(5, vec![3, 2], vec![]),
            RunOptions::new(5, vec![], vec![0.0]),
        ] {
            assert!(run(&p, &mut o, &cfg, &x0, &opts).is_err(), "{opts:?}");
        }
        assert!(run(&p, &mut o, &cfg, &[1.0], &RunOptions::new(5, vec![], vec![])).is_err());
    }

    #[test]
    fn first_hit_counts_initial_point() {
        let p = QuadraticProblem::new(1, 1.0).unwrap();
        let mut o = GradientOracle::deterministic();
        let cfg = AlgorithmConfig::new(AlgorithmKind::AdagradNorm, 1.0, 1.0);
        let t = run(&p, &mut o, &cfg, &[0.1], &RunOptions::new(3, vec![], vec![0.1, 1e-30])).unwrap();
        assert_eq!(t.first_hit_for(0.1), Some(0));
        assert_eq!(t.status, TraceStatus::Completed);
    }

    #[test]
    fn stopping_at_targets_ends_the_loop() {
        let p = QuadraticProblem::new(1, 1.0).unwrap();
        let cfg = AlgorithmConfig::new(AlgorithmKind::SgdConst, 2.0, 1.0);
        let opts = RunOptions::new(1000, vec![1, 500, 1000], vec![1e-4]).stopping_at_targets();
        let t = run(&p, &mut GradientOracle::deterministic(), &cfg, &[1.0], &opts).unwrap();
        // x_j = 2^-j, so ||grad||^2 = 4^-j drops below 1e-4 at j = 7.
        assert_eq!(t.first_hit_for(1e-4), Some(7));
        assert_eq!(t.status, TraceStatus::ConvergedToTarget);
        assert_eq!(t.checkpoints.len(), 1);
        assert_eq!(t.function_evals, 7);
    }
}
