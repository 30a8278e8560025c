//! b0 sweeps, CSV emission and summaries.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::median;
use crate::optimizers::{run, AlgorithmConfig, AlgorithmKind, RunOptions, RunTrace};
use crate::problems::{uniform_initial_point, GradientOracle, Objective, OracleKind, ProblemSpec};

pub use crate::optimizers::{CheckpointRecord, TraceStatus};

pub const CSV_HEADER: &str =
    "run_id,algorithm,b0,eta,seed,status,iteration,loss,grad_norm_sq,effective_lr,b_value";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridScale {
    Log,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct B0Grid {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub scale: GridScale,
}

impl B0Grid {
    pub fn log(lo: f64, hi: f64, count: usize) -> Self {
        Self {
            lo,
            hi,
            count,
            scale: GridScale::Log,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lo > 0.0 && self.hi >= self.lo && self.hi.is_finite()) {
            return Err(Error::Config(format!(
                "b0 grid needs 0 < lo <= hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        if self.count == 0 {
            return Err(Error::Config("b0 grid needs at least one point".into()));
        }
        Ok(())
    }

    /// Grid points, endpoints exact.
    pub fn points(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.lo];
        }
        let last = (self.count - 1) as f64;
        (0..self.count)
            .map(|i| {
                if i == 0 {
                    self.lo
                } else if i == self.count - 1 {
                    self.hi
                } else {
                    let t = i as f64 / last;
                    match self.scale {
                        GridScale::Log => (self.lo.ln() + t * (self.hi / self.lo).ln()).exp(),
                        GridScale::Linear => self.lo + t * (self.hi - self.lo),
                    }
                }
            })
            .collect()
    }
}

/// How `eta` is chosen for every run of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EtaPolicy {
    Fixed(f64),
    /// `eta = F(x_0) - F*`, resolved once per seed.
    FromInitialLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAlgorithm {
    pub algo: AlgorithmKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

impl From<AlgorithmKind> for SweepAlgorithm {
    fn from(algo: AlgorithmKind) -> Self {
        Self { algo, beta: None }
    }
}

fn default_b0_grid() -> B0Grid {
    B0Grid::log(1e-3, 1e5, 25)
}

fn default_num_seeds() -> u64 {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub problem: ProblemSpec,
    pub oracle: OracleKind,
    pub algorithms: Vec<SweepAlgorithm>,
    #[serde(default = "default_b0_grid")]
    pub b0_grid: B0Grid,
    pub eta_policy: EtaPolicy,
    pub iters: u64,
    pub checkpoints: Vec<u64>,
    #[serde(default)]
    pub eps_targets: Vec<f64>,
    #[serde(default = "default_num_seeds")]
    pub num_seeds: u64,
    /// Seeds used are `base_seed .. base_seed + num_seeds`.
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_path: Option<PathBuf>,
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn seeds(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.num_seeds).map(|s| self.base_seed + s)
    }

    fn validate(&self) -> Result<()> {
        self.b0_grid.validate()?;
        if self.algorithms.is_empty() {
            return Err(Error::Config("no algorithms configured".into()));
        }
        if self.iters == 0 {
            return Err(Error::Config("iters must be at least 1".into()));
        }
        if self.num_seeds == 0 {
            return Err(Error::Config("num_seeds must be at least 1".into()));
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1])
            || self.checkpoints.iter().any(|&c| c == 0 || c > self.iters)
        {
            return Err(Error::Config(format!(
                "checkpoints must be strictly increasing within [1, {}]",
                self.iters
            )));
        }
        if let EtaPolicy::Fixed(eta) = self.eta_policy {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::Config("fixed eta must be positive".into()));
            }
        }
        for a in &self.algorithms {
            if let Some(beta) = a.beta {
                if !(0.0..1.0).contains(&beta) {
                    return Err(Error::Config(format!("beta {beta} outside [0, 1)")));
                }
            }
        }
        Ok(())
    }
}

/// SplitMix64 finalizer; derives independent sub-seeds from a run seed.
pub fn derive_seed(seed: u64, purpose: u64) -> u64 {
    let mut z = seed
        .wrapping_add(purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const X0_STREAM: u64 = 1;
const ORACLE_STREAM: u64 = 2;

/// Oracle seed used for run seed `seed` (independent of the `x0` stream).
pub fn oracle_seed(seed: u64) -> u64 {
    derive_seed(seed, ORACLE_STREAM)
}

/// The starting point shared by every algorithm at `seed`.
pub fn initial_point(d: usize, seed: u64) -> Vec<f64> {
    uniform_initial_point(d, derive_seed(seed, X0_STREAM))
}

struct Job {
    index: usize,
    config: AlgorithmConfig,
    seed: u64,
    b0_index: usize,
}

/// Runs every `(algorithm, b0, seed)` combination.
///
/// All randomness comes from per-run seeds, so the result (after the final
/// sort) does not depend on how rayon schedules the runs.
pub fn run_sweep(config: &SweepConfig) -> Result<Vec<RunTrace>> {
    config.validate()?;
    let problem = config.problem.build()?;
    GradientOracle::new(config.oracle, 0)
        .validate_for(&problem)
        .map_err(|e| Error::Config(e.to_string()))?;
    let d = problem.dim();
    let grid = config.b0_grid.points();

    let mut starts = BTreeMap::new();
    let mut jobs = Vec::new();
    for seed in config.seeds() {
        let x0 = initial_point(d, seed);
        let eta = match config.eta_policy {
            EtaPolicy::Fixed(eta) => eta,
            EtaPolicy::FromInitialLoss => {
                let f_star = problem.f_star().ok_or_else(|| {
                    Error::Config("eta from initial loss needs a problem with known F*".into())
                })?;
                let eta = problem.value(&x0) - f_star;
                if !(eta > 0.0) {
                    return Err(Error::Config(format!("initial suboptimality {eta} is not positive")));
                }
                eta
            }
        };
        starts.insert(seed, x0);
        for alg in &config.algorithms {
            for (b0_index, &b0) in grid.iter().enumerate() {
                jobs.push(Job {
                    index: jobs.len(),
                    config: AlgorithmConfig {
                        algo: alg.algo,
                        b0,
                        eta,
                        beta: alg.beta,
                    },
                    seed,
                    b0_index,
                });
            }
        }
    }

    let opts = RunOptions::new(config.iters, config.checkpoints.clone(), config.eps_targets.clone());
    let mut traces = jobs
        .par_iter()
        .map(|job| -> Result<(usize, RunTrace)> {
            let mut oracle = GradientOracle::new(config.oracle, oracle_seed(job.seed));
            let mut trace = run(&problem, &mut oracle, &job.config, &starts[&job.seed], &opts)?;
            trace.seed = job.seed;
            trace.run_id = format!("{}-b{:03}-s{}", job.config.algo, job.b0_index, job.seed);
            Ok((job.index, trace))
        })
        .collect::<Result<Vec<_>>>()?;
    traces.sort_by_key(|(i, _)| *i);
    let mut traces: Vec<RunTrace> = traces.into_iter().map(|(_, t)| t).collect();
    sort_traces(&mut traces);
    Ok(traces)
}

/// Sort by `(algorithm name, b0, seed)`.
pub fn sort_traces(traces: &mut [RunTrace]) {
    traces.sort_by(|a, b| {
        a.algorithm
            .name()
            .cmp(b.algorithm.name())
            .then(a.b0.total_cmp(&b.b0))
            .then(a.seed.cmp(&b.seed))
    });
}

fn fmt_float(v: f64) -> String {
    // Debug formatting is the shortest representation that round-trips.
    format!("{v:?}")
}

/// CSV text for `traces`: one row per checkpoint, sorted by
/// `(algorithm, b0, seed, iteration)`.
pub fn to_csv_string(traces: &[RunTrace]) -> String {
    let mut sorted: Vec<&RunTrace> = traces.iter().collect();
    sorted.sort_by(|a, b| {
        a.algorithm
            .name()
            .cmp(b.algorithm.name())
            .then(a.b0.total_cmp(&b.b0))
            .then(a.seed.cmp(&b.seed))
    });
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for t in sorted {
        let mut cps: Vec<&CheckpointRecord> = t.checkpoints.iter().collect();
        cps.sort_by_key(|c| c.iteration);
        for c in cps {
            let fields = [
                t.run_id.clone(),
                t.algorithm.name().to_string(),
                fmt_float(t.b0),
                fmt_float(t.eta),
                t.seed.to_string(),
                t.status.label().to_string(),
                c.iteration.to_string(),
                fmt_float(c.loss),
                fmt_float(c.grad_norm_sq),
                fmt_float(c.effective_lr),
                fmt_float(c.b_value),
            ];
            out.push_str(&fields.join(","));
            out.push('\n');
        }
    }
    out
}

pub fn write_csv(traces: &[RunTrace], path: &Path) -> Result<()> {
    fs::write(path, to_csv_string(traces))?;
    Ok(())
}

/// One parsed CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub run_id: String,
    pub algorithm: AlgorithmKind,
    pub b0: f64,
    pub eta: f64,
    pub seed: u64,
    pub status: String,
    pub record: CheckpointRecord,
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    let bad = |line: usize, msg: &str| Error::InvalidArgument(format!("csv line {line}: {msg}"));
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        _ => return Err(bad(1, "missing or unexpected header")),
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let n = i + 2;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 11 {
                return Err(bad(n, "expected 11 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(n, "bad float"));
            let int = |s: &str| s.parse::<u64>().map_err(|_| bad(n, "bad integer"));
            Ok(CsvRow {
                run_id: f[0].to_string(),
                algorithm: AlgorithmKind::from_name(f[1])?,
                b0: num(f[2])?,
                eta: num(f[3])?,
                seed: int(f[4])?,
                status: f[5].to_string(),
                record: CheckpointRecord {
                    iteration: int(f[6])?,
                    loss: num(f[7])?,
                    grad_norm_sq: num(f[8])?,
                    effective_lr: num(f[9])?,
                    b_value: num(f[10])?,
                },
            })
        })
        .collect()
}

/// Median over seeds at one `(algorithm, iteration, b0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelPoint {
    pub b0: f64,
    pub grad_norm_sq: f64,
    pub effective_lr: f64,
    pub diverged_seeds: usize,
}

/// `grad_norm_sq` against `b0` for one algorithm at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub algorithm: AlgorithmKind,
    pub iteration: u64,
    pub points: Vec<PanelPoint>,
}

/// Widest contiguous `b0` interval where no seed diverged and the final
/// median `grad_norm_sq` is within 10x of the algorithm's best, or has
/// reached the round-off floor ([`ROUNDOFF_FLOOR`] times the initial value).
///
/// Without the floor, runs that all end near machine precision would be
/// split apart by noise in the last few bits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustRange {
    pub algorithm: AlgorithmKind,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub points: usize,
}

impl RobustRange {
    pub fn is_empty(&self) -> bool {
        self.points == 0
    }

    /// Whether `other` lies inside `self` and the two differ.
    pub fn strictly_contains(&self, other: &RobustRange) -> bool {
        match (self.lo, self.hi, other.lo, other.hi) {
            (Some(a), Some(b), Some(c), Some(d)) => a <= c && d <= b && (a < c || d < b),
            (Some(_), Some(_), None, None) => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmTiming {
    pub algorithm: AlgorithmKind,
    pub runs: usize,
    pub total_ms: f64,
    pub mean_ms: f64,
    pub function_evals: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub panels: Vec<Panel>,
    pub robust_ranges: Vec<RobustRange>,
    pub timing: Vec<AlgorithmTiming>,
}

/// Robust-range acceptance factor relative to the best median.
pub const ROBUST_FACTOR: f64 = 10.0;

/// Relative `grad_norm_sq` reduction treated as fully converged.
pub const ROUNDOFF_FLOOR: f64 = f64::EPSILON;

pub fn summarize(traces: &[RunTrace]) -> Summary {
    let mut by_alg: BTreeMap<&str, Vec<&RunTrace>> = BTreeMap::new();
    for t in traces {
        by_alg.entry(t.algorithm.name()).or_default().push(t);
    }

    let mut panels = Vec::new();
    let mut robust_ranges = Vec::new();
    let mut timing = Vec::new();
    for runs in by_alg.values() {
        let algorithm = runs[0].algorithm;
        let mut b0s: Vec<f64> = runs.iter().map(|t| t.b0).collect();
        b0s.sort_by(f64::total_cmp);
        b0s.dedup();
        let mut iterations: Vec<u64> = runs
            .iter()
            .flat_map(|t| t.checkpoints.iter().map(|c| c.iteration))
            .collect();
        iterations.sort_unstable();
        iterations.dedup();

        let point = |b0: f64, record: &dyn Fn(&RunTrace) -> Option<CheckpointRecord>| {
            let at: Vec<&&RunTrace> = runs.iter().filter(|t| t.b0 == b0).collect();
            let recs: Vec<CheckpointRecord> = at.iter().filter_map(|t| record(t)).collect();
            let diverged_seeds = at.iter().filter(|t| t.status.is_diverged()).count();
            let (g, lr) = if recs.is_empty() {
                (f64::INFINITY, f64::NAN)
            } else {
                let g: Vec<f64> = recs.iter().map(|r| r.grad_norm_sq).collect();
                let lr: Vec<f64> = recs.iter().map(|r| r.effective_lr).collect();
                (median(&g), median(&lr))
            };
            PanelPoint {
                b0,
                grad_norm_sq: g,
                effective_lr: lr,
                diverged_seeds,
            }
        };

        for &iteration in &iterations {
            let points = b0s
                .iter()
                .map(|&b0| point(b0, &|t: &RunTrace| t.checkpoint(iteration).copied()))
                .collect();
            panels.push(Panel {
                algorithm,
                iteration,
                points,
            });
        }

        let finals: Vec<PanelPoint> = b0s
            .iter()
            .map(|&b0| point(b0, &|t: &RunTrace| Some(*t.last())))
            .collect();
        let best = finals
            .iter()
            .filter(|p| p.diverged_seeds == 0 && p.grad_norm_sq.is_finite())
            .map(|p| p.grad_norm_sq)
            .fold(f64::INFINITY, f64::min);
        let initial: Vec<f64> = runs.iter().map(|t| t.initial.grad_norm_sq).collect();
        let threshold = (ROBUST_FACTOR * best).max(ROUNDOFF_FLOOR * median(&initial));
        let ok: Vec<bool> = finals
            .iter()
            .map(|p| {
                p.diverged_seeds == 0
                    && p.grad_norm_sq.is_finite()
                    && p.grad_norm_sq <= threshold
            })
            .collect();
        let (mut best_start, mut best_len, mut start) = (0, 0, 0);
        for i in 0..=ok.len() {
            if i == ok.len() || !ok[i] {
                if i - start > best_len {
                    best_start = start;
                    best_len = i - start;
                }
                start = i + 1;
            }
        }
        robust_ranges.push(RobustRange {
            algorithm,
            lo: (best_len > 0).then(|| b0s[best_start]),
            hi: (best_len > 0).then(|| b0s[best_start + best_len - 1]),
            points: best_len,
        });

        let total_ms: f64 = runs.iter().map(|t| t.elapsed_ms).sum();
        timing.push(AlgorithmTiming {
            algorithm,
            runs: runs.len(),
            total_ms,
            mean_ms: total_ms / runs.len() as f64,
            function_evals: runs.iter().map(|t| t.function_evals).sum(),
        });
    }
    Summary {
        panels,
        robust_ranges,
        timing,
    }
}
