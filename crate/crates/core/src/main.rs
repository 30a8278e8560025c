use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use adanorm::harness::{self, initial_point, oracle_seed, run_sweep, summarize, SweepConfig};
use adanorm::oracles::{run_check_suite, Suite};
use adanorm::problems::{ProblemKind, ProblemSpec};
use adanorm::theory::{self, BoundInputs, GdIterations};
use adanorm::{AlgorithmConfig, AlgorithmKind, GradientOracle, Objective, OracleKind, RunOptions};

#[derive(Parser)]
#[command(name = "adanorm", version, about = "AdaGrad-Norm experiments and convergence-bound evaluators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProblemArg {
    LeastSquares,
    LogSmooth,
}

#[derive(Clone, Copy, ValueEnum)]
enum TheoremArg {
    #[value(name = "2.1")]
    Stochastic,
    #[value(name = "2.2")]
    Deterministic,
    #[value(name = "gd")]
    Gd,
    #[value(name = "gl")]
    Gl,
}

#[derive(Subcommand)]
enum Command {
    /// Run one algorithm and write its checkpoints as CSV.
    Run {
        #[arg(long, value_enum, default_value = "least-squares")]
        problem: ProblemArg,
        #[arg(long, default_value_t = 200)]
        m: usize,
        #[arg(long, default_value_t = 100)]
        d: usize,
        #[arg(long)]
        batch: Option<usize>,
        /// det | minibatch | gauss:SIGMA
        #[arg(long, default_value = "det")]
        oracle: String,
        #[arg(long, default_value = "adagrad-norm")]
        algo: String,
        #[arg(long)]
        b0: f64,
        /// A positive number, or `auto` for F(x0) - F*.
        #[arg(long, default_value = "auto")]
        eta: String,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        iters: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',')]
        checkpoints: Vec<u64>,
        #[arg(long, value_delimiter = ',')]
        eps: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a b0 sweep from a JSON config and print a JSON summary.
    ///
    /// The CSV goes to `--out` (or the config's `out_path`) and the summary to
    /// stdout; without an output path the CSV takes stdout and the summary stderr.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a closed-form bound and print it as JSON.
    Bounds {
        #[arg(long, value_enum)]
        theorem: TheoremArg,
        #[arg(long, default_value_t = 1.0)]
        b0: f64,
        #[arg(long, default_value_t = 1.0)]
        eta: f64,
        #[arg(long = "L", default_value_t = 1.0)]
        lipschitz: f64,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long = "deltaF", default_value_t = 1.0)]
        delta_f: f64,
        #[arg(long, default_value_t = 0.5)]
        delta: f64,
        #[arg(long = "N", default_value_t = 100)]
        n: u64,
        #[arg(long, default_value_t = 0.1)]
        eps: f64,
    },
    /// Run the verification suites; exit code 1 if any report failed.
    Check {
        #[arg(long, default_value = "all")]
        suite: String,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> adanorm::Result<ExitCode> {
    match command {
        Command::Run {
            problem,
            m,
            d,
            batch,
            oracle,
            algo,
            b0,
            eta,
            beta,
            iters,
            seed,
            checkpoints,
            eps,
            out,
        } => {
            let spec = ProblemSpec {
                kind: match problem {
                    ProblemArg::LeastSquares => ProblemKind::LeastSquares,
                    ProblemArg::LogSmooth => ProblemKind::LogSmooth,
                },
                m,
                d,
                seed,
                consistent: true,
                curvature: None,
            };
            let problem = spec.build()?;
            let kind = OracleKind::parse(&oracle, batch)?;
            let x0 = initial_point(problem.dim(), seed);
            let eta = if eta == "auto" {
                let f_star = problem
                    .f_star()
                    .ok_or_else(|| adanorm::Error::Config("--eta auto needs a known F*".into()))?;
                problem.value(&x0) - f_star
            } else {
                eta.parse()
                    .map_err(|_| adanorm::Error::InvalidArgument(format!("bad --eta `{eta}`")))?
            };
            let config = AlgorithmConfig {
                algo: AlgorithmKind::from_name(&algo)?,
                b0,
                eta,
                beta,
            };
            let checkpoints = if checkpoints.is_empty() { vec![iters] } else { checkpoints };
            let mut oracle = GradientOracle::new(kind, oracle_seed(seed));
            let mut trace = adanorm::run(
                &problem,
                &mut oracle,
                &config,
                &x0,
                &RunOptions::new(iters, checkpoints, eps),
            )?;
            trace.seed = seed;
            trace.run_id = format!("{}-s{seed}", config.algo);
            let csv = harness::to_csv_string(std::slice::from_ref(&trace));
            match out {
                Some(path) => std::fs::write(path, csv)?,
                None => print!("{csv}"),
            }
            eprintln!(
                "{}: status={} final grad_norm_sq={:e}",
                trace.run_id,
                trace.status.label(),
                trace.last().grad_norm_sq
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { config, out } => {
            let cfg = SweepConfig::load(&config)?;
            let traces = run_sweep(&cfg)?;
            let csv = harness::to_csv_string(&traces);
            let summary = serde_json::to_string_pretty(&summarize(&traces))?;
            // The summary shares stdout only when the CSV went to a file.
            match out.or_else(|| cfg.out_path.clone()) {
                Some(path) => {
                    std::fs::write(path, csv)?;
                    println!("{summary}");
                }
                None => {
                    print!("{csv}");
                    eprintln!("{summary}");
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Bounds {
            theorem,
            b0,
            eta,
            lipschitz,
            sigma,
            gamma,
            delta_f,
            delta,
            n,
            eps,
        } => {
            let inputs = BoundInputs {
                b0,
                eta,
                lipschitz,
                sigma,
                gamma,
                delta_f,
                delta,
                n,
                eps,
            };
            println!("{}", serde_json::to_string_pretty(&bounds_json(theorem, &inputs)?)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Check { suite } => {
            let reports = run_check_suite(Suite::parse(&suite)?)?;
            println!("{}", serde_json::to_string_pretty(&reports)?);
            Ok(if reports.iter().all(|r| r.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}

fn bounds_json(theorem: TheoremArg, inputs: &BoundInputs) -> adanorm::Result<Value> {
    Ok(match theorem {
        TheoremArg::Stochastic => {
            let r = theory::theorem21_bound(inputs)?;
            json!({
                "inputs": inputs,
                "Q": r.component("Q"),
                "bound1": r.component("bound1"),
                "bound2": r.component("bound2"),
                "result": r.value,
                "branch": r.branch,
            })
        }
        TheoremArg::Deterministic => {
            let r = theory::theorem22_iterations(inputs)?;
            json!({
                "inputs": inputs,
                "C_b0": r.component("C_b0"),
                "bound1": Value::Null,
                "bound2": Value::Null,
                "result": r.value,
                "branch": r.branch,
                "components": r.components,
            })
        }
        TheoremArg::Gd => {
            let r = theory::classical_gd_iterations(inputs.b0, inputs.lipschitz, inputs.delta_f, inputs.eps)?;
            let (result, branch) = match r {
                GdIterations::Count(n) => (json!(n), "count"),
                GdIterations::Divergent => (Value::Null, "divergent"),
                GdIterations::Unspecified => (Value::Null, "unspecified"),
            };
            json!({ "inputs": inputs, "result": result, "branch": branch })
        }
        TheoremArg::Gl => json!({
            "inputs": inputs,
            "result": theory::ghadimi_lan_bound(inputs)?,
            "branch": "ghadimi_lan",
        }),
    })
}
