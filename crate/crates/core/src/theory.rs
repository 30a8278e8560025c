//! Closed-form convergence bounds and brute-force lemma checkers.
//!
//! All logarithms are natural.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::optimizers::RunTrace;

/// Problem and algorithm constants that appear in the bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub b0: f64,
    pub eta: f64,
    #[serde(rename = "L")]
    pub lipschitz: f64,
    pub sigma: f64,
    pub gamma: f64,
    /// `F(x_0) - F*`
    #[serde(rename = "deltaF")]
    pub delta_f: f64,
    /// Failure probability.
    pub delta: f64,
    #[serde(rename = "N")]
    pub n: u64,
    pub eps: f64,
}

impl Default for BoundInputs {
    fn default() -> Self {
        Self {
            b0: 1.0,
            eta: 1.0,
            lipschitz: 1.0,
            sigma: 0.0,
            gamma: 1.0,
            delta_f: 1.0,
            delta: 0.5,
            n: 100,
            eps: 0.1,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive, got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be non-negative, got {v}")))
    }
}

/// Which expression or case produced a [`BoundResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `(2 b0 / N + 2 sqrt2 (gamma + sigma) / sqrt N) Q / delta^{3/2}`
    Bound1,
    /// `(8Q/delta + 2 b0) 4Q/(N delta) + 8 Q sigma / (delta^{3/2} sqrt N)`
    Bound2,
    /// `b0 >= eta L`
    Case1,
    /// `b0 < eta L`
    Case2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub value: f64,
    pub branch: Branch,
    pub components: BTreeMap<String, f64>,
}

impl BoundResult {
    pub fn component(&self, name: &str) -> Option<f64> {
        self.components.get(name).copied()
    }
}

/// High-probability bound on `min_{l < N} ||grad F(x_l)||^2` for stochastic AdaGrad-Norm.
pub fn theorem21_bound(inp: &BoundInputs) -> Result<BoundResult> {
    if !(inp.delta > 0.0 && inp.delta < 1.0) {
        return Err(invalid(format!("delta must lie in (0, 1), got {}", inp.delta)));
    }
    positive("b0", inp.b0)?;
    positive("eta", inp.eta)?;
    positive("L", inp.lipschitz)?;
    non_negative("sigma", inp.sigma)?;
    non_negative("gamma", inp.gamma)?;
    non_negative("deltaF", inp.delta_f)?;
    if inp.n == 0 {
        return Err(invalid("N must be at least 1"));
    }
    if inp.gamma == 0.0 && inp.sigma == 0.0 {
        return Err(invalid("gamma or sigma must be positive"));
    }

    let n = inp.n as f64;
    let delta = inp.delta;
    let g2s2 = inp.gamma * inp.gamma + inp.sigma * inp.sigma;
    let log_term = (20.0 * n * g2s2 / (inp.b0 * inp.b0) + 10.0).ln();
    let q = inp.delta_f / inp.eta + (4.0 * inp.sigma + inp.eta * inp.lipschitz) / 2.0 * log_term;

    let d32 = delta.powf(1.5);
    let bound1 = (2.0 * inp.b0 / n + 2.0 * 2f64.sqrt() * (inp.gamma + inp.sigma) / n.sqrt()) * q / d32;
    let bound2 = (8.0 * q / delta + 2.0 * inp.b0) * 4.0 * q / (n * delta)
        + 8.0 * q * inp.sigma / (d32 * n.sqrt());

    let (value, branch) = if bound1 <= bound2 {
        (bound1, Branch::Bound1)
    } else {
        (bound2, Branch::Bound2)
    };
    let components = BTreeMap::from([
        ("Q".to_string(), q),
        ("bound1".to_string(), bound1),
        ("bound2".to_string(), bound2),
        ("log_term".to_string(), log_term),
    ]);
    Ok(BoundResult {
        value,
        branch,
        components,
    })
}

/// Iterations after which deterministic AdaGrad-Norm guarantees
/// `min_{j <= N} ||grad F(x_j)||^2 <= eps`.
pub fn theorem22_iterations(inp: &BoundInputs) -> Result<BoundResult> {
    positive("eps", inp.eps)?;
    positive("b0", inp.b0)?;
    positive("eta", inp.eta)?;
    positive("L", inp.lipschitz)?;
    non_negative("deltaF", inp.delta_f)?;

    let df = inp.delta_f;
    let eta_l = inp.eta * inp.lipschitz;
    let mut components = BTreeMap::new();
    let (inner, branch) = if inp.b0 >= eta_l {
        let t1 = 4.0 * df * df / (inp.eta * inp.eta);
        let t2 = 2.0 * inp.b0 * df / inp.eta;
        components.insert("term_suboptimality_sq".to_string(), t1);
        components.insert("term_b0".to_string(), t2);
        (t1 + t2, Branch::Case1)
    } else {
        let c_b0 = 1.0 + 2.0 * (eta_l / inp.b0).ln();
        let t1 = 2.0 * inp.lipschitz * df;
        let t2 = (2.0 * df / inp.eta + eta_l * c_b0).powi(2);
        let t3 = eta_l * eta_l * (1.0 + c_b0);
        let t4 = -inp.b0 * inp.b0;
        components.insert("C_b0".to_string(), c_b0);
        components.insert("term_smoothness".to_string(), t1);
        components.insert("term_squared".to_string(), t2);
        components.insert("term_escape".to_string(), t3);
        components.insert("term_b0".to_string(), t4);
        (t1 + t2 + t3 + t4, Branch::Case2)
    };
    let steps = (inner / inp.eps).ceil().max(0.0);
    components.insert("inner".to_string(), inner);
    Ok(BoundResult {
        value: 1.0 + steps,
        branch,
        components,
    })
}

/// Outcome of the classical fixed-stepsize GD count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GdIterations {
    Count(u64),
    /// `b <= L/2`: may oscillate or diverge.
    Divergent,
    /// `L/2 < b < L`: no count is given for this band.
    Unspecified,
}

/// `ceil(2 b deltaF / eps)` steps of `x' = x - grad F(x) / b` when `b >= L`.
pub fn classical_gd_iterations(b: f64, lipschitz: f64, delta_f: f64, eps: f64) -> Result<GdIterations> {
    positive("b", b)?;
    positive("L", lipschitz)?;
    non_negative("deltaF", delta_f)?;
    positive("eps", eps)?;
    Ok(if b >= lipschitz {
        GdIterations::Count((2.0 * b * delta_f / eps).ceil() as u64)
    } else if b <= lipschitz / 2.0 {
        GdIterations::Divergent
    } else {
        GdIterations::Unspecified
    })
}

/// Fixed-stepsize SGD comparison bound
/// `2 L deltaF / (N delta) + (L + 2 deltaF) sigma / (delta sqrt N)`.
pub fn ghadimi_lan_bound(inp: &BoundInputs) -> Result<f64> {
    if !(inp.delta > 0.0 && inp.delta <= 1.0) {
        return Err(invalid(format!("delta must lie in (0, 1], got {}", inp.delta)));
    }
    if inp.n == 0 {
        return Err(invalid("N must be at least 1"));
    }
    let n = inp.n as f64;
    Ok(2.0 * inp.lipschitz * inp.delta_f / (n * inp.delta)
        + (inp.lipschitz + 2.0 * inp.delta_f) * inp.sigma / (inp.delta * n.sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl InequalityCheck {
    fn new(lhs: f64, rhs: f64) -> Self {
        Self {
            lhs,
            rhs,
            holds: lhs <= rhs,
        }
    }
}

/// `sum_l a_l / sum_{i<=l} a_i <= log(sum_i a_i) + 1` for `a_1 >= 1`, `a_i >= 0`.
pub fn lemma_logsum_check(a: &[f64]) -> Result<InequalityCheck> {
    let first = *a
        .first()
        .ok_or_else(|| Error::Precondition("sequence must be non-empty".into()))?;
    if !(first >= 1.0) {
        return Err(Error::Precondition(format!("first entry must be >= 1, got {first}")));
    }
    if a.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::Precondition("entries must be finite and non-negative".into()));
    }
    let mut partial = 0.0;
    let mut lhs = 0.0;
    for &v in a {
        partial += v;
        lhs += v / partial;
    }
    Ok(InequalityCheck::new(lhs, partial.ln() + 1.0))
}

/// The realized log-sum inequality on an AdaGrad-Norm trace:
/// `sum_k ||G_k||^2 / b_{k+1}^2 <= log(b_N^2 / b_0^2) + 1`.
pub fn trace_logsum_check(trace: &RunTrace) -> Option<InequalityCheck> {
    trace.log_sum.map(|s| {
        InequalityCheck::new(s.ratio_sum, (s.b_final * s.b_final / (s.b0 * s.b0)).ln() + 1.0)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disjunct {
    /// `min_{k < N} a_k <= eps`
    SmallTerm,
    /// `b_N >= C`
    Crossed,
    Both,
    Neither,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EscapeCheck {
    pub steps: u64,
    pub b_final: f64,
    pub min_term: f64,
    pub which: Disjunct,
    pub holds: bool,
}

/// Steps `N = ceil((C^2 - b0^2) / eps) + 1` after which `b_{j+1}^2 = b_j^2 + a_j`
/// has either a term `<= eps` or `b_N >= C`. Never less than one step.
pub fn escape_steps(b0: f64, c: f64, eps: f64) -> u64 {
    let raw = ((c * c - b0 * b0) / eps).ceil();
    if raw <= 0.0 {
        1
    } else {
        raw as u64 + 1
    }
}

/// Simulates the accumulator for `N` steps and reports which disjunct holds.
pub fn lemma41_check(b0: f64, c: f64, eps: f64, a: &[f64]) -> Result<EscapeCheck> {
    positive("b0", b0)?;
    positive("C", c)?;
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(invalid(format!("eps must lie in (0, 1], got {eps}")));
    }
    let steps = escape_steps(b0, c, eps);
    if (a.len() as u64) < steps {
        return Err(Error::Precondition(format!(
            "sequence has {} terms, {steps} needed",
            a.len()
        )));
    }
    let window = &a[..steps as usize];
    if window.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Precondition("terms must be non-negative".into()));
    }
    let b_sq = window.iter().fold(b0 * b0, |acc, v| acc + v);
    let b_final = b_sq.sqrt();
    let min_term = window.iter().copied().fold(f64::INFINITY, f64::min);
    let which = match (min_term <= eps, b_final >= c) {
        (true, true) => Disjunct::Both,
        (true, false) => Disjunct::SmallTerm,
        (false, true) => Disjunct::Crossed,
        (false, false) => Disjunct::Neither,
    };
    Ok(EscapeCheck {
        steps,
        b_final,
        min_term,
        which,
        holds: which != Disjunct::Neither,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "outcome")]
pub enum Lemma42Outcome {
    Checked {
        k0: u64,
        lhs: f64,
        rhs: f64,
        holds: bool,
    },
    /// `b_j` never reached `eta L` inside the trace.
    NotApplicable,
}

/// Pre-threshold loss bound on a deterministic AdaGrad-Norm trace:
/// `F_{k0-1} - F* <= F_0 - F* + (eta^2 L / 2)(1 + 2 log(b_{k0-1} / b0))`
/// where `k0` is the first index with `b_{k0} >= eta L`.
///
/// The trace must record every iteration up to `k0`.
pub fn lemma42_empirical_check(
    trace: &RunTrace,
    lipschitz: f64,
    eta: f64,
    b0: f64,
    f_star: f64,
) -> Result<Lemma42Outcome> {
    positive("L", lipschitz)?;
    positive("eta", eta)?;
    positive("b0", b0)?;
    let threshold = eta * lipschitz;
    let records: Vec<_> = std::iter::once(&trace.initial)
        .chain(trace.checkpoints.iter())
        .collect();
    let Some(pos) = records.iter().position(|r| r.b_value >= threshold && r.grad_norm_sq.is_finite()) else {
        return Ok(Lemma42Outcome::NotApplicable);
    };
    for (i, r) in records[..=pos].iter().enumerate() {
        if r.iteration != i as u64 {
            return Err(Error::Precondition(format!(
                "trace must record every iteration up to the threshold crossing; missing {i}"
            )));
        }
    }
    let f0 = trace.initial.loss - f_star;
    let half = eta * eta * lipschitz / 2.0;
    if pos == 0 {
        return Ok(Lemma42Outcome::Checked {
            k0: 0,
            lhs: f0,
            rhs: f0 + half,
            holds: f0 <= f0 + half,
        });
    }
    let prev = records[pos - 1];
    let lhs = prev.loss - f_star;
    let rhs = f0 + half * (1.0 + 2.0 * (prev.b_value / b0).ln());
    Ok(Lemma42Outcome::Checked {
        k0: pos as u64,
        lhs,
        rhs,
        holds: lhs <= rhs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn theorem21_reference_values() {
        let inp = BoundInputs {
            sigma: 0.0,
            gamma: 1.0,
            b0: 1.0,
            eta: 1.0,
            lipschitz: 1.0,
            delta_f: 1.0,
            delta: 0.5,
            n: 100,
            ..Default::default()
        };
        let r = theorem21_bound(&inp).unwrap();
        // Straight re-evaluation of the closed form with scalar arithmetic.
        let q = 1.0 + 0.5 * 2010f64.ln();
        let b1 = (0.02 + 2.0 * 2f64.sqrt() / 10.0) * q / 0.5f64.powf(1.5);
        let b2 = (16.0 * q + 2.0) * 4.0 * q / 50.0;
        assert_relative_eq!(r.component("Q").unwrap(), q, max_relative = 1e-14);
        assert_relative_eq!(r.component("bound1").unwrap(), b1, max_relative = 1e-14);
        assert_relative_eq!(r.component("bound2").unwrap(), b2, max_relative = 1e-14);
        assert_eq!(r.branch, Branch::Bound1);
        assert!((r.value - 4.11).abs() < 0.01);
        assert!((b2 - 30.3).abs() < 0.1);
    }

    #[test]
    fn theorem21_rejects_bad_delta() {
        for delta in [0.0, 1.0, 1.5, -0.1] {
            let inp = BoundInputs {
                delta,
                ..Default::default()
            };
            assert!(matches!(theorem21_bound(&inp), Err(Error::InvalidArgument(_))));
        }
        let inp = BoundInputs {
            gamma: 0.0,
            sigma: 0.0,
            ..Default::default()
        };
        assert!(theorem21_bound(&inp).is_err());
    }

    #[test]
    fn theorem21_decreases_in_n_and_delta() {
        let (mut prev, mut prev1, mut prev2) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
        for k in 2..=8 {
            let inp = BoundInputs {
                n: 10u64.pow(k),
                ..Default::default()
            };
            let r = theorem21_bound(&inp).unwrap();
            let (b1, b2) = (r.component("bound1").unwrap(), r.component("bound2").unwrap());
            assert!(r.value < prev && b1 < prev1 && b2 < prev2);
            (prev, prev1, prev2) = (r.value, b1, b2);
        }
        assert!(prev < 1e-2);

        let lo = theorem21_bound(&BoundInputs { delta: 0.2, ..Default::default() }).unwrap();
        let hi = theorem21_bound(&BoundInputs { delta: 0.4, ..Default::default() }).unwrap();
        assert!(hi.value <= lo.value);
    }

    #[test]
    fn theorem22_examples() {
        let base = BoundInputs {
            eta: 1.0,
            lipschitz: 1.0,
            delta_f: 1.0,
            eps: 0.1,
            ..Default::default()
        };
        let r = theorem22_iterations(&BoundInputs { b0: 1.0, ..base }).unwrap();
        assert_eq!(r.branch, Branch::Case1);
        assert_eq!(r.value, 61.0);

        let r = theorem22_iterations(&BoundInputs { b0: (-1f64).exp(), ..base }).unwrap();
        assert_eq!(r.branch, Branch::Case2);
        assert_relative_eq!(r.component("C_b0").unwrap(), 3.0, max_relative = 1e-15);
        assert_eq!(r.value, 310.0);

        let r = theorem22_iterations(&BoundInputs { b0: 2.0, delta_f: 0.0, ..base }).unwrap();
        assert_eq!(r.value, 1.0);
        assert!(theorem22_iterations(&BoundInputs { eps: 0.0, ..base }).is_err());
    }

    #[test]
    fn classical_gd_examples() {
        assert_eq!(classical_gd_iterations(1.0, 1.0, 1.0, 0.1).unwrap(), GdIterations::Count(20));
        assert_eq!(classical_gd_iterations(0.4, 1.0, 1.0, 0.1).unwrap(), GdIterations::Divergent);
        assert_eq!(classical_gd_iterations(0.5, 1.0, 1.0, 0.1).unwrap(), GdIterations::Divergent);
        assert_eq!(classical_gd_iterations(0.7, 1.0, 1.0, 0.1).unwrap(), GdIterations::Unspecified);
        assert_eq!(classical_gd_iterations(2.0, 1.0, 0.0, 0.1).unwrap(), GdIterations::Count(0));
    }

    #[test]
    fn ghadimi_lan_examples() {
        let inp = BoundInputs {
            sigma: 0.0,
            lipschitz: 1.0,
            delta_f: 1.0,
            delta: 0.5,
            n: 100,
            ..Default::default()
        };
        assert_relative_eq!(ghadimi_lan_bound(&inp).unwrap(), 0.04, max_relative = 1e-14);
        let inp = BoundInputs {
            sigma: 1.0,
            delta: 1.0,
            ..inp
        };
        assert_relative_eq!(ghadimi_lan_bound(&inp).unwrap(), 0.32, max_relative = 1e-14);
    }

    #[test]
    fn logsum_examples() {
        let r = lemma_logsum_check(&[1.0]).unwrap();
        assert_eq!((r.lhs, r.rhs, r.holds), (1.0, 1.0, true));
        let r = lemma_logsum_check(&[1.0, 1.0, 1.0]).unwrap();
        assert_relative_eq!(r.lhs, 1.0 + 0.5 + 1.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(r.rhs, 3f64.ln() + 1.0, max_relative = 1e-15);
        assert!(r.holds);
        assert!(matches!(lemma_logsum_check(&[0.5, 2.0]), Err(Error::Precondition(_))));
        assert!(matches!(lemma_logsum_check(&[]), Err(Error::Precondition(_))));
        assert!(matches!(lemma_logsum_check(&[1.0, -1.0]), Err(Error::Precondition(_))));
    }

    #[test]
    fn lemma41_examples() {
        let r = lemma41_check(2.0, 1.0, 0.5, &[1.0]).unwrap();
        assert!(r.holds);
        assert!(matches!(r.which, Disjunct::Crossed | Disjunct::Both));

        let (b0, c, eps) = (0.5, 3.0, 0.25);
        let n = escape_steps(b0, c, eps);
        assert_eq!(n, 36);
        let r = lemma41_check(b0, c, eps, &vec![eps; n as usize]).unwrap();
        assert!(r.b_final >= c);
        assert_eq!(r.which, Disjunct::Both);

        assert!(matches!(
            lemma41_check(b0, c, eps, &vec![1.0; n as usize - 1]),
            Err(Error::Precondition(_))
        ));
    }
}
