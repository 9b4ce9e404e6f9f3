//! Distance of a stochastic run from the regularized optimum over time.

use serde::Serialize;

use crate::adaptive::SimTrace;
use crate::error::{Error, Result};
use crate::oracle::OracleSolution;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Checkpoint {
    pub slot: usize,
    /// `|gamma[t] - gamma*|_inf`
    pub gamma_error: f64,
    /// `|W(q[t]) - nu*|_inf`
    pub nu_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub checkpoints: Vec<Checkpoint>,
    pub final_gamma_error: f64,
    pub final_nu_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Slots `1, 2, 5, 10, 20, 50, ...` below `slots`, then `slots` itself.
pub fn log_checkpoints(slots: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut decade = 1usize;
    'outer: loop {
        for m in [1, 2, 5] {
            let t = m * decade;
            if t >= slots {
                break 'outer;
            }
            out.push(t);
        }
        decade *= 10;
    }
    if slots > 0 {
        out.push(slots);
    }
    out
}

/// Compares `trace` with `target`, which must come from the regularized
/// solver run with the trace's `V`, utility and multiplier box
/// `[W(q_min), W(q_max)]`.
pub fn convergence_report(trace: &SimTrace, target: &OracleSolution, tolerance: f64) -> Result<ConvergenceReport> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let p = &trace.params;
    match target.v {
        Some(v) if v == p.v => {}
        other => {
            return Err(Error::ParameterMismatch(format!("trace has V = {}, target has {other:?}", p.v)));
        }
    }
    if target.utility != p.utility {
        return Err(Error::ParameterMismatch("utility differs between trace and target".into()));
    }
    let (lo, hi) = p.nu_bounds();
    match target.bounds {
        Some(b) if b.min == lo && b.max == hi => {}
        other => {
            return Err(Error::ParameterMismatch(format!(
                "target multiplier box {other:?} does not match the queue box [{lo}, {hi}]"
            )));
        }
    }
    if target.gamma.len() != trace.links() {
        return Err(Error::LengthMismatch { expected: trace.links(), got: target.gamma.len() });
    }
    let sup = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let checkpoints: Vec<Checkpoint> = log_checkpoints(trace.slots())
        .into_iter()
        .map(|t| {
            let w: Vec<f64> = trace.queue(t).iter().map(|&q| p.weight.value(q)).collect();
            Checkpoint {
                slot: t,
                gamma_error: sup(trace.gamma(t), target.gamma.as_slice()),
                nu_error: sup(&w, &target.nu),
            }
        })
        .collect();
    let last = *checkpoints.last().unwrap();
    Ok(ConvergenceReport {
        checkpoints,
        final_gamma_error: last.gamma_error,
        final_nu_error: last.nu_error,
        tolerance,
        pass: last.gamma_error < tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoints_are_log_spaced() {
        assert_eq!(log_checkpoints(1), vec![1]);
        assert_eq!(log_checkpoints(7), vec![1, 2, 5, 7]);
        assert_eq!(log_checkpoints(100), vec![1, 2, 5, 10, 20, 50, 100]);
        assert!(log_checkpoints(0).is_empty());
    }
}
