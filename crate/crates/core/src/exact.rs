//! Closed-form stationary laws of the collision-free CSMA chain.
//!
//! Every distribution here is a Gibbs measure over the schedule set,
//! `pi(m) ∝ exp(sum_{l in m} x_l)`, normalized in log space so that large
//! exponents (large `lambda * mu`) do not overflow.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functions::Weight;
use crate::graph::ScheduleSet;

/// Probability vector indexed like the canonical [`ScheduleSet`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScheduleDistribution {
    probs: Vec<f64>,
}

impl ScheduleDistribution {
    /// Accepts any nonnegative vector summing to one within `1e-9`.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidParameter("empty distribution".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(**p >= 0.0 && p.is_finite())) {
            return Err(Error::InvalidParameter(format!("invalid probability {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Self {
        Self { probs: vec![1.0 / n as f64; n] }
    }

    pub fn point_mass(n: usize, index: usize) -> Self {
        let mut probs = vec![0.0; n];
        probs[index] = 1.0;
        Self { probs }
    }

    /// Normalizes unnormalized log-weights with the max-shift trick.
    pub fn from_log_weights(log_weights: &[f64]) -> Self {
        let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = log_weights.iter().map(|w| (w - max).exp()).collect();
        let z: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= z);
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn total_variation(&self, other: &ScheduleDistribution) -> f64 {
        0.5 * self.probs.iter().zip(&other.probs).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self.probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }
}

/// Per-link long-term service rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThroughputVector(pub Vec<f64>);

impl ThroughputVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max_abs_diff(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

impl std::ops::Index<usize> for ThroughputVector {
    type Output = f64;
    fn index(&self, l: usize) -> &f64 {
        &self.0[l]
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, got })
    }
}

/// Sum of per-link exponents over each schedule.
pub fn schedule_exponents(s: &ScheduleSet, link_exponent: &[f64]) -> Vec<f64> {
    s.iter().map(|m| m.links().map(|l| link_exponent[l]).sum()).collect()
}

/// `pi(m) ∝ exp(sum_{l in m} nu_l)`.
pub fn gibbs_distribution(s: &ScheduleSet, nu: &[f64]) -> Result<ScheduleDistribution> {
    check_len(s.links(), nu.len())?;
    Ok(ScheduleDistribution::from_log_weights(&schedule_exponents(s, nu)))
}

/// `log sum_m exp(sum_{l in m} nu_l)`.
pub fn log_partition(s: &ScheduleSet, nu: &[f64]) -> Result<f64> {
    check_len(s.links(), nu.len())?;
    let e = schedule_exponents(s, nu);
    let max = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(max + e.iter().map(|x| (x - max).exp()).sum::<f64>().ln())
}

/// Stationary law of CSMA with activation rates `lambda` and common mean
/// holding time `mu`: `pi(m) ∝ prod_{l in m} lambda_l * mu`.
pub fn stationary_distribution(s: &ScheduleSet, lambda: &[f64], mu: f64) -> Result<ScheduleDistribution> {
    check_len(s.links(), lambda.len())?;
    positive("mu", mu)?;
    let log_lambda = lambda.iter().map(|&x| positive("lambda", x).map(|_| x.ln())).collect::<Result<Vec<_>>>()?;
    stationary_distribution_log(s, &log_lambda, mu)
}

/// Same as [`stationary_distribution`] with the rates given as `ln(lambda_l)`.
pub fn stationary_distribution_log(s: &ScheduleSet, log_lambda: &[f64], mu: f64) -> Result<ScheduleDistribution> {
    check_len(s.links(), log_lambda.len())?;
    positive("mu", mu)?;
    let ln_mu = mu.ln();
    let x: Vec<f64> = log_lambda.iter().map(|ll| ll + ln_mu).collect();
    gibbs_distribution(s, &x)
}

/// Per-link holding means, for validating the general product form.
pub fn stationary_distribution_per_link(s: &ScheduleSet, lambda: &[f64], mu: &[f64]) -> Result<ScheduleDistribution> {
    check_len(s.links(), lambda.len())?;
    check_len(s.links(), mu.len())?;
    let mut x = Vec::with_capacity(lambda.len());
    for (&la, &m) in lambda.iter().zip(mu) {
        positive("lambda", la)?;
        positive("mu", m)?;
        x.push(la.ln() + m.ln());
    }
    gibbs_distribution(s, &x)
}

/// `pi^q(m) ∝ exp(sum_{l in m} W(q_l))`.
pub fn distribution_from_queues(s: &ScheduleSet, q: &[f64], w: &Weight) -> Result<ScheduleDistribution> {
    let nu: Vec<f64> = q.iter().map(|&x| w.value(x)).collect();
    gibbs_distribution(s, &nu)
}

/// `gamma_l = sum over schedules containing l of pi(m)`.
pub fn link_throughputs(s: &ScheduleSet, pi: &ScheduleDistribution) -> Result<ThroughputVector> {
    check_len(s.len(), pi.len())?;
    let mut gamma = vec![0.0; s.links()];
    for (m, p) in s.iter().zip(pi.probs()) {
        for l in m.links() {
            gamma[l] += p;
        }
    }
    Ok(ThroughputVector(gamma))
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {x}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{addable_links, enumerate_schedules, ConflictGraph, Schedule};
    use proptest::prelude::*;
    use std::f64::consts::E;

    fn path3() -> ScheduleSet {
        enumerate_schedules(&ConflictGraph::path(3).unwrap()).unwrap()
    }

    #[test]
    fn uniform_on_path() {
        let pi = stationary_distribution(&path3(), &[1.0; 3], 1.0).unwrap();
        for p in pi.probs() {
            assert!((p - 0.2).abs() < 1e-15);
        }
        let gamma = link_throughputs(&path3(), &pi).unwrap();
        assert!(gamma.max_abs_diff(&[0.4, 0.2, 0.4]) < 1e-15);
    }

    #[test]
    fn single_link() {
        let s = enumerate_schedules(&ConflictGraph::path(1).unwrap()).unwrap();
        let pi = stationary_distribution(&s, &[2.0], 1.0).unwrap();
        assert!((pi.probs()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((pi.probs()[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn full_interference_closed_form() {
        for links in 1..=5 {
            let s = enumerate_schedules(&ConflictGraph::complete(links).unwrap()).unwrap();
            let c = 1.7;
            let pi = stationary_distribution(&s, &vec![c / 0.5; links], 0.5).unwrap();
            let gamma = link_throughputs(&s, &pi).unwrap();
            for g in gamma.as_slice() {
                assert!((g - c / (1.0 + links as f64 * c)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn queue_distribution() {
        let s = path3();
        let pi = distribution_from_queues(&s, &[0.0; 3], &Weight::IDENTITY).unwrap();
        assert!(pi.probs().iter().all(|p| (p - 0.2).abs() < 1e-15));
        let pi = distribution_from_queues(&s, &[1.0, 0.0, 0.0], &Weight::IDENTITY).unwrap();
        let idx = s.index_of(Schedule::from_links(&[0])).unwrap();
        assert!((pi.probs()[idx] - E / (3.0 + 2.0 * E)).abs() < 1e-15);
    }

    #[test]
    fn queue_distribution_matches_rate_rule() {
        let s = path3();
        let w = Weight::Log1p { scale: 2.0 };
        let q = [0.3, 4.0, 1.5];
        let mu: f64 = 0.7;
        let log_lambda: Vec<f64> = q.iter().map(|&x| w.value(x) - mu.ln()).collect();
        let a = distribution_from_queues(&s, &q, &w).unwrap();
        let b = stationary_distribution_log(&s, &log_lambda, mu).unwrap();
        for (x, y) in a.probs().iter().zip(b.probs()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn large_exponents_do_not_overflow() {
        let s = path3();
        let pi = distribution_from_queues(&s, &[800.0, 900.0, 800.0], &Weight::IDENTITY).unwrap();
        assert!(pi.probs().iter().all(|p| p.is_finite()));
        let idx = s.index_of(Schedule::from_links(&[0, 2])).unwrap();
        assert!((pi.probs()[idx] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn throughputs_of_point_masses() {
        let s = path3();
        let gamma = link_throughputs(&s, &ScheduleDistribution::point_mass(5, 0)).unwrap();
        assert_eq!(gamma.as_slice(), &[0.0; 3]);
        let idx = s.index_of(Schedule::from_links(&[0, 2])).unwrap();
        let gamma = link_throughputs(&s, &ScheduleDistribution::point_mass(5, idx)).unwrap();
        assert_eq!(gamma.as_slice(), &[1.0, 0.0, 1.0]);
    }

    #[test]
    fn rejects_bad_parameters() {
        let s = path3();
        assert!(stationary_distribution(&s, &[1.0, 0.0, 1.0], 1.0).is_err());
        assert!(stationary_distribution(&s, &[1.0; 3], -1.0).is_err());
        assert!(stationary_distribution(&s, &[1.0; 2], 1.0).is_err());
    }

    fn arb_case() -> impl Strategy<Value = (ConflictGraph, Vec<f64>, f64)> {
        (1usize..=12, any::<u64>()).prop_flat_map(|(links, edge_bits)| {
            let mut conflicts = Vec::new();
            let mut k = 0;
            for i in 0..links {
                for j in i + 1..links {
                    if edge_bits.rotate_left(k) & 1 == 1 {
                        conflicts.push((i, j));
                    }
                    k += 1;
                }
            }
            let g = ConflictGraph::new(links, &conflicts).unwrap();
            (Just(g), proptest::collection::vec(0.01f64..50.0, links), 0.05f64..5.0)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn detailed_balance((g, lambda, mu) in arb_case()) {
            let s = enumerate_schedules(&g).unwrap();
            let pi = stationary_distribution(&s, &lambda, mu).unwrap();
            for (i, m) in s.iter().enumerate() {
                for l in addable_links(m, &g).unwrap() {
                    let j = s.index_of(m.with(l)).unwrap();
                    let lhs = pi.probs()[i] * lambda[l];
                    let rhs = pi.probs()[j] / mu;
                    prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.max(rhs).max(1e-300));
                }
            }
        }

        #[test]
        fn scale_invariance((g, lambda, mu) in arb_case(), c in 0.01f64..100.0) {
            let s = enumerate_schedules(&g).unwrap();
            let base = stationary_distribution(&s, &lambda, mu).unwrap();
            // every unnormalized schedule weight scaled by c
            let shifted: Vec<f64> = schedule_exponents(&s, &lambda.iter().map(|x| (x * mu).ln()).collect::<Vec<_>>())
                .into_iter().map(|e| e + c.ln()).collect();
            let again = ScheduleDistribution::from_log_weights(&shifted);
            for (a, b) in base.probs().iter().zip(again.probs()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
