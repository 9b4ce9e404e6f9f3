//! Reference solvers for the schedule-level utility problems.
//!
//! * [`solve_utility_optimal`] maximizes `sum_l U(gamma_l)` over the convex
//!   hull of schedules, by projected gradient ascent on the schedule simplex.
//! * [`solve_entropy_regularized`] maximizes `V sum_l U(gamma_l) + H(pi)` by
//!   projected descent on the per-link multipliers `nu`: for fixed `nu` the
//!   inner maximization is closed form (`pi ∝ exp(sum_{l in m} nu_l)`,
//!   `gamma_l = U'^{-1}(nu_l / V)`), so only `nu` is iterated.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{gibbs_distribution, link_throughputs, log_partition, ScheduleDistribution, ThroughputVector};
use crate::functions::Utility;
use crate::graph::ScheduleSet;

/// Box `[min, max]` on the multipliers. `max` may be infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualBounds {
    pub min: f64,
    pub max: f64,
}

impl DualBounds {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && min < max) {
            return Err(Error::InvalidParameter(format!("invalid multiplier bounds [{min}, {max}]")));
        }
        Ok(Self { min, max })
    }

    /// `(0, inf)` up to a tiny positive floor.
    pub fn positive() -> Self {
        Self { min: 1e-12, max: f64::INFINITY }
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.max(self.min).min(self.max)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.min && x <= self.max
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    /// Step scale: iteration `k` uses `a0 / sqrt(k)`.
    pub a0: f64,
    pub max_iter: usize,
    pub nu0: Option<Vec<f64>>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-9, a0: 1.0, max_iter: 1_000_000, nu0: None }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSolution {
    pub gamma: ThroughputVector,
    pub pi: ScheduleDistribution,
    pub nu: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    #[serde(rename = "V")]
    pub v: Option<f64>,
    pub bounds: Option<DualBounds>,
    #[serde(skip)]
    pub utility: Utility,
}

/// Maximizes `V * sum U(gamma) + H(pi)` subject to `gamma_l <= sum_{m ∋ l} pi_m`.
pub fn solve_entropy_regularized(
    s: &ScheduleSet,
    u: Utility,
    v: f64,
    bounds: DualBounds,
    opts: &SolverOptions,
) -> Result<OracleSolution> {
    u.validate()?;
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::InvalidParameter(format!("V must be positive, got {v}")));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let limit = bounds.max / u.derivative(1.0);
    if v > limit {
        return Err(Error::InadmissibleV { v, limit });
    }
    let links = s.links();
    let mut nu = match &opts.nu0 {
        Some(nu0) if nu0.len() != links => return Err(Error::LengthMismatch { expected: links, got: nu0.len() }),
        Some(nu0) => nu0.iter().map(|&x| bounds.clamp(x)).collect(),
        None => vec![bounds.clamp(v * u.derivative(0.5)); links],
    };

    let mut residual = f64::INFINITY;
    for k in 1..=opts.max_iter {
        let pi = gibbs_distribution(s, &nu)?;
        let occupancy = link_throughputs(s, &pi)?;
        let mut dir = vec![0.0; links];
        residual = 0.0;
        for l in 0..links {
            let d = u.inverse_derivative(nu[l] / v) - occupancy[l];
            let outward = (nu[l] <= bounds.min && d < 0.0) || (nu[l] >= bounds.max && d > 0.0);
            if !outward {
                dir[l] = d;
                residual = f64::max(residual, d.abs());
            }
        }
        if residual < opts.tol {
            return Ok(finish_regularized(s, u, v, bounds, nu, pi, occupancy, k));
        }
        let step = opts.a0 / (k as f64).sqrt();
        for l in 0..links {
            nu[l] = bounds.clamp(nu[l] + step * dir[l]);
        }
    }
    Err(Error::NoConvergence { iterations: opts.max_iter, residual })
}

#[allow(clippy::too_many_arguments)]
fn finish_regularized(
    s: &ScheduleSet,
    u: Utility,
    v: f64,
    bounds: DualBounds,
    nu: Vec<f64>,
    pi: ScheduleDistribution,
    occupancy: ThroughputVector,
    iterations: usize,
) -> OracleSolution {
    // interior multipliers satisfy the first-order condition exactly; a
    // multiplier pinned at a bound keeps the primal point feasible instead
    let gamma: Vec<f64> = (0..s.links())
        .map(|l| {
            let g = u.inverse_derivative(nu[l] / v);
            if nu[l] > bounds.min && nu[l] < bounds.max {
                g
            } else {
                g.min(occupancy[l])
            }
        })
        .collect();
    let objective = v * u.total(&gamma) + pi.entropy();
    let kkt = kkt_residual(s, u, v, &gamma, &pi, &nu).unwrap_or(f64::INFINITY);
    OracleSolution {
        gamma: ThroughputVector(gamma),
        pi,
        nu,
        objective,
        kkt_residual: kkt,
        iterations,
        v: Some(v),
        bounds: Some(bounds),
        utility: u,
    }
}

/// Maximizes `sum U(gamma)` over the schedule polytope.
///
/// `kkt_residual` of the result holds the final gradient-mapping norm, and
/// `nu` the marginal utilities `U'(gamma_l)`.
pub fn solve_utility_optimal(s: &ScheduleSet, u: Utility, tol: f64) -> Result<OracleSolution> {
    solve_utility_optimal_capped(s, u, tol, 1_000_000)
}

pub fn solve_utility_optimal_capped(s: &ScheduleSet, u: Utility, tol: f64, max_iter: usize) -> Result<OracleSolution> {
    u.validate()?;
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tol}")));
    }
    let n = s.len();
    let objective = |pi: &[f64]| -> f64 {
        let mut gamma = vec![0.0; s.links()];
        for (m, p) in s.iter().zip(pi) {
            m.links().for_each(|l| gamma[l] += p);
        }
        let f = u.total(&gamma);
        if f.is_nan() {
            f64::NEG_INFINITY
        } else {
            f
        }
    };

    let mut pi = vec![1.0 / n as f64; n];
    let mut f = objective(&pi);
    let mut step = 1.0;
    let mut mapping = f64::INFINITY;
    for it in 1..=max_iter {
        let grad = schedule_gradient(s, u, &pi);

        let (candidate, fc) = loop {
            let trial: Vec<f64> = pi.iter().zip(&grad).map(|(p, g)| p + step * g).collect();
            let cand = project_simplex(&trial);
            let fc = objective(&cand);
            // Gradients are centred on their pi-mean: this leaves the products
            // with feasible moves unchanged but keeps the projection's rounding
            // of the total mass from swamping them near the optimum.
            let centre: f64 = grad.iter().zip(&pi).map(|(g, p)| g * p).sum();
            let ascent: f64 = grad.iter().zip(cand.iter().zip(&pi)).map(|(g, (c, p))| (g - centre) * (c - p)).sum();
            // Once the objective change drowns in rounding, estimate it from the
            // gradients at both ends instead (trapezoid rule).
            let gain = if fc.is_finite() && (fc - f).abs() <= 1e-12 * f.abs().max(1.0) {
                let gc = schedule_gradient(s, u, &cand);
                let centre_c: f64 = gc.iter().zip(&cand).map(|(g, p)| g * p).sum();
                grad.iter()
                    .zip(&gc)
                    .zip(cand.iter().zip(&pi))
                    .map(|((a, b), (c, p))| 0.5 * (a - centre + b - centre_c) * (c - p))
                    .sum()
            } else {
                fc - f
            };
            if fc.is_finite() && gain >= 1e-4 * ascent {
                break (cand, fc);
            }
            step *= 0.5;
            if step < 1e-300 {
                return Err(Error::NoConvergence { iterations: it, residual: mapping });
            }
        };
        mapping = candidate.iter().zip(&pi).map(|(c, p)| (c - p).abs()).fold(0.0, f64::max) / step;
        pi = candidate;
        f = fc;
        if mapping < tol {
            let pi = ScheduleDistribution::new(pi)?;
            let gamma = link_throughputs(s, &pi)?;
            let nu = gamma.as_slice().iter().map(|&g| u.derivative(g)).collect();
            return Ok(OracleSolution {
                objective: u.total(gamma.as_slice()),
                gamma,
                pi,
                nu,
                kkt_residual: mapping,
                iterations: it,
                v: None,
                bounds: None,
                utility: u,
            });
        }
        step = (step * 2.0).min(1e6);
    }
    Err(Error::NoConvergence { iterations: max_iter, residual: mapping })
}

fn schedule_gradient(s: &ScheduleSet, u: Utility, pi: &[f64]) -> Vec<f64> {
    let marginal: Vec<f64> = throughputs_of(s, pi).iter().map(|&g| u.derivative(g)).collect();
    s.iter().map(|m| m.links().map(|l| marginal[l]).sum()).collect()
}

fn throughputs_of(s: &ScheduleSet, pi: &[f64]) -> Vec<f64> {
    let mut gamma = vec![0.0; s.links()];
    for (m, p) in s.iter().zip(pi) {
        m.links().for_each(|l| gamma[l] += p);
    }
    gamma
}

/// Euclidean projection onto the probability simplex.
pub(crate) fn project_simplex(x: &[f64]) -> Vec<f64> {
    let mut sorted = x.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (i, &v) in sorted.iter().enumerate() {
        cumulative += v;
        let t = (cumulative - 1.0) / (i + 1) as f64;
        if v - t > 0.0 {
            theta = t;
        }
    }
    x.iter().map(|&v| (v - theta).max(0.0)).collect()
}

/// Bound check between the utility-optimal value and the entropy-regularized one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapCertificate {
    pub gap: f64,
    pub bound: f64,
    pub holds: bool,
}

/// `gap = |sum U(gamma_opt) - sum U(gamma_reg)|` against `log|N| / V`.
pub fn utility_gap_certificate(
    s: &ScheduleSet,
    u: Utility,
    v: f64,
    regularized: &OracleSolution,
    optimal: &OracleSolution,
) -> GapCertificate {
    let gap = (u.total(optimal.gamma.as_slice()) - u.total(regularized.gamma.as_slice())).abs();
    let bound = (s.len() as f64).ln() / v;
    GapCertificate { gap, bound, holds: gap <= bound + 1e-9 }
}

/// Largest violation of the optimality conditions of the regularized problem:
/// stationarity in `gamma` (`V U'(gamma_l) = nu_l`), stationarity in `pi`
/// with the normalization multiplier chosen to zero the mean residual, and
/// complementary slackness `nu_l (gamma_l - sum_{m ∋ l} pi_m) = 0`.
pub fn kkt_residual(
    s: &ScheduleSet,
    u: Utility,
    v: f64,
    gamma: &[f64],
    pi: &ScheduleDistribution,
    nu: &[f64],
) -> Result<f64> {
    let links = s.links();
    for len in [gamma.len(), nu.len()] {
        if len != links {
            return Err(Error::LengthMismatch { expected: links, got: len });
        }
    }
    if pi.len() != s.len() {
        return Err(Error::LengthMismatch { expected: s.len(), got: pi.len() });
    }
    if let Some(index) = pi.probs().iter().position(|&p| p <= 0.0) {
        return Err(Error::DegenerateDistribution { index });
    }
    let mut worst: f64 = 0.0;
    for l in 0..links {
        worst = worst.max((v * u.derivative(gamma[l]) - nu[l]).abs());
    }
    let raw: Vec<f64> =
        s.iter().zip(pi.probs()).map(|(m, p)| -1.0 - p.ln() + m.links().map(|l| nu[l]).sum::<f64>()).collect();
    let eta = -raw.iter().sum::<f64>() / raw.len() as f64;
    for r in &raw {
        worst = worst.max((r + eta).abs());
    }
    let occupancy = link_throughputs(s, pi)?;
    for l in 0..links {
        worst = worst.max((nu[l] * (gamma[l] - occupancy[l])).abs());
    }
    Ok(worst)
}

/// Dual function `D(nu) = sum_l [V U(g_l) - nu_l g_l] + log sum_m exp(sum_{l in m} nu_l)`
/// with `g_l = U'^{-1}(nu_l / V)`.
pub fn dual_value(s: &ScheduleSet, u: Utility, v: f64, nu: &[f64], bounds: DualBounds) -> Result<f64> {
    if nu.len() != s.links() {
        return Err(Error::LengthMismatch { expected: s.links(), got: nu.len() });
    }
    if let Some(x) = nu.iter().find(|&&x| !bounds.contains(x)) {
        return Err(Error::InvalidParameter(format!("multiplier {x} outside [{}, {}]", bounds.min, bounds.max)));
    }
    let separable: f64 = nu
        .iter()
        .map(|&n| {
            let g = u.inverse_derivative(n / v);
            v * u.value(g) - n * g
        })
        .sum();
    Ok(separable + log_partition(s, nu)?)
}

/// Objective of the regularized problem at a primal point.
pub fn regularized_objective(u: Utility, v: f64, gamma: &[f64], pi: &ScheduleDistribution) -> f64 {
    v * u.total(gamma) + pi.entropy()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{enumerate_schedules, ConflictGraph, Schedule};

    fn set(g: ConflictGraph) -> ScheduleSet {
        enumerate_schedules(&g).unwrap()
    }

    /// Root of `1/p = ln(p / (1 - p))` by bisection.
    fn single_link_root() -> f64 {
        let f = |p: f64| 1.0 / p - (p / (1.0 - p)).ln();
        let (mut lo, mut hi) = (0.5, 0.999);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn simplex_projection() {
        assert_eq!(project_simplex(&[0.2, 0.3, 0.5]), vec![0.2, 0.3, 0.5]);
        assert_eq!(project_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
        let p = project_simplex(&[0.9, 0.9, -3.0]);
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15 && p[2] == 0.0);
    }

    #[test]
    fn single_link_regularized() {
        let s = set(ConflictGraph::path(1).unwrap());
        let p_star = single_link_root();
        assert!((p_star - 0.78219).abs() < 1e-5);
        let sol = solve_entropy_regularized(&s, Utility::Log, 1.0, DualBounds::positive(), &SolverOptions::default())
            .unwrap();
        assert!((sol.gamma[0] - p_star).abs() < 1e-8, "{:?}", sol.gamma);
        assert!((sol.pi.probs()[1] - p_star).abs() < 1e-8);
        assert!(sol.kkt_residual < 1e-8);
    }

    #[test]
    fn path3_utility_optimal() {
        let s = set(ConflictGraph::path(3).unwrap());
        let sol = solve_utility_optimal(&s, Utility::Log, 1e-10).unwrap();
        assert!(sol.gamma.max_abs_diff(&[2.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0]) < 1e-8);
        assert!((sol.objective - (2.0 * (2.0f64 / 3.0).ln() + (1.0f64 / 3.0).ln())).abs() < 1e-9);
        let i13 = s.index_of(Schedule::from_links(&[0, 2])).unwrap();
        assert!((sol.pi.probs()[i13] - 2.0 / 3.0).abs() < 1e-8);
    }

    #[test]
    fn face_and_symmetric_optima() {
        let single = set(ConflictGraph::path(1).unwrap());
        let sol = solve_utility_optimal(&single, Utility::Log, 1e-10).unwrap();
        assert!((sol.gamma[0] - 1.0).abs() < 1e-12);
        for links in 2..=5 {
            let s = set(ConflictGraph::complete(links).unwrap());
            let sol = solve_utility_optimal(&s, Utility::Log, 1e-10).unwrap();
            assert!(sol.gamma.max_abs_diff(&vec![1.0 / links as f64; links]) < 1e-8);
        }
    }

    #[test]
    fn single_link_gap() {
        let s = set(ConflictGraph::path(1).unwrap());
        let reg = solve_entropy_regularized(&s, Utility::Log, 1.0, DualBounds::positive(), &SolverOptions::default())
            .unwrap();
        let opt = solve_utility_optimal(&s, Utility::Log, 1e-10).unwrap();
        let cert = utility_gap_certificate(&s, Utility::Log, 1.0, &reg, &opt);
        assert!((cert.bound - 2f64.ln()).abs() < 1e-15);
        assert!((cert.gap - single_link_root().ln().abs()).abs() < 1e-7);
        assert!(cert.holds);
    }

    #[test]
    fn kkt_terms() {
        let s = set(ConflictGraph::path(3).unwrap());
        let sol = solve_entropy_regularized(&s, Utility::Log, 1.0, DualBounds::positive(), &SolverOptions::default())
            .unwrap();
        assert!(sol.kkt_residual < 1e-8);
        let mut nu = sol.nu.clone();
        nu[1] += 0.1;
        let r = kkt_residual(&s, Utility::Log, 1.0, sol.gamma.as_slice(), &sol.pi, &nu).unwrap();
        assert!(r >= 0.1 - 1e-9);

        let uniform = ScheduleDistribution::uniform(5);
        let gamma = [0.4, 0.2, 0.4];
        let r = kkt_residual(&s, Utility::Log, 2.0, &gamma, &uniform, &[0.0; 3]).unwrap();
        // stationarity in gamma dominates: V U'(gamma) = 2 / 0.2
        assert!((r - 10.0).abs() < 1e-12);

        let degenerate = ScheduleDistribution::point_mass(5, 0);
        assert_eq!(
            kkt_residual(&s, Utility::Log, 1.0, &gamma, &degenerate, &[1.0; 3]),
            Err(Error::DegenerateDistribution { index: 1 })
        );
    }

    #[test]
    fn dual_value_at_zero_multipliers_is_log_count() {
        let s = set(ConflictGraph::path(3).unwrap());
        assert!((log_partition(&s, &[0.0; 3]).unwrap() - 5f64.ln()).abs() < 1e-15);
        let b = DualBounds::new(0.5, 3.0).unwrap();
        assert!(dual_value(&s, Utility::Log, 1.0, &[0.1, 1.0, 1.0], b).is_err());
    }

    #[test]
    fn inadmissible_v_and_non_convergence() {
        let s = set(ConflictGraph::path(3).unwrap());
        let b = DualBounds::new(0.1, 2.0).unwrap();
        assert!(matches!(
            solve_entropy_regularized(&s, Utility::Log, 3.0, b, &SolverOptions::default()),
            Err(Error::InadmissibleV { .. })
        ));
        let opts = SolverOptions { max_iter: 3, ..SolverOptions::default() };
        assert!(matches!(
            solve_entropy_regularized(&s, Utility::Log, 1.0, DualBounds::positive(), &opts),
            Err(Error::NoConvergence { .. })
        ));
    }

    #[test]
    fn alpha_fair_regularized_satisfies_kkt() {
        let s = set(ConflictGraph::new(4, &[(0, 1), (1, 2), (2, 3)]).unwrap());
        let u = Utility::AlphaFair { alpha: 2.0 };
        let sol = solve_entropy_regularized(&s, u, 1.0, DualBounds::positive(), &SolverOptions::default()).unwrap();
        assert!(sol.kkt_residual < 1e-8, "{}", sol.kkt_residual);
    }
}
