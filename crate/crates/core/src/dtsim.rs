//! Slotted CSMA with collisions under epsilon-scaling.
//!
//! Time advances in minislots of unit length. Carrier sensing is delayed by
//! one minislot: an idle link may start in minislot `t` only if neither it
//! nor any interfering link transmitted during minislot `t - 1`. It then
//! starts with probability `epsilon * lambda_l`. Links that start in the same
//! minislot as an interfering link collide and hold the channel for their
//! whole duration without service. Holding times have mean `mu / epsilon`.

use rand::Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::adaptive::{run_with_channel, AlgoParams, QueueState, SimTrace, SlotChannel};
use crate::error::{Error, Result};
use crate::exact::ThroughputVector;
use crate::functions::Utility;
use crate::graph::ConflictGraph;

/// Starvation statistics below this many complete periods are flagged.
pub const MIN_PERIODS: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoldingModel {
    #[default]
    Geometric,
    Deterministic,
}

/// The epsilon-scaling shared by fixed-rate and adaptive runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtScaling {
    pub epsilon: f64,
    #[serde(default)]
    pub holding: HoldingModel,
}

impl DtScaling {
    fn check(&self, mu: f64) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::InvalidParameter(format!("epsilon must lie in (0, 1], got {}", self.epsilon)));
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::InvalidParameter(format!("mu must be positive, got {mu}")));
        }
        if mu / self.epsilon < 1.0 {
            return Err(Error::InvalidParameter(format!(
                "mean holding mu/epsilon = {} is shorter than one minislot",
                mu / self.epsilon
            )));
        }
        Ok(())
    }
}

/// Fixed CSMA parameters of a discrete-time run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtParams {
    pub epsilon: f64,
    pub mu: f64,
    /// Unscaled activation parameters; the per-minislot start probability is
    /// `epsilon * lambda_l`.
    pub lambda: Vec<f64>,
    #[serde(default)]
    pub holding: HoldingModel,
}

impl DtParams {
    pub fn scaling(&self) -> DtScaling {
        DtScaling { epsilon: self.epsilon, holding: self.holding }
    }

    pub fn validate(&self, links: usize) -> Result<()> {
        self.scaling().check(self.mu)?;
        if self.lambda.len() != links {
            return Err(Error::LengthMismatch { expected: links, got: self.lambda.len() });
        }
        for (link, &la) in self.lambda.iter().enumerate() {
            if !(la > 0.0 && la.is_finite()) {
                return Err(Error::InvalidParameter(format!("lambda[{link}] must be positive, got {la}")));
            }
            let value = self.epsilon * la;
            if value > 1.0 {
                return Err(Error::ProbabilityCap { link, value });
            }
        }
        Ok(())
    }

    fn attempt_probabilities(&self) -> Vec<f64> {
        self.lambda.iter().map(|la| self.epsilon * la).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinkMode {
    #[default]
    Idle,
    Success {
        remaining: u64,
    },
    Collided {
        remaining: u64,
    },
}

impl LinkMode {
    pub fn is_transmitting(self) -> bool {
        !matches!(self, LinkMode::Idle)
    }
}

/// Per-link modes plus the set of links that transmitted in the previous
/// minislot (what carrier sensing sees now).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DtState {
    pub modes: Vec<LinkMode>,
    pub sensed_busy: u64,
}

impl DtState {
    pub fn idle(links: usize) -> Self {
        Self { modes: vec![LinkMode::Idle; links], sensed_busy: 0 }
    }
}

/// What happened during one minislot, as link bit masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MinislotEvents {
    pub started: u64,
    pub collided: u64,
    pub transmitting: u64,
    pub success: u64,
}

#[derive(Debug, Clone, Copy)]
struct Holding {
    model: HoldingModel,
    geometric: Geometric,
    fixed: u64,
}

impl Holding {
    fn new(scaling: DtScaling, mu: f64) -> Result<Self> {
        let mean = mu / scaling.epsilon;
        let geometric = Geometric::new((1.0 / mean).min(1.0))
            .map_err(|e| Error::InvalidParameter(format!("holding distribution: {e}")))?;
        Ok(Self { model: scaling.holding, geometric, fixed: mean.ceil() as u64 })
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> u64 {
        match self.model {
            HoldingModel::Geometric => 1 + self.geometric.sample(rng),
            HoldingModel::Deterministic => self.fixed,
        }
    }
}

fn advance<R: Rng>(
    state: &mut DtState,
    attempt: &[f64],
    holding: &Holding,
    g: &ConflictGraph,
    rng: &mut R,
) -> MinislotEvents {
    let mut started = 0u64;
    for (l, (mode, &a)) in state.modes.iter().zip(attempt).enumerate() {
        if *mode == LinkMode::Idle && (g.neighbor_mask(l) | 1 << l) & state.sensed_busy == 0 && rng.random::<f64>() < a
        {
            started |= 1 << l;
        }
    }
    let mut collided = 0u64;
    let mut rest = started;
    while rest != 0 {
        let l = rest.trailing_zeros() as usize;
        rest &= rest - 1;
        let remaining = holding.sample(rng);
        state.modes[l] = if g.neighbor_mask(l) & started != 0 {
            collided |= 1 << l;
            LinkMode::Collided { remaining }
        } else {
            LinkMode::Success { remaining }
        };
    }
    let mut transmitting = 0u64;
    let mut success = 0u64;
    for (l, mode) in state.modes.iter_mut().enumerate() {
        let remaining = match mode {
            LinkMode::Idle => continue,
            LinkMode::Success { remaining } => {
                success |= 1 << l;
                remaining
            }
            LinkMode::Collided { remaining } => remaining,
        };
        transmitting |= 1 << l;
        *remaining -= 1;
        if *remaining == 0 {
            *mode = LinkMode::Idle;
        }
    }
    state.sensed_busy = transmitting;
    MinislotEvents { started, collided, transmitting, success }
}

/// Advances one minislot under fixed parameters.
pub fn step_minislot<R: Rng>(
    state: &mut DtState,
    p: &DtParams,
    g: &ConflictGraph,
    rng: &mut R,
) -> Result<MinislotEvents> {
    p.validate(g.links())?;
    if state.modes.len() != g.links() {
        return Err(Error::LengthMismatch { expected: g.links(), got: state.modes.len() });
    }
    let holding = Holding::new(p.scaling(), p.mu)?;
    Ok(advance(state, &p.attempt_probabilities(), &holding, g, rng))
}

/// Counters accumulated over the measurement window.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct DtTrace {
    /// Minislots in the measurement window.
    pub window: u64,
    pub success_time: Vec<u64>,
    pub starts: Vec<u64>,
    pub collided_starts: Vec<u64>,
    /// Complete no-success periods observed per link.
    pub periods: Vec<u64>,
    pub period_time: Vec<u64>,
    #[serde(skip)]
    gap_start: Vec<Option<u64>>,
    #[serde(skip)]
    was_success: u64,
}

impl DtTrace {
    fn new(links: usize) -> Self {
        Self {
            window: 0,
            success_time: vec![0; links],
            starts: vec![0; links],
            collided_starts: vec![0; links],
            periods: vec![0; links],
            period_time: vec![0; links],
            gap_start: vec![None; links],
            was_success: 0,
        }
    }

    fn observe(&mut self, ev: &MinislotEvents) {
        let now = self.window;
        let first = now == 0;
        for l in 0..self.success_time.len() {
            let bit = 1u64 << l;
            let success = ev.success & bit != 0;
            if ev.started & bit != 0 {
                self.starts[l] += 1;
                if ev.collided & bit != 0 {
                    self.collided_starts[l] += 1;
                }
            }
            if success {
                self.success_time[l] += 1;
                if let Some(start) = self.gap_start[l].take() {
                    self.periods[l] += 1;
                    self.period_time[l] += now - start;
                }
            } else if !first && self.was_success & bit != 0 {
                self.gap_start[l] = Some(now);
            }
        }
        self.was_success = ev.success;
        self.window += 1;
    }

    pub fn report(&self, epsilon: f64, mu: f64) -> FairnessReport {
        let links = self.success_time.len();
        let window = self.window.max(1) as f64;
        let gamma: Vec<f64> = self.success_time.iter().map(|&s| s as f64 / window).collect();
        let e: Vec<f64> = (0..links)
            .map(|l| if self.periods[l] > 0 { self.period_time[l] as f64 / self.periods[l] as f64 } else { window })
            .collect();
        let max_e = e.iter().copied().fold(0.0, f64::max);
        let cycle_formula = gamma.iter().map(|&g| mu / epsilon * (1.0 - g) / g).collect();
        let starts: u64 = self.starts.iter().sum();
        let collided: u64 = self.collided_starts.iter().sum();
        FairnessReport {
            epsilon,
            gamma_eps: ThroughputVector(gamma),
            e,
            beta: 1.0 / max_e,
            collision_rate: if starts == 0 { 0.0 } else { collided as f64 / starts as f64 },
            cycle_formula,
            periods: self.periods.clone(),
            under_sampled: self.periods.iter().any(|&n| n < MIN_PERIODS),
            window: self.window,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FairnessReport {
    pub epsilon: f64,
    pub gamma_eps: ThroughputVector,
    /// Mean length of complete no-success periods, in minislots.
    #[serde(rename = "E")]
    pub e: Vec<f64>,
    pub beta: f64,
    pub collision_rate: f64,
    /// `(mu / epsilon) (1 - gamma) / gamma` from the measured throughputs.
    pub cycle_formula: Vec<f64>,
    pub periods: Vec<u64>,
    pub under_sampled: bool,
    pub window: u64,
}

impl FairnessReport {
    pub fn max_e(&self) -> f64 {
        1.0 / self.beta
    }
}

/// Runs `horizon` minislots at fixed parameters from an idle network.
pub fn run_dt<R: Rng>(g: &ConflictGraph, p: &DtParams, horizon: u64, rng: &mut R) -> Result<(DtTrace, FairnessReport)> {
    p.validate(g.links())?;
    let holding = Holding::new(p.scaling(), p.mu)?;
    let attempt = p.attempt_probabilities();
    let mut state = DtState::idle(g.links());
    let mut trace = DtTrace::new(g.links());
    for _ in 0..horizon {
        let ev = advance(&mut state, &attempt, &holding, g, rng);
        trace.observe(&ev);
    }
    let report = trace.report(p.epsilon, p.mu);
    Ok((trace, report))
}

/// Discrete-time channel for the adaptation loop. Statistics are collected
/// from minislot `window_start` on.
pub struct DtChannel<'g> {
    graph: &'g ConflictGraph,
    scaling: DtScaling,
    holding: Holding,
    slot_minislots: u64,
    state: DtState,
    elapsed: u64,
    window_start: u64,
    trace: DtTrace,
    attempt: Vec<f64>,
}

impl<'g> DtChannel<'g> {
    pub fn new(
        graph: &'g ConflictGraph,
        scaling: DtScaling,
        mu: f64,
        slot_minislots: u64,
        window_start: u64,
    ) -> Result<Self> {
        scaling.check(mu)?;
        if slot_minislots == 0 {
            return Err(Error::InvalidParameter("a slot needs at least one minislot".into()));
        }
        Ok(Self {
            graph,
            scaling,
            holding: Holding::new(scaling, mu)?,
            slot_minislots,
            state: DtState::idle(graph.links()),
            elapsed: 0,
            window_start,
            trace: DtTrace::new(graph.links()),
            attempt: vec![0.0; graph.links()],
        })
    }

    pub fn trace(&self) -> &DtTrace {
        &self.trace
    }
}

impl SlotChannel for DtChannel<'_> {
    fn links(&self) -> usize {
        self.graph.links()
    }

    fn serve<R: Rng>(&mut self, log_lambda: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        for (a, ll) in self.attempt.iter_mut().zip(log_lambda) {
            *a = (self.scaling.epsilon * ll.exp()).min(1.0);
        }
        let mut served = vec![0u64; self.graph.links()];
        for _ in 0..self.slot_minislots {
            let ev = advance(&mut self.state, &self.attempt, &self.holding, self.graph, rng);
            let mut rest = ev.success;
            while rest != 0 {
                served[rest.trailing_zeros() as usize] += 1;
                rest &= rest - 1;
            }
            if self.elapsed >= self.window_start {
                self.trace.observe(&ev);
            }
            self.elapsed += 1;
        }
        Ok(served.into_iter().map(|s| s as f64 / self.slot_minislots as f64).collect())
    }
}

/// Largest per-minislot start probability the adaptation can reach.
pub fn max_attempt_probability(algo: &AlgoParams, epsilon: f64) -> f64 {
    epsilon * (algo.weight.value(algo.q_max) - algo.mu.ln()).exp()
}

/// The adaptation loop over the collision channel. Fairness statistics cover
/// the second half of the run.
pub fn run_dt_adaptive<R: Rng>(
    g: &ConflictGraph,
    algo: &AlgoParams,
    scaling: DtScaling,
    q0: &QueueState,
    slots: usize,
    slot_minislots: u64,
    rng: &mut R,
) -> Result<(SimTrace, FairnessReport)> {
    algo.validate()?;
    let cap = max_attempt_probability(algo, scaling.epsilon);
    if cap > 1.0 {
        return Err(Error::ProbabilityCap { link: 0, value: cap });
    }
    let window_start = (slots / 2) as u64 * slot_minislots;
    let mut channel = DtChannel::new(g, scaling, algo.mu, slot_minislots, window_start)?;
    let trace = run_with_channel(&mut channel, algo, q0, slots, rng)?;
    let report = channel.trace().report(scaling.epsilon, algo.mu);
    Ok((trace, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Efficiency {
    pub value: f64,
    /// Some link received no service, so the utility is unbounded below.
    pub starved: bool,
}

/// Uniform throughput scaling `c` that matches the achieved utility:
/// `sum U(c * gamma_opt) = sum U(gamma)`. For log utility this is the
/// geometric-mean ratio `exp((sum log gamma - sum log gamma_opt) / L)`.
pub fn efficiency(gamma: &[f64], gamma_opt: &[f64], u: Utility) -> Result<Efficiency> {
    if gamma.len() != gamma_opt.len() {
        return Err(Error::LengthMismatch { expected: gamma_opt.len(), got: gamma.len() });
    }
    if gamma_opt.iter().any(|&g| !(g > 0.0)) {
        return Err(Error::InvalidParameter("reference throughputs must be positive".into()));
    }
    if gamma.iter().any(|&g| !(g > 0.0)) {
        return Ok(Efficiency { value: 0.0, starved: true });
    }
    let value = match u {
        Utility::Log => ((u.total(gamma) - u.total(gamma_opt)) / gamma.len() as f64).exp(),
        Utility::AlphaFair { alpha } => (u.total(gamma) / u.total(gamma_opt)).powf(1.0 / (1.0 - alpha)),
    };
    Ok(Efficiency { value, starved: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctsim::RngSeed;

    #[test]
    fn back_to_back_single_link() {
        let g = ConflictGraph::path(1).unwrap();
        let p = DtParams { epsilon: 0.01, mu: 1.0, lambda: vec![100.0], holding: HoldingModel::Geometric };
        let (_, report) = run_dt(&g, &p, 1_000_000, &mut RngSeed(1).rng()).unwrap();
        // one sensing minislot between transmissions of mean length 100
        assert!((report.gamma_eps[0] - 100.0 / 101.0).abs() < 0.005, "{}", report.gamma_eps[0]);
        assert!(report.gamma_eps[0] > 0.98);
    }

    #[test]
    fn single_link_renewal_cycle() {
        let g = ConflictGraph::path(1).unwrap();
        let (epsilon, lambda, mu) = (0.05, 4.0, 0.5);
        let p = DtParams { epsilon, mu, lambda: vec![lambda], holding: HoldingModel::Geometric };
        let (trace, report) = run_dt(&g, &p, 2_000_000, &mut RngSeed(9).rng()).unwrap();
        // idle spells are geometric with mean 1 / (epsilon lambda), holding has mean mu / epsilon
        let idle = 1.0 / (epsilon * lambda);
        let busy = mu / epsilon;
        assert!((report.gamma_eps[0] - busy / (busy + idle)).abs() < 0.01);
        assert!((report.e[0] - idle).abs() / idle < 0.03, "{:?}", report.e);
        assert!((report.cycle_formula[0] - report.e[0]).abs() / idle < 0.03);
        assert!(!report.under_sampled);
        assert_eq!(report.collision_rate, 0.0);
        assert_eq!(trace.window, 2_000_000);
    }

    #[test]
    fn simultaneous_starts_collide() {
        let g = ConflictGraph::complete(2).unwrap();
        let p = DtParams { epsilon: 0.1, mu: 1.0, lambda: vec![10.0; 2], holding: HoldingModel::Deterministic };
        let mut state = DtState::idle(2);
        let ev = step_minislot(&mut state, &p, &g, &mut RngSeed(3).rng()).unwrap();
        assert_eq!(ev.started, 0b11);
        assert_eq!(ev.collided, 0b11);
        assert_eq!(ev.success, 0);
        assert_eq!(state.modes, vec![LinkMode::Collided { remaining: 9 }; 2]);
        // nobody can start while the channel is sensed busy
        for _ in 0..9 {
            let ev = step_minislot(&mut state, &p, &g, &mut RngSeed(4).rng()).unwrap();
            assert_eq!(ev.started, 0);
        }
        assert_eq!(state.modes, vec![LinkMode::Idle; 2]);
    }

    #[test]
    fn deterministic_holding_rounds_up() {
        let g = ConflictGraph::path(1).unwrap();
        let p = DtParams { epsilon: 0.3, mu: 1.0, lambda: vec![1.0 / 0.3], holding: HoldingModel::Deterministic };
        let mut state = DtState::idle(1);
        step_minislot(&mut state, &p, &g, &mut RngSeed(0).rng()).unwrap();
        assert_eq!(state.modes[0], LinkMode::Success { remaining: 3 });
    }

    #[test]
    fn probability_cap_is_an_error() {
        let g = ConflictGraph::path(2).unwrap();
        let p = DtParams { epsilon: 0.5, mu: 1.0, lambda: vec![1.0, 3.0], holding: HoldingModel::Geometric };
        assert_eq!(p.validate(2), Err(Error::ProbabilityCap { link: 1, value: 1.5 }));
        let algo = AlgoParams { q_max: 3.0, ..AlgoParams::default() };
        let r = run_dt_adaptive(
            &g,
            &algo,
            DtScaling { epsilon: 0.1, holding: HoldingModel::Geometric },
            &QueueState::uniform(2, 0.1),
            10,
            10,
            &mut RngSeed(0).rng(),
        );
        assert!(matches!(r, Err(Error::ProbabilityCap { .. })));
    }

    #[test]
    fn successes_never_overlap_interferers() {
        let g = ConflictGraph::new(4, &[(0, 1), (1, 2), (2, 3), (0, 2)]).unwrap();
        let p = DtParams { epsilon: 0.2, mu: 1.0, lambda: vec![2.0, 4.0, 1.0, 3.0], holding: HoldingModel::Geometric };
        let mut state = DtState::idle(4);
        let mut rng = RngSeed(11).rng();
        let mut collisions = 0;
        for _ in 0..200_000 {
            let ev = step_minislot(&mut state, &p, &g, &mut rng).unwrap();
            for l in 0..4 {
                if ev.success >> l & 1 == 1 {
                    assert_eq!(ev.success & g.neighbor_mask(l), 0);
                }
            }
            collisions += ev.collided.count_ones();
        }
        assert!(collisions > 0);
    }

    #[test]
    fn efficiency_metric() {
        let opt = [2.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0];
        assert!((efficiency(&opt, &opt, Utility::Log).unwrap().value - 1.0).abs() < 1e-15);
        let e = efficiency(&[0.5, 0.25, 0.5], &opt, Utility::Log).unwrap();
        assert!((e.value - 0.75).abs() < 1e-12);
        let scaled: Vec<f64> = opt.iter().map(|g| 0.6 * g).collect();
        assert!((efficiency(&scaled, &opt, Utility::Log).unwrap().value - 0.6).abs() < 1e-12);
        let u = Utility::AlphaFair { alpha: 2.0 };
        assert!((efficiency(&scaled, &opt, u).unwrap().value - 0.6).abs() < 1e-12);
        let starved = efficiency(&[0.5, 0.0, 0.5], &opt, Utility::Log).unwrap();
        assert_eq!(starved, Efficiency { value: 0.0, starved: true });
    }

    #[test]
    fn single_link_adaptive_has_no_collisions() {
        let g = ConflictGraph::path(1).unwrap();
        let algo = AlgoParams { q_max: 2.0, ..AlgoParams::default() };
        let scaling = DtScaling { epsilon: 0.1 / 2f64.exp(), holding: HoldingModel::Geometric };
        let (trace, report) =
            run_dt_adaptive(&g, &algo, scaling, &QueueState::uniform(1, 0.1), 2000, 200, &mut RngSeed(5).rng())
                .unwrap();
        assert_eq!(trace.slots(), 2000);
        assert_eq!(report.collision_rate, 0.0);
        assert!(report.window == 1000 * 200);
    }
}
