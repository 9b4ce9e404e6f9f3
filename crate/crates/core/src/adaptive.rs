//! The slotted virtual-queue adaptation loop.
//!
//! Each slot every link runs CSMA with `lambda_l = exp(W(q_l)) / mu`, observes
//! the fraction `S_l` of the slot it spent transmitting, and moves its queue
//! by `b[t] / W'(q_l) * (U'^{-1}(W(q_l)/V) - S_l)`, projected onto
//! `[q_min, q_max]`.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ctsim::{run_slot, CsmaRates, CtState};
use crate::error::{Error, Result};
use crate::exact::ThroughputVector;
use crate::functions::{StepSize, Utility, Weight};
use crate::graph::ConflictGraph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgoParams {
    #[serde(rename = "V")]
    pub v: f64,
    pub q_min: f64,
    pub q_max: f64,
    pub mu: f64,
    pub step: StepSize,
    pub weight: Weight,
    pub utility: Utility,
    /// Slot duration in the same time unit as `mu`.
    pub slot_len: f64,
}

impl Default for AlgoParams {
    fn default() -> Self {
        Self {
            v: 1.0,
            q_min: 0.1,
            q_max: 10.0,
            mu: 1.0,
            step: StepSize::default(),
            weight: Weight::default(),
            utility: Utility::default(),
            slot_len: 10.0,
        }
    }
}

impl AlgoParams {
    pub fn validate(&self) -> Result<()> {
        let finite_pos = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {x}")))
            }
        };
        finite_pos("V", self.v)?;
        finite_pos("mu", self.mu)?;
        finite_pos("slot_len", self.slot_len)?;
        if !(self.q_min.is_finite() && self.q_max.is_finite() && self.q_min < self.q_max) {
            return Err(Error::InvalidParameter(format!("need q_min < q_max, got [{}, {}]", self.q_min, self.q_max)));
        }
        self.step.validate()?;
        self.weight.validate()?;
        self.utility.validate()?;
        // U'^{-1} diverges at 0 for every supported utility family
        let w_min = self.weight.value(self.q_min);
        if !(w_min > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "W(q_min) must be positive so that U'^-1(W(q_min)/V) is finite, got {w_min}"
            )));
        }
        for q in [self.q_min, self.q_max] {
            let d = self.weight.derivative(q);
            if !(d > 0.0) {
                return Err(Error::NonIncreasingWeight { q, derivative: d });
            }
        }
        let limit = self.v_limit();
        if self.v > limit {
            return Err(Error::InadmissibleV { v: self.v, limit });
        }
        Ok(())
    }

    /// Largest admissible `V`, namely `W(q_max) / U'(1)`.
    pub fn v_limit(&self) -> f64 {
        self.weight.value(self.q_max) / self.utility.derivative(1.0)
    }

    /// Multiplier bounds `[W(q_min), W(q_max)]` implied by the queue box.
    pub fn nu_bounds(&self) -> (f64, f64) {
        (self.weight.value(self.q_min), self.weight.value(self.q_max))
    }

    /// Target service rate `U'^{-1}(W(q)/V)` of a queue at level `q`.
    pub fn arrival_rate(&self, q: f64) -> f64 {
        self.utility.inverse_derivative(self.weight.value(q) / self.v)
    }

    pub fn project(&self, q: f64) -> f64 {
        q.min(self.q_max).max(self.q_min)
    }
}

/// Virtual queue levels, one per link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QueueState(pub Vec<f64>);

impl QueueState {
    pub fn uniform(links: usize, q: f64) -> Self {
        QueueState(vec![q; links])
    }

    pub fn check(&self, links: usize, p: &AlgoParams) -> Result<()> {
        if self.0.len() != links {
            return Err(Error::LengthMismatch { expected: links, got: self.0.len() });
        }
        match self.0.iter().find(|&&q| !(q >= p.q_min && q <= p.q_max)) {
            Some(q) => Err(Error::InvalidParameter(format!("queue level {q} outside [{}, {}]", p.q_min, p.q_max))),
            None => Ok(()),
        }
    }
}

/// One projected queue update.
pub fn update_queue(q: f64, service: f64, step: f64, p: &AlgoParams) -> Result<f64> {
    let d = p.weight.derivative(q);
    if !(d > 0.0) {
        return Err(Error::NonIncreasingWeight { q, derivative: d });
    }
    Ok(p.project(q + step / d * (p.arrival_rate(q) - service)))
}

/// `lambda = exp(W(q)) / mu`. Use [`log_lambda_from_queue`] when `W(q)` may be large.
pub fn lambda_from_queue(q: f64, p: &AlgoParams) -> f64 {
    log_lambda_from_queue(q, p).exp()
}

pub fn log_lambda_from_queue(q: f64, p: &AlgoParams) -> f64 {
    p.weight.value(q) - p.mu.ln()
}

/// A medium that serves one slot given per-link CSMA activation rates.
pub trait SlotChannel {
    fn links(&self) -> usize;

    /// Returns the fraction of the slot each link spent transmitting
    /// successfully, with `log_lambda` in force for the whole slot.
    fn serve<R: Rng>(&mut self, log_lambda: &[f64], rng: &mut R) -> Result<Vec<f64>>;
}

/// The collision-free continuous-time channel.
#[derive(Debug, Clone)]
pub struct CtChannel<'g> {
    graph: &'g ConflictGraph,
    state: CtState,
    mu: f64,
    slot_len: f64,
}

impl<'g> CtChannel<'g> {
    pub fn new(graph: &'g ConflictGraph, mu: f64, slot_len: f64) -> Self {
        Self { graph, state: CtState::default(), mu, slot_len }
    }

    pub fn state(&self) -> &CtState {
        &self.state
    }
}

impl SlotChannel for CtChannel<'_> {
    fn links(&self) -> usize {
        self.graph.links()
    }

    fn serve<R: Rng>(&mut self, log_lambda: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let rates = CsmaRates::from_log(log_lambda.to_vec(), self.mu)?;
        Ok(run_slot(&mut self.state, self.graph, &rates, self.slot_len, rng)?.service.0)
    }
}

/// Per-slot record of a run. Row `t` of `service` is `S[t]`, row `t` of
/// `gamma` is the running average after `t + 1` slots, and `q` has one more
/// row than the others (`q[0]` through `q[T]`).
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub params: AlgoParams,
    links: usize,
    q: Vec<f64>,
    service: Vec<f64>,
    gamma: Vec<f64>,
}

impl SimTrace {
    fn start(params: AlgoParams, q0: &[f64], slots: usize) -> Self {
        let links = q0.len();
        let mut q = Vec::with_capacity((slots + 1) * links);
        q.extend_from_slice(q0);
        Self { params, links, q, service: Vec::with_capacity(slots * links), gamma: Vec::with_capacity(slots * links) }
    }

    fn push(&mut self, service: &[f64], q_next: &[f64]) {
        let t = self.slots();
        for (l, s) in service.iter().enumerate() {
            let prev = if t == 0 { 0.0 } else { self.gamma[(t - 1) * self.links + l] };
            self.gamma.push(prev + (s - prev) / (t + 1) as f64);
        }
        self.service.extend_from_slice(service);
        self.q.extend_from_slice(q_next);
    }

    pub fn links(&self) -> usize {
        self.links
    }

    /// Number of simulated slots `T`.
    pub fn slots(&self) -> usize {
        self.service.len() / self.links.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.slots() == 0
    }

    /// `q[t]` for `t` in `0..=T`.
    pub fn queue(&self, t: usize) -> &[f64] {
        &self.q[t * self.links..(t + 1) * self.links]
    }

    pub fn final_queue(&self) -> &[f64] {
        self.queue(self.slots())
    }

    /// `S[t]` for `t` in `0..T`.
    pub fn service(&self, t: usize) -> &[f64] {
        &self.service[t * self.links..(t + 1) * self.links]
    }

    /// `gamma[t]`, the average of `S[0..t]`, for `t` in `1..=T`.
    pub fn gamma(&self, t: usize) -> &[f64] {
        &self.gamma[(t - 1) * self.links..t * self.links]
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        write!(out, "slot")?;
        for prefix in ["q", "S", "gamma"] {
            for l in 0..self.links {
                write!(out, ",{prefix}_{l}")?;
            }
        }
        writeln!(out)?;
        for t in 0..self.slots() {
            write!(out, "{t}")?;
            for x in self.queue(t).iter().chain(self.service(t)).chain(self.gamma(t + 1)) {
                write!(out, ",{x}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Runs the adaptation loop for `slots` slots over the continuous-time channel.
pub fn run<R: Rng>(g: &ConflictGraph, p: &AlgoParams, q0: &QueueState, slots: usize, rng: &mut R) -> Result<SimTrace> {
    let mut channel = CtChannel::new(g, p.mu, p.slot_len);
    run_with_channel(&mut channel, p, q0, slots, rng)
}

pub fn run_with_channel<C: SlotChannel, R: Rng>(
    channel: &mut C,
    p: &AlgoParams,
    q0: &QueueState,
    slots: usize,
    rng: &mut R,
) -> Result<SimTrace> {
    p.validate()?;
    let links = channel.links();
    q0.check(links, p)?;
    let mut trace = SimTrace::start(p.clone(), &q0.0, slots);
    let mut q = q0.0.clone();
    let mut log_lambda = vec![0.0; links];
    for t in 0..slots {
        for (ll, &ql) in log_lambda.iter_mut().zip(&q) {
            *ll = log_lambda_from_queue(ql, p);
        }
        let service = channel.serve(&log_lambda, rng)?;
        let b = p.step.at(t as u64);
        for (ql, &s) in q.iter_mut().zip(&service) {
            *ql = update_queue(*ql, s, b, p)?;
        }
        trace.push(&service, &q);
    }
    Ok(trace)
}

/// Final running-average throughput `gamma[T]`.
pub fn gamma_running_average(trace: &SimTrace) -> Result<ThroughputVector> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    Ok(ThroughputVector(trace.gamma(trace.slots()).to_vec()))
}

/// Average of a sequence of per-slot service vectors.
pub fn running_average(services: &[Vec<f64>]) -> Result<ThroughputVector> {
    let first = services.first().ok_or(Error::EmptyTrace)?;
    let mut acc = vec![0.0; first.len()];
    for s in services {
        if s.len() != acc.len() {
            return Err(Error::LengthMismatch { expected: acc.len(), got: s.len() });
        }
        acc.iter_mut().zip(s).for_each(|(a, x)| *a += x);
    }
    let n = services.len() as f64;
    Ok(ThroughputVector(acc.into_iter().map(|a| a / n).collect()))
}
