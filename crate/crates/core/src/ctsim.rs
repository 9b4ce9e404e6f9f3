//! Exact jump simulation of collision-free continuous-time CSMA.
//!
//! From schedule `m`, every link that can join `m` activates at rate
//! `lambda_l` and every active link releases the channel at rate `1/mu`.
//! Holding intervals are reported to a [`HoldingSink`].

use std::io::Write;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::ScheduleDistribution;
use crate::graph::{addable_mask, ConflictGraph, Schedule, ScheduleSet};

/// Generator used by every stochastic routine in the crate.
pub type SimRng = ChaCha8Rng;

/// Seed of one simulation run; equal seeds give bit-identical traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> SimRng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

/// Exponents above this are treated as instantaneous activation.
const MAX_LOG_RATE: f64 = 700.0;

/// CSMA parameters of all links: activation rates (stored as logarithms) and
/// the common mean holding time.
#[derive(Debug, Clone, PartialEq)]
pub struct CsmaRates {
    log_lambda: Vec<f64>,
    mu: f64,
}

impl CsmaRates {
    pub fn new(lambda: &[f64], mu: f64) -> Result<Self> {
        if let Some(l) = lambda.iter().position(|&x| !(x > 0.0)) {
            return Err(Error::InvalidParameter(format!("lambda[{l}] must be positive, got {}", lambda[l])));
        }
        Self::from_log(lambda.iter().map(|x| x.ln()).collect(), mu)
    }

    pub fn from_log(log_lambda: Vec<f64>, mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::InvalidParameter(format!("mu must be positive, got {mu}")));
        }
        if log_lambda.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
            return Err(Error::InvalidParameter("log lambda must be finite or -inf".into()));
        }
        Ok(Self { log_lambda, mu })
    }

    pub fn links(&self) -> usize {
        self.log_lambda.len()
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn log_lambda(&self) -> &[f64] {
        &self.log_lambda
    }

    pub fn lambda(&self, l: usize) -> f64 {
        self.log_lambda[l].min(MAX_LOG_RATE).exp()
    }
}

/// Current activation profile and the time elapsed in the current slot.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CtState {
    pub active: Schedule,
    pub clock: f64,
}

/// Fraction of a slot each link spent transmitting.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct SlotService(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct SlotOutcome {
    pub service: SlotService,
    /// Number of activation and release events in the slot.
    pub events: u64,
}

/// Receives consecutive (schedule, holding duration) intervals.
pub trait HoldingSink {
    fn record(&mut self, schedule: Schedule, duration: f64);
}

impl HoldingSink for Vec<(Schedule, f64)> {
    fn record(&mut self, schedule: Schedule, duration: f64) {
        self.push((schedule, duration));
    }
}

/// Accumulates time spent in each schedule of a [`ScheduleSet`].
#[derive(Debug, Clone)]
pub struct OccupancyTally<'a> {
    set: &'a ScheduleSet,
    time: Vec<f64>,
}

impl<'a> OccupancyTally<'a> {
    pub fn new(set: &'a ScheduleSet) -> Self {
        Self { set, time: vec![0.0; set.len()] }
    }

    pub fn total_time(&self) -> f64 {
        self.time.iter().sum()
    }

    pub fn distribution(&self) -> Result<ScheduleDistribution> {
        let total = self.total_time();
        if !(total > 0.0) {
            return Err(Error::EmptyTrace);
        }
        ScheduleDistribution::new(self.time.iter().map(|t| t / total).collect())
    }
}

impl HoldingSink for OccupancyTally<'_> {
    fn record(&mut self, schedule: Schedule, duration: f64) {
        let i = self.set.index_of(schedule).expect("visited schedule is not an independent set");
        self.time[i] += duration;
    }
}

struct NoSink;

impl HoldingSink for NoSink {
    fn record(&mut self, _: Schedule, _: f64) {}
}

/// Simulates one slot of length `slot_len` starting from `state.active`.
pub fn run_slot<R: Rng>(
    state: &mut CtState,
    g: &ConflictGraph,
    rates: &CsmaRates,
    slot_len: f64,
    rng: &mut R,
) -> Result<SlotOutcome> {
    run_slot_recorded(state, g, rates, slot_len, rng, &mut NoSink)
}

pub fn run_slot_recorded<R: Rng, S: HoldingSink>(
    state: &mut CtState,
    g: &ConflictGraph,
    rates: &CsmaRates,
    slot_len: f64,
    rng: &mut R,
    sink: &mut S,
) -> Result<SlotOutcome> {
    if !(slot_len > 0.0 && slot_len.is_finite()) {
        return Err(Error::InvalidParameter(format!("slot length must be positive, got {slot_len}")));
    }
    state.clock = 0.0;
    let (busy, events) = simulate(state, g, rates, slot_len, u64::MAX, rng, sink)?;
    Ok(SlotOutcome { service: SlotService(busy.into_iter().map(|b| b / slot_len).collect()), events })
}

/// Runs the chain until `events` jumps have occurred; returns the elapsed time.
pub fn run_events<R: Rng, S: HoldingSink>(
    state: &mut CtState,
    g: &ConflictGraph,
    rates: &CsmaRates,
    events: u64,
    rng: &mut R,
    sink: &mut S,
) -> Result<f64> {
    let start = state.clock;
    simulate(state, g, rates, f64::INFINITY, events, rng, sink)?;
    Ok(state.clock - start)
}

fn simulate<R: Rng, S: HoldingSink>(
    state: &mut CtState,
    g: &ConflictGraph,
    rates: &CsmaRates,
    duration: f64,
    max_events: u64,
    rng: &mut R,
    sink: &mut S,
) -> Result<(Vec<f64>, u64)> {
    let links = g.links();
    if rates.links() != links {
        return Err(Error::LengthMismatch { expected: links, got: rates.links() });
    }
    if !g.admits(state.active) {
        return Err(Error::InfeasibleSchedule);
    }
    let lambda: Vec<f64> = (0..links).map(|l| rates.lambda(l)).collect();
    let release = 1.0 / rates.mu();
    let mut busy = vec![0.0; links];
    let mut elapsed = 0.0;
    let mut events = 0u64;

    while events < max_events {
        let active = state.active;
        let addable = addable_mask(active, g);
        let activation: f64 = addable.links().map(|l| lambda[l]).sum();
        let total = activation + active.len() as f64 * release;
        let wait = if total > 0.0 { rng.sample::<f64, _>(Exp1) / total } else { f64::INFINITY };

        let hold = wait.min(duration - elapsed);
        for l in active.links() {
            busy[l] += hold;
        }
        sink.record(active, hold);
        if elapsed + wait >= duration {
            elapsed = duration;
            break;
        }
        elapsed += wait;

        let mut u = rng.random::<f64>() * total;
        let mut next = None;
        for l in addable.links() {
            if u < lambda[l] {
                next = Some(active.with(l));
                break;
            }
            u -= lambda[l];
        }
        // floating-point leftovers fall through to the last active link
        let next = next.unwrap_or_else(|| {
            let k = ((u / release) as usize).min(active.len().saturating_sub(1));
            match active.links().nth(k) {
                Some(l) => active.without(l),
                None => active.with(addable.links().last().expect("positive total rate")),
            }
        });
        debug_assert!(g.admits(next));
        state.active = next;
        events += 1;
    }
    state.clock += elapsed;
    Ok((busy, events))
}

/// Time-weighted occupancy of each schedule over a list of holding intervals.
pub fn empirical_distribution(s: &ScheduleSet, trace: &[(Schedule, f64)]) -> Result<ScheduleDistribution> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let mut tally = OccupancyTally::new(s);
    for &(m, d) in trace {
        if s.index_of(m).is_none() {
            return Err(Error::InfeasibleSchedule);
        }
        tally.record(m, d);
    }
    tally.distribution()
}

/// Writes `time,schedule_index,a_0,..,a_{L-1}`, one row per holding interval,
/// with `time` the interval start.
pub fn write_trace_csv<W: Write>(out: &mut W, s: &ScheduleSet, trace: &[(Schedule, f64)]) -> Result<()> {
    write!(out, "time,schedule_index")?;
    for l in 0..s.links() {
        write!(out, ",a_{l}")?;
    }
    writeln!(out)?;
    let mut t = 0.0;
    for &(m, d) in trace {
        let idx = s.index_of(m).ok_or(Error::InfeasibleSchedule)?;
        write!(out, "{t},{idx}")?;
        for l in 0..s.links() {
            write!(out, ",{}", m.contains(l) as u8)?;
        }
        writeln!(out)?;
        t += d;
    }
    Ok(())
}
