//! Mean-field dynamics of the queue adaptation and comparison with
//! stochastic runs.
//!
//! The averaged queue field is
//! `dq_l/dt = (U'^{-1}(W(q_l)/V) - sum_{m ∋ l} pi^q(m)) / W'(q_l)`,
//! projected onto the box: at a face, components pointing outward are zeroed.

use std::io::Write;

use crate::adaptive::{AlgoParams, SimTrace};
use crate::error::{Error, Result};
use crate::exact::{gibbs_distribution, link_throughputs};
use crate::graph::ScheduleSet;

pub const DEFAULT_DT: f64 = 0.01;

/// Projected mean-field drift at queue levels `q`.
pub fn drift(q: &[f64], s: &ScheduleSet, p: &AlgoParams) -> Result<Vec<f64>> {
    let nu: Vec<f64> = q.iter().map(|&x| p.weight.value(x)).collect();
    let pi = gibbs_distribution(s, &nu)?;
    let occupancy = link_throughputs(s, &pi)?;
    Ok(q.iter()
        .enumerate()
        .map(|(l, &ql)| {
            let d = (p.arrival_rate(ql) - occupancy[l]) / p.weight.derivative(ql);
            if (ql <= p.q_min && d < 0.0) || (ql >= p.q_max && d > 0.0) {
                0.0
            } else {
                d
            }
        })
        .collect())
}

/// Queue states on an increasing time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeTrajectory {
    links: usize,
    times: Vec<f64>,
    states: Vec<f64>,
}

impl OdeTrajectory {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.links..(i + 1) * self.links]
    }

    pub fn final_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    /// Linear interpolation between grid points.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        interpolate(&self.times, &self.states, self.links, t)
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        write!(out, "time")?;
        for l in 0..self.links {
            write!(out, ",q_{l}")?;
        }
        writeln!(out)?;
        for (i, t) in self.times.iter().enumerate() {
            write!(out, "{t}")?;
            for x in self.state(i) {
                write!(out, ",{x}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

fn interpolate(times: &[f64], values: &[f64], links: usize, t: f64) -> Vec<f64> {
    let n = times.len();
    let at = |i: usize| &values[i * links..(i + 1) * links];
    if t <= times[0] {
        return at(0).to_vec();
    }
    if t >= times[n - 1] {
        return at(n - 1).to_vec();
    }
    let hi = times.partition_point(|&x| x <= t);
    let lo = hi - 1;
    if times[lo] == t {
        return at(lo).to_vec();
    }
    let w = (t - times[lo]) / (times[hi] - times[lo]);
    at(lo).iter().zip(at(hi)).map(|(a, b)| a + (b - a) * w).collect()
}

/// Fixed-step RK4 integration of [`drift`] from `q0` over `[0, horizon]`,
/// projecting onto the box after every stage.
pub fn integrate(q0: &[f64], s: &ScheduleSet, p: &AlgoParams, horizon: f64, dt: f64) -> Result<OdeTrajectory> {
    integrate_from(q0, s, p, 0.0, horizon, dt)
}

fn integrate_from(
    q0: &[f64],
    s: &ScheduleSet,
    p: &AlgoParams,
    t0: f64,
    horizon: f64,
    dt: f64,
) -> Result<OdeTrajectory> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidParameter(format!("horizon must be nonnegative, got {horizon}")));
    }
    let links = s.links();
    if q0.len() != links {
        return Err(Error::LengthMismatch { expected: links, got: q0.len() });
    }
    let steps = (horizon / dt - 1e-9).ceil().max(0.0) as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity((steps + 1) * links);
    let mut q: Vec<f64> = q0.iter().map(|&x| p.project(x)).collect();
    times.push(t0);
    states.extend_from_slice(&q);

    let shifted =
        |q: &[f64], k: &[f64], h: f64| -> Vec<f64> { q.iter().zip(k).map(|(x, d)| p.project(x + h * d)).collect() };
    for i in 0..steps {
        let h = dt.min(horizon - i as f64 * dt);
        let k1 = drift(&q, s, p)?;
        let k2 = drift(&shifted(&q, &k1, h / 2.0), s, p)?;
        let k3 = drift(&shifted(&q, &k2, h / 2.0), s, p)?;
        let k4 = drift(&shifted(&q, &k3, h), s, p)?;
        for l in 0..links {
            q[l] = p.project(q[l] + h / 6.0 * (k1[l] + 2.0 * k2[l] + 2.0 * k3[l] + k4[l]));
        }
        times.push(if i + 1 == steps { t0 + horizon } else { t0 + (i + 1) as f64 * dt });
        states.extend_from_slice(&q);
    }
    Ok(OdeTrajectory { links, times, states })
}

/// Piecewise-linear interpolation of a stochastic queue sequence against
/// algorithmic time.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolatedTrajectory {
    links: usize,
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl InterpolatedTrajectory {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>, links: usize) -> Result<Self> {
        if breakpoints.is_empty() {
            return Err(Error::EmptyTrace);
        }
        if values.len() != breakpoints.len() * links {
            return Err(Error::LengthMismatch { expected: breakpoints.len() * links, got: values.len() });
        }
        if breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("breakpoints must be strictly increasing".into()));
        }
        Ok(Self { links, breakpoints, values })
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn span(&self) -> (f64, f64) {
        (self.breakpoints[0], *self.breakpoints.last().unwrap())
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        interpolate(&self.breakpoints, &self.values, self.links, t)
    }
}

/// Places `q[n]` at `t_n = b[0] + ... + b[n-1]`, so that the segment from
/// `q[n]` to `q[n+1]` spans exactly the step that produced it.
pub fn interpolate_stochastic(trace: &SimTrace) -> Result<InterpolatedTrajectory> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let slots = trace.slots();
    let mut breakpoints = Vec::with_capacity(slots + 1);
    let mut values = Vec::with_capacity((slots + 1) * trace.links());
    let mut t = 0.0;
    for n in 0..=slots {
        breakpoints.push(t);
        values.extend_from_slice(trace.queue(n));
        if n < slots {
            t += trace.params.step.at(n as u64);
        }
    }
    InterpolatedTrajectory::new(breakpoints, values, trace.links())
}

/// `sup_{t in [start, start + window]} |q̄(t) - q̃(t)|_inf`, with `q̃` the
/// mean-field solution started from `q̄(start)`.
pub fn tracking_error(
    stoch: &InterpolatedTrajectory,
    s: &ScheduleSet,
    p: &AlgoParams,
    window: f64,
    start: f64,
) -> Result<f64> {
    tracking_error_with_dt(stoch, s, p, window, start, DEFAULT_DT)
}

pub fn tracking_error_with_dt(
    stoch: &InterpolatedTrajectory,
    s: &ScheduleSet,
    p: &AlgoParams,
    window: f64,
    start: f64,
    dt: f64,
) -> Result<f64> {
    let (lo, hi) = stoch.span();
    let end = start + window;
    if !(window >= 0.0) || start < lo || end > hi {
        return Err(Error::WindowOutOfRange { start, end, lo, hi });
    }
    let ode = integrate_from(&stoch.eval(start), s, p, start, window, dt)?;
    let gap = |t: f64, reference: &[f64]| -> f64 {
        stoch.eval(t).iter().zip(reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    };
    let mut worst: f64 = 0.0;
    for (i, &t) in ode.times().iter().enumerate() {
        worst = worst.max(gap(t, ode.state(i)));
    }
    let first = stoch.breakpoints.partition_point(|&x| x < start);
    for &t in stoch.breakpoints[first..].iter().take_while(|&&x| x <= end) {
        worst = worst.max(gap(t, &ode.eval(t)));
    }
    Ok(worst)
}
