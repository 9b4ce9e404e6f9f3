//! Efficiency versus short-term fairness over an epsilon sweep.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::adaptive::{gamma_running_average, AlgoParams, QueueState};
use crate::ctsim::RngSeed;
use crate::dtsim::{efficiency, max_attempt_probability, run_dt_adaptive, DtScaling, HoldingModel};
use crate::error::{Error, Result};
use crate::graph::{enumerate_schedules, ConflictGraph};
use crate::oracle::solve_utility_optimal;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub slots: usize,
    /// Minislots per slot; `None` uses `slot_len / epsilon`.
    pub slot_minislots: Option<u64>,
    pub holding: HoldingModel,
    pub q0: QueueState,
    pub workers: usize,
}

/// One `(epsilon, seed)` run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedResult {
    pub epsilon: f64,
    pub seed: u64,
    pub efficiency: f64,
    pub starved: bool,
    pub max_e: f64,
    pub beta: f64,
    pub collision_rate: f64,
    /// Long-run throughput of the whole run.
    pub gamma: Vec<f64>,
    pub under_sampled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Spread {
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Option<Spread> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        Some(Spread { median, min: v[0], max: v[n - 1] })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TradeoffPoint {
    pub epsilon: f64,
    /// `epsilon * exp(W(q_max)) / mu`.
    pub max_attempt: f64,
    pub runs: Vec<SeedResult>,
    pub efficiency: Spread,
    /// Spread of `max_l E_l`, i.e. `1 / beta`.
    pub inv_beta: Spread,
    pub collision_rate: Spread,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointFailure {
    pub epsilon: f64,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepOutcome {
    pub gamma_opt: Vec<f64>,
    pub points: Vec<TradeoffPoint>,
    pub failures: Vec<PointFailure>,
}

impl SweepOutcome {
    /// Per-seed rows sorted by `(epsilon, seed)`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "epsilon,seed,efficiency,max_E,beta,collision_rate")?;
        for r in self.points.iter().flat_map(|p| &p.runs) {
            writeln!(out, "{},{},{},{},{},{}", r.epsilon, r.seed, r.efficiency, r.max_e, r.beta, r.collision_rate)?;
        }
        Ok(())
    }
}

/// Runs the adaptation over the collision channel for every `(epsilon, seed)`
/// pair, on up to `settings.workers` threads. Each run owns its generator,
/// seeded from `seed` alone, so results do not depend on scheduling. Runs
/// that fail are listed in `failures`; the rest are still aggregated.
pub fn tradeoff_sweep(
    g: &ConflictGraph,
    algo: &AlgoParams,
    eps_list: &[f64],
    seeds: &[u64],
    settings: &SweepSettings,
) -> Result<SweepOutcome> {
    if eps_list.is_empty() {
        return Err(Error::EmptySweep);
    }
    if seeds.is_empty() {
        return Err(Error::Config("seeds: a sweep needs at least one seed".into()));
    }
    algo.validate()?;
    for &e in eps_list {
        let cap = max_attempt_probability(algo, e);
        if cap > 1.0 {
            return Err(Error::ProbabilityCap { link: 0, value: cap });
        }
    }
    let s = enumerate_schedules(g)?;
    let gamma_opt = solve_utility_optimal(&s, algo.utility, 1e-9)?.gamma.0;

    let jobs: Vec<(f64, u64)> = eps_list.iter().flat_map(|&e| seeds.iter().map(move |&sd| (e, sd))).collect();
    let run = |&(epsilon, seed): &(f64, u64)| -> std::result::Result<SeedResult, PointFailure> {
        let one = || -> Result<SeedResult> {
            let scaling = DtScaling { epsilon, holding: settings.holding };
            let minislots = settings.slot_minislots.unwrap_or_else(|| (algo.slot_len / epsilon).ceil() as u64);
            let (trace, report) =
                run_dt_adaptive(g, algo, scaling, &settings.q0, settings.slots, minislots, &mut RngSeed(seed).rng())?;
            let gamma = gamma_running_average(&trace)?.0;
            let eff = efficiency(&gamma, &gamma_opt, algo.utility)?;
            Ok(SeedResult {
                epsilon,
                seed,
                efficiency: eff.value,
                starved: eff.starved,
                max_e: report.max_e(),
                beta: report.beta,
                collision_rate: report.collision_rate,
                gamma,
                under_sampled: report.under_sampled,
            })
        };
        one().map_err(|e| PointFailure { epsilon, seed, error: e.to_string() })
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("worker pool: {e}")))?;
    let results: Vec<_> = pool.install(|| jobs.par_iter().map(run).collect());

    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(r) => ok.push(r),
            Err(f) => failures.push(f),
        }
    }
    ok.sort_by(|a, b| a.epsilon.total_cmp(&b.epsilon).then(a.seed.cmp(&b.seed)));
    failures.sort_by(|a, b| a.epsilon.total_cmp(&b.epsilon).then(a.seed.cmp(&b.seed)));

    let mut eps: Vec<f64> = eps_list.to_vec();
    eps.sort_by(f64::total_cmp);
    eps.dedup();
    let points = eps
        .into_iter()
        .filter_map(|epsilon| {
            let runs: Vec<SeedResult> = ok.iter().filter(|r| r.epsilon == epsilon).cloned().collect();
            let pick = |f: fn(&SeedResult) -> f64| Spread::of(&runs.iter().map(f).collect::<Vec<_>>());
            Some(TradeoffPoint {
                epsilon,
                max_attempt: max_attempt_probability(algo, epsilon),
                efficiency: pick(|r| r.efficiency)?,
                inv_beta: pick(|r| r.max_e)?,
                collision_rate: pick(|r| r.collision_rate)?,
                runs,
            })
        })
        .collect();
    Ok(SweepOutcome { gamma_opt, points, failures })
}
