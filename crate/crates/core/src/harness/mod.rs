//! Experiment orchestration behind the `csma-opt` command line.
//!
//! Every mode writes `summary.json` (resolved config, crate version, results)
//! plus mode-specific CSV files into the output directory:
//!
//! | mode           | CSV files                                        |
//! |----------------|--------------------------------------------------|
//! | `stationary`   | `stationary.csv`: `index,mask,probability`        |
//! | `simulate-ct`  | `occupancy.csv`: `seed,index,mask,empirical,exact`; optional `trace_seed{s}.csv` |
//! | `run-adaptive` | `trace_seed{s}_init{i}.csv`: `slot,q_*,S_*,gamma_*` |
//! | `ode`          | `trajectory_init{i}.csv`: `time,q_*`               |
//! | `run-dt`       | `dt.csv`: `seed,link,gamma_eps,E,cycle_formula,periods` |
//! | `tradeoff`     | `tradeoff.csv`: `epsilon,seed,efficiency,max_E,beta,collision_rate` |

pub mod config;
pub mod convergence;
pub mod sweep;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::adaptive::{self, gamma_running_average};
use crate::ctsim::{run_events, write_trace_csv, CsmaRates, CtState, OccupancyTally, RngSeed};
use crate::dtsim::{efficiency, run_dt, DtParams};
use crate::error::{Error, Result};
use crate::exact::{link_throughputs, stationary_distribution};
use crate::graph::{enumerate_schedules_with_cap, ScheduleSet};
use crate::ode;
use crate::oracle::{
    kkt_residual, solve_entropy_regularized, solve_utility_optimal, utility_gap_certificate, DualBounds,
    OracleSolution, SolverOptions,
};

pub use config::{ExperimentConfig, Mode, QueueInit, WORKERS_ENV};
pub use convergence::{convergence_report, Checkpoint, ConvergenceReport};
pub use sweep::{tradeoff_sweep, SeedResult, Spread, SweepOutcome, SweepSettings, TradeoffPoint};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Describes how `efficiency` is computed, embedded next to every efficiency value.
pub const EFFICIENCY_METRIC: &str =
    "uniform throughput scaling c with sum U(c * gamma_opt) = sum U(gamma); for log utility exp((sum log gamma - sum log gamma_opt) / L)";

/// Why an experiment stopped.
#[derive(Debug, Clone, PartialEq)]
pub enum Failure {
    Config(Error),
    Runtime(Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }

    pub fn error(&self) -> &Error {
        match self {
            Failure::Config(e) | Failure::Runtime(e) => e,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "configuration error: {e}"),
            Failure::Runtime(e) => write!(f, "runtime error: {e}"),
        }
    }
}

impl std::error::Error for Failure {}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub summary: Value,
    pub files: Vec<PathBuf>,
}

/// Validates `cfg` for `mode`, runs it and writes outputs into `out`.
pub fn run_experiment(cfg: &ExperimentConfig, mode: Mode, out: &Path) -> std::result::Result<RunOutput, Failure> {
    cfg.validate(mode).map_err(Failure::Config)?;
    let mut resolved = cfg.clone();
    resolved.mode = Some(mode);
    resolved.output = Some(out.to_path_buf());
    std::fs::create_dir_all(out).map_err(|e| Failure::Runtime(e.into()))?;

    let mut ctx = Context { cfg: &resolved, out, files: Vec::new() };
    let (result, extra, status) = match ctx.dispatch(mode) {
        Ok((result, extra)) => (result, extra, None),
        Err(Partial { result, error }) => (result, Value::Null, Some(error)),
    };
    let mut summary = json!({
        "mode": mode,
        "version": VERSION,
        "config": &resolved,
        "result": result,
    });
    if let Value::Object(extra) = extra {
        summary.as_object_mut().unwrap().extend(extra);
    }
    if let Some(e) = &status {
        summary["error"] = json!(e.to_string());
    }
    let path = out.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Failure::Runtime(Error::Io(e.to_string())))?;
    std::fs::write(&path, text + "\n").map_err(|e| Failure::Runtime(e.into()))?;
    ctx.files.push(path);
    match status {
        Some(e) => Err(Failure::Runtime(e)),
        None => Ok(RunOutput { summary, files: ctx.files }),
    }
}

/// A failed mode run that may still have something to report.
struct Partial {
    result: Value,
    error: Error,
}

impl From<Error> for Partial {
    fn from(error: Error) -> Self {
        Partial { result: Value::Null, error }
    }
}

type ModeResult = std::result::Result<(Value, Value), Partial>;

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    out: &'a Path,
    files: Vec<PathBuf>,
}

impl Context<'_> {
    fn dispatch(&mut self, mode: Mode) -> ModeResult {
        match mode {
            Mode::Enumerate => self.enumerate(),
            Mode::Stationary => self.stationary(),
            Mode::SimulateCt => self.simulate_ct(),
            Mode::RunAdaptive => self.run_adaptive(),
            Mode::Ode => self.ode(),
            Mode::Solve => self.solve(),
            Mode::RunDt => self.run_dt(),
            Mode::Tradeoff => self.tradeoff(),
        }
    }

    fn schedules(&self) -> Result<ScheduleSet> {
        enumerate_schedules_with_cap(&self.cfg.graph()?, self.cfg.enumeration_cap)
    }

    fn csv(&mut self, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
        let path = self.out.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        body(&mut w)?;
        w.flush()?;
        self.files.push(path);
        Ok(())
    }

    fn gap_bound(&self, s: &ScheduleSet) -> Value {
        json!({ "gap_bound": (s.len() as f64).ln() / self.cfg.algo.v })
    }

    fn bounded_target(&self, s: &ScheduleSet) -> Result<OracleSolution> {
        let (lo, hi) = self.cfg.algo.nu_bounds();
        solve_entropy_regularized(
            s,
            self.cfg.algo.utility,
            self.cfg.algo.v,
            DualBounds::new(lo, hi)?,
            &SolverOptions::with_tol(self.cfg.oracle.tol),
        )
    }

    fn enumerate(&mut self) -> ModeResult {
        let s = self.schedules()?;
        let schedules: Vec<Vec<usize>> = s.iter().map(|m| m.links().collect()).collect();
        let masks: Vec<u64> = s.iter().map(|m| m.mask()).collect();
        Ok((json!({ "count": s.len(), "schedules": schedules, "masks": masks }), Value::Null))
    }

    fn stationary(&mut self) -> ModeResult {
        let s = self.schedules()?;
        let lambda = self.cfg.ct.lambda.clone().unwrap_or_default();
        let pi = stationary_distribution(&s, &lambda, self.cfg.ct.mu)?;
        let gamma = link_throughputs(&s, &pi)?;
        self.csv("stationary.csv", |w| {
            writeln!(w, "index,mask,probability")?;
            for (i, (m, p)) in s.iter().zip(pi.probs()).enumerate() {
                writeln!(w, "{i},{},{p}", m.mask())?;
            }
            Ok(())
        })?;
        Ok((json!({ "pi": pi, "gamma": gamma }), Value::Null))
    }

    fn simulate_ct(&mut self) -> ModeResult {
        let s = self.schedules()?;
        let g = self.cfg.graph()?;
        let lambda = self.cfg.ct.lambda.clone().unwrap_or_default();
        let rates = CsmaRates::new(&lambda, self.cfg.ct.mu)?;
        let exact = stationary_distribution(&s, &lambda, self.cfg.ct.mu)?;
        let mut runs = Vec::new();
        let mut rows = Vec::new();
        for &seed in &self.cfg.seeds {
            let mut rng = RngSeed(seed).rng();
            let mut state = CtState::default();
            let (elapsed, empirical) = if self.cfg.ct.write_trace {
                let mut trace = Vec::new();
                let elapsed = run_events(&mut state, &g, &rates, self.cfg.ct.events, &mut rng, &mut trace)?;
                self.csv(&format!("trace_seed{seed}.csv"), |w| write_trace_csv(w, &s, &trace))?;
                (elapsed, crate::ctsim::empirical_distribution(&s, &trace)?)
            } else {
                let mut tally = OccupancyTally::new(&s);
                let elapsed = run_events(&mut state, &g, &rates, self.cfg.ct.events, &mut rng, &mut tally)?;
                (elapsed, tally.distribution()?)
            };
            let gamma = link_throughputs(&s, &empirical)?;
            runs.push(json!({
                "seed": seed,
                "elapsed": elapsed,
                "total_variation": empirical.total_variation(&exact),
                "pi": empirical,
                "gamma": gamma,
            }));
            rows.push((seed, empirical));
        }
        self.csv("occupancy.csv", |w| {
            writeln!(w, "seed,index,mask,empirical,exact")?;
            for (seed, emp) in &rows {
                for (i, m) in s.iter().enumerate() {
                    writeln!(w, "{seed},{i},{},{},{}", m.mask(), emp.probs()[i], exact.probs()[i])?;
                }
            }
            Ok(())
        })?;
        let exact_gamma = link_throughputs(&s, &exact)?;
        Ok((json!({ "exact": { "pi": exact, "gamma": exact_gamma }, "runs": runs }), Value::Null))
    }

    fn run_adaptive(&mut self) -> ModeResult {
        let cfg = self.cfg;
        let g = cfg.graph()?;
        let s = self.schedules()?;
        let target = self.bounded_target(&s)?;
        let mut runs = Vec::new();
        let mut pass = true;
        for &seed in &cfg.seeds {
            for (i, q0) in cfg.initial_queues(g.links()).iter().enumerate() {
                let trace = adaptive::run(&g, &cfg.algo, q0, cfg.slots, &mut RngSeed(seed).rng())?;
                self.csv(&format!("trace_seed{seed}_init{i}.csv"), |w| trace.write_csv(w))?;
                let report = convergence_report(&trace, &target, cfg.oracle.tolerance)?;
                pass &= report.pass;
                runs.push(json!({
                    "seed": seed,
                    "init": i,
                    "q0": q0,
                    "final_gamma": gamma_running_average(&trace)?,
                    "final_q": trace.final_queue(),
                    "report": report,
                }));
            }
        }
        let result = json!({
            "target": { "gamma": target.gamma, "nu": target.nu, "kkt_residual": target.kkt_residual },
            "runs": runs,
            "pass": pass,
        });
        Ok((result, self.gap_bound(&s)))
    }

    fn ode(&mut self) -> ModeResult {
        let cfg = self.cfg;
        let s = self.schedules()?;
        let target = self.bounded_target(&s)?;
        let mut runs = Vec::new();
        for (i, q0) in cfg.initial_queues(s.links()).iter().enumerate() {
            let traj = ode::integrate(&q0.0, &s, &cfg.algo, cfg.ode.horizon, cfg.ode.dt)?;
            self.csv(&format!("trajectory_init{i}.csv"), |w| traj.write_csv(w))?;
            let w_final: Vec<f64> = traj.final_state().iter().map(|&q| cfg.algo.weight.value(q)).collect();
            let nu_error = w_final.iter().zip(&target.nu).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            runs.push(
                json!({ "init": i, "q0": q0, "final_q": traj.final_state(), "final_w": w_final, "nu_error": nu_error }),
            );
        }
        let result = json!({
            "target": { "gamma": target.gamma, "nu": target.nu, "kkt_residual": target.kkt_residual },
            "runs": runs,
        });
        Ok((result, self.gap_bound(&s)))
    }

    fn solve(&mut self) -> ModeResult {
        let cfg = self.cfg;
        let s = self.schedules()?;
        let bounds = cfg.oracle.bounds.unwrap_or_else(DualBounds::positive);
        let u = cfg.algo.utility;
        let reg = solve_entropy_regularized(&s, u, cfg.algo.v, bounds, &SolverOptions::with_tol(cfg.oracle.tol))?;
        let opt = solve_utility_optimal(&s, u, cfg.oracle.tol)?;
        let kkt = kkt_residual(&s, u, cfg.algo.v, reg.gamma.as_slice(), &reg.pi, &reg.nu)?;
        let cert = utility_gap_certificate(&s, u, cfg.algo.v, &reg, &opt);
        let result = json!({
            "regularized": reg,
            "kkt_residual": kkt,
            "utility_optimal": { "gamma": opt.gamma, "pi": opt.pi, "objective": opt.objective },
            "certificate": cert,
        });
        Ok((result, self.gap_bound(&s)))
    }

    fn run_dt(&mut self) -> ModeResult {
        let cfg = self.cfg;
        let g = cfg.graph()?;
        let s = self.schedules()?;
        let p = DtParams {
            epsilon: cfg.dt.epsilon.unwrap_or_default(),
            mu: cfg.dt.mu,
            lambda: cfg.dt.lambda.clone().unwrap_or_default(),
            holding: cfg.dt.holding,
        };
        let gamma_opt = solve_utility_optimal(&s, cfg.algo.utility, cfg.oracle.tol)?.gamma;
        let mut reports = Vec::new();
        for &seed in &cfg.seeds {
            let (_, report) = run_dt(&g, &p, cfg.dt.horizon, &mut RngSeed(seed).rng())?;
            let eff = efficiency(report.gamma_eps.as_slice(), gamma_opt.as_slice(), cfg.algo.utility)?;
            reports.push((seed, report, eff));
        }
        self.csv("dt.csv", |w| {
            writeln!(w, "seed,link,gamma_eps,E,cycle_formula,periods")?;
            for (seed, r, _) in &reports {
                for l in 0..g.links() {
                    writeln!(w, "{seed},{l},{},{},{},{}", r.gamma_eps[l], r.e[l], r.cycle_formula[l], r.periods[l])?;
                }
            }
            Ok(())
        })?;
        let per_seed: Vec<Value> = reports
            .iter()
            .map(|(seed, r, eff)| {
                json!({
                    "seed": seed,
                    "epsilon": r.epsilon,
                    "gamma_eps": r.gamma_eps,
                    "E": r.e,
                    "beta": r.beta,
                    "collision_rate": r.collision_rate,
                    "efficiency": eff.value,
                    "starved": eff.starved,
                    "cycle_formula": r.cycle_formula,
                    "periods": r.periods,
                    "under_sampled": r.under_sampled,
                })
            })
            .collect();
        let result = json!({ "epsilon": p.epsilon, "seeds": cfg.seeds, "reports": per_seed });
        Ok((result, json!({ "efficiency_metric": EFFICIENCY_METRIC })))
    }

    fn tradeoff(&mut self) -> ModeResult {
        let cfg = self.cfg;
        let g = cfg.graph()?;
        let s = self.schedules()?;
        let q0 = cfg.initial_queues(g.links()).remove(0);
        let settings = SweepSettings {
            slots: cfg.slots,
            slot_minislots: cfg.dt.slot_minislots,
            holding: cfg.dt.holding,
            q0,
            workers: cfg.workers(),
        };
        let eps = cfg.sweep_epsilons();
        let outcome = tradeoff_sweep(&g, &cfg.algo, &eps, &cfg.seeds, &settings)?;
        self.csv("tradeoff.csv", |w| outcome.write_csv(w))?;
        let result = serde_json::to_value(&outcome).map_err(|e| Error::Io(e.to_string()))?;
        if let Some(first) = outcome.failures.first() {
            let error = Error::SweepRuns {
                failed: outcome.failures.len(),
                total: eps.len() * cfg.seeds.len(),
                first: format!("epsilon {} seed {}: {}", first.epsilon, first.seed, first.error),
            };
            return Err(Partial { result, error });
        }
        let mut extra = self.gap_bound(&s);
        extra["efficiency_metric"] = json!(EFFICIENCY_METRIC);
        Ok((result, extra))
    }
}
