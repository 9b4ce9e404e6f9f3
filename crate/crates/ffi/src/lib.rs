//! C interface to `csma-core`.
//!
//! Graphs and schedule sets are opaque handles created and released through
//! this API. Every fallible call returns a [`CsmaStatus`]; on failure the
//! message is available from [`csma_last_error_message`] on the same thread.
//! Output arrays are caller-allocated and their lengths are checked.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use csma_core::adaptive::{self, AlgoParams, QueueState};
use csma_core::ctsim::RngSeed;
use csma_core::dtsim::{run_dt, DtParams, HoldingModel};
use csma_core::exact::{link_throughputs, stationary_distribution, ScheduleDistribution};
use csma_core::functions::Utility;
use csma_core::graph::{enumerate_schedules_with_cap, DEFAULT_ENUMERATION_CAP};
use csma_core::harness::{run_experiment, ExperimentConfig, Failure, Mode};
use csma_core::oracle::{solve_entropy_regularized, solve_utility_optimal, DualBounds, SolverOptions};
use csma_core::{ConflictGraph, Error, ScheduleSet};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsmaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidGraph = 3,
    GraphTooLarge = 4,
    LengthMismatch = 5,
    BufferTooSmall = 6,
    InfeasibleSchedule = 7,
    NoConvergence = 8,
    ProbabilityCap = 9,
    Config = 10,
    Io = 11,
    Runtime = 12,
    Panic = 13,
}

impl From<&Error> for CsmaStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::GraphTooLarge { .. } => CsmaStatus::GraphTooLarge,
            Error::InvalidGraph(_) => CsmaStatus::InvalidGraph,
            Error::LengthMismatch { .. } => CsmaStatus::LengthMismatch,
            Error::InfeasibleSchedule => CsmaStatus::InfeasibleSchedule,
            Error::InvalidParameter(_) | Error::NonIncreasingWeight { .. } | Error::InadmissibleV { .. } => {
                CsmaStatus::InvalidArgument
            }
            Error::NoConvergence { .. } => CsmaStatus::NoConvergence,
            Error::ProbabilityCap { .. } => CsmaStatus::ProbabilityCap,
            Error::Config(_) => CsmaStatus::Config,
            Error::Io(_) => CsmaStatus::Io,
            _ => CsmaStatus::Runtime,
        }
    }
}

/// Opaque conflict graph.
pub struct CsmaGraph(ConflictGraph);

/// Opaque list of feasible schedules of a graph, in canonical order.
pub struct CsmaSchedules(ScheduleSet);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsmaHolding {
    Geometric = 0,
    Deterministic = 1,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Fail(CsmaStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail((&e).into(), e.to_string())
    }
}

type Outcome = Result<(), Fail>;

fn guard(f: impl FnOnce() -> Outcome) -> CsmaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CsmaStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            CsmaStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(CsmaStatus::NullPointer, format!("{what} is null"))
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, need: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len < need {
        return Err(Fail(CsmaStatus::BufferTooSmall, format!("{what} holds {len} entries, {need} needed")));
    }
    if need == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(CsmaStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Outcome {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn csma_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn csma_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Builds a graph from `n_edges` interfering pairs stored flat in `edges`
/// (`2 * n_edges` entries).
///
/// # Safety
/// `edges` must point to `2 * n_edges` readable values and `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn csma_graph_new(
    links: usize,
    edges: *const usize,
    n_edges: usize,
    out: *mut *mut CsmaGraph,
) -> CsmaStatus {
    guard(|| {
        let flat = input(edges, 2 * n_edges, "edges")?;
        let pairs: Vec<(usize, usize)> = flat.chunks(2).map(|c| (c[0], c[1])).collect();
        store(out, CsmaGraph(ConflictGraph::new(links, &pairs)?))
    })
}

/// Builds a graph from `{"links": L, "conflicts": [[a, b], ...]}`.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn csma_graph_from_json(json: *const c_char, out: *mut *mut CsmaGraph) -> CsmaStatus {
    guard(|| store(out, CsmaGraph(ConflictGraph::from_json(text(json, "json")?)?)))
}

/// Number of links, or 0 for a NULL handle.
///
/// # Safety
/// `g` must be NULL or a live graph handle.
#[no_mangle]
pub unsafe extern "C" fn csma_graph_links(g: *const CsmaGraph) -> usize {
    g.as_ref().map_or(0, |g| g.0.links())
}

/// # Safety
/// `g` must be NULL or a handle from this library that is not used again.
#[no_mangle]
pub unsafe extern "C" fn csma_graph_free(g: *mut CsmaGraph) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Enumerates the independent sets of `g`.
///
/// # Safety
/// `g` must be a live graph handle and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn csma_schedules_enumerate(g: *const CsmaGraph, out: *mut *mut CsmaSchedules) -> CsmaStatus {
    guard(|| {
        let g = handle(g, "graph")?;
        store(out, CsmaSchedules(enumerate_schedules_with_cap(&g.0, DEFAULT_ENUMERATION_CAP)?))
    })
}

/// Number of schedules, or 0 for a NULL handle.
///
/// # Safety
/// `s` must be NULL or a live schedule handle.
#[no_mangle]
pub unsafe extern "C" fn csma_schedules_count(s: *const CsmaSchedules) -> usize {
    s.as_ref().map_or(0, |s| s.0.len())
}

/// Copies the schedules as link bit masks (link 0 in the lowest bit).
///
/// # Safety
/// `out` must have room for `len` values.
#[no_mangle]
pub unsafe extern "C" fn csma_schedules_masks(s: *const CsmaSchedules, out: *mut u64, len: usize) -> CsmaStatus {
    guard(|| {
        let s = handle(s, "schedules")?;
        let out = output(out, len, s.0.len(), "masks")?;
        for (o, m) in out.iter_mut().zip(s.0.iter()) {
            *o = m.mask();
        }
        Ok(())
    })
}

/// # Safety
/// `s` must be NULL or a handle from this library that is not used again.
#[no_mangle]
pub unsafe extern "C" fn csma_schedules_free(s: *mut CsmaSchedules) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Stationary schedule distribution of CSMA with per-link `lambda` and common `mu`.
///
/// # Safety
/// `lambda` must hold `links` values and `pi` must have room for `pi_len`.
#[no_mangle]
pub unsafe extern "C" fn csma_stationary_distribution(
    s: *const CsmaSchedules,
    lambda: *const f64,
    links: usize,
    mu: f64,
    pi: *mut f64,
    pi_len: usize,
) -> CsmaStatus {
    guard(|| {
        let s = handle(s, "schedules")?;
        let lambda = input(lambda, links, "lambda")?;
        let dist = stationary_distribution(&s.0, lambda, mu)?;
        output(pi, pi_len, s.0.len(), "pi")?[..s.0.len()].copy_from_slice(dist.probs());
        Ok(())
    })
}

/// Per-link throughput under the schedule distribution `pi`.
///
/// # Safety
/// `pi` must hold `pi_len` values and `gamma` must have room for `links`.
#[no_mangle]
pub unsafe extern "C" fn csma_link_throughputs(
    s: *const CsmaSchedules,
    pi: *const f64,
    pi_len: usize,
    gamma: *mut f64,
    links: usize,
) -> CsmaStatus {
    guard(|| {
        let s = handle(s, "schedules")?;
        let dist = ScheduleDistribution::new(input(pi, pi_len, "pi")?.to_vec())?;
        let g = link_throughputs(&s.0, &dist)?;
        output(gamma, links, s.0.links(), "gamma")?[..s.0.links()].copy_from_slice(g.as_slice());
        Ok(())
    })
}

/// Solves the entropy-regularized log-utility problem with weight `v` and
/// multipliers in `[nu_min, nu_max]` (`nu_max` may be infinite).
///
/// # Safety
/// `gamma` and `nu` must each have room for `links` values.
#[no_mangle]
pub unsafe extern "C" fn csma_solve_entropy_regularized(
    s: *const CsmaSchedules,
    v: f64,
    nu_min: f64,
    nu_max: f64,
    tol: f64,
    gamma: *mut f64,
    nu: *mut f64,
    links: usize,
) -> CsmaStatus {
    guard(|| {
        let s = handle(s, "schedules")?;
        let n = s.0.links();
        let gamma = output(gamma, links, n, "gamma")?;
        let nu = output(nu, links, n, "nu")?;
        let bounds = DualBounds::new(nu_min, nu_max)?;
        let sol = solve_entropy_regularized(&s.0, Utility::Log, v, bounds, &SolverOptions::with_tol(tol))?;
        gamma[..n].copy_from_slice(sol.gamma.as_slice());
        nu[..n].copy_from_slice(&sol.nu);
        Ok(())
    })
}

/// Proportionally fair throughputs (log utility, no regularization).
///
/// # Safety
/// `gamma` must have room for `links` values.
#[no_mangle]
pub unsafe extern "C" fn csma_solve_utility_optimal(
    s: *const CsmaSchedules,
    tol: f64,
    gamma: *mut f64,
    links: usize,
) -> CsmaStatus {
    guard(|| {
        let s = handle(s, "schedules")?;
        let n = s.0.links();
        let gamma = output(gamma, links, n, "gamma")?;
        let sol = solve_utility_optimal(&s.0, Utility::Log, tol)?;
        gamma[..n].copy_from_slice(sol.gamma.as_slice());
        Ok(())
    })
}

/// Runs the queue-driven rate adaptation for `slots` slots and reports the
/// average throughput and the final queues. `algo_json` holds the algorithm
/// parameters (NULL for defaults); `q0` may be NULL to start at `q_min`.
///
/// # Safety
/// Pointers must be valid for `links` values; `algo_json` must be NULL or
/// NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn csma_run_adaptive(
    g: *const CsmaGraph,
    algo_json: *const c_char,
    q0: *const f64,
    slots: usize,
    seed: u64,
    gamma: *mut f64,
    q_final: *mut f64,
    links: usize,
) -> CsmaStatus {
    guard(|| {
        let g = handle(g, "graph")?;
        let n = g.0.links();
        let algo: AlgoParams = if algo_json.is_null() {
            AlgoParams::default()
        } else {
            serde_json::from_str(text(algo_json, "algo_json")?)
                .map_err(|e| Fail(CsmaStatus::Config, format!("algo_json: {e}")))?
        };
        let q0 = if q0.is_null() {
            QueueState::uniform(n, algo.q_min)
        } else {
            QueueState(input(q0, links, "q0")?.to_vec())
        };
        let gamma = output(gamma, links, n, "gamma")?;
        let q_final = output(q_final, links, n, "q_final")?;
        let trace = adaptive::run(&g.0, &algo, &q0, slots, &mut RngSeed(seed).rng())?;
        gamma[..n].copy_from_slice(adaptive::gamma_running_average(&trace)?.as_slice());
        q_final[..n].copy_from_slice(trace.final_queue());
        Ok(())
    })
}

/// Simulates `horizon` minislots of the slotted collision model at fixed
/// rates. Writes per-link throughput and mean no-success period, and the
/// fraction of transmission starts that collided.
///
/// # Safety
/// `lambda`, `gamma` and `mean_gap` must be valid for `links` values and
/// `collision_rate` must be writable.
#[no_mangle]
pub unsafe extern "C" fn csma_run_dt(
    g: *const CsmaGraph,
    epsilon: f64,
    mu: f64,
    lambda: *const f64,
    holding: CsmaHolding,
    horizon: u64,
    seed: u64,
    gamma: *mut f64,
    mean_gap: *mut f64,
    collision_rate: *mut f64,
    links: usize,
) -> CsmaStatus {
    guard(|| {
        let g = handle(g, "graph")?;
        let n = g.0.links();
        let holding = match holding {
            CsmaHolding::Geometric => HoldingModel::Geometric,
            CsmaHolding::Deterministic => HoldingModel::Deterministic,
        };
        let p = DtParams { epsilon, mu, lambda: input(lambda, links, "lambda")?.to_vec(), holding };
        let gamma = output(gamma, links, n, "gamma")?;
        let mean_gap = output(mean_gap, links, n, "mean_gap")?;
        let rate = collision_rate.as_mut().ok_or_else(|| null("collision_rate"))?;
        let (_, report) = run_dt(&g.0, &p, horizon, &mut RngSeed(seed).rng())?;
        gamma[..n].copy_from_slice(report.gamma_eps.as_slice());
        mean_gap[..n].copy_from_slice(&report.e);
        *rate = report.collision_rate;
        Ok(())
    })
}

/// Runs one harness mode from a JSON config, writing outputs into `out_dir`.
///
/// # Safety
/// All arguments must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn csma_run_experiment(
    mode: *const c_char,
    config_json: *const c_char,
    out_dir: *const c_char,
) -> CsmaStatus {
    guard(|| {
        let mode: Mode = text(mode, "mode")?.parse()?;
        let cfg = ExperimentConfig::from_json(text(config_json, "config_json")?)?;
        let out = Path::new(text(out_dir, "out_dir")?);
        match run_experiment(&cfg, mode, out) {
            Ok(_) => Ok(()),
            Err(Failure::Config(e)) => Err(Fail(CsmaStatus::Config, e.to_string())),
            Err(Failure::Runtime(e)) => Err(e.into()),
        }
    })
}
