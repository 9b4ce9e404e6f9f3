//! Experiment configuration: one JSON document, optionally patched by
//! `--path.to.field=value` overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::adaptive::{AlgoParams, QueueState};
use crate::dtsim::{max_attempt_probability, HoldingModel};
use crate::error::{Error, Result};
use crate::graph::{ConflictGraph, GraphSpec, DEFAULT_ENUMERATION_CAP};
use crate::ode::DEFAULT_DT;
use crate::oracle::DualBounds;

/// Environment variable holding the default worker count for sweeps.
pub const WORKERS_ENV: &str = "CSMA_OPT_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Enumerate,
    Stationary,
    SimulateCt,
    RunAdaptive,
    Ode,
    Solve,
    RunDt,
    Tradeoff,
}

impl Mode {
    pub const ALL: [Mode; 8] = [
        Mode::Enumerate,
        Mode::Stationary,
        Mode::SimulateCt,
        Mode::RunAdaptive,
        Mode::Ode,
        Mode::Solve,
        Mode::RunDt,
        Mode::Tradeoff,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Enumerate => "enumerate",
            Mode::Stationary => "stationary",
            Mode::SimulateCt => "simulate-ct",
            Mode::RunAdaptive => "run-adaptive",
            Mode::Ode => "ode",
            Mode::Solve => "solve",
            Mode::RunDt => "run-dt",
            Mode::Tradeoff => "tradeoff",
        }
    }

    pub fn is_stochastic(self) -> bool {
        matches!(self, Mode::SimulateCt | Mode::RunAdaptive | Mode::RunDt | Mode::Tradeoff)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let names: Vec<_> = Mode::ALL.iter().map(|m| m.name()).collect();
            Error::Config(format!("unknown mode `{s}`, expected one of {}", names.join(", ")))
        })
    }
}

/// An initial queue vector, or a single level applied to every link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QueueInit {
    Uniform(f64),
    PerLink(Vec<f64>),
}

impl QueueInit {
    pub fn resolve(&self, links: usize) -> QueueState {
        match self {
            QueueInit::Uniform(q) => QueueState::uniform(links, *q),
            QueueInit::PerLink(q) => QueueState(q.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CtConfig {
    /// Activation rates; required by `stationary` and `simulate-ct`.
    pub lambda: Option<Vec<f64>>,
    pub mu: f64,
    /// Jump events per seed for `simulate-ct`.
    pub events: u64,
    /// Also write the full holding-interval trace per seed.
    pub write_trace: bool,
}

impl Default for CtConfig {
    fn default() -> Self {
        Self { lambda: None, mu: 1.0, events: 1_000_000, write_trace: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DtConfig {
    pub epsilon: Option<f64>,
    /// Epsilon values of a sweep.
    pub eps_list: Vec<f64>,
    /// Sweep points given as the largest start probability
    /// `epsilon * exp(W(q_max)) / mu`; converted to epsilons.
    pub max_attempt: Vec<f64>,
    pub holding: HoldingModel,
    /// Minislots per seed for `run-dt`.
    pub horizon: u64,
    /// Fixed activation parameters for `run-dt`.
    pub lambda: Option<Vec<f64>>,
    pub mu: f64,
    /// Minislots per adaptation slot; defaults to `slot_len / epsilon`.
    pub slot_minislots: Option<u64>,
}

impl Default for DtConfig {
    fn default() -> Self {
        Self {
            epsilon: None,
            eps_list: Vec::new(),
            max_attempt: Vec::new(),
            holding: HoldingModel::Geometric,
            horizon: 1_000_000,
            lambda: None,
            mu: 1.0,
            slot_minislots: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdeConfig {
    pub horizon: f64,
    pub dt: f64,
}

impl Default for OdeConfig {
    fn default() -> Self {
        Self { horizon: 50.0, dt: DEFAULT_DT }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub tol: f64,
    /// Multiplier box for `solve`; unbounded above when absent.
    pub bounds: Option<DualBounds>,
    /// Pass threshold on the final throughput error of `run-adaptive`.
    pub tolerance: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { tol: 1e-9, bounds: None, tolerance: 0.03 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub mode: Option<Mode>,
    pub graph: GraphSpec,
    #[serde(default = "default_cap")]
    pub enumeration_cap: usize,
    #[serde(default)]
    pub algo: AlgoParams,
    /// Initial queues; each entry is one initial condition. Defaults to
    /// `q_min` on every link.
    #[serde(default)]
    pub q0: Vec<QueueInit>,
    /// Adaptation slots for `run-adaptive` and `tradeoff`.
    #[serde(default)]
    pub slots: usize,
    #[serde(default)]
    pub ct: CtConfig,
    #[serde(default)]
    pub dt: DtConfig,
    #[serde(default)]
    pub ode: OdeConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_cap() -> usize {
    DEFAULT_ENUMERATION_CAP
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_value(serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?)
    }

    pub fn from_value(value: Value) -> Result<Self> {
        serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads `path`, applies `overrides` and returns the typed config.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut value: Value =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        for (key, raw) in overrides {
            apply_override(&mut value, key, raw)?;
        }
        Self::from_value(value)
    }

    pub fn graph(&self) -> Result<ConflictGraph> {
        ConflictGraph::from_spec(&self.graph).map_err(|e| field("graph", e))
    }

    pub fn initial_queues(&self, links: usize) -> Vec<QueueState> {
        if self.q0.is_empty() {
            vec![QueueState::uniform(links, self.algo.q_min)]
        } else {
            self.q0.iter().map(|q| q.resolve(links)).collect()
        }
    }

    /// Epsilons of a sweep: `dt.eps_list` followed by the converted
    /// `dt.max_attempt` entries, sorted and deduplicated.
    pub fn sweep_epsilons(&self) -> Vec<f64> {
        let top = max_attempt_probability(&self.algo, 1.0);
        let mut eps: Vec<f64> =
            self.dt.eps_list.iter().copied().chain(self.dt.max_attempt.iter().map(|x| x / top)).collect();
        eps.sort_by(f64::total_cmp);
        eps.dedup();
        eps
    }

    pub fn slot_minislots(&self, epsilon: f64) -> u64 {
        self.dt.slot_minislots.unwrap_or_else(|| (self.algo.slot_len / epsilon).ceil() as u64)
    }

    pub fn workers(&self) -> usize {
        self.workers
            .or_else(|| std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse().ok()))
            .or_else(|| std::thread::available_parallelism().ok().map(|n| n.get()))
            .unwrap_or(1)
            .max(1)
    }

    /// Checks that everything `mode` needs is present and valid. Errors name
    /// the offending field.
    pub fn validate(&self, mode: Mode) -> Result<()> {
        let g = self.graph()?;
        let links = g.links();
        if links > self.enumeration_cap {
            return Err(field("graph", Error::GraphTooLarge { links, cap: self.enumeration_cap }));
        }
        if mode.is_stochastic() && self.seeds.is_empty() {
            return Err(Error::Config(format!("seeds: mode {mode} needs at least one seed")));
        }
        let needs_algo = matches!(mode, Mode::RunAdaptive | Mode::Ode | Mode::Solve | Mode::Tradeoff);
        if needs_algo {
            self.algo.validate().map_err(|e| field("algo", e))?;
            for q in self.initial_queues(links) {
                q.check(links, &self.algo).map_err(|e| field("q0", e))?;
            }
        }
        if !(self.oracle.tol > 0.0) {
            return Err(Error::Config(format!("oracle.tol: must be positive, got {}", self.oracle.tol)));
        }
        match mode {
            Mode::Enumerate => {}
            Mode::Stationary | Mode::SimulateCt => {
                let lambda = self.ct.lambda.as_ref().ok_or_else(|| missing("ct.lambda", mode))?;
                crate::ctsim::CsmaRates::new(lambda, self.ct.mu).map_err(|e| field("ct", e))?;
                if lambda.len() != links {
                    return Err(field("ct.lambda", Error::LengthMismatch { expected: links, got: lambda.len() }));
                }
                if mode == Mode::SimulateCt && self.ct.events == 0 {
                    return Err(Error::Config("ct.events: must be positive".into()));
                }
            }
            Mode::RunAdaptive => {
                if self.slots == 0 {
                    return Err(missing("slots", mode));
                }
            }
            Mode::Ode => {
                if !(self.ode.horizon >= 0.0 && self.ode.dt > 0.0) {
                    return Err(Error::Config("ode: need horizon >= 0 and dt > 0".into()));
                }
            }
            Mode::Solve => {
                if let Some(b) = self.oracle.bounds {
                    DualBounds::new(b.min, b.max).map_err(|e| field("oracle.bounds", e))?;
                }
            }
            Mode::RunDt => {
                let epsilon = self.dt.epsilon.ok_or_else(|| missing("dt.epsilon", mode))?;
                let lambda = self.dt.lambda.clone().ok_or_else(|| missing("dt.lambda", mode))?;
                let p = crate::dtsim::DtParams { epsilon, mu: self.dt.mu, lambda, holding: self.dt.holding };
                p.validate(links).map_err(|e| field("dt", e))?;
                if self.dt.horizon == 0 {
                    return Err(Error::Config("dt.horizon: must be positive".into()));
                }
            }
            Mode::Tradeoff => {
                if self.slots == 0 {
                    return Err(missing("slots", mode));
                }
                let eps = self.sweep_epsilons();
                if eps.is_empty() {
                    return Err(field("dt.eps_list", Error::EmptySweep));
                }
                for e in eps {
                    let cap = max_attempt_probability(&self.algo, e);
                    if !(e > 0.0 && e <= 1.0) || cap > 1.0 {
                        return Err(field("dt", Error::ProbabilityCap { link: 0, value: cap }));
                    }
                    if self.algo.mu / e < 1.0 {
                        return Err(Error::Config(format!(
                            "dt: mean holding mu/epsilon below one minislot at epsilon {e}"
                        )));
                    }
                    if self.slot_minislots(e) == 0 {
                        return Err(Error::Config("dt.slot_minislots: must be positive".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

fn field(name: &str, e: Error) -> Error {
    Error::Config(format!("{name}: {e}"))
}

fn missing(name: &str, mode: Mode) -> Error {
    Error::Config(format!("{name}: required by mode {mode}"))
}

/// Sets the field at dotted `path` to `raw`, parsed as JSON when possible and
/// as a plain string otherwise. Missing intermediate objects are created.
pub fn apply_override(root: &mut Value, path: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let mut parts = path.split('.').peekable();
    while let Some(part) = parts.next() {
        if part.is_empty() {
            return Err(Error::Config(format!("malformed override path `{path}`")));
        }
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override `{path}`: `{part}` is not inside an object")))?;
        if parts.peek().is_none() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    Err(Error::Config("empty override path".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn base() -> Value {
        json!({"graph": {"links": 3, "conflicts": [[0, 1], [1, 2]]}, "seeds": [1]})
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::from_value(base()).unwrap();
        assert_eq!(cfg.algo, AlgoParams::default());
        assert_eq!(cfg.initial_queues(3), vec![QueueState::uniform(3, 0.1)]);
        cfg.validate(Mode::Enumerate).unwrap();
        cfg.validate(Mode::Solve).unwrap();
    }

    #[test]
    fn overrides_follow_json_paths() {
        let mut v = base();
        apply_override(&mut v, "algo.V", "5").unwrap();
        apply_override(&mut v, "algo.step", r#"{"kind":"constant","b0":0.01}"#).unwrap();
        apply_override(&mut v, "dt.holding", "deterministic").unwrap();
        let cfg = ExperimentConfig::from_value(v).unwrap();
        assert_eq!(cfg.algo.v, 5.0);
        assert_eq!(cfg.algo.step, crate::functions::StepSize::Constant { b0: 0.01 });
        assert_eq!(cfg.dt.holding, HoldingModel::Deterministic);
    }

    #[test]
    fn field_level_errors() {
        let mut v = base();
        apply_override(&mut v, "algo.bogus", "1").unwrap();
        let err = ExperimentConfig::from_value(v).unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");

        let cfg = ExperimentConfig::from_value(base()).unwrap();
        let err = cfg.validate(Mode::Stationary).unwrap_err().to_string();
        assert!(err.contains("ct.lambda"), "{err}");
        let err = cfg.validate(Mode::Tradeoff).unwrap_err().to_string();
        assert!(err.contains("slots"), "{err}");

        let mut v = base();
        apply_override(&mut v, "seeds", "[]").unwrap();
        let err = ExperimentConfig::from_value(v).unwrap().validate(Mode::RunAdaptive).unwrap_err().to_string();
        assert!(err.contains("seeds"), "{err}");
    }

    #[test]
    fn empty_sweep_is_rejected() {
        let mut v = base();
        apply_override(&mut v, "slots", "10").unwrap();
        let err = ExperimentConfig::from_value(v).unwrap().validate(Mode::Tradeoff).unwrap_err();
        assert!(err.to_string().contains("empty sweep"));
    }

    #[test]
    fn attempt_probabilities_convert_to_epsilons() {
        let mut v = base();
        apply_override(&mut v, "algo.q_max", "2.5").unwrap();
        apply_override(&mut v, "dt.max_attempt", "[0.1, 0.05]").unwrap();
        let cfg = ExperimentConfig::from_value(v).unwrap();
        let eps = cfg.sweep_epsilons();
        assert!((eps[0] - 0.05 / 2.5f64.exp()).abs() < 1e-15);
        assert!((eps[1] - 0.1 / 2.5f64.exp()).abs() < 1e-15);
        assert_eq!(cfg.slot_minislots(0.01), 1000);
    }

    #[test]
    fn mode_names_round_trip() {
        for m in Mode::ALL {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
            assert_eq!(serde_json::to_value(m).unwrap(), json!(m.name()));
        }
        assert!("walk".parse::<Mode>().is_err());
    }
}
