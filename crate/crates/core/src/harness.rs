//! Experiment drivers behind the command-line subcommands.
//!
//! Each driver takes validated configurations, runs the analytic engine, the
//! simulator, or both, and returns typed rows that render to CSV. Output is a
//! pure function of the inputs and the seed.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::kernel::{
    build_kernel, expected_execution_time, expected_usage_per_execution, mean_idle_time,
    prob_stay_synced, stationary, KernelError, StationaryDistribution, TransitionKernel,
};
use crate::output::to_csv;
use crate::params::{ConfigError, ModelConfig, Param, Protocol};
use crate::sim::{
    empirical_kernel, mean_idle_per_execution, run_simulation, stay_synced_estimate,
    time_fractions, trace_data_usage, trace_sync_data_usage, SimOptions, SimTrace, TimingMode,
};
use crate::timing::{DataUsage, ExecutionScenario, Timing};

/// Rows with fewer visits are left out of the validation discrepancy.
pub const MIN_VISITS: u64 = 1000;
pub const DEFAULT_TOLERANCE: f64 = 0.02;
pub const DEFAULT_EXECUTIONS: usize = 100_000;

pub const DEFAULT_T_S_GRID: [f64; 6] = [0.0, 30.0, 60.0, 300.0, 900.0, 1800.0];
pub const DEFAULT_P_E_DL_GRID: [f64; 3] = [0.0, 0.1, 0.3];
pub const DEFAULT_L_B_GRID: [f64; 3] = [40e3, 400e3, 4000e3];
pub const DEFAULT_LAMBDA_B_GRID: [f64; 3] = [1.0 / 60.0, 1.0 / 12.0, 1.0 / 3.0];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("insufficient transitions: need at least 2 executions, got {0}")]
    InsufficientTransitions(usize),
    #[error("empty value list")]
    EmptyValues,
    #[error("configs differ outside the protocol selector: {0}")]
    MismatchedConfigs(String),
    #[error("{param} = {value}: {source}")]
    SweepPoint {
        param: String,
        value: f64,
        source: ConfigError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Engine {
    Analytic,
    Simulate,
    #[default]
    Both,
}

impl Engine {
    fn analytic(self) -> bool {
        matches!(self, Engine::Analytic | Engine::Both)
    }

    fn simulate(self) -> bool {
        matches!(self, Engine::Simulate | Engine::Both)
    }
}

impl FromStr for Engine {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "analytic" => Ok(Engine::Analytic),
            "simulate" => Ok(Engine::Simulate),
            "both" => Ok(Engine::Both),
            other => Err(format!("unknown engine `{other}` (analytic|simulate|both)")),
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::Analytic => "analytic",
            Engine::Simulate => "simulate",
            Engine::Both => "both",
        })
    }
}

/// Simulation settings shared by every driver.
#[derive(Debug, Clone, Copy)]
pub struct SimSettings {
    pub seed: u64,
    pub executions: usize,
    pub options: SimOptions,
}

impl SimSettings {
    pub fn new(seed: u64, executions: usize, timing: TimingMode) -> Self {
        Self {
            seed,
            executions,
            options: SimOptions::with_timing(timing),
        }
    }

    fn run(&self, cfg: &ModelConfig) -> SimTrace {
        run_simulation(cfg, self.seed, self.executions, self.options)
    }
}

/// Analytic solution for one configuration.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub kernel: TransitionKernel,
    pub stationary: StationaryDistribution,
}

impl Analysis {
    pub fn solve(cfg: &ModelConfig) -> Result<Self, KernelError> {
        let kernel = build_kernel(cfg);
        let stationary = stationary(&kernel)?;
        Ok(Self { kernel, stationary })
    }
}

// ---------------------------------------------------------------- validate

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationRow {
    pub n: usize,
    pub m: usize,
    pub analytic: f64,
    pub empirical: f64,
    pub visits: u64,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub rows: Vec<ValidationRow>,
    /// `None` when no row reached [`MIN_VISITS`].
    pub max_discrepancy: Option<f64>,
    pub tolerance: f64,
    /// Empirical and analytic `P[0|0]`.
    pub empirical_stay_synced: f64,
    pub analytic_stay_synced: f64,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.max_discrepancy.is_some_and(|d| d <= self.tolerance)
    }

    pub fn to_csv(&self) -> String {
        to_csv(&self.rows)
    }
}

/// Compares the analytic kernel with transition frequencies from a simulation.
/// One row per `(n, m)` for every state the simulation visited.
pub fn validate(cfg: &ModelConfig, sim: &SimSettings, tolerance: f64) -> Result<ValidationReport, HarnessError> {
    if sim.executions < 2 {
        return Err(HarnessError::InsufficientTransitions(sim.executions));
    }
    let analysis = Analysis::solve(cfg)?;
    let trace = sim.run(cfg);
    let empirical = empirical_kernel(&trace, cfg.n_max);
    let mut rows = Vec::new();
    for (n, row) in empirical.rows.iter().enumerate() {
        let Some(row) = row else { continue };
        for (m, &p) in row.iter().enumerate() {
            rows.push(ValidationRow {
                n,
                m,
                analytic: analysis.kernel.get(n, m),
                empirical: p,
                visits: empirical.visits[n],
            });
        }
    }
    Ok(ValidationReport {
        rows,
        max_discrepancy: empirical.max_discrepancy(&analysis.kernel, MIN_VISITS),
        tolerance,
        empirical_stay_synced: stay_synced_estimate(&trace).0,
        analytic_stay_synced: prob_stay_synced(&analysis.kernel),
    })
}

// ------------------------------------------------------------------- sweep

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// `P[X_{k+1} = 0 | X_k = 0]`.
    PSync,
    /// Mean idle seconds per execution.
    IdleTime,
    /// Mean downlink bits per execution.
    DlPerExec,
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "p_sync" => Ok(Metric::PSync),
            "idle_time" => Ok(Metric::IdleTime),
            "dl_per_exec" => Ok(Metric::DlPerExec),
            other => Err(format!("unknown metric `{other}` (p_sync|idle_time|dl_per_exec)")),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::PSync => "p_sync",
            Metric::IdleTime => "idle_time",
            Metric::DlPerExec => "dl_per_exec",
        })
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub param: Param,
    pub values: Vec<f64>,
    pub base: ModelConfig,
    pub engine: Engine,
}

impl SweepSpec {
    /// Resolves `path` (e.g. `device.t_s`) and checks the value list.
    pub fn new(path: &str, values: Vec<f64>, base: ModelConfig, engine: Engine) -> Result<Self, HarnessError> {
        let param: Param = path.parse()?;
        if values.is_empty() {
            return Err(HarnessError::EmptyValues);
        }
        Ok(Self {
            param,
            values,
            base,
            engine,
        })
    }

    /// Default grid for the axes the sweep command knows about.
    pub fn default_values(param: Param) -> Option<Vec<f64>> {
        match param {
            Param::Ts => Some(DEFAULT_T_S_GRID.to_vec()),
            Param::PeDl => Some(DEFAULT_P_E_DL_GRID.to_vec()),
            Param::LB => Some(DEFAULT_L_B_GRID.to_vec()),
            Param::LambdaB => Some(DEFAULT_LAMBDA_B_GRID.to_vec()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub param: String,
    pub value: f64,
    pub analytic: Option<f64>,
    pub simulated: Option<f64>,
    pub sim_stderr: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trend {
    Constant,
    NonIncreasing,
    NonDecreasing,
    Mixed,
}

impl fmt::Display for Trend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Trend::Constant => "constant",
            Trend::NonIncreasing => "non-increasing",
            Trend::NonDecreasing => "non-decreasing",
            Trend::Mixed => "not monotone",
        })
    }
}

/// Direction of a series, treating differences within `slack` as ties.
pub fn trend(values: &[f64], slack: f64) -> Trend {
    let up = values.windows(2).any(|w| w[1] > w[0] + slack);
    let down = values.windows(2).any(|w| w[1] < w[0] - slack);
    match (up, down) {
        (false, false) => Trend::Constant,
        (false, true) => Trend::NonIncreasing,
        (true, false) => Trend::NonDecreasing,
        (true, true) => Trend::Mixed,
    }
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub metric: Metric,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn analytic_trend(&self) -> Option<Trend> {
        let v: Option<Vec<f64>> = self.rows.iter().map(|r| r.analytic).collect();
        v.map(|v| trend(&v, 1e-12))
    }

    pub fn simulated_trend(&self) -> Option<Trend> {
        let v: Option<Vec<f64>> = self.rows.iter().map(|r| r.simulated).collect();
        v.map(|v| trend(&v, 0.0))
    }

    pub fn to_csv(&self) -> String {
        to_csv(&self.rows)
    }
}

fn mean_and_stderr(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    let xs: Vec<f64> = xs.collect();
    let n = xs.len().max(1) as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

fn analytic_metric(cfg: &ModelConfig, metric: Metric) -> Result<f64, KernelError> {
    let a = Analysis::solve(cfg)?;
    Ok(match metric {
        Metric::PSync => prob_stay_synced(&a.kernel),
        Metric::IdleTime => mean_idle_time(&a.stationary, cfg),
        Metric::DlPerExec => expected_usage_per_execution(&a.kernel, &a.stationary, cfg).dl_bits,
    })
}

fn simulated_metric(trace: &SimTrace, metric: Metric) -> (f64, f64) {
    match metric {
        Metric::PSync => {
            let (p, se, _) = stay_synced_estimate(trace);
            (p, se)
        }
        Metric::IdleTime => {
            let skip = trace.warmup.min(trace.records.len().saturating_sub(1)) + 1;
            let (_, se) = mean_and_stderr(trace.records.iter().skip(skip).map(|r| r.idle_before));
            (mean_idle_per_execution(trace), se)
        }
        Metric::DlPerExec => {
            let (_, se) = mean_and_stderr(trace.records.iter().map(|r| r.data.dl_bits));
            (trace_data_usage(trace).dl_bits, se)
        }
    }
}

/// Evaluates `metric` at every sweep value; points run in parallel and rows
/// keep the order of `spec.values`.
pub fn sweep(spec: &SweepSpec, metric: Metric, sim: &SimSettings) -> Result<SweepReport, HarnessError> {
    let rows = spec
        .values
        .par_iter()
        .map(|&value| -> Result<SweepRow, HarnessError> {
            let mut cfg = spec.base.clone();
            let point_err = |source| HarnessError::SweepPoint {
                param: spec.param.path(),
                value,
                source,
            };
            spec.param.set(&mut cfg, value).map_err(point_err)?;
            let cfg = cfg.validate().map_err(point_err)?;
            let analytic = if spec.engine.analytic() {
                Some(analytic_metric(&cfg, metric)?)
            } else {
                None
            };
            let (simulated, sim_stderr) = if spec.engine.simulate() {
                let (v, se) = simulated_metric(&sim.run(&cfg), metric);
                (Some(v), Some(se))
            } else {
                (None, None)
            };
            Ok(SweepRow {
                param: spec.param.path(),
                value,
                analytic,
                simulated,
                sim_stderr,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SweepReport { metric, rows })
}

// -------------------------------------------------------------- data usage

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataUsageRow {
    pub p_m: f64,
    pub engine: &'static str,
    pub p1_ul_bits: f64,
    pub p1_dl_bits: f64,
    pub p2_ul_bits: f64,
    pub p2_dl_bits: f64,
    /// P2/P1 ratio of mean downlink per execution.
    pub dl_ratio: f64,
    /// P2/P1 downlink ratio of a synchronized execution (awake, one new block).
    pub sync_dl_ratio: f64,
}

fn check_same_except_protocol(a: &ModelConfig, b: &ModelConfig) -> Result<(), HarnessError> {
    let a = a.clone().with_protocol(Protocol::P1);
    let b = b.clone().with_protocol(Protocol::P1);
    if a == b {
        return Ok(());
    }
    let differing: Vec<&str> = Param::ALL
        .into_iter()
        .filter(|p| p.get(&a) != p.get(&b))
        .map(Param::name)
        .collect();
    Err(HarnessError::MismatchedConfigs(differing.join(", ")))
}

/// Expected downlink of a synchronized execution, averaged over the match event.
fn sync_dl_bits(cfg: &ModelConfig, protocol: Protocol) -> f64 {
    let t = Timing::new(cfg);
    let plain = t.data_usage(&ExecutionScenario::new(protocol, 0, false, false).expect("unmatched"));
    match protocol {
        Protocol::P1 => plain.dl_bits,
        Protocol::P2 => plain.dl_bits + cfg.blockchain.p_m * (t.l_i + t.l_poi),
    }
}

/// Per-execution data usage of P1 and P2 across `p_m_values`.
///
/// The two configurations must agree on everything but the protocol; `p_m`
/// is overridden by the sweep.
pub fn data_usage(
    cfg_p1: &ModelConfig,
    cfg_p2: &ModelConfig,
    p_m_values: &[f64],
    engine: Engine,
    sim: &SimSettings,
) -> Result<Vec<DataUsageRow>, HarnessError> {
    check_same_except_protocol(cfg_p1, cfg_p2)?;
    if p_m_values.is_empty() {
        return Err(HarnessError::EmptyValues);
    }
    let per_point = p_m_values
        .par_iter()
        .map(|&p_m| -> Result<Vec<DataUsageRow>, HarnessError> {
            let configure = |cfg: &ModelConfig, protocol| {
                let mut c = cfg.clone().with_protocol(protocol);
                c.blockchain.p_m = p_m;
                c.validate().map_err(|source| HarnessError::SweepPoint {
                    param: Param::PM.path(),
                    value: p_m,
                    source,
                })
            };
            let c1 = configure(cfg_p1, Protocol::P1)?;
            let c2 = configure(cfg_p2, Protocol::P2)?;
            let sync_ratio = sync_dl_bits(&c2, Protocol::P2) / sync_dl_bits(&c1, Protocol::P1);
            let row = |engine, u1: DataUsage, u2: DataUsage, sync_dl_ratio| DataUsageRow {
                p_m,
                engine,
                p1_ul_bits: u1.ul_bits,
                p1_dl_bits: u1.dl_bits,
                p2_ul_bits: u2.ul_bits,
                p2_dl_bits: u2.dl_bits,
                dl_ratio: u2.dl_bits / u1.dl_bits,
                sync_dl_ratio,
            };
            let mut rows = Vec::new();
            if engine.analytic() {
                let a1 = Analysis::solve(&c1)?;
                let a2 = Analysis::solve(&c2)?;
                let u1 = expected_usage_per_execution(&a1.kernel, &a1.stationary, &c1);
                let u2 = expected_usage_per_execution(&a2.kernel, &a2.stationary, &c2);
                rows.push(row("analytic", u1, u2, sync_ratio));
            }
            if engine.simulate() {
                let t1 = sim.run(&c1);
                let t2 = sim.run(&c2);
                let s1 = trace_sync_data_usage(&t1).dl_bits;
                let s2 = trace_sync_data_usage(&t2).dl_bits;
                rows.push(row("simulate", trace_data_usage(&t1), trace_data_usage(&t2), s2 / s1));
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(per_point.into_iter().flatten().collect())
}

pub fn data_usage_csv(rows: &[DataUsageRow]) -> String {
    to_csv(rows)
}

// --------------------------------------------------------------- fractions

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FractionRow {
    pub t_s: f64,
    pub idle_frac: f64,
    pub sleep_frac: f64,
    pub exec_frac: f64,
    pub sim_idle_per_exec: f64,
    pub analytic_idle_per_exec: f64,
    pub analytic_idle_frac: f64,
    pub analytic_sleep_frac: f64,
    pub analytic_exec_frac: f64,
}

/// Occupancy of idle / sleeping / executing per sleep duration, simulated and
/// from renewal-reward on the stationary chain.
pub fn fractions(cfg: &ModelConfig, t_s_values: &[f64], sim: &SimSettings) -> Result<Vec<FractionRow>, HarnessError> {
    if t_s_values.is_empty() {
        return Err(HarnessError::EmptyValues);
    }
    t_s_values
        .par_iter()
        .map(|&t_s| -> Result<FractionRow, HarnessError> {
            let mut c = cfg.clone();
            c.device.t_s = t_s;
            let c = c.validate().map_err(|source| HarnessError::SweepPoint {
                param: Param::Ts.path(),
                value: t_s,
                source,
            })?;
            let a = Analysis::solve(&c)?;
            let idle = mean_idle_time(&a.stationary, &c);
            let sleep = c.device.p_s * t_s;
            let exec = expected_execution_time(&a.kernel, &a.stationary, &c);
            let cycle = idle + sleep + exec;
            let trace = sim.run(&c);
            let f = time_fractions(&trace);
            Ok(FractionRow {
                t_s,
                idle_frac: f.idle,
                sleep_frac: f.sleep,
                exec_frac: f.exec,
                sim_idle_per_exec: mean_idle_per_execution(&trace),
                analytic_idle_per_exec: idle,
                analytic_idle_frac: idle / cycle,
                analytic_sleep_frac: sleep / cycle,
                analytic_exec_frac: exec / cycle,
            })
        })
        .collect()
}

pub fn fractions_csv(rows: &[FractionRow]) -> String {
    to_csv(rows)
}
