//! Discrete-event simulation of one device following the global chain.
//!
//! Blocks arrive as a Poisson process. After every protocol execution the
//! device sleeps for `t_s` with probability `p_s`; otherwise it starts a
//! catch-up immediately if blocks arrived during the execution, or idles
//! until the next block triggers a synchronized execution. Waking always
//! runs the wake-up exchange, even when nothing arrived during sleep.
//!
//! Randomness comes from independent ChaCha streams derived from one seed:
//! block arrivals, sleep decisions, per-block event matches, and (in
//! stochastic timing mode) link retransmissions.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::kernel::TransitionKernel;
use crate::link::{sample_transfer_time, DirectionalLink, PacketizationPolicy};
use crate::output::to_csv;
use crate::params::{ModelConfig, Protocol};
use crate::timing::{DataUsage, ExecutionScenario, Timing};

/// Default number of leading executions skipped by occupancy estimates.
pub const DEFAULT_WARMUP: usize = 100;

const STREAM_ARRIVALS: u64 = 0;
const STREAM_SLEEP: u64 = 1;
const STREAM_MATCH: u64 = 2;
const STREAM_LINK: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TimingMode {
    /// Every message takes its expected transfer time.
    #[default]
    Expected,
    /// Message times are sampled packet by packet with geometric retransmissions.
    Stochastic,
}

impl fmt::Display for TimingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TimingMode::Expected => "expected",
            TimingMode::Stochastic => "stochastic",
        })
    }
}

impl FromStr for TimingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "expected" => Ok(TimingMode::Expected),
            "stochastic" => Ok(TimingMode::Stochastic),
            other => Err(format!("unknown timing mode `{other}` (expected|stochastic)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum DeviceState {
    /// Awake and synchronized, waiting for the next block.
    Idle,
    Executing,
    Sleeping,
}

#[derive(Debug, Clone, Copy)]
pub struct SimOptions {
    pub timing: TimingMode,
    pub warmup: usize,
    pub packets: PacketizationPolicy,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            timing: TimingMode::Expected,
            warmup: DEFAULT_WARMUP,
            packets: PacketizationPolicy::default(),
        }
    }
}

impl SimOptions {
    pub fn with_timing(timing: TimingMode) -> Self {
        Self {
            timing,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExecutionRecord {
    pub k: usize,
    pub t_start: f64,
    pub t_end: f64,
    /// Delay the execution starts from: the previous `x_k` when awake (0 for
    /// a synchronized execution, whose triggering block is fetched on top),
    /// or the previous `x_k` plus the blocks accumulated during sleep.
    pub n_before: u64,
    /// Blocks that arrived during the execution.
    pub x_k: u64,
    pub was_waking: bool,
    pub matched: bool,
    /// Blocks accumulated during the preceding sleep (0 when awake).
    pub slept_blocks: u64,
    pub duration: f64,
    pub data: DataUsage,
    /// Local chain height after the execution.
    pub local_height: u64,
    /// Idle seconds between the previous execution and this one.
    pub idle_before: f64,
    /// Sleep seconds between the previous execution and this one.
    pub slept_before: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Sojourns {
    pub idle: f64,
    pub sleeping: f64,
    pub executing: f64,
}

impl Sojourns {
    pub fn total(&self) -> f64 {
        self.idle + self.sleeping + self.executing
    }

    pub fn get(&self, state: DeviceState) -> f64 {
        match state {
            DeviceState::Idle => self.idle,
            DeviceState::Sleeping => self.sleeping,
            DeviceState::Executing => self.executing,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub records: Vec<ExecutionRecord>,
    pub sojourns: Sojourns,
    pub seed: u64,
    pub config: ModelConfig,
    pub options_timing: TimingMode,
    pub warmup: usize,
}

impl SimTrace {
    /// End time of the last execution.
    pub fn final_clock(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.t_end)
    }

    /// `k,t_start,t_end,n_before,x_k,waking,matched,ul_bits,dl_bits`.
    pub fn to_csv(&self) -> String {
        #[derive(Serialize)]
        struct Row {
            k: usize,
            t_start: f64,
            t_end: f64,
            n_before: u64,
            x_k: u64,
            waking: bool,
            matched: bool,
            ul_bits: f64,
            dl_bits: f64,
        }
        let rows: Vec<Row> = self
            .records
            .iter()
            .map(|r| Row {
                k: r.k,
                t_start: r.t_start,
                t_end: r.t_end,
                n_before: r.n_before,
                x_k: r.x_k,
                waking: r.was_waking,
                matched: r.matched,
                ul_bits: r.data.ul_bits,
                dl_bits: r.data.dl_bits,
            })
            .collect();
        to_csv(&rows)
    }

    fn stationary_records(&self) -> &[ExecutionRecord] {
        let skip = self.warmup.min(self.records.len().saturating_sub(1));
        &self.records[skip..]
    }
}

/// Compensated running sum of exact timestamp differences, so that the three
/// sojourn totals add back up to the final clock.
#[derive(Debug, Clone, Copy, Default)]
struct ExactSum {
    sum: f64,
    comp: f64,
}

impl ExactSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    /// Adds `later - earlier` without rounding loss.
    fn add_span(&mut self, earlier: f64, later: f64) {
        let s = later - earlier;
        let bb = s - later;
        let err = (later - (s - bb)) + (-earlier - bb);
        self.add(s);
        self.add(err);
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Global chain: Poisson arrivals with a per-block event flag.
struct BlockProcess {
    arrivals: ChaCha8Rng,
    matches: ChaCha8Rng,
    gap: Exp<f64>,
    p_m: f64,
    next_time: f64,
    next_match: bool,
    height: u64,
}

impl BlockProcess {
    fn new(seed: u64, lambda: f64, p_m: f64) -> Self {
        let mut arrivals = ChaCha8Rng::seed_from_u64(seed);
        arrivals.set_stream(STREAM_ARRIVALS);
        let mut matches = ChaCha8Rng::seed_from_u64(seed);
        matches.set_stream(STREAM_MATCH);
        let gap = Exp::new(lambda).expect("lambda_b validated > 0");
        let mut this = Self {
            arrivals,
            matches,
            gap,
            p_m,
            next_time: 0.0,
            next_match: false,
            height: 0,
        };
        this.draw_next(0.0);
        this
    }

    fn draw_next(&mut self, after: f64) {
        self.next_time = after + self.gap.sample(&mut self.arrivals);
        self.next_match = self.matches.random_bool(self.p_m);
    }

    /// Consumes every arrival at or before `t`: (count, any matched).
    fn advance_to(&mut self, t: f64) -> (u64, bool) {
        let mut count = 0;
        let mut any = false;
        while self.next_time <= t {
            count += 1;
            any |= self.next_match;
            let at = self.next_time;
            self.draw_next(at);
        }
        self.height += count;
        (count, any)
    }
}

/// Message-level duration sampler for stochastic timing.
struct LinkSampler {
    ul: DirectionalLink,
    dl: DirectionalLink,
    packets: PacketizationPolicy,
    rng: ChaCha8Rng,
}

impl LinkSampler {
    fn new(cfg: &ModelConfig, packets: PacketizationPolicy, seed: u64) -> Self {
        let l = &cfg.link;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(STREAM_LINK);
        Self {
            ul: DirectionalLink::new(l.rate_ul_bps, l.p_e_ul).expect("validated link"),
            dl: DirectionalLink::new(l.rate_dl_bps, l.p_e_dl).expect("validated link"),
            packets,
            rng,
        }
    }

    fn up(&mut self, bits: f64) -> f64 {
        sample_transfer_time(bits, &self.ul, &self.packets, &mut self.rng)
    }

    fn down(&mut self, bits: f64) -> f64 {
        sample_transfer_time(bits, &self.dl, &self.packets, &mut self.rng)
    }

    /// Same message sequence the expected-time formulas bill.
    fn duration(&mut self, t: &Timing, s: &ExecutionScenario) -> f64 {
        let unit = t.unit_bits(s.protocol);
        let mut d = if s.is_synchronized() {
            self.down(t.l_r) + t.t_w + self.up(t.l_r) + self.down(unit)
        } else {
            let peers = t.n_peers as u32;
            let mut d = 0.0;
            for _ in 0..peers {
                d += self.up(t.l_n);
            }
            for _ in 0..peers {
                d += self.down(t.l_r);
            }
            d += self.up(t.l_n) + self.down(s.missing_blocks as f64 * unit);
            if s.waking {
                d += t.t_c;
            }
            d
        };
        if s.matched {
            d += self.down(t.l_i + t.l_poi);
        }
        d
    }
}

/// Runs `num_executions` protocol executions and records each one.
///
/// `cfg` is assumed validated. The device starts awake and synchronized at
/// time zero.
pub fn run_simulation(cfg: &ModelConfig, seed: u64, num_executions: usize, options: SimOptions) -> SimTrace {
    let timing = Timing::new(cfg);
    let protocol = cfg.device.protocol;
    let p_s = cfg.device.p_s;
    let t_s = cfg.device.t_s;

    let mut blocks = BlockProcess::new(seed, cfg.blockchain.lambda_b, cfg.blockchain.p_m);
    let mut sleep_rng = ChaCha8Rng::seed_from_u64(seed);
    sleep_rng.set_stream(STREAM_SLEEP);
    let mut link = match options.timing {
        TimingMode::Expected => None,
        TimingMode::Stochastic => Some(LinkSampler::new(cfg, options.packets, seed)),
    };

    let mut idle = ExactSum::default();
    let mut sleeping = ExactSum::default();
    let mut executing = ExactSum::default();
    let mut records = Vec::with_capacity(num_executions);
    let mut clock = 0.0;
    let mut prev_x = 0u64;

    for k in 0..num_executions {
        let goes_to_sleep = k > 0 && sleep_rng.random_bool(p_s);
        let (t_start, waking, n_before, slept_blocks, matched, idle_before, slept_before);
        if goes_to_sleep {
            let wake = clock + t_s;
            let (q, any) = blocks.advance_to(wake);
            sleeping.add_span(clock, wake);
            t_start = wake;
            waking = true;
            n_before = prev_x + q;
            slept_blocks = q;
            matched = any && protocol == Protocol::P2;
            idle_before = 0.0;
            slept_before = wake - clock;
        } else if prev_x > 0 {
            t_start = clock;
            waking = false;
            n_before = prev_x;
            slept_blocks = 0;
            matched = false;
            idle_before = 0.0;
            slept_before = 0.0;
        } else {
            let trigger = blocks.next_time;
            let (_, flag) = blocks.advance_to(trigger);
            idle.add_span(clock, trigger);
            t_start = trigger;
            waking = false;
            n_before = 0;
            slept_blocks = 0;
            matched = flag && protocol == Protocol::P2;
            idle_before = trigger - clock;
            slept_before = 0.0;
        }

        let target = blocks.height;
        let scenario = ExecutionScenario::new(protocol, n_before, waking, matched).expect("P2-only match");
        let duration = match link.as_mut() {
            None => timing.duration(&scenario),
            Some(sampler) => sampler.duration(&timing, &scenario),
        };
        let t_end = t_start + duration;
        let (x_k, _) = blocks.advance_to(t_end);
        executing.add_span(t_start, t_end);

        records.push(ExecutionRecord {
            k,
            t_start,
            t_end,
            n_before,
            x_k,
            was_waking: waking,
            matched,
            slept_blocks,
            duration,
            data: timing.data_usage(&scenario),
            local_height: target,
            idle_before,
            slept_before,
        });
        clock = t_end;
        prev_x = x_k;
    }

    SimTrace {
        records,
        sojourns: Sojourns {
            idle: idle.value(),
            sleeping: sleeping.value(),
            executing: executing.value(),
        },
        seed,
        config: cfg.clone(),
        options_timing: options.timing,
        warmup: options.warmup,
    }
}

/// Empirical transition estimate from a sequence of `x_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalKernel {
    /// `None` for states never visited.
    pub rows: Vec<Option<Vec<f64>>>,
    pub visits: Vec<u64>,
    pub n_max: usize,
}

impl EmpiricalKernel {
    /// Consecutive pairs of `xs`, states above `n_max` saturated.
    pub fn from_sequence(xs: &[u64], n_max: usize) -> Self {
        let clamp = |x: u64| (x as usize).min(n_max);
        let mut counts = vec![vec![0u64; n_max + 1]; n_max + 1];
        for pair in xs.windows(2) {
            counts[clamp(pair[0])][clamp(pair[1])] += 1;
        }
        let visits: Vec<u64> = counts.iter().map(|r| r.iter().sum()).collect();
        let rows = counts
            .into_iter()
            .zip(&visits)
            .map(|(row, &v)| (v > 0).then(|| row.into_iter().map(|c| c as f64 / v as f64).collect()))
            .collect();
        Self { rows, visits, n_max }
    }

    pub fn get(&self, n: usize, m: usize) -> Option<f64> {
        self.rows[n].as_ref().map(|r| r[m])
    }

    /// Largest `|empirical - analytic|` over rows visited at least `min_visits` times.
    pub fn max_discrepancy(&self, analytic: &TransitionKernel, min_visits: u64) -> Option<f64> {
        self.rows
            .iter()
            .enumerate()
            .filter(|(n, _)| self.visits[*n] >= min_visits)
            .filter_map(|(n, row)| row.as_ref().map(|r| (n, r)))
            .flat_map(|(n, r)| r.iter().enumerate().map(move |(m, &p)| (p - analytic.get(n, m)).abs()))
            .reduce(f64::max)
    }
}

pub fn empirical_kernel(trace: &SimTrace, n_max: usize) -> EmpiricalKernel {
    let xs: Vec<u64> = trace.records.iter().map(|r| r.x_k).collect();
    EmpiricalKernel::from_sequence(&xs, n_max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeFractions {
    pub idle: f64,
    pub sleep: f64,
    pub exec: f64,
}

/// Share of the simulated timeline spent in each device state.
pub fn time_fractions(trace: &SimTrace) -> TimeFractions {
    let s = &trace.sojourns;
    let total = s.total();
    TimeFractions {
        idle: s.idle / total,
        sleep: s.sleeping / total,
        exec: s.executing / total,
    }
}

/// Mean uplink and downlink bits per execution.
pub fn trace_data_usage(trace: &SimTrace) -> DataUsage {
    mean_usage(trace.records.iter())
}

/// Mean usage over the synchronized executions only.
pub fn trace_sync_data_usage(trace: &SimTrace) -> DataUsage {
    mean_usage(trace.records.iter().filter(|r| !r.was_waking && r.n_before == 0))
}

fn mean_usage<'a>(records: impl Iterator<Item = &'a ExecutionRecord>) -> DataUsage {
    let (n, total) = records.fold((0usize, DataUsage::default()), |(n, acc), r| (n + 1, acc + r.data));
    let n = n.max(1) as f64;
    DataUsage {
        ul_bits: total.ul_bits / n,
        dl_bits: total.dl_bits / n,
    }
}

/// Mean idle seconds per execution, skipping the warm-up prefix.
pub fn mean_idle_per_execution(trace: &SimTrace) -> f64 {
    let recs = trace.stationary_records();
    // idle time preceding execution k+1 follows execution k
    let idle: f64 = recs.iter().skip(1).map(|r| r.idle_before).sum();
    idle / (recs.len().saturating_sub(1).max(1)) as f64
}

/// Empirical `P[X_{k+1} = 0 | X_k = 0]` with its binomial standard error and
/// the number of visits to state 0.
pub fn stay_synced_estimate(trace: &SimTrace) -> (f64, f64, u64) {
    let mut visits = 0u64;
    let mut stays = 0u64;
    for pair in trace.records.windows(2) {
        if pair[0].x_k == 0 {
            visits += 1;
            stays += u64::from(pair[1].x_k == 0);
        }
    }
    let p = stays as f64 / visits.max(1) as f64;
    let se = (p * (1.0 - p) / visits.max(1) as f64).sqrt();
    (p, se, visits)
}
