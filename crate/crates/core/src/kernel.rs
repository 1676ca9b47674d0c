//! Transition kernel of the delay chain `X_k` (blocks missing at the end of
//! the k-th protocol execution), its stationary distribution and derived
//! metrics.
//!
//! Row `n` mixes an awake branch (weight `1 - p_s`) and a sleep branch
//! (weight `p_s`). Execution durations are deterministic, so the number of
//! blocks arriving during an execution of length `t` is Poisson with mean
//! `lambda_b * t`. The sleep branch additionally averages over the `q` blocks
//! accumulated while sleeping, `q ~ Poisson(lambda_b * t_s)`; that series is
//! cut once its tail drops below `eps_trunc` and the row is renormalized.
//!
//! Arrivals beyond `n_max` are folded into state `n_max`.

use rayon::prelude::*;
use serde::Serialize;
use statrs::function::factorial::ln_factorial;
use thiserror::Error;

use crate::output::to_csv;
use crate::params::{ModelConfig, Protocol};
use crate::timing::{DataUsage, ExecutionScenario, Timing};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("stationary solve failed: state {state} cannot reach lower states (reducible chain)")]
    Reducible { state: usize },
    #[error("kernel is not square: {rows} rows, row {row} has {len} entries")]
    NotSquare { rows: usize, row: usize, len: usize },
}

/// `e^{-mean} mean^m / m!`, evaluated in log-space.
pub fn poisson_pmf(m: u64, mean: f64) -> f64 {
    if mean == 0.0 {
        return if m == 0 { 1.0 } else { 0.0 };
    }
    (m as f64 * mean.ln() - mean - ln_factorial(m)).exp()
}

/// Adds `weight * Poisson(mean)` over states `0..=n_max` into `row`, folding
/// the tail `P[M >= n_max]` into the last entry.
fn add_poisson(row: &mut [f64], mean: f64, weight: f64) {
    let last = row.len() - 1;
    let mut head = 0.0;
    for (m, slot) in row[..last].iter_mut().enumerate() {
        let p = poisson_pmf(m as u64, mean);
        head += p;
        *slot += weight * p;
    }
    row[last] += weight * (1.0 - head).max(0.0);
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct TransitionKernel {
    matrix: Vec<Vec<f64>>,
    n_max: usize,
    truncation_mass: f64,
    protocol: Protocol,
}

impl TransitionKernel {
    /// Wraps an explicit matrix (rows are used as given).
    pub fn from_rows(rows: Vec<Vec<f64>>, protocol: Protocol) -> Result<Self, KernelError> {
        let size = rows.len();
        if let Some((row, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != size) {
            return Err(KernelError::NotSquare {
                rows: size,
                row,
                len: r.len(),
            });
        }
        Ok(Self {
            matrix: rows,
            n_max: size.saturating_sub(1),
            truncation_mass: 0.0,
            protocol,
        })
    }

    pub fn get(&self, n: usize, m: usize) -> f64 {
        self.matrix[n][m]
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.matrix[n]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.matrix
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn num_states(&self) -> usize {
        self.matrix.len()
    }

    /// Largest per-row probability mass dropped before renormalization.
    pub fn truncation_mass(&self) -> f64 {
        self.truncation_mass
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol
    }

    /// Rows as `n,m,prob` CSV.
    pub fn to_csv(&self) -> String {
        #[derive(Serialize)]
        struct Entry {
            n: usize,
            m: usize,
            prob: f64,
        }
        let entries: Vec<Entry> = self
            .matrix
            .iter()
            .enumerate()
            .flat_map(|(n, row)| row.iter().enumerate().map(move |(m, &prob)| Entry { n, m, prob }))
            .collect();
        to_csv(&entries)
    }
}

/// Row construction for one configuration.
#[derive(Debug, Clone)]
struct RowBuilder {
    timing: Timing,
    protocol: Protocol,
    lambda: f64,
    p_m: f64,
    sleep_mean: f64,
    eps: f64,
    n_max: usize,
}

impl RowBuilder {
    fn new(cfg: &ModelConfig, protocol: Protocol, n_max: usize) -> Self {
        Self {
            timing: Timing::new(cfg),
            protocol,
            lambda: cfg.blockchain.lambda_b,
            p_m: cfg.blockchain.p_m,
            sleep_mean: cfg.blockchain.lambda_b * cfg.device.t_s,
            eps: cfg.eps_trunc,
            n_max,
        }
    }

    fn awake(&self, n: usize) -> Vec<f64> {
        let t = &self.timing;
        let mut row = vec![0.0; self.n_max + 1];
        match (self.protocol, n) {
            (Protocol::P1, 0) => add_poisson(&mut row, self.lambda * t.p1_sync(), 1.0),
            (Protocol::P1, n) => add_poisson(&mut row, self.lambda * t.p1_catchup(n as u64, false), 1.0),
            (Protocol::P2, 0) => {
                if self.p_m > 0.0 {
                    add_poisson(&mut row, self.lambda * t.p2_sync(true), self.p_m);
                }
                if self.p_m < 1.0 {
                    add_poisson(&mut row, self.lambda * t.p2_sync(false), 1.0 - self.p_m);
                }
            }
            (Protocol::P2, n) => {
                add_poisson(&mut row, self.lambda * t.p2_catchup(n as u64, false, false), 1.0)
            }
        }
        row
    }

    /// Sleep branch before renormalization, and the q-series mass dropped.
    fn sleep(&self, n: usize) -> (Vec<f64>, f64) {
        let t = &self.timing;
        let mut row = vec![0.0; self.n_max + 1];
        // The series stops on the tail bound; the cap only guards against a
        // tail that rounding keeps from reaching eps.
        let cap = (self.sleep_mean + 40.0 * self.sleep_mean.sqrt() + 200.0) as u64;
        let mut covered = 0.0;
        let mut q = 0u64;
        loop {
            let w = poisson_pmf(q, self.sleep_mean);
            covered += w;
            let k = n as u64 + q;
            match self.protocol {
                Protocol::P1 => add_poisson(&mut row, self.lambda * t.p1_catchup(k, true), w),
                Protocol::P2 => {
                    let none = (1.0 - self.p_m).powi(q.min(i32::MAX as u64) as i32);
                    if none < 1.0 {
                        add_poisson(&mut row, self.lambda * t.p2_catchup(k, true, true), w * (1.0 - none));
                    }
                    if none > 0.0 {
                        add_poisson(&mut row, self.lambda * t.p2_catchup(k, true, false), w * none);
                    }
                }
            }
            let tail = (1.0 - covered).max(0.0);
            if tail <= self.eps || q >= cap {
                return (row, tail);
            }
            q += 1;
        }
    }

    fn build(&self, p_s: f64) -> TransitionKernel {
        let rows: Vec<(Vec<f64>, f64)> = (0..=self.n_max)
            .into_par_iter()
            .map(|n| {
                let mut row = vec![0.0; self.n_max + 1];
                if p_s < 1.0 {
                    for (slot, p) in row.iter_mut().zip(self.awake(n)) {
                        *slot += (1.0 - p_s) * p;
                    }
                }
                if p_s > 0.0 {
                    let (sleep, _) = self.sleep(n);
                    for (slot, p) in row.iter_mut().zip(sleep) {
                        *slot += p_s * p;
                    }
                }
                let sum: f64 = row.iter().sum();
                let deficit = (1.0 - sum).max(0.0);
                row.iter_mut().for_each(|p| *p /= sum);
                (row, deficit)
            })
            .collect();
        let truncation_mass = rows.iter().map(|(_, d)| *d).fold(0.0, f64::max);
        TransitionKernel {
            matrix: rows.into_iter().map(|(r, _)| r).collect(),
            n_max: self.n_max,
            truncation_mass,
            protocol: self.protocol,
        }
    }
}

/// Awake-branch row of P1: Poisson over the execution that starts at delay `n`.
pub fn awake_kernel_row_p1(n: usize, cfg: &ModelConfig, n_max: usize) -> Vec<f64> {
    RowBuilder::new(cfg, Protocol::P1, n_max).awake(n)
}

/// Sleep-branch row of P1 (before renormalization).
pub fn sleep_kernel_row_p1(n: usize, cfg: &ModelConfig, n_max: usize) -> Vec<f64> {
    RowBuilder::new(cfg, Protocol::P1, n_max).sleep(n).0
}

/// Awake-branch row of P2, mixing matched and unmatched synchronized executions.
pub fn awake_kernel_row_p2(n: usize, cfg: &ModelConfig, n_max: usize) -> Vec<f64> {
    RowBuilder::new(cfg, Protocol::P2, n_max).awake(n)
}

/// Sleep-branch row of P2 (before renormalization).
pub fn sleep_kernel_row_p2(n: usize, cfg: &ModelConfig, n_max: usize) -> Vec<f64> {
    RowBuilder::new(cfg, Protocol::P2, n_max).sleep(n).0
}

pub fn kernel_p1(cfg: &ModelConfig, n_max: usize) -> TransitionKernel {
    RowBuilder::new(cfg, Protocol::P1, n_max).build(cfg.device.p_s)
}

pub fn kernel_p2(cfg: &ModelConfig, n_max: usize) -> TransitionKernel {
    RowBuilder::new(cfg, Protocol::P2, n_max).build(cfg.device.p_s)
}

/// Kernel for the configured protocol and state cap.
pub fn build_kernel(cfg: &ModelConfig) -> TransitionKernel {
    match cfg.device.protocol {
        Protocol::P1 => kernel_p1(cfg, cfg.n_max),
        Protocol::P2 => kernel_p2(cfg, cfg.n_max),
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct StationaryDistribution {
    pub pi: Vec<f64>,
    /// `max_j |(pi P)_j - pi_j|`.
    pub residual: f64,
}

impl StationaryDistribution {
    pub fn pi0(&self) -> f64 {
        self.pi[0]
    }

    /// `n,pi` CSV.
    pub fn to_csv(&self) -> String {
        #[derive(Serialize)]
        struct Entry {
            n: usize,
            pi: f64,
        }
        let entries: Vec<Entry> = self
            .pi
            .iter()
            .enumerate()
            .map(|(n, &pi)| Entry { n, pi })
            .collect();
        to_csv(&entries)
    }
}

/// Solves `pi P = pi`, `sum(pi) = 1` by Grassmann-Taksar-Heyman state
/// reduction: Gaussian elimination on `P^T - I` that never subtracts, so the
/// result is nonnegative to machine precision.
pub fn stationary(kernel: &TransitionKernel) -> Result<StationaryDistribution, KernelError> {
    let size = kernel.num_states();
    let mut a: Vec<Vec<f64>> = kernel.rows().to_vec();
    for k in (1..size).rev() {
        let s: f64 = a[k][..k].iter().sum();
        // also rejects NaN
        if s.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(KernelError::Reducible { state: k });
        }
        for row in a.iter_mut().take(k) {
            row[k] /= s;
        }
        let (upper, lower) = a.split_at_mut(k);
        let pivot = &lower[0];
        for row in upper.iter_mut() {
            let f = row[k];
            if f != 0.0 {
                for (x, &y) in row[..k].iter_mut().zip(&pivot[..k]) {
                    *x += f * y;
                }
            }
        }
    }
    let mut pi = vec![0.0; size];
    pi[0] = 1.0;
    for k in 1..size {
        pi[k] = (0..k).map(|i| pi[i] * a[i][k]).sum();
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);
    let residual = stationarity_residual(kernel, &pi);
    Ok(StationaryDistribution { pi, residual })
}

/// `max_j |(pi P)_j - pi_j|`.
pub fn stationarity_residual(kernel: &TransitionKernel, pi: &[f64]) -> f64 {
    let size = kernel.num_states();
    (0..size)
        .map(|j| {
            let flow: f64 = (0..size).map(|i| pi[i] * kernel.get(i, j)).sum();
            (flow - pi[j]).abs()
        })
        .fold(0.0, f64::max)
}

/// `P[X_{k+1} = 0 | X_k = 0]`.
pub fn prob_stay_synced(kernel: &TransitionKernel) -> f64 {
    kernel.get(0, 0)
}

/// Mean idle seconds per execution, `pi_0 (1 - p_s) / lambda_b`.
pub fn mean_idle_time(pi: &StationaryDistribution, cfg: &ModelConfig) -> f64 {
    pi.pi0() * (1.0 - cfg.device.p_s) / cfg.blockchain.lambda_b
}

/// Expected uplink/downlink bits of the execution following a stationary state.
///
/// Sleep accumulates `q ~ Poisson(lambda_b t_s)` blocks; the usage is linear in
/// `q` and the match probability `1 - (1 - p_M)^q` averages to
/// `1 - exp(-lambda_b t_s p_M)`, so the q-average is taken in closed form.
pub fn expected_usage_per_execution(
    kernel: &TransitionKernel,
    pi: &StationaryDistribution,
    cfg: &ModelConfig,
) -> DataUsage {
    let t = Timing::new(cfg);
    let protocol = kernel.protocol();
    let p_s = cfg.device.p_s;
    let p_m = cfg.blockchain.p_m;
    let sleep_mean = cfg.blockchain.lambda_b * cfg.device.t_s;
    let info = t.l_i + t.l_poi;
    let unit = t.unit_bits(protocol);
    let scenario = |n: u64, waking| ExecutionScenario::new(protocol, n, waking, false).expect("unmatched");

    let mut ul = 0.0;
    let mut dl = 0.0;
    for (n, &weight) in pi.pi.iter().enumerate() {
        if weight == 0.0 {
            continue;
        }
        let awake = t.data_usage(&scenario(n as u64, false));
        let mut awake_dl = awake.dl_bits;
        if protocol == Protocol::P2 && n == 0 {
            awake_dl += p_m * info;
        }
        // wake-up with n missing, then q more on average
        let sleep = t.data_usage(&scenario(n as u64, true));
        let mut sleep_dl = sleep.dl_bits + sleep_mean * unit;
        if protocol == Protocol::P2 {
            sleep_dl += (1.0 - (-sleep_mean * p_m).exp()) * info;
        }
        ul += weight * ((1.0 - p_s) * awake.ul_bits + p_s * sleep.ul_bits);
        dl += weight * ((1.0 - p_s) * awake_dl + p_s * sleep_dl);
    }
    DataUsage { ul_bits: ul, dl_bits: dl }
}

pub fn expected_dl_per_execution(
    kernel: &TransitionKernel,
    pi: &StationaryDistribution,
    cfg: &ModelConfig,
) -> f64 {
    expected_usage_per_execution(kernel, pi, cfg).dl_bits
}

/// Expected duration of the execution following a stationary state, seconds.
///
/// Durations are affine in the number of blocks fetched, so the average over
/// the sleep-accumulated `q` uses `E[q] = lambda_b t_s` directly.
pub fn expected_execution_time(
    kernel: &TransitionKernel,
    pi: &StationaryDistribution,
    cfg: &ModelConfig,
) -> f64 {
    let t = Timing::new(cfg);
    let protocol = kernel.protocol();
    let p_s = cfg.device.p_s;
    let p_m = cfg.blockchain.p_m;
    let sleep_mean = cfg.blockchain.lambda_b * cfg.device.t_s;
    let per_block = t.unit_bits(protocol) / t.g_dl;
    let info = (t.l_i + t.l_poi) / t.g_dl;

    pi.pi
        .iter()
        .enumerate()
        .map(|(n, &weight)| {
            let awake = match (protocol, n) {
                (Protocol::P1, 0) => t.p1_sync(),
                (Protocol::P1, n) => t.p1_catchup(n as u64, false),
                (Protocol::P2, 0) => p_m * t.p2_sync(true) + (1.0 - p_m) * t.p2_sync(false),
                (Protocol::P2, n) => t.p2_catchup(n as u64, false, false),
            };
            let mut sleep = match protocol {
                Protocol::P1 => t.p1_catchup(n as u64, true),
                Protocol::P2 => t.p2_catchup(n as u64, true, false),
            } + sleep_mean * per_block;
            if protocol == Protocol::P2 {
                sleep += (1.0 - (-sleep_mean * p_m).exp()) * info;
            }
            weight * ((1.0 - p_s) * awake + p_s * sleep)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::LinkPreset;
    use crate::timing::p1_catchup_duration;

    fn cfg(preset: LinkPreset) -> ModelConfig {
        ModelConfig::with_preset(preset)
    }

    #[test]
    fn pmf_examples() {
        assert_eq!(poisson_pmf(0, 0.0), 1.0);
        assert_eq!(poisson_pmf(3, 0.0), 0.0);
        assert!((poisson_pmf(0, 0.0451333) - 0.955870).abs() < 1e-5);
        let expected = (-5.0f64).exp() * 12.5;
        assert!((poisson_pmf(2, 5.0) - expected).abs() < 1e-15);
        assert!((poisson_pmf(2, 5.0) - 0.084224).abs() < 1e-6);
    }

    #[test]
    fn pmf_survives_large_arguments() {
        // e^{-mean} underflows for mean > ~745, the log-space form does not
        let p = poisson_pmf(1000, 1000.0);
        assert!((p - 0.012614611348721).abs() < 1e-12, "{p}");
        let total: f64 = (0..3000).map(|m| poisson_pmf(m, 1000.0)).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn awake_row_examples() {
        let c = cfg(LinkPreset::TechA);
        let r0 = awake_kernel_row_p1(0, &c, 64);
        assert!((r0[0] - (-0.5416f64 / 12.0).exp()).abs() < 1e-12);
        assert!((r0[0] - 0.95587).abs() < 1e-5);
        let r1 = awake_kernel_row_p1(1, &c, 64);
        assert!((r1[0] - (-0.0504f64 / 12.0).exp()).abs() < 1e-12);
        assert!((r1[0] - 0.99581).abs() < 1e-5);
        assert!((r0.iter().sum::<f64>() - 1.0).abs() < 1e-14);

        let mut slow = c.clone();
        slow.blockchain.lambda_b = 1e-15;
        let r = awake_kernel_row_p1(5, &slow, 64);
        assert!((r[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn saturation_folds_overflow_into_last_state() {
        let mut c = cfg(LinkPreset::TechB);
        c.blockchain.lambda_b = 10.0;
        let row = awake_kernel_row_p1(3, &c, 4);
        let mean = 10.0 * p1_catchup_duration(3, &c, false);
        let head: f64 = (0..4).map(|m| poisson_pmf(m, mean)).sum();
        assert!((row[4] - (1.0 - head)).abs() < 1e-14);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn sleep_row_without_sleep_is_waking_awake_row() {
        let mut c = cfg(LinkPreset::TechB);
        c.device.t_s = 0.0;
        for n in [0usize, 1, 5] {
            let row = sleep_kernel_row_p1(n, &c, 16);
            let mean = c.blockchain.lambda_b * p1_catchup_duration(n as u64, &c, true);
            for (m, &p) in row.iter().take(16).enumerate() {
                assert!((p - poisson_pmf(m as u64, mean)).abs() < 1e-15);
            }
        }
    }

    /// Σ_q Poisson(q; a) e^{-λ(c + b q)} = e^{-λ c} exp(a (e^{-λ b} - 1)).
    #[test]
    fn sleep_row_zero_entry_matches_closed_form() {
        for preset in [LinkPreset::TechA, LinkPreset::TechB] {
            for t_s in [0.0, 10.0, 60.0, 600.0, 1800.0] {
                let mut c = cfg(preset);
                c.device.t_s = t_s;
                let lambda = c.blockchain.lambda_b;
                let a = lambda * t_s;
                let b = c.blockchain.l_b / c.link.rate_dl_bps;
                for n in [0u64, 1, 7] {
                    let base = p1_catchup_duration(n, &c, true);
                    let closed = (-lambda * base).exp() * (a * ((-lambda * b).exp() - 1.0)).exp();
                    let row = sleep_kernel_row_p1(n as usize, &c, 64);
                    assert!((row[0] - closed).abs() < 1e-12, "t_s={t_s} n={n}: {} vs {closed}", row[0]);
                }
            }
        }
        let c = cfg(LinkPreset::TechA);
        let row = sleep_kernel_row_p1(0, &c, 64);
        let expected = (-0.0092f64).exp() * (5.0 * ((-0.04f64 / 12.0).exp() - 1.0)).exp();
        assert!((row[0] - expected).abs() < 1e-12);
        assert!((row[0] - 0.97449).abs() < 1e-5);
        assert!(row.iter().sum::<f64>() >= 1.0 - 1e-12);
    }

    #[test]
    fn kernel_p1_examples() {
        let c = cfg(LinkPreset::TechA);
        let k = kernel_p1(&c, 64);
        let expected = 0.8 * (-0.5416f64 / 12.0).exp()
            + 0.2 * (-0.1104f64 / 12.0).exp() * (5.0 * ((-0.04f64 / 12.0).exp() - 1.0)).exp();
        assert!((prob_stay_synced(&k) - expected).abs() < 1e-12);
        assert!((prob_stay_synced(&k) - 0.9596).abs() < 1e-4);
        assert!(k.truncation_mass() <= c.eps_trunc);
        for row in k.rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn no_sleep_kernel_is_awake_kernel() {
        let mut c = cfg(LinkPreset::TechB);
        c.device.p_s = 0.0;
        let k = kernel_p1(&c, 20);
        for n in 0..=20 {
            let awake = awake_kernel_row_p1(n, &c, 20);
            let sum: f64 = awake.iter().sum();
            for (m, p) in awake.iter().enumerate() {
                assert!((k.get(n, m) - p / sum).abs() < 1e-15);
            }
        }
        assert_eq!(k.truncation_mass(), 0.0);
    }

    #[test]
    fn kernel_p2_example() {
        let mut c = cfg(LinkPreset::TechA);
        c.device.p_s = 0.0;
        c.blockchain.p_m = 0.5;
        let k = kernel_p2(&c, 64);
        let expected = 0.5 * (-0.504936f64 / 12.0).exp() + 0.5 * (-0.5024f64 / 12.0).exp();
        assert!((prob_stay_synced(&k) - expected).abs() < 1e-12);
        assert!((prob_stay_synced(&k) - 0.95889).abs() < 1e-5);
    }

    #[test]
    fn p2_without_matches_is_p1_on_headers() {
        let mut c = cfg(LinkPreset::TechB);
        c.blockchain.p_m = 0.0;
        let k2 = kernel_p2(&c, 32);
        let mut headers = c.clone();
        headers.blockchain.l_b = headers.blockchain.l_h;
        let k1 = kernel_p1(&headers, 32);
        for n in 0..=32 {
            for m in 0..=32 {
                assert!((k2.get(n, m) - k1.get(n, m)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stationary_two_state() {
        let k = TransitionKernel::from_rows(vec![vec![0.9, 0.1], vec![0.5, 0.5]], Protocol::P1).unwrap();
        let s = stationary(&k).unwrap();
        assert!((s.pi[0] - 5.0 / 6.0).abs() < 1e-15);
        assert!((s.pi[1] - 1.0 / 6.0).abs() < 1e-15);
        assert!(s.residual < 1e-15);
    }

    #[test]
    fn stationary_absorbing_at_zero() {
        let rows = (0..5)
            .map(|_| {
                let mut r = vec![0.0; 5];
                r[0] = 1.0;
                r
            })
            .collect();
        let k = TransitionKernel::from_rows(rows, Protocol::P1).unwrap();
        let s = stationary(&k).unwrap();
        assert_eq!(s.pi, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn stationary_rejects_reducible_chain() {
        let k = TransitionKernel::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]], Protocol::P1).unwrap();
        assert_eq!(stationary(&k), Err(KernelError::Reducible { state: 1 }));
        assert!(matches!(
            TransitionKernel::from_rows(vec![vec![1.0, 0.0], vec![1.0]], Protocol::P1),
            Err(KernelError::NotSquare { .. })
        ));
    }

    /// Power iteration as an independent route to the same fixed point.
    #[test]
    fn stationary_matches_power_iteration() {
        for preset in [LinkPreset::TechA, LinkPreset::TechB] {
            let k = kernel_p1(&cfg(preset), 64);
            let s = stationary(&k).unwrap();
            let mut v = vec![1.0 / 65.0; 65];
            for _ in 0..5000 {
                let next: Vec<f64> = (0..65).map(|j| (0..65).map(|i| v[i] * k.get(i, j)).sum()).collect();
                v = next;
            }
            for (j, (a, b)) in v.iter().zip(&s.pi).enumerate() {
                assert!((a - b).abs() < 1e-12, "state {j}");
            }
            assert!(s.residual <= 1e-10);
            assert!((s.pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(s.pi.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn idle_time_examples() {
        let mut c = cfg(LinkPreset::TechA);
        let pi = |p0: f64| StationaryDistribution {
            pi: vec![p0, 1.0 - p0],
            residual: 0.0,
        };
        c.device.p_s = 0.0;
        assert!((mean_idle_time(&pi(1.0), &c) - 12.0).abs() < 1e-12);
        c.device.p_s = 1.0;
        assert_eq!(mean_idle_time(&pi(1.0), &c), 0.0);
        c.device.p_s = 0.2;
        assert!((mean_idle_time(&pi(0.9), &c) - 8.64).abs() < 1e-12);
    }

    #[test]
    fn expected_downlink_in_fast_link_limit() {
        let mut c = cfg(LinkPreset::TechA);
        c.device.p_s = 0.0;
        c.blockchain.p_m = 0.0;
        let unit = StationaryDistribution {
            pi: vec![1.0, 0.0, 0.0],
            residual: 0.0,
        };
        let k1 = kernel_p1(&c, 2);
        let k2 = kernel_p2(&c, 2);
        let d1 = expected_dl_per_execution(&k1, &unit, &c);
        let d2 = expected_dl_per_execution(&k2, &unit, &c);
        assert_eq!(d1, 44_800.0);
        assert_eq!(d2, 5_600.0);
        assert_eq!(d1 / d2, 8.0);
    }

    #[test]
    fn expected_downlink_non_decreasing_in_p_m() {
        let mut last = 0.0;
        for p_m in [0.0, 0.1, 0.3, 0.6, 1.0] {
            let mut c = cfg(LinkPreset::TechB).with_protocol(Protocol::P2);
            c.blockchain.p_m = p_m;
            let k = build_kernel(&c);
            let s = stationary(&k).unwrap();
            let dl = expected_dl_per_execution(&k, &s, &c);
            assert!(dl >= last, "p_m={p_m}");
            last = dl;
        }
    }

    #[test]
    fn stay_synced_monotone_in_sleep_duration() {
        let mut prev = f64::INFINITY;
        for t_s in [0.0, 60.0, 600.0, 1800.0] {
            let mut c = cfg(LinkPreset::TechB);
            c.device.t_s = t_s;
            let p = prob_stay_synced(&kernel_p1(&c, 64));
            assert!(p <= prev, "t_s={t_s}");
            prev = p;
        }
        let mut c = cfg(LinkPreset::TechA);
        c.device.p_s = 0.0;
        c.blockchain.lambda_b = 1e-15;
        assert!((prob_stay_synced(&kernel_p1(&c, 8)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn expected_execution_time_without_sleep() {
        let mut c = cfg(LinkPreset::TechA);
        c.device.p_s = 0.0;
        let unit = StationaryDistribution {
            pi: vec![0.5, 0.5, 0.0],
            residual: 0.0,
        };
        let k = kernel_p1(&c, 2);
        let expected = 0.5 * 0.5416 + 0.5 * 0.0504;
        assert!((expected_execution_time(&k, &unit, &c) - expected).abs() < 1e-12);

        c.device.p_s = 1.0;
        c.device.t_s = 24.0;
        // two blocks expected during sleep at 0.04 s each
        let expected = 0.5 * (0.1104 + 0.08) + 0.5 * (0.1504 + 0.08);
        assert!((expected_execution_time(&k, &unit, &c) - expected).abs() < 1e-12);
    }

    #[test]
    fn csv_headers() {
        let k = TransitionKernel::from_rows(vec![vec![0.9, 0.1], vec![0.5, 0.5]], Protocol::P1).unwrap();
        let text = k.to_csv();
        assert!(text.starts_with("n,m,prob\n0,0,0.9\n"));
        assert_eq!(text.lines().count(), 5);
        let s = stationary(&k).unwrap();
        assert!(s.to_csv().starts_with("n,pi\n0,"));
    }
}
