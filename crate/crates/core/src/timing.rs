//! Execution durations and per-execution data accounting for P1 and P2.
//!
//! Durations use expected goodputs. In the synchronized case only one
//! notification is billed on the air plus the collection window `t_w`, while
//! the byte accounting counts every peer's notification.

use serde::Serialize;

use crate::link::transfer_time;
use crate::params::{ModelConfig, Protocol};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecutionScenario {
    pub protocol: Protocol,
    /// Blocks missing when the execution starts (kernel state, plus any
    /// blocks accumulated during sleep). Zero for a synchronized execution.
    pub missing_blocks: u64,
    /// Execution follows a wake-up and pays the connection setup.
    pub waking: bool,
    /// An event of interest is delivered (P2 only).
    pub matched: bool,
}

impl ExecutionScenario {
    /// Returns `None` when `matched` is requested for P1.
    pub fn new(protocol: Protocol, missing_blocks: u64, waking: bool, matched: bool) -> Option<Self> {
        if matched && protocol == Protocol::P1 {
            return None;
        }
        Some(Self {
            protocol,
            missing_blocks,
            waking,
            matched,
        })
    }

    /// Awake device reacting to a single fresh block.
    pub fn is_synchronized(&self) -> bool {
        !self.waking && self.missing_blocks == 0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct DataUsage {
    pub ul_bits: f64,
    pub dl_bits: f64,
}

impl std::ops::Add for DataUsage {
    type Output = DataUsage;

    fn add(self, rhs: Self) -> Self {
        DataUsage {
            ul_bits: self.ul_bits + rhs.ul_bits,
            dl_bits: self.dl_bits + rhs.dl_bits,
        }
    }
}

/// Precomputed goodputs and lengths for one configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub g_ul: f64,
    pub g_dl: f64,
    pub l_b: f64,
    pub l_h: f64,
    pub l_n: f64,
    pub l_r: f64,
    pub l_i: f64,
    pub l_poi: f64,
    pub t_c: f64,
    pub t_w: f64,
    pub n_peers: f64,
}

impl Timing {
    /// `cfg` is assumed validated.
    pub fn new(cfg: &ModelConfig) -> Self {
        let b = &cfg.blockchain;
        let l = &cfg.link;
        Self {
            g_ul: l.rate_ul_bps * (1.0 - l.p_e_ul),
            g_dl: l.rate_dl_bps * (1.0 - l.p_e_dl),
            l_b: b.l_b,
            l_h: b.l_h,
            l_n: b.l_n,
            l_r: b.l_r,
            l_i: b.l_i,
            l_poi: b.l_poi,
            t_c: l.t_c,
            t_w: l.t_w,
            n_peers: f64::from(l.n_peers),
        }
    }

    /// Length of the per-block payload fetched by the protocol.
    pub fn unit_bits(&self, protocol: Protocol) -> f64 {
        match protocol {
            Protocol::P1 => self.l_b,
            Protocol::P2 => self.l_h,
        }
    }

    fn info_time(&self) -> f64 {
        transfer_time(self.l_i + self.l_poi, self.g_dl)
    }

    /// Synchronized execution with the given per-block payload.
    fn sync_base(&self, unit_bits: f64) -> f64 {
        transfer_time(self.l_r, self.g_dl)
            + self.t_w
            + transfer_time(self.l_r, self.g_ul)
            + transfer_time(unit_bits, self.g_dl)
    }

    /// Catch-up of `n` blocks while awake, with the given per-block payload.
    fn catchup_base(&self, n: u64, unit_bits: f64) -> f64 {
        transfer_time(self.n_peers * self.l_n, self.g_ul)
            + transfer_time(self.n_peers * self.l_r, self.g_dl)
            + transfer_time(self.l_n, self.g_ul)
            + transfer_time(n as f64 * unit_bits, self.g_dl)
    }

    /// P1 execution when awake and synchronized.
    pub fn p1_sync(&self) -> f64 {
        self.sync_base(self.l_b)
    }

    /// P1 catch-up of `n` blocks; `waking` adds the connection setup.
    pub fn p1_catchup(&self, n: u64, waking: bool) -> f64 {
        self.catchup_base(n, self.l_b) + if waking { self.t_c } else { 0.0 }
    }

    /// P2 execution when awake and synchronized.
    pub fn p2_sync(&self, matched: bool) -> f64 {
        self.sync_base(self.l_h) + if matched { self.info_time() } else { 0.0 }
    }

    /// P2 catch-up of `n` headers, optionally after waking and with event data.
    pub fn p2_catchup(&self, n: u64, waking: bool, any_match: bool) -> f64 {
        self.catchup_base(n, self.l_h)
            + if waking { self.t_c } else { 0.0 }
            + if any_match { self.info_time() } else { 0.0 }
    }

    pub fn duration(&self, s: &ExecutionScenario) -> f64 {
        match (s.protocol, s.is_synchronized()) {
            (Protocol::P1, true) => self.p1_sync(),
            (Protocol::P1, false) => self.p1_catchup(s.missing_blocks, s.waking),
            (Protocol::P2, true) => self.p2_sync(s.matched),
            (Protocol::P2, false) => self.p2_catchup(s.missing_blocks, s.waking, s.matched),
        }
    }

    /// Bits sent and received over the whole message sequence.
    pub fn data_usage(&self, s: &ExecutionScenario) -> DataUsage {
        let unit = self.unit_bits(s.protocol);
        let info = if s.matched { self.l_i + self.l_poi } else { 0.0 };
        if s.is_synchronized() {
            DataUsage {
                ul_bits: self.l_r,
                dl_bits: self.n_peers * self.l_r + unit + info,
            }
        } else {
            DataUsage {
                ul_bits: self.n_peers * self.l_n + self.l_n,
                dl_bits: self.n_peers * self.l_r + s.missing_blocks as f64 * unit + info,
            }
        }
    }
}

pub fn p1_sync_duration(cfg: &ModelConfig) -> f64 {
    Timing::new(cfg).p1_sync()
}

pub fn p1_catchup_duration(n: u64, cfg: &ModelConfig, waking: bool) -> f64 {
    Timing::new(cfg).p1_catchup(n, waking)
}

pub fn p2_sync_duration(cfg: &ModelConfig, matched: bool) -> f64 {
    Timing::new(cfg).p2_sync(matched)
}

pub fn p2_catchup_duration(n: u64, cfg: &ModelConfig, waking: bool, any_match: bool) -> f64 {
    Timing::new(cfg).p2_catchup(n, waking, any_match)
}

pub fn execution_data_usage(scenario: &ExecutionScenario, cfg: &ModelConfig) -> DataUsage {
    Timing::new(cfg).data_usage(scenario)
}
