//! Model parameters and validated configuration.
//!
//! All quantities are normalized to bits, seconds and bits/second. The config
//! file format is a flat `key = value` document; values may carry a unit
//! suffix appropriate to the key (`kbit`, `Mbps`, `ms`, ...).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default state-space cap of the transition kernel.
pub const DEFAULT_N_MAX: usize = 64;
/// Default bound on the probability mass discarded when truncating series.
pub const DEFAULT_EPS_TRUNC: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("degenerate link: zero goodput ({field} = {value})")]
    DegenerateLink { field: &'static str, value: f64 },
    #[error("l_h ≤ l_b violated (l_h = {l_h} bit, l_b = {l_b} bit)")]
    HeaderExceedsBlock { l_h: f64, l_b: f64 },
    #[error("unknown link preset `{0}` (expected techA or techB)")]
    UnknownPreset(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("{key}: cannot parse `{text}`: {message}")]
    BadValue {
        key: String,
        text: String,
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Protocol {
    /// Full node: downloads complete blocks.
    P1,
    /// Light node: downloads headers plus matched event data with a proof of inclusion.
    P2,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Protocol::P1 => f.write_str("P1"),
            Protocol::P2 => f.write_str("P2"),
        }
    }
}

impl FromStr for Protocol {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "P1" | "p1" => Ok(Protocol::P1),
            "P2" | "p2" => Ok(Protocol::P2),
            other => Err(ConfigError::BadValue {
                key: "protocol".into(),
                text: other.into(),
                message: "expected P1 or P2".into(),
            }),
        }
    }
}

/// Block process and message lengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockchainParams {
    /// Block generation rate, 1/s.
    pub lambda_b: f64,
    /// Full block length, bits.
    pub l_b: f64,
    /// Header length, bits.
    pub l_h: f64,
    /// Request length, bits.
    pub l_n: f64,
    /// Response / notification length, bits.
    pub l_r: f64,
    /// Event information length, bits.
    pub l_i: f64,
    /// Proof-of-inclusion length, bits.
    pub l_poi: f64,
    /// Per-block probability that an event of interest is observed.
    pub p_m: f64,
}

impl Default for BlockchainParams {
    /// Ethereum-derived reference values (block every 12 s, 40 kbit blocks).
    fn default() -> Self {
        Self {
            lambda_b: 1.0 / 12.0,
            l_b: 40_000.0,
            l_h: 800.0,
            l_n: 800.0,
            l_r: 800.0,
            l_i: 1_000.0,
            l_poi: 1_536.0,
            p_m: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    /// Nominal uplink bit-rate, bits/s.
    pub rate_ul_bps: f64,
    /// Nominal downlink bit-rate, bits/s.
    pub rate_dl_bps: f64,
    /// Uplink packet-error probability.
    pub p_e_ul: f64,
    /// Downlink packet-error probability.
    pub p_e_dl: f64,
    /// Connection establishment time after waking, s.
    pub t_c: f64,
    /// Notification collection window, s.
    pub t_w: f64,
    /// Number of blockchain-network peers the device is connected to.
    pub n_peers: u32,
}

impl Default for LinkParams {
    fn default() -> Self {
        LinkPreset::TechA.params()
    }
}

/// Reference wireless technologies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinkPreset {
    /// 1 Mbps symmetric, 100 ms connection setup.
    TechA,
    /// 100 kbps up, 150 kbps down, 1 s connection setup.
    TechB,
}

impl LinkPreset {
    pub fn params(self) -> LinkParams {
        let (rate_ul_bps, rate_dl_bps, t_c) = match self {
            LinkPreset::TechA => (1e6, 1e6, 0.1),
            LinkPreset::TechB => (1e5, 1.5e5, 1.0),
        };
        LinkParams {
            rate_ul_bps,
            rate_dl_bps,
            p_e_ul: 0.0,
            p_e_dl: 0.0,
            t_c,
            t_w: 0.5,
            n_peers: 6,
        }
    }
}

impl FromStr for LinkPreset {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "techa" | "a" => Ok(LinkPreset::TechA),
            "techb" | "b" => Ok(LinkPreset::TechB),
            _ => Err(ConfigError::UnknownPreset(s.to_string())),
        }
    }
}

/// Looks up a named link preset (`techA`, `techB`).
pub fn table_presets(name: &str) -> Result<LinkParams, ConfigError> {
    name.parse::<LinkPreset>().map(LinkPreset::params)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    /// Probability of going to sleep after a protocol execution.
    pub p_s: f64,
    /// Sleep duration, s.
    pub t_s: f64,
    pub protocol: Protocol,
}

impl Default for DeviceParams {
    fn default() -> Self {
        Self {
            p_s: 0.2,
            t_s: 60.0,
            protocol: Protocol::P1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub blockchain: BlockchainParams,
    pub link: LinkParams,
    pub device: DeviceParams,
    /// Largest delay state represented in the kernel.
    pub n_max: usize,
    /// Tail mass allowed to be dropped when truncating infinite sums.
    pub eps_trunc: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            blockchain: BlockchainParams::default(),
            link: LinkParams::default(),
            device: DeviceParams::default(),
            n_max: DEFAULT_N_MAX,
            eps_trunc: DEFAULT_EPS_TRUNC,
        }
    }
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

fn check_positive(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be finite and > 0, got {v}")))
    }
}

fn check_nonneg(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be finite and ≥ 0, got {v}")))
    }
}

fn check_prob(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(field, format!("must lie in [0, 1], got {v}")))
    }
}

fn check_error_prob(field: &'static str, v: f64) -> Result<(), ConfigError> {
    check_prob(field, v)?;
    if v == 1.0 {
        return Err(ConfigError::DegenerateLink { field, value: v });
    }
    Ok(())
}

impl ModelConfig {
    /// Builds the default configuration with the given link preset.
    pub fn with_preset(preset: LinkPreset) -> Self {
        Self {
            link: preset.params(),
            ..Self::default()
        }
    }

    /// Returns a copy with the protocol replaced.
    pub fn with_protocol(mut self, protocol: Protocol) -> Self {
        self.device.protocol = protocol;
        self
    }

    /// Checks every invariant, reporting the first violation.
    pub fn validate(self) -> Result<Self, ConfigError> {
        let b = &self.blockchain;
        check_positive("lambda_b", b.lambda_b)?;
        check_positive("l_b", b.l_b)?;
        check_positive("l_h", b.l_h)?;
        check_positive("l_n", b.l_n)?;
        check_positive("l_r", b.l_r)?;
        check_positive("l_i", b.l_i)?;
        check_positive("l_poi", b.l_poi)?;
        if b.l_h > b.l_b {
            return Err(ConfigError::HeaderExceedsBlock {
                l_h: b.l_h,
                l_b: b.l_b,
            });
        }
        check_prob("p_m", b.p_m)?;

        let l = &self.link;
        check_positive("rate_ul_bps", l.rate_ul_bps)?;
        check_positive("rate_dl_bps", l.rate_dl_bps)?;
        check_error_prob("p_e_ul", l.p_e_ul)?;
        check_error_prob("p_e_dl", l.p_e_dl)?;
        check_nonneg("t_c", l.t_c)?;
        check_nonneg("t_w", l.t_w)?;
        if l.n_peers == 0 {
            return Err(invalid("n_peers", "must be ≥ 1"));
        }

        check_prob("p_s", self.device.p_s)?;
        check_nonneg("t_s", self.device.t_s)?;

        if self.n_max == 0 {
            return Err(invalid("n_max", "must be ≥ 1"));
        }
        if !(self.eps_trunc > 0.0 && self.eps_trunc < 1e-3) {
            return Err(invalid(
                "eps_trunc",
                format!("must lie in (0, 1e-3), got {}", self.eps_trunc),
            ));
        }
        Ok(self)
    }

    /// Applies a single `key = value` assignment. Keys are field names,
    /// optionally prefixed with their section (`link.p_e_dl`).
    pub fn set(&mut self, key: &str, text: &str) -> Result<(), ConfigError> {
        let bare = key.rsplit('.').next().unwrap_or(key).trim();
        if bare == "protocol" {
            self.device.protocol = text.parse()?;
            return Ok(());
        }
        let param: Param = key.parse()?;
        let value = param.parse_value(text)?;
        param.set(self, value)
    }

    /// Parses a config document on top of `self`, then validates.
    pub fn parse_document(mut self, text: &str) -> Result<Self, ConfigError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: idx + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            self.set(key.trim(), value.trim())?;
        }
        self.validate()
    }

    /// Renders the config in the `key = value` file format (SI units).
    pub fn to_document(&self) -> String {
        let mut out = String::new();
        for p in Param::ALL {
            if p == Param::Ps {
                out.push_str(&format!("protocol = {}\n", self.device.protocol));
            }
            out.push_str(&format!("{} = {}\n", p.name(), p.get(self)));
        }
        out
    }
}

/// Validates a candidate configuration; values are returned unchanged.
pub fn validate_config(raw: ModelConfig) -> Result<ModelConfig, ConfigError> {
    raw.validate()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Unit {
    Length,
    Rate,
    Time,
    Plain,
    Count,
}

/// A numeric model parameter addressable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Param {
    LambdaB,
    LB,
    LH,
    LN,
    LR,
    LI,
    LPoi,
    PM,
    RateUl,
    RateDl,
    PeUl,
    PeDl,
    Tc,
    Tw,
    NPeers,
    Ps,
    Ts,
    NMax,
    EpsTrunc,
}

impl Param {
    pub const ALL: [Param; 19] = [
        Param::LambdaB,
        Param::LB,
        Param::LH,
        Param::LN,
        Param::LR,
        Param::LI,
        Param::LPoi,
        Param::PM,
        Param::RateUl,
        Param::RateDl,
        Param::PeUl,
        Param::PeDl,
        Param::Tc,
        Param::Tw,
        Param::NPeers,
        Param::Ps,
        Param::Ts,
        Param::NMax,
        Param::EpsTrunc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Param::LambdaB => "lambda_b",
            Param::LB => "l_b",
            Param::LH => "l_h",
            Param::LN => "l_n",
            Param::LR => "l_r",
            Param::LI => "l_i",
            Param::LPoi => "l_poi",
            Param::PM => "p_m",
            Param::RateUl => "rate_ul_bps",
            Param::RateDl => "rate_dl_bps",
            Param::PeUl => "p_e_ul",
            Param::PeDl => "p_e_dl",
            Param::Tc => "t_c",
            Param::Tw => "t_w",
            Param::NPeers => "n_peers",
            Param::Ps => "p_s",
            Param::Ts => "t_s",
            Param::NMax => "n_max",
            Param::EpsTrunc => "eps_trunc",
        }
    }

    pub fn section(self) -> &'static str {
        match self {
            Param::LambdaB
            | Param::LB
            | Param::LH
            | Param::LN
            | Param::LR
            | Param::LI
            | Param::LPoi
            | Param::PM => "blockchain",
            Param::RateUl
            | Param::RateDl
            | Param::PeUl
            | Param::PeDl
            | Param::Tc
            | Param::Tw
            | Param::NPeers => "link",
            Param::Ps | Param::Ts => "device",
            Param::NMax | Param::EpsTrunc => "model",
        }
    }

    /// Dotted path, e.g. `link.p_e_dl`.
    pub fn path(self) -> String {
        format!("{}.{}", self.section(), self.name())
    }

    fn unit(self) -> Unit {
        match self {
            Param::LB | Param::LH | Param::LN | Param::LR | Param::LI | Param::LPoi => Unit::Length,
            Param::RateUl | Param::RateDl => Unit::Rate,
            Param::Tc | Param::Tw | Param::Ts => Unit::Time,
            Param::NPeers | Param::NMax => Unit::Count,
            Param::LambdaB | Param::PM | Param::PeUl | Param::PeDl | Param::Ps | Param::EpsTrunc => {
                Unit::Plain
            }
        }
    }

    pub fn get(self, cfg: &ModelConfig) -> f64 {
        let b = &cfg.blockchain;
        let l = &cfg.link;
        match self {
            Param::LambdaB => b.lambda_b,
            Param::LB => b.l_b,
            Param::LH => b.l_h,
            Param::LN => b.l_n,
            Param::LR => b.l_r,
            Param::LI => b.l_i,
            Param::LPoi => b.l_poi,
            Param::PM => b.p_m,
            Param::RateUl => l.rate_ul_bps,
            Param::RateDl => l.rate_dl_bps,
            Param::PeUl => l.p_e_ul,
            Param::PeDl => l.p_e_dl,
            Param::Tc => l.t_c,
            Param::Tw => l.t_w,
            Param::NPeers => l.n_peers as f64,
            Param::Ps => cfg.device.p_s,
            Param::Ts => cfg.device.t_s,
            Param::NMax => cfg.n_max as f64,
            Param::EpsTrunc => cfg.eps_trunc,
        }
    }

    /// Stores `value` (SI units). Integer parameters reject fractional values.
    pub fn set(self, cfg: &mut ModelConfig, value: f64) -> Result<(), ConfigError> {
        let as_count = |v: f64| -> Result<u64, ConfigError> {
            if v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as u64)
            } else {
                Err(invalid(self.name(), format!("expected a non-negative integer, got {v}")))
            }
        };
        let b = &mut cfg.blockchain;
        let l = &mut cfg.link;
        match self {
            Param::LambdaB => b.lambda_b = value,
            Param::LB => b.l_b = value,
            Param::LH => b.l_h = value,
            Param::LN => b.l_n = value,
            Param::LR => b.l_r = value,
            Param::LI => b.l_i = value,
            Param::LPoi => b.l_poi = value,
            Param::PM => b.p_m = value,
            Param::RateUl => l.rate_ul_bps = value,
            Param::RateDl => l.rate_dl_bps = value,
            Param::PeUl => l.p_e_ul = value,
            Param::PeDl => l.p_e_dl = value,
            Param::Tc => l.t_c = value,
            Param::Tw => l.t_w = value,
            Param::NPeers => l.n_peers = as_count(value)? as u32,
            Param::Ps => cfg.device.p_s = value,
            Param::Ts => cfg.device.t_s = value,
            Param::NMax => cfg.n_max = as_count(value)? as usize,
            Param::EpsTrunc => cfg.eps_trunc = value,
        }
        Ok(())
    }

    /// Parses a value for this parameter, honoring unit suffixes.
    pub fn parse_value(self, text: &str) -> Result<f64, ConfigError> {
        let bad = |message: &str| ConfigError::BadValue {
            key: self.name().into(),
            text: text.into(),
            message: message.into(),
        };
        let t = text.trim();
        let split = t
            .find(|c: char| c.is_ascii_alphabetic() && c != 'e' && c != 'E')
            .unwrap_or(t.len());
        let (num, suffix) = t.split_at(split);
        let number = parse_number(num.trim()).ok_or_else(|| bad("not a number"))?;
        let scale = match (self.unit(), suffix.trim()) {
            (_, "") => 1.0,
            (Unit::Length, "bit" | "bits") => 1.0,
            (Unit::Length, "kbit") => 1e3,
            (Unit::Length, "Mbit") => 1e6,
            (Unit::Rate, "bps") => 1.0,
            (Unit::Rate, "kbps") => 1e3,
            (Unit::Rate, "Mbps") => 1e6,
            (Unit::Time, "s") => 1.0,
            (Unit::Time, "ms") => 1e-3,
            _ => return Err(bad("unit suffix not allowed for this key")),
        };
        Ok(number * scale)
    }
}

/// Decimal, scientific, or `a/b` fraction.
fn parse_number(s: &str) -> Option<f64> {
    if let Some((a, b)) = s.split_once('/') {
        let a: f64 = a.trim().parse().ok()?;
        let b: f64 = b.trim().parse().ok()?;
        return Some(a / b);
    }
    s.parse().ok()
}

impl FromStr for Param {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (section, name) = match s.split_once('.') {
            Some((sec, name)) => (Some(sec), name),
            None => (None, s),
        };
        Param::ALL
            .into_iter()
            .find(|p| p.name() == name && section.is_none_or(|sec| sec == p.section()))
            .ok_or_else(|| ConfigError::UnknownParam(s.to_string()))
    }
}
