//! Traffic analysis of blockchain synchronization for duty-cycled IoT devices.
//!
//! A device keeps a local copy of a chain whose blocks arrive as a Poisson
//! process. It either downloads full blocks (P1) or headers plus matched event
//! data (P2), and may sleep after each synchronization. This crate provides:
//!
//! - [`params`]: configuration, validation, reference presets and the config file format;
//! - [`link`]: stop-and-wait goodput and transfer-time sampling;
//! - [`timing`]: per-execution durations and data accounting;
//! - [`kernel`]: the transition kernel of the delay chain and its stationary metrics;
//! - [`sim`]: a discrete-event simulator producing comparable traces;
//! - [`harness`]: the experiment drivers used by the CLI.

pub mod harness;
pub mod kernel;
pub mod link;
mod output;
pub mod params;
pub mod sim;
pub mod timing;

pub use kernel::{StationaryDistribution, TransitionKernel};
pub use params::{
    BlockchainParams, ConfigError, DeviceParams, LinkParams, LinkPreset, ModelConfig, Param, Protocol,
};
pub use sim::{SimOptions, SimTrace, TimingMode};
pub use timing::{DataUsage, ExecutionScenario, Timing};
