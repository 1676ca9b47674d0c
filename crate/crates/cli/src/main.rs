//! `chainsync`: analytic and simulated studies of blockchain synchronization
//! for duty-cycled IoT devices, emitted as CSV.

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use chainsync_core::harness::{
    self, Engine, HarnessError, Metric, SimSettings, SweepSpec, DEFAULT_EXECUTIONS, DEFAULT_TOLERANCE,
};
use chainsync_core::sim::run_simulation;
use chainsync_core::{ConfigError, LinkPreset, ModelConfig, Param, Protocol, SimOptions, TimingMode};
use clap::{Parser, Subcommand};

const EXIT_CONFIG: u8 = 1;
const EXIT_TOLERANCE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "chainsync", version, about)]
struct Cli {
    /// Config file with `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Link preset applied before the config file (techA, techB).
    #[arg(long, global = true)]
    preset: Option<LinkPreset>,
    /// Extra `key=value` overrides applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Simulated protocol executions per run.
    #[arg(long, global = true, default_value_t = DEFAULT_EXECUTIONS)]
    executions: usize,
    #[arg(long, global = true, default_value_t = Engine::Both)]
    engine: Engine,
    #[arg(long, global = true, default_value_t = TimingMode::Expected)]
    timing: TimingMode,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Largest accepted kernel discrepancy for `validate`.
    #[arg(long, global = true, default_value_t = DEFAULT_TOLERANCE)]
    tolerance: f64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compare analytic and simulated transition probabilities.
    Validate,
    /// Sweep one parameter and report a metric.
    Sweep {
        /// Parameter path, e.g. device.t_s, link.p_e_dl, blockchain.l_b.
        #[arg(long)]
        param: String,
        /// Comma-separated values (unit suffixes allowed); defaults exist for
        /// t_s, p_e_dl, l_b and lambda_b.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[arg(long, default_value = "p_sync")]
        metric: Metric,
    },
    /// Per-execution data usage of P1 and P2 over event-match probabilities.
    DataUsage {
        #[arg(long = "p-m", value_delimiter = ',', default_values_t = vec![0.0, 0.25, 0.5, 0.75, 1.0])]
        p_m: Vec<f64>,
    },
    /// Fractions of time spent idle, sleeping and executing.
    Fractions {
        #[arg(long = "t-s", value_delimiter = ',', default_values_t = vec![10.0, 60.0, 600.0])]
        t_s: Vec<f64>,
    },
    /// Export the transition kernel (`n,m,prob`) or its stationary distribution (`n,pi`).
    Kernel {
        #[arg(long)]
        stationary: bool,
    },
    /// Export a simulated execution trace.
    Simulate,
}

enum Failure {
    Config(anyhow::Error),
    Tolerance(String),
    Other(anyhow::Error),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(_) | HarnessError::SweepPoint { .. } | HarnessError::MismatchedConfigs(_) => {
                Failure::Config(e.into())
            }
            other => Failure::Other(other.into()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.into())
    }
}

fn load_config(cli: &Cli) -> Result<ModelConfig, Failure> {
    let mut cfg = match cli.preset {
        Some(p) => ModelConfig::with_preset(p),
        None => ModelConfig::default(),
    };
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(Failure::Config)?;
        cfg = cfg.parse_document(&text)?;
    }
    for item in &cli.overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| Failure::Config(anyhow::anyhow!("--set expects KEY=VALUE, got `{item}`")))?;
        cfg.set(key.trim(), value.trim())?;
    }
    Ok(cfg.validate()?)
}

fn emit(cli: &Cli, csv: &str) -> Result<(), Failure> {
    let result = match &cli.out {
        Some(path) => fs::write(path, csv).with_context(|| format!("writing {}", path.display())),
        None => io::stdout().write_all(csv.as_bytes()).context("writing stdout"),
    };
    result.map_err(Failure::Other)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    let sim = SimSettings {
        seed: cli.seed,
        executions: cli.executions,
        options: SimOptions::with_timing(cli.timing),
    };
    match &cli.command {
        Command::Validate => {
            let report = harness::validate(&cfg, &sim, cli.tolerance)?;
            emit(cli, &report.to_csv())?;
            eprintln!(
                "P[0|0]: analytic {:.6}, empirical {:.6}",
                report.analytic_stay_synced, report.empirical_stay_synced
            );
            match report.max_discrepancy {
                Some(d) => eprintln!(
                    "max |empirical - analytic| over rows with >= {} visits: {d:.6} (tolerance {})",
                    harness::MIN_VISITS,
                    cli.tolerance
                ),
                None => eprintln!("no state was visited {} times", harness::MIN_VISITS),
            }
            if !report.passed() {
                return Err(Failure::Tolerance("kernel discrepancy above tolerance".into()));
            }
        }
        Command::Sweep { param, values, metric } => {
            let resolved: Param = param.parse()?;
            let values = if values.is_empty() {
                SweepSpec::default_values(resolved).unwrap_or_default()
            } else {
                values
                    .iter()
                    .map(|v| resolved.parse_value(v))
                    .collect::<Result<Vec<_>, _>>()?
            };
            let spec = SweepSpec::new(param, values, cfg, cli.engine).map_err(|e| match e {
                HarnessError::EmptyValues => Failure::Config(anyhow::anyhow!(
                    "empty value list (no default grid for {param})"
                )),
                other => other.into(),
            })?;
            let report = harness::sweep(&spec, *metric, &sim)?;
            emit(cli, &report.to_csv())?;
            if let Some(t) = report.analytic_trend() {
                eprintln!("{metric} (analytic) along {}: {t}", spec.param.path());
            }
            if let Some(t) = report.simulated_trend() {
                eprintln!("{metric} (simulated) along {}: {t}", spec.param.path());
            }
        }
        Command::DataUsage { p_m } => {
            let p1 = cfg.clone().with_protocol(Protocol::P1);
            let p2 = cfg.with_protocol(Protocol::P2);
            let rows = harness::data_usage(&p1, &p2, p_m, cli.engine, &sim)?;
            emit(cli, &harness::data_usage_csv(&rows))?;
        }
        Command::Fractions { t_s } => {
            let rows = harness::fractions(&cfg, t_s, &sim)?;
            emit(cli, &harness::fractions_csv(&rows))?;
        }
        Command::Kernel { stationary: want_pi } => {
            let analysis = harness::Analysis::solve(&cfg).map_err(|e| Failure::Other(e.into()))?;
            let csv = if *want_pi {
                eprintln!("stationarity residual {:.3e}", analysis.stationary.residual);
                analysis.stationary.to_csv()
            } else {
                analysis.kernel.to_csv()
            };
            emit(cli, &csv)?;
        }
        Command::Simulate => {
            let trace = run_simulation(&cfg, cli.seed, cli.executions, sim.options);
            emit(cli, &trace.to_csv())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Tolerance(msg)) => {
            eprintln!("FAIL: {msg}");
            ExitCode::from(EXIT_TOLERANCE)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}
