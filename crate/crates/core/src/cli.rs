//! The `sira` command line: argument and config-file parsing, dispatch to the
//! engines and experiments, and CSV/JSON serialization.
//!
//! Settings are resolved as flags over config file over built-in defaults.
//! Every artifact echoes the resolved settings and seed, and a JSON report's
//! `config` block can be fed back through `--config` to reproduce it.

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::Error;
use crate::experiments::{
    closed_form_vs_quadrature, deviation_sweep, linspace, threshold_sweep,
    validate_product_distribution, DeviationSpec, OpponentPool, MIN_DISTRIBUTION_SAMPLES,
    MIN_OPPONENTS, MIN_SWEEP_AGENTS,
};
use crate::mechanism::{
    run_repeated_sira, run_reserve_threshold, run_sira, AuctionConfig, AuctionReport, PairingMode,
};
use crate::value_model::{validate_p_eps, AgentValuation, ValueFamily};

pub const TOOL: &str = "sira";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
/// Directory for outputs when `--out` is not given.
pub const OUT_DIR_ENV: &str = "SIRA_OUT_DIR";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Clap(#[from] clap::Error),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Clap(e) if !e.use_stderr() => 0,
            Self::Clap(_) | Self::Usage(_) => 2,
            Self::Run(Error::Domain { .. } | Error::Config(_)) => 2,
            Self::Run(_) => 3,
            Self::Io { .. } => 4,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn io_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "sira",
    version,
    about = "Simulate safety-incentivized regulatory auctions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Single-shot SIRA over a sampled population
    Auction(AuctionArgs),
    /// Reserve thresholding over a sampled population
    Reserve(PopulationArgs),
    /// Repeated SIRA with fixed bids
    Repeat(RepeatArgs),
    /// Utility of one agent scaling its equilibrium bid
    Deviation(DeviationArgs),
    /// Participation and bids of both mechanisms over a price grid
    Sweep(SweepArgs),
    /// Monte Carlo check of the premium-value PDF and CDF
    ValidateDist(ValidateArgs),
    /// Closed-form bids against quadrature bids
    Crosscheck(CrosscheckArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// JSON settings file (or an emitted JSON report); flags take precedence
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed; drawn from entropy and echoed when omitted
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Output file, or '-' for stdout
    #[arg(long, value_name = "PATH")]
    out: Option<String>,
    /// Worker threads (results do not depend on this)
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct PopulationArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Total-value family: uniform or beta22
    #[arg(long)]
    family: Option<ValueFamily>,
    /// Threshold price in (0, 1)
    #[arg(long = "p-eps", value_name = "P", allow_hyphen_values = true)]
    p_eps: Option<String>,
    /// Number of agents
    #[arg(long)]
    n: Option<usize>,
    /// Exponent of the cost map M(s) = s^gamma
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<f64>,
}

#[derive(Debug, Args)]
struct AuctionArgs {
    #[command(flatten)]
    population: PopulationArgs,
    #[arg(long, value_enum)]
    pairing: Option<Pairing>,
}

#[derive(Debug, Args)]
struct RepeatArgs {
    #[command(flatten)]
    population: PopulationArgs,
    #[arg(long, value_enum)]
    pairing: Option<Pairing>,
    #[arg(long)]
    rounds: Option<u32>,
}

#[derive(Debug, Args)]
struct DeviationArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    family: Option<ValueFamily>,
    #[arg(long = "p-eps", value_name = "P", allow_hyphen_values = true)]
    p_eps: Option<String>,
    /// Bid deviations: comma list or a:b:n grid, each in [-1, 1]
    #[arg(long, allow_hyphen_values = true)]
    deltas: Option<String>,
    /// Probe agent's premium value
    #[arg(long = "probe-vp", allow_hyphen_values = true)]
    probe_vp: Option<f64>,
    /// Probe agent's deployment value
    #[arg(long = "probe-vd", allow_hyphen_values = true)]
    probe_vd: Option<f64>,
    /// Number of opponents
    #[arg(long)]
    opponents: Option<usize>,
    #[arg(long = "opponent-pool", value_enum)]
    opponent_pool: Option<Pool>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    family: Option<ValueFamily>,
    /// Price grid: a:b:n, comma list or single value
    #[arg(long = "p-eps", value_name = "GRID", allow_hyphen_values = true)]
    p_eps: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<f64>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    family: Option<ValueFamily>,
    #[arg(long = "p-eps", value_name = "P", allow_hyphen_values = true)]
    p_eps: Option<String>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    bins: Option<usize>,
}

#[derive(Debug, Args)]
struct CrosscheckArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    family: Option<ValueFamily>,
    #[arg(long = "p-eps", value_name = "GRID", allow_hyphen_values = true)]
    p_eps: Option<String>,
    /// Points of the premium-value grid on [0, 1/2]
    #[arg(long = "vp-points")]
    vp_points: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    fn extension(self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Json => "json",
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Pairing {
    Independent,
    Matching,
}

impl From<Pairing> for PairingMode {
    fn from(p: Pairing) -> Self {
        match p {
            Pairing::Independent => Self::IndependentOpponent,
            Pairing::Matching => Self::PerfectMatching,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Pool {
    Truncated,
    Accepted,
}

impl From<Pool> for OpponentPool {
    fn from(p: Pool) -> Self {
        match p {
            Pool::Truncated => Self::Truncated,
            Pool::Accepted => Self::Accepted,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Auction,
    Reserve,
    Repeat,
    Deviation,
    Sweep,
    ValidateDist,
    Crosscheck,
}

impl fmt::Display for CommandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Auction => "auction",
            Self::Reserve => "reserve",
            Self::Repeat => "repeat",
            Self::Deviation => "deviation",
            Self::Sweep => "sweep",
            Self::ValidateDist => "validate-dist",
            Self::Crosscheck => "crosscheck",
        })
    }
}

impl CommandKind {
    fn takes_grid(self) -> bool {
        matches!(self, Self::Sweep | Self::Crosscheck)
    }
}

/// A list of values, written as a number, a JSON array or an `a:b:n` /
/// comma-separated string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    One(f64),
    Many(Vec<f64>),
    Text(String),
}

impl Grid {
    fn values(&self, field: &str) -> Result<Vec<f64>, CliError> {
        match self {
            Self::One(x) => Ok(vec![*x]),
            Self::Many(v) => Ok(v.clone()),
            Self::Text(s) => parse_grid(s, field),
        }
    }
}

/// Parses `a:b:n` (n evenly spaced points), `a,b,c` or a single number.
pub fn parse_grid(text: &str, field: &str) -> Result<Vec<f64>, CliError> {
    let number = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| usage(format!("{field}: '{s}' is not a number")))
    };
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        [a, b, n] => {
            let n: usize = n
                .trim()
                .parse()
                .map_err(|_| usage(format!("{field}: '{n}' is not a point count")))?;
            if n == 0 {
                return Err(usage(format!("{field}: grid needs at least one point")));
            }
            Ok(linspace(number(a)?, number(b)?, n))
        }
        [_] => text.split(',').map(number).collect(),
        _ => Err(usage(format!(
            "{field}: expected a:b:n, a comma list or a number"
        ))),
    }
}

/// Settings as they appear in a config file or a report's `config` block.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<ValueFamily>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_eps: Option<Grid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_agents: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairing_mode: Option<PairingMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deltas: Option<Grid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_vp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_vd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_opponents: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub opponent_pool: Option<OpponentPool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vp_points: Option<usize>,
}

impl RunConfig {
    /// Fields set in `top` win over fields set in `self`.
    fn overlay(self, top: RunConfig) -> RunConfig {
        RunConfig {
            seed: top.seed.or(self.seed),
            family: top.family.or(self.family),
            p_eps: top.p_eps.or(self.p_eps),
            n_agents: top.n_agents.or(self.n_agents),
            gamma: top.gamma.or(self.gamma),
            pairing_mode: top.pairing_mode.or(self.pairing_mode),
            rounds: top.rounds.or(self.rounds),
            deltas: top.deltas.or(self.deltas),
            probe_vp: top.probe_vp.or(self.probe_vp),
            probe_vd: top.probe_vd.or(self.probe_vd),
            n_opponents: top.n_opponents.or(self.n_opponents),
            opponent_pool: top.opponent_pool.or(self.opponent_pool),
            n_samples: top.n_samples.or(self.n_samples),
            bins: top.bins.or(self.bins),
            vp_points: top.vp_points.or(self.vp_points),
        }
    }

    /// Reads a settings file, or the `config` block of an emitted report.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        let mut value: Value =
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        if let Value::Object(map) = &mut value {
            if map.contains_key("tool") {
                value = map.remove("config").ok_or_else(|| {
                    usage(format!("{}: report has no config block", path.display()))
                })?;
            }
        }
        serde_json::from_value(value).map_err(|e| usage(format!("{}: {e}", path.display())))
    }
}

/// Fully resolved and validated run settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub seed: u64,
    pub family: ValueFamily,
    pub p_eps: Vec<f64>,
    pub n_agents: usize,
    pub gamma: f64,
    pub pairing_mode: PairingMode,
    pub rounds: u32,
    pub deltas: Vec<f64>,
    pub probe_vp: f64,
    pub probe_vd: f64,
    pub n_opponents: usize,
    pub opponent_pool: OpponentPool,
    pub n_samples: usize,
    pub bins: usize,
    pub vp_points: usize,
}

impl Settings {
    /// The settings that affect `command`, in config-file form.
    pub fn echo(&self, command: CommandKind) -> RunConfig {
        let p_eps = Some(if command.takes_grid() {
            Grid::Many(self.p_eps.clone())
        } else {
            Grid::One(self.p_eps[0])
        });
        let base = RunConfig {
            seed: Some(self.seed),
            family: Some(self.family),
            p_eps,
            ..RunConfig::default()
        };
        match command {
            CommandKind::Auction | CommandKind::Repeat | CommandKind::Reserve => RunConfig {
                n_agents: Some(self.n_agents),
                gamma: Some(self.gamma),
                pairing_mode: (command != CommandKind::Reserve).then_some(self.pairing_mode),
                rounds: (command == CommandKind::Repeat).then_some(self.rounds),
                ..base
            },
            CommandKind::Deviation => RunConfig {
                deltas: Some(Grid::Many(self.deltas.clone())),
                probe_vp: Some(self.probe_vp),
                probe_vd: Some(self.probe_vd),
                n_opponents: Some(self.n_opponents),
                opponent_pool: Some(self.opponent_pool),
                ..base
            },
            CommandKind::Sweep => RunConfig {
                n_agents: Some(self.n_agents),
                gamma: Some(self.gamma),
                ..base
            },
            CommandKind::ValidateDist => RunConfig {
                n_samples: Some(self.n_samples),
                bins: Some(self.bins),
                ..base
            },
            CommandKind::Crosscheck => RunConfig {
                vp_points: Some(self.vp_points),
                ..base
            },
        }
    }

    fn auction_config(&self) -> AuctionConfig {
        AuctionConfig {
            gamma: self.gamma,
            pairing_mode: self.pairing_mode,
            rounds: self.rounds,
            ..AuctionConfig::new(self.n_agents, self.p_eps[0], self.family, self.seed)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub command: CommandKind,
    pub settings: Settings,
    pub format: Format,
    pub out: Option<String>,
    pub threads: Option<usize>,
}

impl RunSpec {
    pub fn echo(&self) -> RunConfig {
        self.settings.echo(self.command)
    }

    /// Where [`execute`] writes; `None` means stdout.
    pub fn output_path(&self) -> Option<PathBuf> {
        match self.out.as_deref() {
            Some("-") => None,
            Some(path) => Some(PathBuf::from(path)),
            None => {
                let dir = std::env::var_os(OUT_DIR_ENV)
                    .map(PathBuf::from)
                    .unwrap_or_else(|| PathBuf::from("."));
                Some(dir.join(format!(
                    "{}-seed{}.{}",
                    self.command,
                    self.settings.seed,
                    self.format.extension()
                )))
            }
        }
    }
}

fn flags_of_population(a: &PopulationArgs) -> Result<RunConfig, CliError> {
    Ok(RunConfig {
        seed: a.common.seed,
        family: a.family,
        p_eps: a.p_eps.clone().map(Grid::Text),
        n_agents: a.n,
        gamma: a.gamma,
        ..RunConfig::default()
    })
}

fn defaults(command: CommandKind) -> Settings {
    let single = vec![0.5];
    Settings {
        seed: 0,
        family: ValueFamily::Uniform01,
        p_eps: match command {
            CommandKind::Sweep => linspace(0.1, 0.9, 17),
            CommandKind::Crosscheck => vec![0.1, 0.25, 0.5, 0.75, 0.9],
            _ => single,
        },
        n_agents: 100_000,
        gamma: 1.0,
        pairing_mode: PairingMode::IndependentOpponent,
        rounds: if command == CommandKind::Repeat { 3 } else { 1 },
        deltas: (-10..=10).map(|k| f64::from(k) / 20.0).collect(),
        probe_vp: 0.25,
        probe_vd: 0.5,
        n_opponents: 100_000,
        opponent_pool: OpponentPool::Truncated,
        n_samples: 1_000_000,
        bins: 200,
        vp_points: 200,
    }
}

fn resolve(command: CommandKind, merged: RunConfig) -> Result<Settings, CliError> {
    let d = defaults(command);
    let p_eps = match merged.p_eps {
        Some(g) => g.values("p-eps")?,
        None => d.p_eps,
    };
    let deltas = match merged.deltas {
        Some(g) => g.values("deltas")?,
        None => d.deltas,
    };
    let settings = Settings {
        seed: merged.seed.unwrap_or_else(rand::random),
        family: merged.family.unwrap_or(d.family),
        p_eps,
        n_agents: merged.n_agents.unwrap_or(d.n_agents),
        gamma: merged.gamma.unwrap_or(d.gamma),
        pairing_mode: merged.pairing_mode.unwrap_or(d.pairing_mode),
        rounds: if command == CommandKind::Repeat {
            merged.rounds.unwrap_or(d.rounds)
        } else {
            1
        },
        deltas,
        probe_vp: merged.probe_vp.unwrap_or(d.probe_vp),
        probe_vd: merged.probe_vd.unwrap_or(d.probe_vd),
        n_opponents: merged.n_opponents.unwrap_or(d.n_opponents),
        opponent_pool: merged.opponent_pool.unwrap_or(d.opponent_pool),
        n_samples: merged.n_samples.unwrap_or(d.n_samples),
        bins: merged.bins.unwrap_or(d.bins),
        vp_points: merged.vp_points.unwrap_or(d.vp_points),
    };
    validate(command, &settings)?;
    Ok(settings)
}

fn validate(command: CommandKind, s: &Settings) -> Result<(), CliError> {
    if s.p_eps.is_empty() {
        return Err(usage("p-eps: empty grid"));
    }
    if !command.takes_grid() && s.p_eps.len() != 1 {
        return Err(usage(format!("p-eps: {command} takes a single value")));
    }
    for &p in &s.p_eps {
        validate_p_eps(p)
            .map_err(|_| usage(format!("p-eps out of range: {p} not in [1e-6, 1 - 1e-6]")))?;
    }
    let at_least = |field: &str, value: usize, min: usize| {
        if value < min {
            Err(usage(format!(
                "{field}: {value} is below the minimum {min}"
            )))
        } else {
            Ok(())
        }
    };
    match command {
        CommandKind::Auction | CommandKind::Reserve | CommandKind::Repeat | CommandKind::Sweep => {
            let min = if command == CommandKind::Sweep {
                MIN_SWEEP_AGENTS
            } else {
                2
            };
            at_least("n", s.n_agents, min)?;
            if !(s.gamma > 0.0 && s.gamma.is_finite()) {
                return Err(usage(format!(
                    "gamma: {} must be positive and finite",
                    s.gamma
                )));
            }
            if s.rounds < 1 {
                return Err(usage("rounds: must be at least 1"));
            }
        }
        CommandKind::Deviation => {
            at_least("opponents", s.n_opponents, MIN_OPPONENTS)?;
            if let Some(d) = s.deltas.iter().find(|d| !(-1.0..=1.0).contains(*d)) {
                return Err(usage(format!("deltas: {d} not in [-1, 1]")));
            }
            AgentValuation::from_split(s.probe_vd, s.probe_vp)
                .map_err(|e| usage(format!("probe-vp/probe-vd: {e}")))?;
        }
        CommandKind::ValidateDist => {
            at_least("samples", s.n_samples, MIN_DISTRIBUTION_SAMPLES)?;
            at_least("bins", s.bins, 10)?;
        }
        CommandKind::Crosscheck => at_least("vp-points", s.vp_points, 2)?,
    }
    Ok(())
}

/// Parses `argv` (program name first) into a validated [`RunSpec`].
pub fn parse_run_spec<I, T>(argv: I) -> Result<RunSpec, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv)?;
    let (command, common, flags) = match &cli.command {
        Command::Auction(a) => (
            CommandKind::Auction,
            &a.population.common,
            RunConfig {
                pairing_mode: a.pairing.map(Into::into),
                ..flags_of_population(&a.population)?
            },
        ),
        Command::Reserve(a) => (CommandKind::Reserve, &a.common, flags_of_population(a)?),
        Command::Repeat(a) => (
            CommandKind::Repeat,
            &a.population.common,
            RunConfig {
                pairing_mode: a.pairing.map(Into::into),
                rounds: a.rounds,
                ..flags_of_population(&a.population)?
            },
        ),
        Command::Deviation(a) => (
            CommandKind::Deviation,
            &a.common,
            RunConfig {
                seed: a.common.seed,
                family: a.family,
                p_eps: a.p_eps.clone().map(Grid::Text),
                deltas: a.deltas.clone().map(Grid::Text),
                probe_vp: a.probe_vp,
                probe_vd: a.probe_vd,
                n_opponents: a.opponents,
                opponent_pool: a.opponent_pool.map(Into::into),
                ..RunConfig::default()
            },
        ),
        Command::Sweep(a) => (
            CommandKind::Sweep,
            &a.common,
            RunConfig {
                seed: a.common.seed,
                family: a.family,
                p_eps: a.p_eps.clone().map(Grid::Text),
                n_agents: a.n,
                gamma: a.gamma,
                ..RunConfig::default()
            },
        ),
        Command::ValidateDist(a) => (
            CommandKind::ValidateDist,
            &a.common,
            RunConfig {
                seed: a.common.seed,
                family: a.family,
                p_eps: a.p_eps.clone().map(Grid::Text),
                n_samples: a.samples,
                bins: a.bins,
                ..RunConfig::default()
            },
        ),
        Command::Crosscheck(a) => (
            CommandKind::Crosscheck,
            &a.common,
            RunConfig {
                seed: a.common.seed,
                family: a.family,
                p_eps: a.p_eps.clone().map(Grid::Text),
                vp_points: a.vp_points,
                ..RunConfig::default()
            },
        ),
    };
    let file = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if common.threads == Some(0) {
        return Err(usage("threads: must be at least 1"));
    }
    let settings = resolve(command, file.overlay(flags))?;
    Ok(RunSpec {
        command,
        settings,
        format: common.format.unwrap_or(Format::Csv),
        out: common.out.clone(),
        threads: common.threads,
    })
}

/// `%.9g`-style rendering: 9 significant digits, trailing zeros dropped.
pub fn format_sig(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(mut s: String) -> String {
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    s
}

fn flag(b: bool) -> String {
    u8::from(b).to_string()
}

struct Table {
    notes: Vec<(String, String)>,
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&'static str]) -> Self {
        Self {
            notes: Vec::new(),
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    fn note(&mut self, key: &str, value: impl fmt::Display) {
        self.notes.push((key.to_string(), value.to_string()));
    }
}

struct Output {
    table: Table,
    json: Value,
}

fn auction_output(report: &AuctionReport) -> Result<Output, CliError> {
    let mut table = Table::new(&[
        "index",
        "total_value",
        "scaling_factor",
        "deployment_value",
        "premium_value",
        "raw_bid",
        "bid",
        "safety",
        "predicted_utility",
        "participates",
        "accepted",
        "won_premium",
        "premium_wins",
        "realized_utility",
    ]);
    let a = &report.aggregates;
    table.note("participants", a.participants);
    table.note("participation_rate", format_sig(a.participation_rate));
    table.note("mean_bid", format_sig(a.mean_bid));
    table.note("mean_realized_utility", format_sig(a.mean_realized_utility));
    table.note("premium_award_count", a.premium_award_count);
    table.rows = report
        .outcomes
        .iter()
        .map(|o| {
            let wins = if o.history.is_empty() {
                usize::from(o.won_premium)
            } else {
                o.history.iter().filter(|h| h.won_premium).count()
            };
            vec![
                o.index.to_string(),
                format_sig(o.valuation.total_value),
                format_sig(o.valuation.scaling_factor),
                format_sig(o.valuation.deployment_value),
                format_sig(o.valuation.premium_value),
                format_sig(o.decision.raw_bid),
                format_sig(o.decision.bid),
                format_sig(o.decision.safety),
                format_sig(o.decision.predicted_utility),
                flag(o.decision.participates),
                flag(o.accepted),
                flag(o.won_premium),
                wins.to_string(),
                format_sig(o.realized_utility),
            ]
        })
        .collect();
    Ok(Output {
        table,
        json: to_json(report)?,
    })
}

fn to_json<T: Serialize>(value: &T) -> Result<Value, CliError> {
    serde_json::to_value(value).map_err(|e| CliError::Run(Error::Numerical(e.to_string())))
}

fn run_command(spec: &RunSpec) -> Result<Output, CliError> {
    let s = &spec.settings;
    match spec.command {
        CommandKind::Auction => auction_output(&run_sira(&s.auction_config())?),
        CommandKind::Reserve => auction_output(&run_reserve_threshold(&s.auction_config())?),
        CommandKind::Repeat => auction_output(&run_repeated_sira(&s.auction_config())?),
        CommandKind::Deviation => {
            let result = deviation_sweep(&DeviationSpec {
                family: s.family,
                p_eps: s.p_eps[0],
                probe: AgentValuation::from_split(s.probe_vd, s.probe_vp)?,
                n_opponents: s.n_opponents,
                deltas: s.deltas.clone(),
                seed: s.seed,
                pool: s.opponent_pool,
            })?;
            let mut table = Table::new(&["delta", "mean_utility", "std_err", "n_samples"]);
            table.note("equilibrium_bid", format_sig(result.equilibrium_bid));
            table.note("predicted_utility", format_sig(result.predicted_utility));
            table.rows = result
                .points
                .iter()
                .map(|p| {
                    vec![
                        format_sig(p.delta),
                        format_sig(p.mean_utility),
                        format_sig(p.std_err),
                        p.n_samples.to_string(),
                    ]
                })
                .collect();
            Ok(Output {
                table,
                json: to_json(&result)?,
            })
        }
        CommandKind::Sweep => {
            let result = threshold_sweep(s.family, &s.p_eps, s.n_agents, s.gamma, s.seed)?;
            let mut table = Table::new(&[
                "p_eps",
                "mechanism",
                "participation_rate",
                "mean_bid",
                "se_participation",
                "se_bid",
            ]);
            table.note(
                "max_relative_participation_uplift",
                format_sig(result.max_relative_participation_uplift),
            );
            table.note(
                "max_relative_bid_uplift",
                format_sig(result.max_relative_bid_uplift),
            );
            table.rows = result
                .points
                .iter()
                .map(|p| {
                    vec![
                        format_sig(p.p_eps),
                        p.mechanism.to_string(),
                        format_sig(p.participation_rate),
                        format_sig(p.mean_bid),
                        format_sig(p.se_participation),
                        format_sig(p.se_bid),
                    ]
                })
                .collect();
            Ok(Output {
                table,
                json: to_json(&result)?,
            })
        }
        CommandKind::ValidateDist => {
            let result =
                validate_product_distribution(s.family, s.p_eps[0], s.n_samples, s.bins, s.seed)?;
            let mut table =
                Table::new(&["center", "density", "pdf", "cumulative", "cdf", "interior"]);
            table.note("cdf_sup_error", format_sig(result.cdf_sup_error));
            table.note("pdf_sup_error", format_sig(result.pdf_sup_error));
            table.rows = result
                .rows
                .iter()
                .map(|r| {
                    vec![
                        format_sig(r.center),
                        format_sig(r.density),
                        format_sig(r.pdf),
                        format_sig(r.cumulative),
                        format_sig(r.cdf),
                        flag(r.interior),
                    ]
                })
                .collect();
            Ok(Output {
                table,
                json: to_json(&result)?,
            })
        }
        CommandKind::Crosscheck => {
            let vp_grid = linspace(0.0, 0.5, s.vp_points);
            let result = closed_form_vs_quadrature(s.family, &vp_grid, &s.p_eps)?;
            let mut table = Table::new(&["p_eps", "v_p", "closed_form", "quadrature", "abs_diff"]);
            table.note("max_abs_diff", format!("{:e}", result.max_abs_diff));
            table.rows = result
                .rows
                .iter()
                .map(|r| {
                    vec![
                        format_sig(r.p_eps),
                        format_sig(r.v_p),
                        format_sig(r.closed_form),
                        format_sig(r.quadrature),
                        format!("{:e}", r.abs_diff),
                    ]
                })
                .collect();
            Ok(Output {
                table,
                json: to_json(&result)?,
            })
        }
    }
}

fn render(spec: &RunSpec, output: Output) -> Result<Vec<u8>, CliError> {
    let echo = spec.echo();
    match spec.format {
        Format::Json => {
            let doc = serde_json::json!({
                "tool": TOOL,
                "version": VERSION,
                "command": spec.command.to_string(),
                "seed": spec.settings.seed,
                "config": echo,
                "result": output.json,
            });
            let mut bytes = serde_json::to_vec_pretty(&doc)
                .map_err(|e| CliError::Run(Error::Numerical(e.to_string())))?;
            bytes.push(b'\n');
            Ok(bytes)
        }
        Format::Csv => {
            let mut buf = Vec::new();
            let config = serde_json::to_string(&echo)
                .map_err(|e| CliError::Run(Error::Numerical(e.to_string())))?;
            let lines = [
                format!("# {TOOL} {VERSION}"),
                format!("# command: {}", spec.command),
                format!("# seed: {}", spec.settings.seed),
                format!("# config: {config}"),
            ];
            for line in lines {
                writeln!(buf, "{line}").expect("write to memory");
            }
            for (key, value) in &output.table.notes {
                writeln!(buf, "# {key}: {value}").expect("write to memory");
            }
            let mut w = csv::Writer::from_writer(buf);
            let csv_err = |e: csv::Error| CliError::Run(Error::Numerical(e.to_string()));
            w.write_record(&output.table.header).map_err(csv_err)?;
            for row in &output.table.rows {
                w.write_record(row).map_err(csv_err)?;
            }
            w.into_inner()
                .map_err(|e| CliError::Run(Error::Numerical(e.to_string())))
        }
    }
}

/// Runs `spec` and writes its artifact; returns the path written, if any.
pub fn execute(spec: &RunSpec) -> Result<Option<PathBuf>, CliError> {
    let output = match spec.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| usage(format!("threads: {e}")))?
            .install(|| run_command(spec))?,
        None => run_command(spec)?,
    };
    let bytes = render(spec, output)?;
    match spec.output_path() {
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            lock.write_all(&bytes)
                .and_then(|_| lock.flush())
                .map_err(|e| io_error(Path::new("<stdout>"), e))?;
            Ok(None)
        }
        Some(path) => {
            std::fs::write(&path, &bytes).map_err(|e| io_error(&path, e))?;
            Ok(Some(path))
        }
    }
}

/// Entry point for the binary: parse, execute, report, map to an exit code.
pub fn main_with_args<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let result = parse_run_spec(argv).and_then(|spec| {
        let written = execute(&spec)?;
        if let Some(path) = written {
            eprintln!(
                "{TOOL}: wrote {} (seed {})",
                path.display(),
                spec.settings.seed
            );
        }
        Ok(())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::Clap(_)) => {
            if let CliError::Clap(inner) = &e {
                let _ = inner.print();
            }
            ExitCode::from(e.exit_code())
        }
        Err(e) => {
            eprintln!("{TOOL}: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &str) -> Result<RunSpec, CliError> {
        parse_run_spec(std::iter::once("sira").chain(args.split_whitespace()))
    }

    #[test]
    fn sweep_grid_from_flags() {
        let spec = parse("sweep --family uniform --p-eps 0.1:0.9:17 --n 100000 --seed 7").unwrap();
        assert_eq!(spec.command, CommandKind::Sweep);
        assert_eq!(spec.settings.p_eps.len(), 17);
        assert_eq!(spec.settings.n_agents, 100_000);
        assert_eq!(spec.settings.seed, 7);
    }

    #[test]
    fn out_of_range_price_is_usage_error() {
        let err = parse("auction --p-eps 1.5").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("p-eps out of range"), "{err}");
    }

    #[test]
    fn grid_forms() {
        assert_eq!(parse_grid("0.2,0.4", "x").unwrap(), vec![0.2, 0.4]);
        assert_eq!(parse_grid("0.3", "x").unwrap(), vec![0.3]);
        assert_eq!(parse_grid("0:1:3", "x").unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(parse_grid("0:1", "x").is_err());
        assert!(parse_grid("a,b", "x").is_err());
        assert!(parse_grid("0:1:0", "x").is_err());
    }

    #[test]
    fn single_value_commands_reject_grids() {
        assert!(parse("auction --p-eps 0.2,0.4 --seed 1").is_err());
    }

    #[test]
    fn negative_deltas_parse() {
        let spec = parse("deviation --deltas -0.5,0,0.25 --seed 1").unwrap();
        assert_eq!(spec.settings.deltas, vec![-0.5, 0.0, 0.25]);
        assert!(parse("deviation --deltas -1.5 --seed 1").is_err());
    }

    #[test]
    fn default_deltas_hit_round_values() {
        let d = defaults(CommandKind::Deviation).deltas;
        for x in [-0.5, -0.25, -0.1, 0.0, 0.1, 0.25, 0.5] {
            assert!(d.contains(&x), "{x}");
        }
    }

    #[test]
    fn entropy_seed_is_echoed() {
        let spec = parse("crosscheck").unwrap();
        assert_eq!(spec.echo().seed, Some(spec.settings.seed));
    }

    #[test]
    fn domain_checks_name_the_field() {
        for (args, field) in [
            ("validate-dist --samples 10 --seed 1", "samples"),
            ("deviation --opponents 5 --seed 1", "opponents"),
            ("sweep --n 100 --seed 1", "n"),
            ("auction --gamma -1 --seed 1", "gamma"),
            ("deviation --probe-vp 0.6 --seed 1", "probe-vp"),
        ] {
            let err = parse(args).unwrap_err();
            assert!(err.to_string().starts_with(field), "{args}: {err}");
            assert_eq!(err.exit_code(), 2);
        }
    }

    #[test]
    fn help_exits_zero() {
        let err = parse("--help").unwrap_err();
        assert_eq!(err.exit_code(), 0);
        assert_eq!(parse("--version").unwrap_err().exit_code(), 0);
        assert_eq!(parse("bogus").unwrap_err().exit_code(), 2);
    }

    #[test]
    fn sig_formatting() {
        assert_eq!(format_sig(0.0), "0");
        assert_eq!(format_sig(0.5), "0.5");
        assert_eq!(format_sig(1.0 / 3.0), "0.333333333");
        assert_eq!(format_sig(-2.0 / 3.0), "-0.666666667");
        assert_eq!(format_sig(123456.789012), "123456.789");
        assert_eq!(format_sig(1.5e-7), "1.5e-7");
        assert_eq!(format_sig(2.5e12), "2.5e12");
        assert_eq!(format_sig(9.9999999996), "10");
        assert_eq!(format_sig(100_000.0), "100000");
    }

    #[test]
    fn overlay_prefers_top() {
        let file = RunConfig {
            seed: Some(42),
            bins: Some(30),
            ..RunConfig::default()
        };
        let flags = RunConfig {
            seed: Some(7),
            ..RunConfig::default()
        };
        let merged = file.overlay(flags);
        assert_eq!(merged.seed, Some(7));
        assert_eq!(merged.bins, Some(30));
    }

    #[test]
    fn echo_round_trips_through_json() {
        let spec = parse(
            "repeat --family beta22 --p-eps 0.4 --n 50 --rounds 4 --pairing matching --seed 3",
        )
        .unwrap();
        let text = serde_json::to_string(&spec.echo()).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        let again = resolve(CommandKind::Repeat, back).unwrap();
        assert_eq!(again, spec.settings);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let err = serde_json::from_str::<RunConfig>(r#"{"seed": 1, "agents": 3}"#).unwrap_err();
        assert!(err.to_string().contains("agents"));
    }
}
