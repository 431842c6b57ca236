//! Command-line surface: `ingest`, `analyze`, `avoid`, `plan`.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | runtime failure (I/O, network, internal consistency) |
//! | 2 | configuration or usage error |
//! | 3 | input parse error |
//! | 4 | empty corpus |
//! | 5 | relay dataset failed validation |
//! | 6 | live ingest finished with some failed requests (results that arrived were stored) |

mod commands;
pub mod config;
mod data;
pub mod report;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use crate::ingest::{DnsTransport, HttpTransport, Sleeper, ThreadSleeper, UdpDnsTransport, UreqTransport};
use config::{FileConfig, FlagConfig, RunConfig};
use report::OutputFormat;

pub use commands::{analyze_tables, avoid_table, symmetry_pairing};
pub use data::Dataset;

pub mod exit {
    pub const OK: i32 = 0;
    pub const RUNTIME: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const PARSE: i32 = 3;
    pub const EMPTY: i32 = 4;
    pub const RELAY: i32 = 5;
    pub const PARTIAL: i32 = 6;
}

/// A failure with its exit code and one-line diagnostic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn with(code: i32, message: impl Into<String>) -> Self {
        CliError { code, message: message.into() }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self::with(exit::RUNTIME, message)
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::with(exit::CONFIG, message)
    }

    pub fn parse(message: impl Into<String>) -> Self {
        Self::with(exit::PARSE, message)
    }

    pub fn empty(message: impl Into<String>) -> Self {
        Self::with(exit::EMPTY, message)
    }

    pub fn relay(message: impl Into<String>) -> Self {
        Self::with(exit::RELAY, message)
    }

    pub fn partial(message: impl Into<String>) -> Self {
        Self::with(exit::PARTIAL, message)
    }
}

const EXIT_CODES: &str = "Exit codes: 0 ok, 1 runtime, 2 config/usage, 3 parse, 4 empty corpus, \
5 relay validation, 6 partial live ingest";

#[derive(Debug, Parser)]
#[command(name = "countrypath", version, about = "Country-level path analysis and country avoidance", after_help = EXIT_CODES)]
pub struct Cli {
    /// TOML file with the same keys as the global flags; flags win.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Geolocation table (CSV `network,country_code`, or `.jsonl` MaxMind-style records).
    #[arg(long, global = true, value_name = "PATH")]
    pub geo: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<OutputFormat>,
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "DIR", conflicts_with = "live")]
    pub fixtures: Option<PathBuf>,
    #[arg(long, global = true)]
    pub live: bool,
    #[arg(long, global = true, value_name = "CC")]
    pub origin: Option<String>,
    #[arg(long = "target", global = true, value_name = "CC")]
    pub targets: Vec<String>,
    /// `from_code,to_code` rows merging territories into a sovereign code.
    #[arg(long, global = true, value_name = "PATH")]
    pub alias_map: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load traceroutes (fixtures or live platform) into a content-addressed store.
    Ingest(IngestArgs),
    /// Termination, transit, tromboning, symmetry and hosting reports.
    Analyze,
    /// Avoidance values per target country.
    Avoid,
    /// Build a measurement plan from resolved domains and a credit budget.
    Plan(PlanArgs),
}

#[derive(Debug, Clone, Args)]
pub struct IngestArgs {
    /// Print what would be requested and stop.
    #[arg(long)]
    pub dry_run: bool,
    /// Measurement plan (JSON from `plan`) to schedule in live mode.
    #[arg(long, value_name = "PATH")]
    pub plan: Option<PathBuf>,
    /// Resolver endpoints, one per line, for live DNS collection.
    #[arg(long, value_name = "PATH")]
    pub resolvers: Option<PathBuf>,
    /// Domains, one per line, for live DNS collection.
    #[arg(long, value_name = "PATH")]
    pub domains: Option<PathBuf>,
    #[arg(long, value_name = "VAR", default_value = "ATLAS_API_KEY")]
    pub api_key_env: String,
    #[arg(long, value_name = "URL")]
    pub base_url: Option<String>,
    #[arg(long, value_name = "MS", default_value_t = 2000)]
    pub dns_timeout_ms: u64,
}

#[derive(Debug, Clone, Args)]
pub struct PlanArgs {
    /// Domains, one per line, in priority order.
    #[arg(long, value_name = "PATH")]
    pub domains: PathBuf,
    /// Resolver observations: JSONL file, directory of them, or a store.
    #[arg(long, value_name = "PATH")]
    pub resolutions: PathBuf,
    #[arg(long, value_name = "N")]
    pub budget: u64,
    #[arg(long, value_name = "ID", value_delimiter = ',')]
    pub probes: Vec<String>,
}

/// Outside-world dependencies, injectable for tests.
pub struct Services<'a> {
    pub http: &'a dyn HttpTransport,
    pub dns: &'a dyn DnsTransport,
    pub sleeper: &'a dyn Sleeper,
    pub env: &'a dyn Fn(&str) -> Option<String>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, services: &Services<'_>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let rendered = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(stderr, "{rendered}");
                exit::CONFIG
            } else {
                let _ = write!(stdout, "{rendered}");
                exit::OK
            };
        }
    };
    match execute(cli, services, stdout, stderr) {
        Ok(()) => exit::OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}", e.message);
            e.code
        }
    }
}

fn execute(cli: Cli, services: &Services<'_>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let file = cli.config.as_deref().map(FileConfig::load).transpose()?.unwrap_or_default();
    let flags = FlagConfig {
        geo: cli.geo,
        format: cli.format,
        out: cli.out,
        fixtures: cli.fixtures,
        live: cli.live,
        origin: cli.origin,
        targets: cli.targets,
        alias_map: cli.alias_map,
    };
    let cfg = RunConfig::merge(file, flags)?;
    match &cli.command {
        Command::Ingest(args) => commands::ingest(&cfg, args, services, stdout, stderr),
        Command::Analyze => commands::analyze(&cfg, stderr),
        Command::Avoid => commands::avoid(&cfg),
        Command::Plan(args) => commands::plan(&cfg, args, stderr),
    }
}

/// Process entry point with real network transports.
pub fn main() -> i32 {
    let http = UreqTransport::new(Duration::from_secs(30));
    let env = |name: &str| std::env::var(name).ok();
    let services = Services { http: &http, dns: &UdpDnsTransport, sleeper: &ThreadSleeper, env: &env };
    run(std::env::args_os(), &services, &mut std::io::stdout(), &mut std::io::stderr())
}
