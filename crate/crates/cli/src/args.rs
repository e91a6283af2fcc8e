// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "leomap", version, about = "Map user routers and the PoP backbone of a satellite ISP")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Expand a GeoIP feed into user-router candidates.
    Gen(GenArgs),
    /// Echo-scan candidates and write the active user dataset.
    Scan(ScanArgs),
    /// Resolve PTR names and attach home PoPs to a dataset.
    Pops(PopsArgs),
    /// Infer the PoP-level backbone graph from vantage traceroutes.
    Map(MapArgs),
    /// Aggregate a dataset into CSV tables.
    Stats(StatsArgs),
    /// Simulator helpers.
    #[command(subcommand)]
    Sim(SimCommand),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AdapterChoice {
    Sim,
    Live,
}

#[derive(Debug, Args)]
pub struct AdapterArgs {
    #[arg(long, value_enum, default_value = "sim")]
    pub adapter: AdapterChoice,
    /// Topology config for the sim adapter.
    #[arg(long)]
    pub sim_config: Option<PathBuf>,
    /// Seed for scan order and the simulator; defaults to the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PolicyArgs {
    /// Probes dispatched per second.
    #[arg(long, default_value_t = 1000)]
    pub rate: u64,
    #[arg(long, default_value_t = 2000)]
    pub timeout_ms: u64,
    /// Extra samples per traceroute hop.
    #[arg(long, default_value_t = 2)]
    pub retries: u32,
    #[arg(long, default_value_t = 256)]
    pub max_in_flight: u32,
    #[arg(long, default_value_t = 3)]
    pub echo_attempts: u32,
    /// File of IPv6 prefixes never to probe, one per line.
    #[arg(long)]
    pub blocklist: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub geoip: PathBuf,
    #[arg(long, default_value_t = 56)]
    pub plen: u8,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    /// GeoIP feed; its allocations are expanded unless `--candidates` is given.
    #[arg(long)]
    pub geoip: PathBuf,
    /// Candidate list from `gen`, one address per line.
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    #[arg(long, default_value_t = 56)]
    pub plen: u8,
    #[command(flatten)]
    pub adapter: AdapterArgs,
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PopsArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub adapter: AdapterArgs,
    #[command(flatten)]
    pub policy: PolicyArgs,
    /// Site table `pop,label,lat,lon` for the location column.
    #[arg(long)]
    pub sites: Option<PathBuf>,
    /// Output dataset; the PoP summary goes to `<out>.pops.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Vantage name or PoP code; repeat for several vantages.
    #[arg(long = "vantage")]
    pub vantages: Vec<String>,
    #[command(flatten)]
    pub adapter: AdapterArgs,
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[arg(long, default_value_t = 32)]
    pub max_ttl: u8,
    #[arg(long, default_value_t = 2)]
    pub min_evidence: u64,
    #[arg(long, default_value_t = 5.0)]
    pub cluster_threshold_ms: f64,
    #[arg(long)]
    pub sites: Option<PathBuf>,
    /// Graph document; coverage goes to `<out>.coverage.json`, routers to
    /// `<out>.routers.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub sites: Option<PathBuf>,
    /// Output directory for the CSV tables.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum SimCommand {
    /// Write the simulated operator's GeoIP feed.
    Feed(SimOutArgs),
    /// Write the ground truth as JSON.
    Truth(SimOutArgs),
    /// Write the site table of the simulated PoPs.
    Sites(SimOutArgs),
}

#[derive(Debug, Args)]
pub struct SimOutArgs {
    #[arg(long)]
    pub sim_config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}
