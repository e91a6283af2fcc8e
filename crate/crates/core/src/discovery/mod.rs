// SPDX-License-Identifier: Apache-2.0

//! Active user discovery and PoP association.
//!
//! Each GeoIP allocation is expanded into its user-router candidates, the
//! candidates are echo-probed, and responders become [`UserRecord`]s. A
//! second pass resolves their PTR names and reads the home PoP out of
//! `customer.<pop>.pop.starlinkisp.net`.

mod dataset;
mod stats;

use std::collections::HashMap;
use std::net::Ipv6Addr;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use log::{info, warn};
use serde::Serialize;
use thiserror::Error;

use crate::addressing::{generate_candidates_capped, is_user_router_pattern, DEFAULT_CANDIDATE_CAP};
use crate::geoip::{GeoIndex, GeoIpEntry};
use crate::probe::{
    run_batch, BatchOptions, EchoOutcome, ProbeAdapter, ProbeError, ProbeOp, ProbePolicy, ProbeReply, PtrAnswer,
};
use crate::ptrmap::{parse_ptr, PopId, PtrClassification};

pub use dataset::{append_dataset, load_dataset, read_dataset, write_dataset, Dataset, DatasetIssue, DATASET_HEADER};
pub use stats::{
    compute_stats, percent, render_continents_csv, render_multi_pop_csv, render_pops_csv, render_regions_csv,
    ContinentShare, MultiPopRegion, PopServiceStats, RegionCount, Stats, StatsBuilder,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiscoveryError {
    #[error("no allocations to scan")]
    EmptyInput,
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error("dataset schema mismatch: expected {expected:?}, found {found:?}")]
    SchemaMismatch { expected: String, found: String },
    #[error("dataset I/O: {0}")]
    Io(String),
}

impl From<std::io::Error> for DiscoveryError {
    fn from(e: std::io::Error) -> Self {
        DiscoveryError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserRecord {
    pub addr: Ipv6Addr,
    pub geo: GeoIpEntry,
    pub home_pop: Option<PopId>,
    pub discovered_at: DateTime<Utc>,
    pub ptr_name: Option<String>,
}

impl UserRecord {
    pub fn new(addr: Ipv6Addr, geo: GeoIpEntry, discovered_at: DateTime<Utc>) -> Self {
        Self { addr, geo, home_pop: None, discovered_at, ptr_name: None }
    }

    pub fn check(&self) -> Result<(), String> {
        if !is_user_router_pattern(self.addr) {
            return Err(format!("{} is not a user-router address", self.addr));
        }
        if !self.geo.prefix.contains(self.addr) {
            return Err(format!("{} lies outside {}", self.addr, self.geo.prefix));
        }
        let customer = self.ptr_name.as_deref().map(parse_ptr).and_then(|c| match c {
            PtrClassification::Customer(p) => Some(p),
            _ => None,
        });
        if customer != self.home_pop {
            return Err(format!("home PoP of {} disagrees with its PTR", self.addr));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ScanOptions {
    pub target_len: u8,
    pub cap: u64,
    /// Timestamp stamped on every record of this scan.
    pub discovered_at: DateTime<Utc>,
    pub batch: BatchOptions,
}

impl ScanOptions {
    pub fn at(discovered_at: DateTime<Utc>) -> Self {
        Self { target_len: 56, cap: DEFAULT_CANDIDATE_CAP, discovered_at, batch: BatchOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationReport {
    pub prefix: String,
    pub candidates: u64,
    pub alive: u64,
    pub blocklisted: u64,
    pub failed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ScanReport {
    pub allocations: Vec<AllocationReport>,
    /// Candidates outside every feed prefix (candidate-list scans only).
    pub untagged: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanOutcome {
    /// Alive users, sorted by address.
    pub records: Vec<UserRecord>,
    pub report: ScanReport,
}

#[derive(Default)]
struct Tally {
    alive: u64,
    blocklisted: u64,
    failed: u64,
}

fn echo_scan<I>(
    adapter: &Arc<dyn ProbeAdapter>,
    targets: I,
    policy: &ProbePolicy,
    batch: &BatchOptions,
    mut on_alive: impl FnMut(Ipv6Addr),
) -> Result<Tally, ProbeError>
where
    I: IntoIterator<Item = Ipv6Addr>,
    I::IntoIter: Send + 'static,
{
    let mut tally = Tally::default();
    for item in run_batch(Arc::clone(adapter), targets, ProbeOp::Echo, policy, batch)? {
        match item.result {
            Ok(ProbeReply::Echo(EchoOutcome::Alive)) => {
                tally.alive += 1;
                on_alive(item.target);
            }
            Ok(_) => {}
            Err(ProbeError::Blocklisted(_)) => tally.blocklisted += 1,
            Err(e @ ProbeError::AdapterUnavailable(_)) => return Err(e),
            Err(e) => {
                tally.failed += 1;
                warn!("echo {} failed: {e}", item.target);
            }
        }
    }
    Ok(tally)
}

/// Expands and echo-scans each allocation. An allocation whose candidate set
/// cannot be enumerated is reported and skipped.
pub fn scan_allocations(
    adapter: Arc<dyn ProbeAdapter>,
    entries: &[GeoIpEntry],
    policy: &ProbePolicy,
    options: &ScanOptions,
) -> Result<ScanOutcome, DiscoveryError> {
    if entries.is_empty() {
        return Err(DiscoveryError::EmptyInput);
    }
    policy.validate()?;
    let mut records = Vec::new();
    let mut report = ScanReport::default();
    for entry in entries {
        let candidates = match generate_candidates_capped(entry.prefix, options.target_len, options.cap) {
            Ok(c) => c,
            Err(e) => {
                warn!("skipping {}: {e}", entry.prefix);
                report.allocations.push(AllocationReport {
                    prefix: entry.prefix.to_string(),
                    candidates: 0,
                    alive: 0,
                    blocklisted: 0,
                    failed: 0,
                    error: Some(e.to_string()),
                });
                continue;
            }
        };
        let count = candidates.len() as u64;
        let tally = echo_scan(&adapter, candidates, policy, &options.batch, |addr| {
            records.push(UserRecord::new(addr, entry.clone(), options.discovered_at));
        })?;
        info!("{}: {} of {count} candidates alive", entry.prefix, tally.alive);
        report.allocations.push(AllocationReport {
            prefix: entry.prefix.to_string(),
            candidates: count,
            alive: tally.alive,
            blocklisted: tally.blocklisted,
            failed: tally.failed,
            error: None,
        });
    }
    records.sort_by_key(|r| r.addr);
    records.dedup_by_key(|r| r.addr);
    Ok(ScanOutcome { records, report })
}

/// Echo-scans an explicit candidate list, tagging responders with the most
/// specific feed entry covering them.
pub fn scan_candidates(
    adapter: Arc<dyn ProbeAdapter>,
    candidates: Vec<Ipv6Addr>,
    index: &GeoIndex,
    policy: &ProbePolicy,
    options: &ScanOptions,
) -> Result<ScanOutcome, DiscoveryError> {
    policy.validate()?;
    let (tagged, untagged): (Vec<Ipv6Addr>, Vec<Ipv6Addr>) =
        candidates.into_iter().partition(|a| index.lookup(*a).is_some());
    if !untagged.is_empty() {
        warn!("{} candidates are outside the feed and were not probed", untagged.len());
    }
    let mut per_prefix: HashMap<String, AllocationReport> = HashMap::new();
    for a in &tagged {
        let prefix = index.lookup(*a).expect("tagged").prefix.to_string();
        per_prefix
            .entry(prefix.clone())
            .or_insert_with(|| AllocationReport {
                prefix,
                candidates: 0,
                alive: 0,
                blocklisted: 0,
                failed: 0,
                error: None,
            })
            .candidates += 1;
    }
    let mut records = Vec::new();
    let tally = echo_scan(&adapter, tagged, policy, &options.batch, |addr| {
        let geo = index.lookup(addr).expect("tagged").clone();
        records.push(UserRecord::new(addr, geo, options.discovered_at));
    })?;
    for r in &records {
        if let Some(a) = per_prefix.get_mut(&r.geo.prefix.to_string()) {
            a.alive += 1;
        }
    }
    records.sort_by_key(|r| r.addr);
    records.dedup_by_key(|r| r.addr);
    let mut allocations: Vec<AllocationReport> = per_prefix.into_values().collect();
    allocations.sort_by(|a, b| a.prefix.cmp(&b.prefix));
    info!("{} of {} candidates alive", tally.alive, allocations.iter().map(|a| a.candidates).sum::<u64>());
    Ok(ScanOutcome { records, report: ScanReport { allocations, untagged: untagged.len() as u64 } })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AssociationReport {
    pub homed: u64,
    #[serde(rename = "no-ptr")]
    pub no_ptr: u64,
    #[serde(rename = "foreign-ptr")]
    pub foreign_ptr: u64,
    pub timeout: u64,
    pub failed: u64,
}

/// Resolves PTR names and fills in `home_pop` from customer names. Records
/// keep their order.
pub fn associate_pops(
    adapter: Arc<dyn ProbeAdapter>,
    records: &mut [UserRecord],
    policy: &ProbePolicy,
    batch: &BatchOptions,
) -> Result<AssociationReport, DiscoveryError> {
    let mut report = AssociationReport::default();
    if records.is_empty() {
        return Ok(report);
    }
    let position: HashMap<Ipv6Addr, usize> = records.iter().enumerate().map(|(i, r)| (r.addr, i)).collect();
    let targets: Vec<Ipv6Addr> = records.iter().map(|r| r.addr).collect();
    // Blocklisting applies to scanning only; records are already known.
    let batch = BatchOptions { blocklist: Vec::new(), ..batch.clone() };
    let mut answers: HashMap<Ipv6Addr, Result<PtrAnswer, ProbeError>> = HashMap::new();
    for item in run_batch(adapter, targets, ProbeOp::Ptr, policy, &batch)? {
        let answer = item.result.map(|r| match r {
            ProbeReply::Ptr(a) => a,
            _ => PtrAnswer::NxDomain,
        });
        answers.insert(item.target, answer);
    }
    for (addr, answer) in answers {
        let record = &mut records[position[&addr]];
        record.home_pop = None;
        record.ptr_name = None;
        match answer {
            Ok(PtrAnswer::Name(name)) => {
                if let PtrClassification::Customer(pop) = parse_ptr(&name) {
                    record.home_pop = Some(pop);
                    report.homed += 1;
                } else {
                    report.foreign_ptr += 1;
                }
                record.ptr_name = Some(name);
            }
            Ok(PtrAnswer::NxDomain) => report.no_ptr += 1,
            Ok(PtrAnswer::Timeout) => report.timeout += 1,
            Err(e @ ProbeError::AdapterUnavailable(_)) => return Err(e.into()),
            Err(e) => {
                report.failed += 1;
                warn!("PTR lookup for {addr} failed: {e}");
            }
        }
    }
    info!("homed {} users; {} without PTR, {} with foreign PTR", report.homed, report.no_ptr, report.foreign_ptr);
    Ok(report)
}
