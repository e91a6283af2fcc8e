// SPDX-License-Identifier: Apache-2.0

use std::collections::hash_map::RandomState;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::BuildHasher;
use std::io::Write;
use std::net::Ipv6Addr;
use std::path::Path;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use log::warn;
use serde_json::json;

use leomap::addressing::{generate_candidates, AddressError, Ipv6Prefix};
use leomap::backbone::{self, MapOptions, Site, VantagePoint};
use leomap::discovery::{self, ScanOptions, UserRecord};
use leomap::geoip::{load_geoip, write_geoip, GeoFeed, GeoIndex};
use leomap::probe::{AdapterKind, BatchOptions, LiveAdapter, ProbeAdapter, ProbePolicy};
use leomap::ptrmap::PopId;
use leomap::simnet::{build_sim, SimAdapter, SimConfig, SimTopology};

use crate::args::{
    AdapterArgs, AdapterChoice, GenArgs, MapArgs, PolicyArgs, PopsArgs, ScanArgs, SimCommand, SimOutArgs, StatsArgs,
};
use crate::error::CliError;
use crate::manifest::{manifest_path_for, sibling, ManifestBuilder};

enum Backend {
    Sim(Arc<SimTopology>),
    Live,
}

struct Opened {
    backend: Backend,
    kind: AdapterKind,
    seed: Option<u64>,
    config: serde_json::Value,
}

impl Opened {
    fn plain(&self) -> Result<Arc<dyn ProbeAdapter>, CliError> {
        Ok(match &self.backend {
            Backend::Sim(t) => Arc::new(SimAdapter::new(Arc::clone(t))),
            Backend::Live => Arc::new(LiveAdapter::new()?),
        })
    }

    fn discovered_at(&self) -> DateTime<Utc> {
        match &self.backend {
            Backend::Sim(t) => t.snapshot,
            Backend::Live => DateTime::from_timestamp(Utc::now().timestamp(), 0).expect("now is representable"),
        }
    }

    fn sim_sites(&self) -> BTreeMap<PopId, Site> {
        match &self.backend {
            Backend::Sim(t) => sites_of(t),
            Backend::Live => BTreeMap::new(),
        }
    }
}

fn sites_of(t: &SimTopology) -> BTreeMap<PopId, Site> {
    t.pops
        .iter()
        .map(|p| (p.id.clone(), Site { pop: p.id.clone(), label: p.label.clone(), lat: p.lat, lon: p.lon }))
        .collect()
}

fn load_sim(path: &Path, seed: Option<u64>, m: &mut ManifestBuilder) -> Result<(Arc<SimTopology>, u64), CliError> {
    let text = m.read_input_string(path)?;
    let mut cfg =
        SimConfig::from_toml(&text).map_err(|e| CliError::Usage(format!("sim config {}: {e}", path.display())))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let seed = cfg.seed;
    Ok((Arc::new(build_sim(&cfg)?), seed))
}

fn open_adapter(args: &AdapterArgs, m: &mut ManifestBuilder) -> Result<Opened, CliError> {
    let opened = match args.adapter {
        AdapterChoice::Sim => {
            let path =
                args.sim_config.as_deref().ok_or_else(|| CliError::Usage("--adapter sim needs --sim-config".into()))?;
            let (topology, seed) = load_sim(path, args.seed, m)?;
            Opened { backend: Backend::Sim(topology), kind: AdapterKind::Sim, seed: Some(seed), config: json!("sim") }
        }
        AdapterChoice::Live => {
            // Fail before any work when raw sockets are unavailable.
            LiveAdapter::new()?;
            // Live scans always run in shuffled order; the seed is recorded.
            let seed = args.seed.unwrap_or_else(|| RandomState::new().hash_one(Utc::now().timestamp_nanos_opt()));
            Opened { backend: Backend::Live, kind: AdapterKind::Live, seed: Some(seed), config: json!("live") }
        }
    };
    m.adapter(opened.kind, opened.seed);
    Ok(opened)
}

fn policy_of(args: &PolicyArgs) -> Result<ProbePolicy, CliError> {
    let policy = ProbePolicy {
        max_in_flight: args.max_in_flight,
        rate_per_second: args.rate,
        timeout_ms: args.timeout_ms,
        retries: args.retries,
        echo_attempts: args.echo_attempts,
    };
    policy.validate()?;
    Ok(policy)
}

fn policy_json(p: &ProbePolicy) -> serde_json::Value {
    serde_json::to_value(p).expect("policy serializes")
}

fn batch_of(args: &PolicyArgs, seed: Option<u64>, m: &mut ManifestBuilder) -> Result<BatchOptions, CliError> {
    let mut blocklist = Vec::new();
    if let Some(path) = &args.blocklist {
        let text = m.read_input_string(path)?;
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let prefix: Ipv6Prefix =
                line.parse().map_err(|e| CliError::Input(format!("{} line {}: {e}", path.display(), i + 1)))?;
            blocklist.push(prefix);
        }
    }
    Ok(BatchOptions { blocklist, shuffle_seed: seed })
}

fn read_feed(path: &Path, m: &mut ManifestBuilder) -> Result<GeoFeed, CliError> {
    let bytes = m.read_input(path)?;
    let feed = load_geoip(bytes.as_slice()).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    for issue in &feed.issues {
        warn!("{} line {}: {}", path.display(), issue.line, issue.message);
    }
    Ok(feed)
}

fn read_dataset(path: &Path, m: &mut ManifestBuilder) -> Result<Vec<UserRecord>, CliError> {
    let bytes = m.read_input(path)?;
    let dataset =
        discovery::read_dataset(bytes.as_slice()).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    for issue in &dataset.issues {
        warn!("{} line {}: {}", path.display(), issue.line, issue.message);
    }
    Ok(dataset.records)
}

fn read_sites(path: Option<&Path>, m: &mut ManifestBuilder) -> Result<Option<BTreeMap<PopId, Site>>, CliError> {
    let Some(path) = path else { return Ok(None) };
    let bytes = m.read_input(path)?;
    backbone::load_sites(bytes.as_slice()).map(Some).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Input(format!("cannot write {}: {e}", path.display()))
}

pub fn gen(args: &GenArgs) -> Result<(), CliError> {
    let mut m = ManifestBuilder::new("gen");
    m.config(json!({ "plen": args.plen }));
    let feed = read_feed(&args.geoip, &mut m)?;
    let mut out = m.create_output(&args.out)?;
    let mut generated = 0usize;
    let mut failed = 0usize;
    for entry in &feed.entries {
        match generate_candidates(entry.prefix, args.plen) {
            Ok(candidates) => {
                let count = candidates.len();
                for addr in candidates {
                    writeln!(out, "{addr}").map_err(io_err(&args.out))?;
                }
                println!("{}\t{count}", entry.prefix);
                generated += 1;
            }
            Err(e @ (AddressError::PrefixTooShort { .. } | AddressError::InvalidTargetLength { .. })) => {
                eprintln!("warning: {}: {e}", entry.prefix);
                failed += 1;
            }
            Err(e) => return Err(CliError::Input(format!("{}: {e}", entry.prefix))),
        }
    }
    out.flush().map_err(io_err(&args.out))?;
    m.finish(&manifest_path_for(&args.out))?;
    if generated == 0 && failed > 0 {
        return Err(CliError::Input("no allocation could be expanded".into()));
    }
    Ok(())
}

fn parse_candidates(path: &Path, m: &mut ManifestBuilder) -> Result<Vec<Ipv6Addr>, CliError> {
    let text = m.read_input_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| l.trim().parse().map_err(|e| CliError::Input(format!("{} line {}: {e}", path.display(), i + 1))))
        .collect()
}

pub fn scan(args: &ScanArgs) -> Result<(), CliError> {
    let mut m = ManifestBuilder::new("scan");
    let opened = open_adapter(&args.adapter, &mut m)?;
    let policy = policy_of(&args.policy)?;
    let batch = batch_of(&args.policy, opened.seed, &mut m)?;
    m.config(json!({
        "adapter": opened.config,
        "seed": opened.seed,
        "plen": args.plen,
        "candidates": args.candidates.is_some(),
        "policy": policy_json(&policy),
    }));
    let feed = read_feed(&args.geoip, &mut m)?;
    let mut options = ScanOptions::at(opened.discovered_at());
    options.target_len = args.plen;
    options.batch = batch;
    let adapter = opened.plain()?;
    let outcome = match &args.candidates {
        Some(path) => {
            let candidates = parse_candidates(path, &mut m)?;
            let index = GeoIndex::build(feed.entries.clone());
            discovery::scan_candidates(adapter, candidates, &index, &policy, &options)?
        }
        None => discovery::scan_allocations(adapter, &feed.entries, &policy, &options)?,
    };
    for a in &outcome.report.allocations {
        match &a.error {
            Some(e) => eprintln!("warning: {}: {e}", a.prefix),
            None => println!("{}\t{}\t{}", a.prefix, a.candidates, a.alive),
        }
    }
    let mut buf = Vec::new();
    discovery::write_dataset(&outcome.records, &mut buf).map_err(io_err(&args.out))?;
    m.write_output(&args.out, &buf)?;
    m.finish(&manifest_path_for(&args.out))?;
    eprintln!("{} active users", outcome.records.len());
    Ok(())
}

pub fn pops(args: &PopsArgs) -> Result<(), CliError> {
    let mut m = ManifestBuilder::new("pops");
    let opened = open_adapter(&args.adapter, &mut m)?;
    let policy = policy_of(&args.policy)?;
    let batch = batch_of(&args.policy, opened.seed, &mut m)?;
    m.config(json!({ "adapter": opened.config, "seed": opened.seed, "policy": policy_json(&policy) }));
    let mut records = read_dataset(&args.dataset, &mut m)?;
    let sites = read_sites(args.sites.as_deref(), &mut m)?.unwrap_or_else(|| opened.sim_sites());
    let report = discovery::associate_pops(opened.plain()?, &mut records, &policy, &batch)?;

    let mut buf = Vec::new();
    discovery::write_dataset(&records, &mut buf).map_err(io_err(&args.out))?;
    m.write_output(&args.out, &buf)?;
    let labels: HashMap<PopId, String> = sites.into_values().map(|s| (s.pop, s.label)).collect();
    let table = discovery::render_pops_csv(&discovery::compute_stats(&records), &labels);
    m.write_output(&sibling(&args.out, "pops.csv"), table.as_bytes())?;
    m.finish(&manifest_path_for(&args.out))?;
    print!("{table}");
    eprintln!(
        "homed {}, no-ptr {}, foreign-ptr {}, timeout {}, failed {}",
        report.homed, report.no_ptr, report.foreign_ptr, report.timeout, report.failed
    );
    Ok(())
}

fn routers_csv(routers: &[backbone::BackboneRouter]) -> String {
    let mut out = String::from("addr,pop,attribution,ambiguous,anomaly,ptr_name,evidence\n");
    for r in routers {
        let attribution = match r.attribution {
            backbone::Attribution::Ptr => "ptr",
            backbone::Attribution::LatencyCluster => "latency_cluster",
            backbone::Attribution::Unresolved => "unresolved",
        };
        out += &format!(
            "{},{},{},{},{},{},{}\n",
            r.addr,
            r.pop.as_ref().map(|p| p.to_string()).unwrap_or_default(),
            attribution,
            r.ambiguous,
            r.anomaly.is_some(),
            r.ptr_name.as_deref().unwrap_or("").replace(',', " "),
            r.evidence.len()
        );
    }
    out
}

pub fn map(args: &MapArgs) -> Result<(), CliError> {
    if args.vantages.is_empty() {
        return Err(CliError::Usage("map needs at least one --vantage".into()));
    }
    if !(args.cluster_threshold_ms.is_finite() && args.cluster_threshold_ms >= 0.0) {
        return Err(CliError::Usage("--cluster-threshold-ms must be a non-negative number".into()));
    }
    let mut m = ManifestBuilder::new("map");
    let opened = open_adapter(&args.adapter, &mut m)?;
    let policy = policy_of(&args.policy)?;
    let batch = batch_of(&args.policy, opened.seed, &mut m)?;
    m.config(json!({
        "adapter": opened.config,
        "seed": opened.seed,
        "vantages": args.vantages,
        "max_ttl": args.max_ttl,
        "min_evidence": args.min_evidence,
        "cluster_threshold_ms": args.cluster_threshold_ms,
        "policy": policy_json(&policy),
    }));
    let records = read_dataset(&args.dataset, &mut m)?;
    let sites = read_sites(args.sites.as_deref(), &mut m)?.unwrap_or_else(|| opened.sim_sites());

    let vantages: Vec<VantagePoint> = match &opened.backend {
        Backend::Sim(t) => args
            .vantages
            .iter()
            .map(|name| {
                let adapter = SimAdapter::at_vantage(Arc::clone(t), name)?;
                let pop = adapter.vantage().map(|v| v.pop.clone());
                Ok(VantagePoint { name: name.clone(), pop, adapter: Arc::new(adapter) })
            })
            .collect::<Result<_, CliError>>()?,
        Backend::Live => {
            if args.vantages.len() > 1 {
                return Err(CliError::Usage("the live adapter traces from this host only; give one --vantage".into()));
            }
            let name = &args.vantages[0];
            vec![VantagePoint { name: name.clone(), pop: name.parse().ok(), adapter: opened.plain()? }]
        }
    };
    let targets: Vec<Ipv6Addr> = records.iter().map(|r| r.addr).collect();
    let expected: BTreeSet<PopId> = records.iter().filter_map(|r| r.home_pop.clone()).collect();
    let options = MapOptions {
        max_ttl: args.max_ttl,
        min_evidence: args.min_evidence,
        cluster_threshold_ms: args.cluster_threshold_ms,
        batch,
    };
    let outcome = backbone::map_backbone(&vantages, &targets, &expected, &policy, &options)?;

    let doc = backbone::export_graph(&outcome.graph, &sites);
    m.write_output(&args.out, doc.to_json().as_bytes())?;
    let coverage = serde_json::to_string_pretty(&outcome.coverage).expect("coverage serializes") + "\n";
    m.write_output(&sibling(&args.out, "coverage.json"), coverage.as_bytes())?;
    m.write_output(&sibling(&args.out, "routers.csv"), routers_csv(&outcome.routers).as_bytes())?;
    m.finish(&manifest_path_for(&args.out))?;
    if !outcome.coverage.pops_without_vantage.is_empty() {
        eprintln!("warning: no vantage in PoPs {}", outcome.coverage.pops_without_vantage.join(", "));
    }
    if !outcome.coverage.pops_unobserved.is_empty() {
        eprintln!("warning: PoPs never observed: {}", outcome.coverage.pops_unobserved.join(", "));
    }
    eprintln!("{} PoPs, {} edges", outcome.graph.nodes.len(), outcome.graph.edges.len());
    Ok(())
}

pub fn stats(args: &StatsArgs) -> Result<(), CliError> {
    let mut m = ManifestBuilder::new("stats");
    m.config(json!({}));
    let records = read_dataset(&args.dataset, &mut m)?;
    let sites = read_sites(args.sites.as_deref(), &mut m)?.unwrap_or_default();
    let labels: HashMap<PopId, String> = sites.into_values().map(|s| (s.pop, s.label)).collect();
    let stats = discovery::compute_stats(&records);
    let dir = &args.out;
    m.write_output(&dir.join("continents.csv"), discovery::render_continents_csv(&stats).as_bytes())?;
    m.write_output(&dir.join("regions.csv"), discovery::render_regions_csv(&stats).as_bytes())?;
    m.write_output(&dir.join("pops.csv"), discovery::render_pops_csv(&stats, &labels).as_bytes())?;
    m.write_output(&dir.join("multi_pop_regions.csv"), discovery::render_multi_pop_csv(&stats).as_bytes())?;
    m.finish(&dir.join("manifest.json"))?;
    println!(
        "{} users ({} homed) in {} regions, {} PoPs, {} multi-PoP regions",
        stats.discovered,
        stats.homed,
        stats.regions.len(),
        stats.pops.len(),
        stats.multi_pop_regions.len()
    );
    Ok(())
}

pub fn sim(cmd: &SimCommand) -> Result<(), CliError> {
    let (name, args): (&str, &SimOutArgs) = match cmd {
        SimCommand::Feed(a) => ("sim feed", a),
        SimCommand::Truth(a) => ("sim truth", a),
        SimCommand::Sites(a) => ("sim sites", a),
    };
    let mut m = ManifestBuilder::new(name);
    let (topology, seed) = load_sim(&args.sim_config, args.seed, &mut m)?;
    m.adapter(AdapterKind::Sim, Some(seed));
    m.config(json!({ "seed": seed }));
    let body = match cmd {
        SimCommand::Feed(_) => {
            let mut buf = Vec::new();
            write_geoip(&topology.geoip_feed(), &mut buf).map_err(io_err(&args.out))?;
            buf
        }
        SimCommand::Truth(_) => topology.ground_truth().to_json().into_bytes(),
        SimCommand::Sites(_) => backbone::render_sites_csv(sites_of(&topology).values()).into_bytes(),
    };
    m.write_output(&args.out, &body)?;
    m.finish(&manifest_path_for(&args.out))?;
    Ok(())
}
