// SPDX-License-Identifier: Apache-2.0

//! PoP-level backbone inference from user traceroutes.
//!
//! The third-to-last hop of a trace that reaches a user router is the
//! backbone router of that user's home PoP. Routers are placed in PoPs by
//! their PTR names, and by latency clustering when the name is missing.
//! Inter-router latency comes from traceroutes aimed at the routers
//! themselves, whose final hop answers directly and so is not inflated by
//! MPLS tunnelling. PoP adjacency comes from consecutive routers in the user
//! traces.

mod cluster;
mod graph;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::net::Ipv6Addr;
use std::sync::Arc;

use log::{info, warn};
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::probe::{
    run_batch, BatchOptions, ProbeAdapter, ProbeError, ProbeOp, ProbePolicy, ProbeReply, PtrAnswer, TracerouteResult,
};
use crate::ptrmap::{parse_ptr, PopId, PtrClassification};

pub use cluster::{cluster_unresolved, components};
pub use graph::{
    export_graph, haversine_km, infer_edges, load_sites, render_sites_csv, BackboneGraph, EdgeDoc, GraphDocument,
    GraphEdge, NodeDoc, Site, EARTH_RADIUS_KM,
};

pub const DEFAULT_CLUSTER_THRESHOLD_MS: f64 = 5.0;
pub const DEFAULT_MIN_EVIDENCE: u64 = 2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackboneError {
    #[error("traceroute to {0} did not reach its target")]
    NotReached(Ipv6Addr),
    #[error("{0} is unreachable by direct traceroute")]
    Unreachable(Ipv6Addr),
    #[error("latency matrix is not square: {rows} rows, a row of {columns}")]
    MatrixShapeMismatch { rows: usize, columns: usize },
    #[error("site table line {line}: {message}")]
    Sites { line: usize, message: String },
    #[error("no vantages given")]
    NoVantages,
    #[error(transparent)]
    Probe(#[from] ProbeError),
}

/// A PoP known by code, or a latency cluster without a named anchor.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PopRef {
    Known(PopId),
    Synthetic(u32),
}

impl fmt::Display for PopRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PopRef::Known(p) => write!(f, "{p}"),
            PopRef::Synthetic(n) => write!(f, "unknown-{n}"),
        }
    }
}

impl Serialize for PopRef {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl From<PopId> for PopRef {
    fn from(p: PopId) -> Self {
        PopRef::Known(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribution {
    Ptr,
    LatencyCluster,
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackboneRouter {
    pub addr: Ipv6Addr,
    pub pop: Option<PopRef>,
    pub attribution: Attribution,
    /// Traces (`vantage:target`) in which this router was the backbone hop.
    pub evidence: Vec<String>,
    pub ptr_name: Option<String>,
    /// Set when the PTR name contradicts the router role.
    pub anomaly: Option<String>,
    /// Clustered next to routers of several PoPs.
    pub ambiguous: bool,
}

impl BackboneRouter {
    pub fn unresolved(addr: Ipv6Addr) -> Self {
        Self {
            addr,
            pop: None,
            attribution: Attribution::Unresolved,
            evidence: Vec::new(),
            ptr_name: None,
            anomaly: None,
            ambiguous: false,
        }
    }

    pub fn check(&self) -> Result<(), String> {
        match (self.attribution, &self.pop) {
            (Attribution::Ptr, Some(PopRef::Known(_)))
            | (Attribution::LatencyCluster, Some(_))
            | (Attribution::Unresolved, None) => Ok(()),
            _ => Err(format!("{} has attribution {:?} with pop {:?}", self.addr, self.attribution, self.pop)),
        }
    }
}

/// The backbone router in the target's home PoP: the responder three hops
/// from the end. `Ok(None)` when that hop is anonymous or the trace is
/// shorter than three hops.
pub fn extract_backbone_router(trace: &TracerouteResult) -> Result<Option<Ipv6Addr>, BackboneError> {
    if !trace.reached {
        return Err(BackboneError::NotReached(trace.target));
    }
    let n = trace.hops.len();
    if n < 3 {
        return Ok(None);
    }
    Ok(trace.hops[n - 3].responder)
}

/// Attribution from a PTR answer alone.
pub fn attribute_from_ptr(addr: Ipv6Addr, answer: &PtrAnswer) -> BackboneRouter {
    let mut r = BackboneRouter::unresolved(addr);
    let Some(name) = answer.name() else { return r };
    r.ptr_name = Some(name.to_string());
    match parse_ptr(name) {
        PtrClassification::PopHost { pop, .. } => {
            r.pop = Some(PopRef::Known(pop));
            r.attribution = Attribution::Ptr;
        }
        PtrClassification::Customer(_) => r.anomaly = Some(format!("customer name {name} on a backbone hop")),
        PtrClassification::NotStarlink => {}
    }
    r
}

pub fn attribute_router(
    adapter: &dyn ProbeAdapter,
    addr: Ipv6Addr,
    policy: &ProbePolicy,
) -> Result<BackboneRouter, ProbeError> {
    Ok(attribute_from_ptr(addr, &adapter.resolve_ptr(addr, policy)?))
}

/// Median final-hop RTT of a direct traceroute to `addr`.
pub fn direct_rtt(
    adapter: &dyn ProbeAdapter,
    addr: Ipv6Addr,
    max_ttl: u8,
    policy: &ProbePolicy,
) -> Result<f64, BackboneError> {
    let trace = adapter.traceroute(addr, max_ttl, policy)?;
    final_rtt(&trace).ok_or(BackboneError::Unreachable(addr))
}

fn final_rtt(trace: &TracerouteResult) -> Option<f64> {
    if !trace.reached {
        return None;
    }
    trace.final_hop()?.median_rtt()
}

/// One-way latency between two routers as seen from the adapter's vantage:
/// half the difference of their direct-traceroute final-hop RTT medians.
pub fn measure_router_latency(
    adapter: &dyn ProbeAdapter,
    a: Ipv6Addr,
    b: Ipv6Addr,
    max_ttl: u8,
    policy: &ProbePolicy,
) -> Result<f64, BackboneError> {
    if a == b {
        return Ok(0.0);
    }
    let ra = direct_rtt(adapter, a, max_ttl, policy)?;
    let rb = direct_rtt(adapter, b, max_ttl, policy)?;
    Ok((rb - ra).abs() / 2.0)
}

/// Direct-traceroute RTT medians per router and vantage.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DirectRtts {
    pub vantages: Vec<String>,
    pub medians: BTreeMap<Ipv6Addr, Vec<Option<f64>>>,
}

impl DirectRtts {
    pub fn get(&self, vantage: usize, addr: Ipv6Addr) -> Option<f64> {
        *self.medians.get(&addr)?.get(vantage)?
    }

    /// One-way estimate between two routers from one vantage.
    pub fn estimate(&self, vantage: usize, a: Ipv6Addr, b: Ipv6Addr) -> Option<f64> {
        if a == b {
            return Some(0.0);
        }
        Some((self.get(vantage, b)? - self.get(vantage, a)?).abs() / 2.0)
    }

    /// Largest estimate over all vantages reaching both routers. By the
    /// triangle inequality this never exceeds the true one-way latency.
    pub fn lower_bound(&self, a: Ipv6Addr, b: Ipv6Addr) -> Option<f64> {
        (0..self.vantages.len()).filter_map(|v| self.estimate(v, a, b)).reduce(f64::max)
    }

    /// Pairwise matrix over `routers`; pairs no vantage can compare are
    /// infinitely far apart.
    pub fn matrix(&self, routers: &[Ipv6Addr]) -> Vec<Vec<f64>> {
        routers
            .iter()
            .map(|&a| routers.iter().map(|&b| self.lower_bound(a, b).unwrap_or(f64::INFINITY)).collect())
            .collect()
    }
}

/// A traceroute tagged with the index of its vantage.
#[derive(Debug, Clone, PartialEq)]
pub struct VantageTrace {
    pub vantage: usize,
    pub trace: TracerouteResult,
}

/// Tracing endpoint: a name and the adapter probing from it.
#[derive(Clone)]
pub struct VantagePoint {
    pub name: String,
    pub pop: Option<PopId>,
    pub adapter: Arc<dyn ProbeAdapter>,
}

#[derive(Debug, Clone)]
pub struct MapOptions {
    pub max_ttl: u8,
    pub min_evidence: u64,
    pub cluster_threshold_ms: f64,
    pub batch: BatchOptions,
}

impl Default for MapOptions {
    fn default() -> Self {
        Self {
            max_ttl: 32,
            min_evidence: DEFAULT_MIN_EVIDENCE,
            cluster_threshold_ms: DEFAULT_CLUSTER_THRESHOLD_MS,
            batch: BatchOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CoverageReport {
    pub vantages: Vec<String>,
    pub targets: usize,
    pub reached: usize,
    /// Reached traces whose backbone hop was anonymous or missing.
    pub backbone_hop_missing: usize,
    /// PoPs, among those expected or observed, hosting no vantage.
    pub pops_without_vantage: Vec<String>,
    /// Expected PoPs that no extracted router was attributed to.
    pub pops_unobserved: Vec<String>,
    pub routers: usize,
    pub routers_unresolved: usize,
    pub routers_ambiguous: usize,
    pub anomalies: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapOutcome {
    /// Sorted by address.
    pub routers: Vec<BackboneRouter>,
    pub graph: BackboneGraph,
    pub coverage: CoverageReport,
    pub rtts: DirectRtts,
}

fn trace_all(
    vantages: &[VantagePoint],
    targets: &[Ipv6Addr],
    policy: &ProbePolicy,
    options: &MapOptions,
) -> Result<Vec<VantageTrace>, BackboneError> {
    let mut out = Vec::new();
    for (vi, v) in vantages.iter().enumerate() {
        let op = ProbeOp::Traceroute { max_ttl: options.max_ttl };
        let mut traces = Vec::new();
        for item in run_batch(Arc::clone(&v.adapter), targets.to_vec(), op, policy, &options.batch)? {
            match item.result {
                Ok(ProbeReply::Trace(trace)) => traces.push(trace),
                Ok(_) | Err(ProbeError::Blocklisted(_)) => {}
                Err(e @ ProbeError::AdapterUnavailable(_)) => return Err(e.into()),
                Err(e) => warn!("traceroute {} -> {} failed: {e}", v.name, item.target),
            }
        }
        traces.sort_by_key(|t| t.target);
        out.extend(traces.into_iter().map(|trace| VantageTrace { vantage: vi, trace }));
    }
    Ok(out)
}

/// Full inference: trace every target from every vantage, extract and
/// attribute backbone routers, measure them directly, cluster the unnamed
/// ones and build the PoP graph. `expected_pops` (for example the home PoPs
/// of a user dataset) only feeds the coverage report.
pub fn map_backbone(
    vantages: &[VantagePoint],
    targets: &[Ipv6Addr],
    expected_pops: &BTreeSet<PopId>,
    policy: &ProbePolicy,
    options: &MapOptions,
) -> Result<MapOutcome, BackboneError> {
    if vantages.is_empty() {
        return Err(BackboneError::NoVantages);
    }
    policy.validate()?;
    let traces = trace_all(vantages, targets, policy, options)?;

    let mut evidence: BTreeMap<Ipv6Addr, Vec<String>> = BTreeMap::new();
    let mut coverage = CoverageReport {
        vantages: vantages.iter().map(|v| v.name.clone()).collect(),
        targets: targets.len(),
        ..CoverageReport::default()
    };
    for vt in &traces {
        match extract_backbone_router(&vt.trace) {
            Ok(Some(r)) => {
                coverage.reached += 1;
                evidence.entry(r).or_default().push(format!("{}:{}", vantages[vt.vantage].name, vt.trace.target));
            }
            Ok(None) => {
                coverage.reached += 1;
                coverage.backbone_hop_missing += 1;
            }
            Err(_) => {}
        }
    }
    let addrs: Vec<Ipv6Addr> = evidence.keys().copied().collect();
    info!("{} traces, {} backbone routers", traces.len(), addrs.len());

    // PTR attribution.
    let mut ptr: HashMap<Ipv6Addr, PtrAnswer> = HashMap::new();
    let adapter = Arc::clone(&vantages[0].adapter);
    let batch = BatchOptions { blocklist: Vec::new(), ..options.batch.clone() };
    for item in run_batch(adapter, addrs.clone(), ProbeOp::Ptr, policy, &batch)? {
        match item.result {
            Ok(ProbeReply::Ptr(a)) => {
                ptr.insert(item.target, a);
            }
            Ok(_) => {}
            Err(e @ ProbeError::AdapterUnavailable(_)) => return Err(e.into()),
            Err(e) => warn!("PTR lookup for {} failed: {e}", item.target),
        }
    }
    let routers: Vec<BackboneRouter> = addrs
        .iter()
        .map(|&a| {
            let mut r = attribute_from_ptr(a, ptr.get(&a).unwrap_or(&PtrAnswer::NxDomain));
            r.evidence = evidence[&a].clone();
            r
        })
        .collect();

    // Direct traceroutes to every router from every vantage.
    let mut rtts = DirectRtts {
        vantages: coverage.vantages.clone(),
        medians: addrs.iter().map(|&a| (a, vec![None; vantages.len()])).collect(),
    };
    for (vi, v) in vantages.iter().enumerate() {
        let op = ProbeOp::Traceroute { max_ttl: options.max_ttl };
        for item in run_batch(Arc::clone(&v.adapter), addrs.clone(), op, policy, &batch)? {
            match item.result {
                Ok(ProbeReply::Trace(t)) => rtts.medians.get_mut(&item.target).expect("router")[vi] = final_rtt(&t),
                Ok(_) => {}
                Err(e @ ProbeError::AdapterUnavailable(_)) => return Err(e.into()),
                Err(e) => warn!("direct traceroute {} -> {} failed: {e}", v.name, item.target),
            }
        }
    }

    let matrix = rtts.matrix(&addrs);
    let routers = cluster_unresolved(&routers, &matrix, options.cluster_threshold_ms)?;
    let router_pop: HashMap<Ipv6Addr, PopRef> = routers.iter().filter_map(|r| Some((r.addr, r.pop.clone()?))).collect();
    let graph = infer_edges(&traces, &router_pop, &rtts, options.min_evidence);

    coverage.routers = routers.len();
    coverage.routers_unresolved = routers.iter().filter(|r| r.attribution == Attribution::Unresolved).count();
    coverage.routers_ambiguous = routers.iter().filter(|r| r.ambiguous).count();
    coverage.anomalies = routers.iter().filter(|r| r.anomaly.is_some()).count();
    let vantage_pops: BTreeSet<&PopId> = vantages.iter().filter_map(|v| v.pop.as_ref()).collect();
    let observed: BTreeSet<&PopId> = graph
        .nodes
        .iter()
        .filter_map(|p| match p {
            PopRef::Known(id) => Some(id),
            PopRef::Synthetic(_) => None,
        })
        .collect();
    let all: BTreeSet<&PopId> = observed.iter().copied().chain(expected_pops).collect();
    coverage.pops_without_vantage = all.iter().filter(|p| !vantage_pops.contains(*p)).map(|p| p.to_string()).collect();
    coverage.pops_unobserved = expected_pops.iter().filter(|p| !observed.contains(p)).map(|p| p.to_string()).collect();
    Ok(MapOutcome { routers, graph, coverage, rtts })
}
