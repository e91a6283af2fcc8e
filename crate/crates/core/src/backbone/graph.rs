// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::BufRead;
use std::net::Ipv6Addr;

use serde::Serialize;

use super::{BackboneError, DirectRtts, PopRef, VantageTrace};
use crate::probe::median;
use crate::ptrmap::PopId;

pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Great-circle distance between two points given in degrees.
pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphEdge {
    pub a: PopRef,
    pub b: PopRef,
    pub one_way_delay_ms: f64,
    pub evidence: u64,
}

/// Undirected PoP graph; edges are keyed by `a < b` and sorted.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BackboneGraph {
    pub nodes: BTreeSet<PopRef>,
    pub edges: Vec<GraphEdge>,
}

impl BackboneGraph {
    pub fn edge(&self, a: &PopRef, b: &PopRef) -> Option<&GraphEdge> {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        self.edges.iter().find(|e| &e.a == a && &e.b == b)
    }

    pub fn edge_set(&self) -> BTreeSet<(PopRef, PopRef)> {
        self.edges.iter().map(|e| (e.a.clone(), e.b.clone())).collect()
    }
}

/// A router pair seen adjacent from one vantage.
type RouterPair = (usize, Ipv6Addr, Ipv6Addr);

/// Builds the PoP graph from consecutive responders that are both mapped
/// backbone routers in different PoPs. Pairs separated by an anonymous hop
/// do not count. Edges need `min_evidence` observations; their delay is the
/// median of the per-(vantage, router pair) estimates from `rtts`, or NaN
/// when no estimate exists.
pub fn infer_edges(
    traces: &[VantageTrace],
    router_pop: &HashMap<Ipv6Addr, PopRef>,
    rtts: &DirectRtts,
    min_evidence: u64,
) -> BackboneGraph {
    let mut nodes = BTreeSet::new();
    let mut evidence: BTreeMap<(PopRef, PopRef), u64> = BTreeMap::new();
    let mut pairs: BTreeMap<(PopRef, PopRef), BTreeSet<RouterPair>> = BTreeMap::new();
    for vt in traces {
        let hops = &vt.trace.hops;
        for h in hops {
            if let Some(p) = h.responder.and_then(|a| router_pop.get(&a)) {
                nodes.insert(p.clone());
            }
        }
        for w in hops.windows(2) {
            let (Some(ra), Some(rb)) = (w[0].responder, w[1].responder) else { continue };
            let (Some(pa), Some(pb)) = (router_pop.get(&ra), router_pop.get(&rb)) else { continue };
            if pa == pb {
                continue;
            }
            let key = if pa < pb { (pa.clone(), pb.clone()) } else { (pb.clone(), pa.clone()) };
            *evidence.entry(key.clone()).or_default() += 1;
            pairs.entry(key).or_default().insert((vt.vantage, ra.min(rb), ra.max(rb)));
        }
    }
    let edges = evidence
        .into_iter()
        .filter(|&(_, n)| n >= min_evidence)
        .map(|(key, n)| {
            let estimates: Vec<f64> = pairs[&key].iter().filter_map(|&(v, ra, rb)| rtts.estimate(v, ra, rb)).collect();
            GraphEdge { a: key.0, b: key.1, one_way_delay_ms: median(&estimates).unwrap_or(f64::NAN), evidence: n }
        })
        .collect();
    BackboneGraph { nodes, edges }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Site {
    pub pop: PopId,
    pub label: String,
    pub lat: Option<f64>,
    pub lon: Option<f64>,
}

/// Site table CSV: `pop,label,lat,lon`, header optional, blank coordinates
/// allowed.
pub fn load_sites<R: BufRead>(source: R) -> Result<BTreeMap<PopId, Site>, BackboneError> {
    let mut sites = BTreeMap::new();
    for (i, line) in source.lines().enumerate() {
        let line = line.map_err(|e| BackboneError::Sites { line: i + 1, message: e.to_string() })?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (i == 0 && line.starts_with("pop,")) {
            continue;
        }
        let bad = |message: String| BackboneError::Sites { line: i + 1, message };
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 4 {
            return Err(bad(format!("expected 4 columns, found {}", cols.len())));
        }
        let pop: PopId = cols[0].parse().map_err(|e| bad(format!("{e}")))?;
        let coord = |s: &str, limit: f64| -> Result<Option<f64>, BackboneError> {
            if s.is_empty() {
                return Ok(None);
            }
            match s.parse::<f64>() {
                Ok(v) if v.abs() <= limit => Ok(Some(v)),
                _ => Err(bad(format!("bad coordinate {s:?}"))),
            }
        };
        let (lat, lon) = (coord(cols[2], 90.0)?, coord(cols[3], 180.0)?);
        sites.insert(pop.clone(), Site { pop, label: cols[1].to_string(), lat, lon });
    }
    Ok(sites)
}

pub fn render_sites_csv<'a, I: IntoIterator<Item = &'a Site>>(sites: I) -> String {
    let mut out = String::from("pop,label,lat,lon\n");
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for s in sites {
        out += &format!("{},{},{},{}\n", s.pop, s.label, fmt(s.lat), fmt(s.lon));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeDoc {
    pub pop: String,
    pub label: Option<String>,
    pub lat: Option<f64>,
    pub lon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeDoc {
    pub a: String,
    pub b: String,
    pub one_way_delay_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distance_km: Option<f64>,
    pub evidence: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GraphDocument {
    pub nodes: Vec<NodeDoc>,
    pub edges: Vec<EdgeDoc>,
}

impl GraphDocument {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes") + "\n"
    }
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

/// Annotates the graph with site labels and great-circle distances. Delays
/// and distances are rounded to microseconds and metres.
pub fn export_graph(graph: &BackboneGraph, sites: &BTreeMap<PopId, Site>) -> GraphDocument {
    let site = |p: &PopRef| match p {
        PopRef::Known(id) => sites.get(id),
        PopRef::Synthetic(_) => None,
    };
    let coords = |p: &PopRef| site(p).and_then(|s| Some((s.lat?, s.lon?)));
    GraphDocument {
        nodes: graph
            .nodes
            .iter()
            .map(|p| NodeDoc {
                pop: p.to_string(),
                label: site(p).map(|s| s.label.clone()),
                lat: site(p).and_then(|s| s.lat),
                lon: site(p).and_then(|s| s.lon),
            })
            .collect(),
        edges: graph
            .edges
            .iter()
            .map(|e| EdgeDoc {
                a: e.a.to_string(),
                b: e.b.to_string(),
                one_way_delay_ms: e.one_way_delay_ms.is_finite().then(|| round3(e.one_way_delay_ms)),
                distance_km: coords(&e.a)
                    .zip(coords(&e.b))
                    .map(|((la, oa), (lb, ob))| round3(haversine_km(la, oa, lb, ob))),
                evidence: e.evidence,
            })
            .collect(),
    }
}
