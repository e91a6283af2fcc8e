// SPDX-License-Identifier: Apache-2.0

//! Deterministic ground-truth network.
//!
//! A simulated path from a vantage dish to a target runs
//! `vantage gateway -> routers of each transited PoP -> target gateway ->
//! target`. Inside a PoP a packet visits the router it entered on and, if
//! different, the router it leaves from. PoP-level routes minimize the sum of
//! link delays; ties go to the lexicographically smaller PoP code sequence.
//!
//! Every RTT sample is `2 * one_way + inflation + jitter`, where inflation
//! applies only to backbone routers answering as intermediate hops. All
//! randomness is derived from the seed and the query content, so answers do
//! not depend on call order or thread scheduling.

mod adapter;
pub mod config;

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::net::Ipv6Addr;

use chrono::{DateTime, Utc};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::addressing::{
    decimal_gateway_addresses, default_pop_blocks, is_user_router_pattern, GatewayCodecConfig, Ipv6Prefix,
    USER_PREFIX_LEN,
};
use crate::geoip::GeoIpEntry;
use crate::probe::{EchoOutcome, HopObservation, TracerouteResult};
use crate::ptrmap::{customer_name, pop_host_name, PopId};

pub use adapter::SimAdapter;
pub use config::{
    AllocationConfig, FaultConfig, GatewayConfig, LinkConfig, LossConfig, PopConfig, SimConfig, VantageConfig,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("cannot parse topology config: {0}")]
    Config(String),
    #[error("{0} is not part of the simulated network")]
    UnknownTarget(Ipv6Addr),
    #[error("unknown vantage {0:?}")]
    UnknownVantage(String),
}

fn invalid(msg: impl Into<String>) -> SimError {
    SimError::InvalidTopology(msg.into())
}

// splitmix64 finalizer; mixes query content into independent streams.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn key(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5eed_u64, |acc, p| mix(acc ^ p))
}

fn addr_words(a: Ipv6Addr) -> [u64; 2] {
    let b = u128::from(a);
    [(b >> 64) as u64, b as u64]
}

fn str_word(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325_u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3))
}

/// Uniform in [0, 1).
fn unit(k: u64) -> f64 {
    (mix(k) >> 11) as f64 / (1u64 << 53) as f64
}

const TAG_SILENT: u64 = 1;
const TAG_PTR: u64 = 2;
const TAG_LOSS: u64 = 3;
const TAG_ANON: u64 = 4;
const TAG_JITTER: u64 = 5;
const TAG_ALLOC: u64 = 6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimPop {
    pub id: PopId,
    pub label: String,
    pub lat: Option<f64>,
    pub lon: Option<f64>,
    pub routers: Vec<Ipv6Addr>,
    pub router_labels: Vec<String>,
    pub mpls_inflation_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimLink {
    pub a: PopId,
    pub b: PopId,
    pub one_way_delay_ms: f64,
    pub a_router: usize,
    pub b_router: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimGateway {
    pub addr: Ipv6Addr,
    pub pop: PopId,
    pub router: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimUser {
    pub addr: Ipv6Addr,
    pub pop: PopId,
    pub geo: GeoIpEntry,
    pub gateway: Ipv6Addr,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Vantage {
    pub name: String,
    pub pop: PopId,
    pub gateway: Ipv6Addr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Node {
    User(usize),
    Gateway(usize),
    Router { pop: usize, index: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum HopKind {
    Gateway,
    Router,
    Target,
}

#[derive(Debug, Clone, Copy)]
struct PathHop {
    addr: Ipv6Addr,
    one_way_ms: f64,
    kind: HopKind,
    inflation_ms: f64,
}

/// Fully materialized simulated network. Immutable after [`build_sim`].
#[derive(Debug, Clone)]
pub struct SimTopology {
    pub pops: Vec<SimPop>,
    pub links: Vec<SimLink>,
    pub gateways: Vec<SimGateway>,
    pub users: Vec<SimUser>,
    pub vantages: Vec<Vantage>,
    pub allocations: Vec<GeoIpEntry>,
    pub rng_seed: u64,
    pub snapshot: DateTime<Utc>,
    pub mpls_inflation_ms: f64,
    pub jitter_ms: f64,
    pub intra_pop_delay_ms: f64,
    pub access_delay_ms: f64,
    pub gateway_delay_ms: f64,
    anonymous_hop_rate: f64,
    silent: HashSet<Ipv6Addr>,
    no_ptr: HashSet<Ipv6Addr>,
    gateway_ptr: bool,
    loss: HashMap<Ipv6Addr, f64>,
    loss_rate: f64,
    pop_index: HashMap<PopId, usize>,
    nodes: HashMap<Ipv6Addr, Node>,
    /// (neighbor pop, link index) per pop.
    adjacency: Vec<Vec<(usize, usize)>>,
    /// routes[src][dst] = pop index sequence from src to dst.
    routes: Vec<Vec<Vec<usize>>>,
}

/// PoP router address: `2620:134:b0ff::/116` (then the second block) with the
/// PoP ordinal in bits 117..=124 and the router ordinal below it.
fn auto_router_addr(pop: usize, router: usize) -> Option<Ipv6Addr> {
    let blocks = default_pop_blocks();
    if router >= 15 {
        return None;
    }
    let (block, slot) = (pop / 255, pop % 255);
    let base = blocks.get(block)?;
    Some(Ipv6Addr::from(u128::from(base.base()) | ((slot as u128 + 1) << 4) | (router as u128 + 1)))
}

pub fn build_sim_from_toml(text: &str) -> Result<SimTopology, SimError> {
    let config = SimConfig::from_toml(text).map_err(|e| SimError::Config(e.to_string()))?;
    build_sim(&config)
}

pub fn build_sim(config: &SimConfig) -> Result<SimTopology, SimError> {
    let seed = config.seed;
    let snapshot = DateTime::parse_from_rfc3339(&config.snapshot)
        .map_err(|e| invalid(format!("snapshot {:?}: {e}", config.snapshot)))?
        .with_timezone(&Utc);
    for (name, v) in [
        ("mpls_inflation_ms", config.mpls_inflation_ms),
        ("jitter_ms", config.jitter_ms),
        ("intra_pop_delay_ms", config.intra_pop_delay_ms),
        ("access_delay_ms", config.access_delay_ms),
        ("gateway_delay_ms", config.gateway_delay_ms),
    ] {
        if !v.is_finite() || v < 0.0 {
            return Err(invalid(format!("{name} must be finite and non-negative")));
        }
    }
    let faults = &config.faults;
    for (name, v) in [
        ("silent_user_rate", faults.silent_user_rate),
        ("suppressed_router_ptr_rate", faults.suppressed_router_ptr_rate),
        ("suppressed_user_ptr_rate", faults.suppressed_user_ptr_rate),
        ("anonymous_hop_rate", faults.anonymous_hop_rate),
        ("loss_rate", faults.loss_rate),
    ] {
        if !(0.0..=1.0).contains(&v) {
            return Err(invalid(format!("{name} must lie in [0, 1]")));
        }
    }
    if config.pops.is_empty() {
        return Err(invalid("no PoPs"));
    }

    // PoPs sorted by code so index order is code order.
    let mut pop_cfgs: Vec<&PopConfig> = config.pops.iter().collect();
    pop_cfgs.sort_by(|a, b| a.code.cmp(&b.code));
    let mut pop_index = HashMap::new();
    let mut nodes: HashMap<Ipv6Addr, Node> = HashMap::new();
    let claim = |nodes: &mut HashMap<Ipv6Addr, Node>, addr: Ipv6Addr, node: Node| {
        if nodes.insert(addr, node).is_some() {
            Err(invalid(format!("address {addr} is used twice")))
        } else {
            Ok(())
        }
    };

    let mut pops = Vec::new();
    for (i, pc) in pop_cfgs.iter().enumerate() {
        if pop_index.insert(pc.code.clone(), i).is_some() {
            return Err(invalid(format!("duplicate PoP {}", pc.code)));
        }
        let routers: Vec<Ipv6Addr> = if pc.router_addrs.is_empty() {
            if pc.routers == 0 {
                return Err(invalid(format!("PoP {} has no routers", pc.code)));
            }
            (0..pc.routers)
                .map(|r| auto_router_addr(i, r).ok_or_else(|| invalid(format!("too many routers in {}", pc.code))))
                .collect::<Result<_, _>>()?
        } else {
            pc.router_addrs.clone()
        };
        let labels: Vec<String> = if pc.router_labels.is_empty() {
            (1..=routers.len()).map(|n| format!("edge{n}")).collect()
        } else if pc.router_labels.len() == routers.len() {
            pc.router_labels.clone()
        } else {
            return Err(invalid(format!(
                "PoP {} has {} router labels for {} routers",
                pc.code,
                pc.router_labels.len(),
                routers.len()
            )));
        };
        for (r, addr) in routers.iter().enumerate() {
            claim(&mut nodes, *addr, Node::Router { pop: i, index: r })?;
        }
        for (what, v) in [("lat", pc.lat), ("lon", pc.lon)] {
            if v.is_some_and(|x| !x.is_finite()) {
                return Err(invalid(format!("PoP {} has a non-finite {what}", pc.code)));
            }
        }
        let inflation = pc.mpls_inflation_ms.unwrap_or(config.mpls_inflation_ms);
        if !inflation.is_finite() || inflation < 0.0 {
            return Err(invalid(format!("PoP {} has a negative inflation", pc.code)));
        }
        pops.push(SimPop {
            id: pc.code.clone(),
            label: pc.label.clone(),
            lat: pc.lat,
            lon: pc.lon,
            routers,
            router_labels: labels,
            mpls_inflation_ms: inflation,
        });
    }
    let lookup_pop = |code: &PopId| pop_index.get(code).copied().ok_or_else(|| invalid(format!("unknown PoP {code}")));

    let mut links = Vec::new();
    let mut adjacency = vec![Vec::new(); pops.len()];
    let mut seen_pairs = HashSet::new();
    for (li, lc) in config.links.iter().enumerate() {
        let (a, b) = (lookup_pop(&lc.a)?, lookup_pop(&lc.b)?);
        if a == b {
            return Err(invalid(format!("link {li} is a self-loop at {}", lc.a)));
        }
        if !(lc.one_way_delay_ms.is_finite() && lc.one_way_delay_ms > 0.0) {
            return Err(invalid(format!("link {}-{} must have a positive delay", lc.a, lc.b)));
        }
        if !seen_pairs.insert((a.min(b), a.max(b))) {
            return Err(invalid(format!("duplicate link {}-{}", lc.a, lc.b)));
        }
        let a_router = lc.a_router.unwrap_or(li % pops[a].routers.len());
        let b_router = lc.b_router.unwrap_or(li % pops[b].routers.len());
        if a_router >= pops[a].routers.len() || b_router >= pops[b].routers.len() {
            return Err(invalid(format!("link {}-{} names a missing router", lc.a, lc.b)));
        }
        adjacency[a].push((b, links.len()));
        adjacency[b].push((a, links.len()));
        links.push(SimLink {
            a: lc.a.clone(),
            b: lc.b.clone(),
            one_way_delay_ms: lc.one_way_delay_ms,
            a_router,
            b_router,
        });
    }
    // Connectivity.
    let mut seen = vec![false; pops.len()];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(p) = queue.pop_front() {
        for &(q, _) in &adjacency[p] {
            if !seen[q] {
                seen[q] = true;
                queue.push_back(q);
            }
        }
    }
    if let Some(p) = seen.iter().position(|s| !s) {
        return Err(invalid(format!("PoP {} is disconnected from {}", pops[p].id, pops[0].id)));
    }

    let codec = GatewayCodecConfig::default();
    let mut gateways = Vec::new();
    if config.gateways.is_empty() {
        let mut pool = decimal_gateway_addresses(&codec);
        for (pi, pop) in pops.iter().enumerate() {
            for g in 0..config.gateways_per_pop {
                let addr = pool.next().ok_or_else(|| invalid("gateway address pool exhausted"))?;
                gateways.push(SimGateway { addr, pop: pop.id.clone(), router: g % pops[pi].routers.len() });
            }
        }
    } else {
        let mut per_pop = vec![0usize; pops.len()];
        for gc in &config.gateways {
            let pi = lookup_pop(&gc.pop)?;
            gateways.push(SimGateway {
                addr: gc.addr,
                pop: gc.pop.clone(),
                router: per_pop[pi] % pops[pi].routers.len(),
            });
            per_pop[pi] += 1;
        }
    }
    for (gi, g) in gateways.iter().enumerate() {
        claim(&mut nodes, g.addr, Node::Gateway(gi))?;
    }
    let mut pop_gateways: Vec<Vec<usize>> = vec![Vec::new(); pops.len()];
    for (gi, g) in gateways.iter().enumerate() {
        pop_gateways[pop_index[&g.pop]].push(gi);
    }

    let mut users = Vec::new();
    let mut allocations = Vec::new();
    let mut users_per_pop = vec![0usize; pops.len()];
    for (ai, ac) in config.allocations.iter().enumerate() {
        let pi = lookup_pop(&ac.pop)?;
        let geo = GeoIpEntry::new(ac.prefix, &ac.country, &ac.region_code, &ac.city)
            .map_err(|e| invalid(format!("allocation {}: {e}", ac.prefix)))?;
        if ac.prefix.len() > USER_PREFIX_LEN {
            return Err(invalid(format!("allocation {} is longer than /56", ac.prefix)));
        }
        if allocations.iter().any(|g: &GeoIpEntry| g.prefix == ac.prefix) {
            return Err(invalid(format!("allocation {} listed twice", ac.prefix)));
        }
        let span = u32::from(USER_PREFIX_LEN - ac.prefix.len());
        let slots = if span >= 63 { usize::MAX } else { 1usize << span };
        if ac.users > slots {
            return Err(invalid(format!("allocation {} holds at most {slots} users", ac.prefix)));
        }
        if ac.users > 0 && pop_gateways[pi].is_empty() {
            return Err(invalid(format!("PoP {} serves users but has no gateway", ac.pop)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(key(&[seed, TAG_ALLOC, ai as u64]));
        let mut picks = index::sample(&mut rng, slots, ac.users).into_vec();
        picks.sort_unstable();
        for slot in picks {
            let bits = u128::from(ac.prefix.base()) | ((slot as u128) << (128 - u32::from(USER_PREFIX_LEN))) | 1;
            let addr = Ipv6Addr::from(bits);
            debug_assert!(is_user_router_pattern(addr) && ac.prefix.contains(addr));
            let gw = pop_gateways[pi][users_per_pop[pi] % pop_gateways[pi].len()];
            users_per_pop[pi] += 1;
            claim(&mut nodes, addr, Node::User(users.len()))?;
            users.push(SimUser { addr, pop: ac.pop.clone(), geo: geo.clone(), gateway: gateways[gw].addr });
        }
        allocations.push(geo);
    }
    // Allocations must not overlap: the GeoIP view would be ambiguous.
    for (i, a) in allocations.iter().enumerate() {
        if let Some(b) = allocations[i + 1..].iter().find(|b| a.prefix.covers(&b.prefix) || b.prefix.covers(&a.prefix))
        {
            return Err(invalid(format!("allocations {} and {} overlap", a.prefix, b.prefix)));
        }
    }

    let mut vantages = Vec::new();
    for vc in &config.vantages {
        let pi = lookup_pop(&vc.pop)?;
        let gw = *pop_gateways[pi]
            .first()
            .ok_or_else(|| invalid(format!("vantage {} sits in a PoP without gateways", vc.name)))?;
        if vantages.iter().any(|v: &Vantage| v.name == vc.name) {
            return Err(invalid(format!("duplicate vantage {}", vc.name)));
        }
        vantages.push(Vantage { name: vc.name.clone(), pop: vc.pop.clone(), gateway: gateways[gw].addr });
    }

    // Fault sets.
    let mut silent: HashSet<Ipv6Addr> = faults.silent.iter().copied().collect();
    for u in &users {
        let [hi, lo] = addr_words(u.addr);
        if unit(key(&[seed, TAG_SILENT, hi, lo])) < faults.silent_user_rate {
            silent.insert(u.addr);
        }
    }
    let mut no_ptr: HashSet<Ipv6Addr> = faults.suppressed_ptrs.iter().copied().collect();
    let mut maybe_drop = |addr: Ipv6Addr, rate: f64| {
        let [hi, lo] = addr_words(addr);
        if unit(key(&[seed, TAG_PTR, hi, lo])) < rate {
            no_ptr.insert(addr);
        }
    };
    for u in &users {
        maybe_drop(u.addr, faults.suppressed_user_ptr_rate);
    }
    for p in &pops {
        for r in &p.routers {
            maybe_drop(*r, faults.suppressed_router_ptr_rate);
        }
    }
    let mut loss = HashMap::new();
    for l in &faults.loss {
        if !(0.0..=1.0).contains(&l.rate) {
            return Err(invalid(format!("loss rate for {} must lie in [0, 1]", l.addr)));
        }
        loss.insert(l.addr, l.rate);
    }

    let mut topo = SimTopology {
        pops,
        links,
        gateways,
        users,
        vantages,
        allocations,
        rng_seed: seed,
        snapshot,
        mpls_inflation_ms: config.mpls_inflation_ms,
        jitter_ms: config.jitter_ms,
        intra_pop_delay_ms: config.intra_pop_delay_ms,
        access_delay_ms: config.access_delay_ms,
        gateway_delay_ms: config.gateway_delay_ms,
        anonymous_hop_rate: faults.anonymous_hop_rate,
        silent,
        no_ptr,
        gateway_ptr: config.gateway_ptr,
        loss,
        loss_rate: faults.loss_rate,
        pop_index,
        nodes,
        adjacency,
        routes: Vec::new(),
    };
    topo.routes = (0..topo.pops.len()).map(|s| topo.shortest_routes(s)).collect();
    Ok(topo)
}

/// Link delays in integer microseconds so that equal-cost ties are exact.
fn delay_us(ms: f64) -> u64 {
    (ms * 1000.0).round() as u64
}

impl SimTopology {
    /// Dijkstra ordered by (delay, PoP index sequence).
    fn shortest_routes(&self, src: usize) -> Vec<Vec<usize>> {
        let n = self.pops.len();
        let mut best: Vec<Option<(u64, Vec<usize>)>> = vec![None; n];
        let mut done = vec![false; n];
        best[src] = Some((0, vec![src]));
        loop {
            let next = (0..n)
                .filter(|&v| !done[v] && best[v].is_some())
                .min_by(|&x, &y| best[x].as_ref().unwrap().cmp(best[y].as_ref().unwrap()));
            let Some(u) = next else { break };
            done[u] = true;
            let (du, pu) = best[u].clone().unwrap();
            for &(v, li) in &self.adjacency[u] {
                if done[v] {
                    continue;
                }
                let mut path = pu.clone();
                path.push(v);
                let cand = (du + delay_us(self.links[li].one_way_delay_ms), path);
                if best[v].as_ref().is_none_or(|b| cand < *b) {
                    best[v] = Some(cand);
                }
            }
        }
        best.into_iter().map(|b| b.map(|(_, p)| p).unwrap_or_default()).collect()
    }

    fn link_between(&self, a: usize, b: usize) -> &SimLink {
        let li = self.adjacency[a].iter().find(|(q, _)| *q == b).map(|(_, li)| *li).expect("adjacent PoPs");
        &self.links[li]
    }

    /// Router index in `pop` terminating the link towards `other`.
    fn link_router(&self, pop: usize, other: usize) -> usize {
        let link = self.link_between(pop, other);
        if link.a == self.pops[pop].id {
            link.a_router
        } else {
            link.b_router
        }
    }

    pub fn pop_index(&self, pop: &PopId) -> Option<usize> {
        self.pop_index.get(pop).copied()
    }

    pub fn pop(&self, pop: &PopId) -> Option<&SimPop> {
        self.pop_index(pop).map(|i| &self.pops[i])
    }

    /// PoP-level route between two PoPs, endpoints included.
    pub fn route(&self, from: &PopId, to: &PopId) -> Option<Vec<PopId>> {
        let (s, t) = (self.pop_index(from)?, self.pop_index(to)?);
        Some(self.routes[s][t].iter().map(|&i| self.pops[i].id.clone()).collect())
    }

    pub fn vantage(&self, name: &str) -> Result<Vantage, SimError> {
        if let Some(v) = self.vantages.iter().find(|v| v.name == name) {
            return Ok(v.clone());
        }
        // A PoP code names a dish at that PoP's first gateway.
        let pop: PopId = name.parse().map_err(|_| SimError::UnknownVantage(name.to_string()))?;
        let gw =
            self.gateways.iter().find(|g| g.pop == pop).ok_or_else(|| SimError::UnknownVantage(name.to_string()))?;
        Ok(Vantage { name: name.to_string(), pop, gateway: gw.addr })
    }

    fn gateway_index(&self, addr: Ipv6Addr) -> Option<usize> {
        match self.nodes.get(&addr) {
            Some(Node::Gateway(g)) => Some(*g),
            _ => None,
        }
    }

    fn path_to(&self, vantage: &Vantage, target: Ipv6Addr) -> Result<Vec<PathHop>, SimError> {
        let node = *self.nodes.get(&target).ok_or(SimError::UnknownTarget(target))?;
        let vg = self.gateway_index(vantage.gateway).ok_or_else(|| SimError::UnknownVantage(vantage.name.clone()))?;
        let src = self.pop_index[&vantage.pop];
        let (dst, final_router, tail): (usize, usize, Vec<Ipv6Addr>) = match node {
            Node::User(u) => {
                let g = self.gateway_index(self.users[u].gateway).expect("user gateway");
                (self.pop_index[&self.gateways[g].pop], self.gateways[g].router, vec![self.gateways[g].addr, target])
            }
            Node::Gateway(g) => (self.pop_index[&self.gateways[g].pop], self.gateways[g].router, vec![target]),
            Node::Router { pop, index } => (pop, index, Vec::new()),
        };

        let mut hops = Vec::new();
        let mut one_way = self.access_delay_ms;
        hops.push(PathHop { addr: vantage.gateway, one_way_ms: one_way, kind: HopKind::Gateway, inflation_ms: 0.0 });
        one_way += self.gateway_delay_ms;

        let route = &self.routes[src][dst];
        let mut entry = self.gateways[vg].router;
        for (k, &p) in route.iter().enumerate() {
            let exit = match route.get(k + 1) {
                Some(&next) => self.link_router(p, next),
                None => final_router,
            };
            let pop = &self.pops[p];
            let mut visit = vec![entry];
            if exit != entry {
                visit.push(exit);
            }
            for (i, r) in visit.into_iter().enumerate() {
                if i > 0 {
                    one_way += self.intra_pop_delay_ms;
                }
                hops.push(PathHop {
                    addr: pop.routers[r],
                    one_way_ms: one_way,
                    kind: HopKind::Router,
                    inflation_ms: pop.mpls_inflation_ms,
                });
            }
            if let Some(&next) = route.get(k + 1) {
                one_way += self.link_between(p, next).one_way_delay_ms;
                entry = self.link_router(next, p);
            }
        }
        let mut tail = tail.into_iter().peekable();
        if tail.peek().is_some() {
            one_way += self.gateway_delay_ms;
        }
        while let Some(addr) = tail.next() {
            let kind = if tail.peek().is_some() { HopKind::Gateway } else { HopKind::Target };
            hops.push(PathHop { addr, one_way_ms: one_way, kind, inflation_ms: 0.0 });
            one_way += self.access_delay_ms;
        }
        if let Some(last) = hops.last_mut() {
            last.kind = HopKind::Target;
        }
        Ok(hops)
    }

    fn is_responsive(&self, addr: Ipv6Addr) -> bool {
        self.nodes.contains_key(&addr) && !self.silent.contains(&addr)
    }

    pub fn answer_echo(&self, addr: Ipv6Addr, attempts: u32) -> EchoOutcome {
        if !self.is_responsive(addr) {
            return EchoOutcome::Silent;
        }
        let rate = self.loss.get(&addr).copied().unwrap_or(self.loss_rate);
        let [hi, lo] = addr_words(addr);
        let answered =
            (0..attempts).any(|a| rate <= 0.0 || unit(key(&[self.rng_seed, TAG_LOSS, hi, lo, u64::from(a)])) >= rate);
        if answered {
            EchoOutcome::Alive
        } else {
            EchoOutcome::Silent
        }
    }

    /// Name published for `addr`, honouring suppression faults.
    pub fn answer_ptr(&self, addr: Ipv6Addr) -> Option<String> {
        if self.no_ptr.contains(&addr) {
            return None;
        }
        match *self.nodes.get(&addr)? {
            Node::User(u) => Some(customer_name(&self.users[u].pop)),
            Node::Router { pop, index } => {
                Some(pop_host_name(&self.pops[pop].router_labels[index], &self.pops[pop].id))
            }
            Node::Gateway(g) => {
                let gw = &self.gateways[g];
                let seg = (u128::from(gw.addr) >> 64) as u16;
                let host = u128::from(gw.addr) as u16;
                self.gateway_ptr.then(|| pop_host_name(&format!("gw-{seg:x}-{host:x}"), &gw.pop))
            }
        }
    }

    /// Synthesized traceroute from a vantage. Unknown targets are an error;
    /// silent targets produce an unreached trace padded to `max_ttl`.
    pub fn answer_traceroute(
        &self,
        vantage: &Vantage,
        target: Ipv6Addr,
        max_ttl: u8,
        samples: usize,
    ) -> Result<TracerouteResult, SimError> {
        let path = self.path_to(vantage, target)?;
        let vkey = str_word(&vantage.name);
        let [hi, lo] = addr_words(target);
        let mut hops = Vec::new();
        let mut reached = false;
        for ttl in 1..=max_ttl {
            let Some(hop) = path.get(usize::from(ttl) - 1) else {
                hops.push(HopObservation::anonymous(ttl));
                continue;
            };
            let responds = match hop.kind {
                HopKind::Target => self.is_responsive(hop.addr),
                _ => {
                    self.is_responsive(hop.addr)
                        && unit(key(&[self.rng_seed, TAG_ANON, vkey, hi, lo, u64::from(ttl)]))
                            >= self.anonymous_hop_rate
                }
            };
            if !responds {
                hops.push(HopObservation::anonymous(ttl));
                continue;
            }
            let inflation = if hop.kind == HopKind::Router { hop.inflation_ms } else { 0.0 };
            let base = 2.0 * hop.one_way_ms + inflation;
            let rtt_samples = (0..samples)
                .map(|s| {
                    let jitter = if self.jitter_ms > 0.0 {
                        let u = unit(key(&[self.rng_seed, TAG_JITTER, vkey, hi, lo, u64::from(ttl), s as u64]));
                        (2.0 * u - 1.0) * self.jitter_ms
                    } else {
                        0.0
                    };
                    (base + jitter).max(0.0)
                })
                .collect();
            hops.push(HopObservation { ttl, responder: Some(hop.addr), rtt_samples });
            if hop.kind == HopKind::Target {
                reached = true;
                break;
            }
        }
        Ok(TracerouteResult { target, hops, reached })
    }

    /// The GeoIP feed the operator would publish for this network.
    pub fn geoip_feed(&self) -> Vec<GeoIpEntry> {
        self.allocations.clone()
    }

    pub fn is_router(&self, addr: Ipv6Addr) -> bool {
        matches!(self.nodes.get(&addr), Some(Node::Router { .. }))
    }

    /// Home PoP of a router, gateway or user address.
    pub fn pop_of(&self, addr: Ipv6Addr) -> Option<&PopId> {
        match *self.nodes.get(&addr)? {
            Node::User(u) => Some(&self.users[u].pop),
            Node::Gateway(g) => Some(&self.gateways[g].pop),
            Node::Router { pop, .. } => Some(&self.pops[pop].id),
        }
    }

    pub fn ground_truth(&self) -> GroundTruth {
        let mut active_users: Vec<TruthUser> = self
            .users
            .iter()
            .filter(|u| !self.silent.contains(&u.addr))
            .map(|u| TruthUser {
                addr: u.addr,
                pop: u.pop.clone(),
                allocation: u.geo.prefix,
                has_ptr: !self.no_ptr.contains(&u.addr),
            })
            .collect();
        active_users.sort_by_key(|u| u.addr);
        let mut links: Vec<TruthLink> = self
            .links
            .iter()
            .map(|l| {
                let (a, b) = if l.a <= l.b { (l.a.clone(), l.b.clone()) } else { (l.b.clone(), l.a.clone()) };
                TruthLink { a, b, one_way_delay_ms: l.one_way_delay_ms }
            })
            .collect();
        links.sort_by(|x, y| (&x.a, &x.b).cmp(&(&y.a, &y.b)));
        GroundTruth {
            seed: self.rng_seed,
            pops: self
                .pops
                .iter()
                .map(|p| TruthPop {
                    pop: p.id.clone(),
                    label: p.label.clone(),
                    lat: p.lat,
                    lon: p.lon,
                    routers: p
                        .routers
                        .iter()
                        .map(|r| TruthRouter { addr: *r, has_ptr: !self.no_ptr.contains(r) })
                        .collect(),
                })
                .collect(),
            links,
            gateways: self.gateways.iter().map(|g| TruthGateway { addr: g.addr, pop: g.pop.clone() }).collect(),
            active_users,
        }
    }

    /// PoP graph edges as unordered code pairs.
    pub fn edge_set(&self) -> BTreeSet<(PopId, PopId)> {
        self.links
            .iter()
            .map(|l| if l.a <= l.b { (l.a.clone(), l.b.clone()) } else { (l.b.clone(), l.a.clone()) })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthUser {
    pub addr: Ipv6Addr,
    pub pop: PopId,
    pub allocation: Ipv6Prefix,
    pub has_ptr: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthRouter {
    pub addr: Ipv6Addr,
    pub has_ptr: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthPop {
    pub pop: PopId,
    pub label: String,
    pub lat: Option<f64>,
    pub lon: Option<f64>,
    pub routers: Vec<TruthRouter>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthLink {
    pub a: PopId,
    pub b: PopId,
    pub one_way_delay_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthGateway {
    pub addr: Ipv6Addr,
    pub pop: PopId,
}

/// Machine-readable ground truth for test harnesses.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub pops: Vec<TruthPop>,
    pub links: Vec<TruthLink>,
    pub gateways: Vec<TruthGateway>,
    pub active_users: Vec<TruthUser>,
}

impl GroundTruth {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ground truth serializes")
    }
}
