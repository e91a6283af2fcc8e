// SPDX-License-Identifier: Apache-2.0

//! TOML topology description for the simulator.
//!
//! ```toml
//! seed = 7
//! mpls_inflation_ms = 30.0
//!
//! [[pops]]
//! code = "sttlwax1"
//! label = "Seattle"
//! lat = 47.6062
//! lon = -122.3321
//! routers = 2
//!
//! [[links]]
//! a = "sttlwax1"
//! b = "chcoilx1"
//! one_way_delay_ms = 22.0
//!
//! [[allocations]]
//! prefix = "2605:59c8::/44"
//! country = "US"
//! region_code = "US-WA"
//! city = "Seattle"
//! pop = "sttlwax1"
//! users = 250
//! ```

use std::net::Ipv6Addr;

use serde::{Deserialize, Serialize};

use crate::addressing::Ipv6Prefix;
use crate::ptrmap::PopId;

fn one() -> usize {
    1
}

fn default_intra_pop_delay() -> f64 {
    1.0
}

fn default_access_delay() -> f64 {
    15.0
}

fn default_gateway_delay() -> f64 {
    1.0
}

fn default_snapshot() -> String {
    "2024-11-25T00:00:00Z".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub seed: u64,
    /// Timestamp stamped on records discovered in the simulated network.
    #[serde(default = "default_snapshot")]
    pub snapshot: String,
    /// Extra RTT reported by backbone routers answering as intermediate hops.
    #[serde(default)]
    pub mpls_inflation_ms: f64,
    /// Uniform jitter half-width applied to every RTT sample.
    #[serde(default)]
    pub jitter_ms: f64,
    #[serde(default = "default_intra_pop_delay")]
    pub intra_pop_delay_ms: f64,
    /// One-way delay between a dish and its gateway.
    #[serde(default = "default_access_delay")]
    pub access_delay_ms: f64,
    /// One-way delay between a gateway and the PoP router it hangs off.
    #[serde(default = "default_gateway_delay")]
    pub gateway_delay_ms: f64,
    /// Publish PTR records for gateways.
    #[serde(default)]
    pub gateway_ptr: bool,
    /// Gateways generated per PoP when `gateways` is empty.
    #[serde(default = "one")]
    pub gateways_per_pop: usize,
    #[serde(default)]
    pub faults: FaultConfig,
    pub pops: Vec<PopConfig>,
    #[serde(default)]
    pub links: Vec<LinkConfig>,
    #[serde(default)]
    pub gateways: Vec<GatewayConfig>,
    #[serde(default)]
    pub allocations: Vec<AllocationConfig>,
    #[serde(default)]
    pub vantages: Vec<VantageConfig>,
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopConfig {
    pub code: PopId,
    #[serde(default)]
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lon: Option<f64>,
    /// Number of backbone routers, used when `router_addrs` is empty.
    #[serde(default = "one")]
    pub routers: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub router_addrs: Vec<Ipv6Addr>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub router_labels: Vec<String>,
    /// Overrides the global inflation for this PoP's routers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mpls_inflation_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub a: PopId,
    pub b: PopId,
    pub one_way_delay_ms: f64,
    /// Router index inside `a` terminating the link.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_router: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_router: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    pub addr: Ipv6Addr,
    pub pop: PopId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocationConfig {
    pub prefix: Ipv6Prefix,
    pub country: String,
    #[serde(default)]
    pub region_code: String,
    #[serde(default)]
    pub city: String,
    pub pop: PopId,
    /// Users provisioned on distinct /56 sub-prefixes chosen by the seed.
    #[serde(default)]
    pub users: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VantageConfig {
    pub name: String,
    pub pop: PopId,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultConfig {
    /// Provisioned users that never answer.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub silent: Vec<Ipv6Addr>,
    #[serde(default)]
    pub silent_user_rate: f64,
    /// Addresses whose PTR record is withheld.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub suppressed_ptrs: Vec<Ipv6Addr>,
    #[serde(default)]
    pub suppressed_router_ptr_rate: f64,
    #[serde(default)]
    pub suppressed_user_ptr_rate: f64,
    /// Probability that an intermediate hop does not answer a given trace.
    #[serde(default)]
    pub anonymous_hop_rate: f64,
    /// Per-address echo loss probability.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loss: Vec<LossConfig>,
    #[serde(default)]
    pub loss_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub addr: Ipv6Addr,
    pub rate: f64,
}
