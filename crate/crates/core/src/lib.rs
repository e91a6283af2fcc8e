// SPDX-License-Identifier: Apache-2.0

//! Discovery of active user routers and PoP-level backbone mapping for a
//! satellite access network, driven by the operator's IPv6 addressing plan,
//! its GeoIP feed, reverse DNS, and traceroutes from vantage dishes.
//!
//! [`simnet`] provides a deterministic ground-truth network behind the same
//! [`probe::ProbeAdapter`] seam that the live adapter implements.

pub mod addressing;
pub mod backbone;
pub mod discovery;
pub mod geoip;
pub mod probe;
pub mod ptrmap;
pub mod simnet;

pub use addressing::{
    classify, generate_candidates, AddressError, AddressRole, GatewayCodecConfig, Ipv4Prefix, Ipv6Prefix,
};
pub use backbone::{
    export_graph, map_backbone, BackboneError, BackboneGraph, BackboneRouter, GraphDocument, MapOptions, MapOutcome,
    PopRef, VantagePoint,
};
pub use discovery::{compute_stats, DiscoveryError, ScanOptions, Stats, UserRecord};
pub use geoip::{Continent, GeoError, GeoIndex, GeoIpEntry, RegionKey};
pub use probe::{AdapterKind, ProbeAdapter, ProbeError, ProbePolicy, TracerouteResult};
pub use ptrmap::{parse_ptr, PopId, PtrClassification};
pub use simnet::{build_sim, SimAdapter, SimConfig, SimError, SimTopology};
