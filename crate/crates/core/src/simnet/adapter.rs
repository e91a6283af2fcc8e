// SPDX-License-Identifier: Apache-2.0

use std::net::Ipv6Addr;
use std::sync::Arc;

use super::{SimError, SimTopology, Vantage};
use crate::probe::{
    check_max_ttl, AdapterKind, EchoOutcome, HopObservation, ProbeAdapter, ProbeError, ProbePolicy, PtrAnswer,
    TracerouteResult,
};

/// [`ProbeAdapter`] backed by a [`SimTopology`]. Traceroutes originate at the
/// configured vantage; adapters without one cannot trace.
#[derive(Debug, Clone)]
pub struct SimAdapter {
    topology: Arc<SimTopology>,
    vantage: Option<Vantage>,
}

impl SimAdapter {
    pub fn new(topology: Arc<SimTopology>) -> Self {
        Self { topology, vantage: None }
    }

    /// Adapter tracing from the named vantage (a configured name or PoP code).
    pub fn at_vantage(topology: Arc<SimTopology>, vantage: &str) -> Result<Self, SimError> {
        let vantage = topology.vantage(vantage)?;
        Ok(Self { topology, vantage: Some(vantage) })
    }

    pub fn topology(&self) -> &SimTopology {
        &self.topology
    }

    pub fn vantage(&self) -> Option<&Vantage> {
        self.vantage.as_ref()
    }
}

impl ProbeAdapter for SimAdapter {
    fn kind(&self) -> AdapterKind {
        AdapterKind::Sim
    }

    fn echo(&self, target: Ipv6Addr, policy: &ProbePolicy) -> Result<EchoOutcome, ProbeError> {
        Ok(self.topology.answer_echo(target, policy.echo_attempts))
    }

    fn traceroute(&self, target: Ipv6Addr, max_ttl: u8, policy: &ProbePolicy) -> Result<TracerouteResult, ProbeError> {
        check_max_ttl(max_ttl)?;
        let vantage = self
            .vantage
            .as_ref()
            .ok_or_else(|| ProbeError::AdapterUnavailable("simulated traceroute needs a vantage".into()))?;
        match self.topology.answer_traceroute(vantage, target, max_ttl, policy.samples_per_hop()) {
            Ok(trace) => Ok(trace),
            Err(SimError::UnknownTarget(_)) => Ok(TracerouteResult {
                target,
                hops: (1..=max_ttl).map(HopObservation::anonymous).collect(),
                reached: false,
            }),
            Err(e) => Err(ProbeError::AdapterUnavailable(e.to_string())),
        }
    }

    fn resolve_ptr(&self, addr: Ipv6Addr, _policy: &ProbePolicy) -> Result<PtrAnswer, ProbeError> {
        Ok(self.topology.answer_ptr(addr).map_or(PtrAnswer::NxDomain, PtrAnswer::Name))
    }
}
