// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

use leomap::backbone::BackboneError;
use leomap::discovery::DiscoveryError;
use leomap::geoip::GeoError;
use leomap::probe::ProbeError;
use leomap::simnet::SimError;

/// Command failure, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags or configuration. Exit code 1.
    #[error("{0}")]
    Usage(String),
    /// Unreadable or malformed input data. Exit code 2.
    #[error("{0}")]
    Input(String),
    /// Probe adapter unavailable or failing. Exit code 3.
    #[error("{0}")]
    Adapter(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input(_) => 2,
            CliError::Adapter(_) => 3,
        }
    }
}

impl From<ProbeError> for CliError {
    fn from(e: ProbeError) -> Self {
        match e {
            ProbeError::InvalidPolicy(_) | ProbeError::InvalidMaxTtl(_) => CliError::Usage(e.to_string()),
            _ => CliError::Adapter(e.to_string()),
        }
    }
}

impl From<GeoError> for CliError {
    fn from(e: GeoError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::UnknownVantage(_) | SimError::Config(_) | SimError::InvalidTopology(_) => {
                CliError::Usage(e.to_string())
            }
            SimError::UnknownTarget(_) => CliError::Adapter(e.to_string()),
        }
    }
}

impl From<DiscoveryError> for CliError {
    fn from(e: DiscoveryError) -> Self {
        match e {
            DiscoveryError::Probe(p) => p.into(),
            DiscoveryError::EmptyInput => CliError::Input(e.to_string()),
            DiscoveryError::SchemaMismatch { .. } | DiscoveryError::Io(_) => CliError::Input(e.to_string()),
        }
    }
}

impl From<BackboneError> for CliError {
    fn from(e: BackboneError) -> Self {
        match e {
            BackboneError::Probe(p) => p.into(),
            BackboneError::NoVantages => CliError::Usage(e.to_string()),
            BackboneError::Sites { .. } => CliError::Input(e.to_string()),
            _ => CliError::Adapter(e.to_string()),
        }
    }
}
