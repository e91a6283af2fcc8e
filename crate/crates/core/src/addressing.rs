// SPDX-License-Identifier: Apache-2.0

//! Address arithmetic for the operator's IPv6 plan.
//!
//! Bit positions follow the 1-based, most-significant-first convention:
//! bit 1 is the top bit of the first octet and bit 128 is the lowest bit of
//! the address. A user router owns a delegated /56 and answers on the address
//! whose bits 57 through 127 are zero and whose bit 128 is one.

use std::fmt;
use std::net::{Ipv4Addr, Ipv6Addr};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Enumerations must stay below this many candidates. A /32 at /56 hits the
/// cap exactly and is rejected.
pub const DEFAULT_CANDIDATE_CAP: u64 = 1 << 24;

/// Delegated prefix length of a user router.
pub const USER_PREFIX_LEN: u8 = 56;

/// Inclusive range of the gateway segment (bits 49..=64).
pub const GATEWAY_SEGMENT_MIN: u16 = 0x0248;
pub const GATEWAY_SEGMENT_MAX: u16 = 0x0253;
/// Largest value of the gateway host field (bits 117..=128).
pub const GATEWAY_HOST_MAX: u16 = 0x157;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AddressError {
    #[error("expected a /{expected} prefix, got /{actual}")]
    WrongPrefixLength { expected: u8, actual: u8 },
    #[error("enumerating /{target_len} sub-prefixes of a /{alloc_len} yields 2^{} candidates, reaching the cap of {cap}; split the allocation", target_len - alloc_len)]
    PrefixTooShort { alloc_len: u8, target_len: u8, cap: u64 },
    #[error("target length /{target_len} must lie between the allocation length /{alloc_len} and /64")]
    InvalidTargetLength { alloc_len: u8, target_len: u8 },
    #[error("prefix length {0} out of range")]
    InvalidPrefixLength(u8),
    #[error("{0} has bits set beyond the prefix length")]
    HostBitsSet(String),
    #[error("cannot parse {0:?} as a prefix")]
    Parse(String),
    #[error("{0} does not match the gateway pattern")]
    NotAGateway(Ipv6Addr),
    #[error("{0} carries hex letters that have no decimal reading")]
    NonDecimalDigits(Ipv6Addr),
    #[error("{0} reads as an IPv4 octet above 255")]
    OctetOverflow(Ipv6Addr),
    #[error("{0} falls outside the gateway address range")]
    OutOfRange(Ipv4Addr),
    #[error("invalid gateway codec configuration: {0}")]
    InvalidCodecConfig(String),
}

fn mask(len: u8) -> u128 {
    match len {
        0 => 0,
        l => u128::MAX << (128 - u32::from(l)),
    }
}

/// Extracts bits `first..=last` (1-based, MSB first) as an integer.
pub fn bit_field(addr: Ipv6Addr, first: u32, last: u32) -> u128 {
    assert!((1..=last).contains(&first) && last <= 128, "bad bit range {first}..={last}");
    let width = last - first + 1;
    let value = u128::from(addr) >> (128 - last);
    if width == 128 {
        value
    } else {
        value & ((1u128 << width) - 1)
    }
}

/// An IPv6 prefix whose host bits are zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Ipv6Prefix {
    bits: u128,
    len: u8,
}

impl Ipv6Prefix {
    pub fn new(base: Ipv6Addr, len: u8) -> Result<Self, AddressError> {
        if len > 128 {
            return Err(AddressError::InvalidPrefixLength(len));
        }
        let bits = u128::from(base);
        if bits & !mask(len) != 0 {
            return Err(AddressError::HostBitsSet(format!("{base}/{len}")));
        }
        Ok(Self { bits, len })
    }

    /// Builds the prefix of length `len` containing `addr`, clearing host bits.
    pub fn truncating(addr: Ipv6Addr, len: u8) -> Result<Self, AddressError> {
        if len > 128 {
            return Err(AddressError::InvalidPrefixLength(len));
        }
        Ok(Self { bits: u128::from(addr) & mask(len), len })
    }

    pub fn base(&self) -> Ipv6Addr {
        Ipv6Addr::from(self.bits)
    }

    pub fn len(&self) -> u8 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, addr: Ipv6Addr) -> bool {
        u128::from(addr) & mask(self.len) == self.bits
    }

    pub fn covers(&self, other: &Ipv6Prefix) -> bool {
        other.len >= self.len && self.contains(other.base())
    }

    /// Value of the `bit`-th address bit (1-based, MSB first) of the base.
    pub fn bit(&self, bit: u32) -> bool {
        bit_field(self.base(), bit, bit) == 1
    }
}

impl fmt::Display for Ipv6Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.base(), self.len)
    }
}

impl FromStr for Ipv6Prefix {
    type Err = AddressError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (addr, len) = s.trim().split_once('/').ok_or_else(|| AddressError::Parse(s.to_string()))?;
        let addr: Ipv6Addr = addr.parse().map_err(|_| AddressError::Parse(s.to_string()))?;
        let len: u8 = len.parse().map_err(|_| AddressError::Parse(s.to_string()))?;
        Self::new(addr, len)
    }
}

impl Serialize for Ipv6Prefix {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Ipv6Prefix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// An IPv4 prefix, used for the gateway site block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ipv4Prefix {
    bits: u32,
    len: u8,
}

impl Ipv4Prefix {
    pub fn new(base: Ipv4Addr, len: u8) -> Result<Self, AddressError> {
        if len > 32 {
            return Err(AddressError::InvalidPrefixLength(len));
        }
        let m = if len == 0 { 0 } else { u32::MAX << (32 - u32::from(len)) };
        let bits = u32::from(base);
        if bits & !m != 0 {
            return Err(AddressError::HostBitsSet(format!("{base}/{len}")));
        }
        Ok(Self { bits, len })
    }

    pub fn base(&self) -> Ipv4Addr {
        Ipv4Addr::from(self.bits)
    }

    pub fn len(&self) -> u8 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, addr: Ipv4Addr) -> bool {
        let m = if self.len == 0 { 0 } else { u32::MAX << (32 - u32::from(self.len)) };
        u32::from(addr) & m == self.bits
    }
}

impl fmt::Display for Ipv4Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.base(), self.len)
    }
}

impl FromStr for Ipv4Prefix {
    type Err = AddressError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (addr, len) = s.trim().split_once('/').ok_or_else(|| AddressError::Parse(s.to_string()))?;
        let addr: Ipv4Addr = addr.parse().map_err(|_| AddressError::Parse(s.to_string()))?;
        let len: u8 = len.parse().map_err(|_| AddressError::Parse(s.to_string()))?;
        Self::new(addr, len)
    }
}

/// The router address of a delegated /56: bits 57..=127 zero, bit 128 one.
pub fn user_router_address(prefix56: Ipv6Prefix) -> Result<Ipv6Addr, AddressError> {
    if prefix56.len() != USER_PREFIX_LEN {
        return Err(AddressError::WrongPrefixLength { expected: USER_PREFIX_LEN, actual: prefix56.len() });
    }
    Ok(Ipv6Addr::from(prefix56.bits | 1))
}

/// True when bits 57..=127 are zero and bit 128 is one.
pub fn is_user_router_pattern(addr: Ipv6Addr) -> bool {
    bit_field(addr, 57, 128) == 1
}

/// Lazy, ascending enumeration of candidate router addresses, one per
/// sub-prefix of the allocation.
#[derive(Debug, Clone)]
pub struct Candidates {
    base: u128,
    shift: u32,
    next: u128,
    end: u128,
}

impl Iterator for Candidates {
    type Item = Ipv6Addr;

    fn next(&mut self) -> Option<Ipv6Addr> {
        if self.next >= self.end {
            return None;
        }
        let sub = self.next << self.shift;
        self.next += 1;
        Some(Ipv6Addr::from(self.base | sub | 1))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.end - self.next) as usize;
        (left, Some(left))
    }
}

impl ExactSizeIterator for Candidates {}

impl DoubleEndedIterator for Candidates {
    fn next_back(&mut self) -> Option<Ipv6Addr> {
        if self.next >= self.end {
            return None;
        }
        self.end -= 1;
        Some(Ipv6Addr::from(self.base | (self.end << self.shift) | 1))
    }
}

pub fn generate_candidates(alloc: Ipv6Prefix, target_len: u8) -> Result<Candidates, AddressError> {
    generate_candidates_capped(alloc, target_len, DEFAULT_CANDIDATE_CAP)
}

pub fn generate_candidates_capped(alloc: Ipv6Prefix, target_len: u8, cap: u64) -> Result<Candidates, AddressError> {
    if target_len < alloc.len() || target_len > 64 {
        return Err(AddressError::InvalidTargetLength { alloc_len: alloc.len(), target_len });
    }
    let span = u32::from(target_len - alloc.len());
    if span >= 64 || (1u64 << span) >= cap {
        return Err(AddressError::PrefixTooShort { alloc_len: alloc.len(), target_len, cap });
    }
    Ok(Candidates { base: alloc.bits, shift: 128 - u32::from(target_len), next: 0, end: 1u128 << span })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AddressRole {
    UserRouter,
    Gateway,
    PopInfrastructure,
    Unknown,
}

impl fmt::Display for AddressRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AddressRole::UserRouter => "user-router",
            AddressRole::Gateway => "gateway",
            AddressRole::PopInfrastructure => "pop-infrastructure",
            AddressRole::Unknown => "unknown",
        })
    }
}

/// Site blocks for the gateway IPv6 <-> IPv4 correspondence.
///
/// The IPv6 side must be a /48 (the gateway segment is bits 49..=64); the
/// IPv4 side must be a /16 (segment and host land in the last two octets).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GatewayCodecConfig {
    v6_site_prefix: Ipv6Prefix,
    v4_site_prefix: Ipv4Prefix,
}

impl GatewayCodecConfig {
    pub fn new(v6_site_prefix: Ipv6Prefix, v4_site_prefix: Ipv4Prefix) -> Result<Self, AddressError> {
        if v6_site_prefix.len() != 48 {
            return Err(AddressError::InvalidCodecConfig(format!("IPv6 site prefix {v6_site_prefix} must be a /48")));
        }
        if v4_site_prefix.len() != 16 {
            return Err(AddressError::InvalidCodecConfig(format!("IPv4 site prefix {v4_site_prefix} must be a /16")));
        }
        Ok(Self { v6_site_prefix, v4_site_prefix })
    }

    pub fn v6_site_prefix(&self) -> Ipv6Prefix {
        self.v6_site_prefix
    }

    pub fn v4_site_prefix(&self) -> Ipv4Prefix {
        self.v4_site_prefix
    }

    /// Builds the gateway address for a segment and host value. No range check.
    pub fn gateway_address(&self, segment: u16, host: u16) -> Ipv6Addr {
        let bits = self.v6_site_prefix.bits | (u128::from(segment) << 64) | u128::from(host);
        Ipv6Addr::from(bits)
    }
}

impl Default for GatewayCodecConfig {
    fn default() -> Self {
        Self {
            v6_site_prefix: Ipv6Prefix::new(Ipv6Addr::new(0x2620, 0x134, 0xb0fe, 0, 0, 0, 0, 0), 48).unwrap(),
            v4_site_prefix: Ipv4Prefix::new(Ipv4Addr::new(172, 16, 0, 0), 16).unwrap(),
        }
    }
}

/// The two PoP infrastructure /116 blocks observed in the operator's plan.
pub fn default_pop_blocks() -> Vec<Ipv6Prefix> {
    vec![
        Ipv6Prefix::new(Ipv6Addr::new(0x2620, 0x134, 0xb0ff, 0, 0, 0, 0, 0), 116).unwrap(),
        Ipv6Prefix::new(Ipv6Addr::new(0x2620, 0x134, 0xb004, 0, 0, 0, 0, 0), 116).unwrap(),
    ]
}

/// Segment (bits 49..=64) and host (bits 117..=128) when the address has the
/// gateway shape under the configured site prefix.
fn gateway_fields(addr: Ipv6Addr, config: &GatewayCodecConfig) -> Option<(u16, u16)> {
    if !config.v6_site_prefix.contains(addr) {
        return None;
    }
    let segment = bit_field(addr, 49, 64) as u16;
    let middle = bit_field(addr, 65, 116);
    let host = bit_field(addr, 117, 128) as u16;
    let in_range = (GATEWAY_SEGMENT_MIN..=GATEWAY_SEGMENT_MAX).contains(&segment) && host <= GATEWAY_HOST_MAX;
    (in_range && middle == 0).then_some((segment, host))
}

pub fn is_gateway(addr: Ipv6Addr, config: &GatewayCodecConfig) -> bool {
    gateway_fields(addr, config).is_some()
}

/// Total classification. Precedence: PoP infrastructure, then gateway, then
/// user router.
pub fn classify(addr: Ipv6Addr, config: &GatewayCodecConfig, pop_blocks: &[Ipv6Prefix]) -> AddressRole {
    if pop_blocks.iter().any(|b| b.contains(addr)) {
        AddressRole::PopInfrastructure
    } else if is_gateway(addr, config) {
        AddressRole::Gateway
    } else if is_user_router_pattern(addr) {
        AddressRole::UserRouter
    } else {
        AddressRole::Unknown
    }
}

/// Reads the hex digits of `value` as a decimal numeral.
fn hex_digits_as_decimal(value: u16) -> Option<u32> {
    format!("{value:x}").parse().ok()
}

/// Reads the decimal digits of `value` as a hex numeral.
fn decimal_digits_as_hex(value: u8) -> u16 {
    // At most three decimal digits, so this always fits and parses.
    u16::from_str_radix(&value.to_string(), 16).expect("decimal digits are valid hex")
}

/// Maps `<site>:x::y` to `<v4 site>.x.y`, reading the hex digit strings of
/// `x` and `y` as decimal numerals.
pub fn gateway_v6_to_v4(addr: Ipv6Addr, config: &GatewayCodecConfig) -> Result<Ipv4Addr, AddressError> {
    let (segment, host) = gateway_fields(addr, config).ok_or(AddressError::NotAGateway(addr))?;
    let x = hex_digits_as_decimal(segment).ok_or(AddressError::NonDecimalDigits(addr))?;
    let y = hex_digits_as_decimal(host).ok_or(AddressError::NonDecimalDigits(addr))?;
    let (x, y) = match (u8::try_from(x), u8::try_from(y)) {
        (Ok(x), Ok(y)) => (x, y),
        _ => return Err(AddressError::OctetOverflow(addr)),
    };
    let [a, b, _, _] = config.v4_site_prefix.base().octets();
    Ok(Ipv4Addr::new(a, b, x, y))
}

pub fn gateway_v4_to_v6(addr: Ipv4Addr, config: &GatewayCodecConfig) -> Result<Ipv6Addr, AddressError> {
    if !config.v4_site_prefix.contains(addr) {
        return Err(AddressError::OutOfRange(addr));
    }
    let [_, _, x, y] = addr.octets();
    let segment = decimal_digits_as_hex(x);
    let host = decimal_digits_as_hex(y);
    if !(GATEWAY_SEGMENT_MIN..=GATEWAY_SEGMENT_MAX).contains(&segment) || host > GATEWAY_HOST_MAX {
        return Err(AddressError::OutOfRange(addr));
    }
    Ok(config.gateway_address(segment, host))
}

/// Every gateway address whose segment and host contain decimal digits only,
/// in ascending order. This is the domain on which the codec is a bijection.
pub fn decimal_gateway_addresses(config: &GatewayCodecConfig) -> impl Iterator<Item = Ipv6Addr> + '_ {
    (GATEWAY_SEGMENT_MIN..=GATEWAY_SEGMENT_MAX).filter(|s| hex_digits_as_decimal(*s).is_some()).flat_map(move |s| {
        (0..=GATEWAY_HOST_MAX)
            .filter(|h| hex_digits_as_decimal(*h).is_some())
            .map(move |h| config.gateway_address(s, h))
    })
}
