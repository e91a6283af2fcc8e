// SPDX-License-Identifier: Apache-2.0

//! Reverse-DNS names and the operator's PTR naming scheme.
//!
//! Customer routers resolve to `customer.<pop>.pop.starlinkisp.net`. Any
//! other single label under `<pop>.pop.starlinkisp.net` is treated as an
//! infrastructure host of that PoP.

use std::fmt;
use std::net::Ipv6Addr;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const POP_ZONE: &str = "pop.starlinkisp.net";
pub const CUSTOMER_LABEL: &str = "customer";
const ARPA_SUFFIX: &str = "ip6.arpa";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PtrError {
    #[error("malformed PoP code {0:?}")]
    MalformedPopCode(String),
    #[error("{0:?} is not an ip6.arpa name")]
    NotReverseName(String),
}

/// A PoP code such as `sttlwax1`: an alphabetic site label followed by a
/// decimal index without leading zeros.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PopId {
    code: String,
    site_len: usize,
}

impl PopId {
    pub fn new(site: &str, index: u32) -> Result<Self, PtrError> {
        parse_pop_code(&format!("{site}{index}"))
    }

    pub fn code(&self) -> &str {
        &self.code
    }

    pub fn site(&self) -> &str {
        &self.code[..self.site_len]
    }

    pub fn index(&self) -> u32 {
        self.code[self.site_len..].parse().expect("validated index")
    }
}

pub fn parse_pop_code(code: &str) -> Result<PopId, PtrError> {
    let err = || PtrError::MalformedPopCode(code.to_string());
    let lower = code.to_ascii_lowercase();
    let site_len = lower.trim_end_matches(|c: char| c.is_ascii_digit()).len();
    let (site, digits) = lower.split_at(site_len);
    if site.len() < 4 || !site.bytes().all(|b| b.is_ascii_lowercase()) {
        return Err(err());
    }
    if digits.is_empty() || digits.starts_with('0') || digits.len() > 9 {
        return Err(err());
    }
    Ok(PopId { code: lower, site_len })
}

impl fmt::Display for PopId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.code)
    }
}

impl FromStr for PopId {
    type Err = PtrError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_pop_code(s)
    }
}

impl Serialize for PopId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.code)
    }
}

impl<'de> Deserialize<'de> for PopId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse_pop_code(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PtrRecord {
    pub owner: Ipv6Addr,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PtrClassification {
    Customer(PopId),
    PopHost { label: String, pop: PopId },
    NotStarlink,
}

impl PtrClassification {
    pub fn pop(&self) -> Option<&PopId> {
        match self {
            PtrClassification::Customer(p) | PtrClassification::PopHost { pop: p, .. } => Some(p),
            PtrClassification::NotStarlink => None,
        }
    }
}

pub fn customer_name(pop: &PopId) -> String {
    format!("{CUSTOMER_LABEL}.{pop}.{POP_ZONE}")
}

pub fn pop_host_name(label: &str, pop: &PopId) -> String {
    format!("{label}.{pop}.{POP_ZONE}")
}

/// Nibble-format reverse name, least significant nibble first.
pub fn reverse_name(addr: Ipv6Addr) -> String {
    let bits = u128::from(addr);
    let mut name = String::with_capacity(72);
    for i in 0..32 {
        let nibble = ((bits >> (4 * i)) & 0xf) as u32;
        name.push(char::from_digit(nibble, 16).unwrap());
        name.push('.');
    }
    name.push_str(ARPA_SUFFIX);
    name
}

/// Inverse of [`reverse_name`].
pub fn address_from_reverse_name(name: &str) -> Result<Ipv6Addr, PtrError> {
    let err = || PtrError::NotReverseName(name.to_string());
    let lower = name.trim_end_matches('.').to_ascii_lowercase();
    let nibbles = lower.strip_suffix(ARPA_SUFFIX).and_then(|s| s.strip_suffix('.')).ok_or_else(err)?;
    let mut bits = 0u128;
    let mut count = 0;
    for (i, label) in nibbles.split('.').enumerate() {
        let mut chars = label.chars();
        let digit = match (chars.next(), chars.next()) {
            (Some(c), None) => c.to_digit(16).ok_or_else(err)?,
            _ => return Err(err()),
        };
        if i >= 32 {
            return Err(err());
        }
        bits |= u128::from(digit) << (4 * i);
        count += 1;
    }
    if count != 32 {
        return Err(err());
    }
    Ok(Ipv6Addr::from(bits))
}

fn is_dns_label(label: &str) -> bool {
    let b = label.as_bytes();
    !b.is_empty()
        && b.len() <= 63
        && b.iter().all(|c| c.is_ascii_alphanumeric() || *c == b'-' || *c == b'_')
        && b[0] != b'-'
        && b[b.len() - 1] != b'-'
}

/// Classifies a PTR target name. Total: anything unexpected is `NotStarlink`.
pub fn parse_ptr(name: &str) -> PtrClassification {
    let trimmed = name.strip_suffix('.').unwrap_or(name);
    if trimmed.len() > 253 || !trimmed.is_ascii() {
        return PtrClassification::NotStarlink;
    }
    let lower = trimmed.to_ascii_lowercase();
    let Some(head) = lower.strip_suffix(POP_ZONE).and_then(|h| h.strip_suffix('.')) else {
        return PtrClassification::NotStarlink;
    };
    let mut labels = head.split('.');
    let (Some(label), Some(pop), None) = (labels.next(), labels.next(), labels.next()) else {
        return PtrClassification::NotStarlink;
    };
    if !is_dns_label(label) {
        return PtrClassification::NotStarlink;
    }
    let Ok(pop) = parse_pop_code(pop) else {
        return PtrClassification::NotStarlink;
    };
    if label == CUSTOMER_LABEL {
        PtrClassification::Customer(pop)
    } else {
        PtrClassification::PopHost { label: label.to_string(), pop }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pop(s: &str) -> PopId {
        parse_pop_code(s).unwrap()
    }

    #[test]
    fn reverse_names() {
        assert_eq!(
            reverse_name("2605:59c8::1".parse().unwrap()),
            "1.0.0.0.0.0.0.0.0.0.0.0.0.0.0.0.0.0.0.0.0.0.0.0.8.c.9.5.5.0.6.2.ip6.arpa"
        );
        assert_eq!(reverse_name(Ipv6Addr::LOCALHOST), format!("1.{}ip6.arpa", "0.".repeat(31)));
        // Nibble oracle: hex digits of the full address, reversed.
        let gw: Ipv6Addr = "2620:134:b0fe:251::34".parse().unwrap();
        let hex = format!("{:032x}", u128::from(gw));
        let oracle: Vec<String> = hex.chars().rev().map(|c| c.to_string()).collect();
        let name = reverse_name(gw);
        assert_eq!(name, format!("{}.ip6.arpa", oracle.join(".")));
        assert!(name.ends_with("1.5.2.0.e.f.0.b.4.3.1.0.0.2.6.2.ip6.arpa"));
    }

    #[test]
    fn reverse_name_parse_errors() {
        assert!(address_from_reverse_name("example.com").is_err());
        assert!(address_from_reverse_name("1.0.ip6.arpa").is_err());
        assert!(address_from_reverse_name(&format!("g.{}ip6.arpa", "0.".repeat(31))).is_err());
        assert!(address_from_reverse_name(&format!("10.{}ip6.arpa", "0.".repeat(31))).is_err());
        assert_eq!(address_from_reverse_name(&format!("1.{}IP6.ARPA.", "0.".repeat(31))).unwrap(), Ipv6Addr::LOCALHOST);
    }

    #[test]
    fn customer_names() {
        assert_eq!(parse_ptr("customer.chcoilx1.pop.starlinkisp.net"), PtrClassification::Customer(pop("chcoilx1")));
        assert_eq!(parse_ptr("customer.sttlwax1.pop.starlinkisp.net"), PtrClassification::Customer(pop("sttlwax1")));
        assert_eq!(parse_ptr("Customer.SttlWax1.POP.starlinkisp.net."), PtrClassification::Customer(pop("sttlwax1")));
        assert_eq!(parse_ptr("host.example.com"), PtrClassification::NotStarlink);
    }

    #[test]
    fn host_names() {
        assert_eq!(
            parse_ptr("edge1.sttlwax1.pop.starlinkisp.net"),
            PtrClassification::PopHost { label: "edge1".into(), pop: pop("sttlwax1") }
        );
        for bad in [
            "pop.starlinkisp.net",
            "sttlwax1.pop.starlinkisp.net",
            "a.b.sttlwax1.pop.starlinkisp.net",
            "customer.nodigits.pop.starlinkisp.net",
            "customer.sttlwax1.pop.starlinkisp.net..",
            "-x.sttlwax1.pop.starlinkisp.net",
            "customer.sttlwax1.pop.starlinkisp.net.evil.com",
            "customersttlwax1.pop.starlinkisp.net",
            "",
        ] {
            assert_eq!(parse_ptr(bad), PtrClassification::NotStarlink, "{bad}");
        }
    }

    #[test]
    fn pop_codes() {
        let p = pop("ashnvax2");
        assert_eq!((p.site(), p.index()), ("ashnvax", 2));
        let p = pop("sttlwax1");
        assert_eq!((p.site(), p.index()), ("sttlwax", 1));
        assert_eq!(pop("JTNAIDN1").code(), "jtnaidn1");
        for bad in ["nodigits", "abc1", "1234", "", "sttlwax0", "sttlwax01", "sttl-ax1", "sttlwax1a"] {
            assert!(matches!(parse_pop_code(bad), Err(PtrError::MalformedPopCode(_))), "{bad}");
        }
        assert_eq!(PopId::new("mmmiflx", 1).unwrap(), pop("mmmiflx1"));
    }

    fn arb_pop() -> impl Strategy<Value = PopId> {
        ("[a-z]{4,10}", 1u32..1000).prop_map(|(site, idx)| PopId::new(&site, idx).unwrap())
    }

    proptest! {
        #[test]
        fn reverse_name_roundtrip(bits in any::<u128>(), other in any::<u128>()) {
            let a = Ipv6Addr::from(bits);
            prop_assert_eq!(address_from_reverse_name(&reverse_name(a)).unwrap(), a);
            if bits != other {
                prop_assert_ne!(reverse_name(a), reverse_name(Ipv6Addr::from(other)));
            }
        }

        #[test]
        fn grammar_roundtrip(p in arb_pop(), label in "[a-z][a-z0-9]{0,8}") {
            prop_assert_eq!(parse_ptr(&customer_name(&p)), PtrClassification::Customer(p.clone()));
            let host = pop_host_name(&label, &p);
            let expected = if label == CUSTOMER_LABEL {
                PtrClassification::Customer(p.clone())
            } else {
                PtrClassification::PopHost { label: label.clone(), pop: p.clone() }
            };
            prop_assert_eq!(parse_ptr(&host), expected);
            prop_assert_eq!(PopId::new(p.site(), p.index()).unwrap(), p);
        }

        #[test]
        fn parse_ptr_is_total(bytes in proptest::collection::vec(any::<u8>(), 0..300)) {
            let s = String::from_utf8_lossy(&bytes);
            let _ = parse_ptr(&s);
            let _ = parse_pop_code(&s);
            let _ = address_from_reverse_name(&s);
        }
    }
}
