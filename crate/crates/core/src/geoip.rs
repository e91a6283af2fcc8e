// SPDX-License-Identifier: Apache-2.0

//! GeoIP feed ingestion and longest-prefix lookup.
//!
//! The feed is line oriented, `prefix,country,region_code,city`, with an
//! optional trailing comma. Blank lines and `#` comments are skipped.

use std::collections::HashMap;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::net::Ipv6Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addressing::Ipv6Prefix;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("feed contains no valid rows ({} rejected)", issues.len())]
    EmptyFeed { issues: Vec<LineIssue> },
    #[error("unknown country code {0:?}")]
    UnknownCountry(String),
    #[error("invalid entry: {0}")]
    InvalidEntry(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GeoIpEntry {
    pub prefix: Ipv6Prefix,
    pub country: String,
    pub region_code: String,
    pub city: String,
}

fn field_ok(s: &str) -> bool {
    !s.contains([',', '\t', '\n', '\r'])
}

impl GeoIpEntry {
    pub fn new(prefix: Ipv6Prefix, country: &str, region_code: &str, city: &str) -> Result<Self, GeoError> {
        let entry =
            Self { prefix, country: country.to_string(), region_code: region_code.to_string(), city: city.to_string() };
        entry.validate()?;
        Ok(entry)
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        let c = self.country.as_bytes();
        if c.len() != 2 || !c.iter().all(u8::is_ascii_uppercase) {
            return Err(GeoError::InvalidEntry(format!("country {:?} is not two upper-case letters", self.country)));
        }
        if !self.region_code.is_empty() {
            let ok = self
                .region_code
                .strip_prefix(self.country.as_str())
                .and_then(|r| r.strip_prefix('-'))
                .is_some_and(|sub| !sub.is_empty() && sub.bytes().all(|b| b.is_ascii_alphanumeric()));
            if !ok {
                return Err(GeoError::InvalidEntry(format!(
                    "region code {:?} is not a subdivision of {}",
                    self.region_code, self.country
                )));
            }
        }
        if !field_ok(&self.city) {
            return Err(GeoError::InvalidEntry(format!("city {:?} contains a separator", self.city)));
        }
        Ok(())
    }

    pub fn region(&self) -> RegionKey {
        RegionKey { country: self.country.clone(), region_code: self.region_code.clone(), city: self.city.clone() }
    }

    fn parse_row(line: &str) -> Result<Self, String> {
        let mut cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() == 5 && cols[4].is_empty() {
            cols.pop();
        }
        if cols.len() != 4 {
            return Err(format!("expected 4 columns, found {}", cols.len()));
        }
        let prefix: Ipv6Prefix = cols[0].parse().map_err(|e| format!("{e}"))?;
        Self::new(prefix, cols[1], cols[2], cols[3]).map_err(|e| e.to_string())
    }
}

impl fmt::Display for GeoIpEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.prefix, self.country, self.region_code, self.city)
    }
}

/// Statistics region: the city row of the feed, qualified by country and
/// subdivision.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RegionKey {
    pub country: String,
    pub region_code: String,
    pub city: String,
}

impl fmt::Display for RegionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = [self.city.as_str(), self.region_code.as_str(), self.country.as_str()]
            .into_iter()
            .filter(|s| !s.is_empty())
            .collect();
        f.write_str(&parts.join(", "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IssueKind {
    Malformed,
    DuplicatePrefix,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineIssue {
    pub line: usize,
    pub kind: IssueKind,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct GeoFeed {
    pub entries: Vec<GeoIpEntry>,
    pub issues: Vec<LineIssue>,
}

/// Parses a feed. Malformed rows are reported in `issues`; a repeated
/// prefix keeps its first position but takes the content of the last row.
pub fn load_geoip<R: BufRead>(source: R) -> Result<GeoFeed, GeoError> {
    let mut feed = GeoFeed::default();
    let mut seen: HashMap<Ipv6Prefix, usize> = HashMap::new();
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let row = line.trim_end_matches('\r').trim();
        if row.is_empty() || row.starts_with('#') {
            continue;
        }
        match GeoIpEntry::parse_row(row) {
            Ok(entry) => match seen.get(&entry.prefix) {
                Some(&pos) => {
                    feed.issues.push(LineIssue {
                        line: line_no,
                        kind: IssueKind::DuplicatePrefix,
                        message: format!("duplicate prefix {}, keeping this row", entry.prefix),
                    });
                    feed.entries[pos] = entry;
                }
                None => {
                    seen.insert(entry.prefix, feed.entries.len());
                    feed.entries.push(entry);
                }
            },
            Err(message) => feed.issues.push(LineIssue { line: line_no, kind: IssueKind::Malformed, message }),
        }
    }
    if feed.entries.is_empty() {
        return Err(GeoError::EmptyFeed { issues: feed.issues });
    }
    Ok(feed)
}

pub fn write_geoip<W: Write>(entries: &[GeoIpEntry], mut out: W) -> io::Result<()> {
    for e in entries {
        writeln!(out, "{e}")?;
    }
    Ok(())
}

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct TrieNode {
    child: [u32; 2],
    entry: u32,
}

impl TrieNode {
    fn empty() -> Self {
        Self { child: [NONE; 2], entry: NONE }
    }
}

/// Binary trie over prefix bits. Immutable after construction.
#[derive(Debug, Clone)]
pub struct GeoIndex {
    nodes: Vec<TrieNode>,
    entries: Vec<GeoIpEntry>,
}

impl GeoIndex {
    /// Later entries with an identical prefix replace earlier ones.
    pub fn build<I: IntoIterator<Item = GeoIpEntry>>(entries: I) -> Self {
        let mut index = Self { nodes: vec![TrieNode::empty()], entries: Vec::new() };
        for e in entries {
            index.insert(e);
        }
        index
    }

    fn insert(&mut self, entry: GeoIpEntry) {
        let bits = u128::from(entry.prefix.base());
        let mut node = 0usize;
        for i in 0..u32::from(entry.prefix.len()) {
            let b = ((bits >> (127 - i)) & 1) as usize;
            if self.nodes[node].child[b] == NONE {
                self.nodes[node].child[b] = self.nodes.len() as u32;
                self.nodes.push(TrieNode::empty());
            }
            node = self.nodes[node].child[b] as usize;
        }
        match self.nodes[node].entry {
            NONE => {
                self.nodes[node].entry = self.entries.len() as u32;
                self.entries.push(entry);
            }
            slot => self.entries[slot as usize] = entry,
        }
    }

    pub fn lookup(&self, addr: Ipv6Addr) -> Option<&GeoIpEntry> {
        let bits = u128::from(addr);
        let mut node = 0usize;
        let mut best = self.nodes[0].entry;
        for i in 0..128 {
            let b = ((bits >> (127 - i)) & 1) as usize;
            match self.nodes[node].child[b] {
                NONE => break,
                next => node = next as usize,
            }
            if self.nodes[node].entry != NONE {
                best = self.nodes[node].entry;
            }
        }
        (best != NONE).then(|| &self.entries[best as usize])
    }

    pub fn entries(&self) -> &[GeoIpEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Continent {
    #[serde(rename = "North America")]
    NorthAmerica,
    #[serde(rename = "South America")]
    SouthAmerica,
    Europe,
    Asia,
    Oceania,
    Africa,
    Antarctica,
}

impl Continent {
    pub const ALL: [Continent; 7] = [
        Continent::NorthAmerica,
        Continent::SouthAmerica,
        Continent::Europe,
        Continent::Asia,
        Continent::Oceania,
        Continent::Africa,
        Continent::Antarctica,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Continent::NorthAmerica => "North America",
            Continent::SouthAmerica => "South America",
            Continent::Europe => "Europe",
            Continent::Asia => "Asia",
            Continent::Oceania => "Oceania",
            Continent::Africa => "Africa",
            Continent::Antarctica => "Antarctica",
        }
    }
}

impl fmt::Display for Continent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

// ISO 3166-1 alpha-2, grouped by the UN geoscheme continent (the Americas
// split at Panama/Colombia, the Caribbean counted in North America).
const NORTH_AMERICA: &str = "AG AI AW BB BL BM BQ BS BZ CA CR CU CW DM DO GD GL GP GT HN HT JM KN KY LC MF MQ MS MX NI PA PM PR SV SX TC TT UM US VC VG VI";
const SOUTH_AMERICA: &str = "AR BO BR CL CO EC FK GF GY PE PY SR UY VE";
const EUROPE: &str = "AD AL AT AX BA BE BG BY CH CZ DE DK EE ES FI FO FR GB GG GI GR HR HU IE IM IS IT JE LI LT LU LV MC MD ME MK MT NL NO PL PT RO RS RU SE SI SJ SK SM UA VA";
const ASIA: &str = "AE AF AM AZ BD BH BN BT CC CN CX CY GE HK ID IL IN IO IQ IR JO JP KG KH KP KR KW KZ LA LB LK MM MN MO MV MY NP OM PH PK PS QA SA SG SY TH TJ TL TM TR TW UZ VN YE";
const OCEANIA: &str = "AS AU CK FJ FM GU KI MH MP NC NF NR NU NZ PF PG PN PW SB TK TO TV VU WF WS";
const AFRICA: &str = "AO BF BI BJ BW CD CF CG CI CM CV DJ DZ EG EH ER ET GA GH GM GN GQ GW KE KM LR LS LY MA MG ML MR MU MW MZ NA NE NG RE RW SC SD SH SL SN SO SS ST SZ TD TG TN TZ UG YT ZA ZM ZW";
const ANTARCTICA: &str = "AQ BV GS HM TF";

fn continent_table() -> [(&'static str, Continent); 7] {
    [
        (NORTH_AMERICA, Continent::NorthAmerica),
        (SOUTH_AMERICA, Continent::SouthAmerica),
        (EUROPE, Continent::Europe),
        (ASIA, Continent::Asia),
        (OCEANIA, Continent::Oceania),
        (AFRICA, Continent::Africa),
        (ANTARCTICA, Continent::Antarctica),
    ]
}

pub fn continent_of_country(country: &str) -> Result<Continent, GeoError> {
    let code = country.trim();
    if code.len() == 2 {
        for (codes, continent) in continent_table() {
            if codes.split(' ').any(|c| c == code) {
                return Ok(continent);
            }
        }
    }
    Err(GeoError::UnknownCountry(country.to_string()))
}

pub fn continent_of(entry: &GeoIpEntry) -> Result<Continent, GeoError> {
    continent_of_country(&entry.country)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn load(s: &str) -> Result<GeoFeed, GeoError> {
        load_geoip(s.as_bytes())
    }

    #[test]
    fn parses_feed_rows() {
        let feed = load("2605:59c8::/40,US,US-WA,Seattle\n2803:9810:4300::/40,BR,BR-SP,Sao Paulo,\r\n").unwrap();
        assert!(feed.issues.is_empty());
        assert_eq!(
            feed.entries,
            vec![
                GeoIpEntry::new("2605:59c8::/40".parse().unwrap(), "US", "US-WA", "Seattle").unwrap(),
                GeoIpEntry::new("2803:9810:4300::/40".parse().unwrap(), "BR", "BR-SP", "Sao Paulo").unwrap(),
            ]
        );
    }

    #[test]
    fn malformed_rows_are_reported() {
        match load("not-a-prefix,US,US-WA,Seattle\n") {
            Err(GeoError::EmptyFeed { issues }) => {
                assert_eq!(issues.len(), 1);
                assert_eq!(issues[0].line, 1);
                assert_eq!(issues[0].kind, IssueKind::Malformed);
            }
            other => panic!("unexpected {other:?}"),
        }
        let feed = load("# comment\n\n2605:59c8::/40,US,US-WA,Seattle\n2605:59c8::/40,us,US-WA,Seattle\n100.64.0.0/10,US,US-WA,Seattle\n2605::/32,US,CA-BC,Seattle\n2605:1::/32,US,US-WA\n").unwrap();
        assert_eq!(feed.entries.len(), 1);
        let lines: Vec<_> = feed.issues.iter().map(|i| i.line).collect();
        assert_eq!(lines, vec![4, 5, 6, 7]);
        assert!(matches!(load(""), Err(GeoError::EmptyFeed { .. })));
    }

    #[test]
    fn duplicate_prefix_keeps_last() {
        let feed =
            load("2605:59c8::/40,US,US-WA,Seattle\n2a0d::/32,DE,DE-HE,Frankfurt\n2605:59c8::/40,US,US-WA,Tacoma\n")
                .unwrap();
        assert_eq!(feed.entries.len(), 2);
        assert_eq!(feed.entries[0].city, "Tacoma");
        assert_eq!(feed.issues[0].kind, IssueKind::DuplicatePrefix);
        assert_eq!(feed.issues[0].line, 3);
    }

    #[test]
    fn empty_city_is_allowed() {
        let feed = load("2605:59c8::/40,US,,\n").unwrap();
        assert_eq!(feed.entries[0].city, "");
        assert_eq!(feed.entries[0].region_code, "");
    }

    #[test]
    fn longest_prefix_lookup() {
        let feed = load("2803:9810:4300::/40,BR,BR-SP,Sao Paulo\n2803:9810:5380::/42,BR,BR-SP,Sao Paulo\n2605:59c8::/40,US,US-WA,Seattle\n2803:9800::/24,BR,BR-RJ,Rio\n").unwrap();
        let index = GeoIndex::build(feed.entries.clone());
        let seattle = index.lookup("2605:59c8:0:100::1".parse().unwrap()).unwrap();
        assert_eq!(seattle.city, "Seattle");
        let addr: Ipv6Addr = "2803:9810:5380::1".parse().unwrap();
        // Linear-scan oracle.
        let oracle = feed.entries.iter().filter(|e| e.prefix.contains(addr)).max_by_key(|e| e.prefix.len()).unwrap();
        assert_eq!(index.lookup(addr).unwrap(), oracle);
        assert_eq!(oracle.prefix.len(), 42);
        assert_eq!(index.lookup("2803:9810:4300::1".parse().unwrap()).unwrap().prefix.len(), 40);
        assert_eq!(index.lookup("2803:98ff::1".parse().unwrap()).unwrap().city, "Rio");
        assert!(index.lookup("::1".parse().unwrap()).is_none());
    }

    #[test]
    fn default_route_entry_matches_everything() {
        let index = GeoIndex::build(vec![GeoIpEntry::new("::/0".parse().unwrap(), "US", "", "").unwrap()]);
        assert!(index.lookup("::1".parse().unwrap()).is_some());
    }

    #[test]
    fn continents() {
        let e = |c: &str| GeoIpEntry::new("2605:59c8::/40".parse().unwrap(), c, "", "").unwrap();
        assert_eq!(continent_of(&e("US")).unwrap(), Continent::NorthAmerica);
        assert_eq!(continent_of(&e("BR")).unwrap(), Continent::SouthAmerica);
        assert_eq!(continent_of(&e("NG")).unwrap(), Continent::Africa);
        assert_eq!(continent_of(&e("JP")).unwrap(), Continent::Asia);
        assert!(matches!(continent_of(&e("ZZ")), Err(GeoError::UnknownCountry(_))));
    }

    #[test]
    fn continent_table_covers_iso3166_once() {
        let mut seen = HashSet::new();
        for (codes, _) in continent_table() {
            for c in codes.split(' ') {
                assert_eq!(c.len(), 2);
                assert!(seen.insert(c), "{c} listed twice");
            }
        }
        assert_eq!(seen.len(), 249);
    }

    fn arb_entries() -> impl Strategy<Value = Vec<GeoIpEntry>> {
        // Share a common /24 so nested prefixes actually occur.
        proptest::collection::vec((any::<u128>(), 24u8..=64, 0usize..3), 1..200).prop_map(|rows| {
            rows.into_iter()
                .map(|(bits, len, city)| {
                    let bits = (0x0026_0559_u128 << 104) | (bits >> 24);
                    let prefix = Ipv6Prefix::truncating(Ipv6Addr::from(bits), len).unwrap();
                    GeoIpEntry::new(prefix, "US", "US-WA", ["Seattle", "Tacoma", ""][city]).unwrap()
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn lookup_matches_linear_scan(entries in arb_entries(), probes in proptest::collection::vec(any::<u128>(), 1..50)) {
            let index = GeoIndex::build(entries.clone());
            // Deduplicate like the index: last wins.
            let mut dedup: HashMap<Ipv6Prefix, GeoIpEntry> = HashMap::new();
            for e in &entries {
                dedup.insert(e.prefix, e.clone());
            }
            prop_assert_eq!(index.len(), dedup.len());
            let mut addrs: Vec<Ipv6Addr> = probes.iter().map(|b| Ipv6Addr::from((0x0026_0559_u128 << 104) | (b >> 24))).collect();
            addrs.extend(entries.iter().map(|e| e.prefix.base()));
            for addr in addrs {
                let oracle = dedup.values().filter(|e| e.prefix.contains(addr)).max_by_key(|e| e.prefix.len());
                prop_assert_eq!(index.lookup(addr), oracle);
            }
        }

        #[test]
        fn serialize_then_load_is_idempotent(entries in arb_entries()) {
            let mut first = Vec::new();
            write_geoip(&entries, &mut first).unwrap();
            let once = load_geoip(first.as_slice()).unwrap();
            let mut second = Vec::new();
            write_geoip(&once.entries, &mut second).unwrap();
            let twice = load_geoip(second.as_slice()).unwrap();
            prop_assert_eq!(&once.entries, &twice.entries);
            prop_assert!(twice.issues.is_empty());
        }
    }
}
