// SPDX-License-Identifier: Apache-2.0

//! User dataset file.
//!
//! ```text
//! #leomap-users v1
//! addr<TAB>prefix<TAB>country<TAB>region_code<TAB>city<TAB>home_pop<TAB>discovered_at<TAB>ptr_name
//! ```
//!
//! `discovered_at` is in Unix seconds (UTC). Empty fields mean "none".
//! Backslash, tab and newline inside `ptr_name` are escaped as `\\`, `\t`, `\n`.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::{BufRead, Write};
use std::net::Ipv6Addr;
use std::path::Path;

use chrono::DateTime;

use super::{DiscoveryError, UserRecord};
use crate::geoip::GeoIpEntry;

pub const DATASET_HEADER: &str = "#leomap-users v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIssue {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<UserRecord>,
    /// Corrupt lines, skipped.
    pub issues: Vec<DatasetIssue>,
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            other => return Err(format!("bad escape \\{}", other.map(String::from).unwrap_or_default())),
        }
    }
    Ok(out)
}

fn format_record(r: &UserRecord) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
        r.addr,
        r.geo.prefix,
        r.geo.country,
        r.geo.region_code,
        r.geo.city,
        r.home_pop.as_ref().map(|p| p.code()).unwrap_or(""),
        r.discovered_at.timestamp(),
        r.ptr_name.as_deref().map(escape).unwrap_or_default()
    )
}

fn parse_record(line: &str) -> Result<UserRecord, String> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != 8 {
        return Err(format!("expected 8 fields, found {}", cols.len()));
    }
    let addr: Ipv6Addr = cols[0].parse().map_err(|e| format!("addr: {e}"))?;
    let prefix = cols[1].parse().map_err(|e| format!("prefix: {e}"))?;
    let geo = GeoIpEntry::new(prefix, cols[2], cols[3], cols[4]).map_err(|e| e.to_string())?;
    let home_pop = match cols[5] {
        "" => None,
        code => Some(code.parse().map_err(|e| format!("home_pop: {e}"))?),
    };
    let secs: i64 = cols[6].parse().map_err(|e| format!("discovered_at: {e}"))?;
    let discovered_at = DateTime::from_timestamp(secs, 0).ok_or("discovered_at out of range")?;
    let ptr_name = match cols[7] {
        "" => None,
        name => Some(unescape(name)?),
    };
    let record = UserRecord { addr, geo, home_pop, discovered_at, ptr_name };
    record.check()?;
    Ok(record)
}

/// Writes a complete dataset: header, then one line per record.
pub fn write_dataset<W: Write>(records: &[UserRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{DATASET_HEADER}")?;
    for r in records {
        writeln!(out, "{}", format_record(r))?;
    }
    out.flush()
}

/// Appends records to `path`, writing the header first when the file is new
/// or empty.
pub fn append_dataset(path: &Path, records: &[UserRecord]) -> Result<(), DiscoveryError> {
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut buf = String::new();
    if file.metadata()?.len() == 0 {
        buf.push_str(DATASET_HEADER);
        buf.push('\n');
    }
    for r in records {
        buf.push_str(&format_record(r));
        buf.push('\n');
    }
    file.write_all(buf.as_bytes())?;
    Ok(())
}

/// Reads a dataset. Corrupt lines are skipped and reported; a later record
/// for an address replaces the earlier one in place.
pub fn read_dataset<R: BufRead>(source: R) -> Result<Dataset, DiscoveryError> {
    let mut lines = source.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim_end() != DATASET_HEADER {
        return Err(DiscoveryError::SchemaMismatch { expected: DATASET_HEADER.into(), found: header });
    }
    let mut dataset = Dataset::default();
    let mut slot: HashMap<Ipv6Addr, usize> = HashMap::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        // Concatenated appends may repeat the header.
        if line.starts_with('#') {
            if line != DATASET_HEADER {
                return Err(DiscoveryError::SchemaMismatch { expected: DATASET_HEADER.into(), found: line.into() });
            }
            continue;
        }
        match parse_record(line) {
            Ok(r) => match slot.get(&r.addr) {
                Some(&at) => dataset.records[at] = r,
                None => {
                    slot.insert(r.addr, dataset.records.len());
                    dataset.records.push(r);
                }
            },
            Err(message) => dataset.issues.push(DatasetIssue { line: i + 2, message }),
        }
    }
    Ok(dataset)
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DiscoveryError> {
    let file = std::fs::File::open(path)?;
    read_dataset(std::io::BufReader::new(file))
}
