// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::Serialize;

use super::UserRecord;
use crate::geoip::{continent_of, Continent, GeoIpEntry, RegionKey};
use crate::ptrmap::PopId;

/// `round(100 * part / total)`, halves rounded away from zero. Zero when
/// `total` is zero.
pub fn percent(part: u64, total: u64) -> u64 {
    if total == 0 {
        return 0;
    }
    let (p, t) = (u128::from(part), u128::from(total));
    ((200 * p + t) / (2 * t)) as u64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ContinentShare {
    pub continent: Continent,
    pub users: u64,
    pub percent: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RegionCount {
    pub region: RegionKey,
    pub users: u64,
    pub homed: u64,
    pub pops: BTreeSet<PopId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PopServiceStats {
    pub pop: PopId,
    pub user_count: u64,
    pub regions: BTreeSet<RegionKey>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MultiPopRegion {
    pub region: RegionKey,
    /// Homed users per serving PoP.
    pub pops: BTreeMap<PopId, u64>,
}

/// Aggregates over a user record multiset. Continent and region counts cover
/// every discovered user; PoP figures cover homed users only.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Stats {
    pub discovered: u64,
    pub homed: u64,
    /// Records whose country has no continent mapping.
    pub unmapped_country: u64,
    /// Continents with at least one user, most users first.
    pub continents: Vec<ContinentShare>,
    /// Most users first, ties by region.
    pub regions: Vec<RegionCount>,
    /// Distinct subdivision codes among discovered users.
    pub region_codes: usize,
    /// Most users first, ties by PoP code.
    pub pops: Vec<PopServiceStats>,
    pub multi_pop_regions: Vec<MultiPopRegion>,
}

impl Stats {
    pub fn pop(&self, pop: &PopId) -> Option<&PopServiceStats> {
        self.pops.iter().find(|p| &p.pop == pop)
    }

    pub fn continent(&self, continent: Continent) -> Option<&ContinentShare> {
        self.continents.iter().find(|c| c.continent == continent)
    }
}

/// Incremental aggregation; `add_weighted` accepts pre-aggregated counts.
#[derive(Debug, Clone, Default)]
pub struct StatsBuilder {
    discovered: u64,
    homed: u64,
    unmapped: u64,
    continents: HashMap<Continent, u64>,
    regions: HashMap<RegionKey, (u64, BTreeMap<PopId, u64>)>,
    pops: HashMap<PopId, (u64, BTreeSet<RegionKey>)>,
}

impl StatsBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, record: &UserRecord) -> &mut Self {
        self.add_weighted(&record.geo, record.home_pop.as_ref(), 1)
    }

    pub fn add_weighted(&mut self, geo: &GeoIpEntry, home_pop: Option<&PopId>, users: u64) -> &mut Self {
        if users == 0 {
            return self;
        }
        self.discovered += users;
        match continent_of(geo) {
            Ok(c) => *self.continents.entry(c).or_default() += users,
            Err(_) => self.unmapped += users,
        }
        let region = geo.region();
        let slot = self.regions.entry(region.clone()).or_default();
        slot.0 += users;
        if let Some(pop) = home_pop {
            self.homed += users;
            *slot.1.entry(pop.clone()).or_default() += users;
            let p = self.pops.entry(pop.clone()).or_default();
            p.0 += users;
            p.1.insert(region);
        }
        self
    }

    pub fn finish(&self) -> Stats {
        let mut continents: Vec<ContinentShare> = self
            .continents
            .iter()
            .map(|(&continent, &users)| ContinentShare { continent, users, percent: percent(users, self.discovered) })
            .collect();
        continents.sort_by(|a, b| b.users.cmp(&a.users).then(a.continent.cmp(&b.continent)));

        let mut regions: Vec<RegionCount> = self
            .regions
            .iter()
            .map(|(region, (users, pops))| RegionCount {
                region: region.clone(),
                users: *users,
                homed: pops.values().sum(),
                pops: pops.keys().cloned().collect(),
            })
            .collect();
        regions.sort_by(|a, b| b.users.cmp(&a.users).then_with(|| a.region.cmp(&b.region)));
        let region_codes = self
            .regions
            .keys()
            .filter(|r| !r.region_code.is_empty())
            .map(|r| r.region_code.as_str())
            .collect::<BTreeSet<_>>()
            .len();

        let mut pops: Vec<PopServiceStats> = self
            .pops
            .iter()
            .map(|(pop, (users, regions))| PopServiceStats {
                pop: pop.clone(),
                user_count: *users,
                regions: regions.clone(),
            })
            .collect();
        pops.sort_by(|a, b| b.user_count.cmp(&a.user_count).then_with(|| a.pop.cmp(&b.pop)));

        let mut multi_pop_regions: Vec<MultiPopRegion> = self
            .regions
            .iter()
            .filter(|(_, (_, pops))| pops.len() >= 2)
            .map(|(region, (_, pops))| MultiPopRegion { region: region.clone(), pops: pops.clone() })
            .collect();
        multi_pop_regions.sort_by(|a, b| a.region.cmp(&b.region));

        Stats {
            discovered: self.discovered,
            homed: self.homed,
            unmapped_country: self.unmapped,
            continents,
            regions,
            region_codes,
            pops,
            multi_pop_regions,
        }
    }
}

pub fn compute_stats<'a, I: IntoIterator<Item = &'a UserRecord>>(records: I) -> Stats {
    let mut b = StatsBuilder::new();
    for r in records {
        b.add(r);
    }
    b.finish()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn render_continents_csv(stats: &Stats) -> String {
    let mut out = String::from("continent,users,percent\n");
    for c in &stats.continents {
        let _ = writeln!(out, "{},{},{}", c.continent, c.users, c.percent);
    }
    out
}

pub fn render_regions_csv(stats: &Stats) -> String {
    let mut out = String::from("region,country,region_code,city,users,homed,pops\n");
    for r in &stats.regions {
        let pops: Vec<&str> = r.pops.iter().map(PopId::code).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            csv_field(&r.region.to_string()),
            r.region.country,
            r.region.region_code,
            csv_field(&r.region.city),
            r.users,
            r.homed,
            pops.join(";")
        );
    }
    out
}

/// PoP service table: `pop,location,users_served,regions_served`. Locations
/// come from `labels`, blank when unknown.
pub fn render_pops_csv(stats: &Stats, labels: &HashMap<PopId, String>) -> String {
    let mut out = String::from("pop,location,users_served,regions_served\n");
    for p in &stats.pops {
        let location = labels.get(&p.pop).map(String::as_str).unwrap_or("");
        let _ = writeln!(out, "{},{},{},{}", p.pop, csv_field(location), p.user_count, p.regions.len());
    }
    out
}

pub fn render_multi_pop_csv(stats: &Stats) -> String {
    let mut out = String::from("region,pops,users\n");
    for m in &stats.multi_pop_regions {
        let pops: Vec<String> = m.pops.iter().map(|(p, n)| format!("{p}:{n}")).collect();
        let _ =
            writeln!(out, "{},{},{}", csv_field(&m.region.to_string()), pops.join(";"), m.pops.values().sum::<u64>());
    }
    out
}
