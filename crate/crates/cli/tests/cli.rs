// SPDX-License-Identifier: Apache-2.0

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::net::Ipv6Addr;

use leomap::discovery::{read_dataset, write_dataset, UserRecord};
use leomap::geoip::GeoIpEntry;
use leomap::probe::LiveAdapter;
use leomap::ptrmap::{customer_name, PopId};
use leomap::simnet::build_sim_from_toml;
use tempfile::tempdir;

use common::{fixture, leomap, ok, read, with_fast};

fn acceptance_config() -> String {
    fixture("acceptance.toml").display().to_string()
}

fn dataset_addrs(text: &str) -> BTreeSet<Ipv6Addr> {
    read_dataset(text.as_bytes()).unwrap().records.iter().map(|r| r.addr).collect()
}

#[test]
fn help_and_usage_exit_codes() {
    let dir = tempdir().unwrap();
    assert_eq!(leomap(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(leomap(dir.path(), &["--version"]).status.code(), Some(0));
    assert_eq!(leomap(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(leomap(dir.path(), &["gen", "--geoip", "x.csv"]).status.code(), Some(1));

    fs::write(dir.path().join("feed.csv"), "2605:59c8::/40,US,US-WA,Seattle\n").unwrap();
    let out = leomap(dir.path(), &["scan", "--geoip", "feed.csv", "--out", "u.tsv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--sim-config"));

    let out = leomap(dir.path(), &["gen", "--geoip", "missing.csv", "--out", "c.txt"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_expands_seattle_row() {
    let dir = tempdir().unwrap();
    fs::write(dir.path().join("feed.csv"), "2605:59c8::/40,US,US-WA,Seattle\n").unwrap();
    let stdout = ok(dir.path(), &["gen", "--geoip", "feed.csv", "--plen", "56", "--out", "cands.txt"]);
    assert_eq!(stdout, "2605:59c8::/40\t65536\n");
    let text = read(dir.path(), "cands.txt");
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 65_536);
    assert_eq!(lines[0], "2605:59c8::1");
    assert_eq!(lines[1], "2605:59c8:0:100::1");
    assert_eq!(lines[65_535], "2605:59c8:ff:ff00::1");

    let manifest: serde_json::Value = serde_json::from_str(&read(dir.path(), "cands.txt.manifest.json")).unwrap();
    assert_eq!(manifest["command"], "gen");
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["outputs"][0], "cands.txt");
}

#[test]
fn gen_rejects_empty_feed() {
    let dir = tempdir().unwrap();
    fs::write(dir.path().join("feed.csv"), "# nothing here\n").unwrap();
    let out = leomap(dir.path(), &["gen", "--geoip", "feed.csv", "--out", "cands.txt"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no valid rows"));
}

#[test]
fn gen_skips_rows_that_are_too_short() {
    let dir = tempdir().unwrap();
    fs::write(dir.path().join("feed.csv"), "2605:5900::/32,US,US-TX,Dallas\n2605:59c8::/40,US,US-WA,Seattle\n")
        .unwrap();
    let out = leomap(dir.path(), &["gen", "--geoip", "feed.csv", "--out", "cands.txt"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("2605:5900::/32"));
    assert_eq!(String::from_utf8_lossy(&out.stdout), "2605:59c8::/40\t65536\n");
    assert_eq!(read(dir.path(), "cands.txt").lines().count(), 65_536);

    fs::write(dir.path().join("short.csv"), "2605:5900::/32,US,US-TX,Dallas\n").unwrap();
    let out = leomap(dir.path(), &["gen", "--geoip", "short.csv", "--out", "none.txt"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn scan_finds_ground_truth_and_composes_with_gen() {
    let dir = tempdir().unwrap();
    let cfg = acceptance_config();
    let truth = build_sim_from_toml(&fs::read_to_string(&cfg).unwrap()).unwrap();
    let expected: BTreeSet<Ipv6Addr> = truth.users.iter().map(|u| u.addr).collect();

    ok(dir.path(), &["sim", "feed", "--sim-config", &cfg, "--out", "feed.csv"]);
    ok(dir.path(), &with_fast(&["scan", "--geoip", "feed.csv", "--sim-config", &cfg, "--out", "direct.tsv"]));
    assert_eq!(dataset_addrs(&read(dir.path(), "direct.tsv")), expected);

    ok(dir.path(), &["gen", "--geoip", "feed.csv", "--out", "cands.txt"]);
    ok(
        dir.path(),
        &with_fast(&[
            "scan",
            "--geoip",
            "feed.csv",
            "--candidates",
            "cands.txt",
            "--sim-config",
            &cfg,
            "--out",
            "piped.tsv",
        ]),
    );
    assert_eq!(read(dir.path(), "piped.tsv"), read(dir.path(), "direct.tsv"));

    let manifest: serde_json::Value = serde_json::from_str(&read(dir.path(), "direct.tsv.manifest.json")).unwrap();
    assert_eq!(manifest["adapter"], "sim");
    assert_eq!(manifest["seed"], 2024);
}

#[test]
fn seed_flag_changes_the_simulated_network() {
    let dir = tempdir().unwrap();
    let cfg = acceptance_config();
    ok(dir.path(), &["sim", "truth", "--sim-config", &cfg, "--out", "a.json"]);
    ok(dir.path(), &["sim", "truth", "--sim-config", &cfg, "--seed", "9", "--out", "b.json"]);
    assert_ne!(read(dir.path(), "a.json"), read(dir.path(), "b.json"));
    let b: serde_json::Value = serde_json::from_str(&read(dir.path(), "b.json")).unwrap();
    assert_eq!(b["seed"], 9);
}

#[test]
fn pops_summary_matches_brute_force_counts() {
    let dir = tempdir().unwrap();
    let cfg = acceptance_config();
    let truth = build_sim_from_toml(&fs::read_to_string(&cfg).unwrap()).unwrap();
    ok(dir.path(), &["sim", "feed", "--sim-config", &cfg, "--out", "feed.csv"]);
    ok(dir.path(), &with_fast(&["scan", "--geoip", "feed.csv", "--sim-config", &cfg, "--out", "users.tsv"]));
    let stdout =
        ok(dir.path(), &with_fast(&["pops", "--dataset", "users.tsv", "--sim-config", &cfg, "--out", "homed.tsv"]));

    let mut users: BTreeMap<&PopId, u64> = BTreeMap::new();
    let mut regions: BTreeMap<&PopId, BTreeSet<(&str, &str, &str)>> = BTreeMap::new();
    for u in &truth.users {
        *users.entry(&u.pop).or_default() += 1;
        regions.entry(&u.pop).or_default().insert((&u.geo.country, &u.geo.region_code, &u.geo.city));
    }
    let table = read(dir.path(), "homed.tsv.pops.csv");
    assert_eq!(stdout, table);
    let mut rows = table.lines();
    assert_eq!(rows.next(), Some("pop,location,users_served,regions_served"));
    let mut seen = 0;
    for row in rows {
        let cols: Vec<&str> = row.split(',').collect();
        let pop: PopId = cols[0].parse().unwrap();
        assert_eq!(cols[1], truth.pop(&pop).unwrap().label);
        assert_eq!(cols[2].parse::<u64>().unwrap(), users[&pop], "{row}");
        assert_eq!(cols[3].parse::<usize>().unwrap(), regions[&pop].len(), "{row}");
        seen += 1;
    }
    assert_eq!(seen, users.len());

    let homed = read_dataset(read(dir.path(), "homed.tsv").as_bytes()).unwrap().records;
    let truth_pop: BTreeMap<Ipv6Addr, &PopId> = truth.users.iter().map(|u| (u.addr, &u.pop)).collect();
    assert!(homed.iter().all(|r| r.home_pop.as_ref() == Some(truth_pop[&r.addr])));
}

#[test]
fn pops_on_empty_dataset_writes_an_empty_table() {
    let dir = tempdir().unwrap();
    let cfg = acceptance_config();
    let mut empty = Vec::new();
    write_dataset(&[], &mut empty).unwrap();
    fs::write(dir.path().join("empty.tsv"), empty).unwrap();
    ok(dir.path(), &with_fast(&["pops", "--dataset", "empty.tsv", "--sim-config", &cfg, "--out", "out.tsv"]));
    assert_eq!(read(dir.path(), "out.tsv.pops.csv"), "pop,location,users_served,regions_served\n");
}

#[test]
fn pops_reports_missing_ptr_records() {
    let dir = tempdir().unwrap();
    let mut text = fs::read_to_string(fixture("acceptance.toml")).unwrap();
    text.push_str("\n[faults]\nsuppressed_user_ptr_rate = 0.2\n");
    fs::write(dir.path().join("net.toml"), &text).unwrap();
    let truth = build_sim_from_toml(&text).unwrap();
    let missing = truth.users.iter().filter(|u| truth.answer_ptr(u.addr).is_none()).count();
    assert!(missing > 0);

    ok(dir.path(), &["sim", "feed", "--sim-config", "net.toml", "--out", "feed.csv"]);
    ok(dir.path(), &with_fast(&["scan", "--geoip", "feed.csv", "--sim-config", "net.toml", "--out", "users.tsv"]));
    let out = leomap(
        dir.path(),
        &with_fast(&["pops", "--dataset", "users.tsv", "--sim-config", "net.toml", "--out", "homed.tsv"]),
    );
    assert!(out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains(&format!("no-ptr {missing},")), "{stderr}");
}

fn mapped_inputs(dir: &std::path::Path, cfg: &str) {
    ok(dir, &["sim", "feed", "--sim-config", cfg, "--out", "feed.csv"]);
    ok(dir, &with_fast(&["scan", "--geoip", "feed.csv", "--sim-config", cfg, "--out", "users.tsv"]));
    ok(dir, &with_fast(&["pops", "--dataset", "users.tsv", "--sim-config", cfg, "--out", "homed.tsv"]));
}

fn graph_edges(doc: &serde_json::Value) -> BTreeSet<(String, String)> {
    doc["edges"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| (e["a"].as_str().unwrap().to_string(), e["b"].as_str().unwrap().to_string()))
        .collect()
}

#[test]
fn map_from_one_vantage_recovers_its_shortest_path_tree() {
    let dir = tempdir().unwrap();
    let cfg = acceptance_config();
    let truth = build_sim_from_toml(&fs::read_to_string(&cfg).unwrap()).unwrap();
    mapped_inputs(dir.path(), &cfg);
    let out = leomap(
        dir.path(),
        &with_fast(&[
            "map",
            "--dataset",
            "homed.tsv",
            "--sim-config",
            &cfg,
            "--vantage",
            "seattle-dish",
            "--out",
            "g.json",
        ]),
    );
    assert!(out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("warning: no vantage in PoPs"), "{stderr}");

    let home = truth.vantage("seattle-dish").unwrap().pop;
    let mut expected = BTreeSet::new();
    for p in &truth.pops {
        let path = truth.route(&home, &p.id).unwrap();
        for w in path.windows(2) {
            let (a, b) = (w[0].to_string(), w[1].to_string());
            expected.insert(if a < b { (a, b) } else { (b, a) });
        }
    }
    let doc: serde_json::Value = serde_json::from_str(&read(dir.path(), "g.json")).unwrap();
    assert_eq!(graph_edges(&doc), expected);
    assert!(expected.len() < truth.links.len());

    let coverage: serde_json::Value = serde_json::from_str(&read(dir.path(), "g.json.coverage.json")).unwrap();
    assert_eq!(coverage["pops_without_vantage"].as_array().unwrap().len(), truth.pops.len() - 1);
    assert!(read(dir.path(), "g.json.routers.csv").starts_with("addr,pop,attribution"));
}

#[test]
fn map_without_vantages_is_a_usage_error() {
    let dir = tempdir().unwrap();
    let cfg = acceptance_config();
    let mut empty = Vec::new();
    write_dataset(&[], &mut empty).unwrap();
    fs::write(dir.path().join("empty.tsv"), empty).unwrap();
    let out = leomap(dir.path(), &["map", "--dataset", "empty.tsv", "--sim-config", &cfg, "--out", "g.json"]);
    assert_eq!(out.status.code(), Some(1));
    let out = leomap(
        dir.path(),
        &["map", "--dataset", "empty.tsv", "--sim-config", &cfg, "--vantage", "nowhere", "--out", "g.json"],
    );
    assert_eq!(out.status.code(), Some(1));
}

fn record(addr: &str, country: &str, region: &str, city: &str, pop: Option<&str>) -> UserRecord {
    let addr: Ipv6Addr = addr.parse().unwrap();
    let geo = GeoIpEntry::new("2605:59c8::/40".parse().unwrap(), country, region, city).unwrap();
    let mut r = UserRecord::new(addr, geo, "2024-11-25T00:00:00Z".parse().unwrap());
    r.home_pop = pop.map(|p| p.parse().unwrap());
    r.ptr_name = r.home_pop.as_ref().map(customer_name);
    r
}

#[test]
fn stats_single_record() {
    let dir = tempdir().unwrap();
    let mut buf = Vec::new();
    write_dataset(&[record("2605:59c8::1", "US", "US-WA", "Seattle", Some("sttlwax1"))], &mut buf).unwrap();
    fs::write(dir.path().join("one.tsv"), buf).unwrap();
    ok(dir.path(), &["stats", "--dataset", "one.tsv", "--out", "tables"]);
    assert_eq!(read(dir.path(), "tables/continents.csv"), "continent,users,percent\nNorth America,1,100\n");
    let regions = read(dir.path(), "tables/regions.csv");
    assert_eq!(regions.lines().count(), 2);
    assert!(regions.lines().nth(1).unwrap().contains("Seattle"));
    assert_eq!(read(dir.path(), "tables/multi_pop_regions.csv").lines().count(), 1);
    assert!(dir.path().join("tables/manifest.json").exists());
}

#[test]
fn stats_lists_regions_served_by_two_pops() {
    let dir = tempdir().unwrap();
    let mut buf = Vec::new();
    let records = [
        record("2605:59c8::1", "US", "US-WA", "Seattle", Some("sttlwax1")),
        record("2605:59c8:0:100::1", "US", "US-WA", "Seattle", Some("chcoilx1")),
        record("2605:59c8:0:200::1", "US", "US-WA", "Seattle", Some("sttlwax1")),
        record("2605:59c8:0:300::1", "US", "US-IL", "Chicago", Some("chcoilx1")),
    ];
    write_dataset(&records, &mut buf).unwrap();
    fs::write(dir.path().join("d.tsv"), buf).unwrap();
    fs::write(
        dir.path().join("sites.csv"),
        "pop,label,lat,lon\nsttlwax1,Seattle,47.6,-122.3\nchcoilx1,Chicago,41.9,-87.6\n",
    )
    .unwrap();
    ok(dir.path(), &["stats", "--dataset", "d.tsv", "--sites", "sites.csv", "--out", "t"]);
    assert_eq!(
        read(dir.path(), "t/multi_pop_regions.csv"),
        "region,pops,users\n\"Seattle, US-WA, US\",chcoilx1:1;sttlwax1:2,3\n"
    );
    assert!(read(dir.path(), "t/pops.csv").contains("sttlwax1,Seattle,2,1"));
}

#[test]
fn live_adapter_without_privileges_fails_at_startup() {
    if LiveAdapter::new().is_ok() {
        eprintln!("raw ICMPv6 sockets are available here; the unprivileged path cannot be exercised");
        return;
    }
    let dir = tempdir().unwrap();
    fs::write(dir.path().join("feed.csv"), "2605:59c8::/40,US,US-WA,Seattle\n").unwrap();
    let out = leomap(dir.path(), &["scan", "--adapter", "live", "--geoip", "feed.csv", "--out", "u.tsv"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!dir.path().join("u.tsv").exists());
}
