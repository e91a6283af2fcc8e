// SPDX-License-Identifier: Apache-2.0

//! Criterion benchmarks for the hot paths of the measurement pipeline.

use std::hint::black_box;
use std::net::Ipv6Addr;

use criterion::{BenchmarkId, Criterion, Throughput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use leomap::addressing::generate_candidates;
use leomap::backbone::{cluster_unresolved, Attribution, BackboneRouter, PopRef};
use leomap::discovery::{compute_stats, UserRecord};
use leomap::geoip::{GeoIndex, GeoIpEntry};
use leomap::ptrmap::{parse_ptr, PopId};

fn candidates(c: &mut Criterion) {
    let mut group = c.benchmark_group("candidates");
    for len in [44u8, 40] {
        let prefix = format!("2605:59c8::/{len}").parse().unwrap();
        let count = 1u64 << (56 - len);
        group.throughput(Throughput::Elements(count));
        group.bench_with_input(BenchmarkId::new("plen", len), &prefix, |b, &p| {
            b.iter(|| generate_candidates(p, 56).unwrap().fold(0u128, |acc, a| acc ^ u128::from(a)))
        });
    }
    group.finish();
}

fn geoip_lookup(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let entries: Vec<GeoIpEntry> = (0..4096u128)
        .map(|i| {
            let base = Ipv6Addr::from((0x2605_59c8u128 << 96) | (i << 84));
            GeoIpEntry::new(format!("{base}/44").parse().unwrap(), "US", "US-WA", "Seattle").unwrap()
        })
        .collect();
    let index = GeoIndex::build(entries);
    let probes: Vec<Ipv6Addr> =
        (0..1024).map(|_| Ipv6Addr::from((0x2605_59c8u128 << 96) | rng.random_range(0..1u128 << 96))).collect();
    let mut group = c.benchmark_group("geoip");
    group.throughput(Throughput::Elements(probes.len() as u64));
    group.bench_function("lookup", |b| b.iter(|| probes.iter().filter(|a| index.lookup(**a).is_some()).count()));
    group.finish();
}

fn ptr_parse(c: &mut Criterion) {
    let names = ["customer.chcoilx1.pop.starlinkisp.net", "edge3.sttlwax1.pop.starlinkisp.net", "host.example.org"];
    c.bench_function("parse_ptr", |b| {
        b.iter(|| names.iter().filter(|n| parse_ptr(black_box(n)).pop().is_some()).count())
    });
}

fn clustering(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut group = c.benchmark_group("cluster_unresolved");
    for n in [50usize, 200] {
        let xs: Vec<f64> = (0..n).map(|i| (i % 8) as f64 * 7.0 + rng.random_range(-2.0..2.0)).collect();
        let routers: Vec<BackboneRouter> = (0..n)
            .map(|i| {
                let mut r = BackboneRouter::unresolved(Ipv6Addr::from((0x2620_0134_b0ffu128 << 80) | i as u128));
                if i % 4 == 0 {
                    r.pop = Some(PopRef::Known(PopId::new("test", (i % 8) as u32 + 1).unwrap()));
                    r.attribution = Attribution::Ptr;
                }
                r
            })
            .collect();
        let matrix: Vec<Vec<f64>> = xs.iter().map(|a| xs.iter().map(|b| (a - b).abs()).collect()).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &(routers, matrix), |b, (r, m)| {
            b.iter(|| cluster_unresolved(r, m, 5.0).unwrap())
        });
    }
    group.finish();
}

fn stats(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let prefix = "2605:5800::/24".parse().unwrap();
    let geos: Vec<GeoIpEntry> = ["Seattle", "Spokane", "Tacoma", "Yakima"]
        .iter()
        .map(|city| GeoIpEntry::new(prefix, "US", "US-WA", city).unwrap())
        .collect();
    let pops: Vec<PopId> = ["sttlwax1", "chcoilx1"].iter().map(|p| p.parse().unwrap()).collect();
    let at = "2024-11-25T00:00:00Z".parse().unwrap();
    let records: Vec<UserRecord> = (0..100_000u128)
        .map(|i| {
            let mut r = UserRecord::new(
                Ipv6Addr::from((0x0026_0558_u128 << 104) | (i << 72) | 1),
                geos[rng.random_range(0..4)].clone(),
                at,
            );
            r.home_pop = Some(pops[rng.random_range(0..2)].clone());
            r
        })
        .collect();
    let mut group = c.benchmark_group("stats");
    group.throughput(Throughput::Elements(records.len() as u64));
    group.bench_function("compute_100k", |b| b.iter(|| compute_stats(&records)));
    group.finish();
}

pub fn benchmarks(c: &mut Criterion) {
    candidates(c);
    geoip_lookup(c);
    ptr_parse(c);
    clustering(c);
    stats(c);
}
