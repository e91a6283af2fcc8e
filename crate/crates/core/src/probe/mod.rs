// SPDX-License-Identifier: Apache-2.0

//! Probing contract and batch orchestration.
//!
//! An adapter answers three questions about an address: does it echo, what
//! path does a hop-limited probe take towards it, and what is its PTR name.
//! [`run_batch`] fans a target stream out over an adapter with a token-bucket
//! dispatch rate and a fixed number of in-flight probes.

mod bucket;
pub mod live;

use std::fmt;
use std::net::Ipv6Addr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addressing::Ipv6Prefix;

pub use bucket::TokenBucket;
pub use live::LiveAdapter;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProbeError {
    #[error("probe adapter unavailable: {0}")]
    AdapterUnavailable(String),
    #[error("invalid probe policy: {0}")]
    InvalidPolicy(String),
    #[error("max_ttl {0} outside 1..=64")]
    InvalidMaxTtl(u8),
    #[error("{0} is blocklisted")]
    Blocklisted(Ipv6Addr),
    #[error("probe I/O failure: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterKind {
    Live,
    Sim,
}

impl fmt::Display for AdapterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdapterKind::Live => "live",
            AdapterKind::Sim => "sim",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HopObservation {
    pub ttl: u8,
    pub responder: Option<Ipv6Addr>,
    pub rtt_samples: Vec<f64>,
}

impl HopObservation {
    pub fn anonymous(ttl: u8) -> Self {
        Self { ttl, responder: None, rtt_samples: Vec::new() }
    }

    pub fn median_rtt(&self) -> Option<f64> {
        median(&self.rtt_samples)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracerouteResult {
    pub target: Ipv6Addr,
    pub hops: Vec<HopObservation>,
    pub reached: bool,
}

impl TracerouteResult {
    /// Checks the structural invariants: TTLs 1, 2, 3, ...; anonymous hops
    /// carry no samples; samples finite and non-negative; a reached trace
    /// ends at the target.
    pub fn check(&self) -> Result<(), String> {
        for (i, hop) in self.hops.iter().enumerate() {
            if usize::from(hop.ttl) != i + 1 {
                return Err(format!("hop {i} has ttl {}", hop.ttl));
            }
            if hop.responder.is_none() && !hop.rtt_samples.is_empty() {
                return Err(format!("anonymous hop {} has samples", hop.ttl));
            }
            if hop.rtt_samples.iter().any(|s| !s.is_finite() || *s < 0.0) {
                return Err(format!("hop {} has an invalid sample", hop.ttl));
            }
        }
        if self.reached && self.hops.last().and_then(|h| h.responder) != Some(self.target) {
            return Err("reached trace does not end at the target".into());
        }
        Ok(())
    }

    pub fn final_hop(&self) -> Option<&HopObservation> {
        self.hops.last()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EchoOutcome {
    Alive,
    Silent,
}

/// Result of a PTR query. NXDOMAIN and timeouts both mean "no name" but are
/// kept apart for diagnostics.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PtrAnswer {
    Name(String),
    NxDomain,
    Timeout,
}

impl PtrAnswer {
    pub fn name(&self) -> Option<&str> {
        match self {
            PtrAnswer::Name(n) => Some(n),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbePolicy {
    pub max_in_flight: u32,
    pub rate_per_second: u64,
    pub timeout_ms: u64,
    pub retries: u32,
    pub echo_attempts: u32,
}

impl Default for ProbePolicy {
    fn default() -> Self {
        Self { max_in_flight: 256, rate_per_second: 1000, timeout_ms: 2000, retries: 2, echo_attempts: 3 }
    }
}

impl ProbePolicy {
    pub fn validate(&self) -> Result<(), ProbeError> {
        let bad = |what: &str| Err(ProbeError::InvalidPolicy(format!("{what} must be at least 1")));
        if self.max_in_flight == 0 {
            return bad("max_in_flight");
        }
        if self.rate_per_second == 0 {
            return bad("rate_per_second");
        }
        if self.timeout_ms == 0 {
            return bad("timeout_ms");
        }
        if self.echo_attempts == 0 {
            return bad("echo_attempts");
        }
        Ok(())
    }

    /// Samples collected per traceroute hop.
    pub fn samples_per_hop(&self) -> usize {
        self.retries as usize + 1
    }
}

pub fn check_max_ttl(max_ttl: u8) -> Result<(), ProbeError> {
    if (1..=64).contains(&max_ttl) {
        Ok(())
    } else {
        Err(ProbeError::InvalidMaxTtl(max_ttl))
    }
}

/// The seam between measurement logic and the network. Implementations must
/// tolerate concurrent calls.
pub trait ProbeAdapter: Send + Sync {
    fn kind(&self) -> AdapterKind;

    fn echo(&self, target: Ipv6Addr, policy: &ProbePolicy) -> Result<EchoOutcome, ProbeError>;

    fn traceroute(&self, target: Ipv6Addr, max_ttl: u8, policy: &ProbePolicy) -> Result<TracerouteResult, ProbeError>;

    fn resolve_ptr(&self, addr: Ipv6Addr, policy: &ProbePolicy) -> Result<PtrAnswer, ProbeError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeOp {
    Echo,
    Traceroute { max_ttl: u8 },
    Ptr,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProbeReply {
    Echo(EchoOutcome),
    Trace(TracerouteResult),
    Ptr(PtrAnswer),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchItem {
    pub target: Ipv6Addr,
    pub result: Result<ProbeReply, ProbeError>,
}

#[derive(Debug, Clone, Default)]
pub struct BatchOptions {
    /// Targets inside any of these prefixes are never probed; they come back
    /// as [`ProbeError::Blocklisted`].
    pub blocklist: Vec<Ipv6Prefix>,
    /// Randomize dispatch order with this seed. Materializes the target list.
    pub shuffle_seed: Option<u64>,
}

pub fn probe_once(adapter: &dyn ProbeAdapter, target: Ipv6Addr, op: ProbeOp, policy: &ProbePolicy) -> BatchItem {
    let result = match op {
        ProbeOp::Echo => adapter.echo(target, policy).map(ProbeReply::Echo),
        ProbeOp::Traceroute { max_ttl } => adapter.traceroute(target, max_ttl, policy).map(ProbeReply::Trace),
        ProbeOp::Ptr => adapter.resolve_ptr(target, policy).map(ProbeReply::Ptr),
    };
    BatchItem { target, result }
}

/// Stream of batch results in completion order.
pub struct BatchStream {
    results: mpsc::Receiver<BatchItem>,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl Iterator for BatchStream {
    type Item = BatchItem;

    fn next(&mut self) -> Option<BatchItem> {
        self.results.recv().ok()
    }
}

impl Drop for BatchStream {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

/// Probes every target once. At most `max_in_flight` probes are outstanding
/// and dispatch is paced by a token bucket of rate `rate_per_second` and burst
/// `min(rate, max_in_flight)`.
pub fn run_batch<I>(
    adapter: Arc<dyn ProbeAdapter>,
    targets: I,
    op: ProbeOp,
    policy: &ProbePolicy,
    options: &BatchOptions,
) -> Result<BatchStream, ProbeError>
where
    I: IntoIterator<Item = Ipv6Addr>,
    I::IntoIter: Send + 'static,
{
    policy.validate()?;
    if let ProbeOp::Traceroute { max_ttl } = op {
        check_max_ttl(max_ttl)?;
    }

    let (result_tx, result_rx) = mpsc::channel::<BatchItem>();
    let (work_tx, work_rx) = mpsc::sync_channel::<Ipv6Addr>(0);
    let work_rx = Arc::new(Mutex::new(work_rx));
    let stop = Arc::new(AtomicBool::new(false));
    let mut threads = Vec::new();

    let workers = policy.max_in_flight as usize;
    for _ in 0..workers {
        let adapter = Arc::clone(&adapter);
        let work_rx = Arc::clone(&work_rx);
        let result_tx = result_tx.clone();
        let policy = policy.clone();
        threads.push(thread::spawn(move || loop {
            let next = work_rx.lock().expect("work queue poisoned").recv();
            let Ok(target) = next else { break };
            if result_tx.send(probe_once(adapter.as_ref(), target, op, &policy)).is_err() {
                break;
            }
        }));
    }

    let blocklist = options.blocklist.clone();
    let shuffle = options.shuffle_seed;
    let rate = policy.rate_per_second;
    let burst = rate.min(u64::from(policy.max_in_flight)).max(1);
    let targets = targets.into_iter();
    let dispatch_stop = Arc::clone(&stop);
    threads.push(thread::spawn(move || {
        let mut bucket = TokenBucket::new(rate, burst, std::time::Instant::now());
        let ordered: Box<dyn Iterator<Item = Ipv6Addr>> = match shuffle {
            Some(seed) => {
                let mut all: Vec<Ipv6Addr> = targets.collect();
                all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                Box::new(all.into_iter())
            }
            None => Box::new(targets),
        };
        for target in ordered {
            if dispatch_stop.load(Ordering::Relaxed) {
                break;
            }
            if blocklist.iter().any(|p| p.contains(target)) {
                let _ = result_tx.send(BatchItem { target, result: Err(ProbeError::Blocklisted(target)) });
                continue;
            }
            bucket.take();
            if work_tx.send(target).is_err() {
                break;
            }
        }
        drop(work_tx);
    }));

    Ok(BatchStream { results: result_rx, stop, threads })
}

pub fn median(samples: &[f64]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[mid] } else { (v[mid - 1] + v[mid]) / 2.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;
    use std::sync::atomic::AtomicUsize;
    use std::time::{Duration, Instant};

    /// Echoes for even last octets; records concurrency and dispatch times.
    #[derive(Default)]
    struct Recorder {
        in_flight: AtomicUsize,
        peak: AtomicUsize,
        stamps: Mutex<Vec<Instant>>,
        delay: Duration,
    }

    impl ProbeAdapter for Recorder {
        fn kind(&self) -> AdapterKind {
            AdapterKind::Sim
        }

        fn echo(&self, target: Ipv6Addr, _: &ProbePolicy) -> Result<EchoOutcome, ProbeError> {
            self.stamps.lock().unwrap().push(Instant::now());
            let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            thread::sleep(self.delay);
            self.in_flight.fetch_sub(1, Ordering::SeqCst);
            if target.octets()[15] == 0xff {
                return Err(ProbeError::Io("boom".into()));
            }
            Ok(if target.octets()[15].is_multiple_of(2) { EchoOutcome::Alive } else { EchoOutcome::Silent })
        }

        fn traceroute(&self, target: Ipv6Addr, _: u8, _: &ProbePolicy) -> Result<TracerouteResult, ProbeError> {
            Ok(TracerouteResult { target, hops: vec![], reached: false })
        }

        fn resolve_ptr(&self, _: Ipv6Addr, _: &ProbePolicy) -> Result<PtrAnswer, ProbeError> {
            Ok(PtrAnswer::NxDomain)
        }
    }

    fn targets(n: u32) -> Vec<Ipv6Addr> {
        (0..n).map(|i| Ipv6Addr::from(0x2605_59c8u128 << 96 | u128::from(i))).collect()
    }

    fn fast_policy() -> ProbePolicy {
        ProbePolicy { max_in_flight: 8, rate_per_second: 1_000_000, ..ProbePolicy::default() }
    }

    #[test]
    fn batch_equals_sequential_oracle() {
        let adapter = Arc::new(Recorder::default());
        let input = targets(1000);
        let policy = ProbePolicy { rate_per_second: 10_000, ..fast_policy() };
        let mut seq: Vec<_> = input.iter().map(|t| probe_once(adapter.as_ref(), *t, ProbeOp::Echo, &policy)).collect();
        let mut got: Vec<_> =
            run_batch(adapter.clone(), input.clone(), ProbeOp::Echo, &policy, &BatchOptions::default())
                .unwrap()
                .collect();
        assert_eq!(got.len(), 1000);
        let key = |b: &BatchItem| b.target;
        seq.sort_by_key(key);
        got.sort_by_key(key);
        assert_eq!(got, seq);
        // Errors for individual targets do not abort the batch.
        assert!(got.iter().any(|b| b.result.is_err()));
    }

    #[test]
    fn empty_batch() {
        let adapter = Arc::new(Recorder::default());
        let got: Vec<_> =
            run_batch(adapter, Vec::new(), ProbeOp::Echo, &fast_policy(), &BatchOptions::default()).unwrap().collect();
        assert!(got.is_empty());
    }

    #[test]
    fn slow_rate_paces_dispatch() {
        let adapter = Arc::new(Recorder::default());
        let policy = ProbePolicy { rate_per_second: 1, ..fast_policy() };
        let start = Instant::now();
        let n = run_batch(adapter, targets(3), ProbeOp::Echo, &policy, &BatchOptions::default()).unwrap().count();
        assert_eq!(n, 3);
        assert!(start.elapsed() >= Duration::from_secs(2), "{:?}", start.elapsed());
    }

    #[test]
    fn in_flight_is_bounded() {
        let adapter = Arc::new(Recorder { delay: Duration::from_millis(2), ..Recorder::default() });
        let policy = ProbePolicy { max_in_flight: 4, ..fast_policy() };
        let n =
            run_batch(adapter.clone(), targets(200), ProbeOp::Echo, &policy, &BatchOptions::default()).unwrap().count();
        assert_eq!(n, 200);
        let peak = adapter.peak.load(Ordering::SeqCst);
        assert!((2..=4).contains(&peak), "peak {peak}");
    }

    #[test]
    fn dispatch_window_bound() {
        let adapter = Arc::new(Recorder::default());
        let policy = ProbePolicy { max_in_flight: 5, rate_per_second: 100, ..fast_policy() };
        let n =
            run_batch(adapter.clone(), targets(250), ProbeOp::Echo, &policy, &BatchOptions::default()).unwrap().count();
        assert_eq!(n, 250);
        let mut stamps = adapter.stamps.lock().unwrap().clone();
        stamps.sort();
        for (i, s) in stamps.iter().enumerate() {
            let window = stamps[i..].iter().take_while(|t| t.duration_since(*s) < Duration::from_secs(1)).count();
            assert!(window <= 105, "{window} probes in a 1 s window");
        }
    }

    #[test]
    fn blocklist_and_shuffle() {
        let adapter = Arc::new(Recorder::default());
        let input = targets(64);
        let options =
            BatchOptions { blocklist: vec![Ipv6Prefix::truncating(input[0], 124).unwrap()], shuffle_seed: Some(9) };
        let got: Vec<_> =
            run_batch(adapter.clone(), input.clone(), ProbeOp::Echo, &fast_policy(), &options).unwrap().collect();
        assert_eq!(got.len(), 64);
        let blocked: HashSet<_> =
            got.iter().filter(|b| matches!(b.result, Err(ProbeError::Blocklisted(_)))).map(|b| b.target).collect();
        assert_eq!(blocked, input[..16].iter().copied().collect());
        assert_eq!(adapter.stamps.lock().unwrap().len(), 48);
    }

    #[test]
    fn early_drop_terminates() {
        let adapter = Arc::new(Recorder::default());
        let mut stream =
            run_batch(adapter, targets(10_000), ProbeOp::Echo, &fast_policy(), &BatchOptions::default()).unwrap();
        assert!(stream.next().is_some());
        drop(stream);
    }

    #[test]
    fn policy_validation() {
        assert!(ProbePolicy::default().validate().is_ok());
        assert!(ProbePolicy { retries: 0, ..ProbePolicy::default() }.validate().is_ok());
        for bad in [
            ProbePolicy { max_in_flight: 0, ..ProbePolicy::default() },
            ProbePolicy { rate_per_second: 0, ..ProbePolicy::default() },
            ProbePolicy { timeout_ms: 0, ..ProbePolicy::default() },
            ProbePolicy { echo_attempts: 0, ..ProbePolicy::default() },
        ] {
            assert!(matches!(bad.validate(), Err(ProbeError::InvalidPolicy(_))));
        }
        let adapter = Arc::new(Recorder::default());
        assert!(matches!(
            run_batch(
                adapter,
                targets(1),
                ProbeOp::Traceroute { max_ttl: 0 },
                &fast_policy(),
                &BatchOptions::default()
            ),
            Err(ProbeError::InvalidMaxTtl(0))
        ));
    }

    #[test]
    fn trace_invariants() {
        let t: Ipv6Addr = "2605:59c8::1".parse().unwrap();
        let hop = |ttl, r: Option<Ipv6Addr>, s: Vec<f64>| HopObservation { ttl, responder: r, rtt_samples: s };
        let ok =
            TracerouteResult { target: t, hops: vec![hop(1, None, vec![]), hop(2, Some(t), vec![1.0])], reached: true };
        assert!(ok.check().is_ok());
        let bad_ttl = TracerouteResult { target: t, hops: vec![hop(2, Some(t), vec![1.0])], reached: true };
        assert!(bad_ttl.check().is_err());
        let anon_samples = TracerouteResult { target: t, hops: vec![hop(1, None, vec![1.0])], reached: false };
        assert!(anon_samples.check().is_err());
        let wrong_end = TracerouteResult { target: t, hops: vec![hop(1, None, vec![])], reached: true };
        assert!(wrong_end.check().is_err());
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }
}
