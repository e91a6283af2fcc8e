// SPDX-License-Identifier: Apache-2.0

//! Live network adapter: ICMPv6 echo over a raw socket, hop-limited echo
//! probes for traceroute, and PTR lookups through the system resolver.
//!
//! Raw ICMPv6 sockets need CAP_NET_RAW; [`LiveAdapter::new`] checks this once
//! so that a missing privilege is reported before any scan starts.

use std::ffi::CStr;
use std::io;
use std::mem::MaybeUninit;
use std::net::{Ipv6Addr, SocketAddrV6};
use std::sync::atomic::{AtomicU16, Ordering};
use std::time::{Duration, Instant};

use socket2::{Domain, Protocol, SockAddr, Socket, Type};

use super::{
    check_max_ttl, AdapterKind, EchoOutcome, HopObservation, ProbeAdapter, ProbeError, ProbePolicy, PtrAnswer,
    TracerouteResult,
};

const ECHO_REQUEST: u8 = 128;
const ECHO_REPLY: u8 = 129;
const DEST_UNREACHABLE: u8 = 1;
const TIME_EXCEEDED: u8 = 3;
const IPV6_HEADER_LEN: usize = 40;
const PAYLOAD: &[u8] = b"leomap-probe";

pub struct LiveAdapter {
    ident: AtomicU16,
}

impl LiveAdapter {
    pub fn new() -> Result<Self, ProbeError> {
        open_socket()?;
        // Low bits of the pid keep concurrent processes apart; the counter
        // keeps concurrent calls within this process apart.
        let seed = (std::process::id() as u16).wrapping_mul(0x9e37);
        Ok(Self { ident: AtomicU16::new(seed) })
    }

    fn next_ident(&self) -> u16 {
        self.ident.fetch_add(1, Ordering::Relaxed)
    }
}

fn open_socket() -> Result<Socket, ProbeError> {
    Socket::new(Domain::IPV6, Type::RAW, Some(Protocol::ICMPV6)).map_err(|e| match e.kind() {
        io::ErrorKind::PermissionDenied => ProbeError::AdapterUnavailable(
            "raw ICMPv6 sockets require CAP_NET_RAW (run as root or grant the capability)".into(),
        ),
        _ => ProbeError::AdapterUnavailable(format!("cannot open raw ICMPv6 socket: {e}")),
    })
}

fn echo_request(ident: u16, seq: u16) -> Vec<u8> {
    // The kernel fills in the ICMPv6 checksum on raw ICMPv6 sockets.
    let mut pkt = vec![ECHO_REQUEST, 0, 0, 0];
    pkt.extend_from_slice(&ident.to_be_bytes());
    pkt.extend_from_slice(&seq.to_be_bytes());
    pkt.extend_from_slice(PAYLOAD);
    pkt
}

#[derive(Debug, PartialEq, Eq)]
enum Reply {
    Echo,
    TimeExceeded,
    Unreachable,
}

/// Matches an inbound ICMPv6 message against our (ident, seq). Raw ICMPv6
/// sockets deliver the message without the outer IPv6 header.
fn match_reply(buf: &[u8], ident: u16, seq: u16) -> Option<Reply> {
    let (&kind, _) = buf.split_first()?;
    let id_seq = |b: &[u8]| -> Option<(u16, u16)> {
        Some((u16::from_be_bytes([*b.get(4)?, *b.get(5)?]), u16::from_be_bytes([*b.get(6)?, *b.get(7)?])))
    };
    match kind {
        ECHO_REPLY => (id_seq(buf)? == (ident, seq)).then_some(Reply::Echo),
        TIME_EXCEEDED | DEST_UNREACHABLE => {
            // 8-byte error header, then the offending IPv6 packet.
            let inner = buf.get(8 + IPV6_HEADER_LEN..)?;
            if *inner.first()? != ECHO_REQUEST || id_seq(inner)? != (ident, seq) {
                return None;
            }
            Some(if kind == TIME_EXCEEDED { Reply::TimeExceeded } else { Reply::Unreachable })
        }
        _ => None,
    }
}

/// Sends one probe and waits for a matching reply until the timeout.
fn probe(
    sock: &Socket,
    target: Ipv6Addr,
    ident: u16,
    seq: u16,
    timeout: Duration,
) -> Result<Option<(Ipv6Addr, Reply, f64)>, ProbeError> {
    let dest = SockAddr::from(SocketAddrV6::new(target, 0, 0, 0));
    let sent = Instant::now();
    sock.send_to(&echo_request(ident, seq), &dest).map_err(|e| ProbeError::Io(e.to_string()))?;
    let deadline = sent + timeout;
    let mut buf = [MaybeUninit::<u8>::uninit(); 1500];
    loop {
        let now = Instant::now();
        if now >= deadline {
            return Ok(None);
        }
        sock.set_read_timeout(Some(deadline - now)).map_err(|e| ProbeError::Io(e.to_string()))?;
        let (len, from) = match sock.recv_from(&mut buf) {
            Ok(r) => r,
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => return Ok(None),
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(ProbeError::Io(e.to_string())),
        };
        // SAFETY: recv_from initialized the first `len` bytes.
        let data: &[u8] = unsafe { std::slice::from_raw_parts(buf.as_ptr().cast(), len) };
        let Some(src) = from.as_socket_ipv6().map(|s| *s.ip()) else { continue };
        if let Some(reply) = match_reply(data, ident, seq) {
            if reply == Reply::Echo && src != target {
                continue;
            }
            return Ok(Some((src, reply, sent.elapsed().as_secs_f64() * 1000.0)));
        }
    }
}

impl ProbeAdapter for LiveAdapter {
    fn kind(&self) -> AdapterKind {
        AdapterKind::Live
    }

    fn echo(&self, target: Ipv6Addr, policy: &ProbePolicy) -> Result<EchoOutcome, ProbeError> {
        let sock = open_socket()?;
        let ident = self.next_ident();
        let timeout = Duration::from_millis(policy.timeout_ms);
        for attempt in 0..policy.echo_attempts {
            if let Some((_, Reply::Echo, _)) = probe(&sock, target, ident, attempt as u16, timeout)? {
                return Ok(EchoOutcome::Alive);
            }
        }
        Ok(EchoOutcome::Silent)
    }

    fn traceroute(&self, target: Ipv6Addr, max_ttl: u8, policy: &ProbePolicy) -> Result<TracerouteResult, ProbeError> {
        check_max_ttl(max_ttl)?;
        let sock = open_socket()?;
        let ident = self.next_ident();
        let timeout = Duration::from_millis(policy.timeout_ms);
        let mut hops = Vec::new();
        let mut reached = false;
        for ttl in 1..=max_ttl {
            sock.set_unicast_hops_v6(u32::from(ttl)).map_err(|e| ProbeError::Io(e.to_string()))?;
            let mut hop = HopObservation::anonymous(ttl);
            let mut last_reply = None;
            for sample in 0..policy.samples_per_hop() {
                let seq = u16::from(ttl) << 8 | sample as u16;
                if let Some((src, reply, rtt)) = probe(&sock, target, ident, seq, timeout)? {
                    // Keep samples from the first responder only.
                    if hop.responder.is_none() {
                        hop.responder = Some(src);
                    }
                    if hop.responder == Some(src) {
                        hop.rtt_samples.push(rtt);
                    }
                    last_reply = Some(reply);
                }
            }
            let stop = matches!(last_reply, Some(Reply::Echo) | Some(Reply::Unreachable));
            reached = hop.responder == Some(target);
            hops.push(hop);
            if stop || reached {
                break;
            }
        }
        Ok(TracerouteResult { target, hops, reached })
    }

    fn resolve_ptr(&self, addr: Ipv6Addr, _policy: &ProbePolicy) -> Result<PtrAnswer, ProbeError> {
        reverse_lookup(addr)
    }
}

/// PTR lookup through the system resolver (`getnameinfo` with NI_NAMEREQD).
fn reverse_lookup(addr: Ipv6Addr) -> Result<PtrAnswer, ProbeError> {
    let sa = SockAddr::from(SocketAddrV6::new(addr, 0, 0, 0));
    let mut host = [0 as libc::c_char; libc::NI_MAXHOST as usize];
    // SAFETY: `sa` is a valid sockaddr_in6 of the reported length and `host`
    // is a writable buffer of the stated size; no service buffer is requested.
    let rc = unsafe {
        libc::getnameinfo(
            sa.as_ptr().cast(),
            sa.len(),
            host.as_mut_ptr(),
            host.len() as libc::socklen_t,
            std::ptr::null_mut(),
            0,
            libc::NI_NAMEREQD,
        )
    };
    match rc {
        0 => {
            // SAFETY: getnameinfo NUL-terminates the host buffer on success.
            let name = unsafe { CStr::from_ptr(host.as_ptr()) }.to_string_lossy().into_owned();
            Ok(PtrAnswer::Name(name))
        }
        libc::EAI_NONAME => Ok(PtrAnswer::NxDomain),
        libc::EAI_AGAIN => Ok(PtrAnswer::Timeout),
        other => {
            // SAFETY: gai_strerror returns a static string for any code.
            let msg = unsafe { CStr::from_ptr(libc::gai_strerror(other)) }.to_string_lossy().into_owned();
            Err(ProbeError::Io(format!("reverse lookup of {addr} failed: {msg}")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_layout() {
        let pkt = echo_request(0x1234, 0x0102);
        assert_eq!(&pkt[..8], &[128, 0, 0, 0, 0x12, 0x34, 0x01, 0x02]);
        assert_eq!(&pkt[8..], PAYLOAD);
    }

    #[test]
    fn reply_matching() {
        let mut reply = echo_request(7, 9);
        reply[0] = ECHO_REPLY;
        assert_eq!(match_reply(&reply, 7, 9), Some(Reply::Echo));
        assert_eq!(match_reply(&reply, 7, 10), None);

        let mut exceeded = vec![TIME_EXCEEDED, 0, 0, 0, 0, 0, 0, 0];
        exceeded.extend_from_slice(&[0u8; IPV6_HEADER_LEN]);
        exceeded.extend_from_slice(&echo_request(7, 9));
        assert_eq!(match_reply(&exceeded, 7, 9), Some(Reply::TimeExceeded));
        exceeded[0] = DEST_UNREACHABLE;
        assert_eq!(match_reply(&exceeded, 7, 9), Some(Reply::Unreachable));
        assert_eq!(match_reply(&exceeded[..20], 7, 9), None);
        assert_eq!(match_reply(&[], 7, 9), None);
    }

    #[test]
    fn startup_reports_privileges() {
        match LiveAdapter::new() {
            Ok(adapter) => {
                // Privileged environment: loopback must answer.
                let policy = ProbePolicy { timeout_ms: 500, ..ProbePolicy::default() };
                if let Ok(outcome) = adapter.echo(Ipv6Addr::LOCALHOST, &policy) {
                    assert_eq!(outcome, EchoOutcome::Alive);
                }
            }
            Err(e) => assert!(matches!(e, ProbeError::AdapterUnavailable(_))),
        }
    }
}
