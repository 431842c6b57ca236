//! A-record lookups against local and open resolvers.
//!
//! The wire codec covers exactly what is needed here: a single-question
//! recursive query for an A record and the answer section of the reply.

use std::collections::BTreeMap;
use std::net::{Ipv4Addr, SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicU16, Ordering};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{bounded_map, ErrorKind, IngestError, ManifestError};

const TYPE_A: u16 = 1;
const CLASS_IN: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DnsFailure {
    Timeout,
    ServFail,
    NxDomain,
    Refused,
    /// NOERROR without any A record.
    NoAnswer,
    Rcode(u8),
    Malformed(String),
    Io(String),
}

impl DnsFailure {
    /// The resolver answered, even if unhelpfully.
    fn resolver_reachable(&self) -> bool {
        !matches!(self, DnsFailure::Timeout | DnsFailure::Io(_))
    }

    fn kind(&self) -> ErrorKind {
        match self {
            DnsFailure::Timeout => ErrorKind::Timeout,
            DnsFailure::ServFail => ErrorKind::ServFail,
            DnsFailure::Io(_) => ErrorKind::Transport,
            DnsFailure::Malformed(_) => ErrorKind::MalformedResponse,
            _ => ErrorKind::DnsError,
        }
    }
}

impl std::fmt::Display for DnsFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DnsFailure::Timeout => f.write_str("timed out"),
            DnsFailure::ServFail => f.write_str("SERVFAIL"),
            DnsFailure::NxDomain => f.write_str("NXDOMAIN"),
            DnsFailure::Refused => f.write_str("REFUSED"),
            DnsFailure::NoAnswer => f.write_str("no A records in answer"),
            DnsFailure::Rcode(r) => write!(f, "rcode {r}"),
            DnsFailure::Malformed(m) => write!(f, "malformed reply: {m}"),
            DnsFailure::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

pub mod wire {
    use super::*;

    fn push_name(buf: &mut Vec<u8>, name: &str) -> Result<(), String> {
        for label in name.trim_end_matches('.').split('.') {
            if label.is_empty() || label.len() > 63 {
                return Err(format!("invalid label in {name:?}"));
            }
            buf.push(label.len() as u8);
            buf.extend_from_slice(label.as_bytes());
        }
        buf.push(0);
        Ok(())
    }

    pub fn build_query(id: u16, name: &str) -> Result<Vec<u8>, String> {
        let mut buf = Vec::with_capacity(32 + name.len());
        buf.extend_from_slice(&id.to_be_bytes());
        buf.extend_from_slice(&0x0100u16.to_be_bytes()); // RD
        buf.extend_from_slice(&[0, 1, 0, 0, 0, 0, 0, 0]);
        push_name(&mut buf, name)?;
        buf.extend_from_slice(&TYPE_A.to_be_bytes());
        buf.extend_from_slice(&CLASS_IN.to_be_bytes());
        Ok(buf)
    }

    /// A reply with the given rcode and A records, echoing the question.
    pub fn build_response(query: &[u8], rcode: u8, answers: &[Ipv4Addr]) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(&query[0..2]);
        let flags: u16 = 0x8180 | rcode as u16;
        buf.extend_from_slice(&flags.to_be_bytes());
        buf.extend_from_slice(&[0, 1]);
        buf.extend_from_slice(&(answers.len() as u16).to_be_bytes());
        buf.extend_from_slice(&[0, 0, 0, 0]);
        buf.extend_from_slice(&query[12..]);
        for addr in answers {
            buf.extend_from_slice(&[0xc0, 0x0c]); // pointer to the question name
            buf.extend_from_slice(&TYPE_A.to_be_bytes());
            buf.extend_from_slice(&CLASS_IN.to_be_bytes());
            buf.extend_from_slice(&300u32.to_be_bytes());
            buf.extend_from_slice(&4u16.to_be_bytes());
            buf.extend_from_slice(&addr.octets());
        }
        buf
    }

    /// Question name of a query, for stub servers.
    pub fn query_name(msg: &[u8]) -> Option<String> {
        let mut pos = 12;
        let mut labels = Vec::new();
        loop {
            let len = *msg.get(pos)? as usize;
            pos += 1;
            if len == 0 {
                break;
            }
            labels.push(std::str::from_utf8(msg.get(pos..pos + len)?).ok()?.to_string());
            pos += len;
        }
        Some(labels.join("."))
    }

    fn skip_name(msg: &[u8], mut pos: usize) -> Result<usize, String> {
        loop {
            let len = *msg.get(pos).ok_or("truncated name")?;
            match len {
                0 => return Ok(pos + 1),
                l if l & 0xc0 == 0xc0 => return Ok(pos + 2),
                l => pos += 1 + l as usize,
            }
        }
    }

    fn u16_at(msg: &[u8], pos: usize) -> Result<u16, String> {
        msg.get(pos..pos + 2).map(|b| u16::from_be_bytes([b[0], b[1]])).ok_or_else(|| "truncated".to_string())
    }

    pub fn response_id(msg: &[u8]) -> Option<u16> {
        u16_at(msg, 0).ok()
    }

    pub fn parse_response(msg: &[u8]) -> Result<Vec<Ipv4Addr>, DnsFailure> {
        let bad = DnsFailure::Malformed;
        if msg.len() < 12 {
            return Err(bad("short header".into()));
        }
        let flags = u16_at(msg, 2).map_err(bad)?;
        if flags & 0x8000 == 0 {
            return Err(DnsFailure::Malformed("not a response".into()));
        }
        match (flags & 0x000f) as u8 {
            0 => {}
            2 => return Err(DnsFailure::ServFail),
            3 => return Err(DnsFailure::NxDomain),
            5 => return Err(DnsFailure::Refused),
            r => return Err(DnsFailure::Rcode(r)),
        }
        let qd = u16_at(msg, 4).map_err(bad)?;
        let an = u16_at(msg, 6).map_err(bad)?;
        let mut pos = 12;
        for _ in 0..qd {
            pos = skip_name(msg, pos).map_err(bad)? + 4;
        }
        let mut out = Vec::new();
        for _ in 0..an {
            pos = skip_name(msg, pos).map_err(bad)?;
            let rtype = u16_at(msg, pos).map_err(bad)?;
            let class = u16_at(msg, pos + 2).map_err(bad)?;
            let rdlen = u16_at(msg, pos + 8).map_err(bad)? as usize;
            let rdata = msg.get(pos + 10..pos + 10 + rdlen).ok_or_else(|| bad("truncated rdata".into()))?;
            if rtype == TYPE_A && class == CLASS_IN && rdlen == 4 {
                out.push(Ipv4Addr::new(rdata[0], rdata[1], rdata[2], rdata[3]));
            }
            pos += 10 + rdlen;
        }
        if out.is_empty() {
            return Err(DnsFailure::NoAnswer);
        }
        Ok(out)
    }
}

pub trait DnsTransport: Send + Sync {
    fn query(&self, resolver: SocketAddr, domain: &str, timeout: Duration) -> Result<Vec<Ipv4Addr>, DnsFailure>;
}

/// Plain UDP on port 53 (or whatever the endpoint says).
pub struct UdpDnsTransport;

static NEXT_ID: AtomicU16 = AtomicU16::new(0x2b1d);

impl DnsTransport for UdpDnsTransport {
    fn query(&self, resolver: SocketAddr, domain: &str, timeout: Duration) -> Result<Vec<Ipv4Addr>, DnsFailure> {
        let io = |e: std::io::Error| DnsFailure::Io(e.to_string());
        let id = NEXT_ID.fetch_add(1, Ordering::Relaxed);
        let query = wire::build_query(id, domain).map_err(DnsFailure::Malformed)?;
        let bind: SocketAddr = if resolver.is_ipv4() { "0.0.0.0:0" } else { "[::]:0" }.parse().expect("static addr");
        let socket = UdpSocket::bind(bind).map_err(io)?;
        socket.send_to(&query, resolver).map_err(io)?;
        let deadline = Instant::now() + timeout;
        let mut buf = [0u8; 1500];
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                return Err(DnsFailure::Timeout);
            }
            socket.set_read_timeout(Some(remaining)).map_err(io)?;
            match socket.recv_from(&mut buf) {
                Ok((n, from)) if from == resolver && wire::response_id(&buf[..n]) == Some(id) => {
                    return wire::parse_response(&buf[..n]);
                }
                Ok(_) => continue,
                Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {
                    return Err(DnsFailure::Timeout)
                }
                Err(e) => return Err(io(e)),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolverObservation {
    pub resolver: SocketAddr,
    pub domain: String,
    pub answers: Vec<Ipv4Addr>,
    pub timestamp: i64,
}

#[derive(Debug, Clone)]
pub struct QueryOptions {
    pub timeout: Duration,
    pub retries: u32,
    /// Minimum gap between two queries to the same resolver.
    pub pacing: Duration,
    pub max_in_flight: usize,
}

impl Default for QueryOptions {
    fn default() -> Self {
        QueryOptions {
            timeout: Duration::from_secs(2),
            retries: 1,
            pacing: Duration::from_millis(100),
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct QueryOutcome {
    pub observations: Vec<ResolverObservation>,
    pub errors: Vec<ManifestError>,
}

/// Parses `host:port` or a bare IPv4 address (port 53).
pub fn parse_resolver(s: &str) -> Result<SocketAddr, String> {
    let s = s.trim();
    s.parse::<SocketAddr>()
        .or_else(|_| s.parse::<Ipv4Addr>().map(|ip| SocketAddr::from((ip, 53))))
        .map_err(|_| format!("invalid resolver endpoint {s:?}"))
}

fn now_secs() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs() as i64).unwrap_or(0)
}

/// Asks every resolver for every domain. Each resolver is queried
/// sequentially with `pacing` between queries; resolvers run in parallel.
/// Fails only when no resolver answered anything at all.
pub fn query_resolvers(
    transport: &dyn DnsTransport,
    resolvers: &[SocketAddr],
    domains: &[String],
    options: &QueryOptions,
) -> Result<QueryOutcome, IngestError> {
    let per_resolver = bounded_map(resolvers, options.max_in_flight, |resolver| {
        let mut results = Vec::with_capacity(domains.len());
        let mut last_sent: Option<Instant> = None;
        for domain in domains {
            let mut attempt = 0;
            let result = loop {
                if let Some(at) = last_sent {
                    let since = at.elapsed();
                    if since < options.pacing {
                        std::thread::sleep(options.pacing - since);
                    }
                }
                last_sent = Some(Instant::now());
                match transport.query(*resolver, domain, options.timeout) {
                    Err(DnsFailure::Timeout) if attempt < options.retries => attempt += 1,
                    other => break other,
                }
            };
            results.push((domain.clone(), result, now_secs()));
        }
        results
    });

    let mut outcome = QueryOutcome::default();
    let mut reachable = false;
    for (resolver, results) in resolvers.iter().zip(per_resolver) {
        for (domain, result, timestamp) in results {
            match result {
                Ok(answers) => {
                    reachable = true;
                    outcome.observations.push(ResolverObservation { resolver: *resolver, domain, answers, timestamp });
                }
                Err(failure) => {
                    reachable |= failure.resolver_reachable();
                    outcome.errors.push(ManifestError::new(
                        format!("{resolver} {domain}"),
                        failure.kind(),
                        failure.to_string(),
                    ));
                }
            }
        }
    }
    if !reachable && !resolvers.is_empty() && !domains.is_empty() {
        return Err(IngestError::AllResolversUnreachable { errors: outcome.errors });
    }
    outcome.observations.sort_by(|a, b| (a.resolver, &a.domain).cmp(&(b.resolver, &b.domain)));
    Ok(outcome)
}

/// Groups observations as domain → [(vantage, address)].
pub fn resolutions_by_domain(observations: &[ResolverObservation]) -> BTreeMap<String, Vec<(String, Ipv4Addr)>> {
    let mut map: BTreeMap<String, Vec<(String, Ipv4Addr)>> = BTreeMap::new();
    for obs in observations {
        let entry = map.entry(obs.domain.clone()).or_default();
        entry.extend(obs.answers.iter().map(|a| (obs.resolver.to_string(), *a)));
    }
    map
}
