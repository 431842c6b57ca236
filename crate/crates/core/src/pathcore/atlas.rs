//! Measurement-platform traceroute JSON, one result object per line.
//!
//! Besides the platform's own fields this reader accepts three optional
//! extensions, which [`to_atlas_json`] also writes:
//! `origin_country` (probe country), `src_name` (string probe identifier
//! overriding `prb_id`) and `relay_id`.

use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Hop, ParseError, RecordContext, Traceroute};
use crate::geo::CountryCode;

#[derive(Deserialize)]
struct RawResult {
    #[serde(default)]
    prb_id: Option<Value>,
    #[serde(default)]
    src_name: Option<String>,
    #[serde(default)]
    dst_addr: Option<String>,
    #[serde(default)]
    dst_name: Option<String>,
    #[serde(default)]
    timestamp: Option<i64>,
    #[serde(default)]
    origin_country: Option<String>,
    #[serde(default)]
    relay_id: Option<String>,
    #[serde(default)]
    result: Vec<RawHop>,
}

#[derive(Deserialize)]
struct RawHop {
    hop: u32,
    #[serde(default)]
    result: Vec<RawReply>,
    #[serde(default)]
    error: Option<Value>,
}

#[derive(Deserialize)]
struct RawReply {
    #[serde(default)]
    from: Option<String>,
    #[serde(default)]
    rtt: Option<f64>,
}

fn malformed(offset: usize, message: impl Into<String>) -> ParseError {
    ParseError::Malformed { offset, message: message.into() }
}

/// Byte offset of a serde_json error position inside `record`.
fn byte_offset(record: &[u8], line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (i, chunk) in record.split(|b| *b == b'\n').enumerate() {
        if i + 1 == line {
            return offset + column.saturating_sub(1).min(chunk.len());
        }
        offset += chunk.len() + 1;
    }
    record.len()
}

/// Offset of the first occurrence of `needle`, used to point at a bad field.
fn find(record: &[u8], needle: &str) -> usize {
    record.windows(needle.len().max(1)).position(|w| w == needle.as_bytes()).unwrap_or(0)
}

pub fn parse_atlas_json(record: &[u8], ctx: &RecordContext) -> Result<Traceroute, ParseError> {
    let raw: RawResult = serde_json::from_slice(record)
        .map_err(|e| malformed(byte_offset(record, e.line(), e.column()), e.to_string()))?;

    let dst = raw.dst_addr.as_deref().ok_or(ParseError::MissingDestination)?;
    let destination_addr: Ipv4Addr =
        dst.parse().map_err(|_| malformed(find(record, dst), format!("dst_addr {dst:?} is not an IPv4 address")))?;

    let origin_probe = match (&raw.src_name, &raw.prb_id) {
        (Some(name), _) => name.clone(),
        (None, Some(Value::Number(n))) => n.to_string(),
        (None, Some(Value::String(s))) => s.clone(),
        (None, Some(_)) => return Err(malformed(find(record, "prb_id"), "prb_id must be an integer")),
        (None, None) => ctx.origin_probe.clone().unwrap_or_default(),
    };

    let origin_country = match raw.origin_country.as_deref() {
        Some(code) => CountryCode::new(code)
            .ok_or_else(|| malformed(find(record, code), format!("invalid origin_country {code:?}")))?,
        None => ctx.origin_country.ok_or(ParseError::MissingOrigin)?,
    };

    let mut hops = Vec::with_capacity(raw.result.len());
    for raw_hop in raw.result {
        hops.push(convert_hop(record, raw_hop)?);
    }

    let tr = Traceroute {
        origin_probe,
        origin_country,
        destination_addr,
        destination_domain: raw
            .dst_name
            .or_else(|| ctx.destination_domain.clone())
            .unwrap_or_else(|| destination_addr.to_string()),
        hops,
        timestamp: raw.timestamp.or(ctx.timestamp).unwrap_or(0),
        relay_id: raw.relay_id,
    };
    tr.validate().map_err(|m| malformed(find(record, "\"result\""), m))?;
    Ok(tr)
}

fn convert_hop(record: &[u8], raw: RawHop) -> Result<Hop, ParseError> {
    if raw.error.is_some() {
        return Ok(Hop::timeout(raw.hop));
    }
    let mut responder: Option<Ipv4Addr> = None;
    let mut rtts = Vec::new();
    for reply in raw.result {
        let Some(from) = reply.from.as_deref() else { continue };
        let addr: Ipv4Addr = from
            .parse()
            .map_err(|_| malformed(find(record, from), format!("hop {}: invalid address {from:?}", raw.hop)))?;
        // Replies from other interfaces (load balancing) are ignored; the
        // hop is represented by its first responder.
        let first = *responder.get_or_insert(addr);
        if first != addr {
            continue;
        }
        if let Some(rtt) = reply.rtt {
            rtts.push(rtt);
        }
    }
    Ok(Hop { index: raw.hop, responder, rtts_ms: rtts })
}

#[derive(Serialize)]
struct OutResult<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    prb_id: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    src_name: Option<&'a str>,
    dst_addr: String,
    dst_name: &'a str,
    timestamp: i64,
    origin_country: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    relay_id: Option<&'a str>,
    result: Vec<OutHop>,
}

#[derive(Serialize)]
struct OutHop {
    hop: u32,
    result: Vec<Value>,
}

/// Serializes a traceroute as a single JSON line (no trailing newline).
pub fn to_atlas_json(tr: &Traceroute) -> String {
    // Numeric probe ids go back into prb_id; anything else needs src_name.
    let numeric = tr.origin_probe.parse::<u64>().ok().filter(|n| n.to_string() == tr.origin_probe);
    let (prb_id, src_name) = match numeric {
        Some(n) => (Some(n), None),
        None => (None, Some(tr.origin_probe.as_str())),
    };
    let result = tr
        .hops
        .iter()
        .map(|hop| {
            let replies = match hop.responder {
                None => vec![serde_json::json!({"x": "*"})],
                Some(addr) if hop.rtts_ms.is_empty() => vec![serde_json::json!({"from": addr.to_string()})],
                Some(addr) => {
                    hop.rtts_ms.iter().map(|rtt| serde_json::json!({"from": addr.to_string(), "rtt": rtt})).collect()
                }
            };
            OutHop { hop: hop.index, result: replies }
        })
        .collect();
    let out = OutResult {
        prb_id,
        src_name,
        dst_addr: tr.destination_addr.to_string(),
        dst_name: &tr.destination_domain,
        timestamp: tr.timestamp,
        origin_country: tr.origin_country.as_str(),
        relay_id: tr.relay_id.as_deref(),
        result,
    };
    serde_json::to_string(&out).expect("traceroute serializes")
}
