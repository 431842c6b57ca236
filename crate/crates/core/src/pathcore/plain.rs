//! Classic `traceroute` text output.
//!
//! ```text
//! traceroute to example.com (93.184.216.34), 30 hops max, 60 byte packets
//!  1  192.168.1.1  1.123 ms  0.954 ms  0.912 ms
//!  2  * * *
//!  3  ae1.edge.example.net (4.2.2.1)  5.1 ms *  4.9 ms
//! ```

use std::net::Ipv4Addr;

use super::{Hop, ParseError, RecordContext, Traceroute};

fn malformed(offset: usize, message: impl Into<String>) -> ParseError {
    ParseError::Malformed { offset, message: message.into() }
}

/// Pulls an IPv4 address out of `1.2.3.4`, `(1.2.3.4)` or `(1.2.3.4),`.
fn bare_addr(token: &str) -> Option<Ipv4Addr> {
    token.trim_matches(|c| c == '(' || c == ')' || c == ',').parse().ok()
}

fn parse_header(line: &str, offset: usize) -> Result<(Ipv4Addr, String), ParseError> {
    let rest = line.trim_start().strip_prefix("traceroute to").ok_or(ParseError::MissingDestination)?;
    let mut tokens = rest.split_whitespace();
    let name = tokens.next().map(|t| t.trim_end_matches(',')).ok_or(ParseError::MissingDestination)?.to_string();
    let addr = match tokens.next().and_then(bare_addr) {
        Some(a) => a,
        None => bare_addr(&name).ok_or_else(|| malformed(offset, "header has no destination address"))?,
    };
    Ok((addr, name))
}

fn parse_hop(line: &str, offset: usize) -> Result<Hop, ParseError> {
    let mut tokens = line.split_whitespace().peekable();
    let index: u32 = tokens
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| malformed(offset, format!("expected hop number in {line:?}")))?;
    let mut responder = None;
    let mut rtts = Vec::new();
    // Some implementations print several responders on one line when the
    // path is load balanced; only the first one and its RTTs are kept.
    let mut tracking = true;
    while let Some(token) = tokens.next() {
        if token == "*" {
            continue;
        }
        if let Some(addr) = bare_addr(token) {
            match responder {
                None => responder = Some(addr),
                Some(first) => tracking = first == addr,
            }
            continue;
        }
        if let Ok(rtt) = token.parse::<f64>() {
            if tokens.peek() == Some(&"ms") {
                tokens.next();
            }
            if !rtt.is_finite() || rtt < 0.0 {
                return Err(malformed(offset, format!("hop {index}: invalid rtt {token}")));
            }
            if tracking && responder.is_some() {
                rtts.push(rtt);
            }
            continue;
        }
        // Hostnames precede their parenthesised address; annotations such
        // as `!H` carry no information needed here.
    }
    Ok(Hop { index, responder, rtts_ms: rtts })
}

pub fn parse_plain_text(record: &[u8], ctx: &RecordContext) -> Result<Traceroute, ParseError> {
    let text = std::str::from_utf8(record).map_err(|e| malformed(e.valid_up_to(), "record is not valid UTF-8"))?;
    let origin_country = ctx.origin_country.ok_or(ParseError::MissingOrigin)?;

    let mut destination = None;
    let mut hops = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        let line_offset = offset;
        offset += line.len();
        if trimmed.is_empty() {
            continue;
        }
        if trimmed.starts_with("traceroute") {
            destination = Some(parse_header(trimmed, line_offset)?);
            continue;
        }
        hops.push(parse_hop(trimmed, line_offset)?);
    }

    let (destination_addr, header_name) = destination.ok_or(ParseError::MissingDestination)?;
    let destination_domain = ctx.destination_domain.clone().unwrap_or(header_name);
    let tr = Traceroute {
        origin_probe: ctx.origin_probe.clone().unwrap_or_default(),
        origin_country,
        destination_addr,
        destination_domain,
        hops,
        timestamp: ctx.timestamp.unwrap_or(0),
        relay_id: None,
    };
    tr.validate().map_err(|m| malformed(0, m))?;
    Ok(tr)
}
