//! Traceroute records and the country-level paths derived from them.

mod atlas;
mod path;
mod plain;

use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::CountryCode;

pub use atlas::{parse_atlas_json, to_atlas_json};
pub use path::{to_country_path, CountryPath, Strategy};
pub use plain::parse_plain_text;

/// One TTL step of a traceroute. A missing responder is a timeout (`* * *`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hop {
    pub index: u32,
    pub responder: Option<Ipv4Addr>,
    pub rtts_ms: Vec<f64>,
}

impl Hop {
    pub fn timeout(index: u32) -> Self {
        Hop { index, responder: None, rtts_ms: Vec::new() }
    }

    pub fn reply(index: u32, responder: Ipv4Addr, rtts_ms: Vec<f64>) -> Self {
        Hop { index, responder: Some(responder), rtts_ms }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Traceroute {
    pub origin_probe: String,
    pub origin_country: CountryCode,
    pub destination_addr: Ipv4Addr,
    pub destination_domain: String,
    pub hops: Vec<Hop>,
    pub timestamp: i64,
    /// Set on relay measurements: the relay this traceroute targets
    /// (client side) or starts from (relay side).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relay_id: Option<String>,
}

impl Traceroute {
    /// Checks hop ordering and RTT sanity.
    pub fn validate(&self) -> Result<(), String> {
        let mut prev = 0;
        for hop in &self.hops {
            if hop.index == 0 {
                return Err("hop index must be >= 1".into());
            }
            if hop.index <= prev {
                return Err(format!("hop {} out of order after hop {prev}", hop.index));
            }
            prev = hop.index;
            if let Some(rtt) = hop.rtts_ms.iter().find(|r| !r.is_finite() || **r < 0.0) {
                return Err(format!("hop {}: invalid rtt {rtt}", hop.index));
            }
        }
        Ok(())
    }

    pub fn last_hop(&self) -> Option<&Hop> {
        self.hops.last()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    AtlasJson,
    PlainText,
}

/// Fields a record may not carry itself. Record values take precedence.
#[derive(Debug, Clone, Default)]
pub struct RecordContext {
    pub origin_probe: Option<String>,
    pub origin_country: Option<CountryCode>,
    pub destination_domain: Option<String>,
    pub timestamp: Option<i64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("malformed record at byte {offset}: {message}")]
    Malformed { offset: usize, message: String },
    #[error("record has no destination address")]
    MissingDestination,
    #[error("record has no origin country and none was supplied")]
    MissingOrigin,
}

pub fn parse_traceroute(record: &[u8], format: TraceFormat, ctx: &RecordContext) -> Result<Traceroute, ParseError> {
    match format {
        TraceFormat::AtlasJson => parse_atlas_json(record, ctx),
        TraceFormat::PlainText => parse_plain_text(record, ctx),
    }
}

/// First three octets of an address, the unit destinations are grouped by.
pub fn slash24(addr: Ipv4Addr) -> [u8; 3] {
    let o = addr.octets();
    [o[0], o[1], o[2]]
}
