use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{slash24, Traceroute};
use crate::geo::{CountryCode, GeoTable};

/// How the client reached the destination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Default,
    OpenResolver,
    Relay,
}

/// Country-level view of one traceroute.
///
/// `countries` never contains unknowns and never repeats a code in adjacent
/// positions; non-adjacent repeats are kept so that `[NL, US, NL]` stays
/// visible as a detour.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CountryPath {
    pub origin_country: CountryCode,
    pub destination_domain: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relay_id: Option<String>,
    pub strategy: Strategy,
    pub countries: Vec<CountryCode>,
    pub complete: bool,
}

impl CountryPath {
    /// Builds a path from a raw country sequence, prepending the origin and
    /// collapsing adjacent repeats.
    pub fn from_countries(
        origin: CountryCode,
        destination_domain: impl Into<String>,
        countries: impl IntoIterator<Item = CountryCode>,
        complete: bool,
    ) -> Self {
        let mut seq = vec![origin];
        for c in countries {
            if seq.last() != Some(&c) {
                seq.push(c);
            }
        }
        CountryPath {
            origin_country: origin,
            destination_domain: destination_domain.into(),
            relay_id: None,
            strategy: Strategy::Default,
            countries: seq,
            complete,
        }
    }

    pub fn with_strategy(mut self, strategy: Strategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn with_relay(mut self, relay_id: impl Into<String>) -> Self {
        self.relay_id = Some(relay_id.into());
        self.strategy = Strategy::Relay;
        self
    }

    pub fn contains(&self, country: CountryCode) -> bool {
        self.countries.contains(&country)
    }

    pub fn country_set(&self) -> BTreeSet<CountryCode> {
        self.countries.iter().copied().collect()
    }

    /// Country the path ends in, only for complete paths.
    pub fn terminal_country(&self) -> Option<CountryCode> {
        if self.complete {
            self.countries.last().copied()
        } else {
            None
        }
    }

    /// Starts and ends in the origin country with a foreign country between.
    pub fn is_trombone(&self) -> bool {
        let origin = self.origin_country;
        self.countries.first() == Some(&origin)
            && self.terminal_country() == Some(origin)
            && self.countries.iter().any(|c| *c != origin)
    }
}

/// Maps hops to countries, drops timeouts and unknowns, prepends the origin
/// and collapses adjacent repeats.
///
/// A path is complete when the final hop answered, geolocated, and sits in
/// the same /24 as the destination address.
pub fn to_country_path(tr: &Traceroute, geo: &GeoTable) -> CountryPath {
    let countries = tr.hops.iter().filter_map(|hop| hop.responder).filter_map(|addr| geo.lookup(addr).country());

    let complete = tr
        .last_hop()
        .and_then(|h| h.responder)
        .is_some_and(|addr| geo.lookup(addr).country().is_some() && slash24(addr) == slash24(tr.destination_addr));

    let mut path = CountryPath::from_countries(tr.origin_country, tr.destination_domain.clone(), countries, complete);
    if let Some(relay) = &tr.relay_id {
        path = path.with_relay(relay.clone());
    }
    path
}
