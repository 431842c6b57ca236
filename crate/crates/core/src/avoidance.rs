//! Country avoidability.
//!
//! Four values describe how well a client in an origin country can keep its
//! traffic out of a target country:
//!
//! - default routing: fraction of *paths* that never enter the target;
//! - open resolvers: fraction of *domains* with at least one resolver-provided
//!   replica reachable without entering the target;
//! - relays: fraction of *domains* reachable through some relay whose client
//!   leg and relay leg both avoid the target;
//! - upper bound: fraction of *domains* observed (from any relay) to be hosted
//!   somewhere other than the target.
//!
//! Note the first value has a path denominator and the other three a domain
//! denominator. [`AvoidanceReport`] keeps the denominators next to the values.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::analytics::PathCorpus;
use crate::geo::CountryCode;
use crate::pathcore::{CountryPath, Strategy};
use crate::ratio::Ratio;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AvoidanceError {
    #[error("corpus contains no paths")]
    EmptyCorpus,
    #[error("no domains to evaluate")]
    NoDomains,
    #[error("relay dataset has no relay-to-domain paths")]
    NoRelayPaths,
    #[error("relay {relay:?} has relay-to-domain paths but no client-to-relay path")]
    MissingClientPath { relay: String },
    #[error("path for relay {relay:?} and domain {domain:?} is not tagged as a relay path")]
    NotRelayPath { relay: String, domain: String },
    #[error("relay value {relay} exceeds upper bound {upper_bound}")]
    UpperBoundViolated { relay: Ratio, upper_bound: Ratio },
    #[error("no strategy data supplied")]
    NothingToReport,
}

/// Paths measured through overlay relays.
///
/// A relay is usable when any of its client-to-relay paths avoids the target.
/// Several paths per relay (one per probe, say) and per (relay, domain) are
/// allowed; each set is read existentially.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RelayPathSet {
    client_to_relay: BTreeMap<String, Vec<CountryPath>>,
    relay_to_domain: BTreeMap<(String, String), Vec<CountryPath>>,
}

impl RelayPathSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_client_path(&mut self, relay: impl Into<String>, path: CountryPath) {
        self.client_to_relay.entry(relay.into()).or_default().push(path);
    }

    pub fn add_relay_path(&mut self, relay: impl Into<String>, domain: impl Into<String>, path: CountryPath) {
        self.relay_to_domain.entry((relay.into(), domain.into())).or_default().push(path);
    }

    pub fn client_to_relay(&self) -> &BTreeMap<String, Vec<CountryPath>> {
        &self.client_to_relay
    }

    pub fn relay_to_domain(&self) -> &BTreeMap<(String, String), Vec<CountryPath>> {
        &self.relay_to_domain
    }

    pub fn relays(&self) -> impl Iterator<Item = &str> {
        self.client_to_relay.keys().map(String::as_str)
    }

    /// Every relay leg needs a client leg and a relay strategy tag.
    pub fn validate(&self) -> Result<(), AvoidanceError> {
        for ((relay, domain), paths) in &self.relay_to_domain {
            if !self.client_to_relay.contains_key(relay) {
                return Err(AvoidanceError::MissingClientPath { relay: relay.clone() });
            }
            if paths.iter().any(|p| p.strategy != Strategy::Relay) {
                return Err(AvoidanceError::NotRelayPath { relay: relay.clone(), domain: domain.clone() });
            }
        }
        Ok(())
    }

    pub fn domains(&self) -> BTreeSet<&str> {
        self.relay_to_domain.keys().map(|(_, d)| d.as_str()).collect()
    }
}

/// Fraction of paths that never enter `target`.
pub fn avoidance_no_relay(corpus: &PathCorpus, target: CountryCode) -> Result<Ratio, AvoidanceError> {
    if corpus.is_empty() {
        return Err(AvoidanceError::EmptyCorpus);
    }
    let avoiding = corpus.paths().iter().filter(|p| !p.contains(target)).count();
    Ok(Ratio::from_usize(avoiding, corpus.len()))
}

/// Fraction of domains with at least one path that avoids `target`.
pub fn avoidance_open_resolver(
    per_domain_paths: &BTreeMap<String, Vec<CountryPath>>,
    target: CountryCode,
) -> Result<Ratio, AvoidanceError> {
    if per_domain_paths.is_empty() {
        return Err(AvoidanceError::NoDomains);
    }
    let avoidable = per_domain_paths.values().filter(|paths| paths.iter().any(|p| !p.contains(target))).count();
    Ok(Ratio::from_usize(avoidable, per_domain_paths.len()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RelayAvoidance {
    pub value: Ratio,
    pub usable_relays: Vec<String>,
    pub accessible_domains: Vec<String>,
}

/// Relay avoidability: a domain is accessible when some relay reachable
/// without the target has a complete path to it that also avoids the target.
pub fn calc_avoidance(rps: &RelayPathSet, target: CountryCode) -> Result<RelayAvoidance, AvoidanceError> {
    if rps.relay_to_domain.is_empty() {
        return Err(AvoidanceError::NoRelayPaths);
    }
    rps.validate()?;

    let usable: BTreeSet<&str> = rps
        .client_to_relay
        .iter()
        .filter(|(_, paths)| paths.iter().any(|p| !p.contains(target)))
        .map(|(relay, _)| relay.as_str())
        .collect();

    let mut accessible: BTreeSet<&str> = BTreeSet::new();
    for ((relay, domain), paths) in &rps.relay_to_domain {
        if usable.contains(relay.as_str()) && paths.iter().any(|p| p.complete && !p.contains(target)) {
            accessible.insert(domain);
        }
    }

    let total = rps.domains().len();
    Ok(RelayAvoidance {
        value: Ratio::from_usize(accessible.len(), total),
        usable_relays: usable.into_iter().map(str::to_string).collect(),
        accessible_domains: accessible.into_iter().map(str::to_string).collect(),
    })
}

/// Upper bound on avoidability: a domain counts when the countries its
/// complete relay paths end in are anything other than exactly `{target}`.
/// Domains with no complete path have no known location and do not count.
pub fn calc_upper_bound(
    relay_to_domain: &BTreeMap<(String, String), Vec<CountryPath>>,
    target: CountryCode,
) -> Result<Ratio, AvoidanceError> {
    if relay_to_domain.is_empty() {
        return Err(AvoidanceError::NoRelayPaths);
    }
    let mut locations: BTreeMap<&str, BTreeSet<CountryCode>> = BTreeMap::new();
    let mut domains: BTreeSet<&str> = BTreeSet::new();
    for ((_, domain), paths) in relay_to_domain {
        domains.insert(domain);
        for dest in paths.iter().filter_map(CountryPath::terminal_country) {
            locations.entry(domain).or_default().insert(dest);
        }
    }
    let only_target = BTreeSet::from([target]);
    let counted = locations.values().filter(|set| **set != only_target).count();
    Ok(Ratio::from_usize(counted, domains.len()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AvoidanceReport {
    pub origin: CountryCode,
    pub target: CountryCode,
    /// Over paths. `None` when no default corpus was supplied.
    pub no_relay_value: Option<Ratio>,
    /// Over domains.
    pub open_resolver_value: Option<Ratio>,
    /// Over domains.
    pub relay_value: Option<Ratio>,
    /// Over domains.
    pub upper_bound: Option<Ratio>,
    pub usable_relays: Vec<String>,
    pub accessible_domains: Vec<String>,
}

/// Assembles one report row from whichever datasets are present.
pub fn build_report(
    origin: CountryCode,
    corpus: Option<&PathCorpus>,
    per_domain_paths: Option<&BTreeMap<String, Vec<CountryPath>>>,
    rps: Option<&RelayPathSet>,
    target: CountryCode,
) -> Result<AvoidanceReport, AvoidanceError> {
    if corpus.is_none() && per_domain_paths.is_none() && rps.is_none() {
        return Err(AvoidanceError::NothingToReport);
    }
    let no_relay_value = corpus.map(|c| avoidance_no_relay(c, target)).transpose()?;
    let open_resolver_value = per_domain_paths.map(|m| avoidance_open_resolver(m, target)).transpose()?;
    let relay = rps.map(|r| calc_avoidance(r, target)).transpose()?;
    let upper_bound = rps.map(|r| calc_upper_bound(&r.relay_to_domain, target)).transpose()?;

    if let (Some(relay), Some(upper)) = (&relay, upper_bound) {
        let (r, u) = (relay.value.value_or_zero(), upper.value_or_zero());
        if r > u + 1e-12 {
            return Err(AvoidanceError::UpperBoundViolated { relay: relay.value, upper_bound: upper });
        }
    }

    let (relay_value, usable_relays, accessible_domains) = match relay {
        Some(r) => (Some(r.value), r.usable_relays, r.accessible_domains),
        None => (None, Vec::new(), Vec::new()),
    };
    Ok(AvoidanceReport {
        origin,
        target,
        no_relay_value,
        open_resolver_value,
        relay_value,
        upper_bound,
        usable_relays,
        accessible_domains,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cc(s: &str) -> CountryCode {
        CountryCode::new(s).unwrap()
    }

    fn path(codes: &[&str], complete: bool) -> CountryPath {
        CountryPath::from_countries(cc(codes[0]), "d", codes[1..].iter().map(|c| cc(c)), complete)
    }

    fn relay_path(codes: &[&str], complete: bool, relay: &str) -> CountryPath {
        path(codes, complete).with_relay(relay)
    }

    fn brazil() -> PathCorpus {
        PathCorpus::new(
            cc("BR"),
            vec![path(&["BR", "US"], true), path(&["BR", "CO"], false), path(&["BR"], true)],
            "br",
        )
        .unwrap()
    }

    #[test]
    fn no_relay_worked_example() {
        assert_eq!(avoidance_no_relay(&brazil(), cc("US")).unwrap(), Ratio::new(2, 3));
        assert_eq!(avoidance_no_relay(&brazil(), cc("JP")).unwrap(), Ratio::new(3, 3));
        assert_eq!(avoidance_no_relay(&brazil(), cc("BR")).unwrap(), Ratio::new(0, 3));
        let empty = PathCorpus::new(cc("BR"), vec![], "e").unwrap();
        assert_eq!(avoidance_no_relay(&empty, cc("US")), Err(AvoidanceError::EmptyCorpus));
    }

    #[test]
    fn open_resolver_is_existential_per_domain() {
        let mut m = BTreeMap::new();
        m.insert("a.com".to_string(), vec![path(&["KE", "US", "IE"], true), path(&["KE", "IE"], true)]);
        m.insert("b.com".to_string(), vec![path(&["KE", "US"], true)]);
        assert_eq!(avoidance_open_resolver(&m, cc("US")).unwrap(), Ratio::new(1, 2));
        m.remove("a.com");
        assert_eq!(avoidance_open_resolver(&m, cc("US")).unwrap(), Ratio::new(0, 1));
        assert_eq!(avoidance_open_resolver(&BTreeMap::new(), cc("US")), Err(AvoidanceError::NoDomains));
    }

    #[test]
    fn single_relay_avoiding_target() {
        let mut rps = RelayPathSet::new();
        rps.add_client_path("ie1", path(&["BR", "IE"], true));
        rps.add_relay_path("ie1", "d", relay_path(&["IE", "NL"], true, "ie1"));
        let r = calc_avoidance(&rps, cc("US")).unwrap();
        assert_eq!(r.value, Ratio::new(1, 1));
        assert_eq!(r.usable_relays, vec!["ie1"]);
    }

    #[test]
    fn target_on_every_client_leg() {
        let mut rps = RelayPathSet::new();
        rps.add_client_path("r1", path(&["BR", "US", "IE"], true));
        rps.add_client_path("r2", path(&["BR", "US", "DE"], true));
        rps.add_relay_path("r1", "d1", relay_path(&["IE"], true, "r1"));
        rps.add_relay_path("r2", "d2", relay_path(&["DE"], true, "r2"));
        let r = calc_avoidance(&rps, cc("US")).unwrap();
        assert_eq!(r.value, Ratio::new(0, 2));
        assert!(r.usable_relays.is_empty());
    }

    #[test]
    fn incomplete_relay_leg_does_not_grant_access() {
        let mut rps = RelayPathSet::new();
        rps.add_client_path("r1", path(&["BR", "IE"], true));
        rps.add_relay_path("r1", "d1", relay_path(&["IE", "GB"], false, "r1"));
        assert_eq!(calc_avoidance(&rps, cc("US")).unwrap().value, Ratio::new(0, 1));
        assert_eq!(calc_upper_bound(rps.relay_to_domain(), cc("US")).unwrap(), Ratio::new(0, 1));
    }

    #[test]
    fn structural_errors() {
        assert_eq!(calc_avoidance(&RelayPathSet::new(), cc("US")), Err(AvoidanceError::NoRelayPaths));
        let mut rps = RelayPathSet::new();
        rps.add_relay_path("ghost", "d", relay_path(&["IE"], true, "ghost"));
        assert_eq!(calc_avoidance(&rps, cc("US")), Err(AvoidanceError::MissingClientPath { relay: "ghost".into() }));
        let mut rps = RelayPathSet::new();
        rps.add_client_path("r", path(&["BR", "IE"], true));
        rps.add_relay_path("r", "d", path(&["IE"], true));
        assert!(matches!(calc_avoidance(&rps, cc("US")), Err(AvoidanceError::NotRelayPath { .. })));
    }

    #[test]
    fn upper_bound_examples() {
        let mut m = BTreeMap::new();
        m.insert(("r1".to_string(), "us-only".to_string()), vec![relay_path(&["IE", "US"], true, "r1")]);
        assert_eq!(calc_upper_bound(&m, cc("US")).unwrap(), Ratio::new(0, 1));
        m.insert(("r2".to_string(), "us-only".to_string()), vec![relay_path(&["DE", "IE"], true, "r2")]);
        assert_eq!(calc_upper_bound(&m, cc("US")).unwrap(), Ratio::new(1, 1));
        assert_eq!(calc_upper_bound(&BTreeMap::new(), cc("US")), Err(AvoidanceError::NoRelayPaths));
    }

    #[test]
    fn report_composition() {
        let mut per_domain = BTreeMap::new();
        per_domain.insert("a.com".to_string(), vec![path(&["BR", "CO"], true)]);
        let mut rps = RelayPathSet::new();
        rps.add_client_path("r1", path(&["BR", "IE"], true));
        rps.add_relay_path("r1", "a.com", relay_path(&["IE", "NL"], true, "r1"));
        rps.add_relay_path("r1", "b.com", relay_path(&["IE", "US"], true, "r1"));

        let report = build_report(cc("BR"), Some(&brazil()), Some(&per_domain), Some(&rps), cc("US")).unwrap();
        assert_eq!(report.no_relay_value, Some(Ratio::new(2, 3)));
        assert_eq!(report.open_resolver_value, Some(Ratio::new(1, 1)));
        assert_eq!(report.relay_value, Some(Ratio::new(1, 2)));
        assert_eq!(report.upper_bound, Some(Ratio::new(1, 2)));
        assert_eq!(report.accessible_domains, vec!["a.com"]);

        let origin = build_report(cc("BR"), Some(&brazil()), None, None, cc("BR")).unwrap();
        assert_eq!(origin.no_relay_value, Some(Ratio::new(0, 3)));
        assert_eq!(origin.relay_value, None);

        assert_eq!(build_report(cc("BR"), None, None, None, cc("US")), Err(AvoidanceError::NothingToReport));
    }
}
