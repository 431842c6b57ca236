use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::geo::CountryCode;
use crate::pathcore::slash24;

/// Traceroute targets for one origin country.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasurementPlan {
    pub origin_country: CountryCode,
    pub probe_ids: Vec<String>,
    pub domains: Vec<String>,
    pub resolved_targets: BTreeMap<String, Vec<Ipv4Addr>>,
    /// One address per /24 per domain.
    pub aggregated_targets: BTreeMap<String, Vec<Ipv4Addr>>,
    pub credit_budget: u64,
    /// Domains dropped because the budget ran out, in input order.
    #[serde(default)]
    pub cut_domains: Vec<String>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl MeasurementPlan {
    pub fn target_count(&self) -> usize {
        self.aggregated_targets.values().map(Vec::len).sum()
    }

    /// (domain, address) pairs in domain input order.
    pub fn targets(&self) -> Vec<(String, Ipv4Addr)> {
        self.domains
            .iter()
            .filter_map(|d| self.aggregated_targets.get(d).map(|addrs| (d, addrs)))
            .flat_map(|(d, addrs)| addrs.iter().map(move |a| (d.clone(), *a)))
            .collect()
    }
}

/// Keeps the lowest address of every /24, sorted.
pub fn aggregate_slash24(addrs: &[Ipv4Addr]) -> Vec<Ipv4Addr> {
    let mut lowest: BTreeMap<[u8; 3], Ipv4Addr> = BTreeMap::new();
    for addr in addrs {
        lowest.entry(slash24(*addr)).and_modify(|a| *a = (*a).min(*addr)).or_insert(*addr);
    }
    lowest.into_values().collect()
}

/// Builds a plan. Domains are admitted in input order while their aggregated
/// targets fit in the budget; the first domain that does not fit and every
/// domain after it are recorded in `cut_domains`.
pub fn plan_measurements(
    origin_country: CountryCode,
    probe_ids: Vec<String>,
    domains: &[String],
    resolutions: &BTreeMap<String, Vec<Ipv4Addr>>,
    budget: u64,
) -> Result<MeasurementPlan, IngestError> {
    if budget == 0 {
        return Err(IngestError::ZeroBudget);
    }
    let mut plan = MeasurementPlan {
        origin_country,
        probe_ids,
        domains: Vec::new(),
        resolved_targets: BTreeMap::new(),
        aggregated_targets: BTreeMap::new(),
        credit_budget: budget,
        cut_domains: Vec::new(),
        warnings: Vec::new(),
    };
    let mut used = 0u64;
    for domain in domains {
        let addrs = resolutions.get(domain).map(Vec::as_slice).unwrap_or_default();
        if addrs.is_empty() {
            plan.warnings.push(format!("{domain}: no resolutions"));
            continue;
        }
        let aggregated = aggregate_slash24(addrs);
        if !plan.cut_domains.is_empty() || used + aggregated.len() as u64 > budget {
            plan.cut_domains.push(domain.clone());
            continue;
        }
        used += aggregated.len() as u64;
        plan.domains.push(domain.clone());
        let mut resolved = addrs.to_vec();
        resolved.sort();
        resolved.dedup();
        plan.resolved_targets.insert(domain.clone(), resolved);
        plan.aggregated_targets.insert(domain.clone(), aggregated);
    }
    Ok(plan)
}
