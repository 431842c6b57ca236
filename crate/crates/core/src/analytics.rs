//! Detour statistics over a corpus of country-level paths.
//!
//! All fractions are [`Ratio`]s over whole-path counts. Transit is plain set
//! membership, endpoints included, so the origin country always transits
//! 100% of paths. Termination only counts complete paths but divides by all
//! paths, leaving incomplete paths terminating nowhere.

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use serde::Serialize;
use thiserror::Error;

use crate::geo::{CountryCode, GeoTable};
use crate::pathcore::{slash24, CountryPath};
use crate::ratio::Ratio;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnalyticsError {
    #[error("corpus contains no paths")]
    EmptyCorpus,
    #[error("path {index} starts in {found}, corpus origin is {expected}")]
    MixedOrigin { index: usize, expected: CountryCode, found: CountryCode },
    #[error("no forward/reverse pairs to compare")]
    EmptyPairing,
    #[error("pair {pair} references a missing path")]
    BadPairIndex { pair: usize },
}

/// Paths from a single origin country.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PathCorpus {
    origin_country: CountryCode,
    paths: Vec<CountryPath>,
    label: String,
}

impl PathCorpus {
    pub fn new(
        origin_country: CountryCode,
        paths: Vec<CountryPath>,
        label: impl Into<String>,
    ) -> Result<Self, AnalyticsError> {
        if let Some((index, p)) = paths.iter().enumerate().find(|(_, p)| p.origin_country != origin_country) {
            return Err(AnalyticsError::MixedOrigin { index, expected: origin_country, found: p.origin_country });
        }
        Ok(PathCorpus { origin_country, paths, label: label.into() })
    }

    pub fn origin_country(&self) -> CountryCode {
        self.origin_country
    }

    pub fn paths(&self) -> &[CountryPath] {
        &self.paths
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DetourStats {
    pub origin_country: CountryCode,
    pub total_paths: u64,
    pub termination_fraction: BTreeMap<CountryCode, Ratio>,
    pub transit_fraction: BTreeMap<CountryCode, Ratio>,
    /// Tromboning paths over all paths.
    pub trombone_fraction: Ratio,
    /// Tromboning paths over complete paths that terminate in the origin.
    pub trombone_domestic_fraction: Ratio,
    /// Foreign countries on tromboning paths, over the tromboning count.
    pub trombone_transit_countries: BTreeMap<CountryCode, Ratio>,
}

pub fn detour_stats(corpus: &PathCorpus) -> Result<DetourStats, AnalyticsError> {
    if corpus.is_empty() {
        return Err(AnalyticsError::EmptyCorpus);
    }
    let origin = corpus.origin_country();
    let total = corpus.len() as u64;

    let mut terminations: BTreeMap<CountryCode, u64> = BTreeMap::new();
    let mut transits: BTreeMap<CountryCode, u64> = BTreeMap::new();
    let mut trombone_via: BTreeMap<CountryCode, u64> = BTreeMap::new();
    let mut trombones = 0u64;
    let mut domestic = 0u64;

    for path in corpus.paths() {
        if let Some(c) = path.terminal_country() {
            *terminations.entry(c).or_default() += 1;
            if c == origin {
                domestic += 1;
            }
        }
        let set = path.country_set();
        for c in &set {
            *transits.entry(*c).or_default() += 1;
        }
        if path.is_trombone() {
            trombones += 1;
            for c in set.iter().filter(|c| **c != origin) {
                *trombone_via.entry(*c).or_default() += 1;
            }
        }
    }

    Ok(DetourStats {
        origin_country: origin,
        total_paths: total,
        termination_fraction: terminations.into_iter().map(|(c, n)| (c, Ratio::new(n, total))).collect(),
        transit_fraction: transits.into_iter().map(|(c, n)| (c, Ratio::new(n, total))).collect(),
        trombone_fraction: Ratio::new(trombones, total),
        trombone_domestic_fraction: Ratio::new(trombones, domestic),
        trombone_transit_countries: trombone_via.into_iter().map(|(c, n)| (c, Ratio::new(n, trombones))).collect(),
    })
}

pub fn trombone_paths(corpus: &PathCorpus) -> Vec<&CountryPath> {
    corpus.paths().iter().filter(|p| p.is_trombone()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SymmetryStats {
    pub set_equal_fraction: Ratio,
    pub reverse_subset_fraction: Ratio,
    pub pair_count: u64,
}

/// Compares the country sets of forward and reverse paths pairwise.
pub fn symmetry_stats(
    forward: &[CountryPath],
    reverse: &[CountryPath],
    pairing: &[(usize, usize)],
) -> Result<SymmetryStats, AnalyticsError> {
    if pairing.is_empty() {
        return Err(AnalyticsError::EmptyPairing);
    }
    let mut equal = 0;
    let mut subset = 0;
    for (pair, &(f, r)) in pairing.iter().enumerate() {
        let (Some(fwd), Some(rev)) = (forward.get(f), reverse.get(r)) else {
            return Err(AnalyticsError::BadPairIndex { pair });
        };
        let (fwd, rev) = (fwd.country_set(), rev.country_set());
        if fwd == rev {
            equal += 1;
        }
        if rev.is_subset(&fwd) {
            subset += 1;
        }
    }
    let n = pairing.len() as u64;
    Ok(SymmetryStats {
        set_equal_fraction: Ratio::new(equal, n),
        reverse_subset_fraction: Ratio::new(subset, n),
        pair_count: n,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HostingDiversity {
    pub per_domain_country_count: BTreeMap<String, usize>,
    /// Number of hosting countries → fraction of counted domains.
    pub histogram: BTreeMap<usize, Ratio>,
    /// Domains left out because none of their addresses geolocated.
    pub warnings: Vec<String>,
}

/// Counts the distinct countries each domain was served from across all
/// vantage points. Addresses are reduced to one (the lowest) per /24 before
/// geolocation.
pub fn hosting_diversity(resolutions: &BTreeMap<String, Vec<(String, Ipv4Addr)>>, geo: &GeoTable) -> HostingDiversity {
    let mut per_domain = BTreeMap::new();
    let mut warnings = Vec::new();
    for (domain, answers) in resolutions {
        let mut representatives: BTreeMap<[u8; 3], Ipv4Addr> = BTreeMap::new();
        for (_, addr) in answers {
            let slot = representatives.entry(slash24(*addr)).or_insert(*addr);
            if *addr < *slot {
                *slot = *addr;
            }
        }
        let countries: BTreeSet<CountryCode> =
            representatives.values().filter_map(|a| geo.lookup(*a).country()).collect();
        if countries.is_empty() {
            warnings.push(format!("{domain}: no geolocatable addresses"));
        } else {
            per_domain.insert(domain.clone(), countries.len());
        }
    }
    let counted = per_domain.len() as u64;
    let mut buckets: BTreeMap<usize, u64> = BTreeMap::new();
    for n in per_domain.values() {
        *buckets.entry(*n).or_default() += 1;
    }
    HostingDiversity {
        per_domain_country_count: per_domain,
        histogram: buckets.into_iter().map(|(k, n)| (k, Ratio::new(n, counted))).collect(),
        warnings,
    }
}

/// Keeps only domains under the given top-level domain (`"ke"` or `".ke"`).
pub fn filter_by_tld<V: Clone>(map: &BTreeMap<String, V>, tld: &str) -> BTreeMap<String, V> {
    let suffix = format!(".{}", tld.trim_start_matches('.').to_ascii_lowercase());
    map.iter()
        .filter(|(d, _)| d.trim_end_matches('.').to_ascii_lowercase().ends_with(&suffix))
        .map(|(d, v)| (d.clone(), v.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{load_geo_table, GeoFormat};

    fn cc(s: &str) -> CountryCode {
        CountryCode::new(s).unwrap()
    }

    fn path(codes: &[&str], complete: bool) -> CountryPath {
        let origin = cc(codes[0]);
        CountryPath::from_countries(origin, "d", codes[1..].iter().map(|c| cc(c)), complete)
    }

    #[test]
    fn brazil_worked_example() {
        let corpus = PathCorpus::new(
            cc("BR"),
            vec![path(&["BR", "US"], true), path(&["BR", "CO"], true), path(&["BR", "BR"], true)],
            "br",
        )
        .unwrap();
        let stats = detour_stats(&corpus).unwrap();
        assert_eq!(stats.transit_fraction[&cc("US")], Ratio::new(1, 3));
        assert_eq!(stats.termination_fraction[&cc("US")], Ratio::new(1, 3));
        assert_eq!(stats.transit_fraction[&cc("BR")], Ratio::new(3, 3));
        assert_eq!(stats.trombone_fraction, Ratio::new(0, 3));
    }

    #[test]
    fn single_path_corpus() {
        let corpus = PathCorpus::new(cc("US"), vec![path(&["US"], true)], "us").unwrap();
        let stats = detour_stats(&corpus).unwrap();
        assert_eq!(stats.termination_fraction[&cc("US")].value(), Some(1.0));
        assert_eq!(stats.transit_fraction[&cc("US")].value(), Some(1.0));
    }

    #[test]
    fn empty_corpus_is_error() {
        let corpus = PathCorpus::new(cc("US"), vec![], "empty").unwrap();
        assert_eq!(detour_stats(&corpus), Err(AnalyticsError::EmptyCorpus));
    }

    #[test]
    fn mixed_origin_rejected() {
        let err = PathCorpus::new(cc("US"), vec![path(&["US"], true), path(&["BR"], true)], "x").unwrap_err();
        assert_eq!(err, AnalyticsError::MixedOrigin { index: 1, expected: cc("US"), found: cc("BR") });
    }

    #[test]
    fn incomplete_paths_terminate_nowhere() {
        let corpus =
            PathCorpus::new(cc("KE"), vec![path(&["KE", "MU"], false), path(&["KE", "ZA"], true)], "ke").unwrap();
        let stats = detour_stats(&corpus).unwrap();
        assert!(!stats.termination_fraction.contains_key(&cc("MU")));
        assert_eq!(stats.termination_fraction[&cc("ZA")], Ratio::new(1, 2));
        assert_eq!(stats.transit_fraction[&cc("MU")], Ratio::new(1, 2));
    }

    #[test]
    fn trombones() {
        let corpus = PathCorpus::new(
            cc("NL"),
            vec![
                path(&["NL", "US", "NL"], true),
                path(&["NL", "DE", "GB", "NL"], true),
                path(&["NL", "US", "NL"], false),
                path(&["NL"], true),
                path(&["NL", "US"], true),
            ],
            "nl",
        )
        .unwrap();
        let found = trombone_paths(&corpus);
        assert_eq!(found.len(), 2);
        let stats = detour_stats(&corpus).unwrap();
        assert_eq!(stats.trombone_fraction, Ratio::new(2, 5));
        assert_eq!(stats.trombone_domestic_fraction, Ratio::new(2, 3));
        assert_eq!(stats.trombone_transit_countries[&cc("US")], Ratio::new(1, 2));
        assert_eq!(stats.trombone_transit_countries[&cc("GB")], Ratio::new(1, 2));
        assert!(!stats.trombone_transit_countries.contains_key(&cc("NL")));
    }

    #[test]
    fn symmetry_examples() {
        let fwd = vec![path(&["US", "FR"], true), path(&["US", "GB", "FR"], true)];
        let rev = vec![path(&["FR", "US"], true), path(&["FR", "US"], true)];
        let s = symmetry_stats(&fwd, &rev, &[(0, 0)]).unwrap();
        assert_eq!((s.set_equal_fraction, s.reverse_subset_fraction), (Ratio::new(1, 1), Ratio::new(1, 1)));
        let s = symmetry_stats(&fwd, &rev, &[(1, 1)]).unwrap();
        assert_eq!((s.set_equal_fraction, s.reverse_subset_fraction), (Ratio::new(0, 1), Ratio::new(1, 1)));
        assert_eq!(symmetry_stats(&fwd, &rev, &[]), Err(AnalyticsError::EmptyPairing));
        assert_eq!(symmetry_stats(&fwd, &rev, &[(0, 5)]), Err(AnalyticsError::BadPairIndex { pair: 0 }));
    }

    fn geo() -> GeoTable {
        let text = "3.0.0.0/8,US\n52.0.0.0/8,IE\n13.0.0.0/8,NL\n45.0.0.0/8,\n";
        load_geo_table(text.as_bytes(), GeoFormat::Csv, "t").unwrap()
    }

    fn answers(list: &[(&str, &str)]) -> Vec<(String, Ipv4Addr)> {
        list.iter().map(|(v, a)| (v.to_string(), a.parse().unwrap())).collect()
    }

    #[test]
    fn hosting_counts() {
        let mut res = BTreeMap::new();
        res.insert("one.com".to_string(), answers(&[("v1", "3.1.1.1"), ("v2", "3.1.1.1"), ("v3", "3.1.1.1")]));
        res.insert("three.com".to_string(), answers(&[("v1", "3.1.1.1"), ("v2", "52.1.1.1"), ("v3", "13.1.1.1")]));
        res.insert("dark.com".to_string(), answers(&[("v1", "45.1.1.1"), ("v2", "10.0.0.1")]));
        let h = hosting_diversity(&res, &geo());
        assert_eq!(h.per_domain_country_count["one.com"], 1);
        assert_eq!(h.per_domain_country_count["three.com"], 3);
        assert!(!h.per_domain_country_count.contains_key("dark.com"));
        assert_eq!(h.warnings.len(), 1);
        assert_eq!(h.histogram[&1], Ratio::new(1, 2));
        assert_eq!(h.histogram[&3], Ratio::new(1, 2));
    }

    #[test]
    fn hosting_dedups_per_slash24() {
        // 3.1.1.200 shares a /24 with 3.1.1.1 and is never geolocated.
        let table = load_geo_table("3.0.0.0/8,US\n3.1.1.128/25,CA\n".as_bytes(), GeoFormat::Csv, "t").unwrap();
        let mut res = BTreeMap::new();
        res.insert("x.com".to_string(), answers(&[("v1", "3.1.1.200"), ("v2", "3.1.1.1")]));
        let h = hosting_diversity(&res, &table);
        assert_eq!(h.per_domain_country_count["x.com"], 1);
    }

    #[test]
    fn tld_filter() {
        let mut m = BTreeMap::new();
        m.insert("nation.co.ke".to_string(), 1);
        m.insert("google.com".to_string(), 2);
        m.insert("kenya.ke.".to_string(), 3);
        let ke = filter_by_tld(&m, ".ke");
        assert_eq!(ke.len(), 2);
    }
}
