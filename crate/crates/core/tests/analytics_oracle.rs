mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use common::*;
use countrypath::analytics::{detour_stats, hosting_diversity, symmetry_stats, AnalyticsError, PathCorpus};
use countrypath::geo::GeoOutcome;
use countrypath::Ratio;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

#[test]
fn detour_stats_match_counting_oracle() {
    let mut rng = StdRng::seed_from_u64(21);
    for _ in 0..300 {
        let n_countries = rng.gen_range(1..=8);
        let origin = rng.gen_range(0..n_countries);
        let raw: Vec<RawPath> =
            (0..rng.gen_range(1..50)).map(|_| RawPath::random(&mut rng, origin, n_countries)).collect();
        let corpus = PathCorpus::new(
            code(origin),
            raw.iter().enumerate().map(|(i, p)| p.to_path(&domain_name(i))).collect(),
            "r",
        )
        .unwrap();
        let stats = detour_stats(&corpus).unwrap();
        let total = raw.len() as u64;
        let (term, transit) = count_detours(&raw);

        let want_term: BTreeMap<_, _> = term.iter().map(|(c, n)| (code(*c), Ratio::new(*n, total))).collect();
        let want_transit: BTreeMap<_, _> = transit.iter().map(|(c, n)| (code(*c), Ratio::new(*n, total))).collect();
        assert_eq!(stats.termination_fraction, want_term);
        assert_eq!(stats.transit_fraction, want_transit);

        let trombones = raw.iter().filter(|p| raw_is_trombone(p, origin)).count() as u64;
        let domestic = raw.iter().filter(|p| p.terminal() == Some(origin)).count() as u64;
        assert_eq!(stats.trombone_fraction, Ratio::new(trombones, total));
        assert_eq!(stats.trombone_domestic_fraction, Ratio::new(trombones, domestic));
        for (c, r) in &stats.trombone_transit_countries {
            assert_ne!(*c, code(origin));
            let idx = CODES.iter().position(|x| *x == c.as_str()).unwrap();
            let via = raw.iter().filter(|p| raw_is_trombone(p, origin) && p.has(idx)).count() as u64;
            assert_eq!(*r, Ratio::new(via, trombones));
        }
    }
}

#[test]
fn symmetry_matches_set_oracle() {
    let mut rng = StdRng::seed_from_u64(22);
    for _ in 0..200 {
        let n = rng.gen_range(1..20);
        let fwd: Vec<RawPath> = (0..n).map(|_| RawPath::random(&mut rng, 0, 4)).collect();
        let rev: Vec<RawPath> = (0..n)
            .map(|_| {
                let start = rng.gen_range(0..4);
                RawPath::random(&mut rng, start, 4)
            })
            .collect();
        let pairing: Vec<(usize, usize)> =
            (0..rng.gen_range(1..=n)).map(|_| (rng.gen_range(0..n), rng.gen_range(0..n))).collect();
        let (mut equal, mut subset) = (0, 0);
        for (f, r) in &pairing {
            let a: BTreeSet<usize> = fwd[*f].countries.iter().copied().collect();
            let b: BTreeSet<usize> = rev[*r].countries.iter().copied().collect();
            equal += (a == b) as u64;
            subset += b.iter().all(|c| a.contains(c)) as u64;
        }
        let to = |v: &Vec<RawPath>| v.iter().map(|p| p.to_path("d")).collect::<Vec<_>>();
        let stats = symmetry_stats(&to(&fwd), &to(&rev), &pairing).unwrap();
        let k = pairing.len() as u64;
        assert_eq!(stats.set_equal_fraction, Ratio::new(equal, k));
        assert_eq!(stats.reverse_subset_fraction, Ratio::new(subset, k));
    }
    assert_eq!(symmetry_stats(&[], &[], &[]).unwrap_err(), AnalyticsError::EmptyPairing);
    assert_eq!(symmetry_stats(&[], &[], &[(0, 0)]).unwrap_err(), AnalyticsError::BadPairIndex { pair: 0 });
}

#[test]
fn hosting_matches_counting_oracle() {
    let mut rng = StdRng::seed_from_u64(23);
    for _ in 0..50 {
        let entries = random_geo_entries(&mut rng, 60);
        let table = geo_table(entries.clone());
        let mut resolutions: BTreeMap<String, Vec<(String, Ipv4Addr)>> = BTreeMap::new();
        for d in 0..rng.gen_range(1..15) {
            let count = rng.gen_range(1..6);
            let addrs = random_addresses(&mut rng, &entries, count);
            resolutions
                .insert(domain_name(d), addrs.into_iter().map(|a| (format!("v{}", rng.gen_range(0..3)), a)).collect());
        }
        let got = hosting_diversity(&resolutions, &table);

        let mut want: BTreeMap<String, usize> = BTreeMap::new();
        for (domain, answers) in &resolutions {
            let mut lowest: BTreeMap<u32, u32> = BTreeMap::new();
            for (_, a) in answers {
                let a = u32::from(*a);
                let e = lowest.entry(a >> 8).or_insert(a);
                *e = (*e).min(a);
            }
            let countries: BTreeSet<_> = lowest
                .values()
                .filter_map(|a| match linear_lookup(&entries, Ipv4Addr::from(*a)) {
                    GeoOutcome::Country(c) => Some(c),
                    GeoOutcome::Unknown => None,
                })
                .collect();
            if !countries.is_empty() {
                want.insert(domain.clone(), countries.len());
            }
        }
        assert_eq!(got.per_domain_country_count, want);
        assert_eq!(got.warnings.len(), resolutions.len() - want.len());
        let counted = want.len() as u64;
        for (k, r) in &got.histogram {
            assert_eq!(*r, Ratio::new(want.values().filter(|n| *n == k).count() as u64, counted));
        }
    }
}
