//! Generators and independent oracles shared by the integration tests.
//!
//! Oracles work on plain index vectors, never on library types, so a bug in
//! the library cannot leak into the expected value.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use countrypath::avoidance::RelayPathSet;
use countrypath::geo::{GeoEntry, GeoOutcome, GeoTable, Ipv4Cidr};
use countrypath::{CountryCode, CountryPath};
use rand::rngs::StdRng;
use rand::Rng;

pub const CODES: [&str; 8] = ["BR", "US", "CO", "DE", "AR", "KE", "IN", "TH"];

pub fn cc(s: &str) -> CountryCode {
    CountryCode::new(s).unwrap()
}

pub fn code(i: usize) -> CountryCode {
    cc(CODES[i])
}

/// A country path as raw indices; `countries[0]` is the origin.
#[derive(Debug, Clone)]
pub struct RawPath {
    pub countries: Vec<usize>,
    pub complete: bool,
}

impl RawPath {
    pub fn random(rng: &mut StdRng, origin: usize, n_countries: usize) -> Self {
        let len = rng.gen_range(0..5);
        let mut countries = vec![origin];
        countries.extend((0..len).map(|_| rng.gen_range(0..n_countries)));
        RawPath { countries, complete: rng.gen_bool(0.7) }
    }

    pub fn has(&self, c: usize) -> bool {
        self.countries.contains(&c)
    }

    pub fn terminal(&self) -> Option<usize> {
        if self.complete {
            self.countries.last().copied()
        } else {
            None
        }
    }

    pub fn to_path(&self, domain: &str) -> CountryPath {
        CountryPath::from_countries(
            code(self.countries[0]),
            domain,
            self.countries[1..].iter().map(|c| code(*c)),
            self.complete,
        )
    }
}

pub fn domain_name(d: usize) -> String {
    format!("d{d}.example")
}

pub fn relay_name(r: usize) -> String {
    format!("relay-{r}")
}

/// One relay avoidance instance.
#[derive(Debug, Clone)]
pub struct RelayInstance {
    pub n_countries: usize,
    pub origin: usize,
    pub relay_country: Vec<usize>,
    pub client: Vec<(usize, RawPath)>,
    pub relay: Vec<(usize, usize, RawPath)>,
}

impl RelayInstance {
    /// Up to 8 countries, 5 relays, 30 domains. Every relay has at least one
    /// client leg and at least one relay leg exists.
    pub fn random(rng: &mut StdRng) -> Self {
        let n_countries = rng.gen_range(1..=8);
        let origin = rng.gen_range(0..n_countries);
        let n_relays = rng.gen_range(1..=5);
        let n_domains = rng.gen_range(1..=30);
        let relay_country: Vec<usize> = (0..n_relays).map(|_| rng.gen_range(0..n_countries)).collect();
        let mut inst = RelayInstance { n_countries, origin, relay_country, client: Vec::new(), relay: Vec::new() };
        for r in 0..n_relays {
            for _ in 0..rng.gen_range(1..=3) {
                inst.client.push((r, RawPath::random(rng, origin, n_countries)));
            }
        }
        for r in 0..n_relays {
            for d in 0..n_domains {
                if rng.gen_bool(0.5) {
                    for _ in 0..rng.gen_range(1..=2) {
                        inst.relay.push((r, d, RawPath::random(rng, inst.relay_country[r], n_countries)));
                    }
                }
            }
        }
        if inst.relay.is_empty() {
            inst.relay.push((0, 0, RawPath::random(rng, inst.relay_country[0], n_countries)));
        }
        inst
    }

    pub fn domains(&self) -> BTreeSet<usize> {
        self.relay.iter().map(|(_, d, _)| *d).collect()
    }

    pub fn relay_count(&self) -> usize {
        self.relay_country.len()
    }

    /// Adds a relay whose legs only reach domains the instance already has.
    pub fn with_extra_relay(&self, rng: &mut StdRng) -> Self {
        let mut next = self.clone();
        let r = self.relay_count();
        next.relay_country.push(rng.gen_range(0..self.n_countries));
        for _ in 0..rng.gen_range(1..=3) {
            next.client.push((r, RawPath::random(rng, self.origin, self.n_countries)));
        }
        for d in self.domains() {
            if rng.gen_bool(0.6) {
                next.relay.push((r, d, RawPath::random(rng, next.relay_country[r], self.n_countries)));
            }
        }
        next
    }

    pub fn to_set(&self) -> RelayPathSet {
        let mut set = RelayPathSet::new();
        for (r, p) in &self.client {
            set.add_client_path(relay_name(*r), p.to_path(&relay_name(*r)).with_relay(relay_name(*r)));
        }
        for (r, d, p) in &self.relay {
            set.add_relay_path(relay_name(*r), domain_name(*d), p.to_path(&domain_name(*d)).with_relay(relay_name(*r)));
        }
        set
    }

    /// Enumerates every (relay, client leg, relay leg) combination.
    pub fn brute_force_avoidance(&self, target: usize) -> (u64, u64) {
        let domains = self.domains();
        let mut accessible = 0;
        for d in &domains {
            let mut found = false;
            for (r1, c) in &self.client {
                for (r2, d2, q) in &self.relay {
                    if r1 == r2 && d2 == d && !c.has(target) && q.complete && !q.has(target) {
                        found = true;
                    }
                }
            }
            if found {
                accessible += 1;
            }
        }
        (accessible, domains.len() as u64)
    }

    /// A domain counts when some complete relay leg ends outside the target.
    pub fn brute_force_upper_bound(&self, target: usize) -> (u64, u64) {
        let domains = self.domains();
        let mut counted = 0;
        for d in &domains {
            let ends_elsewhere = self
                .relay
                .iter()
                .filter(|(_, d2, _)| d2 == d)
                .filter_map(|(_, _, q)| q.terminal())
                .any(|c| c != target);
            if ends_elsewhere {
                counted += 1;
            }
        }
        (counted, domains.len() as u64)
    }
}

/// Random table of `n` networks, some nested, about 10% without a country.
pub fn random_geo_entries(rng: &mut StdRng, n: usize) -> Vec<GeoEntry> {
    let mut entries: Vec<GeoEntry> = Vec::with_capacity(n);
    for _ in 0..n {
        let (addr, prefix) = if !entries.is_empty() && rng.gen_bool(0.3) {
            // nest inside (or duplicate) an earlier network
            let parent = &entries[rng.gen_range(0..entries.len())].network;
            let prefix = rng.gen_range(parent.prefix_len()..=30.max(parent.prefix_len()));
            let span = parent.last() - parent.first();
            let addr = parent.first() + if span == 0 { 0 } else { rng.gen_range(0..=span) };
            (addr, prefix)
        } else {
            (rng.gen::<u32>(), rng.gen_range(8..=28))
        };
        let network = Ipv4Cidr::new(Ipv4Addr::from(addr), prefix).unwrap();
        let country = if rng.gen_bool(0.1) { None } else { Some(code(rng.gen_range(0..CODES.len()))) };
        entries.push(GeoEntry { network, country });
    }
    entries
}

fn oracle_reserved(a: u32) -> bool {
    let in_net = |net: u32, len: u32| (a ^ net) >> (32 - len) == 0;
    in_net(0x0000_0000, 8)
        || in_net(0x0a00_0000, 8)
        || in_net(0x6440_0000, 10)
        || in_net(0x7f00_0000, 8)
        || in_net(0xa9fe_0000, 16)
        || in_net(0xac10_0000, 12)
        || in_net(0xc0a8_0000, 16)
        || in_net(0xe000_0000, 4)
        || in_net(0xf000_0000, 4)
}

/// Longest matching prefix by linear scan; the last of equal networks wins.
pub fn linear_lookup(entries: &[GeoEntry], addr: Ipv4Addr) -> GeoOutcome {
    let a = u32::from(addr);
    if oracle_reserved(a) {
        return GeoOutcome::Unknown;
    }
    let mut best: Option<(u8, Option<CountryCode>)> = None;
    for e in entries {
        let len = e.network.prefix_len() as u32;
        let mask = if len == 0 { 0 } else { u32::MAX << (32 - len) };
        if a & mask == u32::from(e.network.addr()) & mask && best.is_none_or(|(l, _)| e.network.prefix_len() >= l) {
            best = Some((e.network.prefix_len(), e.country));
        }
    }
    match best.and_then(|(_, c)| c) {
        Some(c) => GeoOutcome::Country(c),
        None => GeoOutcome::Unknown,
    }
}

/// Addresses biased toward table ranges, plus uniform ones.
pub fn random_addresses(rng: &mut StdRng, entries: &[GeoEntry], n: usize) -> Vec<Ipv4Addr> {
    (0..n)
        .map(|_| {
            if !entries.is_empty() && rng.gen_bool(0.7) {
                let net = &entries[rng.gen_range(0..entries.len())].network;
                Ipv4Addr::from(rng.gen_range(net.first()..=net.last()))
            } else {
                Ipv4Addr::from(rng.gen::<u32>())
            }
        })
        .collect()
}

pub fn geo_table(entries: Vec<GeoEntry>) -> GeoTable {
    GeoTable::from_entries(entries, "random").unwrap()
}

/// Per-country counts straight from raw paths: (terminations, transits).
pub fn count_detours(paths: &[RawPath]) -> (BTreeMap<usize, u64>, BTreeMap<usize, u64>) {
    let mut term = BTreeMap::new();
    let mut transit = BTreeMap::new();
    for p in paths {
        if let Some(t) = p.terminal() {
            *term.entry(t).or_insert(0) += 1;
        }
        let seen: BTreeSet<usize> = p.countries.iter().copied().collect();
        for c in seen {
            *transit.entry(c).or_insert(0) += 1;
        }
    }
    (term, transit)
}

pub fn raw_is_trombone(p: &RawPath, origin: usize) -> bool {
    p.complete
        && p.countries.first() == Some(&origin)
        && p.countries.last() == Some(&origin)
        && p.countries.iter().any(|c| *c != origin)
}

/// Transports that refuse to touch the network and count attempts.
pub mod offline {
    use std::net::{Ipv4Addr, SocketAddr};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::time::Duration;

    use countrypath::cli::Services;
    use countrypath::ingest::dns::DnsFailure;
    use countrypath::ingest::{DnsTransport, HttpRequest, HttpResponse, HttpTransport, Sleeper};

    #[derive(Default)]
    pub struct Offline {
        pub http_calls: AtomicUsize,
        pub dns_calls: AtomicUsize,
        pub sleeps: AtomicUsize,
    }

    impl HttpTransport for Offline {
        fn send(&self, _: &HttpRequest) -> Result<HttpResponse, String> {
            self.http_calls.fetch_add(1, Ordering::SeqCst);
            Err("network disabled in tests".into())
        }
    }

    impl DnsTransport for Offline {
        fn query(&self, _: SocketAddr, _: &str, _: Duration) -> Result<Vec<Ipv4Addr>, DnsFailure> {
            self.dns_calls.fetch_add(1, Ordering::SeqCst);
            Err(DnsFailure::Timeout)
        }
    }

    impl Sleeper for Offline {
        fn sleep(&self, _: Duration) {
            self.sleeps.fetch_add(1, Ordering::SeqCst);
        }
    }

    impl Offline {
        pub fn requests(&self) -> usize {
            self.http_calls.load(Ordering::SeqCst) + self.dns_calls.load(Ordering::SeqCst)
        }
    }

    pub fn no_env(_: &str) -> Option<String> {
        None
    }

    pub fn services(o: &Offline) -> Services<'_> {
        Services { http: o, dns: o, sleeper: o, env: &no_env }
    }

    /// Runs the CLI, returning (exit code, stdout, stderr).
    pub fn run_cli(o: &Offline, args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let argv = std::iter::once("countrypath").chain(args.iter().copied());
        let code = countrypath::cli::run(argv, &services(o), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }
}

pub fn golden_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

/// Every file in a directory as name → bytes.
pub fn read_tree(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}
