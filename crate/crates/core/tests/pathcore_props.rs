mod common;

use std::net::Ipv4Addr;

use common::{cc, code, linear_lookup, CODES};
use countrypath::geo::{load_geo_table, GeoEntry, GeoFormat, GeoTable, Ipv4Cidr};
use countrypath::pathcore::{parse_atlas_json, parse_plain_text, to_atlas_json, to_country_path, Hop, RecordContext};
use countrypath::{CountryCode, Traceroute};
use proptest::prelude::*;

fn country() -> impl Strategy<Value = CountryCode> {
    (0..CODES.len()).prop_map(code)
}

fn probe() -> impl Strategy<Value = String> {
    prop_oneof![(0u64..1_000_000).prop_map(|n| n.to_string()), "[a-z][a-z0-9-]{0,8}"]
}

fn hop_body() -> impl Strategy<Value = Option<(Ipv4Addr, Vec<f64>)>> {
    proptest::option::weighted(
        0.8,
        (any::<u32>().prop_map(Ipv4Addr::from), prop::collection::vec(0.0f64..5000.0, 0..4)),
    )
}

prop_compose! {
    fn traceroute()(
        origin_probe in probe(),
        origin_country in country(),
        destination_addr in any::<u32>().prop_map(Ipv4Addr::from),
        destination_domain in "[a-z]{1,10}\\.(com|net|br)",
        bodies in prop::collection::vec((1u32..4, hop_body()), 0..20),
        timestamp in 0i64..4_000_000_000,
        relay_id in proptest::option::of("r-[a-z]{2}"),
    ) -> Traceroute {
        let mut index = 0;
        let hops = bodies
            .into_iter()
            .map(|(step, body)| {
                index += step;
                match body {
                    None => Hop::timeout(index),
                    Some((addr, rtts)) => Hop::reply(index, addr, rtts),
                }
            })
            .collect();
        Traceroute { origin_probe, origin_country, destination_addr, destination_domain, hops, timestamp, relay_id }
    }
}

fn small_table() -> impl Strategy<Value = Vec<GeoEntry>> {
    prop::collection::vec(
        (any::<u32>(), 0u8..=32, proptest::option::weighted(0.85, country())).prop_map(|(a, len, country)| GeoEntry {
            network: Ipv4Cidr::new(Ipv4Addr::from(a), len).unwrap(),
            country,
        }),
        1..40,
    )
}

proptest! {
    #[test]
    fn atlas_json_round_trips(tr in traceroute()) {
        let line = to_atlas_json(&tr);
        prop_assert!(!line.contains('\n'));
        let back = parse_atlas_json(line.as_bytes(), &RecordContext::default()).unwrap();
        prop_assert_eq!(back, tr);
    }

    #[test]
    fn country_paths_collapse_and_only_use_known_hops(tr in traceroute(), entries in small_table()) {
        let geo = GeoTable::from_entries(entries.clone(), "prop").unwrap();
        let path = to_country_path(&tr, &geo);
        prop_assert_eq!(path.countries[0], tr.origin_country);
        prop_assert!(path.countries.windows(2).all(|w| w[0] != w[1]));
        let mut expected = vec![tr.origin_country];
        for c in tr.hops.iter().filter_map(|h| h.responder).filter_map(|a| linear_lookup(&entries, a).country()) {
            if expected.last() != Some(&c) {
                expected.push(c);
            }
        }
        prop_assert_eq!(&path.countries, &expected);
        let last_ok = tr.hops.last().and_then(|h| h.responder).is_some_and(|a| {
            linear_lookup(&entries, a).country().is_some() && u32::from(a) >> 8 == u32::from(tr.destination_addr) >> 8
        });
        prop_assert_eq!(path.complete, last_ok);
    }

    #[test]
    fn lookup_matches_linear_scan(entries in small_table(), probes in prop::collection::vec(any::<u32>(), 1..50)) {
        let geo = GeoTable::from_entries(entries.clone(), "prop").unwrap();
        for p in probes {
            let a = Ipv4Addr::from(p);
            prop_assert_eq!(geo.lookup(a), linear_lookup(&entries, a));
        }
        for e in &entries {
            let a = e.network.addr();
            prop_assert_eq!(geo.lookup(a), linear_lookup(&entries, a));
        }
    }
}

#[test]
fn csv_and_mmdb_like_tables_agree() {
    let csv = "network,country_code\n1.0.0.0/8,AU\n1.2.0.0/16,\n1.2.3.0/24,JP\n";
    let jsonl = r#"{"network":"1.0.0.0/8","country":{"iso_code":"AU"}}
{"network":"1.2.0.0/16"}
{"network":"1.2.3.0/24","country":{"iso_code":"JP"}}
"#;
    let a = load_geo_table(csv.as_bytes(), GeoFormat::Csv, "csv").unwrap();
    let b = load_geo_table(jsonl.as_bytes(), GeoFormat::MmdbLike, "jsonl").unwrap();
    for addr in ["1.9.9.9", "1.2.9.9", "1.2.3.4", "2.0.0.1", "10.1.1.1"] {
        let addr: Ipv4Addr = addr.parse().unwrap();
        assert_eq!(a.lookup(addr), b.lookup(addr));
    }
    assert_eq!(a.lookup("1.2.3.4".parse().unwrap()).country(), Some(cc("JP")));
    assert_eq!(a.lookup("1.2.9.9".parse().unwrap()).country(), None);
}

#[test]
fn plain_text_and_atlas_agree_on_country_path() {
    let geo = load_geo_table("200.0.0.0/16,BR\n4.0.0.0/8,US\n".as_bytes(), GeoFormat::Csv, "t").unwrap();
    let ctx = RecordContext { origin_country: Some(cc("BR")), origin_probe: Some("p".into()), ..Default::default() };
    let text = "traceroute to x.com (4.5.6.7), 30 hops max\n 1  200.0.0.1  1.0 ms\n 2  * * *\n 3  4.5.6.7  9.0 ms\n";
    let atlas = r#"{"src_name":"p","dst_name":"x.com","dst_addr":"4.5.6.7","result":[{"hop":1,"result":[{"from":"200.0.0.1","rtt":1.0}]},{"hop":2,"result":[{"x":"*"}]},{"hop":3,"result":[{"from":"4.5.6.7","rtt":9.0}]}]}"#;
    let a = to_country_path(&parse_plain_text(text.as_bytes(), &ctx).unwrap(), &geo);
    let b = to_country_path(&parse_atlas_json(atlas.as_bytes(), &ctx).unwrap(), &geo);
    assert_eq!(a, b);
    assert!(a.complete);
    assert_eq!(a.countries, vec![cc("BR"), cc("US")]);
}
