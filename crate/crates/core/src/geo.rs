//! IPv4 to country resolution.
//!
//! A [`GeoTable`] is loaded from a CSV file (`network,country_code`) or from a
//! line-delimited JSON dump shaped like MaxMind DB records. Nested networks are
//! flattened at load time into sorted, non-overlapping spans so a lookup is a
//! single binary search and the most specific network always wins.
//!
//! Rows without a country are kept as explicit unknown spans: they shadow any
//! coded parent network, so an address inside them resolves to
//! [`GeoOutcome::Unknown`]. Private and reserved addresses are always unknown.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Read};
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// ISO-3166 alpha-2 country code, always two uppercase ASCII letters.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CountryCode([u8; 2]);

impl CountryCode {
    /// Parses a two-letter code. Lowercase input is accepted and uppercased.
    pub fn new(code: &str) -> Option<Self> {
        let bytes = code.as_bytes();
        if bytes.len() != 2 || !bytes.iter().all(u8::is_ascii_alphabetic) {
            return None;
        }
        Some(CountryCode([bytes[0].to_ascii_uppercase(), bytes[1].to_ascii_uppercase()]))
    }

    pub fn as_str(&self) -> &str {
        // Both bytes are ASCII letters by construction.
        std::str::from_utf8(&self.0).expect("country code is ASCII")
    }
}

impl FromStr for CountryCode {
    type Err = GeoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CountryCode::new(s).ok_or_else(|| GeoError::InvalidCountry(s.to_string()))
    }
}

impl fmt::Display for CountryCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Debug for CountryCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for CountryCode {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for CountryCode {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        CountryCode::new(&s).ok_or_else(|| serde::de::Error::custom(format!("invalid country code {s:?}")))
    }
}

/// An IPv4 network in CIDR form. The address is always the network address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Ipv4Cidr {
    addr: Ipv4Addr,
    prefix_len: u8,
}

impl Ipv4Cidr {
    /// Builds a network, masking off host bits.
    pub fn new(addr: Ipv4Addr, prefix_len: u8) -> Option<Self> {
        if prefix_len > 32 {
            return None;
        }
        let masked = u32::from(addr) & mask(prefix_len);
        Some(Ipv4Cidr { addr: Ipv4Addr::from(masked), prefix_len })
    }

    pub fn addr(&self) -> Ipv4Addr {
        self.addr
    }

    pub fn prefix_len(&self) -> u8 {
        self.prefix_len
    }

    pub fn first(&self) -> u32 {
        u32::from(self.addr)
    }

    pub fn last(&self) -> u32 {
        self.first() | !mask(self.prefix_len)
    }

    pub fn contains(&self, addr: Ipv4Addr) -> bool {
        u32::from(addr) & mask(self.prefix_len) == self.first()
    }
}

fn mask(prefix_len: u8) -> u32 {
    if prefix_len == 0 {
        0
    } else {
        u32::MAX << (32 - prefix_len as u32)
    }
}

impl FromStr for Ipv4Cidr {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (addr, len) = s.split_once('/').ok_or_else(|| format!("missing prefix length in {s:?}"))?;
        let addr: Ipv4Addr = addr.parse().map_err(|_| format!("invalid IPv4 address in {s:?}"))?;
        let len: u8 = len.parse().map_err(|_| format!("invalid prefix length in {s:?}"))?;
        Ipv4Cidr::new(addr, len).ok_or_else(|| format!("prefix length out of range in {s:?}"))
    }
}

impl fmt::Display for Ipv4Cidr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.addr, self.prefix_len)
    }
}

/// Result of resolving one address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GeoOutcome {
    Country(CountryCode),
    Unknown,
}

impl GeoOutcome {
    pub fn country(self) -> Option<CountryCode> {
        match self {
            GeoOutcome::Country(c) => Some(c),
            GeoOutcome::Unknown => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeoFormat {
    /// `network,country_code` rows with a header line.
    Csv,
    /// One JSON object per line: `{"network": "1.2.0.0/16", "country": {"iso_code": "AU"}}`.
    MmdbLike,
}

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("geo table contains no ranges")]
    EmptyTable,
    #[error("invalid country code {0:?}")]
    InvalidCountry(String),
    #[error("alias map line {line}: {message}")]
    Alias { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One normalized input row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeoEntry {
    pub network: Ipv4Cidr,
    pub country: Option<CountryCode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Span {
    first: u32,
    last: u32,
    country: Option<CountryCode>,
}

/// Immutable IPv4 → country table.
#[derive(Debug, Clone)]
pub struct GeoTable {
    entries: Vec<GeoEntry>,
    spans: Vec<Span>,
    source_label: String,
}

impl GeoTable {
    /// Builds a table from raw rows. Duplicate networks keep the last row;
    /// nested networks resolve to the most specific one.
    pub fn from_entries(
        rows: impl IntoIterator<Item = GeoEntry>,
        source_label: impl Into<String>,
    ) -> Result<Self, GeoError> {
        let mut by_network: BTreeMap<(u32, u8), Option<CountryCode>> = BTreeMap::new();
        for row in rows {
            by_network.insert((row.network.first(), row.network.prefix_len()), row.country);
        }
        if by_network.is_empty() {
            return Err(GeoError::EmptyTable);
        }
        let entries: Vec<GeoEntry> = by_network
            .into_iter()
            .map(|((first, len), country)| GeoEntry {
                network: Ipv4Cidr::new(Ipv4Addr::from(first), len).expect("valid prefix"),
                country,
            })
            .collect();
        let spans = flatten(&entries);
        Ok(GeoTable { entries, spans, source_label: source_label.into() })
    }

    pub fn entries(&self) -> &[GeoEntry] {
        &self.entries
    }

    pub fn source_label(&self) -> &str {
        &self.source_label
    }

    /// Number of flattened, non-overlapping spans backing lookups.
    pub fn span_count(&self) -> usize {
        self.spans.len()
    }

    pub fn lookup(&self, addr: Ipv4Addr) -> GeoOutcome {
        if is_reserved(addr) {
            return GeoOutcome::Unknown;
        }
        let ip = u32::from(addr);
        let idx = self.spans.partition_point(|s| s.last < ip);
        match self.spans.get(idx) {
            Some(span) if span.first <= ip => match span.country {
                Some(c) => GeoOutcome::Country(c),
                None => GeoOutcome::Unknown,
            },
            _ => GeoOutcome::Unknown,
        }
    }

    /// Rewrites country codes through an alias map (`from -> to`).
    pub fn with_aliases(&self, aliases: &BTreeMap<CountryCode, CountryCode>) -> GeoTable {
        let rows = self.entries.iter().map(|e| GeoEntry {
            network: e.network,
            country: e.country.map(|c| aliases.get(&c).copied().unwrap_or(c)),
        });
        GeoTable::from_entries(rows, self.source_label.clone()).expect("non-empty table stays non-empty")
    }

    /// Same networks with every country replaced by unknown for which
    /// `demote` returns true.
    pub fn demote(&self, mut demote: impl FnMut(&GeoEntry) -> bool) -> GeoTable {
        let rows: Vec<GeoEntry> = self
            .entries
            .iter()
            .map(|e| GeoEntry { network: e.network, country: if demote(e) { None } else { e.country } })
            .collect();
        GeoTable::from_entries(rows, self.source_label.clone()).expect("non-empty table stays non-empty")
    }
}

/// Turns laminar CIDR rows (sorted by first address, then prefix length)
/// into disjoint spans where the innermost network owns each address.
fn flatten(entries: &[GeoEntry]) -> Vec<Span> {
    let mut spans = Vec::with_capacity(entries.len() * 2);
    // Open networks, outermost first: (last address, country).
    let mut stack: Vec<(u32, Option<CountryCode>)> = Vec::new();
    let mut cursor: u64 = 0;

    fn emit(spans: &mut Vec<Span>, from: u64, to: u32, country: Option<CountryCode>) {
        if from <= to as u64 {
            spans.push(Span { first: from as u32, last: to, country });
        }
    }

    for entry in entries {
        let first = entry.network.first();
        while let Some(&(last, country)) = stack.last() {
            if last >= first {
                break;
            }
            emit(&mut spans, cursor, last, country);
            cursor = last as u64 + 1;
            stack.pop();
        }
        if let Some(&(_, country)) = stack.last() {
            if cursor < first as u64 {
                emit(&mut spans, cursor, first - 1, country);
            }
        }
        cursor = first as u64;
        stack.push((entry.network.last(), entry.country));
    }
    while let Some((last, country)) = stack.pop() {
        emit(&mut spans, cursor, last, country);
        cursor = last as u64 + 1;
    }
    spans
}

/// Private, loopback, link-local and other non-routable space. Hops in these
/// ranges say nothing about the country a path crosses.
pub fn is_reserved(addr: Ipv4Addr) -> bool {
    let o = addr.octets();
    addr.is_private()
        || addr.is_loopback()
        || addr.is_link_local()
        || addr.is_unspecified()
        || addr.is_broadcast()
        || addr.is_multicast()
        || o[0] == 0
        // shared address space (carrier-grade NAT)
        || (o[0] == 100 && (o[1] & 0xc0) == 64)
        || o[0] >= 240
}

pub fn load_geo_table(source: impl Read, format: GeoFormat, label: &str) -> Result<GeoTable, GeoError> {
    let rows = match format {
        GeoFormat::Csv => read_csv_rows(source)?,
        GeoFormat::MmdbLike => read_mmdb_like_rows(source)?,
    };
    GeoTable::from_entries(rows, label)
}

/// Loads a table from disk, picking the format from the extension
/// (`.jsonl`/`.json` → MMDB-like, anything else → CSV).
pub fn load_geo_file(path: &std::path::Path) -> Result<GeoTable, GeoError> {
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") | Some("json") => GeoFormat::MmdbLike,
        _ => GeoFormat::Csv,
    };
    let file = std::fs::File::open(path)?;
    load_geo_table(file, format, &path.display().to_string())
}

fn parse_country_field(raw: &str, line: usize) -> Result<Option<CountryCode>, GeoError> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    let valid = raw.len() == 2 && raw.bytes().all(|b| b.is_ascii_uppercase());
    if !valid {
        return Err(GeoError::Parse { line, message: format!("invalid country code {raw:?}") });
    }
    Ok(CountryCode::new(raw))
}

fn read_csv_rows(source: impl Read) -> Result<Vec<GeoEntry>, GeoError> {
    let mut reader =
        csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(source);
    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| GeoError::Parse {
            line: e.position().map_or(idx + 1, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(idx + 1, |p| p.line() as usize);
        let network = record.get(0).unwrap_or("");
        if network.is_empty() || (line == 1 && network.eq_ignore_ascii_case("network")) {
            continue;
        }
        if record.len() > 2 {
            return Err(GeoError::Parse { line, message: format!("expected 2 columns, found {}", record.len()) });
        }
        let network: Ipv4Cidr = network.parse().map_err(|message| GeoError::Parse { line, message })?;
        let country = parse_country_field(record.get(1).unwrap_or(""), line)?;
        rows.push(GeoEntry { network, country });
    }
    Ok(rows)
}

#[derive(Deserialize)]
struct MmdbRecord {
    network: String,
    #[serde(default)]
    country: Option<MmdbCountry>,
}

#[derive(Deserialize)]
struct MmdbCountry {
    #[serde(default)]
    iso_code: Option<String>,
}

fn read_mmdb_like_rows(source: impl Read) -> Result<Vec<GeoEntry>, GeoError> {
    let mut rows = Vec::new();
    for (idx, line) in BufReader::new(source).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: MmdbRecord =
            serde_json::from_str(&line).map_err(|e| GeoError::Parse { line: line_no, message: e.to_string() })?;
        let network: Ipv4Cidr = record.network.parse().map_err(|message| GeoError::Parse { line: line_no, message })?;
        let code = record.country.and_then(|c| c.iso_code).unwrap_or_default();
        let country = parse_country_field(&code, line_no)?;
        rows.push(GeoEntry { network, country });
    }
    Ok(rows)
}

/// Reads a `from_code,to_code` alias file.
pub fn load_alias_map(source: impl Read) -> Result<BTreeMap<CountryCode, CountryCode>, GeoError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(source);
    let mut map = BTreeMap::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| GeoError::Alias { line, message: e.to_string() })?;
        let (from, to) = (record.get(0).unwrap_or(""), record.get(1).unwrap_or(""));
        if line == 1 && from.eq_ignore_ascii_case("from_code") {
            continue;
        }
        let parse = |s: &str| {
            CountryCode::new(s).ok_or_else(|| GeoError::Alias { line, message: format!("invalid country code {s:?}") })
        };
        map.insert(parse(from)?, parse(to)?);
    }
    Ok(map)
}
