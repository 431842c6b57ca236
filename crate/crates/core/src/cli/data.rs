//! Fixture directory loading.
//!
//! ```text
//! <fixtures>/
//!   default/*.json            client → domain traceroutes (or *.json at the top level)
//!   reverse/*.json            domain-side → probe traceroutes, paired for symmetry
//!   dns/*.json[l]             resolver observations, one JSON object per line
//!   open_resolver/*.json      client → replica traceroutes for resolver-returned addresses
//!   relay/client/*.json       client → relay traceroutes (`relay_id` = relay)
//!   relay/domain/*.json       relay → domain traceroutes (`relay_id` = relay)
//! ```

use std::path::{Path, PathBuf};

use super::CliError;
use crate::geo::CountryCode;
use crate::ingest::{load_fixture_dir, ResolverObservation, Store};
use crate::pathcore::{RecordContext, Traceroute};

#[derive(Debug, Clone)]
pub struct Dataset {
    pub origin: CountryCode,
    pub default: Vec<Traceroute>,
    pub reverse: Option<Vec<Traceroute>>,
    pub observations: Option<Vec<ResolverObservation>>,
    pub open_resolver: Option<Vec<Traceroute>>,
    pub relay_client: Option<Vec<Traceroute>>,
    pub relay_domain: Option<Vec<Traceroute>>,
}

/// `default/` when present, otherwise the fixture root itself.
pub fn default_dir(root: &Path) -> PathBuf {
    let dir = root.join("default");
    if dir.is_dir() {
        dir
    } else {
        root.to_path_buf()
    }
}

fn display(root: &Path, dir: &Path) -> String {
    match dir.strip_prefix(root) {
        Ok(rel) if !rel.as_os_str().is_empty() => rel.display().to_string(),
        _ => dir.display().to_string(),
    }
}

/// Strict load: any unparseable record fails the whole read.
pub fn read_traces(root: &Path, dir: &Path, ctx: &RecordContext) -> Result<Vec<Traceroute>, CliError> {
    let outcome =
        load_fixture_dir(dir, ctx).map_err(|e| CliError::runtime(format!("reading {}: {e}", dir.display())))?;
    if let Some(first) = outcome.errors.first() {
        let more = match outcome.errors.len() {
            1 => String::new(),
            n => format!(" (and {} more bad records)", n - 1),
        };
        let hint = if first.message.contains("origin country") { "; pass --origin" } else { "" };
        return Err(CliError::parse(format!("{}/{}: {}{hint}{more}", display(root, dir), first.source, first.message)));
    }
    Ok(outcome.traceroutes)
}

fn data_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::runtime(format!("reading {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "json" || e == "jsonl"))
        .collect();
    files.sort();
    Ok(files)
}

/// Reads resolver observations from a JSONL file, a directory of them, or
/// a corpus store (a directory holding `manifest.json`).
pub fn read_observations(path: &Path) -> Result<Vec<ResolverObservation>, CliError> {
    if path.join("manifest.json").is_file() {
        let store = Store::new(path);
        let manifest = store.load_manifest().map_err(|e| CliError::parse(e.to_string()))?;
        let mut out = Vec::new();
        for entry in manifest.entries.iter().filter(|e| e.kind == crate::ingest::RecordKind::Observations) {
            out.extend(store.load_observations(entry).map_err(|e| CliError::parse(e.to_string()))?);
        }
        return Ok(out);
    }
    let files = if path.is_dir() {
        data_files(path)?
    } else if path.is_file() {
        vec![path.to_path_buf()]
    } else {
        return Err(CliError::config(format!("{} does not exist", path.display())));
    };
    let mut out = Vec::new();
    for file in files {
        let text = std::fs::read_to_string(&file)
            .map_err(|e| CliError::runtime(format!("reading {}: {e}", file.display())))?;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let obs: ResolverObservation = serde_json::from_str(line)
                .map_err(|e| CliError::parse(format!("{}:{}: {e}", file.display(), i + 1)))?;
            out.push(obs);
        }
    }
    out.sort_by(|a, b| (a.resolver, &a.domain, a.timestamp).cmp(&(b.resolver, &b.domain, b.timestamp)));
    Ok(out)
}

fn optional(root: &Path, rel: &str) -> Option<PathBuf> {
    let dir = root.join(rel);
    dir.is_dir().then_some(dir)
}

fn require_relay_ids(root: &Path, dir: &Path, trs: &[Traceroute]) -> Result<(), CliError> {
    match trs.iter().find(|t| t.relay_id.is_none()) {
        Some(t) => Err(CliError::relay(format!(
            "{}: traceroute from probe {} to {} has no relay_id",
            display(root, dir),
            t.origin_probe,
            t.destination_domain
        ))),
        None => Ok(()),
    }
}

impl Dataset {
    /// Loads every dataset present under `root`. Without an explicit origin
    /// the default corpus's records must name it.
    pub fn load(root: &Path, origin: Option<CountryCode>) -> Result<Self, CliError> {
        if !root.is_dir() {
            return Err(CliError::config(format!("fixture directory {} does not exist", root.display())));
        }
        let origin_ctx = RecordContext { origin_country: origin, ..Default::default() };
        let default_path = default_dir(root);
        let default = read_traces(root, &default_path, &origin_ctx)?;
        let Some(first) = default.first() else {
            return Err(CliError::empty(format!("no traceroutes in {}", default_path.display())));
        };
        let origin = origin.unwrap_or(first.origin_country);
        if let Some(t) = default.iter().find(|t| t.origin_country != origin) {
            return Err(CliError::parse(format!(
                "default corpus mixes origins: probe {} is in {}, expected {origin}",
                t.origin_probe, t.origin_country
            )));
        }
        let origin_ctx = RecordContext { origin_country: Some(origin), ..Default::default() };
        let bare = RecordContext::default();

        let reverse = optional(root, "reverse").map(|d| read_traces(root, &d, &bare)).transpose()?;
        let observations = optional(root, "dns").map(|d| read_observations(&d)).transpose()?;
        let open_resolver = optional(root, "open_resolver").map(|d| read_traces(root, &d, &origin_ctx)).transpose()?;

        let (relay_client, relay_domain) = match optional(root, "relay") {
            None => (None, None),
            Some(relay) => {
                let client_dir = relay.join("client");
                let domain_dir = relay.join("domain");
                if !client_dir.is_dir() || !domain_dir.is_dir() {
                    return Err(CliError::relay("relay/ needs both client/ and domain/ subdirectories"));
                }
                let client = read_traces(root, &client_dir, &origin_ctx)?;
                let domain = read_traces(root, &domain_dir, &bare)?;
                require_relay_ids(root, &client_dir, &client)?;
                require_relay_ids(root, &domain_dir, &domain)?;
                (Some(client), Some(domain))
            }
        };

        Ok(Dataset { origin, default, reverse, observations, open_resolver, relay_client, relay_domain })
    }
}
