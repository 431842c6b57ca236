use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use super::config::{InputSource, RunConfig};
use super::data::{default_dir, read_observations, Dataset};
use super::report::{Cell, Table};
use super::{CliError, IngestArgs, PlanArgs, Services};
use crate::analytics::{detour_stats, hosting_diversity, symmetry_stats, PathCorpus};
use crate::avoidance::{build_report, AvoidanceError, RelayPathSet};
use crate::geo::{load_alias_map, load_geo_file, CountryCode, GeoError, GeoTable};
use crate::ingest::dns::{parse_resolver, resolutions_by_domain};
use crate::ingest::{
    load_fixture_dir, plan_measurements, query_resolvers, IngestError, ManifestError, MeasurementPlan, Persistable,
    PlatformClient, PlatformConfig, QueryOptions, Store,
};
use crate::pathcore::{to_country_path, CountryPath, RecordContext, Strategy, Traceroute};
use crate::ratio::Ratio;

const ANYCAST_NOTE: &str =
    "each address maps to exactly one country; anycast prefixes are attributed to a single location";

fn geo_error(path: &Path, e: GeoError) -> CliError {
    match e {
        GeoError::Io(io) => CliError::config(format!("cannot read {}: {io}", path.display())),
        other => CliError::parse(format!("{}: {other}", path.display())),
    }
}

pub fn load_geo(cfg: &RunConfig) -> Result<GeoTable, CliError> {
    let path = cfg.geo.as_ref().ok_or_else(|| CliError::config("a geolocation table is required (--geo)"))?;
    let table = load_geo_file(path).map_err(|e| geo_error(path, e))?;
    match &cfg.alias_map {
        None => Ok(table),
        Some(alias_path) => {
            let file = std::fs::File::open(alias_path)
                .map_err(|e| CliError::config(format!("cannot read {}: {e}", alias_path.display())))?;
            let aliases = load_alias_map(file).map_err(|e| geo_error(alias_path, e))?;
            Ok(table.with_aliases(&aliases))
        }
    }
}

fn prepare_out(cfg: &RunConfig, default: &str) -> Result<PathBuf, CliError> {
    let out = cfg.out_dir(default);
    std::fs::create_dir_all(&out).map_err(|e| CliError::runtime(format!("cannot create {}: {e}", out.display())))?;
    Ok(out)
}

fn write_tables(tables: &[Table], out: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    for table in tables {
        table.write(out, cfg.format).map_err(|e| CliError::runtime(format!("writing {}: {e}", out.display())))?;
    }
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("json value serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::runtime(format!("writing {}: {e}", path.display())))
}

fn ratio_row(label: Vec<Cell>, r: Ratio) -> Vec<Cell> {
    let mut row = label;
    row.extend([Cell::Fraction(r), Cell::Int(r.count), Cell::Int(r.total)]);
    row
}

fn convert(trs: &[Traceroute], geo: &GeoTable, strategy: Strategy) -> Vec<CountryPath> {
    trs.iter().map(|t| to_country_path(t, geo).with_strategy(strategy)).collect()
}

/// Forward (probe P → domain D) pairs with the reverse trace whose origin
/// is D and whose destination is P; the first such reverse trace wins.
pub fn symmetry_pairing(forward: &[Traceroute], reverse: &[Traceroute]) -> Vec<(usize, usize)> {
    let mut index: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for (j, r) in reverse.iter().enumerate() {
        index.entry((r.origin_probe.as_str(), r.destination_domain.as_str())).or_insert(j);
    }
    forward
        .iter()
        .enumerate()
        .filter_map(|(i, f)| index.get(&(f.destination_domain.as_str(), f.origin_probe.as_str())).map(|j| (i, *j)))
        .collect()
}

/// Every analysis table plus run metadata.
pub fn analyze_tables(
    data: &Dataset,
    geo: &GeoTable,
) -> Result<(Vec<Table>, Vec<String>, serde_json::Value), CliError> {
    let paths = convert(&data.default, geo, Strategy::Default);
    let complete = paths.iter().filter(|p| p.complete).count();
    let corpus = PathCorpus::new(data.origin, paths, "default").map_err(|e| CliError::parse(e.to_string()))?;
    let stats = detour_stats(&corpus).map_err(|e| CliError::empty(e.to_string()))?;
    let total = stats.total_paths;
    let mut warnings = Vec::new();

    let mut termination = Table::new("termination", &["country", "fraction", "n", "total"]);
    let mut transit = Table::new("transit", &["country", "fraction", "n", "total"]);
    for (country, t) in &stats.transit_fraction {
        let term = stats.termination_fraction.get(country).copied().unwrap_or(Ratio::new(0, total));
        termination.push(ratio_row(vec![Cell::text(country.as_str())], term));
        transit.push(ratio_row(vec![Cell::text(country.as_str())], *t));
    }

    let mut trombone = Table::new("trombone", &["scope", "country", "fraction", "n", "total"]);
    trombone.push(ratio_row(vec![Cell::text("all_paths"), Cell::Empty], stats.trombone_fraction));
    trombone.push(ratio_row(vec![Cell::text("domestic_paths"), Cell::Empty], stats.trombone_domestic_fraction));
    for (country, r) in &stats.trombone_transit_countries {
        trombone.push(ratio_row(vec![Cell::text("via"), Cell::text(country.as_str())], *r));
    }

    let mut tables = vec![termination, transit, trombone];

    let mut reverse_count = 0;
    if let Some(reverse) = &data.reverse {
        reverse_count = reverse.len();
        let pairing = symmetry_pairing(&data.default, reverse);
        let mut symmetry = Table::new("symmetry", &["metric", "fraction", "n", "pairs"]);
        let (equal, subset) = if pairing.is_empty() {
            warnings.push("reverse traceroutes supplied but none pair with a forward traceroute".to_string());
            (Ratio::new(0, 0), Ratio::new(0, 0))
        } else {
            let rev_paths = convert(reverse, geo, Strategy::Default);
            let s =
                symmetry_stats(corpus.paths(), &rev_paths, &pairing).map_err(|e| CliError::runtime(e.to_string()))?;
            (s.set_equal_fraction, s.reverse_subset_fraction)
        };
        symmetry.push(ratio_row(vec![Cell::text("set_equal")], equal));
        symmetry.push(ratio_row(vec![Cell::text("reverse_subset")], subset));
        tables.push(symmetry);
    }

    let mut hosting = Table::new("hosting", &["countries", "fraction", "n", "total"]);
    let mut hosting_domains = Table::new("hosting_domains", &["domain", "countries"]);
    let mut hosted = 0;
    if let Some(obs) = &data.observations {
        let diversity = hosting_diversity(&resolutions_by_domain(obs), geo);
        hosted = diversity.per_domain_country_count.len();
        for (k, r) in &diversity.histogram {
            hosting.push(ratio_row(vec![Cell::Int(*k as u64)], *r));
        }
        for (domain, k) in &diversity.per_domain_country_count {
            hosting_domains.push(vec![Cell::text(domain), Cell::Int(*k as u64)]);
        }
        warnings.extend(diversity.warnings);
    }
    tables.push(hosting);
    if data.observations.is_some() {
        tables.push(hosting_domains);
    }

    let metadata = serde_json::json!({
        "origin": data.origin,
        "geo_table": geo.source_label().rsplit(['/', '\\']).next().unwrap_or_default(),
        "geo_ranges": geo.entries().len(),
        "paths": total,
        "complete_paths": complete,
        "reverse_paths": reverse_count,
        "hosting_domains": hosted,
        "warnings": warnings,
        "notes": [ANYCAST_NOTE],
    });
    Ok((tables, warnings, metadata))
}

pub fn analyze(cfg: &RunConfig, stderr: &mut dyn Write) -> Result<(), CliError> {
    let root = cfg.fixtures_dir()?;
    let geo = load_geo(cfg)?;
    let data = Dataset::load(root, cfg.origin)?;
    let (tables, warnings, metadata) = analyze_tables(&data, &geo)?;
    for w in &warnings {
        let _ = writeln!(stderr, "warning: {w}");
    }
    let out = prepare_out(cfg, "reports")?;
    write_tables(&tables, &out, cfg)?;
    write_json(&out.join("metadata.json"), &metadata)
}

struct ScopeInputs {
    corpus: Option<PathCorpus>,
    resolver: Option<BTreeMap<String, Vec<CountryPath>>>,
    relays: Option<RelayPathSet>,
}

struct AvoidInputs {
    origin: CountryCode,
    default: Vec<(String, CountryPath)>,
    resolver: Option<Vec<(String, CountryPath)>>,
    client: Option<Vec<(String, CountryPath)>>,
    relay: Option<Vec<CountryPath>>,
}

fn probed(trs: &[Traceroute], geo: &GeoTable, strategy: Strategy) -> Vec<(String, CountryPath)> {
    trs.iter().map(|t| (t.origin_probe.clone(), to_country_path(t, geo).with_strategy(strategy))).collect()
}

impl AvoidInputs {
    fn new(data: &Dataset, geo: &GeoTable) -> Self {
        AvoidInputs {
            origin: data.origin,
            default: probed(&data.default, geo, Strategy::Default),
            resolver: data.open_resolver.as_deref().map(|t| probed(t, geo, Strategy::OpenResolver)),
            client: data.relay_client.as_deref().map(|t| probed(t, geo, Strategy::Relay)),
            relay: data.relay_domain.as_deref().map(|t| convert(t, geo, Strategy::Relay)),
        }
    }

    fn probes(&self) -> BTreeSet<&str> {
        self.default.iter().map(|(p, _)| p.as_str()).collect()
    }

    /// Inputs restricted to one probe (`None` = pooled). A probe's relay
    /// set covers only the relays it measured.
    fn scope(&self, probe: Option<&str>) -> Result<ScopeInputs, CliError> {
        let keep = |p: &str| probe.is_none_or(|want| want == p);
        let paths: Vec<CountryPath> = self.default.iter().filter(|(p, _)| keep(p)).map(|(_, c)| c.clone()).collect();
        let corpus = if paths.is_empty() {
            None
        } else {
            Some(
                PathCorpus::new(self.origin, paths, probe.unwrap_or("all"))
                    .map_err(|e| CliError::parse(e.to_string()))?,
            )
        };

        let resolver = self.resolver.as_ref().and_then(|legs| {
            let mut map: BTreeMap<String, Vec<CountryPath>> = BTreeMap::new();
            for (_, path) in legs.iter().filter(|(p, _)| keep(p)) {
                map.entry(path.destination_domain.clone()).or_default().push(path.clone());
            }
            (!map.is_empty()).then_some(map)
        });

        let relays = match (&self.client, &self.relay) {
            (Some(client), Some(relay)) => {
                let mut set = RelayPathSet::new();
                for (_, path) in client.iter().filter(|(p, _)| keep(p)) {
                    set.add_client_path(path.relay_id.clone().unwrap_or_default(), path.clone());
                }
                let measured: BTreeSet<String> = set.client_to_relay().keys().cloned().collect();
                for path in relay {
                    let id = path.relay_id.clone().unwrap_or_default();
                    if probe.is_none() || measured.contains(&id) {
                        set.add_relay_path(id, path.destination_domain.clone(), path.clone());
                    }
                }
                if set.relay_to_domain().is_empty() {
                    None
                } else {
                    set.validate().map_err(|e| CliError::relay(e.to_string()))?;
                    Some(set)
                }
            }
            _ => None,
        };
        Ok(ScopeInputs { corpus, resolver, relays })
    }
}

fn avoidance_error(e: AvoidanceError) -> CliError {
    match e {
        AvoidanceError::MissingClientPath { .. } | AvoidanceError::NotRelayPath { .. } => {
            CliError::relay(e.to_string())
        }
        AvoidanceError::EmptyCorpus => CliError::empty(e.to_string()),
        other => CliError::runtime(other.to_string()),
    }
}

fn opt_fraction(r: Option<Ratio>) -> Cell {
    r.map_or(Cell::Empty, Cell::Fraction)
}

fn opt_total(r: Option<Ratio>) -> Cell {
    Cell::Int(r.map_or(0, |r| r.total))
}

/// The avoidance table: one pooled row per target, plus one row per probe
/// when the corpus has more than one.
pub fn avoid_table(data: &Dataset, geo: &GeoTable, targets: &[CountryCode]) -> Result<Table, CliError> {
    let inputs = AvoidInputs::new(data, geo);
    let mut scopes: Vec<(String, ScopeInputs)> = vec![("all".into(), inputs.scope(None)?)];
    let probes = inputs.probes();
    if probes.len() > 1 {
        for probe in probes {
            scopes.push((probe.to_string(), inputs.scope(Some(probe))?));
        }
    }

    let mut table = Table::new(
        "avoidance",
        &[
            "origin",
            "target",
            "no_relay",
            "open_resolvers",
            "relays",
            "upper_bound",
            "scope",
            "n_paths",
            "n_resolver_domains",
            "n_relay_domains",
            "usable_relays",
        ],
    );
    for target in targets {
        for (scope, s) in &scopes {
            let report = build_report(data.origin, s.corpus.as_ref(), s.resolver.as_ref(), s.relays.as_ref(), *target)
                .map_err(avoidance_error)?;
            table.push(vec![
                Cell::text(data.origin.as_str()),
                Cell::text(target.as_str()),
                opt_fraction(report.no_relay_value),
                opt_fraction(report.open_resolver_value),
                opt_fraction(report.relay_value),
                opt_fraction(report.upper_bound),
                Cell::text(scope),
                opt_total(report.no_relay_value),
                opt_total(report.open_resolver_value),
                opt_total(report.relay_value),
                Cell::text(report.usable_relays.join(";")),
            ]);
        }
    }
    Ok(table)
}

pub fn avoid(cfg: &RunConfig) -> Result<(), CliError> {
    let root = cfg.fixtures_dir()?;
    if cfg.targets.is_empty() {
        return Err(CliError::config("`avoid` needs at least one --target"));
    }
    let geo = load_geo(cfg)?;
    let data = Dataset::load(root, cfg.origin)?;
    let table = avoid_table(&data, &geo, &cfg.targets)?;
    let out = prepare_out(cfg, "reports")?;
    write_tables(&[table], &out, cfg)
}

fn read_lines(path: &Path) -> Result<Vec<String>, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(str::to_string).collect())
}

fn report_errors(errors: &[ManifestError], stderr: &mut dyn Write) {
    for e in errors {
        let _ = writeln!(stderr, "skipped {}: {}", e.source, e.message);
    }
}

fn persist(store: &Store, item: Persistable<'_>, what: &str, stderr: &mut dyn Write) -> Result<(), CliError> {
    let outcome = store.persist(item).map_err(|e| CliError::runtime(e.to_string()))?;
    if outcome.already_persisted {
        let _ = writeln!(stderr, "already persisted: {} ({})", outcome.entry.file, what);
    } else {
        let _ = writeln!(stderr, "stored {} {what} in {}", outcome.entry.records, outcome.entry.file);
    }
    Ok(())
}

fn manifest_summary(store: &Store, stderr: &mut dyn Write) -> Result<(), CliError> {
    let manifest = store.load_manifest().map_err(|e| CliError::runtime(e.to_string()))?;
    let _ = writeln!(
        stderr,
        "manifest: {} files, {} records in {}",
        manifest.entries.len(),
        manifest.total_records(),
        store.dir().display()
    );
    Ok(())
}

pub fn ingest(
    cfg: &RunConfig,
    args: &IngestArgs,
    services: &Services<'_>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), CliError> {
    match &cfg.source {
        Some(InputSource::Fixtures(root)) => ingest_fixtures(cfg, root, stderr),
        Some(InputSource::Live) => ingest_live(cfg, args, services, stdout, stderr),
        None => Err(CliError::config("no input source: pass `--fixtures <dir>` or `--live`")),
    }
}

fn ingest_fixtures(cfg: &RunConfig, root: &Path, stderr: &mut dyn Write) -> Result<(), CliError> {
    if !root.is_dir() {
        return Err(CliError::config(format!("fixture directory {} does not exist", root.display())));
    }
    let ctx = RecordContext { origin_country: cfg.origin, ..Default::default() };
    let dir = default_dir(root);
    let outcome = load_fixture_dir(&dir, &ctx).map_err(|e| CliError::runtime(e.to_string()))?;
    if outcome.traceroutes.is_empty() && outcome.errors.is_empty() {
        return Err(CliError::empty(format!("no traceroutes in {}", dir.display())));
    }
    let store = Store::new(cfg.out_dir("store"));
    if !outcome.traceroutes.is_empty() {
        persist(&store, Persistable::Traceroutes(&outcome.traceroutes), "traceroutes", stderr)?;
    }
    let dns = root.join("dns");
    if dns.is_dir() {
        let observations = read_observations(&dns)?;
        if !observations.is_empty() {
            persist(&store, Persistable::Observations(&observations), "observations", stderr)?;
        }
    }
    report_errors(&outcome.errors, stderr);
    manifest_summary(&store, stderr)?;
    match outcome.errors.len() {
        0 => Ok(()),
        n => Err(CliError::parse(format!("{n} records could not be parsed; the rest were stored"))),
    }
}

fn ingest_live(
    cfg: &RunConfig,
    args: &IngestArgs,
    services: &Services<'_>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), CliError> {
    let plan: Option<MeasurementPlan> = args
        .plan
        .as_ref()
        .map(|p| {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::config(format!("cannot read {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::parse(format!("{}: {e}", p.display())))
        })
        .transpose()?;
    let resolvers = args
        .resolvers
        .as_ref()
        .map(|p| {
            read_lines(p)?.iter().map(|r| parse_resolver(r).map_err(CliError::config)).collect::<Result<Vec<_>, _>>()
        })
        .transpose()?;
    let domains = args.domains.as_ref().map(|p| read_lines(p)).transpose()?;
    if resolvers.is_some() != domains.is_some() {
        return Err(CliError::config("DNS ingest needs both --resolvers and --domains"));
    }
    if plan.is_none() && resolvers.is_none() {
        return Err(CliError::config("live ingest needs --plan and/or --resolvers with --domains"));
    }

    if args.dry_run {
        if let Some(plan) = &plan {
            let _ = writeln!(stdout, "planned measurements: {}", plan.target_count());
        }
        if let (Some(r), Some(d)) = (&resolvers, &domains) {
            let _ = writeln!(stdout, "planned dns queries: {}", r.len() * d.len());
        }
        return Ok(());
    }

    let store = Store::new(cfg.out_dir("store"));
    let mut failures = Vec::new();
    if let Some(plan) = &plan {
        let key = (services.env)(&args.api_key_env)
            .filter(|k| !k.is_empty())
            .ok_or_else(|| CliError::config(format!("API key variable {} is not set", args.api_key_env)))?;
        let mut config = PlatformConfig::new(key);
        if let Some(base) = &args.base_url {
            config.base_url = base.clone();
        }
        let client = PlatformClient::new(config, services.http, services.sleeper);
        let outcome = client.fetch_traceroutes(plan).map_err(|e| match e {
            IngestError::BudgetExceeded { .. } => CliError::config(e.to_string()),
            other => CliError::runtime(other.to_string()),
        })?;
        if !outcome.traceroutes.is_empty() {
            persist(&store, Persistable::Traceroutes(&outcome.traceroutes), "traceroutes", stderr)?;
        }
        failures.extend(outcome.errors);
    }
    if let (Some(resolvers), Some(domains)) = (&resolvers, &domains) {
        let options = QueryOptions { timeout: Duration::from_millis(args.dns_timeout_ms), ..Default::default() };
        match query_resolvers(services.dns, resolvers, domains, &options) {
            Ok(outcome) => {
                if !outcome.observations.is_empty() {
                    persist(&store, Persistable::Observations(&outcome.observations), "observations", stderr)?;
                }
                failures.extend(outcome.errors);
            }
            Err(IngestError::AllResolversUnreachable { errors }) => {
                report_errors(&errors, stderr);
                return Err(CliError::runtime("no resolver answered any query"));
            }
            Err(e) => return Err(CliError::runtime(e.to_string())),
        }
    }
    report_errors(&failures, stderr);
    manifest_summary(&store, stderr)?;
    match failures.len() {
        0 => Ok(()),
        n => Err(CliError::partial(format!("{n} requests failed; results that arrived were stored"))),
    }
}

pub fn plan(cfg: &RunConfig, args: &PlanArgs, stderr: &mut dyn Write) -> Result<(), CliError> {
    let origin = cfg.origin.ok_or_else(|| CliError::config("`plan` needs --origin"))?;
    let domains = read_lines(&args.domains)?;
    let observations = read_observations(&args.resolutions)?;
    let mut resolutions: BTreeMap<String, Vec<std::net::Ipv4Addr>> = BTreeMap::new();
    for obs in observations {
        resolutions.entry(obs.domain).or_default().extend(obs.answers);
    }
    let plan = plan_measurements(origin, args.probes.clone(), &domains, &resolutions, args.budget)
        .map_err(|e| CliError::config(e.to_string()))?;
    for w in &plan.warnings {
        let _ = writeln!(stderr, "warning: {w}");
    }
    let _ = writeln!(
        stderr,
        "planned {} targets for {} domains ({} cut by budget {})",
        plan.target_count(),
        plan.domains.len(),
        plan.cut_domains.len(),
        plan.credit_budget
    );
    let out = prepare_out(cfg, ".")?;
    write_json(&out.join("plan.json"), &serde_json::to_value(&plan).expect("plan serializes"))
}
