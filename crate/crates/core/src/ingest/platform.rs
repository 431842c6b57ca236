//! Measurement-platform client (RIPE Atlas REST API shape).
//!
//! HTTP goes through [`HttpTransport`] so the client can be driven by a real
//! network stack ([`UreqTransport`]) or by recorded responses in tests.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{bounded_map, sort_traceroutes, ErrorKind, FetchOutcome, IngestError, ManifestError, MeasurementPlan};
use crate::pathcore::{parse_atlas_json, RecordContext};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpRequest {
    pub method: String,
    pub url: String,
    pub headers: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpResponse {
    pub status: u16,
    #[serde(default)]
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl HttpResponse {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }
}

pub trait HttpTransport: Send + Sync {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, String>;
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, duration: Duration);
}

pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

/// Blocking HTTPS transport.
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent =
            ureq::Agent::config_builder().http_status_as_error(false).timeout_global(Some(timeout)).build().into();
        UreqTransport { agent }
    }
}

impl HttpTransport for UreqTransport {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, String> {
        let response = match request.method.as_str() {
            "GET" => {
                let mut builder = self.agent.get(&request.url);
                for (k, v) in &request.headers {
                    builder = builder.header(k, v);
                }
                builder.call()
            }
            "POST" => {
                let mut builder = self.agent.post(&request.url);
                for (k, v) in &request.headers {
                    builder = builder.header(k, v);
                }
                builder.send(request.body.as_deref().unwrap_or_default())
            }
            other => return Err(format!("unsupported method {other}")),
        }
        .map_err(|e| e.to_string())?;
        let status = response.status().as_u16();
        let headers = response
            .headers()
            .iter()
            .map(|(k, v)| (k.as_str().to_string(), v.to_str().unwrap_or_default().to_string()))
            .collect();
        let body = response.into_body().read_to_string().map_err(|e| e.to_string())?;
        Ok(HttpResponse { status, headers, body })
    }
}

/// Live-mode settings. Measurement parameters default to the platform's
/// own traceroute defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlatformConfig {
    pub base_url: String,
    pub api_key: String,
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub default_retry_after: Duration,
    pub protocol: String,
    pub packets: u32,
    pub max_hops: u32,
}

impl PlatformConfig {
    pub fn new(api_key: impl Into<String>) -> Self {
        PlatformConfig {
            base_url: "https://atlas.ripe.net/api/v2".into(),
            api_key: api_key.into(),
            max_in_flight: 4,
            max_retries: 3,
            default_retry_after: Duration::from_secs(5),
            protocol: "ICMP".into(),
            packets: 3,
            max_hops: 32,
        }
    }
}

#[derive(Serialize)]
struct CreateBody<'a> {
    definitions: [Definition<'a>; 1],
    probes: [ProbeSelection; 1],
    is_oneoff: bool,
}

#[derive(Serialize)]
struct Definition<'a> {
    target: String,
    af: u8,
    #[serde(rename = "type")]
    kind: &'static str,
    protocol: &'a str,
    packets: u32,
    max_hops: u32,
    description: String,
    resolve_on_probe: bool,
}

#[derive(Serialize)]
struct ProbeSelection {
    requested: usize,
    #[serde(rename = "type")]
    kind: &'static str,
    value: String,
}

#[derive(Deserialize)]
struct CreateResponse {
    measurements: Vec<u64>,
}

/// A measurement the platform accepted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledMeasurement {
    pub id: u64,
    pub domain: String,
    pub target: std::net::Ipv4Addr,
}

pub struct PlatformClient<'a> {
    config: PlatformConfig,
    transport: &'a dyn HttpTransport,
    sleeper: &'a dyn Sleeper,
}

impl<'a> PlatformClient<'a> {
    pub fn new(config: PlatformConfig, transport: &'a dyn HttpTransport, sleeper: &'a dyn Sleeper) -> Self {
        PlatformClient { config, transport, sleeper }
    }

    /// The create-measurement request for one target. Pure, so request
    /// bodies can be compared byte for byte.
    pub fn create_request(&self, plan: &MeasurementPlan, domain: &str, target: std::net::Ipv4Addr) -> HttpRequest {
        let body = CreateBody {
            definitions: [Definition {
                target: target.to_string(),
                af: 4,
                kind: "traceroute",
                protocol: &self.config.protocol,
                packets: self.config.packets,
                max_hops: self.config.max_hops,
                description: format!("countrypath {} {domain} {target}", plan.origin_country),
                resolve_on_probe: false,
            }],
            probes: [ProbeSelection {
                requested: plan.probe_ids.len(),
                kind: "probes",
                value: plan.probe_ids.join(","),
            }],
            is_oneoff: true,
        };
        HttpRequest {
            method: "POST".into(),
            url: format!("{}/measurements/", self.config.base_url.trim_end_matches('/')),
            headers: vec![
                ("Authorization".into(), format!("Key {}", self.config.api_key)),
                ("Content-Type".into(), "application/json".into()),
            ],
            body: Some(serde_json::to_string(&body).expect("request body serializes")),
        }
    }

    pub fn results_request(&self, id: u64) -> HttpRequest {
        HttpRequest {
            method: "GET".into(),
            url: format!("{}/measurements/{id}/results/?format=json", self.config.base_url.trim_end_matches('/')),
            headers: vec![("Authorization".into(), format!("Key {}", self.config.api_key))],
            body: None,
        }
    }

    /// Sends with retries on HTTP 429, honouring `Retry-After` (seconds).
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, IngestError> {
        let mut attempt = 0;
        loop {
            let response = self.transport.send(request).map_err(IngestError::Transport)?;
            match response.status {
                200..=299 => return Ok(response),
                401 | 403 => return Err(IngestError::Auth { status: response.status }),
                429 => {
                    let wait = response
                        .header("Retry-After")
                        .and_then(|v| v.trim().parse::<u64>().ok())
                        .map(Duration::from_secs)
                        .unwrap_or(self.config.default_retry_after);
                    if attempt >= self.config.max_retries {
                        return Err(IngestError::RateLimited { retry_after: wait });
                    }
                    attempt += 1;
                    self.sleeper.sleep(wait);
                }
                status => return Err(IngestError::Http { status, body: response.body }),
            }
        }
    }

    pub fn create_measurement(
        &self,
        plan: &MeasurementPlan,
        domain: &str,
        target: std::net::Ipv4Addr,
    ) -> Result<ScheduledMeasurement, IngestError> {
        let response = self.send(&self.create_request(plan, domain, target))?;
        let parsed: CreateResponse =
            serde_json::from_str(&response.body).map_err(|e| IngestError::MalformedResponse(e.to_string()))?;
        let id = parsed
            .measurements
            .first()
            .copied()
            .ok_or_else(|| IngestError::MalformedResponse("no measurement id returned".into()))?;
        Ok(ScheduledMeasurement { id, domain: domain.to_string(), target })
    }

    /// Schedules one measurement per aggregated target. Authentication
    /// failures abort; any other failure is recorded and the rest continue.
    pub fn schedule(
        &self,
        plan: &MeasurementPlan,
    ) -> Result<(Vec<ScheduledMeasurement>, Vec<ManifestError>), IngestError> {
        let targets = plan.targets();
        if targets.len() as u64 > plan.credit_budget {
            return Err(IngestError::BudgetExceeded { planned: targets.len() as u64, budget: plan.credit_budget });
        }
        let outcomes = bounded_map(&targets, self.config.max_in_flight, |(domain, target)| {
            self.create_measurement(plan, domain, *target)
        });
        let mut scheduled = Vec::new();
        let mut errors = Vec::new();
        for ((domain, target), outcome) in targets.iter().zip(outcomes) {
            match outcome {
                Ok(m) => scheduled.push(m),
                Err(e @ IngestError::Auth { .. }) => return Err(e),
                Err(e) => errors.push(ManifestError::from_ingest(format!("create {domain} {target}"), &e)),
            }
        }
        Ok((scheduled, errors))
    }

    /// Downloads and parses the results of scheduled measurements.
    pub fn fetch_results(
        &self,
        plan: &MeasurementPlan,
        scheduled: &[ScheduledMeasurement],
    ) -> Result<FetchOutcome, IngestError> {
        let responses = bounded_map(scheduled, self.config.max_in_flight, |m| self.send(&self.results_request(m.id)));
        let mut outcome = FetchOutcome::default();
        for (m, response) in scheduled.iter().zip(responses) {
            let source = format!("measurement {}", m.id);
            let response = match response {
                Ok(r) => r,
                Err(e @ IngestError::Auth { .. }) => return Err(e),
                Err(e) => {
                    outcome.errors.push(ManifestError::from_ingest(source, &e));
                    continue;
                }
            };
            let records: Vec<serde_json::Value> = match serde_json::from_str(&response.body) {
                Ok(r) => r,
                Err(e) => {
                    outcome.errors.push(ManifestError::new(source, ErrorKind::MalformedResponse, e.to_string()));
                    continue;
                }
            };
            if records.is_empty() {
                outcome.errors.push(ManifestError::new(source, ErrorKind::NoResults, "no results yet"));
                continue;
            }
            let ctx = RecordContext {
                origin_country: Some(plan.origin_country),
                destination_domain: Some(m.domain.clone()),
                ..Default::default()
            };
            for (i, record) in records.iter().enumerate() {
                let bytes = serde_json::to_vec(record).expect("value serializes");
                match parse_atlas_json(&bytes, &ctx) {
                    Ok(mut tr) => {
                        tr.destination_domain = m.domain.clone();
                        outcome.traceroutes.push(tr);
                    }
                    Err(e) => outcome.errors.push(ManifestError::new(
                        format!("{source} result {i}"),
                        ErrorKind::Parse,
                        e.to_string(),
                    )),
                }
            }
        }
        sort_traceroutes(&mut outcome.traceroutes);
        Ok(outcome)
    }

    /// Schedules the plan and collects whatever results are available.
    pub fn fetch_traceroutes(&self, plan: &MeasurementPlan) -> Result<FetchOutcome, IngestError> {
        let (scheduled, mut errors) = self.schedule(plan)?;
        let mut outcome = self.fetch_results(plan, &scheduled)?;
        errors.append(&mut outcome.errors);
        outcome.errors = errors;
        Ok(outcome)
    }
}

/// Reads every `*.json` file in `dir` (sorted by name), one traceroute per
/// non-empty line. Bad lines end up in the error manifest.
pub fn load_fixture_dir(dir: &Path, ctx: &RecordContext) -> Result<FetchOutcome, IngestError> {
    let mut files: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "json"))
        .collect();
    files.sort();
    let mut outcome = FetchOutcome::default();
    for file in files {
        let text = std::fs::read(&file)?;
        let name = file.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        for (line_no, line) in text.split(|b| *b == b'\n').enumerate() {
            if line.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            match parse_atlas_json(line, ctx) {
                Ok(tr) => outcome.traceroutes.push(tr),
                Err(e) => outcome.errors.push(ManifestError::new(
                    format!("{name}:{}", line_no + 1),
                    ErrorKind::Parse,
                    e.to_string(),
                )),
            }
        }
    }
    sort_traceroutes(&mut outcome.traceroutes);
    Ok(outcome)
}
