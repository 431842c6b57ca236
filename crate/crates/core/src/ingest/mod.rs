//! Getting measurement data in and keeping it.

pub mod dns;
mod plan;
mod platform;
pub mod store;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pathcore::Traceroute;

pub use dns::{query_resolvers, DnsTransport, QueryOptions, QueryOutcome, ResolverObservation, UdpDnsTransport};
pub use plan::{aggregate_slash24, plan_measurements, MeasurementPlan};
pub use platform::{
    load_fixture_dir, HttpRequest, HttpResponse, HttpTransport, PlatformClient, PlatformConfig, ScheduledMeasurement,
    Sleeper, ThreadSleeper, UreqTransport,
};
pub use store::{Manifest, ManifestEntry, PersistOutcome, Persistable, RecordKind, Store};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("credit budget must be positive")]
    ZeroBudget,
    #[error("plan has {planned} targets but the budget is {budget}")]
    BudgetExceeded { planned: u64, budget: u64 },
    #[error("authentication failed (HTTP {status})")]
    Auth { status: u16 },
    #[error("rate limited; retry after {retry_after:?}")]
    RateLimited { retry_after: Duration },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("no resolver answered ({} failures)", errors.len())]
    AllResolversUnreachable { errors: Vec<ManifestError> },
    #[error("integrity failure in {file}: {message}")]
    Integrity { file: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Parse,
    Auth,
    RateLimited,
    MalformedResponse,
    NoResults,
    Http,
    Transport,
    Timeout,
    ServFail,
    DnsError,
    Other,
}

/// One record or request that did not make it into the output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestError {
    pub source: String,
    pub kind: ErrorKind,
    pub message: String,
}

impl ManifestError {
    pub fn new(source: impl Into<String>, kind: ErrorKind, message: impl Into<String>) -> Self {
        ManifestError { source: source.into(), kind, message: message.into() }
    }

    pub fn from_ingest(source: impl Into<String>, err: &IngestError) -> Self {
        let kind = match err {
            IngestError::Auth { .. } => ErrorKind::Auth,
            IngestError::RateLimited { .. } => ErrorKind::RateLimited,
            IngestError::MalformedResponse(_) => ErrorKind::MalformedResponse,
            IngestError::Http { .. } => ErrorKind::Http,
            IngestError::Transport(_) => ErrorKind::Transport,
            _ => ErrorKind::Other,
        };
        ManifestError::new(source, kind, err.to_string())
    }
}

/// Parsed traceroutes plus everything that failed along the way.
#[derive(Debug, Clone, Default)]
pub struct FetchOutcome {
    pub traceroutes: Vec<Traceroute>,
    pub errors: Vec<ManifestError>,
}

/// Deterministic merge order: probe, domain, timestamp.
pub fn sort_traceroutes(trs: &mut [Traceroute]) {
    trs.sort_by(|a, b| {
        (&a.origin_probe, &a.destination_domain, a.timestamp).cmp(&(
            &b.origin_probe,
            &b.destination_domain,
            b.timestamp,
        ))
    });
}

/// Maps `f` over `items` with at most `limit` calls in flight, keeping
/// input order in the output.
pub(crate) fn bounded_map<T, R, F>(items: &[T], limit: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = limit.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                let result = f(item);
                slots.lock().expect("result slots")[i] = Some(result);
            });
        }
    });
    slots.into_inner().expect("result slots").into_iter().map(|r| r.expect("every slot filled")).collect()
}
