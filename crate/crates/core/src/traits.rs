//! Species trait lookup: pluggable providers, a bundled local dataset, a
//! TTL cache with per-name single flight, and application of looked-up
//! traits to biotic components.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::clock::{Clock, Timestamp};
use crate::model::{ComponentKind, Model, ModelError, ParameterName};

const BUNDLED: &str = include_str!("../fixtures/traits.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraitSource {
    Local,
    Remote { url: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitRecord {
    pub canonical_name: String,
    pub params: BTreeMap<ParameterName, f64>,
    pub source: TraitSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieved_at: Option<Timestamp>,
}

impl TraitRecord {
    /// Only biotic parameters with in-range values are allowed.
    pub fn validate(&self) -> Result<(), TraitError> {
        for (&p, &v) in &self.params {
            if !p.accepts(ComponentKind::Biotic) {
                return Err(TraitError::InvalidRecord(format!(
                    "{}: {p} is not a biotic parameter",
                    self.canonical_name
                )));
            }
            p.check(v).map_err(|reason| {
                TraitError::InvalidRecord(format!("{}: {p} {reason}", self.canonical_name))
            })?;
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraitError {
    #[error("species name must not be empty")]
    EmptyName,
    #[error("no trait record for {0:?}")]
    NotFound(String),
    #[error("trait provider timed out looking up {0:?}")]
    Timeout(String),
    #[error("trait provider failed: {0}")]
    Provider(String),
    #[error("invalid trait record: {0}")]
    InvalidRecord(String),
    #[error("invalid provider configuration: {0}")]
    Config(String),
    #[error("component {0} is abiotic; traits apply to biotic components only")]
    Abiotic(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub trait TraitProvider: Send + Sync {
    /// Fetches a record by case-insensitive exact canonical name.
    fn fetch(&self, name: &str) -> Result<TraitRecord, TraitError>;

    /// Remote providers run under the lookup timeout on a helper thread.
    fn is_remote(&self) -> bool {
        false
    }
}

fn parse_records(text: &str) -> Result<HashMap<String, TraitRecord>, TraitError> {
    let records: Vec<TraitRecord> =
        serde_json::from_str(text).map_err(|e| TraitError::InvalidRecord(e.to_string()))?;
    let mut out = HashMap::new();
    for r in records {
        r.validate()?;
        out.insert(r.canonical_name.to_lowercase(), r);
    }
    Ok(out)
}

/// Offline provider backed by a JSON array of records.
#[derive(Debug, Clone)]
pub struct LocalProvider {
    records: HashMap<String, TraitRecord>,
}

impl LocalProvider {
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED).expect("bundled trait fixture is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, TraitError> {
        Ok(Self {
            records: parse_records(text)?,
        })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, TraitError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| TraitError::Provider(e.to_string()))?;
        Self::from_json(&text)
    }

    pub fn names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self
            .records
            .values()
            .map(|r| r.canonical_name.as_str())
            .collect();
        names.sort();
        names
    }
}

impl TraitProvider for LocalProvider {
    fn fetch(&self, name: &str) -> Result<TraitRecord, TraitError> {
        self.records
            .get(&name.to_lowercase())
            .cloned()
            .ok_or_else(|| TraitError::NotFound(name.to_string()))
    }
}

/// Request URL for the remote adapter contract.
pub fn remote_url(base: &str, name: &str) -> Result<Url, TraitError> {
    Url::parse_with_params(
        &format!("{}/traits", base.trim_end_matches('/')),
        [("name", name)],
    )
    .map_err(|e| TraitError::Config(e.to_string()))
}

/// Test double for a remote trait service: answers from recorded responses
/// keyed by request URL, after a simulated latency. Unrecorded URLs are 404.
#[derive(Debug)]
pub struct RecordedRemoteProvider {
    base_url: String,
    responses: HashMap<String, String>,
    latency: Duration,
    calls: AtomicUsize,
}

impl RecordedRemoteProvider {
    pub fn new(base_url: &str, latency: Duration) -> Result<Self, TraitError> {
        Url::parse(base_url).map_err(|e| TraitError::Config(e.to_string()))?;
        Ok(Self {
            base_url: base_url.to_string(),
            responses: HashMap::new(),
            latency,
            calls: AtomicUsize::new(0),
        })
    }

    /// Records the body served for `GET {base}/traits?name={name}`.
    pub fn record(&mut self, name: &str, body: &str) -> Result<(), TraitError> {
        let url = remote_url(&self.base_url, &name.to_lowercase())?;
        self.responses.insert(url.to_string(), body.to_string());
        Ok(())
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl TraitProvider for RecordedRemoteProvider {
    fn fetch(&self, name: &str) -> Result<TraitRecord, TraitError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        std::thread::sleep(self.latency);
        let url = remote_url(&self.base_url, &name.to_lowercase())?;
        let body = self
            .responses
            .get(url.as_str())
            .ok_or_else(|| TraitError::NotFound(name.to_string()))?;
        let mut record: TraitRecord =
            serde_json::from_str(body).map_err(|e| TraitError::Provider(format!("{url}: {e}")))?;
        record.source = TraitSource::Remote {
            url: url.to_string(),
        };
        Ok(record)
    }

    fn is_remote(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderKind {
    /// `None` selects the bundled dataset.
    Local {
        path: Option<String>,
    },
    Remote {
        base_url: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub ttl: Duration,
    pub timeout: Duration,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Local { path: None },
            ttl: Duration::from_secs(24 * 3600),
            timeout: Duration::from_secs(5),
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), TraitError> {
        if self.ttl.is_zero() {
            return Err(TraitError::Config("cache TTL must be positive".into()));
        }
        if self.timeout.is_zero() {
            return Err(TraitError::Config("timeout must be positive".into()));
        }
        Ok(())
    }
}

struct CacheEntry {
    record: TraitRecord,
    expires: Timestamp,
}

/// Caching front for a provider. Concurrent misses on one name share a
/// single provider call.
pub struct TraitLookup {
    provider: Arc<dyn TraitProvider>,
    clock: Arc<dyn Clock>,
    ttl: Duration,
    timeout: Duration,
    cache: Mutex<HashMap<String, CacheEntry>>,
    flights: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl TraitLookup {
    pub fn new(
        provider: Arc<dyn TraitProvider>,
        clock: Arc<dyn Clock>,
        config: &ProviderConfig,
    ) -> Result<Self, TraitError> {
        config.validate()?;
        Ok(Self {
            provider,
            clock,
            ttl: config.ttl,
            timeout: config.timeout,
            cache: Mutex::new(HashMap::new()),
            flights: Mutex::new(HashMap::new()),
        })
    }

    /// Builds the local provider named by the config. Remote configs need an
    /// explicit provider via [`TraitLookup::new`].
    pub fn from_config(config: &ProviderConfig, clock: Arc<dyn Clock>) -> Result<Self, TraitError> {
        let provider: Arc<dyn TraitProvider> = match &config.kind {
            ProviderKind::Local { path: None } => Arc::new(LocalProvider::bundled()),
            ProviderKind::Local { path: Some(p) } => Arc::new(LocalProvider::from_path(p)?),
            ProviderKind::Remote { base_url } => {
                return Err(TraitError::Config(format!(
                    "no client for remote provider {base_url}"
                )))
            }
        };
        Self::new(provider, clock, config)
    }

    fn cached(&self, key: &str) -> Option<TraitRecord> {
        let now = self.clock.now();
        let cache = self.cache.lock();
        cache
            .get(key)
            .filter(|e| now < e.expires)
            .map(|e| e.record.clone())
    }

    pub fn lookup(&self, name: &str) -> Result<TraitRecord, TraitError> {
        let name = name.trim();
        if name.is_empty() {
            return Err(TraitError::EmptyName);
        }
        let key = name.to_lowercase();
        if let Some(r) = self.cached(&key) {
            return Ok(r);
        }
        let flight = self.flights.lock().entry(key.clone()).or_default().clone();
        let _guard = flight
            .try_lock_for(self.timeout)
            .ok_or_else(|| TraitError::Timeout(name.to_string()))?;
        if let Some(r) = self.cached(&key) {
            return Ok(r);
        }
        let mut record = self.fetch(name)?;
        record.validate()?;
        let now = self.clock.now();
        record.retrieved_at = Some(now);
        let ttl = chrono::Duration::from_std(self.ttl).unwrap_or(chrono::Duration::MAX);
        self.cache.lock().insert(
            key,
            CacheEntry {
                record: record.clone(),
                expires: now.checked_add_signed(ttl).unwrap_or(Timestamp::MAX_UTC),
            },
        );
        Ok(record)
    }

    fn fetch(&self, name: &str) -> Result<TraitRecord, TraitError> {
        if !self.provider.is_remote() {
            return self.provider.fetch(name);
        }
        let (tx, rx) = mpsc::channel();
        let provider = Arc::clone(&self.provider);
        let owned = name.to_string();
        std::thread::spawn(move || {
            let _ = tx.send(provider.fetch(&owned));
        });
        rx.recv_timeout(self.timeout)
            .map_err(|_| TraitError::Timeout(name.to_string()))?
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitChange {
    pub parameter: ParameterName,
    pub old: f64,
    pub new: f64,
}

/// Overwrites the record's parameters on a biotic component and returns the
/// parameters whose value actually changed.
pub fn apply_traits(
    model: &mut Model,
    component: &str,
    record: &TraitRecord,
    now: Timestamp,
) -> Result<Vec<TraitChange>, TraitError> {
    let comp = model
        .component(component)
        .ok_or_else(|| ModelError::UnknownComponent(component.to_string()))?;
    if comp.kind != ComponentKind::Biotic {
        return Err(TraitError::Abiotic(component.to_string()));
    }
    record.validate()?;
    let pending: Vec<TraitChange> = record
        .params
        .iter()
        .filter(|(&p, &v)| comp.param(p) != v)
        .map(|(&p, &v)| TraitChange {
            parameter: p,
            old: comp.param(p),
            new: v,
        })
        .collect();
    for change in &pending {
        model.set_parameter(component, change.parameter, change.new, now)?;
    }
    Ok(pending)
}
