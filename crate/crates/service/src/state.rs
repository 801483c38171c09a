//! Service state: experiments with their event logs, models, simulation
//! batches and id counters, optionally mirrored to a data directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ablab_core::bundle::ExportBundle;
use ablab_core::clock::Clock;
use ablab_core::events::{EventDraft, EventLog, Payload};
use ablab_core::exemplars;
use ablab_core::experiment::{Document, Experiment, FeatureFlag};
use ablab_core::model::Model;
use ablab_core::sim::{self, RunSeries, SimConfig, SimSpec};
use ablab_core::traits::{LocalProvider, TraitLookup, TraitProvider};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::api::{BatchStatus, DocumentUpload};
use crate::auth::{ParticipantClaims, TokenSigner};
use crate::config::ServiceConfig;
use crate::error::ApiError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelRecord {
    pub model: Model,
    /// `None` for exemplars.
    pub experiment: Option<String>,
    pub participant: Option<String>,
    pub group: Option<String>,
    /// Whether the model has been simulated; structural edits after that
    /// are revisions.
    pub simulated: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchRecord {
    pub id: String,
    pub model: String,
    pub experiment: String,
    pub participant: String,
    pub config: SimConfig,
    /// The model as simulated.
    pub snapshot: Model,
    pub status: BatchStatus,
    #[serde(default)]
    pub error: Option<String>,
    #[serde(skip)]
    pub runs: Vec<RunSeries>,
}

impl BatchRecord {
    pub fn spec(&self) -> Result<SimSpec, ApiError> {
        Ok(sim::compile(&self.snapshot)?)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Counters {
    pub experiment: u64,
    pub group: u64,
    pub model: u64,
    pub participant: u64,
    pub batch: u64,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct StoredDocs {
    welcome: Option<DocumentUpload>,
    exit: Option<DocumentUpload>,
}

/// Serialized form of [`Store`] (`state.json`). Events and batch series
/// live in their own files.
#[derive(Debug, Default, Serialize, Deserialize)]
struct Snapshot {
    experiments: Vec<Experiment>,
    docs: BTreeMap<String, StoredDocs>,
    models: Vec<ModelRecord>,
    batches: Vec<BatchRecord>,
    counters: Counters,
}

#[derive(Debug, Default)]
pub struct Store {
    pub experiments: BTreeMap<String, Experiment>,
    pub logs: BTreeMap<String, EventLog>,
    pub models: BTreeMap<String, ModelRecord>,
    pub batches: BTreeMap<String, BatchRecord>,
    pub counters: Counters,
}

fn encode_doc(doc: &Option<Document>) -> Option<DocumentUpload> {
    doc.as_ref().map(|d| DocumentUpload {
        media_type: d.media_type.clone(),
        data_base64: STANDARD.encode(&d.data),
    })
}

pub fn decode_doc(doc: &Option<DocumentUpload>) -> Result<Option<Document>, ApiError> {
    doc.as_ref()
        .map(|d| {
            Ok(Document {
                media_type: d.media_type.clone(),
                data: STANDARD.decode(&d.data_base64).map_err(|e| {
                    ApiError::validation(format!("document is not valid base64: {e}"))
                })?,
            })
        })
        .transpose()
}

fn storage<E: std::fmt::Display>(path: &Path) -> impl FnOnce(E) -> ApiError + '_ {
    move |e| ApiError::storage(format!("{}: {e}", path.display()))
}

impl Store {
    fn with_exemplars() -> Self {
        let mut store = Store::default();
        for m in exemplars::load_exemplars().expect("bundled exemplars are valid") {
            store.models.insert(
                m.id.clone(),
                ModelRecord {
                    model: m,
                    experiment: None,
                    participant: None,
                    group: None,
                    simulated: false,
                },
            );
        }
        store
    }

    fn load(dir: &Path) -> Result<Self, ApiError> {
        let mut store = Self::with_exemplars();
        let state_path = dir.join("state.json");
        if state_path.is_file() {
            let text = std::fs::read_to_string(&state_path).map_err(storage(&state_path))?;
            let snap: Snapshot = serde_json::from_str(&text).map_err(storage(&state_path))?;
            for mut e in snap.experiments {
                if let Some(docs) = snap.docs.get(&e.id) {
                    e.welcome_doc = decode_doc(&docs.welcome)?;
                    e.exit_doc = decode_doc(&docs.exit)?;
                }
                store.experiments.insert(e.id.clone(), e);
            }
            for m in snap.models {
                store.models.insert(m.model.id.clone(), m);
            }
            for mut b in snap.batches {
                let csv_path = dir.join("simulations").join(format!("{}.csv", b.id));
                if b.status == BatchStatus::Done {
                    let text = std::fs::read_to_string(&csv_path).map_err(storage(&csv_path))?;
                    b.runs =
                        sim::parse_batch_csv(&text, b.config.seed).map_err(storage(&csv_path))?;
                } else if b.status == BatchStatus::Running {
                    b.status = BatchStatus::Failed;
                    b.error = Some("interrupted by a service restart".into());
                }
                store.batches.insert(b.id.clone(), b);
            }
            store.counters = snap.counters;
        }
        let events = dir.join("events");
        std::fs::create_dir_all(&events).map_err(storage(&events))?;
        std::fs::create_dir_all(dir.join("simulations")).map_err(storage(dir))?;
        for id in store.experiments.keys() {
            let path = events.join(format!("{id}.jsonl"));
            let log = EventLog::open(&path).map_err(storage(&path))?;
            store.logs.insert(id.clone(), log);
        }
        Ok(store)
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot {
            experiments: self.experiments.values().cloned().collect(),
            docs: self
                .experiments
                .values()
                .map(|e| {
                    (
                        e.id.clone(),
                        StoredDocs {
                            welcome: encode_doc(&e.welcome_doc),
                            exit: encode_doc(&e.exit_doc),
                        },
                    )
                })
                .collect(),
            models: self
                .models
                .values()
                .filter(|m| m.experiment.is_some())
                .cloned()
                .collect(),
            batches: self.batches.values().cloned().collect(),
            counters: self.counters.clone(),
        }
    }

    pub fn next_id(&mut self, kind: &str) -> String {
        let c = &mut self.counters;
        match kind {
            "experiment" => {
                c.experiment += 1;
                format!("exp-{:04}", c.experiment)
            }
            "group" => {
                c.group += 1;
                c.group.to_string()
            }
            "model" => {
                c.model += 1;
                format!("m-{:06}", c.model)
            }
            "participant" => {
                c.participant += 1;
                format!("p-{:06}", c.participant)
            }
            "batch" => {
                c.batch += 1;
                format!("b-{:06}", c.batch)
            }
            other => unreachable!("no counter for {other}"),
        }
    }

    pub fn experiment(&self, id: &str) -> Result<&Experiment, ApiError> {
        self.experiments
            .get(id)
            .ok_or_else(|| ApiError::not_found("experiment", id))
    }

    pub fn experiment_mut(&mut self, id: &str) -> Result<&mut Experiment, ApiError> {
        self.experiments
            .get_mut(id)
            .ok_or_else(|| ApiError::not_found("experiment", id))
    }

    /// The bundle an export of `experiment` produces.
    pub fn bundle(&self, experiment: &str) -> Result<ExportBundle, ApiError> {
        let exp = self.experiment(experiment)?.clone();
        let models = self
            .models
            .values()
            .filter(|m| m.experiment.as_deref() == Some(experiment))
            .map(|m| m.model.clone())
            .collect();
        let events = self
            .logs
            .get(experiment)
            .map(|l| l.events().to_vec())
            .unwrap_or_default();
        let simulations = self
            .batches
            .values()
            .filter(|b| b.experiment == experiment && b.status == BatchStatus::Done)
            .map(|b| (b.id.clone(), sim::batch_csv(&b.runs)))
            .collect();
        Ok(ExportBundle::assemble(exp, models, events, simulations))
    }

    /// Checks that the claims still match an active experiment assignment.
    pub fn participant_experiment(
        &self,
        claims: &ParticipantClaims,
    ) -> Result<&Experiment, ApiError> {
        let exp = self.experiment(&claims.experiment)?;
        match exp.assignment(&claims.participant) {
            Some(a) if a.group_id == claims.group => Ok(exp),
            _ => Err(ApiError::unauthorized("token does not match an assignment")),
        }
    }

    pub fn require_flag(
        &self,
        claims: &ParticipantClaims,
        flag: FeatureFlag,
    ) -> Result<(), ApiError> {
        let exp = self.participant_experiment(claims)?;
        if exp.is_enabled(&claims.group, flag)? {
            Ok(())
        } else {
            Err(ApiError::disabled(flag))
        }
    }

    pub fn record(
        &mut self,
        claims: &ParticipantClaims,
        model: &str,
        action: ablab_core::events::ActionKind,
        payload: Payload,
        now: ablab_core::clock::Timestamp,
    ) -> Result<u64, ApiError> {
        let exp = self
            .experiments
            .get(&claims.experiment)
            .ok_or_else(|| ApiError::not_found("experiment", &claims.experiment))?;
        let draft = EventDraft {
            ts: now,
            experiment: claims.experiment.clone(),
            group: claims.group.clone(),
            participant: claims.participant.clone(),
            model: model.to_string(),
            action,
            payload,
        };
        let log = self
            .logs
            .get_mut(&claims.experiment)
            .ok_or_else(|| ApiError::not_found("experiment", &claims.experiment))?;
        Ok(log.record(exp, draft)?)
    }
}

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Mutex<Store>>,
    pub clock: Arc<dyn Clock>,
    pub signer: TokenSigner,
    pub traits: Arc<TraitLookup>,
    pub config: Arc<ServiceConfig>,
}

impl AppState {
    /// State backed by the bundled local trait dataset.
    pub fn new(config: ServiceConfig, clock: Arc<dyn Clock>) -> Result<Self, ApiError> {
        let traits = TraitLookup::from_config(&config.traits, Arc::clone(&clock))?;
        Self::with_traits(config, clock, traits)
    }

    pub fn with_provider(
        config: ServiceConfig,
        clock: Arc<dyn Clock>,
        provider: Arc<dyn TraitProvider>,
    ) -> Result<Self, ApiError> {
        let traits = TraitLookup::new(provider, Arc::clone(&clock), &config.traits)?;
        Self::with_traits(config, clock, traits)
    }

    fn with_traits(
        config: ServiceConfig,
        clock: Arc<dyn Clock>,
        traits: TraitLookup,
    ) -> Result<Self, ApiError> {
        let store = match &config.data_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(storage(dir))?;
                Store::load(dir)?
            }
            None => Store::with_exemplars(),
        };
        Ok(Self {
            store: Arc::new(Mutex::new(store)),
            clock,
            signer: TokenSigner::new(&config.secret(), &config.researcher_token),
            traits: Arc::new(traits),
            config: Arc::new(config),
        })
    }

    pub fn local_traits() -> Arc<dyn TraitProvider> {
        Arc::new(LocalProvider::bundled())
    }

    fn data_dir(&self) -> Option<&PathBuf> {
        self.config.data_dir.as_ref()
    }

    /// Writes `state.json` when a data directory is configured.
    pub fn persist(&self, store: &Store) -> Result<(), ApiError> {
        let Some(dir) = self.data_dir() else {
            return Ok(());
        };
        let path = dir.join("state.json");
        let tmp = dir.join("state.json.tmp");
        let text = serde_json::to_vec_pretty(&store.snapshot()).expect("state serializes");
        std::fs::write(&tmp, text).map_err(storage(&tmp))?;
        std::fs::rename(&tmp, &path).map_err(storage(&path))
    }

    /// Opens the event log for a new experiment.
    pub fn open_log(&self, experiment: &str) -> Result<EventLog, ApiError> {
        match self.data_dir() {
            Some(dir) => {
                let path = dir.join("events").join(format!("{experiment}.jsonl"));
                EventLog::open(&path).map_err(storage(&path))
            }
            None => Ok(EventLog::new()),
        }
    }

    pub fn save_batch_csv(&self, batch: &BatchRecord) -> Result<(), ApiError> {
        let Some(dir) = self.data_dir() else {
            return Ok(());
        };
        let path = dir.join("simulations").join(format!("{}.csv", batch.id));
        std::fs::write(&path, sim::batch_csv(&batch.runs)).map_err(storage(&path))
    }
}
