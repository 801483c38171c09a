//! Append-only capture of participant actions.
//!
//! Every participant-facing operation maps to one letter of the action
//! alphabet (N, S, P, C, R, E). The log is the substrate for all analytics.

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::Duration;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::clock::Timestamp;
use crate::experiment::{Experiment, FeatureFlag};
use crate::model::{ParameterName, Provenance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionKind {
    N,
    S,
    P,
    C,
    R,
    E,
}

impl ActionKind {
    pub const ALL: [ActionKind; 6] = [
        ActionKind::N,
        ActionKind::S,
        ActionKind::P,
        ActionKind::C,
        ActionKind::R,
        ActionKind::E,
    ];
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

pub type Payload = Map<String, Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionEvent {
    pub seq: u64,
    pub ts: Timestamp,
    pub experiment: String,
    pub group: String,
    pub participant: String,
    pub model: String,
    pub action: ActionKind,
    pub payload: Payload,
}

/// An event before the log assigns its sequence number.
#[derive(Debug, Clone, PartialEq)]
pub struct EventDraft {
    pub ts: Timestamp,
    pub experiment: String,
    pub group: String,
    pub participant: String,
    pub model: String,
    pub action: ActionKind,
    pub payload: Payload,
}

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("feature {0} is disabled for this group")]
    FeatureDisabled(FeatureFlag),
    #[error("participant {0} has no assignment in this experiment")]
    UnknownAssignment(String),
    #[error("event group {got} does not match assignment group {expected}")]
    GroupMismatch { expected: String, got: String },
    #[error("event belongs to experiment {got}, not {expected}")]
    WrongExperiment { expected: String, got: String },
    #[error("{action} payload: {message}")]
    Schema { action: ActionKind, message: String },
    #[error("event log i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum ImportError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("reading event log: {0}")]
    Io(#[from] std::io::Error),
}

/// The feature an action depends on, if any.
pub fn required_flag(action: ActionKind, payload: &Payload) -> Option<FeatureFlag> {
    match action {
        ActionKind::S => Some(FeatureFlag::Simulation),
        ActionKind::E => Some(FeatureFlag::LookupEol),
        ActionKind::N => match payload
            .get("provenance")
            .and_then(|p| p.get("kind"))
            .and_then(Value::as_str)
        {
            Some("cloned_from") => Some(FeatureFlag::Cloning),
            Some("exemplar") => Some(FeatureFlag::ExemplarModels),
            _ => None,
        },
        ActionKind::P => payload
            .get("parameter")
            .and_then(Value::as_str)
            .and_then(ParameterName::parse)
            .filter(|p| p.is_advanced())
            .map(|_| FeatureFlag::AdvancedParameters),
        ActionKind::C | ActionKind::R => None,
    }
}

fn check_schema(action: ActionKind, payload: &Payload) -> Result<(), CaptureError> {
    let need = |key: &str| {
        if payload
            .get(key)
            .and_then(Value::as_str)
            .is_some_and(|s| !s.is_empty())
        {
            Ok(())
        } else {
            Err(CaptureError::Schema {
                action,
                message: format!("missing string field {key:?}"),
            })
        }
    };
    match action {
        ActionKind::P => {
            need("component")?;
            need("parameter")
        }
        ActionKind::S => need("batch"),
        ActionKind::E => need("species"),
        ActionKind::C | ActionKind::R => need("edit"),
        ActionKind::N => Ok(()),
    }
}

/// Append-only event log, held in memory and optionally mirrored to a JSONL
/// file.
#[derive(Debug, Default)]
pub struct EventLog {
    events: Vec<ActionEvent>,
    sink: Option<BufWriter<File>>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens (or creates) a JSONL-backed log, loading any existing events.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ImportError> {
        let path = path.as_ref();
        let events = if path.exists() {
            import_jsonl(File::open(path)?)?.events
        } else {
            Vec::new()
        };
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            events,
            sink: Some(BufWriter::new(file)),
        })
    }

    pub fn events(&self) -> &[ActionEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn last_seq(&self) -> u64 {
        self.events.last().map_or(0, |e| e.seq)
    }

    pub fn for_experiment<'a>(
        &'a self,
        experiment: &'a str,
    ) -> impl Iterator<Item = &'a ActionEvent> + 'a {
        self.events
            .iter()
            .filter(move |e| e.experiment == experiment)
    }

    /// Checks the draft against the experiment's assignments and feature
    /// gates, then appends it.
    pub fn record(
        &mut self,
        experiment: &Experiment,
        draft: EventDraft,
    ) -> Result<u64, CaptureError> {
        self.check(experiment, &draft)?;
        let seq = self.last_seq() + 1;
        let event = ActionEvent {
            seq,
            ts: draft.ts,
            experiment: draft.experiment,
            group: draft.group,
            participant: draft.participant,
            model: draft.model,
            action: draft.action,
            payload: draft.payload,
        };
        if let Some(sink) = self.sink.as_mut() {
            serde_json::to_writer(&mut *sink, &event).map_err(std::io::Error::from)?;
            sink.write_all(b"\n")?;
            sink.flush()?;
        }
        self.events.push(event);
        Ok(seq)
    }

    /// Validation half of [`EventLog::record`], without appending.
    pub fn check(&self, experiment: &Experiment, draft: &EventDraft) -> Result<(), CaptureError> {
        if draft.experiment != experiment.id {
            return Err(CaptureError::WrongExperiment {
                expected: experiment.id.clone(),
                got: draft.experiment.clone(),
            });
        }
        let assignment = experiment
            .assignment(&draft.participant)
            .ok_or_else(|| CaptureError::UnknownAssignment(draft.participant.clone()))?;
        if assignment.group_id != draft.group {
            return Err(CaptureError::GroupMismatch {
                expected: assignment.group_id.clone(),
                got: draft.group.clone(),
            });
        }
        check_schema(draft.action, &draft.payload)?;
        if let Some(flag) = required_flag(draft.action, &draft.payload) {
            if !experiment.is_enabled(&draft.group, flag).unwrap_or(false) {
                return Err(CaptureError::FeatureDisabled(flag));
            }
        }
        Ok(())
    }

    pub fn export_jsonl(
        &self,
        experiment: Option<&str>,
        mut out: impl Write,
    ) -> std::io::Result<()> {
        for e in self
            .events
            .iter()
            .filter(|e| experiment.is_none_or(|x| e.experiment == x))
        {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self, experiment: Option<&str>) -> String {
        let mut buf = Vec::new();
        self.export_jsonl(experiment, &mut buf)
            .expect("in-memory write");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn from_events(events: Vec<ActionEvent>) -> Self {
        Self { events, sink: None }
    }
}

/// Parses a JSONL event stream. Blank lines are skipped; any other bad line
/// fails the import with its 1-based line number.
pub fn import_jsonl(input: impl Read) -> Result<EventLog, ImportError> {
    let mut events: Vec<ActionEvent> = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| ImportError::Malformed {
            line: i + 1,
            message,
        };
        let event: ActionEvent =
            serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        if let Some(prev) = events.last() {
            if event.seq <= prev.seq {
                return Err(malformed(format!("seq {} does not increase", event.seq)));
            }
        }
        if event.action == ActionKind::P {
            check_schema(event.action, &event.payload).map_err(|e| malformed(e.to_string()))?;
        }
        events.push(event);
    }
    Ok(EventLog::from_events(events))
}

/// Participant-facing operations, for action derivation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParticipantOp {
    NewModel,
    CloneModel,
    InstantiateExemplar,
    RunBatch,
    SetParameter,
    SetRelationshipRate,
    AddComponent,
    RemoveComponent,
    AddRelationship,
    RemoveRelationship,
    ReplaceModel,
    ApplyTraits,
}

/// Structural edits are Construction until the model's first simulation and
/// Revision afterwards.
pub fn derive_action(op: ParticipantOp, model_simulated: bool) -> ActionKind {
    use ParticipantOp::*;
    match op {
        NewModel | CloneModel | InstantiateExemplar => ActionKind::N,
        RunBatch => ActionKind::S,
        SetParameter | SetRelationshipRate => ActionKind::P,
        ApplyTraits => ActionKind::E,
        AddComponent | RemoveComponent | AddRelationship | RemoveRelationship | ReplaceModel => {
            if model_simulated {
                ActionKind::R
            } else {
                ActionKind::C
            }
        }
    }
}

/// Payload builders for each action.
pub mod payload {
    use super::*;

    fn obj(v: Value) -> Payload {
        match v {
            Value::Object(m) => m,
            _ => unreachable!("payload literal is an object"),
        }
    }

    pub fn new_model(provenance: &Provenance) -> Payload {
        obj(json!({ "provenance": provenance }))
    }

    pub fn parameter(component: &str, parameter: &str, old: f64, new: f64) -> Payload {
        obj(json!({ "component": component, "parameter": parameter, "old": old, "new": new }))
    }

    pub fn structural(edit: &str, target: &str) -> Payload {
        obj(json!({ "edit": edit, "target": target }))
    }

    pub fn simulation(batch: &str, runs: u32) -> Payload {
        obj(json!({ "batch": batch, "runs": runs }))
    }

    pub fn lookup(species: &str) -> Payload {
        obj(json!({ "species": species }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub participant: String,
    pub group: String,
    pub events: Vec<ActionEvent>,
    pub start: Timestamp,
    pub end: Timestamp,
}

impl Session {
    pub fn duration(&self) -> Duration {
        self.end - self.start
    }

    pub fn actions(&self) -> Vec<ActionKind> {
        self.events.iter().map(|e| e.action).collect()
    }
}

pub fn session_gap() -> Duration {
    Duration::minutes(30)
}

/// Splits each participant's events wherever consecutive events are more
/// than `gap` apart.
pub fn sessionize<'a>(
    events: impl IntoIterator<Item = &'a ActionEvent>,
    gap: Duration,
) -> Vec<Session> {
    let mut sorted: Vec<&ActionEvent> = events.into_iter().collect();
    sorted.sort_by(|a, b| (&a.participant, a.ts, a.seq).cmp(&(&b.participant, b.ts, b.seq)));
    let mut sessions: Vec<Session> = Vec::new();
    for e in sorted {
        match sessions.last_mut() {
            Some(s) if s.participant == e.participant && e.ts - s.end <= gap => {
                s.end = e.ts;
                s.events.push(e.clone());
            }
            _ => sessions.push(Session {
                id: format!(
                    "{}@{}",
                    e.participant,
                    e.ts.to_rfc3339_opts(chrono::SecondsFormat::AutoSi, true)
                ),
                participant: e.participant.clone(),
                group: e.group.clone(),
                events: vec![e.clone()],
                start: e.ts,
                end: e.ts,
            }),
        }
    }
    sessions
}
