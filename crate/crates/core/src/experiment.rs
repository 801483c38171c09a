//! Two-group experiments: per-group feature flags, assignment, phases.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Timestamp;
use crate::sim::rng::{fold_key, hash_str};

/// Documents larger than this are rejected.
pub const MAX_DOCUMENT_BYTES: usize = 20 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureFlag {
    AdvancedParameters,
    Cloning,
    ExemplarModels,
    LookupEol,
    Simulation,
}

impl FeatureFlag {
    pub const ALL: [FeatureFlag; 5] = [
        FeatureFlag::AdvancedParameters,
        FeatureFlag::Cloning,
        FeatureFlag::ExemplarModels,
        FeatureFlag::LookupEol,
        FeatureFlag::Simulation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureFlag::AdvancedParameters => "advanced_parameters",
            FeatureFlag::Cloning => "cloning",
            FeatureFlag::ExemplarModels => "exemplar_models",
            FeatureFlag::LookupEol => "lookup_eol",
            FeatureFlag::Simulation => "simulation",
        }
    }
}

impl fmt::Display for FeatureFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupConfig {
    pub group_id: String,
    pub flags: BTreeMap<FeatureFlag, bool>,
}

impl GroupConfig {
    pub fn all_enabled(group_id: impl Into<String>) -> Self {
        Self {
            group_id: group_id.into(),
            flags: FeatureFlag::ALL.into_iter().map(|f| (f, true)).collect(),
        }
    }

    pub fn with(mut self, flag: FeatureFlag, enabled: bool) -> Self {
        self.flags.insert(flag, enabled);
        self
    }

    pub fn enabled(&self, flag: FeatureFlag) -> bool {
        self.flags.get(&flag).copied().unwrap_or(false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentMode {
    Manual,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentStatus {
    Draft,
    Active,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase {
    pub name: String,
    pub start: Timestamp,
    pub end: Timestamp,
}

impl Phase {
    /// Half-open window `[start, end)`.
    pub fn contains(&self, ts: Timestamp) -> bool {
        self.start <= ts && ts < self.end
    }
}

/// Opaque uploaded document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub media_type: String,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentRecord {
    pub participant: String,
    pub group_id: String,
    pub joined_at: Timestamp,
}

/// Researcher input for [`Experiment::create`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentSpec {
    pub name: String,
    pub groups: Vec<GroupConfig>,
    pub mode: Option<AssignmentMode>,
    pub seed: u64,
    pub welcome_doc: Option<Document>,
    pub exit_doc: Option<Document>,
    pub phases: Vec<Phase>,
    /// Create in `draft` instead of `active`.
    pub draft: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub id: String,
    pub name: String,
    pub mode: AssignmentMode,
    pub seed: u64,
    pub groups: Vec<GroupConfig>,
    pub phases: Vec<Phase>,
    pub status: ExperimentStatus,
    pub created_at: Timestamp,
    #[serde(with = "assignment_list")]
    pub assignments: BTreeMap<String, AssignmentRecord>,
    #[serde(skip)]
    pub welcome_doc: Option<Document>,
    #[serde(skip)]
    pub exit_doc: Option<Document>,
}

mod assignment_list {
    use super::AssignmentRecord;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<String, AssignmentRecord>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        map.values().collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<String, AssignmentRecord>, D::Error> {
        let list = Vec::<AssignmentRecord>::deserialize(d)?;
        Ok(list
            .into_iter()
            .map(|a| (a.participant.clone(), a))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinLink {
    pub group_id: Option<String>,
    pub url: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExperimentError {
    #[error("an experiment needs exactly two groups, got {0}")]
    GroupCount(usize),
    #[error("group {group} is missing flag {flag}")]
    MissingFlag { group: String, flag: FeatureFlag },
    #[error("group ids must be non-empty and distinct")]
    BadGroupIds,
    #[error("experiment name must not be empty")]
    EmptyName,
    #[error("assignment mode is required")]
    MissingMode,
    #[error("phase {0:?} ends before it starts")]
    EmptyPhase(String),
    #[error("phase {later:?} overlaps or precedes phase {earlier:?}")]
    OverlappingPhases { earlier: String, later: String },
    #[error("{0} document exceeds the 20 MiB limit")]
    DocumentTooLarge(&'static str),
    #[error("experiment is {0:?}, not active")]
    NotActive(ExperimentStatus),
    #[error("experiment is already closed")]
    AlreadyClosed,
    #[error("unknown group {0}")]
    UnknownGroup(String),
    #[error("manual assignment requires a group parameter")]
    MissingGroupParam,
}

impl Experiment {
    pub fn create(
        id: impl Into<String>,
        spec: ExperimentSpec,
        now: Timestamp,
    ) -> Result<Self, ExperimentError> {
        if spec.name.trim().is_empty() {
            return Err(ExperimentError::EmptyName);
        }
        if spec.groups.len() != 2 {
            return Err(ExperimentError::GroupCount(spec.groups.len()));
        }
        let [a, b] = [&spec.groups[0], &spec.groups[1]];
        if a.group_id.is_empty() || b.group_id.is_empty() || a.group_id == b.group_id {
            return Err(ExperimentError::BadGroupIds);
        }
        for g in &spec.groups {
            if let Some(flag) = FeatureFlag::ALL
                .into_iter()
                .find(|f| !g.flags.contains_key(f))
            {
                return Err(ExperimentError::MissingFlag {
                    group: g.group_id.clone(),
                    flag,
                });
            }
        }
        let mode = spec.mode.ok_or(ExperimentError::MissingMode)?;
        check_phases(&spec.phases)?;
        for (label, doc) in [("welcome", &spec.welcome_doc), ("exit", &spec.exit_doc)] {
            if doc
                .as_ref()
                .is_some_and(|d| d.data.len() > MAX_DOCUMENT_BYTES)
            {
                return Err(ExperimentError::DocumentTooLarge(label));
            }
        }
        Ok(Experiment {
            id: id.into(),
            name: spec.name,
            mode,
            seed: spec.seed,
            groups: spec.groups,
            phases: spec.phases,
            status: if spec.draft {
                ExperimentStatus::Draft
            } else {
                ExperimentStatus::Active
            },
            created_at: now,
            assignments: BTreeMap::new(),
            welcome_doc: spec.welcome_doc,
            exit_doc: spec.exit_doc,
        })
    }

    pub fn group(&self, group_id: &str) -> Result<&GroupConfig, ExperimentError> {
        self.groups
            .iter()
            .find(|g| g.group_id == group_id)
            .ok_or_else(|| ExperimentError::UnknownGroup(group_id.to_string()))
    }

    pub fn is_enabled(&self, group_id: &str, flag: FeatureFlag) -> Result<bool, ExperimentError> {
        Ok(self.group(group_id)?.enabled(flag))
    }

    pub fn activate(&mut self) -> Result<(), ExperimentError> {
        match self.status {
            ExperimentStatus::Draft => {
                self.status = ExperimentStatus::Active;
                Ok(())
            }
            other => Err(ExperimentError::NotActive(other)),
        }
    }

    fn require_active(&self) -> Result<(), ExperimentError> {
        match self.status {
            ExperimentStatus::Active => Ok(()),
            other => Err(ExperimentError::NotActive(other)),
        }
    }

    /// Participant entry links under `base_url` (no trailing slash).
    pub fn join_links(&self, base_url: &str) -> Result<Vec<JoinLink>, ExperimentError> {
        self.require_active()?;
        let base = base_url.trim_end_matches('/');
        Ok(match self.mode {
            AssignmentMode::Manual => self
                .groups
                .iter()
                .map(|g| JoinLink {
                    group_id: Some(g.group_id.clone()),
                    url: format!("{base}/researcher/join-experiment?group={}", g.group_id),
                })
                .collect(),
            AssignmentMode::Random => vec![JoinLink {
                group_id: None,
                url: format!("{base}/researcher/join-experiment?experiment={}", self.id),
            }],
        })
    }

    /// Group a random-mode participant lands in; a pure function of the
    /// experiment seed and participant id.
    pub fn random_group(&self, participant: &str) -> &GroupConfig {
        let bit = fold_key(&[self.seed, hash_str(participant)]) & 1;
        &self.groups[bit as usize]
    }

    /// First join creates the assignment; later joins return it unchanged.
    pub fn join(
        &mut self,
        participant: &str,
        group_param: Option<&str>,
        now: Timestamp,
    ) -> Result<AssignmentRecord, ExperimentError> {
        self.require_active()?;
        if let Some(g) = group_param {
            self.group(g)?;
        }
        if let Some(existing) = self.assignments.get(participant) {
            return Ok(existing.clone());
        }
        let group_id = match self.mode {
            AssignmentMode::Manual => group_param
                .ok_or(ExperimentError::MissingGroupParam)?
                .to_string(),
            AssignmentMode::Random => self.random_group(participant).group_id.clone(),
        };
        let record = AssignmentRecord {
            participant: participant.to_string(),
            group_id,
            joined_at: now,
        };
        self.assignments
            .insert(participant.to_string(), record.clone());
        Ok(record)
    }

    pub fn assignment(&self, participant: &str) -> Option<&AssignmentRecord> {
        self.assignments.get(participant)
    }

    pub fn close(&mut self) -> Result<(), ExperimentError> {
        match self.status {
            ExperimentStatus::Active => {
                self.status = ExperimentStatus::Closed;
                Ok(())
            }
            ExperimentStatus::Closed => Err(ExperimentError::AlreadyClosed),
            other => Err(ExperimentError::NotActive(other)),
        }
    }

    pub fn phase_at(&self, ts: Timestamp) -> Option<&Phase> {
        self.phases.iter().find(|p| p.contains(ts))
    }

    /// `experiment.json` rendering.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("experiment serializes")
    }
}

fn check_phases(phases: &[Phase]) -> Result<(), ExperimentError> {
    for p in phases {
        if p.end <= p.start {
            return Err(ExperimentError::EmptyPhase(p.name.clone()));
        }
    }
    for w in phases.windows(2) {
        if w[1].start < w[0].end {
            return Err(ExperimentError::OverlappingPhases {
                earlier: w[0].name.clone(),
                later: w[1].name.clone(),
            });
        }
    }
    Ok(())
}
