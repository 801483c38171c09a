//! Request and response bodies shared by the service and its clients.

use std::collections::BTreeMap;

use ablab_core::analytics::AnalyticsReport;
use ablab_core::experiment::{AssignmentMode, Experiment, FeatureFlag, JoinLink, Phase};
use ablab_core::model::{ComponentKind, Model, ParameterName, RelationKind};
use ablab_core::sim::{BatchAggregate, RunSeries, SimConfig};
use ablab_core::traits::TraitChange;
use serde::{Deserialize, Serialize};

/// Document upload: media type plus base64 (standard alphabet) content.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentUpload {
    pub media_type: String,
    pub data_base64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    /// Assigned by the service when absent.
    #[serde(default)]
    pub group_id: Option<String>,
    pub flags: BTreeMap<FeatureFlag, bool>,
}

impl GroupSpec {
    pub fn all(enabled: bool) -> Self {
        Self {
            group_id: None,
            flags: FeatureFlag::ALL.into_iter().map(|f| (f, enabled)).collect(),
        }
    }

    pub fn with(mut self, flag: FeatureFlag, enabled: bool) -> Self {
        self.flags.insert(flag, enabled);
        self
    }

    pub fn with_id(mut self, group_id: impl Into<String>) -> Self {
        self.group_id = Some(group_id.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateExperiment {
    pub name: String,
    pub mode: Option<AssignmentMode>,
    pub groups: Vec<GroupSpec>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub phases: Vec<Phase>,
    #[serde(default)]
    pub welcome_doc: Option<DocumentUpload>,
    #[serde(default)]
    pub exit_doc: Option<DocumentUpload>,
    #[serde(default)]
    pub draft: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentView {
    pub experiment: Experiment,
    pub links: Vec<JoinLink>,
    pub welcome_doc: bool,
    pub exit_doc: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinQuery {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub participant: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinResponse {
    pub token: String,
    pub experiment: String,
    pub group: String,
    pub participant: String,
    pub flags: BTreeMap<FeatureFlag, bool>,
    /// Path of the welcome document, when one was uploaded.
    pub welcome_doc: Option<String>,
    pub exit_doc: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NewModel {
    #[serde(default)]
    pub name: Option<String>,
    /// Start from this exemplar (by name).
    #[serde(default)]
    pub exemplar: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CloneRequest {
    #[serde(default)]
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetParameter {
    /// Component id or name.
    pub component: String,
    pub parameter: ParameterName,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AddComponent {
    pub name: String,
    pub kind: ComponentKind,
    #[serde(default)]
    pub params: BTreeMap<ParameterName, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AddRelationship {
    /// Component ids or names.
    pub source: String,
    pub target: String,
    pub kind: RelationKind,
    #[serde(default)]
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetRate {
    pub rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimulateRequest {
    /// Missing fields take their defaults; a missing seed takes the
    /// service's default seed.
    #[serde(default)]
    pub config: Option<serde_json::Map<String, serde_json::Value>>,
    /// Free-form note stored on the S event, e.g. the hypothesis under test.
    #[serde(default)]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchStatus {
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateResponse {
    pub batch: String,
    pub status: BatchStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchView {
    pub batch: String,
    pub model: String,
    pub status: BatchStatus,
    pub config: SimConfig,
    #[serde(default)]
    pub runs: Vec<RunSeries>,
    #[serde(default)]
    pub aggregate: Option<BatchAggregate>,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRequest {
    pub baseline: String,
    pub treatment: String,
    /// Component id, or name resolved against the baseline model.
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplyTraitsRequest {
    /// Component id or name.
    pub component: String,
    /// Species to look up; defaults to the component's name.
    #[serde(default)]
    pub species: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplyTraitsResponse {
    pub model: Model,
    pub changes: Vec<TraitChange>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Whoami {
    pub role: String,
    pub experiment: Option<String>,
    pub group: Option<String>,
    pub participant: Option<String>,
    pub flags: BTreeMap<FeatureFlag, bool>,
}

/// Analytics as returned by the researcher route.
pub type AnalyticsResponse = AnalyticsReport;
