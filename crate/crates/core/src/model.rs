//! Conceptual ecology models: typed components, their parameters, and the
//! causal relationships between them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParameterName {
    Lifespan,
    BodyMass,
    StartingPopulation,
    OffspringCount,
    ReproductiveMaturity,
    ReproductiveInterval,
    MinimumPopulation,
    PhotosynthesisRate,
    AssimilationEfficiency,
    MoveVelocity,
    RespiratoryRate,
    MoveDirection,
    CarbonBiomass,
    Amount,
    MinimumAmount,
    GrowthRate,
    InteractionRate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParameterCategory {
    BioticBasic,
    BioticAdvanced,
    Abiotic,
    Relationship,
}

/// Value domain a parameter is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Domain {
    Count,
    Months,
    NonNegative,
    UnitInterval,
    Inert,
    Growth,
}

impl ParameterName {
    pub const ALL: [ParameterName; 17] = [
        Self::Lifespan,
        Self::BodyMass,
        Self::StartingPopulation,
        Self::OffspringCount,
        Self::ReproductiveMaturity,
        Self::ReproductiveInterval,
        Self::MinimumPopulation,
        Self::PhotosynthesisRate,
        Self::AssimilationEfficiency,
        Self::MoveVelocity,
        Self::RespiratoryRate,
        Self::MoveDirection,
        Self::CarbonBiomass,
        Self::Amount,
        Self::MinimumAmount,
        Self::GrowthRate,
        Self::InteractionRate,
    ];

    pub fn category(self) -> ParameterCategory {
        use ParameterName::*;
        match self {
            Lifespan | BodyMass | StartingPopulation | OffspringCount | ReproductiveMaturity
            | ReproductiveInterval | MinimumPopulation => ParameterCategory::BioticBasic,
            PhotosynthesisRate
            | AssimilationEfficiency
            | MoveVelocity
            | RespiratoryRate
            | MoveDirection
            | CarbonBiomass => ParameterCategory::BioticAdvanced,
            Amount | MinimumAmount | GrowthRate => ParameterCategory::Abiotic,
            InteractionRate => ParameterCategory::Relationship,
        }
    }

    pub fn is_advanced(self) -> bool {
        self.category() == ParameterCategory::BioticAdvanced
    }

    /// Whether a component of `kind` may carry this parameter.
    pub fn accepts(self, kind: ComponentKind) -> bool {
        matches!(
            (self.category(), kind),
            (ParameterCategory::BioticBasic, ComponentKind::Biotic)
                | (ParameterCategory::BioticAdvanced, ComponentKind::Biotic)
                | (ParameterCategory::Abiotic, ComponentKind::Abiotic)
        )
    }

    pub fn default_value(self) -> f64 {
        use ParameterName::*;
        match self {
            Lifespan => 24.0,
            BodyMass => 1.0,
            StartingPopulation => 100.0,
            OffspringCount => 2.0,
            ReproductiveMaturity => 6.0,
            ReproductiveInterval => 6.0,
            MinimumPopulation => 0.0,
            PhotosynthesisRate => 0.0,
            AssimilationEfficiency => 1.0,
            MoveVelocity | RespiratoryRate | MoveDirection | CarbonBiomass => 0.0,
            Amount => 1000.0,
            MinimumAmount => 0.0,
            GrowthRate => 0.0,
            InteractionRate => 0.1,
        }
    }

    fn domain(self) -> Domain {
        use ParameterName::*;
        match self {
            StartingPopulation | OffspringCount | MinimumPopulation => Domain::Count,
            Lifespan | ReproductiveMaturity | ReproductiveInterval => Domain::Months,
            BodyMass | Amount | MinimumAmount => Domain::NonNegative,
            PhotosynthesisRate | AssimilationEfficiency | InteractionRate => Domain::UnitInterval,
            MoveVelocity | RespiratoryRate | MoveDirection | CarbonBiomass => Domain::Inert,
            GrowthRate => Domain::Growth,
        }
    }

    /// Range check. The error string names the violated bound.
    pub fn check(self, value: f64) -> Result<(), String> {
        if !value.is_finite() {
            return Err("must be finite".into());
        }
        let integral = value.fract() == 0.0;
        match self.domain() {
            Domain::Count if !integral || value < 0.0 => {
                Err("must be a non-negative integer".into())
            }
            Domain::Count if value > MAX_COUNT => Err(format!("must not exceed {MAX_COUNT}")),
            Domain::Months if !integral || value < 1.0 => {
                Err("must be an integer number of months >= 1".into())
            }
            Domain::NonNegative if value < 0.0 => Err("must be >= 0".into()),
            Domain::UnitInterval if !(0.0..=1.0).contains(&value) => {
                Err("must lie in [0, 1]".into())
            }
            Domain::Growth if !(-1.0..=10.0).contains(&value) => Err("must lie in [-1, 10]".into()),
            _ => Ok(()),
        }
    }

    /// Snake-case wire name, e.g. `offspring_count`.
    pub fn as_str(self) -> &'static str {
        use ParameterName::*;
        match self {
            Lifespan => "lifespan",
            BodyMass => "body_mass",
            StartingPopulation => "starting_population",
            OffspringCount => "offspring_count",
            ReproductiveMaturity => "reproductive_maturity",
            ReproductiveInterval => "reproductive_interval",
            MinimumPopulation => "minimum_population",
            PhotosynthesisRate => "photosynthesis_rate",
            AssimilationEfficiency => "assimilation_efficiency",
            MoveVelocity => "move_velocity",
            RespiratoryRate => "respiratory_rate",
            MoveDirection => "move_direction",
            CarbonBiomass => "carbon_biomass",
            Amount => "amount",
            MinimumAmount => "minimum_amount",
            GrowthRate => "growth_rate",
            InteractionRate => "interaction_rate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.as_str() == s)
    }

    pub fn for_kind(kind: ComponentKind) -> impl Iterator<Item = ParameterName> {
        Self::ALL.into_iter().filter(move |p| p.accepts(kind))
    }
}

impl fmt::Display for ParameterName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Populations and amounts are clamped here by the simulator as well.
pub const MAX_COUNT: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    Biotic,
    Abiotic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    Consumes,
    Produces,
    Destroys,
}

impl RelationKind {
    /// Capitalized label used when a rate change is reported as a parameter
    /// change, e.g. `Consumes`.
    pub fn label(self) -> &'static str {
        match self {
            RelationKind::Consumes => "Consumes",
            RelationKind::Produces => "Produces",
            RelationKind::Destroys => "Destroys",
        }
    }

    /// Parameter name for this relation's rate, e.g. `consumption_rate`.
    pub fn rate_name(self) -> &'static str {
        match self {
            RelationKind::Consumes => "consumption_rate",
            RelationKind::Produces => "production_rate",
            RelationKind::Destroys => "destruction_rate",
        }
    }

    pub fn allows(self, source: ComponentKind, target: ComponentKind) -> bool {
        use ComponentKind::*;
        match self {
            RelationKind::Consumes => source == Biotic,
            RelationKind::Produces => source == Biotic && target == Abiotic,
            RelationKind::Destroys => source == Abiotic && target == Biotic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub id: String,
    pub name: String,
    pub kind: ComponentKind,
    pub params: BTreeMap<ParameterName, f64>,
}

impl Component {
    pub fn param(&self, name: ParameterName) -> f64 {
        self.params
            .get(&name)
            .copied()
            .unwrap_or_else(|| name.default_value())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relationship {
    pub id: String,
    pub source: String,
    pub target: String,
    pub kind: RelationKind,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Fresh,
    ClonedFrom { model: String },
    Exemplar { name: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub id: String,
    pub name: String,
    pub owner: String,
    pub provenance: Provenance,
    pub components: Vec<Component>,
    pub relationships: Vec<Relationship>,
    pub created_at: Timestamp,
    pub updated_at: Timestamp,
}

/// Old and new value of a single parameter edit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterChange {
    pub old: f64,
    pub new: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    EmptyModelName,
    EmptyComponentName {
        component: String,
    },
    DuplicateComponentId {
        component: String,
    },
    DuplicateComponentName {
        name: String,
    },
    WrongCategory {
        component: String,
        parameter: ParameterName,
    },
    MissingParameter {
        component: String,
        parameter: ParameterName,
    },
    OutOfRange {
        component: String,
        parameter: ParameterName,
        value: f64,
    },
    DuplicateRelationshipId {
        relationship: String,
    },
    DanglingEndpoint {
        relationship: String,
        endpoint: String,
    },
    RelationTyping {
        relationship: String,
        kind: RelationKind,
    },
    SelfLoop {
        relationship: String,
    },
    DuplicateRelationship {
        relationship: String,
    },
    RateOutOfRange {
        relationship: String,
        value: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            EmptyModelName => write!(f, "model name is empty"),
            EmptyComponentName { component } => {
                write!(f, "component {component} has an empty name")
            }
            DuplicateComponentId { component } => {
                write!(f, "component id {component} is used twice")
            }
            DuplicateComponentName { name } => write!(f, "component name {name:?} is used twice"),
            WrongCategory {
                component,
                parameter,
            } => {
                write!(
                    f,
                    "component {component} cannot carry parameter {parameter}"
                )
            }
            MissingParameter {
                component,
                parameter,
            } => {
                write!(f, "component {component} is missing parameter {parameter}")
            }
            OutOfRange {
                component,
                parameter,
                value,
            } => {
                write!(
                    f,
                    "component {component}: {parameter}={value} is out of range"
                )
            }
            DuplicateRelationshipId { relationship } => {
                write!(f, "relationship id {relationship} is used twice")
            }
            DanglingEndpoint {
                relationship,
                endpoint,
            } => {
                write!(
                    f,
                    "relationship {relationship} references unknown component {endpoint}"
                )
            }
            RelationTyping { relationship, kind } => {
                write!(
                    f,
                    "relationship {relationship} violates {kind:?} endpoint typing"
                )
            }
            SelfLoop { relationship } => write!(f, "relationship {relationship} is a self loop"),
            DuplicateRelationship { relationship } => {
                write!(
                    f,
                    "relationship {relationship} duplicates an existing (source, target, kind)"
                )
            }
            RateOutOfRange {
                relationship,
                value,
            } => {
                write!(
                    f,
                    "relationship {relationship}: rate {value} outside [0, 1]"
                )
            }
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("name must not be empty")]
    EmptyName,
    #[error("component name {0:?} already exists in this model")]
    DuplicateComponent(String),
    #[error("parameter {param} is not valid for a {kind:?} component")]
    WrongCategory {
        param: ParameterName,
        kind: ComponentKind,
    },
    #[error("{param}={value}: {reason}")]
    OutOfRange {
        param: ParameterName,
        value: f64,
        reason: String,
    },
    #[error("unknown component {0}")]
    UnknownComponent(String),
    #[error("unknown relationship {0}")]
    UnknownRelationship(String),
    #[error("{kind:?} cannot link a {source_kind:?} source to a {target_kind:?} target")]
    RelationTyping {
        kind: RelationKind,
        source_kind: ComponentKind,
        target_kind: ComponentKind,
    },
    #[error("a relationship cannot link a component to itself")]
    SelfLoop,
    #[error("{kind:?} relationship from {from} to {to} already exists")]
    DuplicateRelationship {
        from: String,
        to: String,
        kind: RelationKind,
    },
    #[error("model is invalid: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("model document: {0}")]
    Format(String),
}

impl Model {
    /// Empty model with a random id.
    pub fn new(name: &str, owner: &str, now: Timestamp) -> Result<Self, ModelError> {
        Self::with_id(uuid::Uuid::new_v4().to_string(), name, owner, now)
    }

    pub fn with_id(
        id: impl Into<String>,
        name: &str,
        owner: &str,
        now: Timestamp,
    ) -> Result<Self, ModelError> {
        if name.trim().is_empty() {
            return Err(ModelError::EmptyName);
        }
        Ok(Model {
            id: id.into(),
            name: name.to_string(),
            owner: owner.to_string(),
            provenance: Provenance::Fresh,
            components: Vec::new(),
            relationships: Vec::new(),
            created_at: now,
            updated_at: now,
        })
    }

    pub fn component(&self, id: &str) -> Option<&Component> {
        self.components.iter().find(|c| c.id == id)
    }

    pub fn component_by_name(&self, name: &str) -> Option<&Component> {
        self.components.iter().find(|c| c.name == name)
    }

    pub fn relationship(&self, id: &str) -> Option<&Relationship> {
        self.relationships.iter().find(|r| r.id == id)
    }

    fn next_local_id(&self, tag: char) -> String {
        let prefix = format!("{}:{}", self.id, tag);
        let next = self
            .components
            .iter()
            .map(|c| c.id.as_str())
            .chain(self.relationships.iter().map(|r| r.id.as_str()))
            .filter_map(|id| id.strip_prefix(&prefix)?.parse::<u32>().ok())
            .max()
            .map_or(1, |n| n + 1);
        format!("{prefix}{next:03}")
    }

    /// Adds a component, defaulting every parameter the caller leaves unset.
    /// Returns the new component id.
    pub fn add_component(
        &mut self,
        name: &str,
        kind: ComponentKind,
        params: &BTreeMap<ParameterName, f64>,
        now: Timestamp,
    ) -> Result<String, ModelError> {
        if name.trim().is_empty() {
            return Err(ModelError::EmptyName);
        }
        if self.component_by_name(name).is_some() {
            return Err(ModelError::DuplicateComponent(name.to_string()));
        }
        for (&param, &value) in params {
            check_param(param, kind, value)?;
        }
        let mut full: BTreeMap<_, _> = ParameterName::for_kind(kind)
            .map(|p| (p, p.default_value()))
            .collect();
        full.extend(params.iter().map(|(k, v)| (*k, *v)));
        let id = self.next_local_id('c');
        self.components.push(Component {
            id: id.clone(),
            name: name.to_string(),
            kind,
            params: full,
        });
        self.components.sort_by(|a, b| a.id.cmp(&b.id));
        self.updated_at = now;
        Ok(id)
    }

    /// Removes a component together with every relationship touching it.
    pub fn remove_component(
        &mut self,
        id: &str,
        now: Timestamp,
    ) -> Result<(Component, Vec<Relationship>), ModelError> {
        let idx = self
            .components
            .iter()
            .position(|c| c.id == id)
            .ok_or_else(|| ModelError::UnknownComponent(id.to_string()))?;
        let removed = self.components.remove(idx);
        let (gone, kept): (Vec<_>, Vec<_>) = std::mem::take(&mut self.relationships)
            .into_iter()
            .partition(|r| r.source == id || r.target == id);
        self.relationships = kept;
        self.updated_at = now;
        Ok((removed, gone))
    }

    pub fn set_parameter(
        &mut self,
        component: &str,
        param: ParameterName,
        value: f64,
        now: Timestamp,
    ) -> Result<ParameterChange, ModelError> {
        let comp = self
            .components
            .iter_mut()
            .find(|c| c.id == component)
            .ok_or_else(|| ModelError::UnknownComponent(component.to_string()))?;
        check_param(param, comp.kind, value)?;
        let old = comp
            .params
            .insert(param, value)
            .unwrap_or(param.default_value());
        self.updated_at = now;
        Ok(ParameterChange { old, new: value })
    }

    /// Adds a typed relationship; `rate` defaults to the interaction-rate default.
    pub fn add_relationship(
        &mut self,
        source: &str,
        target: &str,
        kind: RelationKind,
        rate: Option<f64>,
        now: Timestamp,
    ) -> Result<String, ModelError> {
        let src = self
            .component(source)
            .ok_or_else(|| ModelError::UnknownComponent(source.to_string()))?;
        let dst = self
            .component(target)
            .ok_or_else(|| ModelError::UnknownComponent(target.to_string()))?;
        if source == target {
            return Err(ModelError::SelfLoop);
        }
        if !kind.allows(src.kind, dst.kind) {
            return Err(ModelError::RelationTyping {
                kind,
                source_kind: src.kind,
                target_kind: dst.kind,
            });
        }
        if self
            .relationships
            .iter()
            .any(|r| r.source == source && r.target == target && r.kind == kind)
        {
            return Err(ModelError::DuplicateRelationship {
                from: source.to_string(),
                to: target.to_string(),
                kind,
            });
        }
        let rate = rate.unwrap_or(ParameterName::InteractionRate.default_value());
        ParameterName::InteractionRate
            .check(rate)
            .map_err(|reason| ModelError::OutOfRange {
                param: ParameterName::InteractionRate,
                value: rate,
                reason,
            })?;
        let id = self.next_local_id('r');
        self.relationships.push(Relationship {
            id: id.clone(),
            source: source.to_string(),
            target: target.to_string(),
            kind,
            rate,
        });
        self.relationships.sort_by(|a, b| a.id.cmp(&b.id));
        self.updated_at = now;
        Ok(id)
    }

    pub fn remove_relationship(
        &mut self,
        id: &str,
        now: Timestamp,
    ) -> Result<Relationship, ModelError> {
        let idx = self
            .relationships
            .iter()
            .position(|r| r.id == id)
            .ok_or_else(|| ModelError::UnknownRelationship(id.to_string()))?;
        self.updated_at = now;
        Ok(self.relationships.remove(idx))
    }

    pub fn set_relationship_rate(
        &mut self,
        id: &str,
        rate: f64,
        now: Timestamp,
    ) -> Result<ParameterChange, ModelError> {
        ParameterName::InteractionRate
            .check(rate)
            .map_err(|reason| ModelError::OutOfRange {
                param: ParameterName::InteractionRate,
                value: rate,
                reason,
            })?;
        let rel = self
            .relationships
            .iter_mut()
            .find(|r| r.id == id)
            .ok_or_else(|| ModelError::UnknownRelationship(id.to_string()))?;
        let old = std::mem::replace(&mut rel.rate, rate);
        self.updated_at = now;
        Ok(ParameterChange { old, new: rate })
    }

    /// Deep copy under a new id and owner; every component and relationship id
    /// is re-issued and provenance points at `self`.
    pub fn clone_model(&self, new_id: impl Into<String>, new_owner: &str, now: Timestamp) -> Model {
        let new_id = new_id.into();
        let mut remap = BTreeMap::new();
        let components = self
            .components
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let id = format!("{new_id}:c{:03}", i + 1);
                remap.insert(c.id.clone(), id.clone());
                Component { id, ..c.clone() }
            })
            .collect();
        let relationships = self
            .relationships
            .iter()
            .enumerate()
            .map(|(i, r)| Relationship {
                id: format!("{new_id}:r{:03}", i + 1),
                source: remap
                    .get(&r.source)
                    .cloned()
                    .unwrap_or_else(|| r.source.clone()),
                target: remap
                    .get(&r.target)
                    .cloned()
                    .unwrap_or_else(|| r.target.clone()),
                ..r.clone()
            })
            .collect();
        let mut copy = Model {
            id: new_id,
            name: self.name.clone(),
            owner: new_owner.to_string(),
            provenance: Provenance::ClonedFrom {
                model: self.id.clone(),
            },
            components,
            relationships,
            created_at: now,
            updated_at: now,
        };
        copy.canonicalize();
        copy
    }

    /// Every invariant violation, in a deterministic order. Empty iff valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.name.trim().is_empty() {
            out.push(Violation::EmptyModelName);
        }
        let mut ids = BTreeSet::new();
        let mut names = BTreeSet::new();
        for c in &self.components {
            if !ids.insert(c.id.as_str()) {
                out.push(Violation::DuplicateComponentId {
                    component: c.id.clone(),
                });
            }
            if c.name.trim().is_empty() {
                out.push(Violation::EmptyComponentName {
                    component: c.id.clone(),
                });
            } else if !names.insert(c.name.as_str()) {
                out.push(Violation::DuplicateComponentName {
                    name: c.name.clone(),
                });
            }
            for (&p, &v) in &c.params {
                if !p.accepts(c.kind) {
                    out.push(Violation::WrongCategory {
                        component: c.id.clone(),
                        parameter: p,
                    });
                } else if p.check(v).is_err() {
                    out.push(Violation::OutOfRange {
                        component: c.id.clone(),
                        parameter: p,
                        value: v,
                    });
                }
            }
            let required: &[ParameterName] = match c.kind {
                ComponentKind::Biotic => &ParameterName::ALL[..7],
                ComponentKind::Abiotic => &ParameterName::ALL[13..16],
            };
            for &p in required {
                if !c.params.contains_key(&p) {
                    out.push(Violation::MissingParameter {
                        component: c.id.clone(),
                        parameter: p,
                    });
                }
            }
        }
        let mut rel_ids = BTreeSet::new();
        let mut triples = BTreeSet::new();
        for r in &self.relationships {
            if !rel_ids.insert(r.id.as_str()) {
                out.push(Violation::DuplicateRelationshipId {
                    relationship: r.id.clone(),
                });
            }
            let src = self.component(&r.source);
            let dst = self.component(&r.target);
            for (endpoint, found) in [(&r.source, src.is_some()), (&r.target, dst.is_some())] {
                if !found {
                    out.push(Violation::DanglingEndpoint {
                        relationship: r.id.clone(),
                        endpoint: endpoint.clone(),
                    });
                }
            }
            if r.source == r.target {
                out.push(Violation::SelfLoop {
                    relationship: r.id.clone(),
                });
            }
            if let (Some(s), Some(t)) = (src, dst) {
                if !r.kind.allows(s.kind, t.kind) {
                    out.push(Violation::RelationTyping {
                        relationship: r.id.clone(),
                        kind: r.kind,
                    });
                }
            }
            if !triples.insert((r.source.as_str(), r.target.as_str(), r.kind)) {
                out.push(Violation::DuplicateRelationship {
                    relationship: r.id.clone(),
                });
            }
            if ParameterName::InteractionRate.check(r.rate).is_err() {
                out.push(Violation::RateOutOfRange {
                    relationship: r.id.clone(),
                    value: r.rate,
                });
            }
        }
        out
    }

    /// Orders components and relationships by id.
    pub fn canonicalize(&mut self) {
        self.components.sort_by(|a, b| a.id.cmp(&b.id));
        self.relationships.sort_by(|a, b| a.id.cmp(&b.id));
    }

    /// Canonical model file rendering.
    pub fn to_json(&self) -> String {
        let mut m = self.clone();
        m.canonicalize();
        serde_json::to_string_pretty(&m).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Model, ModelError> {
        serde_json::from_str(text).map_err(|e| ModelError::Format(e.to_string()))
    }
}

fn check_param(param: ParameterName, kind: ComponentKind, value: f64) -> Result<(), ModelError> {
    if !param.accepts(kind) {
        return Err(ModelError::WrongCategory { param, kind });
    }
    param.check(value).map_err(|reason| ModelError::OutOfRange {
        param,
        value,
        reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::epoch;

    fn params(pairs: &[(ParameterName, f64)]) -> BTreeMap<ParameterName, f64> {
        pairs.iter().copied().collect()
    }

    fn sheep_model() -> (Model, String) {
        let mut m = Model::with_id("m1", "m1", "u1", epoch()).unwrap();
        let sheep = m
            .add_component(
                "sheep",
                ComponentKind::Biotic,
                &params(&[(ParameterName::StartingPopulation, 100.0)]),
                epoch(),
            )
            .unwrap();
        (m, sheep)
    }

    #[test]
    fn new_model_is_empty() {
        let m = Model::new("m1", "u1", epoch()).unwrap();
        assert!(m.components.is_empty() && m.relationships.is_empty());
        assert_eq!(m.provenance, Provenance::Fresh);
        assert_eq!(Model::new("", "u1", epoch()), Err(ModelError::EmptyName));
        let other = Model::new("m1", "u1", epoch()).unwrap();
        assert_ne!(m.id, other.id);
    }

    #[test]
    fn add_component_defaults_and_rejects() {
        let (mut m, sheep) = sheep_model();
        let c = m.component(&sheep).unwrap();
        assert_eq!(c.param(ParameterName::StartingPopulation), 100.0);
        assert_eq!(c.params[&ParameterName::Lifespan], 24.0);

        let err = m
            .add_component(
                "light",
                ComponentKind::Abiotic,
                &params(&[(ParameterName::PhotosynthesisRate, 0.5)]),
                epoch(),
            )
            .unwrap_err();
        assert!(matches!(err, ModelError::WrongCategory { .. }));
        assert_eq!(
            m.add_component("sheep", ComponentKind::Biotic, &BTreeMap::new(), epoch()),
            Err(ModelError::DuplicateComponent("sheep".into()))
        );
    }

    #[test]
    fn set_parameter_reports_old_and_new() {
        let (mut m, sheep) = sheep_model();
        let later = epoch() + chrono::Duration::minutes(1);
        let change = m
            .set_parameter(&sheep, ParameterName::OffspringCount, 3.0, later)
            .unwrap();
        assert_eq!(change, ParameterChange { old: 2.0, new: 3.0 });
        assert_eq!(m.updated_at, later);
        assert!(matches!(
            m.set_parameter(&sheep, ParameterName::Amount, 5.0, later),
            Err(ModelError::WrongCategory { .. })
        ));
        assert!(matches!(
            m.set_parameter(&sheep, ParameterName::Lifespan, 0.0, later),
            Err(ModelError::OutOfRange { .. })
        ));
        assert!(matches!(
            m.set_parameter("nope", ParameterName::Lifespan, 3.0, later),
            Err(ModelError::UnknownComponent(_))
        ));
    }

    #[test]
    fn relationship_typing() {
        let (mut m, sheep) = sheep_model();
        let wolf = m
            .add_component("wolf", ComponentKind::Biotic, &BTreeMap::new(), epoch())
            .unwrap();
        let grass = m
            .add_component("grass", ComponentKind::Abiotic, &BTreeMap::new(), epoch())
            .unwrap();
        m.add_relationship(&wolf, &sheep, RelationKind::Consumes, Some(0.2), epoch())
            .unwrap();
        assert!(matches!(
            m.add_relationship(&grass, &wolf, RelationKind::Consumes, None, epoch()),
            Err(ModelError::RelationTyping { .. })
        ));
        assert!(matches!(
            m.add_relationship(&wolf, &sheep, RelationKind::Consumes, None, epoch()),
            Err(ModelError::DuplicateRelationship { .. })
        ));
        assert!(matches!(
            m.add_relationship(&wolf, "ghost", RelationKind::Consumes, None, epoch()),
            Err(ModelError::UnknownComponent(_))
        ));
        assert_eq!(
            m.add_relationship(&wolf, &wolf, RelationKind::Consumes, None, epoch()),
            Err(ModelError::SelfLoop)
        );
        m.add_relationship(&sheep, &grass, RelationKind::Produces, None, epoch())
            .unwrap();
        m.add_relationship(&grass, &wolf, RelationKind::Destroys, None, epoch())
            .unwrap();
        assert!(m.validate().is_empty());
    }

    #[test]
    fn validate_reports_dangling_and_typing() {
        let (mut m, sheep) = sheep_model();
        let light = m
            .add_component("light", ComponentKind::Abiotic, &BTreeMap::new(), epoch())
            .unwrap();
        let mut dangling = m.clone();
        dangling.relationships.push(Relationship {
            id: "x".into(),
            source: sheep.clone(),
            target: "ghost".into(),
            kind: RelationKind::Consumes,
            rate: 0.1,
        });
        assert_eq!(dangling.validate().len(), 1);

        m.relationships.push(Relationship {
            id: "y".into(),
            source: light,
            target: sheep,
            kind: RelationKind::Consumes,
            rate: 0.1,
        });
        assert_eq!(
            m.validate(),
            vec![Violation::RelationTyping {
                relationship: "y".into(),
                kind: RelationKind::Consumes
            }]
        );
    }

    #[test]
    fn clone_is_isolated_and_chains_provenance() {
        let (m, sheep) = sheep_model();
        let mut copy = m.clone_model("m2", "u2", epoch());
        assert_eq!(copy.components.len(), 1);
        assert_ne!(copy.components[0].id, sheep);
        assert_eq!(
            copy.provenance,
            Provenance::ClonedFrom { model: "m1".into() }
        );
        let cid = copy.components[0].id.clone();
        copy.set_parameter(&cid, ParameterName::Lifespan, 99.0, epoch())
            .unwrap();
        assert_eq!(
            m.component(&sheep).unwrap().params[&ParameterName::Lifespan],
            24.0
        );

        let grandchild = copy.clone_model("m3", "u3", epoch());
        assert_eq!(
            grandchild.provenance,
            Provenance::ClonedFrom { model: "m2".into() }
        );
    }

    #[test]
    fn add_then_remove_restores_structure() {
        let (mut m, sheep) = sheep_model();
        let before = m.clone();
        let wolf = m
            .add_component("wolf", ComponentKind::Biotic, &BTreeMap::new(), epoch())
            .unwrap();
        m.add_relationship(&wolf, &sheep, RelationKind::Consumes, None, epoch())
            .unwrap();
        let (_, dropped) = m.remove_component(&wolf, epoch()).unwrap();
        assert_eq!(dropped.len(), 1);
        assert_eq!(m.components, before.components);
        assert_eq!(m.relationships, before.relationships);
    }

    #[test]
    fn category_matrix_is_total() {
        for p in ParameterName::ALL {
            let accepted: Vec<_> = [ComponentKind::Biotic, ComponentKind::Abiotic]
                .into_iter()
                .filter(|k| p.accepts(*k))
                .collect();
            match p.category() {
                ParameterCategory::Relationship => assert!(accepted.is_empty()),
                _ => assert_eq!(accepted.len(), 1, "{p}"),
            }
            assert!(p.check(p.default_value()).is_ok(), "{p} default in range");
            assert_eq!(ParameterName::parse(p.as_str()), Some(p));
        }
    }
}
