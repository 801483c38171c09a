//! Core of a two-group experimentation platform for simulation-based
//! modeling tools: conceptual ecology models, a seeded population simulator,
//! experiment configuration and assignment, action capture, and analytics.

pub mod analytics;
pub mod bundle;
pub mod clock;
pub mod events;
pub mod exemplars;
pub mod experiment;
pub mod model;
pub mod sim;
pub mod synth;
pub mod traits;

pub use clock::{Clock, SimClock, SystemClock, Timestamp};
pub use model::{
    Component, ComponentKind, Model, ModelError, ParameterName, Provenance, RelationKind,
    Relationship,
};
