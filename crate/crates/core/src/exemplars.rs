//! Bundled template models.

use thiserror::Error;

use crate::model::Model;

const FIXTURE: &str = include_str!("../fixtures/exemplars.json");

#[derive(Debug, Error)]
pub enum ExemplarError {
    #[error("exemplar fixture is corrupt: {0}")]
    Corrupt(String),
}

/// Parses an exemplar document (a JSON array of models) and validates each.
pub fn parse(text: &str) -> Result<Vec<Model>, ExemplarError> {
    let models: Vec<Model> =
        serde_json::from_str(text).map_err(|e| ExemplarError::Corrupt(e.to_string()))?;
    for m in &models {
        let v = m.validate();
        if !v.is_empty() {
            return Err(ExemplarError::Corrupt(format!("{}: {}", m.name, v[0])));
        }
    }
    Ok(models)
}

pub fn load_exemplars() -> Result<Vec<Model>, ExemplarError> {
    parse(FIXTURE)
}

pub fn by_name(name: &str) -> Option<Model> {
    load_exemplars().ok()?.into_iter().find(|m| m.name == name)
}
