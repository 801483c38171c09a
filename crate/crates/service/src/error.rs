use ablab_core::bundle::BundleError;
use ablab_core::events::CaptureError;
use ablab_core::experiment::ExperimentError;
use ablab_core::model::ModelError;
use ablab_core::sim::SimError;
use ablab_core::traits::TraitError;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    ValidationError,
    FeatureDisabled,
    NotFound,
    Unauthorized,
    Conflict,
    NoData,
}

impl ErrorCode {
    pub fn status(self) -> StatusCode {
        match self {
            ErrorCode::ValidationError => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorCode::FeatureDisabled => StatusCode::FORBIDDEN,
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::Unauthorized => StatusCode::UNAUTHORIZED,
            ErrorCode::Conflict => StatusCode::CONFLICT,
            ErrorCode::NoData => StatusCode::NOT_FOUND,
        }
    }
}

/// Error body: `{code, message, detail}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("{code:?}: {message}")]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default)]
    pub detail: Map<String, Value>,
    /// Overrides the code's default status (storage failures, timeouts).
    #[serde(skip)]
    pub status: Option<u16>,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            detail: Map::new(),
            status: None,
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.detail.insert(key.to_string(), value.into());
        self
    }

    fn with_status(mut self, status: StatusCode) -> Self {
        self.status = Some(status.as_u16());
        self
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::ValidationError, message)
    }

    pub fn not_found(what: &str, id: &str) -> Self {
        Self::new(ErrorCode::NotFound, format!("{what} {id} not found")).with(what, id)
    }

    pub fn unauthorized(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Unauthorized, message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Conflict, message)
    }

    pub fn disabled(flag: ablab_core::experiment::FeatureFlag) -> Self {
        Self::new(
            ErrorCode::FeatureDisabled,
            format!("feature {flag} is disabled for this group"),
        )
        .with("flag", flag.as_str())
    }

    pub fn storage(message: impl Into<String>) -> Self {
        Self::conflict(message).with_status(StatusCode::INTERNAL_SERVER_ERROR)
    }

    pub fn status_code(&self) -> StatusCode {
        self.status
            .and_then(|s| StatusCode::from_u16(s).ok())
            .unwrap_or_else(|| self.code.status())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = self.status_code();
        let body = json!({ "code": self.code, "message": self.message, "detail": self.detail });
        (status, Json(body)).into_response()
    }
}

impl From<ModelError> for ApiError {
    fn from(e: ModelError) -> Self {
        match &e {
            ModelError::UnknownComponent(id) => ApiError::not_found("component", id),
            ModelError::UnknownRelationship(id) => ApiError::not_found("relationship", id),
            ModelError::DuplicateComponent(_) | ModelError::DuplicateRelationship { .. } => {
                ApiError::conflict(e.to_string())
            }
            _ => ApiError::validation(e.to_string()),
        }
    }
}

impl From<ExperimentError> for ApiError {
    fn from(e: ExperimentError) -> Self {
        match &e {
            ExperimentError::UnknownGroup(g) => ApiError::not_found("group", g),
            ExperimentError::NotActive(_) | ExperimentError::AlreadyClosed => {
                ApiError::conflict(e.to_string())
            }
            _ => ApiError::validation(e.to_string()),
        }
    }
}

impl From<CaptureError> for ApiError {
    fn from(e: CaptureError) -> Self {
        match &e {
            CaptureError::FeatureDisabled(flag) => ApiError::disabled(*flag),
            CaptureError::Io(err) => ApiError::storage(err.to_string()),
            CaptureError::Schema { .. } => ApiError::validation(e.to_string()),
            _ => ApiError::unauthorized(e.to_string()),
        }
    }
}

impl From<SimError> for ApiError {
    fn from(e: SimError) -> Self {
        match &e {
            SimError::EmptyBatch => ApiError::new(ErrorCode::NoData, e.to_string()),
            SimError::UnknownTarget(t) => ApiError::not_found("target", t),
            _ => ApiError::validation(e.to_string()),
        }
    }
}

impl From<TraitError> for ApiError {
    fn from(e: TraitError) -> Self {
        match &e {
            TraitError::NotFound(name) => ApiError::not_found("species", name),
            TraitError::Timeout(_) => ApiError::new(ErrorCode::NoData, e.to_string())
                .with_status(StatusCode::GATEWAY_TIMEOUT),
            TraitError::Model(m) => m.clone().into(),
            _ => ApiError::validation(e.to_string()),
        }
    }
}

impl From<BundleError> for ApiError {
    fn from(e: BundleError) -> Self {
        ApiError::storage(e.to_string())
    }
}
