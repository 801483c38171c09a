//! Typed client for the experimentation service.
//!
//! Requests go either over HTTP or straight into an in-process router; both
//! transports see identical status codes and bodies.

use std::time::Duration;

use ablab_core::analytics::AnalyticsReport;
use ablab_core::experiment::JoinLink;
use ablab_core::model::{Model, ParameterName};
use ablab_core::sim::PeakShiftReport;
use ablab_core::traits::TraitRecord;
use ablab_service::api::*;
use ablab_service::ApiError;
use axum::body::Body;
use axum::http::{Method, Request};
use axum::Router;
use http_body_util::BodyExt;
use serde::de::DeserializeOwned;
use serde::Serialize;
use tower::ServiceExt;
use url::Url;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("service returned {status}: {error}")]
    Api { status: u16, error: ApiError },
    #[error("transport: {0}")]
    Transport(String),
    #[error("unexpected response ({status}): {message}")]
    Decode { status: u16, message: String },
    #[error("batch {0} did not finish in time")]
    Pending(String),
}

impl ClientError {
    /// The service error, when the request reached the service.
    pub fn api(&self) -> Option<&ApiError> {
        match self {
            ClientError::Api { error, .. } => Some(error),
            _ => None,
        }
    }

    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Api { status, .. } | ClientError::Decode { status, .. } => Some(*status),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Clone)]
pub enum Transport {
    Http { client: reqwest::Client, base: Url },
    InProcess(Router),
}

impl Transport {
    pub fn http(base: &str) -> Result<Self> {
        let normalized = format!("{}/", base.trim_end_matches('/'));
        let base = Url::parse(&normalized)
            .map_err(|e| ClientError::Transport(format!("bad base url {base:?}: {e}")))?;
        Ok(Transport::Http {
            client: reqwest::Client::new(),
            base,
        })
    }

    async fn send(
        &self,
        method: Method,
        path: &str,
        token: Option<&str>,
        body: Option<Vec<u8>>,
    ) -> Result<(u16, Vec<u8>)> {
        match self {
            Transport::Http { client, base } => {
                let url = base
                    .join(path.trim_start_matches('/'))
                    .map_err(|e| ClientError::Transport(e.to_string()))?;
                let mut req = client.request(method, url);
                if let Some(t) = token {
                    req = req.bearer_auth(t);
                }
                if let Some(b) = body {
                    req = req.header("content-type", "application/json").body(b);
                }
                let res = req
                    .send()
                    .await
                    .map_err(|e| ClientError::Transport(e.to_string()))?;
                let status = res.status().as_u16();
                let bytes = res
                    .bytes()
                    .await
                    .map_err(|e| ClientError::Transport(e.to_string()))?;
                Ok((status, bytes.to_vec()))
            }
            Transport::InProcess(router) => {
                let mut req = Request::builder().method(method).uri(path);
                if let Some(t) = token {
                    req = req.header("authorization", format!("Bearer {t}"));
                }
                let req = match body {
                    Some(b) => req
                        .header("content-type", "application/json")
                        .body(Body::from(b)),
                    None => req.body(Body::empty()),
                }
                .map_err(|e| ClientError::Transport(e.to_string()))?;
                let res = router
                    .clone()
                    .oneshot(req)
                    .await
                    .map_err(|e| ClientError::Transport(e.to_string()))?;
                let status = res.status().as_u16();
                let bytes = res
                    .into_body()
                    .collect()
                    .await
                    .map_err(|e| ClientError::Transport(e.to_string()))?
                    .to_bytes();
                Ok((status, bytes.to_vec()))
            }
        }
    }
}

fn query(pairs: &[(&str, Option<&str>)]) -> String {
    let mut ser = url::form_urlencoded::Serializer::new(String::new());
    for (k, v) in pairs {
        if let Some(v) = v {
            ser.append_pair(k, v);
        }
    }
    let q = ser.finish();
    if q.is_empty() {
        q
    } else {
        format!("?{q}")
    }
}

/// A transport plus an optional bearer token.
#[derive(Clone)]
pub struct Client {
    transport: Transport,
    token: Option<String>,
}

impl Client {
    pub fn new(transport: Transport) -> Self {
        Self {
            transport,
            token: None,
        }
    }

    pub fn in_process(router: Router) -> Self {
        Self::new(Transport::InProcess(router))
    }

    pub fn http(base: &str) -> Result<Self> {
        Ok(Self::new(Transport::http(base)?))
    }

    /// Same transport, different credentials.
    pub fn with_token(&self, token: impl Into<String>) -> Self {
        Self {
            transport: self.transport.clone(),
            token: Some(token.into()),
        }
    }

    pub fn token(&self) -> Option<&str> {
        self.token.as_deref()
    }

    /// Raw response bytes of a successful request.
    pub async fn bytes(
        &self,
        method: Method,
        path: &str,
        body: Option<Vec<u8>>,
    ) -> Result<Vec<u8>> {
        let (status, bytes) = self
            .transport
            .send(method, path, self.token.as_deref(), body)
            .await?;
        if (200..300).contains(&status) {
            return Ok(bytes);
        }
        match serde_json::from_slice::<ApiError>(&bytes) {
            Ok(error) => Err(ClientError::Api { status, error }),
            Err(_) => Err(ClientError::Decode {
                status,
                message: String::from_utf8_lossy(&bytes).into_owned(),
            }),
        }
    }

    async fn json<T: DeserializeOwned>(
        &self,
        method: Method,
        path: &str,
        body: Option<&impl Serialize>,
    ) -> Result<T> {
        let body = body.map(|b| serde_json::to_vec(b).expect("request serializes"));
        let bytes = self.bytes(method, path, body).await?;
        serde_json::from_slice(&bytes).map_err(|e| ClientError::Decode {
            status: 200,
            message: e.to_string(),
        })
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        self.json(Method::GET, path, None::<&()>).await
    }

    async fn post<T: DeserializeOwned>(&self, path: &str, body: &impl Serialize) -> Result<T> {
        self.json(Method::POST, path, Some(body)).await
    }

    // Researcher operations.

    pub async fn create_experiment(&self, req: &CreateExperiment) -> Result<ExperimentView> {
        self.post("/researcher/experiments", req).await
    }

    pub async fn experiments(&self) -> Result<Vec<ExperimentView>> {
        self.get("/researcher/experiments").await
    }

    pub async fn experiment(&self, id: &str) -> Result<ExperimentView> {
        self.get(&format!("/researcher/experiments/{id}")).await
    }

    pub async fn links(&self, id: &str) -> Result<Vec<JoinLink>> {
        self.get(&format!("/researcher/experiments/{id}/links"))
            .await
    }

    /// Analytics exactly as served, byte for byte.
    pub async fn analytics_bytes(&self, id: &str) -> Result<Vec<u8>> {
        self.bytes(
            Method::GET,
            &format!("/researcher/experiments/{id}/analytics"),
            None,
        )
        .await
    }

    pub async fn analytics(&self, id: &str) -> Result<AnalyticsReport> {
        self.get(&format!("/researcher/experiments/{id}/analytics"))
            .await
    }

    /// Export bundle as a zip archive.
    pub async fn export(&self, id: &str) -> Result<Vec<u8>> {
        self.bytes(
            Method::GET,
            &format!("/researcher/experiments/{id}/export"),
            None,
        )
        .await
    }

    pub async fn close(&self, id: &str) -> Result<ExperimentView> {
        self.post(&format!("/researcher/experiments/{id}/close"), &())
            .await
    }

    pub async fn activate(&self, id: &str) -> Result<ExperimentView> {
        self.post(&format!("/researcher/experiments/{id}/activate"), &())
            .await
    }

    // Joining and identity.

    pub async fn join(&self, q: &JoinQuery) -> Result<JoinResponse> {
        let qs = query(&[
            ("group", q.group.as_deref()),
            ("experiment", q.experiment.as_deref()),
            ("participant", q.participant.as_deref()),
        ]);
        self.get(&format!("/researcher/join-experiment{qs}")).await
    }

    /// Joins and returns a client carrying the participant token.
    pub async fn join_as(&self, q: &JoinQuery) -> Result<(Client, JoinResponse)> {
        let res = self.join(q).await?;
        Ok((self.with_token(res.token.clone()), res))
    }

    pub async fn whoami(&self) -> Result<Whoami> {
        self.get("/me").await
    }

    pub async fn document(&self, experiment: &str, kind: &str) -> Result<Vec<u8>> {
        self.bytes(
            Method::GET,
            &format!("/experiments/{experiment}/docs/{kind}"),
            None,
        )
        .await
    }

    // Models.

    pub async fn exemplars(&self) -> Result<Vec<Model>> {
        self.get("/exemplars").await
    }

    pub async fn new_model(&self, req: &NewModel) -> Result<Model> {
        self.post("/models", req).await
    }

    pub async fn model(&self, id: &str) -> Result<Model> {
        self.get(&format!("/models/{id}")).await
    }

    pub async fn put_model(&self, model: &Model) -> Result<Model> {
        self.json(Method::PUT, &format!("/models/{}", model.id), Some(model))
            .await
    }

    pub async fn clone_model(&self, id: &str, name: Option<&str>) -> Result<Model> {
        self.post(
            &format!("/models/{id}/clone"),
            &CloneRequest {
                name: name.map(str::to_string),
            },
        )
        .await
    }

    pub async fn set_parameter(
        &self,
        model: &str,
        component: &str,
        parameter: ParameterName,
        value: f64,
    ) -> Result<Model> {
        let req = SetParameter {
            component: component.to_string(),
            parameter,
            value,
        };
        self.post(&format!("/models/{model}/parameters"), &req)
            .await
    }

    pub async fn add_component(&self, model: &str, req: &AddComponent) -> Result<Model> {
        self.post(&format!("/models/{model}/components"), req).await
    }

    pub async fn remove_component(&self, model: &str, component: &str) -> Result<Model> {
        self.json(
            Method::DELETE,
            &format!("/models/{model}/components/{component}"),
            None::<&()>,
        )
        .await
    }

    pub async fn add_relationship(&self, model: &str, req: &AddRelationship) -> Result<Model> {
        self.post(&format!("/models/{model}/relationships"), req)
            .await
    }

    pub async fn remove_relationship(&self, model: &str, relationship: &str) -> Result<Model> {
        self.json(
            Method::DELETE,
            &format!("/models/{model}/relationships/{relationship}"),
            None::<&()>,
        )
        .await
    }

    pub async fn set_rate(&self, model: &str, relationship: &str, rate: f64) -> Result<Model> {
        self.post(
            &format!("/models/{model}/relationships/{relationship}/rate"),
            &SetRate { rate },
        )
        .await
    }

    // Simulation.

    pub async fn simulate(&self, model: &str, req: &SimulateRequest) -> Result<SimulateResponse> {
        self.post(&format!("/models/{model}/simulate"), req).await
    }

    pub async fn batch(&self, batch: &str, target: Option<&str>) -> Result<BatchView> {
        let qs = query(&[("target", target)]);
        self.get(&format!("/simulations/{batch}{qs}")).await
    }

    pub async fn batch_csv(&self, batch: &str) -> Result<String> {
        let bytes = self
            .bytes(Method::GET, &format!("/simulations/{batch}/csv"), None)
            .await?;
        String::from_utf8(bytes).map_err(|e| ClientError::Decode {
            status: 200,
            message: e.to_string(),
        })
    }

    /// Polls until the batch leaves the running state.
    pub async fn wait_batch(
        &self,
        batch: &str,
        target: Option<&str>,
        timeout: Duration,
    ) -> Result<BatchView> {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            let view = self.batch(batch, None).await?;
            if view.status != BatchStatus::Running {
                return match target {
                    Some(_) => self.batch(batch, target).await,
                    None => Ok(view),
                };
            }
            if tokio::time::Instant::now() >= deadline {
                return Err(ClientError::Pending(batch.to_string()));
            }
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
    }

    pub async fn compare(&self, req: &CompareRequest) -> Result<PeakShiftReport> {
        self.post("/simulations/compare", req).await
    }

    // Trait lookup.

    pub async fn traits(&self, name: &str) -> Result<TraitRecord> {
        let qs = query(&[("name", Some(name))]);
        self.get(&format!("/traits{qs}")).await
    }

    pub async fn apply_traits(
        &self,
        model: &str,
        req: &ApplyTraitsRequest,
    ) -> Result<ApplyTraitsResponse> {
        self.post(&format!("/models/{model}/apply-traits"), req)
            .await
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn query_strings_are_encoded() {
        assert_eq!(
            query(&[("target", Some("Ovis aries")), ("x", None)]),
            "?target=Ovis+aries"
        );
        assert_eq!(query(&[("x", None)]), "");
    }

    #[test]
    fn bad_base_urls_are_rejected() {
        assert!(Client::http("not a url").is_err());
        assert!(Client::http("http://127.0.0.1:9").is_ok());
    }
}
