use std::collections::BTreeMap;

use ablab_core::clock::Timestamp;
use ablab_core::events::{derive_action, payload, ActionKind, ParticipantOp, Payload};
use ablab_core::experiment::{
    ExperimentError, ExperimentSpec, ExperimentStatus, FeatureFlag, GroupConfig,
};
use ablab_core::model::{Model, ModelError, ParameterName, Provenance};
use ablab_core::sim::{self, SimConfig};
use ablab_core::traits::{self, TraitRecord};
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{FromRequest, FromRequestParts, Path, Request, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::json;

use crate::api::*;
use crate::auth::{ParticipantClaims, Principal};
use crate::error::{ApiError, ErrorCode};
use crate::state::{decode_doc, AppState, BatchRecord, ModelRecord, Store};

/// JSON body whose rejections use the service error format.
pub struct Body<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for Body<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        Json::<T>::from_request(req, state)
            .await
            .map(|Json(v)| Body(v))
            .map_err(|e: JsonRejection| ApiError::validation(e.body_text()))
    }
}

/// Query string whose rejections use the service error format.
pub struct Query<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequestParts<S> for Query<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, ApiError> {
        axum::extract::Query::<T>::from_request_parts(parts, state)
            .await
            .map(|axum::extract::Query(v)| Query(v))
            .map_err(|e: QueryRejection| ApiError::validation(e.body_text()))
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route(
            "/researcher/experiments",
            post(create_experiment).get(list_experiments),
        )
        .route("/researcher/experiments/{id}", get(get_experiment))
        .route("/researcher/experiments/{id}/links", get(links))
        .route("/researcher/experiments/{id}/analytics", get(analytics))
        .route("/researcher/experiments/{id}/export", get(export))
        .route("/researcher/experiments/{id}/close", post(close))
        .route("/researcher/experiments/{id}/activate", post(activate))
        .route("/researcher/join-experiment", get(join))
        .route("/experiments/{id}/docs/{kind}", get(document))
        .route("/me", get(whoami))
        .route("/exemplars", get(list_exemplars))
        .route("/models", post(new_model))
        .route("/models/{id}", get(get_model).put(put_model))
        .route("/models/{id}/clone", post(clone_model))
        .route("/models/{id}/parameters", post(set_parameter))
        .route("/models/{id}/components", post(add_component))
        .route("/models/{id}/components/{cid}", delete(remove_component))
        .route("/models/{id}/relationships", post(add_relationship))
        .route(
            "/models/{id}/relationships/{rid}",
            delete(remove_relationship),
        )
        .route("/models/{id}/relationships/{rid}/rate", post(set_rate))
        .route("/models/{id}/simulate", post(simulate))
        .route("/models/{id}/apply-traits", post(apply_traits))
        .route("/simulations/compare", post(compare))
        .route("/simulations/{batch}", get(get_batch))
        .route("/simulations/{batch}/csv", get(batch_csv))
        .route("/traits", get(lookup_traits))
        .fallback(|| async { ApiError::new(ErrorCode::NotFound, "no such route") })
        .with_state(state)
}

fn researcher(state: &AppState, headers: &HeaderMap) -> ApiResult<()> {
    match state.signer.from_headers(headers)? {
        Principal::Researcher => Ok(()),
        Principal::Participant(_) => Err(ApiError::unauthorized("researcher token required")),
    }
}

fn participant(state: &AppState, headers: &HeaderMap) -> ApiResult<ParticipantClaims> {
    match state.signer.from_headers(headers)? {
        Principal::Participant(c) => Ok(c),
        Principal::Researcher => Err(ApiError::unauthorized("participant token required")),
    }
}

fn require_active(store: &Store, claims: &ParticipantClaims) -> ApiResult<()> {
    let exp = store.participant_experiment(claims)?;
    match exp.status {
        ExperimentStatus::Active => Ok(()),
        other => Err(ExperimentError::NotActive(other).into()),
    }
}

fn require_flag(state: &AppState, claims: &ParticipantClaims, flag: FeatureFlag) -> ApiResult<()> {
    state.store.lock().require_flag(claims, flag)
}

fn owned<'a>(store: &'a Store, claims: &ParticipantClaims, id: &str) -> ApiResult<&'a ModelRecord> {
    let rec = store
        .models
        .get(id)
        .ok_or_else(|| ApiError::not_found("model", id))?;
    if rec.participant.as_deref() == Some(&claims.participant)
        && rec.experiment.as_deref() == Some(&claims.experiment)
    {
        Ok(rec)
    } else {
        Err(ApiError::unauthorized(format!(
            "model {id} belongs to someone else"
        )))
    }
}

/// Own models plus exemplars.
fn readable<'a>(
    store: &'a Store,
    claims: &ParticipantClaims,
    id: &str,
) -> ApiResult<&'a ModelRecord> {
    let rec = store
        .models
        .get(id)
        .ok_or_else(|| ApiError::not_found("model", id))?;
    if rec.experiment.is_none() {
        Ok(rec)
    } else {
        owned(store, claims, id)
    }
}

fn resolve_component(model: &Model, key: &str) -> ApiResult<String> {
    model
        .component(key)
        .or_else(|| model.component_by_name(key))
        .map(|c| c.id.clone())
        .ok_or_else(|| ModelError::UnknownComponent(key.to_string()).into())
}

/// Applies `f` to a copy of a participant's model, records the derived
/// event, and commits the copy only if recording succeeded.
fn mutate<T>(
    state: &AppState,
    claims: &ParticipantClaims,
    model_id: &str,
    op: ParticipantOp,
    f: impl FnOnce(&mut Model, Timestamp) -> ApiResult<(T, Payload)>,
) -> ApiResult<(T, Model)> {
    let now = state.clock.now();
    let mut store = state.store.lock();
    require_active(&store, claims)?;
    let rec = owned(&store, claims, model_id)?;
    let simulated = rec.simulated;
    let mut model = rec.model.clone();
    let (out, payload) = f(&mut model, now)?;
    store.record(claims, model_id, derive_action(op, simulated), payload, now)?;
    store.models.get_mut(model_id).expect("checked above").model = model.clone();
    state.persist(&store)?;
    Ok((out, model))
}

fn experiment_view(state: &AppState, exp: &ablab_core::experiment::Experiment) -> ExperimentView {
    ExperimentView {
        experiment: exp.clone(),
        links: exp.join_links(&state.config.base_url).unwrap_or_default(),
        welcome_doc: exp.welcome_doc.is_some(),
        exit_doc: exp.exit_doc.is_some(),
    }
}

async fn create_experiment(
    State(state): State<AppState>,
    headers: HeaderMap,
    Body(req): Body<CreateExperiment>,
) -> ApiResult<(StatusCode, Json<ExperimentView>)> {
    researcher(&state, &headers)?;
    if req.groups.len() != 2 {
        return Err(ExperimentError::GroupCount(req.groups.len()).into());
    }
    let welcome_doc = decode_doc(&req.welcome_doc)?;
    let exit_doc = decode_doc(&req.exit_doc)?;
    let now = state.clock.now();
    let mut store = state.store.lock();
    let saved = store.counters.clone();
    let result = (|| {
        let groups: Vec<GroupConfig> = req
            .groups
            .iter()
            .map(|g| GroupConfig {
                group_id: g.group_id.clone().unwrap_or_else(|| store.next_id("group")),
                flags: g.flags.clone(),
            })
            .collect();
        for g in &groups {
            if store
                .experiments
                .values()
                .any(|e| e.group(&g.group_id).is_ok())
            {
                return Err(ApiError::conflict(format!(
                    "group id {} is already in use",
                    g.group_id
                )));
            }
        }
        let id = store.next_id("experiment");
        let exp = ablab_core::experiment::Experiment::create(
            id,
            ExperimentSpec {
                name: req.name.clone(),
                groups,
                mode: req.mode,
                seed: req.seed.unwrap_or(state.config.default_seed),
                welcome_doc,
                exit_doc,
                phases: req.phases.clone(),
                draft: req.draft,
            },
            now,
        )?;
        let log = state.open_log(&exp.id)?;
        Ok((exp, log))
    })();
    let (exp, log) = match result {
        Ok(v) => v,
        Err(e) => {
            store.counters = saved;
            return Err(e);
        }
    };
    let view = experiment_view(&state, &exp);
    store.logs.insert(exp.id.clone(), log);
    store.experiments.insert(exp.id.clone(), exp);
    state.persist(&store)?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn list_experiments(
    State(state): State<AppState>,
    headers: HeaderMap,
) -> ApiResult<Json<Vec<ExperimentView>>> {
    researcher(&state, &headers)?;
    let store = state.store.lock();
    Ok(Json(
        store
            .experiments
            .values()
            .map(|e| experiment_view(&state, e))
            .collect(),
    ))
}

async fn get_experiment(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Json<ExperimentView>> {
    researcher(&state, &headers)?;
    let store = state.store.lock();
    Ok(Json(experiment_view(&state, store.experiment(&id)?)))
}

async fn links(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Json<Vec<ablab_core::experiment::JoinLink>>> {
    researcher(&state, &headers)?;
    let store = state.store.lock();
    Ok(Json(
        store.experiment(&id)?.join_links(&state.config.base_url)?,
    ))
}

async fn analytics(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    researcher(&state, &headers)?;
    let bundle = state.store.lock().bundle(&id)?;
    let bytes = bundle.analytics.to_json_bytes();
    Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
}

async fn export(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    researcher(&state, &headers)?;
    let bundle = state.store.lock().bundle(&id)?;
    let zip = bundle.to_zip()?;
    let disposition = format!("attachment; filename=\"{id}.zip\"");
    Ok((
        [
            (header::CONTENT_TYPE, "application/zip".to_string()),
            (header::CONTENT_DISPOSITION, disposition),
        ],
        zip,
    )
        .into_response())
}

async fn close(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Json<ExperimentView>> {
    researcher(&state, &headers)?;
    let mut store = state.store.lock();
    store.experiment_mut(&id)?.close()?;
    state.persist(&store)?;
    Ok(Json(experiment_view(&state, store.experiment(&id)?)))
}

async fn activate(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Json<ExperimentView>> {
    researcher(&state, &headers)?;
    let mut store = state.store.lock();
    store.experiment_mut(&id)?.activate()?;
    state.persist(&store)?;
    Ok(Json(experiment_view(&state, store.experiment(&id)?)))
}

fn valid_participant_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

async fn join(
    State(state): State<AppState>,
    Query(q): Query<JoinQuery>,
) -> ApiResult<Json<JoinResponse>> {
    let now = state.clock.now();
    let mut store = state.store.lock();
    let exp_id = match (&q.experiment, &q.group) {
        (Some(e), _) => e.clone(),
        (None, Some(g)) => {
            let hits: Vec<&String> = store
                .experiments
                .values()
                .filter(|e| e.group(g).is_ok())
                .map(|e| &e.id)
                .collect();
            match hits.as_slice() {
                [one] => (*one).clone(),
                _ => return Err(ApiError::not_found("group", g)),
            }
        }
        (None, None) => {
            return Err(ApiError::validation(
                "query must name an experiment or a group",
            ))
        }
    };
    store.experiment(&exp_id)?;
    if let Some(p) = &q.participant {
        if !valid_participant_id(p) {
            return Err(ApiError::validation(
                "participant ids are 1-64 characters of [A-Za-z0-9._-]",
            ));
        }
    }
    let saved = store.counters.clone();
    let participant = match &q.participant {
        Some(p) => p.clone(),
        None => store.next_id("participant"),
    };
    let record = match store
        .experiment_mut(&exp_id)?
        .join(&participant, q.group.as_deref(), now)
    {
        Ok(r) => r,
        Err(e) => {
            store.counters = saved;
            return Err(e.into());
        }
    };
    state.persist(&store)?;
    let exp = store.experiment(&exp_id)?;
    let claims = ParticipantClaims {
        experiment: exp_id.clone(),
        group: record.group_id.clone(),
        participant: record.participant.clone(),
    };
    let doc_path = |kind: &str| format!("/experiments/{exp_id}/docs/{kind}");
    Ok(Json(JoinResponse {
        token: state.signer.issue(&claims),
        experiment: exp_id.clone(),
        group: record.group_id.clone(),
        participant: record.participant,
        flags: exp.group(&record.group_id)?.flags.clone(),
        welcome_doc: exp.welcome_doc.as_ref().map(|_| doc_path("welcome")),
        exit_doc: exp.exit_doc.as_ref().map(|_| doc_path("exit")),
    }))
}

async fn document(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path((id, kind)): Path<(String, String)>,
) -> ApiResult<Response> {
    let principal = state.signer.from_headers(&headers)?;
    let store = state.store.lock();
    if let Principal::Participant(c) = &principal {
        if c.experiment != id {
            return Err(ApiError::unauthorized(
                "token belongs to another experiment",
            ));
        }
    }
    let exp = store.experiment(&id)?;
    let doc = match kind.as_str() {
        "welcome" => &exp.welcome_doc,
        "exit" => &exp.exit_doc,
        _ => return Err(ApiError::not_found("document", &kind)),
    };
    let doc = doc
        .as_ref()
        .ok_or_else(|| ApiError::not_found("document", &kind))?;
    Ok((
        [(header::CONTENT_TYPE, doc.media_type.clone())],
        doc.data.clone(),
    )
        .into_response())
}

async fn whoami(State(state): State<AppState>, headers: HeaderMap) -> ApiResult<Json<Whoami>> {
    Ok(Json(match state.signer.from_headers(&headers)? {
        Principal::Researcher => Whoami {
            role: "researcher".into(),
            experiment: None,
            group: None,
            participant: None,
            flags: BTreeMap::new(),
        },
        Principal::Participant(c) => {
            let store = state.store.lock();
            let exp = store.participant_experiment(&c)?;
            Whoami {
                role: "participant".into(),
                flags: exp.group(&c.group)?.flags.clone(),
                experiment: Some(c.experiment),
                group: Some(c.group),
                participant: Some(c.participant),
            }
        }
    }))
}

async fn list_exemplars(
    State(state): State<AppState>,
    headers: HeaderMap,
) -> ApiResult<Json<Vec<Model>>> {
    let claims = participant(&state, &headers)?;
    require_flag(&state, &claims, FeatureFlag::ExemplarModels)?;
    let store = state.store.lock();
    Ok(Json(
        store
            .models
            .values()
            .filter(|m| m.experiment.is_none())
            .map(|m| m.model.clone())
            .collect(),
    ))
}

/// Registers a participant's new model and its N event.
fn insert_new_model(
    state: &AppState,
    claims: &ParticipantClaims,
    build: impl FnOnce(&Store, String, Timestamp) -> ApiResult<Model>,
) -> ApiResult<Model> {
    let now = state.clock.now();
    let mut store = state.store.lock();
    require_active(&store, claims)?;
    let saved = store.counters.clone();
    let id = store.next_id("model");
    let result = build(&store, id.clone(), now).and_then(|model| {
        let p = payload::new_model(&model.provenance);
        store.record(claims, &id, ActionKind::N, p, now)?;
        Ok(model)
    });
    let model = match result {
        Ok(m) => m,
        Err(e) => {
            store.counters = saved;
            return Err(e);
        }
    };
    store.models.insert(
        id,
        ModelRecord {
            model: model.clone(),
            experiment: Some(claims.experiment.clone()),
            participant: Some(claims.participant.clone()),
            group: Some(claims.group.clone()),
            simulated: false,
        },
    );
    state.persist(&store)?;
    Ok(model)
}

async fn new_model(
    State(state): State<AppState>,
    headers: HeaderMap,
    Body(req): Body<NewModel>,
) -> ApiResult<(StatusCode, Json<Model>)> {
    let claims = participant(&state, &headers)?;
    if req.exemplar.is_some() {
        require_flag(&state, &claims, FeatureFlag::ExemplarModels)?;
    }
    let model = insert_new_model(&state, &claims, |store, id, now| match &req.exemplar {
        Some(name) => {
            let ex = store
                .models
                .values()
                .find(|m| m.experiment.is_none() && m.model.name == *name)
                .ok_or_else(|| ApiError::not_found("exemplar", name))?;
            let mut m = ex.model.clone_model(id, &claims.participant, now);
            m.provenance = Provenance::Exemplar { name: name.clone() };
            if let Some(n) = &req.name {
                m.name = n.clone();
            }
            Ok(m)
        }
        None => Ok(Model::with_id(
            id,
            req.name.as_deref().unwrap_or("untitled model"),
            &claims.participant,
            now,
        )?),
    })?;
    Ok((StatusCode::CREATED, Json(model)))
}

async fn clone_model(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(source): Path<String>,
    Body(req): Body<CloneRequest>,
) -> ApiResult<(StatusCode, Json<Model>)> {
    let claims = participant(&state, &headers)?;
    require_flag(&state, &claims, FeatureFlag::Cloning)?;
    let model = insert_new_model(&state, &claims, |store, id, now| {
        let src = readable(store, &claims, &source)?;
        let mut m = src.model.clone_model(id, &claims.participant, now);
        if let Some(n) = &req.name {
            if n.trim().is_empty() {
                return Err(ModelError::EmptyName.into());
            }
            m.name = n.clone();
        }
        Ok(m)
    })?;
    Ok((StatusCode::CREATED, Json(model)))
}

async fn get_model(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Json<Model>> {
    let claims = participant(&state, &headers)?;
    let store = state.store.lock();
    Ok(Json(readable(&store, &claims, &id)?.model.clone()))
}

fn advanced_enabled(state: &AppState, claims: &ParticipantClaims) -> ApiResult<bool> {
    let store = state.store.lock();
    Ok(store
        .participant_experiment(claims)?
        .is_enabled(&claims.group, FeatureFlag::AdvancedParameters)?)
}

async fn put_model(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Body(doc): Body<Model>,
) -> ApiResult<Json<Model>> {
    let claims = participant(&state, &headers)?;
    let advanced = advanced_enabled(&state, &claims)?;
    let (_, model) = mutate(
        &state,
        &claims,
        &id,
        ParticipantOp::ReplaceModel,
        |model, now| {
            let mut next = doc;
            next.id = model.id.clone();
            next.owner = model.owner.clone();
            next.provenance = model.provenance.clone();
            next.created_at = model.created_at;
            next.updated_at = now;
            let violations = next.validate();
            if !violations.is_empty() {
                return Err(ModelError::Invalid(violations).into());
            }
            if !advanced {
                for c in &next.components {
                    let before = model.component(&c.id);
                    for (&p, &v) in c.params.iter().filter(|(p, _)| p.is_advanced()) {
                        let old = before.map_or(p.default_value(), |b| b.param(p));
                        if old != v {
                            return Err(ApiError::disabled(FeatureFlag::AdvancedParameters));
                        }
                    }
                }
            }
            next.canonicalize();
            *model = next;
            Ok(((), payload::structural("replace_model", &id)))
        },
    )?;
    Ok(Json(model))
}

async fn set_parameter(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Body(req): Body<SetParameter>,
) -> ApiResult<Json<Model>> {
    let claims = participant(&state, &headers)?;
    if req.parameter.is_advanced() {
        require_flag(&state, &claims, FeatureFlag::AdvancedParameters)?;
    }
    let (_, model) = mutate(
        &state,
        &claims,
        &id,
        ParticipantOp::SetParameter,
        |model, now| {
            let cid = resolve_component(model, &req.component)?;
            let change = model.set_parameter(&cid, req.parameter, req.value, now)?;
            let name = model.component(&cid).expect("resolved").name.clone();
            Ok((
                (),
                payload::parameter(&name, req.parameter.as_str(), change.old, change.new),
            ))
        },
    )?;
    Ok(Json(model))
}

async fn add_component(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Body(req): Body<AddComponent>,
) -> ApiResult<(StatusCode, Json<Model>)> {
    let claims = participant(&state, &headers)?;
    if req.params.keys().any(|p| p.is_advanced()) {
        require_flag(&state, &claims, FeatureFlag::AdvancedParameters)?;
    }
    let (_, model) = mutate(
        &state,
        &claims,
        &id,
        ParticipantOp::AddComponent,
        |model, now| {
            let cid = model.add_component(&req.name, req.kind, &req.params, now)?;
            Ok(((), payload::structural("add_component", &cid)))
        },
    )?;
    Ok((StatusCode::CREATED, Json(model)))
}

async fn remove_component(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path((id, cid)): Path<(String, String)>,
) -> ApiResult<Json<Model>> {
    let claims = participant(&state, &headers)?;
    let (_, model) = mutate(
        &state,
        &claims,
        &id,
        ParticipantOp::RemoveComponent,
        |model, now| {
            model.remove_component(&cid, now)?;
            Ok(((), payload::structural("remove_component", &cid)))
        },
    )?;
    Ok(Json(model))
}

async fn add_relationship(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Body(req): Body<AddRelationship>,
) -> ApiResult<(StatusCode, Json<Model>)> {
    let claims = participant(&state, &headers)?;
    let (_, model) = mutate(
        &state,
        &claims,
        &id,
        ParticipantOp::AddRelationship,
        |model, now| {
            let src = resolve_component(model, &req.source)?;
            let dst = resolve_component(model, &req.target)?;
            let rid = model.add_relationship(&src, &dst, req.kind, req.rate, now)?;
            Ok(((), payload::structural("add_relationship", &rid)))
        },
    )?;
    Ok((StatusCode::CREATED, Json(model)))
}

async fn remove_relationship(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path((id, rid)): Path<(String, String)>,
) -> ApiResult<Json<Model>> {
    let claims = participant(&state, &headers)?;
    let (_, model) = mutate(
        &state,
        &claims,
        &id,
        ParticipantOp::RemoveRelationship,
        |model, now| {
            model.remove_relationship(&rid, now)?;
            Ok(((), payload::structural("remove_relationship", &rid)))
        },
    )?;
    Ok(Json(model))
}

async fn set_rate(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path((id, rid)): Path<(String, String)>,
    Body(req): Body<SetRate>,
) -> ApiResult<Json<Model>> {
    let claims = participant(&state, &headers)?;
    let (_, model) = mutate(
        &state,
        &claims,
        &id,
        ParticipantOp::SetRelationshipRate,
        |model, now| {
            let kind = model
                .relationship(&rid)
                .ok_or_else(|| ModelError::UnknownRelationship(rid.clone()))?
                .kind;
            let change = model.set_relationship_rate(&rid, req.rate, now)?;
            let mut p = payload::parameter(kind.label(), kind.rate_name(), change.old, change.new);
            p.insert("relationship".into(), json!(rid));
            Ok(((), p))
        },
    )?;
    Ok(Json(model))
}

fn sim_config(
    state: &AppState,
    overrides: Option<serde_json::Map<String, serde_json::Value>>,
) -> ApiResult<SimConfig> {
    let mut base = serde_json::to_value(SimConfig {
        seed: state.config.default_seed,
        ..SimConfig::default()
    })
    .expect("config serializes");
    if let (Some(obj), Some(over)) = (base.as_object_mut(), overrides) {
        for (k, v) in over {
            if !obj.contains_key(&k) {
                return Err(ApiError::validation(format!(
                    "unknown simulation setting {k:?}"
                )));
            }
            obj.insert(k, v);
        }
    }
    let config: SimConfig =
        serde_json::from_value(base).map_err(|e| ApiError::validation(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

fn finish_batch(state: &AppState, id: &str, result: Result<Vec<sim::RunSeries>, String>) {
    let mut store = state.store.lock();
    let Some(batch) = store.batches.get_mut(id) else {
        return;
    };
    match result {
        Ok(runs) => {
            batch.runs = runs;
            batch.status = BatchStatus::Done;
        }
        Err(e) => {
            batch.status = BatchStatus::Failed;
            batch.error = Some(e);
        }
    }
    let saved = state.save_batch_csv(batch);
    if let Err(e) = saved.and_then(|_| state.persist(&store)) {
        tracing::warn!("persisting batch {id}: {e}");
    }
}

async fn execute(state: AppState, id: String, spec: sim::SimSpec, config: SimConfig) {
    let result = tokio::task::spawn_blocking(move || sim::run_batch(&spec, &config))
        .await
        .map_err(|e| e.to_string())
        .and_then(|r| r.map_err(|e| e.to_string()));
    finish_batch(&state, &id, result);
}

async fn simulate(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Body(req): Body<SimulateRequest>,
) -> ApiResult<(StatusCode, Json<SimulateResponse>)> {
    let claims = participant(&state, &headers)?;
    require_flag(&state, &claims, FeatureFlag::Simulation)?;
    let config = sim_config(&state, req.config)?;
    let now = state.clock.now();
    let (batch_id, spec) = {
        let mut store = state.store.lock();
        require_active(&store, &claims)?;
        let snapshot = owned(&store, &claims, &id)?.model.clone();
        let spec = sim::compile(&snapshot)?;
        let saved = store.counters.clone();
        let batch_id = store.next_id("batch");
        let mut p = payload::simulation(&batch_id, config.runs);
        if let Some(note) = &req.note {
            p.insert("note".into(), json!(note));
        }
        if let Err(e) = store.record(&claims, &id, ActionKind::S, p, now) {
            store.counters = saved;
            return Err(e);
        }
        store.models.get_mut(&id).expect("owned").simulated = true;
        store.batches.insert(
            batch_id.clone(),
            BatchRecord {
                id: batch_id.clone(),
                model: id.clone(),
                experiment: claims.experiment.clone(),
                participant: claims.participant.clone(),
                config: config.clone(),
                snapshot,
                status: BatchStatus::Running,
                error: None,
                runs: Vec::new(),
            },
        );
        state.persist(&store)?;
        (batch_id, spec)
    };
    let work = u64::from(config.runs) * u64::from(config.steps);
    if work <= state.config.sync_limit {
        execute(state.clone(), batch_id.clone(), spec, config).await;
        let status = state.store.lock().batches[&batch_id].status;
        Ok((
            StatusCode::OK,
            Json(SimulateResponse {
                batch: batch_id,
                status,
            }),
        ))
    } else {
        tokio::spawn(execute(state.clone(), batch_id.clone(), spec, config));
        Ok((
            StatusCode::ACCEPTED,
            Json(SimulateResponse {
                batch: batch_id,
                status: BatchStatus::Running,
            }),
        ))
    }
}

fn owned_batch<'a>(
    store: &'a Store,
    claims: &ParticipantClaims,
    id: &str,
) -> ApiResult<&'a BatchRecord> {
    let b = store
        .batches
        .get(id)
        .ok_or_else(|| ApiError::not_found("batch", id))?;
    if b.participant == claims.participant && b.experiment == claims.experiment {
        Ok(b)
    } else {
        Err(ApiError::unauthorized(format!(
            "batch {id} belongs to someone else"
        )))
    }
}

fn done(b: &BatchRecord) -> ApiResult<()> {
    match b.status {
        BatchStatus::Done => Ok(()),
        BatchStatus::Running => Err(ApiError::new(
            ErrorCode::NoData,
            format!("batch {} is still running", b.id),
        )),
        BatchStatus::Failed => Err(ApiError::new(
            ErrorCode::NoData,
            format!("batch {} failed", b.id),
        )),
    }
}

fn aggregate_for(b: &BatchRecord, target: &str) -> ApiResult<sim::BatchAggregate> {
    done(b)?;
    let cid = resolve_component(&b.snapshot, target)?;
    Ok(sim::aggregate(
        &b.spec()?,
        &b.runs,
        &cid,
        b.config.histogram_bins,
    )?)
}

#[derive(Debug, Deserialize)]
struct TargetQuery {
    target: Option<String>,
}

async fn get_batch(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Query(q): Query<TargetQuery>,
) -> ApiResult<Json<BatchView>> {
    let claims = participant(&state, &headers)?;
    let store = state.store.lock();
    let b = owned_batch(&store, &claims, &id)?;
    let aggregate = q
        .target
        .as_deref()
        .map(|t| aggregate_for(b, t))
        .transpose()?;
    Ok(Json(BatchView {
        batch: b.id.clone(),
        model: b.model.clone(),
        status: b.status,
        config: b.config.clone(),
        runs: b.runs.clone(),
        aggregate,
        error: b.error.clone(),
    }))
}

async fn batch_csv(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    let claims = participant(&state, &headers)?;
    let store = state.store.lock();
    let b = owned_batch(&store, &claims, &id)?;
    done(b)?;
    Ok((
        [(header::CONTENT_TYPE, "text/csv")],
        sim::batch_csv(&b.runs),
    )
        .into_response())
}

async fn compare(
    State(state): State<AppState>,
    headers: HeaderMap,
    Body(req): Body<CompareRequest>,
) -> ApiResult<Json<sim::PeakShiftReport>> {
    let claims = participant(&state, &headers)?;
    let store = state.store.lock();
    let base = owned_batch(&store, &claims, &req.baseline)?;
    let treat = owned_batch(&store, &claims, &req.treatment)?;
    let cid = resolve_component(&base.snapshot, &req.target)?;
    let name = base
        .snapshot
        .component(&cid)
        .expect("resolved")
        .name
        .clone();
    let a = aggregate_for(base, &cid)?;
    let treat_key = if treat.snapshot.component(&cid).is_some() {
        cid
    } else {
        name
    };
    let b = aggregate_for(treat, &treat_key)?;
    Ok(Json(sim::peak_shift(&a, &b)?))
}

#[derive(Debug, Deserialize)]
struct NameQuery {
    name: String,
}

async fn lookup(state: &AppState, name: String) -> ApiResult<TraitRecord> {
    let lookup = state.traits.clone();
    tokio::task::spawn_blocking(move || lookup.lookup(&name))
        .await
        .map_err(|e| ApiError::storage(e.to_string()))?
        .map_err(ApiError::from)
}

async fn lookup_traits(
    State(state): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<NameQuery>,
) -> ApiResult<Json<TraitRecord>> {
    let claims = participant(&state, &headers)?;
    require_flag(&state, &claims, FeatureFlag::LookupEol)?;
    Ok(Json(lookup(&state, q.name).await?))
}

async fn apply_traits(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Body(req): Body<ApplyTraitsRequest>,
) -> ApiResult<Json<ApplyTraitsResponse>> {
    let claims = participant(&state, &headers)?;
    require_flag(&state, &claims, FeatureFlag::LookupEol)?;
    let (cid, species) = {
        let store = state.store.lock();
        let model = &owned(&store, &claims, &id)?.model;
        let cid = resolve_component(model, &req.component)?;
        let default = model.component(&cid).expect("resolved").name.clone();
        (cid, req.species.clone().unwrap_or(default))
    };
    let record = lookup(&state, species.clone()).await?;
    let (changes, model) = mutate(
        &state,
        &claims,
        &id,
        ParticipantOp::ApplyTraits,
        |model, now| {
            let changes = traits::apply_traits(model, &cid, &record, now)?;
            let mut p = payload::lookup(&species);
            let name = model.component(&cid).expect("resolved").name.clone();
            p.insert("component".into(), json!(name));
            p.insert("changes".into(), json!(changes));
            Ok((changes, p))
        },
    )?;
    Ok(Json(ApplyTraitsResponse { model, changes }))
}

#[allow(dead_code)]
fn _assert_parameter_name_is_wire_compatible(p: ParameterName) -> &'static str {
    p.as_str()
}
