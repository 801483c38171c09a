use std::sync::Arc;

use ablab_core::bundle::ExportBundle;
use ablab_core::clock::{epoch, SimClock};
use ablab_core::events::ActionKind;
use ablab_service::{router, AppState, ServiceConfig};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const RESEARCHER: &str = "researcher";

fn app_with(config: ServiceConfig) -> (Router, Arc<SimClock>) {
    let clock = Arc::new(SimClock::new(epoch()));
    let state = AppState::new(config, clock.clone()).unwrap();
    (router(state), clock)
}

fn app() -> Router {
    app_with(ServiceConfig::default()).0
}

async fn raw(
    app: &Router,
    method: &str,
    uri: &str,
    token: Option<&str>,
    body: Option<Value>,
) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(serde_json::to_vec(&b).unwrap())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn call(
    app: &Router,
    method: &str,
    uri: &str,
    token: Option<&str>,
    body: Option<Value>,
) -> (StatusCode, Value) {
    let (status, bytes) = raw(app, method, uri, token, body).await;
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

fn flags(all: bool) -> Value {
    json!({
        "advanced_parameters": all, "cloning": all, "exemplar_models": all,
        "lookup_eol": all, "simulation": all
    })
}

async fn create(app: &Router, b_flags: Value) -> Value {
    let (status, body) = call(
        app,
        "POST",
        "/researcher/experiments",
        Some(RESEARCHER),
        Some(json!({
            "name": "pilot", "mode": "manual", "seed": 7,
            "groups": [{"group_id": "A", "flags": flags(true)}, {"group_id": "B", "flags": b_flags}]
        })),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body
}

async fn join(app: &Router, group: &str, participant: &str) -> String {
    let (status, body) = call(
        app,
        "GET",
        &format!("/researcher/join-experiment?group={group}&participant={participant}"),
        None,
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    body["token"].as_str().unwrap().to_string()
}

async fn events(app: &Router, exp: &str) -> Vec<ablab_core::events::ActionEvent> {
    let (status, zip) = raw(
        app,
        "GET",
        &format!("/researcher/experiments/{exp}/export"),
        Some(RESEARCHER),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    ExportBundle::from_zip(&zip).unwrap().events
}

#[tokio::test]
async fn experiments_get_sequential_ids_and_links() {
    let app = app();
    let body = create(&app, flags(true)).await;
    assert_eq!(body["experiment"]["id"], "exp-0001");
    assert_eq!(body["links"].as_array().unwrap().len(), 2);
    let (status, list) = call(
        &app,
        "GET",
        "/researcher/experiments",
        Some(RESEARCHER),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(list.as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn missing_group_ids_are_assigned() {
    let app = app();
    let (status, body) = call(
        &app,
        "POST",
        "/researcher/experiments",
        Some(RESEARCHER),
        Some(json!({"name": "auto", "mode": "random", "groups": [{"flags": flags(true)}, {"flags": flags(false)}]})),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    let groups = body["experiment"]["groups"].as_array().unwrap();
    assert_eq!(groups[0]["group_id"], "1");
    assert_eq!(groups[1]["group_id"], "2");
}

#[tokio::test]
async fn researcher_routes_require_the_researcher_token() {
    let app = app();
    let (status, body) = call(&app, "GET", "/researcher/experiments", None, None).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    assert_eq!(body["code"], "unauthorized");
    let (status, _) = call(&app, "GET", "/researcher/experiments", Some("nope"), None).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    create(&app, flags(true)).await;
    let token = join(&app, "A", "s1").await;
    let (status, _) = call(&app, "GET", "/researcher/experiments", Some(&token), None).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
}

#[tokio::test]
async fn malformed_bodies_are_validation_errors() {
    let app = app();
    let (status, body) = call(
        &app,
        "POST",
        "/researcher/experiments",
        Some(RESEARCHER),
        Some(json!({"name": 3})),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "validation_error");
    let (status, body) = call(
        &app,
        "POST",
        "/researcher/experiments",
        Some(RESEARCHER),
        Some(json!({"name": "one group", "groups": [{"flags": flags(true)}]})),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
}

#[tokio::test]
async fn unknown_routes_use_the_error_format() {
    let (status, body) = call(&app(), "GET", "/nowhere", None, None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "not_found");
}

#[tokio::test]
async fn joins_are_sticky() {
    let app = app();
    create(&app, flags(true)).await;
    join(&app, "A", "s1").await;
    let (_, again) = call(
        &app,
        "GET",
        "/researcher/join-experiment?experiment=exp-0001&group=B&participant=s1",
        None,
        None,
    )
    .await;
    assert_eq!(again["group"], "A");
    let (_, me) = call(
        &app,
        "GET",
        "/me",
        Some(again["token"].as_str().unwrap()),
        None,
    )
    .await;
    assert_eq!(me["role"], "participant");
    assert_eq!(me["group"], "A");
}

#[tokio::test]
async fn participant_ids_are_validated() {
    let app = app();
    create(&app, flags(true)).await;
    let (status, _) = call(
        &app,
        "GET",
        "/researcher/join-experiment?group=A&participant=a%20b",
        None,
        None,
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(
        &app,
        "GET",
        "/researcher/join-experiment?group=Z",
        None,
        None,
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn model_editing_records_events() {
    let app = app();
    create(&app, flags(true)).await;
    let token = join(&app, "A", "s1").await;
    let (status, model) = call(
        &app,
        "POST",
        "/models",
        Some(&token),
        Some(json!({"exemplar": "wolf-sheep-grass"})),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{model}");
    let id = model["id"].as_str().unwrap().to_string();
    assert_eq!(id, "m-000001");

    let (status, body) = call(
        &app,
        "POST",
        &format!("/models/{id}/parameters"),
        Some(&token),
        Some(json!({"component": "Ovis aries", "parameter": "offspring_count", "value": 3.0})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");

    let (status, body) = call(
        &app,
        "POST",
        &format!("/models/{id}/components"),
        Some(&token),
        Some(json!({"name": "Rain", "kind": "abiotic"})),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{body}");

    let (status, sim) = call(
        &app,
        "POST",
        &format!("/models/{id}/simulate"),
        Some(&token),
        Some(json!({"config": {"runs": 3}})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{sim}");
    assert_eq!(sim["status"], "done");
    let batch = sim["batch"].as_str().unwrap();

    let (status, view) = call(
        &app,
        "GET",
        &format!("/simulations/{batch}?target=Ovis%20aries"),
        Some(&token),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{view}");
    assert_eq!(view["runs"].as_array().unwrap().len(), 3);
    assert!(view["aggregate"].is_object());

    let rel = model["relationships"][0]["id"]
        .as_str()
        .unwrap()
        .to_string();
    let (status, body) = call(
        &app,
        "POST",
        &format!("/models/{id}/relationships/{rel}/rate"),
        Some(&token),
        Some(json!({"rate": 0.3})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");

    let actions: Vec<ActionKind> = events(&app, "exp-0001")
        .await
        .iter()
        .map(|e| e.action)
        .collect();
    assert_eq!(
        actions,
        vec![
            ActionKind::N,
            ActionKind::P,
            ActionKind::C,
            ActionKind::S,
            ActionKind::P
        ]
    );
}

#[tokio::test]
async fn other_participants_models_are_private() {
    let app = app();
    create(&app, flags(true)).await;
    let a = join(&app, "A", "s1").await;
    let b = join(&app, "A", "s2").await;
    let (_, model) = call(
        &app,
        "POST",
        "/models",
        Some(&a),
        Some(json!({"name": "mine"})),
    )
    .await;
    let id = model["id"].as_str().unwrap();
    let (status, _) = call(&app, "GET", &format!("/models/{id}"), Some(&b), None).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, _) = call(&app, "GET", "/models/exemplar-kudzu", Some(&b), None).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn disabled_features_are_refused_and_unlogged() {
    let app = app();
    create(&app, flags(false)).await;
    let token = join(&app, "B", "s1").await;
    let (status, body) = call(
        &app,
        "POST",
        "/models",
        Some(&token),
        Some(json!({"exemplar": "kudzu"})),
    )
    .await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    assert_eq!(body["code"], "feature_disabled");
    let (_, model) = call(
        &app,
        "POST",
        "/models",
        Some(&token),
        Some(json!({"name": "blank"})),
    )
    .await;
    let id = model["id"].as_str().unwrap();
    for (uri, body) in [
        (format!("/models/{id}/simulate"), json!({})),
        (format!("/models/{id}/clone"), json!({})),
        (
            format!("/models/{id}/apply-traits"),
            json!({"component": "x"}),
        ),
    ] {
        let (status, res) = call(&app, "POST", &uri, Some(&token), Some(body)).await;
        assert_eq!(status, StatusCode::FORBIDDEN, "{uri}: {res}");
        assert_eq!(res["code"], "feature_disabled");
    }
    let (status, _) = call(&app, "GET", "/traits?name=kudzu", Some(&token), None).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    let (status, _) = call(&app, "GET", "/exemplars", Some(&token), None).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    let (_, _) = call(
        &app,
        "POST",
        &format!("/models/{id}/components"),
        Some(&token),
        Some(json!({"name": "deer", "kind": "biotic"})),
    )
    .await;
    let (status, res) = call(
        &app,
        "POST",
        &format!("/models/{id}/parameters"),
        Some(&token),
        Some(json!({"component": "deer", "parameter": "move_velocity", "value": 2.0})),
    )
    .await;
    assert_eq!(status, StatusCode::FORBIDDEN, "{res}");
    let logged = events(&app, "exp-0001").await;
    assert!(logged
        .iter()
        .all(|e| matches!(e.action, ActionKind::N | ActionKind::C)));
}

#[tokio::test]
async fn traits_apply_to_components() {
    let app = app();
    create(&app, flags(true)).await;
    let token = join(&app, "A", "s1").await;
    let (status, record) = call(
        &app,
        "GET",
        "/traits?name=Canis%20lupus",
        Some(&token),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{record}");
    let (_, model) = call(
        &app,
        "POST",
        "/models",
        Some(&token),
        Some(json!({"exemplar": "wolf-sheep-grass"})),
    )
    .await;
    let id = model["id"].as_str().unwrap();
    let (status, res) = call(
        &app,
        "POST",
        &format!("/models/{id}/apply-traits"),
        Some(&token),
        Some(json!({"component": "Canis lupus"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{res}");
    let (status, _) = call(&app, "GET", "/traits?name=unicorn", Some(&token), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let logged = events(&app, "exp-0001").await;
    assert_eq!(logged.last().unwrap().action, ActionKind::E);
}

#[tokio::test]
async fn closed_experiments_refuse_edits() {
    let app = app();
    create(&app, flags(true)).await;
    let token = join(&app, "A", "s1").await;
    let (status, _) = call(
        &app,
        "POST",
        "/researcher/experiments/exp-0001/close",
        Some(RESEARCHER),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let (status, body) = call(&app, "POST", "/models", Some(&token), Some(json!({}))).await;
    assert_eq!(status, StatusCode::CONFLICT, "{body}");
    let (status, _) = call(
        &app,
        "POST",
        "/researcher/experiments/exp-0001/close",
        Some(RESEARCHER),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn compare_reports_peak_shift() {
    let app = app();
    create(&app, flags(true)).await;
    let token = join(&app, "A", "s1").await;
    let (_, model) = call(
        &app,
        "POST",
        "/models",
        Some(&token),
        Some(json!({"exemplar": "wolf-sheep-grass"})),
    )
    .await;
    let id = model["id"].as_str().unwrap();
    let simulate = |app: Router, token: String| async move {
        let (_, res) = call(
            &app,
            "POST",
            &format!("/models/{id}/simulate"),
            Some(&token),
            Some(json!({})),
        )
        .await;
        res["batch"].as_str().unwrap().to_string()
    };
    let base = simulate(app.clone(), token.clone()).await;
    call(
        &app,
        "POST",
        &format!("/models/{id}/parameters"),
        Some(&token),
        Some(json!({"component": "Ovis aries", "parameter": "initial_population", "value": 400.0})),
    )
    .await;
    let treat = simulate(app.clone(), token.clone()).await;
    let (status, report) = call(
        &app,
        "POST",
        "/simulations/compare",
        Some(&token),
        Some(json!({"baseline": base, "treatment": treat, "target": "Ovis aries"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{report}");
    assert!(report["shifted_right"].is_boolean());
}

#[tokio::test]
async fn analytics_route_serves_the_bundle_report() {
    let app = app();
    create(&app, flags(true)).await;
    let token = join(&app, "A", "s1").await;
    let (_, model) = call(
        &app,
        "POST",
        "/models",
        Some(&token),
        Some(json!({"exemplar": "kudzu"})),
    )
    .await;
    let id = model["id"].as_str().unwrap();
    call(
        &app,
        "POST",
        &format!("/models/{id}/parameters"),
        Some(&token),
        Some(json!({"component": "kudzu", "parameter": "initial_population", "value": 50.0})),
    )
    .await;
    let (status, bytes) = raw(
        &app,
        "GET",
        "/researcher/experiments/exp-0001/analytics",
        Some(RESEARCHER),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let (_, zip) = raw(
        &app,
        "GET",
        "/researcher/experiments/exp-0001/export",
        Some(RESEARCHER),
        None,
    )
    .await;
    let bundle = ExportBundle::from_zip(&zip).unwrap();
    assert_eq!(bytes, bundle.analytics.to_json_bytes());
}

#[tokio::test]
async fn documents_are_served_to_members() {
    let app = app();
    let (status, _) = call(
        &app,
        "POST",
        "/researcher/experiments",
        Some(RESEARCHER),
        Some(json!({
            "name": "docs", "mode": "manual",
            "groups": [{"group_id": "A", "flags": flags(true)}, {"group_id": "B", "flags": flags(true)}],
            "welcome_doc": {"media_type": "text/plain", "data_base64": "aGVsbG8="}
        })),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED);
    let (_, joined) = call(
        &app,
        "GET",
        "/researcher/join-experiment?group=A&participant=s1",
        None,
        None,
    )
    .await;
    assert_eq!(joined["welcome_doc"], "/experiments/exp-0001/docs/welcome");
    let token = joined["token"].as_str().unwrap();
    let (status, bytes) = raw(
        &app,
        "GET",
        "/experiments/exp-0001/docs/welcome",
        Some(token),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(bytes, b"hello");
    let (status, _) = call(
        &app,
        "GET",
        "/experiments/exp-0001/docs/exit",
        Some(token),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn state_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let config = ServiceConfig {
        data_dir: Some(dir.path().to_path_buf()),
        ..ServiceConfig::default()
    };
    let (app, _) = app_with(config.clone());
    create(&app, flags(true)).await;
    let token = join(&app, "A", "s1").await;
    let (_, model) = call(
        &app,
        "POST",
        "/models",
        Some(&token),
        Some(json!({"exemplar": "kudzu"})),
    )
    .await;
    let id = model["id"].as_str().unwrap().to_string();
    call(
        &app,
        "POST",
        &format!("/models/{id}/simulate"),
        Some(&token),
        Some(json!({})),
    )
    .await;
    let before = events(&app, "exp-0001").await;
    drop(app);

    let (app, _) = app_with(config);
    let (status, got) = call(&app, "GET", &format!("/models/{id}"), Some(&token), None).await;
    assert_eq!(status, StatusCode::OK, "{got}");
    assert_eq!(events(&app, "exp-0001").await, before);
    let (_, next) = call(&app, "POST", "/models", Some(&token), Some(json!({}))).await;
    assert_eq!(next["id"], "m-000002");
    assert!(dir.path().join("simulations/b-000001.csv").exists());
}

#[tokio::test]
async fn large_batches_run_as_jobs() {
    let config = ServiceConfig {
        sync_limit: 10,
        ..ServiceConfig::default()
    };
    let (app, _) = app_with(config);
    create(&app, flags(true)).await;
    let token = join(&app, "A", "s1").await;
    let (_, model) = call(
        &app,
        "POST",
        "/models",
        Some(&token),
        Some(json!({"exemplar": "kudzu"})),
    )
    .await;
    let id = model["id"].as_str().unwrap();
    let (status, res) = call(
        &app,
        "POST",
        &format!("/models/{id}/simulate"),
        Some(&token),
        Some(json!({})),
    )
    .await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let batch = res["batch"].as_str().unwrap();
    for _ in 0..200 {
        let (_, view) = call(
            &app,
            "GET",
            &format!("/simulations/{batch}"),
            Some(&token),
            None,
        )
        .await;
        if view["status"] == "done" {
            return;
        }
        tokio::time::sleep(std::time::Duration::from_millis(10)).await;
    }
    panic!("batch never finished");
}

#[tokio::test]
async fn reads_emit_no_events() {
    let app = app();
    create(&app, flags(true)).await;
    let token = join(&app, "A", "s1").await;
    let (_, model) = call(
        &app,
        "POST",
        "/models",
        Some(&token),
        Some(json!({"exemplar": "kudzu"})),
    )
    .await;
    let id = model["id"].as_str().unwrap();
    let before = events(&app, "exp-0001").await;
    for uri in [
        format!("/models/{id}"),
        "/me".to_string(),
        "/exemplars".to_string(),
        "/traits?name=kudzu".to_string(),
        "/experiments/exp-0001/docs/welcome".to_string(),
    ] {
        raw(&app, "GET", &uri, Some(&token), None).await;
    }
    for uri in [
        "/researcher/experiments",
        "/researcher/experiments/exp-0001",
        "/researcher/experiments/exp-0001/links",
    ] {
        raw(&app, "GET", uri, Some(RESEARCHER), None).await;
    }
    raw(
        &app,
        "GET",
        "/researcher/join-experiment?group=A&participant=s2",
        None,
        None,
    )
    .await;
    assert_eq!(events(&app, "exp-0001").await, before);
}
