use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use compass_service::{router, AppState, FixtureSet, Phase, ServiceConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

fn app_with(config: ServiceConfig) -> Router {
    router(AppState::new(FixtureSet::builtin(), config))
}

fn app() -> Router {
    app_with(ServiceConfig::default())
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

async fn create(app: &Router, body: Value) -> (StatusCode, Value) {
    call(app, Method::POST, "/runs", Some(body)).await
}

async fn scenario_run(app: &Router, scenario: &str) -> u64 {
    let (status, view) = create(
        app,
        json!({"workflow": "tbs", "properties": "tbs", "mode": "scenario", "scenario": scenario}),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED);
    view["id"].as_u64().unwrap()
}

fn labels(view: &Value) -> Vec<String> {
    view["pendingChoices"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["label"].as_str().unwrap().to_string())
        .collect()
}

/// Answer choices by preference until `stop` says otherwise.
async fn drive(
    app: &Router,
    id: u64,
    mut view: Value,
    prefer: &[&str],
    stop: impl Fn(&[String]) -> bool,
) -> Value {
    while view["phase"] == "awaiting-choice" {
        let offered = labels(&view);
        if stop(&offered) {
            break;
        }
        let pick = prefer
            .iter()
            .find(|p| offered.iter().any(|o| o == *p))
            .map(|p| p.to_string())
            .unwrap_or_else(|| offered[0].clone());
        let (status, next) = call(
            app,
            Method::POST,
            &format!("/runs/{id}/choices/{pick}"),
            None,
        )
        .await;
        assert_eq!(status, StatusCode::OK, "{next}");
        view = next;
    }
    view
}

const T2_PATH: &[&str] = &[
    "flightRetry=false",
    "availFlights=true",
    "pickHotel",
    "carsHotel=false",
];

#[tokio::test]
async fn lists_builtin_fixtures() {
    let (status, body) = call(&app(), Method::GET, "/fixtures", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["workflows"], json!(["tbs"]));
    assert_eq!(body["scenarios"], json!(["t1", "t2"]));
}

#[tokio::test]
async fn unknown_fixture_is_404_problem() {
    let (status, body) = create(&app(), json!({"workflow": "nope", "properties": "tbs"})).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["status"], 404);
    assert_eq!(body["code"], "not-found");
    let (status, _) = call(&app(), Method::GET, "/runs/99", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn capacity_is_enforced() {
    let app = app_with(ServiceConfig {
        capacity: 1,
        ..Default::default()
    });
    let body = json!({"workflow": "tbs", "properties": "tbs"});
    assert_eq!(create(&app, body.clone()).await.0, StatusCode::CREATED);
    let (status, problem) = create(&app, body).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(problem["code"], "capacity");
}

#[tokio::test]
async fn idle_sessions_are_evicted() {
    let state = AppState::new(
        FixtureSet::builtin(),
        ServiceConfig {
            idle_timeout: Duration::from_millis(10),
            ..Default::default()
        },
    );
    let app = router(state.clone());
    create(&app, json!({"workflow": "tbs", "properties": "tbs"})).await;
    assert_eq!(state.session_count(), 1);
    tokio::time::sleep(Duration::from_millis(30)).await;
    assert_eq!(state.evict_idle(), 1);
    assert_eq!(state.session_count(), 0);
}

#[tokio::test]
async fn interactive_run_reaches_rental_pick() {
    let app = app();
    let (status, view) = create(&app, json!({"workflow": "tbs", "properties": "tbs"})).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(view["phase"], "awaiting-choice");
    let id = view["id"].as_u64().unwrap();
    let view = drive(&app, id, view, T2_PATH, |o| {
        o.iter().any(|l| l == "pickHotel")
    })
    .await;
    let mut offered = labels(&view);
    offered.sort();
    assert_eq!(offered, ["pickAirport", "pickHotel"]);

    let (status, problem) = call(
        &app,
        Method::POST,
        &format!("/runs/{id}/choices/bogus"),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(problem["code"], "invalid-choice");
}

#[tokio::test]
async fn interactive_t2_violation_and_recovery_by_airport_car() {
    let app = app();
    let (_, view) = create(&app, json!({"workflow": "tbs", "properties": "tbs"})).await;
    let id = view["id"].as_u64().unwrap();
    let view = drive(&app, id, view, T2_PATH, |o| o.iter().any(|l| l == "book")).await;
    assert_eq!(view["phase"], "awaiting-choice");

    let (status, view) = call(&app, Method::POST, &format!("/runs/{id}/inject-ter"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(view["phase"], "violated");
    let (_, violation) = call(&app, Method::GET, &format!("/runs/{id}/violation"), None).await;
    assert_eq!(violation["property"], "P2");
    assert_eq!(violation["pending_event"], "TER");

    let (_, k10) = call(&app, Method::GET, &format!("/runs/{id}/plans?k=10"), None).await;
    assert!(!k10["plans"].as_array().unwrap().is_empty());
    let (_, both) = call(
        &app,
        Method::GET,
        &format!("/runs/{id}/plans?k=30&relevant=true&filter=true"),
        None,
    )
    .await;
    let plans = both["plans"].as_array().unwrap();
    assert!(plans.len() < 100 && plans.len() >= 3);
    let p2b = &plans[2];
    assert_eq!(p2b["redo"][0], "pickAirport");
    assert_eq!(p2b["rank"], 3);
    assert!(p2b["undo"]
        .as_array()
        .unwrap()
        .contains(&json!("releaseShuttle")));

    let plan_id = p2b["id"].as_str().unwrap().to_string();
    let (status, view) = call(
        &app,
        Method::POST,
        &format!("/runs/{id}/plans/{plan_id}/execute"),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{view}");
    let view = drive(&app, id, view, &["book", "datesConsistent=true"], |_| false).await;
    assert_eq!(view["phase"], "completed");
    let p2 = view["monitors"]
        .as_array()
        .unwrap()
        .iter()
        .find(|m| m["name"] == "P2")
        .unwrap();
    assert_eq!(p2["color"], "green");
    assert_eq!(view["recoveries"], 1);

    let (_, page) = call(&app, Method::GET, &format!("/runs/{id}/events"), None).await;
    let steps: Vec<&str> = page["events"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|e| e["type"] == "step")
        .map(|e| e["label"].as_str().unwrap())
        .collect();
    let executed = steps.iter().rposition(|l| *l == "releaseShuttle").unwrap();
    assert!(steps[executed..].contains(&"holdCar"));
}

#[tokio::test]
async fn scenario_mode_runs_to_violation() {
    let app = app();
    let id = scenario_run(&app, "t2").await;
    let (_, view) = call(&app, Method::GET, &format!("/runs/{id}"), None).await;
    assert_eq!(view["phase"], "violated");
    assert_eq!(view["violation"]["property"], "P2");

    let (status, problem) = call(
        &app,
        Method::POST,
        &format!("/runs/{id}/choices/book"),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(problem["code"], "wrong-phase");

    let (_, k10) = call(&app, Method::GET, &format!("/runs/{id}/plans?k=10"), None).await;
    assert_eq!(k10["plans"].as_array().unwrap().len(), 2);
    assert!(k10["vars"].as_u64().unwrap() > 0);

    let (status, listing) = call(&app, Method::GET, &format!("/runs/{id}/plans?k=0"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(listing["plans"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn stale_plan_id_is_rejected() {
    let app = app();
    let id = scenario_run(&app, "t2").await;
    let (_, first) = call(&app, Method::GET, &format!("/runs/{id}/plans?k=10"), None).await;
    let stale = first["plans"][0]["id"].as_str().unwrap().to_string();
    let (_, second) = call(&app, Method::GET, &format!("/runs/{id}/plans?k=15"), None).await;
    assert_ne!(second["plans"][0]["id"], json!(stale));
    let (status, problem) = call(
        &app,
        Method::POST,
        &format!("/runs/{id}/plans/{stale}/execute"),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(problem["code"], "unknown-plan");
}

#[tokio::test]
async fn scenario_plan_execution_completes() {
    let app = app();
    let id = scenario_run(&app, "t2").await;
    let (_, listing) = call(&app, Method::GET, &format!("/runs/{id}/plans?k=15"), None).await;
    let pick = listing["plans"]
        .as_array()
        .unwrap()
        .iter()
        .find(|p| p["redo"][0] == "pickAirport")
        .unwrap();
    let plan_id = pick["id"].as_str().unwrap();
    let (_, view) = call(
        &app,
        Method::POST,
        &format!("/runs/{id}/plans/{plan_id}/execute"),
        None,
    )
    .await;
    assert_eq!(view["phase"], "completed");
    assert!(view["plans"].is_null());
    let (status, _) = call(&app, Method::GET, &format!("/runs/{id}/plans?k=10"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn unfiltered_forbidden_plan_trips_safety_property() {
    let app = app();
    let id = scenario_run(&app, "t2").await;
    let (_, listing) = call(&app, Method::GET, &format!("/runs/{id}/plans?k=30"), None).await;
    let plans = listing["plans"].as_array().unwrap();
    let bad = plans
        .iter()
        .find(|p| p["forbiddenBy"].as_array().unwrap().contains(&json!("P3")))
        .expect("some plan is forbidden by P3");
    let (_, filtered) = call(
        &app,
        Method::GET,
        &format!("/runs/{id}/plans?k=30&filter=true"),
        None,
    )
    .await;
    assert!(filtered["plans"].as_array().unwrap().len() < plans.len());

    // re-list unfiltered so the id is current
    let (_, listing) = call(&app, Method::GET, &format!("/runs/{id}/plans?k=30"), None).await;
    let bad = listing["plans"]
        .as_array()
        .unwrap()
        .iter()
        .find(|p| p["rank"] == bad["rank"])
        .unwrap();
    let plan_id = bad["id"].as_str().unwrap();
    let (_, view) = call(
        &app,
        Method::POST,
        &format!("/runs/{id}/plans/{plan_id}/execute"),
        None,
    )
    .await;
    assert_eq!(view["phase"], "violated");
    assert_eq!(view["violation"]["property"], "P3");
}

#[tokio::test]
async fn long_poll_wakes_on_new_events() {
    let app = app();
    let (_, view) = create(&app, json!({"workflow": "tbs", "properties": "tbs"})).await;
    let id = view["id"].as_u64().unwrap();
    let cursor = view["events"].as_u64().unwrap();
    let choice = labels(&view)[0].clone();

    let poller = {
        let app = app.clone();
        tokio::spawn(async move {
            let started = Instant::now();
            let page = call(
                &app,
                Method::GET,
                &format!("/runs/{id}/events?cursor={cursor}&waitMs=5000"),
                None,
            )
            .await;
            (page, started.elapsed())
        })
    };
    tokio::time::sleep(Duration::from_millis(50)).await;
    call(
        &app,
        Method::POST,
        &format!("/runs/{id}/choices/{choice}"),
        None,
    )
    .await;
    let ((status, page), waited) = poller.await.unwrap();
    assert_eq!(status, StatusCode::OK);
    assert!(waited < Duration::from_secs(4));
    assert!(!page["events"].as_array().unwrap().is_empty());
    assert!(page["nextCursor"].as_u64().unwrap() > cursor);

    // nothing new: returns empty after the wait
    let next = page["nextCursor"].as_u64().unwrap();
    let (_, empty) = call(
        &app,
        Method::GET,
        &format!("/runs/{id}/events?cursor={next}&waitMs=20"),
        None,
    )
    .await;
    assert!(empty["events"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn sessions_are_isolated() {
    let app = app();
    let (_, a) = create(&app, json!({"workflow": "tbs", "properties": "tbs"})).await;
    let (_, b) = create(&app, json!({"workflow": "tbs", "properties": "tbs"})).await;
    let (a_id, b_id) = (a["id"].as_u64().unwrap(), b["id"].as_u64().unwrap());
    drive(&app, a_id, a, T2_PATH, |o| o.iter().any(|l| l == "book")).await;
    let (_, b_now) = call(&app, Method::GET, &format!("/runs/{b_id}"), None).await;
    assert_eq!(b_now, b);
}

#[tokio::test]
async fn event_log_follows_the_phase_machine() {
    let app = app();
    let id = scenario_run(&app, "t2").await;
    let (_, listing) = call(&app, Method::GET, &format!("/runs/{id}/plans?k=12"), None).await;
    let plan_id = listing["plans"][0]["id"].as_str().unwrap().to_string();
    call(
        &app,
        Method::POST,
        &format!("/runs/{id}/plans/{plan_id}/execute"),
        None,
    )
    .await;
    let (_, page) = call(&app, Method::GET, &format!("/runs/{id}/events"), None).await;
    let phases: Vec<Phase> = page["events"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|e| e["type"] == "phase")
        .map(|e| serde_json::from_value(e["phase"].clone()).unwrap())
        .collect();
    assert_eq!(phases.first(), Some(&Phase::Running));
    assert!(phases.contains(&Phase::Recovering));
    for w in phases.windows(2) {
        assert!(w[0].may_become(w[1]), "{:?} -> {:?}", w[0], w[1]);
    }
    let (_, view) = call(&app, Method::GET, &format!("/runs/{id}"), None).await;
    assert_eq!(
        page["events"].as_array().unwrap().len() as u64,
        view["events"].as_u64().unwrap()
    );
    assert_eq!(
        serde_json::to_value(phases.last().unwrap()).unwrap(),
        view["phase"]
    );
}

#[tokio::test]
async fn concurrent_requests_on_one_session_serialize() {
    let state = AppState::new(FixtureSet::builtin(), ServiceConfig::default());
    let app = router(Arc::clone(&state));
    let id = scenario_run(&app, "t2").await;
    let mut tasks = Vec::new();
    for k in [8, 10, 12, 14] {
        let app = app.clone();
        tasks.push(tokio::spawn(async move {
            call(&app, Method::GET, &format!("/runs/{id}/plans?k={k}"), None).await
        }));
    }
    for t in tasks {
        assert_eq!(t.await.unwrap().0, StatusCode::OK);
    }
}
