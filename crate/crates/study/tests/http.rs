mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use lineup_study::http::router;
use lineup_study::StudyService;

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => req
            .header("content-type", "application/json")
            .body(Body::from(v.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, value)
}

fn pick_body(observer: &str, panel: usize) -> Value {
    json!({
        "observer": observer,
        "panel": panel,
        "reasons": ["trend", "other"],
        "other_text": "odd shape",
        "confidence": 4,
        "duration_s": 21.0
    })
}

#[tokio::test]
async fn full_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(Arc::new(StudyService::open(dir.path()).unwrap()));
    let cfg = serde_json::to_value(common::small_config("web", 2, 2)).unwrap();

    let (status, body) = call(&app, Method::POST, "/studies", Some(cfg.clone())).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    assert_eq!(body, json!({"study_id": "web", "lineups": 4}));
    let (status, _) = call(&app, Method::POST, "/studies", Some(cfg)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (_, ids) = call(&app, Method::GET, "/studies", None).await;
    assert_eq!(ids, json!(["web"]));

    let (status, next) = call(&app, Method::GET, "/studies/web/next?observer=ann", None).await;
    assert_eq!(status, StatusCode::OK);
    let obj = next.as_object().unwrap();
    assert_eq!(obj.keys().collect::<Vec<_>>(), ["lineup_id", "svg"]);
    let lid = obj["lineup_id"].as_str().unwrap().to_string();
    assert!(obj["svg"].as_str().unwrap().starts_with("<svg"));

    let pick_uri = format!("/studies/web/lineups/{lid}/pick");
    let reveal_uri = format!("/studies/web/lineups/{lid}/reveal");
    let (status, _) = call(&app, Method::POST, &pick_uri, Some(pick_body("ann", 21))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, Method::POST, &reveal_uri, Some(json!({"observer": "ann", "confirm": true}))).await;
    assert_eq!(status, StatusCode::CONFLICT, "reveal before pick");

    let (status, ack) = call(&app, Method::POST, &pick_uri, Some(pick_body("ann", 6))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ack, json!({"lineup_id": lid, "K": 1}));
    let (status, err) = call(&app, Method::POST, &pick_uri, Some(pick_body("ann", 7))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(err["error"].as_str().unwrap().contains("already answered"));

    let (status, _) = call(&app, Method::POST, &reveal_uri, Some(json!({"observer": "ann"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "reveal without confirmation");
    let (status, rv) = call(&app, Method::POST, &reveal_uri, Some(json!({"observer": "ann", "confirm": true}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(rv["picked"], 6);
    assert_eq!(rv["K"], 1);

    let (status, report) = call(&app, Method::GET, "/studies/web/report", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(report["rows"].as_array().unwrap().len(), 4);
    let total: u64 = report["rows"].as_array().unwrap().iter().map(|r| r["K"].as_u64().unwrap()).sum();
    assert_eq!(total, 1);
    let reasons: Vec<&str> = report["designs"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|d| d["reasons"].as_array().unwrap().iter().map(|r| r["reason"].as_str().unwrap()))
        .collect();
    assert_eq!(reasons, ["trend", "other"]);
}

#[tokio::test]
async fn errors_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(Arc::new(StudyService::open(dir.path()).unwrap()));
    let (status, _) = call(&app, Method::GET, "/studies/none/next?observer=a", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, Method::GET, "/studies/none/report", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let mut cfg = common::small_config("e", 1, 1);
    cfg.designs[0].data = "missing".into();
    let (status, body) = call(&app, Method::POST, "/studies", Some(serde_json::to_value(cfg).unwrap())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("unknown data source"));

    let cfg = common::small_config("e", 1, 1);
    call(&app, Method::POST, "/studies", Some(serde_json::to_value(cfg).unwrap())).await;
    let (status, _) = call(&app, Method::GET, "/studies/e/next", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "observer is required");
    let (status, _) = call(&app, Method::POST, "/studies/e/lineups/zz-r1/pick", Some(pick_body("a", 1))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (_, next) = call(&app, Method::GET, "/studies/e/next?observer=a", None).await;
    assert!(next.get("lineup_id").is_some());
    let (status, done) = call(&app, Method::GET, "/studies/e/next?observer=a", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(done, json!({"done": true, "served": 1}));
}
