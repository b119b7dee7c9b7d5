//! HTTP API exercised in-process.

mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use common::*;
use hisql_cli::app::App;
use hisql_cli::server::{router, ServerState};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn state(ws: &Workspace) -> ServerState {
    ServerState::new(Arc::new(App::from_file(&ws.config()).unwrap()))
}

async fn call(s: &ServerState, method: Method, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = router(s.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, v)
}

async fn post(s: &ServerState, uri: &str, body: &str) -> (StatusCode, Value) {
    call(s, Method::POST, uri, Some(body)).await
}

async fn get(s: &ServerState, uri: &str) -> (StatusCode, Value) {
    call(s, Method::GET, uri, None).await
}

#[tokio::test]
async fn lists_databases_and_schema() {
    let ws = Workspace::scripted(&[]);
    let s = state(&ws);
    let (status, v) = get(&s, "/api/databases").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v[0]["db_id"], "financial");
    assert_eq!(v[0]["table_count"], 6);
    assert_eq!(v[0]["has_hints"], false);
    assert_eq!(v[1]["db_id"], "school");
    assert_eq!(v[1]["table_count"], 3);

    let (status, v) = get(&s, "/api/databases/school/schema").await;
    assert_eq!(status, StatusCode::OK);
    assert!(v.to_string().contains("CREATE TABLE scores"));
    assert_eq!(get(&s, "/api/databases/nope/schema").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn query_success_returns_rows_and_one_attempt() {
    let ws = Workspace::scripted(&[step("generation", "SELECT COUNT(*) AS n FROM loan")]);
    let s = state(&ws);
    let (status, v) = post(&s, "/api/query", r#"{"db_id": "financial", "question": "How many loans?"}"#).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["outcome"], "success");
    assert_eq!(v["attempts"].as_array().unwrap().len(), 1);
    assert_eq!(v["attempts"][0]["outcome"], "success");
    assert_eq!(v["columns"], json!(["n"]));
    assert!(v["rows"][0][0].is_i64());
    assert_eq!(v["truncated"], false);
    assert_eq!(v["ledger_delta"]["generation"], 1);
    assert_eq!(v["ledger_delta"]["repair"], 0);
}

#[tokio::test]
async fn query_exhausted_is_200_with_all_attempts() {
    let mut steps = vec![step("generation", "SELECT missing FROM loan")];
    steps.extend((0..3).map(|_| step("repair", "SELECT also_missing FROM loan")));
    let ws = Workspace::scripted(&steps);
    let s = state(&ws);
    let (status, v) = post(&s, "/api/query", r#"{"db_id": "financial", "question": "q", "use_hints": false}"#).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["outcome"], "exhausted");
    let attempts = v["attempts"].as_array().unwrap();
    assert_eq!(attempts.len(), 4);
    assert!(attempts.iter().all(|a| a["outcome"] == "exec_error" && a["error"].is_string()));
    assert!(v["last_error"].as_str().unwrap().contains("also_missing"));
    assert!(v.get("rows").is_none());
    assert_eq!(v["ledger_delta"]["repair"], 3);
    assert_eq!(ws.failure_lines(), 1);
}

#[tokio::test]
async fn query_errors_map_to_status_codes() {
    let ws = Workspace::scripted(&[failing_step("generation", "upstream down")]);
    let s = state(&ws);
    let (status, v) = post(&s, "/api/query", r#"{"db_id": "nope", "question": "q"}"#).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(v["error"].is_string());
    assert_eq!(post(&s, "/api/query", "{not json").await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(post(&s, "/api/query", r#"{"db_id": "financial"}"#).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(
        post(&s, "/api/query", r#"{"db_id": "financial", "question": "  "}"#).await.0,
        StatusCode::UNPROCESSABLE_ENTITY
    );
    let (status, v) = post(&s, "/api/query", r#"{"db_id": "financial", "question": "q"}"#).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY, "{v}");
    assert!(v["error"].as_str().unwrap().contains("upstream down"));
}

#[tokio::test]
async fn curate_then_hints_are_served_and_used() {
    let ws = Workspace::scripted(&[
        step("hint_curation", TWO_HINTS),
        step("generation", "SELECT loan_id FROM loan WHERE status = 'A'"),
    ]);
    let s = state(&ws);
    assert_eq!(get(&s, "/api/databases/financial/hints").await.0, StatusCode::NOT_FOUND);

    let body = json!({ "history": serde_json::from_str::<Value>(HISTORY).unwrap() }).to_string();
    let (status, v) = post(&s, "/api/databases/financial/hints/curate", &body).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["hints"].as_array().unwrap().len(), 2);
    assert_eq!(v["source_query_ids"], json!(["h1", "h2"]));
    assert!(ws.path("hints/financial.json").is_file());

    let (status, v) = get(&s, "/api/databases/financial/hints").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["hints"][1]["description"], "Accounts per region.");
    assert_eq!(get(&s, "/api/databases").await.1[0]["has_hints"], true);

    let (status, v) = post(&s, "/api/query", r#"{"db_id": "financial", "question": "Finished loans?"}"#).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["hints_used"], 2);
}

#[tokio::test]
async fn curate_rejects_bad_input_and_concurrent_runs() {
    let ws = Workspace::scripted(&[step("hint_curation", "no json here"), step("hint_curation", "still none")]);
    let s = state(&ws);
    let uri = "/api/databases/financial/hints/curate";
    assert_eq!(post(&s, uri, r#"{"history": []}"#).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(post(&s, uri, r#"{"hist": []}"#).await.0, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(post(&s, "/api/databases/nope/hints/curate", r#"{"history": []}"#).await.0, StatusCode::NOT_FOUND);

    let body = json!({ "history": serde_json::from_str::<Value>(HISTORY).unwrap() }).to_string();
    {
        let _held = s.app.locks.try_acquire("financial").unwrap();
        let (status, v) = post(&s, uri, &body).await;
        assert_eq!(status, StatusCode::CONFLICT, "{v}");
        // Other databases are not blocked.
        assert_ne!(post(&s, "/api/databases/school/hints/curate", r#"{"history": []}"#).await.0, StatusCode::CONFLICT);
    }
    let (status, v) = post(&s, uri, &body).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY, "{v}");
    assert!(s.app.locks.try_acquire("financial").is_some());
}

#[tokio::test]
async fn serves_console_assets_when_configured() {
    let ws = Workspace::scripted(&[]);
    std::fs::create_dir(ws.path("ui")).unwrap();
    ws.write("ui/index.html", "<html>console</html>");
    let mut text = std::fs::read_to_string(ws.config()).unwrap();
    text.insert_str(0, "ui_dir = \"ui\"\n");
    std::fs::write(ws.config(), text).unwrap();
    let s = state(&ws);
    let req = Request::builder().uri("/index.html").body(Body::empty()).unwrap();
    let resp = router(s).oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    assert_eq!(&bytes[..], b"<html>console</html>");
}

#[tokio::test]
async fn write_statements_never_reach_the_database() {
    let db = fixtures().join("db/financial.sqlite");
    let count = || {
        rusqlite::Connection::open_with_flags(&db, rusqlite::OpenFlags::SQLITE_OPEN_READ_ONLY)
            .unwrap()
            .query_row("SELECT COUNT(*) FROM loan", [], |r| r.get::<_, i64>(0))
            .unwrap()
    };
    let before = count();
    let writes = ["DELETE FROM loan", "DROP TABLE loan", "UPDATE loan SET amount = 0", "INSERT INTO loan VALUES (9, 1, '2000-01-01', 1, 1, 1.0, 'A')"];
    let mut steps = vec![step("generation", writes[0])];
    steps.extend(writes[1..].iter().map(|w| step("repair", w)));
    let ws = Workspace::scripted(&steps);
    let s = state(&ws);
    let (status, v) = post(&s, "/api/query", r#"{"db_id": "financial", "question": "Remove all loans"}"#).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["outcome"], "exhausted");
    assert!(v["attempts"].as_array().unwrap().iter().all(|a| a["outcome"] == "exec_error"));
    assert_eq!(count(), before);
}
