use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use quiz_core::allocation::AllocationPolicy;
use quiz_core::bank::{Answer, Item, ItemBank};
use quiz_service::{router, SessionStore, SharedStore};
use serde_json::{json, Value};
use tower::ServiceExt;

fn bank() -> ItemBank {
    ItemBank {
        bank_id: "stats".into(),
        title: "Statistics".into(),
        items: (0..6)
            .map(|i| Item {
                item_id: format!("s{i}"),
                stem: format!("Question {i}"),
                answers: ["right", "wrong a", "wrong b"]
                    .iter()
                    .enumerate()
                    .map(|(k, t)| Answer {
                        text: t.to_string(),
                        correct: k == 0,
                    })
                    .collect(),
                shuffle: true,
                times_answered: 0,
                times_correct: 0,
            })
            .collect(),
    }
}

fn app() -> (Router, SharedStore) {
    let mut store = SessionStore::seeded(AllocationPolicy::default(), 3);
    store.add_bank(bank()).unwrap();
    let shared = Arc::new(Mutex::new(store));
    (router(shared.clone()), shared)
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, String) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

async fn call_json(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, text) = call(app, method, uri, body).await;
    (status, serde_json::from_str(&text).unwrap_or(Value::Null))
}

async fn register(app: &Router, name: &str) -> String {
    let (status, v) = call_json(app, Method::POST, "/students", Some(json!({"name": name, "consent": true}))).await;
    assert_eq!(status, StatusCode::CREATED);
    v["student_id"].as_str().unwrap().to_string()
}

async fn answer(app: &Router, student: &str, correct: bool) -> Value {
    let (status, q) = call_json(app, Method::POST, "/banks/stats/question", Some(json!({"student_id": student}))).await;
    assert_eq!(status, StatusCode::OK);
    let answers: Vec<&str> = q["answers"].as_array().unwrap().iter().map(|a| a.as_str().unwrap()).collect();
    let idx = answers.iter().position(|a| (*a == "right") == correct).unwrap();
    let (status, r) = call_json(
        app,
        Method::POST,
        "/banks/stats/answer",
        Some(json!({"student_id": student, "question_token": q["question_token"], "presented_index": idx})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    r
}

#[tokio::test]
async fn register_and_list_banks() {
    let (app, _) = app();
    let (status, v) = call_json(&app, Method::POST, "/students", Some(json!({"name": "Gunnar"}))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(v, json!({"student_id": "gunnar", "name": "Gunnar", "consent": false}));

    let (status, v) = call_json(&app, Method::POST, "/students", Some(json!({"name": ""}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().contains("empty"));

    let (status, v) = call_json(&app, Method::GET, "/banks", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v, json!([{"bank_id": "stats", "title": "Statistics", "n_items": 6}]));
}

#[tokio::test]
async fn question_hides_the_key() {
    let (app, _) = app();
    let id = register(&app, "k").await;
    let (_, q) = call_json(&app, Method::POST, "/banks/stats/question", Some(json!({"student_id": id}))).await;
    let obj = q.as_object().unwrap();
    let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
    keys.sort();
    assert_eq!(keys, ["answers", "bank_id", "item_id", "question_token", "stem"]);
    let (_, again) = call_json(&app, Method::POST, "/banks/stats/question", Some(json!({"student_id": id}))).await;
    assert_eq!(q, again);
}

#[tokio::test]
async fn answer_flow_and_grade() {
    let (app, _) = app();
    let id = register(&app, "flow").await;
    let r = answer(&app, &id, true).await;
    assert_eq!(r, json!({"correct": true, "raw_score": 1.0, "grade": 0.125, "answered_count": 1}));
    let r = answer(&app, &id, false).await;
    assert_eq!(r["correct"], false);
    assert_eq!(r["raw_score"], 0.5);

    let (status, g) = call_json(&app, Method::GET, &format!("/banks/stats/grade?student_id={id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(g, json!({"raw_score": 0.5, "grade": 0.0625, "answered_count": 2}));
}

#[tokio::test]
async fn double_submit_logs_once() {
    let (app, store) = app();
    let id = register(&app, "dbl").await;
    let (_, q) = call_json(&app, Method::POST, "/banks/stats/question", Some(json!({"student_id": id}))).await;
    let body = json!({"student_id": id, "question_token": q["question_token"], "presented_index": 0});
    let (first, _) = call(&app, Method::POST, "/banks/stats/answer", Some(body.clone())).await;
    let (second, v) = call_json(&app, Method::POST, "/banks/stats/answer", Some(body)).await;
    assert_eq!(first, StatusCode::OK);
    assert_eq!(second, StatusCode::CONFLICT);
    assert!(v["error"].is_string());
    assert_eq!(store.lock().unwrap().records().len(), 1);
}

#[tokio::test]
async fn error_statuses() {
    let (app, _) = app();
    let id = register(&app, "err").await;
    let (s, _) = call(&app, Method::POST, "/banks/stats/question", Some(json!({"student_id": "ghost"}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, Method::POST, "/banks/none/question", Some(json!({"student_id": id}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, Method::GET, &format!("/banks/none/grade?student_id={id}"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (_, q) = call_json(&app, Method::POST, "/banks/stats/question", Some(json!({"student_id": id}))).await;
    let (s, _) = call(
        &app,
        Method::POST,
        "/banks/stats/answer",
        Some(json!({"student_id": id, "question_token": q["question_token"], "presented_index": 3})),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(
        &app,
        Method::POST,
        "/banks/stats/answer",
        Some(json!({"student_id": id, "question_token": "nope", "presented_index": 0})),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
    // Malformed bodies are rejected by the extractor.
    let (s, _) = call(&app, Method::POST, "/students", Some(json!({"nom": "x"}))).await;
    assert!(s.is_client_error());
}

#[tokio::test]
async fn export_ndjson_range() {
    let (app, store) = app();
    {
        let mut s = store.lock().unwrap();
        let t = std::sync::atomic::AtomicI64::new(0);
        let base = chrono::DateTime::parse_from_rfc3339("2012-02-01T10:00:00Z").unwrap().to_utc();
        s.set_clock(move || base + chrono::Duration::minutes(t.fetch_add(1, std::sync::atomic::Ordering::SeqCst)));
    }
    let id = register(&app, "exp").await;
    for k in 0..5 {
        answer(&app, &id, k % 2 == 0).await;
    }

    let (status, all) = call(&app, Method::GET, "/admin/export", None).await;
    assert_eq!(status, StatusCode::OK);
    let records = quiz_core::log::parse_log(all.as_bytes()).unwrap();
    assert_eq!(records, store.lock().unwrap().records());

    // Registration took minute 0, answers minutes 1..=5.
    let (_, some) = call(&app, Method::GET, "/admin/export?from=2012-02-01T10:02:00Z&to=2012-02-01T10:04:00Z", None).await;
    let records = quiz_core::log::parse_log(some.as_bytes()).unwrap();
    assert_eq!(records.iter().map(|r| r.seq).collect::<Vec<_>>(), [2, 3]);

    let (status, none) = call(&app, Method::GET, "/admin/export?from=2013-01-01T00:00:00Z", None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(none.is_empty());
}
