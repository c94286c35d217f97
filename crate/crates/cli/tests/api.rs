use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use tablesmith_core::corpus::{generate_collection, TemplateSpec};
use tablesmith_core::project::Service;

async fn send(app: &Router, method: &str, uri: &str, body: &str) -> (StatusCode, Value, Option<String>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let ctype = resp.headers().get("content-type").map(|v| v.to_str().unwrap().to_string());
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value, ctype)
}

fn app() -> (tempfile::TempDir, Router) {
    let dir = tempfile::tempdir().unwrap();
    let app = tablesmith_cli::router(Service::open(dir.path()).unwrap());
    (dir, app)
}

async fn project_with_pages(app: &Router) -> String {
    let (s, v, _) = send(app, "POST", "/projects", r#"{"name":"api"}"#).await;
    assert_eq!(s, StatusCode::CREATED);
    let id = v["project_id"].as_str().unwrap().to_string();
    let corpus = generate_collection(&[(TemplateSpec::default(), 2)]).unwrap();
    let files: Vec<Value> = corpus
        .pages
        .iter()
        .map(|g| json!({"name": format!("{}.json", g.page.page_id), "content": g.page.to_json()}))
        .collect();
    let (s, v, _) = send(app, "POST", &format!("/projects/{id}/documents"), &json!({"files": files}).to_string()).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["added"], 2);
    id
}

#[tokio::test]
async fn errors_carry_code_and_status() {
    let (_dir, app) = app();
    let (s, v, _) = send(&app, "GET", "/projects/nope", "").await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));

    let (s, v, _) = send(&app, "POST", "/projects", "{not json").await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid_request")));

    let id = project_with_pages(&app).await;
    let (s, v, _) = send(&app, "POST", &format!("/projects/{id}/documents"), r#"{"files":[{"name":"bad.json","content":"{}"}]}"#).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("invalid_documents")));
    assert_eq!(v["diagnostics"][0]["file"], "bad.json");

    // Not extracted yet: editing and submitting are refused.
    let (s, v, _) = send(&app, "POST", &format!("/projects/{id}/pages/p00-000/ops/submit"), "").await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::CONFLICT, Some("not_extracted")));

    let (s, v, _) = send(&app, "POST", &format!("/projects/{id}/finetune"), "{}").await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::CONFLICT, Some("nothing_to_train")));

    let (s, v, _) = send(&app, "POST", &format!("/projects/{id}/pages/p00-000/ops/fold_table"), "{}").await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid_request")));

    let (s, v, _) = send(&app, "POST", &format!("/projects/{id}/model"), r#"{"version_id":"nope"}"#).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));
}

#[tokio::test]
async fn extraction_job_then_review() {
    let (_dir, app) = app();
    let id = project_with_pages(&app).await;
    let (s, job, _) = send(&app, "POST", &format!("/projects/{id}/extract"), "").await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let job_id = job["job_id"].as_str().unwrap();
    let done = loop {
        let (s, v, _) = send(&app, "GET", &format!("/projects/{id}/jobs/{job_id}"), "").await;
        assert_eq!(s, StatusCode::OK);
        if v["status"] != "running" {
            break v;
        }
        tokio::time::sleep(std::time::Duration::from_millis(20)).await;
    };
    assert_eq!(done["status"], "done");

    let (_, pages, _) = send(&app, "GET", &format!("/projects/{id}/pages"), "").await;
    assert_eq!(pages.as_array().unwrap().len(), 2);
    assert_eq!(pages[0]["recommendation"], "impact");

    let (s, page, _) = send(&app, "GET", &format!("/projects/{id}/pages/p00-001"), "").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(page["model_version"], "base-general");
    assert!(page["html"][0].as_str().unwrap().starts_with("<table"));

    let (s, v, _) = send(&app, "POST", &format!("/projects/{id}/pages/p00-001/ops/delete_table"), r#"{"table_id":"t9"}"#).await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));

    let (s, _, _) = send(&app, "POST", &format!("/projects/{id}/pages/p00-001/ops/submit"), "").await;
    assert_eq!(s, StatusCode::OK);
    let (s, v, _) = send(&app, "POST", &format!("/projects/{id}/pages/p00-001/ops/submit"), "").await;
    assert_eq!((s, v["code"].as_str()), (StatusCode::CONFLICT, Some("not_draft")));

    let (_, progress, _) = send(&app, "GET", &format!("/projects/{id}/progress"), "").await;
    assert_eq!((progress["pages"].as_u64(), progress["submitted"].as_u64()), (Some(2), Some(1)));
    assert_eq!(progress["job_state"], "idle");

    let (s, _, ctype) = send(&app, "GET", &format!("/projects/{id}/export"), "").await;
    assert_eq!((s, ctype.as_deref()), (StatusCode::OK, Some("application/x-tar")));

    let (s, bases, _) = send(&app, "GET", &format!("/projects/{id}/bases"), "").await;
    assert_eq!(s, StatusCode::OK);
    assert!(bases.as_array().unwrap().iter().all(|b| b["pages"] == 2));

    let (_, models, _) = send(&app, "GET", &format!("/models?project={id}"), "").await;
    let active: Vec<&Value> = models.as_array().unwrap().iter().filter(|m| m["active"] == true).collect();
    assert_eq!(active.len(), 1);
    assert_eq!(active[0]["version_id"], "base-general");
}
