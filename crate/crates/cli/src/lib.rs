//! HTTP API over the project service.
//!
//! Every error response is `{"code": ..., "message": ...}`; rejected
//! uploads add a `diagnostics` list.

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use tablesmith_core::editor::EditOp;
use tablesmith_core::project::{ProjectError, Service, UploadFile};

pub struct ApiError(ProjectError);

impl From<ProjectError> for ApiError {
    fn from(e: ProjectError) -> Self {
        Self(e)
    }
}

pub fn status_for(code: &str) -> StatusCode {
    match code {
        "not_found" => StatusCode::NOT_FOUND,
        "busy" | "not_extracted" | "not_draft" | "nothing_to_train" => StatusCode::CONFLICT,
        "invalid_request" => StatusCode::BAD_REQUEST,
        "invalid_documents" | "invalid_edit" | "tiling_violation" | "overlap" => StatusCode::UNPROCESSABLE_ENTITY,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let code = self.0.code();
        let mut body = json!({ "code": code, "message": self.0.to_string() });
        if let ProjectError::InvalidDocuments(d) = &self.0 {
            body["diagnostics"] = json!(d);
        }
        (status_for(code), Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn invalid(msg: impl Into<String>) -> ApiError {
    ApiError(ProjectError::Invalid(msg.into()))
}

/// Parses a request body; an empty body reads as `{}`.
fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    let text: &[u8] = if body.iter().all(u8::is_ascii_whitespace) { b"{}" } else { body };
    serde_json::from_slice(text).map_err(|e| invalid(e.to_string()))
}

/// Runs a service call off the async workers; the service blocks on locks
/// and disk.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ProjectError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| invalid(format!("request task failed: {e}")))?
        .map_err(ApiError)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    name: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DocumentsBody {
    files: Vec<UploadFile>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FinetuneBody {
    #[serde(default)]
    base: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelBody {
    version_id: String,
}

#[derive(Deserialize, Serialize, Default)]
pub struct ModelsQuery {
    pub project: Option<String>,
}

pub fn router(service: Service) -> Router {
    Router::new()
        .route("/projects", post(create_project).get(list_projects))
        .route("/projects/{id}", get(get_project))
        .route("/projects/{id}/documents", post(add_documents))
        .route("/projects/{id}/extract", post(run_extraction))
        .route("/projects/{id}/pages", get(list_pages))
        .route("/projects/{id}/pages/{pid}", get(get_page))
        .route("/projects/{id}/pages/{pid}/ops/{op}", post(page_op))
        .route("/projects/{id}/finetune", post(finetune))
        .route("/projects/{id}/jobs/{job}", get(get_job))
        .route("/models", get(list_models))
        .route("/projects/{id}/model", post(select_model))
        .route("/projects/{id}/bases", get(compare_bases))
        .route("/projects/{id}/export", get(export))
        .route("/projects/{id}/import", post(import))
        .route("/projects/{id}/progress", get(progress))
        .with_state(service)
}

async fn create_project(State(svc): State<Service>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let body: CreateBody = parse_body(&body)?;
    let info = blocking(move || svc.create_project(&body.name)).await?;
    Ok((StatusCode::CREATED, Json(info)))
}

async fn list_projects(State(svc): State<Service>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(move || Ok(svc.list_projects())).await?))
}

async fn get_project(State(svc): State<Service>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(move || svc.project(&id)).await?))
}

async fn add_documents(State(svc): State<Service>, Path(id): Path<String>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let body: DocumentsBody = parse_body(&body)?;
    let (added, info) = blocking(move || {
        let added = svc.add_documents(&id, &body.files)?;
        Ok((added, svc.project(&id)?))
    })
    .await?;
    Ok(Json(json!({ "added": added, "pages": info.pages })))
}

async fn run_extraction(State(svc): State<Service>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let job = blocking(move || svc.run_extraction(&id)).await?;
    Ok((StatusCode::ACCEPTED, Json(job)))
}

async fn list_pages(State(svc): State<Service>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(move || svc.list_pages(&id)).await?))
}

async fn get_page(State(svc): State<Service>, Path((id, pid)): Path<(String, String)>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(move || svc.get_page(&id, &pid)).await?))
}

/// `{op}` names the operation; the body holds its parameters.
async fn page_op(
    State(svc): State<Service>,
    Path((id, pid, op)): Path<(String, String, String)>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let mut params: Value = parse_body(&body)?;
    let detail = if op == "submit" {
        blocking(move || svc.submit(&id, &pid)).await?
    } else {
        let obj = params
            .as_object_mut()
            .ok_or_else(|| invalid("operation parameters must be a JSON object"))?;
        obj.insert("op".into(), Value::String(op));
        let op: EditOp = serde_json::from_value(params).map_err(|e| invalid(e.to_string()))?;
        blocking(move || svc.apply_op(&id, &pid, op)).await?
    };
    Ok(Json(detail))
}

async fn finetune(State(svc): State<Service>, Path(id): Path<String>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let body: FinetuneBody = parse_body(&body)?;
    let job = blocking(move || svc.start_finetune(&id, body.base.as_deref())).await?;
    Ok((StatusCode::ACCEPTED, Json(job)))
}

async fn get_job(State(svc): State<Service>, Path((id, job)): Path<(String, String)>) -> ApiResult<impl IntoResponse> {
    let info = blocking(move || svc.get_job(&job)).await?;
    if info.project_id != id {
        return Err(ApiError(ProjectError::NotFound(format!("job {}", info.job_id))));
    }
    Ok(Json(info))
}

async fn list_models(State(svc): State<Service>, Query(q): Query<ModelsQuery>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(move || svc.list_models(q.project.as_deref())).await?))
}

async fn compare_bases(State(svc): State<Service>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(move || svc.compare_bases(&id)).await?))
}

async fn select_model(State(svc): State<Service>, Path(id): Path<String>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let body: ModelBody = parse_body(&body)?;
    Ok(Json(blocking(move || svc.select_model(&id, &body.version_id)).await?))
}

async fn export(State(svc): State<Service>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let name = format!("attachment; filename=\"{id}-annotations.tar\"");
    let bytes = blocking(move || svc.export(&id)).await?;
    Ok((
        [(header::CONTENT_TYPE, "application/x-tar".to_string()), (header::CONTENT_DISPOSITION, name)],
        bytes,
    ))
}

async fn import(State(svc): State<Service>, Path(id): Path<String>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let n = blocking(move || svc.import(&id, &body)).await?;
    Ok(Json(json!({ "imported": n })))
}

async fn progress(State(svc): State<Service>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(move || svc.get_progress(&id)).await?))
}
