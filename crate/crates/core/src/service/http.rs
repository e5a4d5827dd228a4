//! JSON-over-HTTP API. Every handler authenticates with a bearer token and
//! runs the service call on the blocking pool.

use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, FromRequestParts, Multipart, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use serde::Deserialize;

use super::{
    CalibrateRequest, CreateTables, ManualAnnotation, PointRequest, Role, SearchQuery, Service, ServiceError, SettingsPatch,
};
use crate::csvout;
use crate::document::{MetaInfo, UserId};
use crate::integrate::{self, DocOverrides};
use crate::table::{EditOp, Stage};

type Svc = Arc<Service>;

pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError(ServiceError::BadRequest(e.body_text()))
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError(ServiceError::BadRequest(e.body_text()))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        if status.is_server_error() {
            tracing::error!(error = %self.0, "request failed");
        }
        (status, Json(self.0.body())).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Authenticated caller.
pub struct Caller(pub UserId);

impl FromRequestParts<Svc> for Caller {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, svc: &Svc) -> Result<Self, Self::Rejection> {
        let token = parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or(ServiceError::Unauthenticated)?
            .trim()
            .to_string();
        Ok(Caller(svc.authenticate(&token)?))
    }
}

async fn run<T: Send + 'static>(svc: Svc, f: impl FnOnce(&Service) -> Result<T, ServiceError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(move || f(&svc))
        .await
        .map_err(|e| ServiceError::Storage(format!("worker failed: {e}")))?
        .map_err(ApiError)
}

fn csv_response(body: String) -> Response {
    ([(header::CONTENT_TYPE, HeaderValue::from_static("text/csv; charset=utf-8"))], body).into_response()
}

fn jsonl_response(body: String) -> Response {
    ([(header::CONTENT_TYPE, HeaderValue::from_static("application/x-ndjson"))], body).into_response()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Credentials {
    username: String,
    password: String,
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn register(State(svc): State<Svc>, body: Result<Json<Credentials>, JsonRejection>) -> ApiResult<Response> {
    let Json(c) = body?;
    let u = run(svc, move |s| s.register(&c.username, &c.password)).await?;
    Ok((StatusCode::CREATED, Json(u)).into_response())
}

async fn login(State(svc): State<Svc>, body: Result<Json<Credentials>, JsonRejection>) -> ApiResult<Response> {
    let Json(c) = body?;
    Ok(Json(run(svc, move |s| s.login(&c.username, &c.password)).await?).into_response())
}

async fn logout(State(svc): State<Svc>, parts: axum::http::HeaderMap) -> StatusCode {
    if let Some(t) = parts.get(header::AUTHORIZATION).and_then(|v| v.to_str().ok()).and_then(|v| v.strip_prefix("Bearer ")) {
        svc.logout(t.trim());
    }
    StatusCode::NO_CONTENT
}

async fn me(State(svc): State<Svc>, Caller(u): Caller) -> ApiResult<Response> {
    Ok(Json(run(svc, move |s| s.user_view(&u)).await?).into_response())
}

async fn my_files(State(svc): State<Svc>, Caller(u): Caller) -> ApiResult<Response> {
    Ok(Json(run(svc, move |s| Ok(s.my_files(&u))).await?).into_response())
}

async fn recent(State(svc): State<Svc>, Caller(u): Caller) -> ApiResult<Response> {
    Ok(Json(run(svc, move |s| Ok(s.recent_files(&u))).await?).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewTeam {
    name: String,
}

async fn list_teams(State(svc): State<Svc>, Caller(u): Caller) -> ApiResult<Response> {
    Ok(Json(run(svc, move |s| Ok(s.list_teams(&u))).await?).into_response())
}

async fn create_team(State(svc): State<Svc>, Caller(u): Caller, body: Result<Json<NewTeam>, JsonRejection>) -> ApiResult<Response> {
    let Json(b) = body?;
    let t = run(svc, move |s| s.create_team(&u, &b.name)).await?;
    Ok((StatusCode::CREATED, Json(t)).into_response())
}

async fn get_team(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(run(svc, move |s| s.get_team(&u, &id)).await?).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewMember {
    #[serde(default)]
    user_id: Option<String>,
    #[serde(default)]
    username: Option<String>,
    role: Role,
}

async fn add_member(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>, body: Result<Json<NewMember>, JsonRejection>) -> ApiResult<Response> {
    let Json(b) = body?;
    let t = run(svc, move |s| {
        let target = match (b.user_id, b.username) {
            (Some(id), None) => id,
            (None, Some(name)) => s.user_id_by_name(&name)?,
            _ => return Err(ServiceError::BadRequest("give exactly one of user_id or username".into())),
        };
        s.add_member(&u, &id, &target, b.role)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(t)).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RoleChange {
    role: Role,
}

async fn set_role(
    State(svc): State<Svc>,
    Caller(u): Caller,
    Path((id, target)): Path<(String, String)>,
    body: Result<Json<RoleChange>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(b) = body?;
    Ok(Json(run(svc, move |s| s.set_role(&u, &id, &target, b.role)).await?).into_response())
}

async fn remove_member(State(svc): State<Svc>, Caller(u): Caller, Path((id, target)): Path<(String, String)>) -> ApiResult<Response> {
    Ok(Json(run(svc, move |s| s.remove_member(&u, &id, &target)).await?).into_response())
}

async fn search_team(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>, q: Result<Query<SearchQuery>, QueryRejection>) -> ApiResult<Response> {
    let Query(q) = q?;
    Ok(Json(run(svc, move |s| s.search_documents(&u, &id, &q)).await?).into_response())
}

#[derive(Deserialize)]
struct TeamFilter {
    team: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewProject {
    team_id: String,
    name: String,
}

async fn list_projects(State(svc): State<Svc>, Caller(u): Caller, q: Result<Query<TeamFilter>, QueryRejection>) -> ApiResult<Response> {
    let Query(q) = q?;
    Ok(Json(run(svc, move |s| s.list_projects(&u, q.team.as_deref())).await?).into_response())
}

async fn create_project(State(svc): State<Svc>, Caller(u): Caller, body: Result<Json<NewProject>, JsonRejection>) -> ApiResult<Response> {
    let Json(b) = body?;
    let p = run(svc, move |s| s.create_project(&u, &b.team_id, &b.name)).await?;
    Ok((StatusCode::CREATED, Json(p)).into_response())
}

async fn get_project(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(run(svc, move |s| s.get_project(&u, &id)).await?).into_response())
}

async fn delete_project(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>) -> ApiResult<StatusCode> {
    run(svc, move |s| s.delete_project(&u, &id)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn restore_project(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(run(svc, move |s| s.restore_project(&u, &id)).await?).into_response())
}

async fn settings(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>, body: Result<Json<SettingsPatch>, JsonRejection>) -> ApiResult<Response> {
    let Json(b) = body?;
    Ok(Json(run(svc, move |s| s.update_settings(&u, &id, b)).await?).into_response())
}

/// Multipart upload; every part with a file name is imported. A single
/// failed file answers with its error, otherwise per-file outcomes.
async fn import(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>, mut mp: Multipart) -> ApiResult<Response> {
    let mut files = Vec::new();
    loop {
        let field = mp.next_field().await.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
        let Some(field) = field else { break };
        let name = field.file_name().map(str::to_string).unwrap_or_else(|| format!("upload-{}.pdf", files.len() + 1));
        let bytes = field.bytes().await.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
        files.push((name, bytes.to_vec()));
    }
    if files.is_empty() {
        return Err(ServiceError::BadRequest("no files in upload".into()).into());
    }
    let jobs = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let single = files.len() == 1;
    let out = run(svc, move |s| s.import_files(&u, &id, files, jobs)).await?;
    if single {
        if let Some(e) = &out[0].error {
            return Ok((StatusCode::UNPROCESSABLE_ENTITY, Json(e.clone())).into_response());
        }
    }
    Ok((StatusCode::CREATED, Json(out)).into_response())
}

async fn list_files(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>, q: Result<Query<SearchQuery>, QueryRejection>) -> ApiResult<Response> {
    let Query(q) = q?;
    Ok(Json(run(svc, move |s| s.list_files(&u, &id, &q)).await?).into_response())
}

async fn project_summary(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(run(svc, move |s| s.integrate_project(&u, &id)).await?).into_response())
}

async fn project_summary_csv(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>) -> ApiResult<Response> {
    let t = run(svc, move |s| s.integrate_project(&u, &id)).await?;
    Ok(csv_response(integrate::export_csv(&t)))
}

async fn project_provenance_csv(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>) -> ApiResult<Response> {
    let t = run(svc, move |s| s.integrate_project(&u, &id)).await?;
    Ok(csv_response(integrate::export_provenance_csv(&t)))
}

async fn training_data(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(jsonl_response(run(svc, move |s| s.training_data(&u, &id)).await?))
}

async fn get_file(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(run(svc, move |s| s.file_summary(&u, &id)).await?).into_response())
}

async fn lock_status(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(run(svc, move |s| s.lock_status(&u, &id)).await?).into_response())
}

async fn acquire_lock(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(run(svc, move |s| s.acquire_lock(&u, &id)).await?).into_response())
}

async fn release_lock(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>) -> ApiResult<StatusCode> {
    run(svc, move |s| s.release_lock(&u, &id)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn take_charge(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(run(svc, move |s| s.take_charge(&u, &id)).await?).into_response())
}

async fn release_charge(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>) -> ApiResult<StatusCode> {
    run(svc, move |s| s.release_charge(&u, &id)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn get_meta(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(run(svc, move |s| s.get_meta(&u, &id)).await?).into_response())
}

async fn put_meta(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>, body: Result<Json<MetaInfo>, JsonRejection>) -> ApiResult<Response> {
    let Json(m) = body?;
    Ok(Json(run(svc, move |s| s.put_meta(&u, &id, m)).await?).into_response())
}

async fn get_page(State(svc): State<Svc>, Caller(u): Caller, Path((id, n)): Path<(String, usize)>) -> ApiResult<Response> {
    Ok(Json(run(svc, move |s| s.get_page(&u, &id, n)).await?).into_response())
}

async fn get_pdf(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>) -> ApiResult<Response> {
    let bytes = run(svc, move |s| s.pdf_bytes(&u, &id)).await?;
    Ok(([(header::CONTENT_TYPE, HeaderValue::from_static("application/pdf"))], bytes).into_response())
}

async fn list_tables(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(run(svc, move |s| s.list_tables(&u, &id)).await?).into_response())
}

async fn create_tables(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>, body: Result<Json<CreateTables>, JsonRejection>) -> ApiResult<Response> {
    let Json(b) = body?;
    let t = run(svc, move |s| s.create_tables(&u, &id, b)).await?;
    Ok((StatusCode::CREATED, Json(t)).into_response())
}

async fn get_table(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(run(svc, move |s| s.get_table(&u, &id)).await?).into_response())
}

async fn delete_table(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>) -> ApiResult<StatusCode> {
    run(svc, move |s| s.delete_table(&u, &id)).await?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StageChange {
    to: Stage,
    #[serde(default)]
    ocr: Option<String>,
}

async fn table_stage(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>, body: Result<Json<StageChange>, JsonRejection>) -> ApiResult<Response> {
    let Json(b) = body?;
    Ok(Json(run(svc, move |s| s.table_stage(&u, &id, b.to, b.ocr.as_deref())).await?).into_response())
}

async fn table_edit(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>, body: Result<Json<EditOp>, JsonRejection>) -> ApiResult<Response> {
    let Json(op) = body?;
    Ok(Json(run(svc, move |s| s.table_edit(&u, &id, op)).await?).into_response())
}

#[derive(Deserialize)]
struct Format {
    format: Option<String>,
}

async fn table_export(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>, q: Result<Query<Format>, QueryRejection>) -> ApiResult<Response> {
    let Query(q) = q?;
    let m = run(svc, move |s| s.export_table(&u, &id)).await?;
    match q.format.as_deref() {
        None | Some("json") => Ok(Json(m).into_response()),
        Some("csv") => {
            let mut out = String::new();
            for row in &m {
                csvout::push_row(&mut out, row);
            }
            Ok(csv_response(out))
        }
        Some(f) => Err(ServiceError::BadRequest(format!("unknown format {f:?}")).into()),
    }
}

async fn table_log(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>) -> ApiResult<Response> {
    let t = run(svc, move |s| s.get_table(&u, &id)).await?;
    Ok(jsonl_response(t.edit_log_jsonl()))
}

#[derive(Deserialize)]
struct Hidden {
    #[serde(default)]
    include_hidden: bool,
}

async fn list_annotations(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>, q: Result<Query<Hidden>, QueryRejection>) -> ApiResult<Response> {
    let Query(q) = q?;
    Ok(Json(run(svc, move |s| s.list_annotations(&u, &id, q.include_hidden)).await?).into_response())
}

async fn add_annotation(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>, body: Result<Json<ManualAnnotation>, JsonRejection>) -> ApiResult<Response> {
    let Json(b) = body?;
    let a = run(svc, move |s| s.add_annotation(&u, &id, b)).await?;
    Ok((StatusCode::CREATED, Json(a)).into_response())
}

async fn auto_annotate(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(run(svc, move |s| s.auto_annotate(&u, &id)).await?).into_response())
}

async fn annotations_csv(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(csv_response(run(svc, move |s| s.annotations_csv(&u, &id)).await?))
}

async fn list_maps(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(run(svc, move |s| s.list_maps(&u, &id)).await?).into_response())
}

async fn calibrate(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>, body: Result<Json<CalibrateRequest>, JsonRejection>) -> ApiResult<Response> {
    let Json(b) = body?;
    let m = run(svc, move |s| s.calibrate_map(&u, &id, b)).await?;
    Ok((StatusCode::CREATED, Json(m)).into_response())
}

async fn list_points(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(run(svc, move |s| s.list_points(&u, &id)).await?).into_response())
}

async fn add_point(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>, body: Result<Json<PointRequest>, JsonRejection>) -> ApiResult<Response> {
    let Json(b) = body?;
    let p = run(svc, move |s| s.add_point(&u, &id, b)).await?;
    Ok((StatusCode::CREATED, Json(p)).into_response())
}

async fn points_csv(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>) -> ApiResult<Response> {
    let pts = run(svc, move |s| s.list_points(&u, &id)).await?;
    Ok(csv_response(crate::map::geo_points_csv(&pts)))
}

async fn get_overrides(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(run(svc, move |s| s.get_overrides(&u, &id)).await?).into_response())
}

async fn put_overrides(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>, body: Result<Json<DocOverrides>, JsonRejection>) -> ApiResult<Response> {
    let Json(b) = body?;
    Ok(Json(run(svc, move |s| s.set_overrides(&u, &id, b)).await?).into_response())
}

async fn file_summary(State(svc): State<Svc>, Caller(u): Caller, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(run(svc, move |s| s.integrate_file(&u, &id)).await?).into_response())
}

async fn not_found() -> ApiError {
    ApiError(ServiceError::NotFound("route".into()))
}

pub fn router(svc: Svc) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/auth/register", post(register))
        .route("/auth/login", post(login))
        .route("/auth/logout", post(logout))
        .route("/me", get(me))
        .route("/me/files", get(my_files))
        .route("/me/recent", get(recent))
        .route("/teams", get(list_teams).post(create_team))
        .route("/teams/{id}", get(get_team))
        .route("/teams/{id}/members", post(add_member))
        .route("/teams/{id}/members/{uid}", patch(set_role).delete(remove_member))
        .route("/teams/{id}/search", get(search_team))
        .route("/projects", get(list_projects).post(create_project))
        .route("/projects/{id}", get(get_project).delete(delete_project))
        .route("/projects/{id}/restore", post(restore_project))
        .route("/projects/{id}/settings", patch(settings))
        .route("/projects/{id}/files", get(list_files).post(import))
        .route("/projects/{id}/summary", get(project_summary))
        .route("/projects/{id}/summary.csv", get(project_summary_csv))
        .route("/projects/{id}/provenance.csv", get(project_provenance_csv))
        .route("/projects/{id}/training-data", get(training_data))
        .route("/files/{id}", get(get_file))
        .route("/files/{id}/lock", get(lock_status).post(acquire_lock).delete(release_lock))
        .route("/files/{id}/charge", post(take_charge).delete(release_charge))
        .route("/files/{id}/meta", get(get_meta).put(put_meta))
        .route("/files/{id}/pages/{n}", get(get_page))
        .route("/files/{id}/pdf", get(get_pdf))
        .route("/files/{id}/tables", get(list_tables).post(create_tables))
        .route("/files/{id}/annotations", get(list_annotations).post(add_annotation))
        .route("/files/{id}/annotations/auto", post(auto_annotate))
        .route("/files/{id}/annotations.csv", get(annotations_csv))
        .route("/files/{id}/maps", get(list_maps).post(calibrate))
        .route("/files/{id}/points", get(list_points).post(add_point))
        .route("/files/{id}/points.csv", get(points_csv))
        .route("/files/{id}/overrides", get(get_overrides).put(put_overrides))
        .route("/files/{id}/summary", get(file_summary))
        .route("/tables/{id}", get(get_table).delete(delete_table))
        .route("/tables/{id}/stage", post(table_stage))
        .route("/tables/{id}/edits", post(table_edit))
        .route("/tables/{id}/export", get(table_export))
        .route("/tables/{id}/log", get(table_log))
        .fallback(not_found)
        .layer(DefaultBodyLimit::max(256 * 1024 * 1024))
        .with_state(svc)
}

/// Serve until `shutdown` resolves, finishing in-flight requests.
pub async fn serve_until(listener: tokio::net::TcpListener, svc: Svc, shutdown: impl std::future::Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    axum::serve(listener, router(svc)).with_graceful_shutdown(shutdown).await
}
