//! HTTP delineation service: serves imagery and the likelihood-annotated
//! network of loaded projects, answers path suggestions, and keeps an
//! ordered session log from which the boundary set can be replayed.

mod error;
mod project;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::extract::rejection::{JsonRejection, PathRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use delinkit_core::evaluation::{correctness_report, overlay_confusion, session_stats};
use delinkit_core::formats::read_lines;
use delinkit_core::geo::Polyline;
use delinkit_core::session::EventKind;
use serde::Deserialize;
use serde_json::{json, Value};

pub use error::ServiceError;
pub use project::{
    category_name, parse_category, parse_geometry, replay, Boundary, Project, ProjectRequest,
    ProjectState, Rejection, ReplayError, Suggestion,
};

/// All loaded projects. Reads run concurrently; each project serializes
/// its own mutations.
#[derive(Debug, Default)]
pub struct Store {
    projects: RwLock<BTreeMap<String, Arc<Project>>>,
    counter: AtomicU64,
}

impl Store {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next_id(&self) -> String {
        format!("p{}", self.counter.fetch_add(1, Ordering::SeqCst) + 1)
    }

    pub fn insert(&self, project: Project) -> Arc<Project> {
        let project = Arc::new(project);
        self.projects
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(project.id.clone(), project.clone());
        project
    }

    pub fn get(&self, id: &str) -> Result<Arc<Project>, ServiceError> {
        self.projects
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("project {id}")))
    }
}

type AppState = Arc<Store>;

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/projects", post(create_project))
        .route("/projects/:id/image/meta", get(image_meta))
        .route("/projects/:id/image/data", get(image_data))
        .route("/projects/:id/network", get(network))
        .route("/projects/:id/suggest", post(suggest))
        .route("/projects/:id/boundaries", post(accept).get(boundaries))
        .route("/projects/:id/boundaries/:bid", put(edit).delete(delete))
        .route("/projects/:id/session", get(session).post(log_event))
        .route("/projects/:id/stats", get(stats))
        .route("/projects/:id/evaluate", post(evaluate))
        .fallback(|| async { ServiceError::NotFound("no such route".into()) })
        .with_state(store)
}

pub async fn serve(addr: SocketAddr, store: Arc<Store>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(store)).await
}

fn body<T>(b: Result<Json<T>, JsonRejection>) -> Result<T, ServiceError> {
    b.map(|Json(v)| v).map_err(|e| ServiceError::Invalid(e.body_text()))
}

fn ids<T>(p: Result<Path<T>, PathRejection>) -> Result<T, ServiceError> {
    p.map(|Path(v)| v).map_err(|e| ServiceError::NotFound(e.body_text()))
}

fn geojson(text: String) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], text).into_response()
}

async fn create_project(
    State(store): State<AppState>,
    req: Result<Json<ProjectRequest>, JsonRejection>,
) -> Result<Response, ServiceError> {
    let req = body(req)?;
    let id = store.next_id();
    let project = tokio::task::spawn_blocking(move || Project::load(id, &req))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))??;
    let project = store.insert(project);
    log::info!(
        "loaded project {} ({} nodes, {} edges)",
        project.id,
        project.network.node_count(),
        project.network.edge_count()
    );
    Ok((StatusCode::CREATED, Json(json!({ "id": project.id }))).into_response())
}

async fn image_meta(
    State(store): State<AppState>,
    id: Result<Path<String>, PathRejection>,
) -> Result<Json<Value>, ServiceError> {
    let p = store.get(&ids(id)?)?;
    Ok(Json(json!({
        "id": p.id,
        "name": p.name,
        "rows": p.rgb.rows(),
        "cols": p.rgb.cols(),
        "bands": 3,
        "georef": p.rgb.georef(),
        "gsd": p.rgb.georef().gsd(),
    })))
}

async fn image_data(
    State(store): State<AppState>,
    id: Result<Path<String>, PathRejection>,
) -> Result<Response, ServiceError> {
    let p = store.get(&ids(id)?)?;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], p.image_bytes()).into_response())
}

#[derive(Deserialize)]
struct NetworkQuery {
    min_likelihood: Option<f64>,
}

async fn network(
    State(store): State<AppState>,
    id: Result<Path<String>, PathRejection>,
    q: Result<Query<NetworkQuery>, QueryRejection>,
) -> Result<Response, ServiceError> {
    let p = store.get(&ids(id)?)?;
    let q = q.map_err(|e| ServiceError::Invalid(e.body_text()))?;
    let min = q.min_likelihood.unwrap_or(0.0);
    if !(0.0..=1.0).contains(&min) {
        return Err(ServiceError::Invalid(format!("min_likelihood {min} outside [0, 1]")));
    }
    Ok(geojson(p.network_geojson(min)))
}

#[derive(Deserialize)]
struct SuggestRequest {
    clicks: Vec<[f64; 2]>,
    #[serde(default)]
    close: bool,
}

async fn suggest(
    State(store): State<AppState>,
    id: Result<Path<String>, PathRejection>,
    req: Result<Json<SuggestRequest>, JsonRejection>,
) -> Result<Response, ServiceError> {
    let p = store.get(&ids(id)?)?;
    let req = body(req)?;
    if req.clicks.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ServiceError::Invalid("click coordinates must be finite".into()));
    }
    let mut st = p.lock();
    let t = p.now_ms();
    Ok(match p.suggest(&mut st, t, &req.clicks, req.close) {
        Ok(s) => Json(s).into_response(),
        Err(r) => (StatusCode::UNPROCESSABLE_ENTITY, Json(r)).into_response(),
    })
}

#[derive(Deserialize)]
struct AcceptRequest {
    geometry: Value,
    category: String,
    #[serde(default = "default_kind")]
    kind: String,
}

fn default_kind() -> String {
    "boundary".into()
}

async fn accept(
    State(store): State<AppState>,
    id: Result<Path<String>, PathRejection>,
    req: Result<Json<AcceptRequest>, JsonRejection>,
) -> Result<Response, ServiceError> {
    let p = store.get(&ids(id)?)?;
    let req = body(req)?;
    let polyline = parse_geometry(&req.geometry)?;
    let category = parse_category(&req.category)?;
    let mut st = p.lock();
    let t = p.now_ms();
    let bid = p.accept(&mut st, t, polyline, category, req.kind);
    Ok((StatusCode::CREATED, Json(json!({ "boundary_id": bid }))).into_response())
}

#[derive(Deserialize)]
struct EditRequest {
    geometry: Value,
}

async fn edit(
    State(store): State<AppState>,
    path: Result<Path<(String, u64)>, PathRejection>,
    req: Result<Json<EditRequest>, JsonRejection>,
) -> Result<Json<Value>, ServiceError> {
    let (id, bid) = ids(path)?;
    let p = store.get(&id)?;
    let req = body(req)?;
    let polyline = parse_geometry(&req.geometry)?;
    let mut st = p.lock();
    let t = p.now_ms();
    p.edit(&mut st, t, bid, polyline)?;
    Ok(Json(json!({ "boundary_id": bid })))
}

async fn delete(
    State(store): State<AppState>,
    path: Result<Path<(String, u64)>, PathRejection>,
) -> Result<Json<Value>, ServiceError> {
    let (id, bid) = ids(path)?;
    let p = store.get(&id)?;
    let mut st = p.lock();
    let t = p.now_ms();
    p.delete(&mut st, t, bid)?;
    Ok(Json(json!({ "boundary_id": bid })))
}

async fn boundaries(
    State(store): State<AppState>,
    id: Result<Path<String>, PathRejection>,
) -> Result<Response, ServiceError> {
    let p = store.get(&ids(id)?)?;
    let text = p.lock().boundaries_geojson();
    Ok(geojson(text))
}

async fn session(
    State(store): State<AppState>,
    id: Result<Path<String>, PathRejection>,
) -> Result<Json<Value>, ServiceError> {
    let p = store.get(&ids(id)?)?;
    let st = p.lock();
    Ok(Json(serde_json::to_value(&st.session).map_err(|e| ServiceError::Internal(e.to_string()))?))
}

#[derive(Deserialize)]
struct EventRequest {
    kind: EventKind,
    #[serde(default)]
    payload: Value,
}

/// Client-side events that change no server state (currently only zoom).
async fn log_event(
    State(store): State<AppState>,
    id: Result<Path<String>, PathRejection>,
    req: Result<Json<EventRequest>, JsonRejection>,
) -> Result<Json<Value>, ServiceError> {
    let p = store.get(&ids(id)?)?;
    let req = body(req)?;
    if req.kind != EventKind::Zoom {
        return Err(ServiceError::Invalid(
            "only zoom events can be logged directly; other events come from their actions".into(),
        ));
    }
    let mut st = p.lock();
    let t = p.now_ms();
    p.zoom(&mut st, t, req.payload);
    Ok(Json(json!({ "events": st.session.len() })))
}

async fn stats(
    State(store): State<AppState>,
    id: Result<Path<String>, PathRejection>,
) -> Result<Json<Value>, ServiceError> {
    let p = store.get(&ids(id)?)?;
    let s = session_stats(&p.lock().session);
    Ok(Json(json!(s)))
}

#[derive(Deserialize)]
struct EvaluateRequest {
    reference_path: std::path::PathBuf,
    radius_m: f64,
}

async fn evaluate(
    State(store): State<AppState>,
    id: Result<Path<String>, PathRejection>,
    req: Result<Json<EvaluateRequest>, JsonRejection>,
) -> Result<Json<Value>, ServiceError> {
    let p = store.get(&ids(id)?)?;
    let req = body(req)?;
    let reference = read_lines(&req.reference_path)?.polylines();
    let delineation: Vec<Polyline> = p.lock().boundaries.values().map(|b| b.polyline.clone()).collect();
    let g = p.rgb.georef();
    let counts = overlay_confusion(&delineation, &reference, req.radius_m, g, p.rgb.rows(), p.rgb.cols())
        .map_err(|e| ServiceError::Invalid(e.to_string()))?;
    let report = correctness_report(counts, req.radius_m, g.gsd()).map_err(|e| ServiceError::Invalid(e.to_string()))?;
    Ok(Json(json!(report)))
}
