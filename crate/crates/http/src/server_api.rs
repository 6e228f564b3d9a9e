//! Access-server endpoint: registry, job submission and artifact retrieval
//! behind bearer-token authentication.

use std::collections::BTreeSet;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pb_core::access::{AccessError, AccessServer, DeviceList, JobExecution, JobSpec, NodeState, Principal, Role, VantagePointRecord};
use pb_core::device::DeviceSummary;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::ApiError;

pub type SharedServer = Arc<Mutex<AccessServer>>;

fn lock(s: &SharedServer) -> MutexGuard<'_, AccessServer> {
    s.lock().unwrap_or_else(|e| e.into_inner())
}

impl From<AccessError> for ApiError {
    fn from(e: AccessError) -> Self {
        let (status, kind) = match &e {
            AccessError::Validation(_) => (StatusCode::BAD_REQUEST, "invalid"),
            AccessError::Permission(_) => (StatusCode::FORBIDDEN, "permission"),
            AccessError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            AccessError::Conflict(_) | AccessError::Transition { .. } => (StatusCode::CONFLICT, "conflict"),
            AccessError::Unauthenticated => (StatusCode::UNAUTHORIZED, "unauthenticated"),
            AccessError::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "io"),
        };
        ApiError::new(status, kind, e.to_string())
    }
}

/// A registry entry as clients see it: everything but the credential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeView {
    pub id: String,
    pub address: String,
    pub dns_name: String,
    pub state: NodeState,
    pub last_seen: Option<f64>,
    pub location: String,
    pub labels: BTreeSet<String>,
    pub devices: Vec<DeviceSummary>,
    pub refreshed: bool,
}

impl From<VantagePointRecord> for NodeView {
    fn from(r: VantagePointRecord) -> Self {
        Self {
            id: r.id,
            address: r.address,
            dns_name: r.dns_name,
            state: r.state,
            last_seen: r.last_seen,
            location: r.location,
            labels: r.labels,
            devices: r.devices,
            refreshed: r.refreshed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegisterNode {
    pub id: String,
    pub address: String,
    pub credential: String,
    #[serde(default)]
    pub location: String,
    #[serde(default)]
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewPrincipal {
    pub id: String,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submitted {
    pub job_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenGrant {
    pub token: String,
}

/// Where a console may attach for a node's mirroring stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsoleGrant {
    pub vantage_id: String,
    pub address: String,
}

fn bearer(headers: &HeaderMap) -> Result<&str, ApiError> {
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::trim)
        .ok_or_else(|| AccessError::Unauthenticated.into())
}

/// Authenticates and runs `f` on a blocking thread: scheduling may call out
/// to nodes.
async fn call<T, F>(s: &SharedServer, headers: &HeaderMap, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&mut AccessServer, &Principal, &str) -> Result<T, AccessError> + Send + 'static,
{
    let token = bearer(headers)?.to_string();
    let s = s.clone();
    tokio::task::spawn_blocking(move || {
        let mut server = lock(&s);
        let who = server.authenticate(&token)?;
        f(&mut server, &who, &token).map_err(ApiError::from)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "failure", e.to_string()))?
}

fn deny_testers(who: &Principal) -> Result<(), AccessError> {
    if who.role == Role::Tester {
        return Err(AccessError::Permission("testers may only attach to a shared session".into()));
    }
    Ok(())
}

fn readable<'a>(server: &'a AccessServer, who: &Principal, job_id: &str) -> Result<&'a JobExecution, AccessError> {
    deny_testers(who)?;
    let job = server.job(job_id)?;
    if who.role != Role::Administrator && job.spec.owner != who.id {
        return Err(AccessError::Permission(format!("job {job_id} belongs to someone else")));
    }
    Ok(job)
}

pub fn router(server: SharedServer) -> Router {
    Router::new()
        .route("/principals", post(add_principal))
        .route("/nodes", post(register_node).get(list_nodes))
        .route("/nodes/{id}", get(get_node).delete(remove_node))
        .route("/nodes/{id}/devices", get(list_devices))
        .route("/nodes/{id}/console", get(console))
        .route("/refresh", post(refresh))
        .route("/jobs", post(submit_job).get(list_jobs))
        .route("/jobs/{id}", get(get_job))
        .route("/jobs/{id}/abort", post(abort_job))
        .route("/jobs/{id}/share", post(share_job))
        .route("/jobs/{id}/artifacts/{name}", get(artifact))
        .with_state(server)
}

/// Drives the scheduler and the reachability refresh in the background.
pub fn spawn_background(server: SharedServer, tick: Duration) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let refresh_every = Duration::from_secs_f64(lock(&server).config().refresh_period_s);
        let mut ticker = tokio::time::interval(tick);
        let mut refresher = tokio::time::interval(refresh_every);
        loop {
            let refresh = tokio::select! {
                _ = ticker.tick() => false,
                _ = refresher.tick() => true,
            };
            let s = server.clone();
            let out = tokio::task::spawn_blocking(move || {
                let mut server = lock(&s);
                if refresh {
                    server.refresh()?;
                }
                server.schedule().map(|_| ())
            })
            .await;
            match out {
                Ok(Err(e)) => tracing::warn!(error = %e, "background pass failed"),
                Err(e) => tracing::error!(error = %e, "background pass panicked"),
                Ok(Ok(())) => {}
            }
        }
    })
}

async fn add_principal(State(s): State<SharedServer>, headers: HeaderMap, Json(b): Json<NewPrincipal>) -> Result<Response, ApiError> {
    let token = call(&s, &headers, move |srv, who, _| srv.add_principal(who, &b.id, b.role)).await?;
    Ok((StatusCode::CREATED, Json(TokenGrant { token })).into_response())
}

async fn register_node(State(s): State<SharedServer>, headers: HeaderMap, Json(b): Json<RegisterNode>) -> Result<Response, ApiError> {
    let record = call(&s, &headers, move |srv, who, _| {
        let r = srv.register_vantage_point(who, &b.id, &b.address, &b.credential, &b.location, b.labels)?;
        srv.schedule()?;
        Ok(r)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(NodeView::from(record))).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeFilter {
    label: Option<String>,
    state: Option<NodeState>,
}

async fn list_nodes(State(s): State<SharedServer>, headers: HeaderMap, Query(q): Query<NodeFilter>) -> Result<Json<Vec<NodeView>>, ApiError> {
    let nodes = call(&s, &headers, move |srv, who, _| {
        deny_testers(who)?;
        srv.list_nodes(q.label.as_deref(), q.state)
    })
    .await?;
    Ok(Json(nodes.into_iter().map(NodeView::from).collect()))
}

async fn get_node(State(s): State<SharedServer>, headers: HeaderMap, Path(id): Path<String>) -> Result<Json<NodeView>, ApiError> {
    let node = call(&s, &headers, move |srv, who, _| {
        deny_testers(who)?;
        srv.node(&id).cloned().ok_or_else(|| AccessError::NotFound(format!("vantage point {id}")))
    })
    .await?;
    Ok(Json(node.into()))
}

async fn remove_node(State(s): State<SharedServer>, headers: HeaderMap, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    call(&s, &headers, move |srv, who, _| srv.remove_vantage_point(who, &id)).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn list_devices(State(s): State<SharedServer>, headers: HeaderMap, Path(id): Path<String>) -> Result<Json<DeviceList>, ApiError> {
    let list = call(&s, &headers, move |srv, who, _| {
        deny_testers(who)?;
        srv.list_devices(&id)
    })
    .await?;
    Ok(Json(list))
}

async fn console(State(s): State<SharedServer>, headers: HeaderMap, Path(id): Path<String>) -> Result<Json<ConsoleGrant>, ApiError> {
    let grant = call(&s, &headers, move |srv, who, token| {
        let node = srv.node(&id).ok_or_else(|| AccessError::NotFound(format!("vantage point {id}")))?;
        if who.role == Role::Tester && !srv.tester_may_attach(token, &id) {
            return Err(AccessError::Permission(format!("this session is not on {id}")));
        }
        Ok(ConsoleGrant { vantage_id: node.id.clone(), address: node.address.clone() })
    })
    .await?;
    Ok(Json(grant))
}

async fn refresh(State(s): State<SharedServer>, headers: HeaderMap) -> Result<Json<Vec<NodeView>>, ApiError> {
    let snapshot = call(&s, &headers, |srv, who, _| {
        if who.role != Role::Administrator {
            return Err(AccessError::Permission("only administrators trigger a refresh".into()));
        }
        let snap = srv.refresh()?;
        srv.schedule()?;
        Ok(snap)
    })
    .await?;
    Ok(Json(snapshot.nodes.into_iter().map(NodeView::from).collect()))
}

async fn submit_job(State(s): State<SharedServer>, headers: HeaderMap, Json(spec): Json<JobSpec>) -> Result<Response, ApiError> {
    let job_id = call(&s, &headers, move |srv, who, _| {
        let id = srv.submit_job(who, spec)?;
        srv.schedule()?;
        Ok(id)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(Submitted { job_id })).into_response())
}

async fn list_jobs(State(s): State<SharedServer>, headers: HeaderMap) -> Result<Json<Vec<JobExecution>>, ApiError> {
    let jobs = call(&s, &headers, |srv, who, _| {
        deny_testers(who)?;
        Ok(srv.jobs().filter(|j| who.role == Role::Administrator || j.spec.owner == who.id).cloned().collect())
    })
    .await?;
    Ok(Json(jobs))
}

async fn get_job(State(s): State<SharedServer>, headers: HeaderMap, Path(id): Path<String>) -> Result<Json<JobExecution>, ApiError> {
    let job = call(&s, &headers, move |srv, who, _| readable(srv, who, &id).cloned()).await?;
    Ok(Json(job))
}

async fn abort_job(State(s): State<SharedServer>, headers: HeaderMap, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let state = call(&s, &headers, move |srv, who, _| {
        deny_testers(who)?;
        srv.abort_job(who, &id)?;
        srv.schedule()?;
        Ok(srv.job(&id)?.state)
    })
    .await?;
    Ok(Json(json!({ "state": state })))
}

async fn share_job(State(s): State<SharedServer>, headers: HeaderMap, Path(id): Path<String>) -> Result<Response, ApiError> {
    let token = call(&s, &headers, move |srv, who, _| srv.issue_tester_token(who, &id)).await?;
    Ok((StatusCode::CREATED, Json(TokenGrant { token })).into_response())
}

async fn artifact(State(s): State<SharedServer>, headers: HeaderMap, Path((id, name)): Path<(String, String)>) -> Result<Response, ApiError> {
    let lookup = name.clone();
    let bytes = call(&s, &headers, move |srv, who, _| {
        readable(srv, who, &id)?;
        srv.artifact(&id, &lookup)
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, crate::content_type(&name))], bytes).into_response())
}
