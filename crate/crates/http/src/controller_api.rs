//! Vantage-point control endpoint: one route per core operation, job
//! dispatch, console input ingestion and the mirroring stream.

use std::collections::BTreeSet;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pb_core::automation::{Backend, InputCommand};
use pb_core::controller::{
    Controller, ControllerError, DeviceSetupOptions, ExecRequest, InputBatch, JobRun, JobRunState, NodeSetupOptions, PipelineStep, ReplayOptions,
    StatusDocument, Switch,
};
use pb_core::replay::AutomationScript;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::ApiError;

pub const DEFAULT_FRAME_RATE: f64 = 10.0;

pub struct NodeApp {
    ctl: Arc<Mutex<Controller>>,
    pending: Mutex<BTreeSet<String>>,
    status: Mutex<StatusDocument>,
}

pub type SharedNode = Arc<NodeApp>;

impl NodeApp {
    pub fn new(ctl: Controller) -> SharedNode {
        Self::shared(Arc::new(Mutex::new(ctl)))
    }

    pub fn shared(ctl: Arc<Mutex<Controller>>) -> SharedNode {
        let status = lock(&ctl).status();
        Arc::new(Self { ctl, pending: Mutex::default(), status: Mutex::new(status) })
    }

    pub fn controller(&self) -> Arc<Mutex<Controller>> {
        self.ctl.clone()
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

fn status_of(e: &ControllerError) -> StatusCode {
    match e.kind() {
        "not_found" => StatusCode::NOT_FOUND,
        "invalid" => StatusCode::BAD_REQUEST,
        "safety" | "state" | "exclusivity" | "routing" => StatusCode::CONFLICT,
        "device" => StatusCode::UNPROCESSABLE_ENTITY,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<ControllerError> for ApiError {
    fn from(e: ControllerError) -> Self {
        ApiError::new(status_of(&e), e.kind(), e.to_string())
    }
}

/// Runs `f` on a blocking thread with the controller locked, then refreshes
/// the cached status document.
async fn with_ctl<T, F>(app: &SharedNode, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&mut Controller) -> Result<T, ControllerError> + Send + 'static,
{
    let app = app.clone();
    tokio::task::spawn_blocking(move || {
        let mut ctl = lock(&app.ctl);
        let out = f(&mut ctl);
        *lock(&app.status) = ctl.status();
        out.map_err(ApiError::from)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "failure", e.to_string()))?
}

pub fn router(app: SharedNode) -> Router {
    Router::new()
        .route("/status", get(status))
        .route("/power_monitor", post(power_monitor))
        .route("/set_voltage", post(set_voltage))
        .route("/batt_switch", post(batt_switch))
        .route("/start_monitor", post(start_monitor))
        .route("/stop_monitor", post(stop_monitor))
        .route("/device_mirroring", post(device_mirroring))
        .route("/execute", post(execute))
        .route("/node_setup", post(node_setup))
        .route("/device_setup", post(device_setup))
        .route("/cleanup", post(cleanup))
        .route("/replay", post(replay))
        .route("/jobs/run", post(run_job))
        .route("/jobs/{id}", get(get_job))
        .route("/jobs/{id}/abort", post(abort_job))
        .route("/artifacts/{name}", get(artifact))
        .route("/recordings", post(start_recording))
        .route("/recordings/{id}/stop", post(stop_recording))
        .route("/input", post(input))
        .route("/frames", get(frames))
        .with_state(app)
}

/// Answers from the cache while a job holds the controller.
async fn status(State(app): State<SharedNode>) -> Json<StatusDocument> {
    if let Ok(ctl) = app.ctl.try_lock() {
        let doc = ctl.status();
        *lock(&app.status) = doc.clone();
        return Json(doc);
    }
    Json(lock(&app.status).clone())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SwitchBody {
    state: Switch,
}

async fn power_monitor(State(app): State<SharedNode>, Json(b): Json<SwitchBody>) -> Result<Json<Value>, ApiError> {
    let state = with_ctl(&app, move |c| c.power_monitor(b.state)).await?;
    Ok(Json(json!({ "state": state })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VoltageBody {
    volts: f64,
}

async fn set_voltage(State(app): State<SharedNode>, Json(b): Json<VoltageBody>) -> Result<Json<Value>, ApiError> {
    let config = with_ctl(&app, move |c| c.set_voltage(b.volts)).await?;
    Ok(Json(json!(config)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DeviceBody {
    device_id: String,
}

async fn batt_switch(State(app): State<SharedNode>, Json(b): Json<DeviceBody>) -> Result<Json<Value>, ApiError> {
    let id = b.device_id.clone();
    let channel = with_ctl(&app, move |c| c.batt_switch(&b.device_id)).await?;
    Ok(Json(json!({ "device_id": id, "channel": channel })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StartBody {
    device_id: String,
    duration_s: f64,
}

async fn start_monitor(State(app): State<SharedNode>, Json(b): Json<StartBody>) -> Result<Json<Value>, ApiError> {
    let id = with_ctl(&app, move |c| c.start_monitor(&b.device_id, b.duration_s)).await?;
    Ok(Json(json!({ "trace_id": id })))
}

async fn stop_monitor(State(app): State<SharedNode>) -> Result<Json<Value>, ApiError> {
    let id = with_ctl(&app, |c| c.stop_monitor()).await?;
    Ok(Json(json!({ "trace_id": id })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MirrorBody {
    device_id: String,
    state: Switch,
}

async fn device_mirroring(State(app): State<SharedNode>, Json(b): Json<MirrorBody>) -> Result<Json<Value>, ApiError> {
    let link = with_ctl(&app, move |c| c.device_mirroring(&b.device_id, b.state)).await?;
    Ok(Json(json!(link)))
}

/// Either a structured command or a raw shell line.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExecuteBody {
    device_id: String,
    #[serde(default)]
    command: Option<InputCommand>,
    #[serde(default)]
    shell: Option<String>,
    #[serde(default)]
    backend: Option<Backend>,
}

async fn execute(State(app): State<SharedNode>, Json(b): Json<ExecuteBody>) -> Result<Json<Value>, ApiError> {
    match (b.command, b.shell) {
        (Some(command), None) => {
            let req = ExecRequest { device_id: b.device_id, command, backend: b.backend };
            let report = with_ctl(&app, move |c| c.execute(&req)).await?;
            Ok(Json(json!(report)))
        }
        (None, Some(line)) => {
            let id = b.device_id;
            let output = with_ctl(&app, move |c| c.shell(&id, &line)).await?;
            Ok(Json(json!({ "output": output })))
        }
        _ => Err(ApiError::bad_request("give exactly one of command or shell")),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeSetupBody {
    device_id: String,
    #[serde(default)]
    options: NodeSetupOptions,
}

async fn node_setup(State(app): State<SharedNode>, Json(b): Json<NodeSetupBody>) -> Result<Json<Value>, ApiError> {
    let report = with_ctl(&app, move |c| c.node_setup(&b.device_id, b.options)).await?;
    Ok(Json(json!(report)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DeviceSetupBody {
    device_id: String,
    #[serde(default)]
    options: DeviceSetupOptions,
}

async fn device_setup(State(app): State<SharedNode>, Json(b): Json<DeviceSetupBody>) -> Result<Json<Value>, ApiError> {
    let report = with_ctl(&app, move |c| c.device_setup(&b.device_id, b.options)).await?;
    Ok(Json(json!(report)))
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct CleanupBody {
    #[serde(default)]
    force: bool,
}

async fn cleanup(State(app): State<SharedNode>, body: Option<Json<CleanupBody>>) -> Result<Json<Value>, ApiError> {
    let force = body.map(|Json(b)| b.force).unwrap_or_default();
    let report = with_ctl(&app, move |c| c.cleanup(force)).await?;
    Ok(Json(json!(report)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReplayBody {
    device_id: String,
    script: AutomationScript,
    #[serde(default)]
    options: ReplayOptions,
}

async fn replay(State(app): State<SharedNode>, Json(b): Json<ReplayBody>) -> Result<Json<Value>, ApiError> {
    let outcome = with_ctl(&app, move |c| c.replay(&b.device_id, &b.script, b.options)).await?;
    Ok(Json(json!(outcome)))
}

#[derive(Debug, Clone, Deserialize, serde::Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunJobBody {
    pub job_id: String,
    pub steps: Vec<PipelineStep>,
    #[serde(default)]
    pub max_duration: Option<f64>,
}

/// Accepts the job and runs it on a worker; progress is read from `GET /jobs/{id}`.
async fn run_job(State(app): State<SharedNode>, Json(b): Json<RunJobBody>) -> Result<Response, ApiError> {
    {
        let mut pending = lock(&app.pending);
        if let Some(other) = pending.iter().next() {
            return Err(ApiError::new(StatusCode::CONFLICT, "exclusivity", format!("job {other:?} is running")));
        }
        if let Ok(ctl) = app.ctl.try_lock() {
            if ctl.job(&b.job_id).is_some() {
                return Err(ApiError::bad_request(format!("job {:?} already ran", b.job_id)));
            }
        }
        pending.insert(b.job_id.clone());
    }
    let worker = app.clone();
    let id = b.job_id.clone();
    tokio::task::spawn_blocking(move || {
        let mut ctl = lock(&worker.ctl);
        if let Err(e) = ctl.run_job(&b.job_id, &b.steps, b.max_duration) {
            tracing::warn!(job = %b.job_id, error = %e, "job refused");
        }
        *lock(&worker.status) = ctl.status();
        drop(ctl);
        lock(&worker.pending).remove(&b.job_id);
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": id }))).into_response())
}

async fn get_job(State(app): State<SharedNode>, Path(id): Path<String>) -> Result<Json<JobRun>, ApiError> {
    if lock(&app.pending).contains(&id) {
        return Ok(Json(JobRun { job_id: id, state: JobRunState::Running, steps: Vec::new(), artifacts: Vec::new(), error: None, safe_after: false }));
    }
    let run = with_ctl(&app, move |c| c.job(&id).cloned().ok_or_else(|| ControllerError::NotFound(format!("job {id:?}")))).await?;
    Ok(Json(run))
}

/// Forces the node safe; a job in flight finishes first since it holds the node.
async fn abort_job(State(app): State<SharedNode>, Path(_id): Path<String>) -> Result<Json<Value>, ApiError> {
    let report = with_ctl(&app, |c| c.cleanup(true)).await?;
    Ok(Json(json!(report)))
}

async fn artifact(State(app): State<SharedNode>, Path(name): Path<String>) -> Result<Response, ApiError> {
    let lookup = name.clone();
    let bytes = with_ctl(&app, move |c| c.artifact(&lookup)).await?;
    Ok(([(header::CONTENT_TYPE, crate::content_type(&name))], bytes).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordingBody {
    device_id: String,
    #[serde(default)]
    live: bool,
}

async fn start_recording(State(app): State<SharedNode>, Json(b): Json<RecordingBody>) -> Result<Json<Value>, ApiError> {
    let id = with_ctl(&app, move |c| c.start_recording(&b.device_id, b.live)).await?;
    Ok(Json(json!({ "session_id": id })))
}

async fn stop_recording(State(app): State<SharedNode>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let closed = with_ctl(&app, move |c| c.stop_recording(&id)).await?;
    Ok(Json(json!(closed)))
}

async fn input(State(app): State<SharedNode>, Json(batch): Json<InputBatch>) -> Result<Json<Value>, ApiError> {
    let report = with_ctl(&app, move |c| c.ingest_input(batch)).await?;
    Ok(Json(json!(report)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameQuery {
    device_id: String,
    #[serde(default)]
    count: Option<usize>,
    /// Frames per second on a streaming connection.
    #[serde(default)]
    fps: Option<f64>,
}

/// A JSON batch of frames, or a frame stream when the client asks to upgrade.
async fn frames(State(app): State<SharedNode>, Query(q): Query<FrameQuery>, ws: Result<WebSocketUpgrade, axum::extract::ws::rejection::WebSocketUpgradeRejection>) -> Result<Response, ApiError> {
    let probe = q.device_id.clone();
    with_ctl(&app, move |c| c.device(&probe).map(|_| ())).await?;
    match ws {
        Ok(upgrade) => {
            let fps = q.fps.unwrap_or(DEFAULT_FRAME_RATE);
            if !(fps.is_finite() && fps > 0.0 && fps <= 60.0) {
                return Err(ApiError::bad_request("fps must be in (0, 60]"));
            }
            Ok(upgrade.on_upgrade(move |socket| stream_frames(app, q.device_id, fps, socket)))
        }
        Err(_) => {
            let count = q.count.unwrap_or(1).clamp(1, 100);
            let id = q.device_id;
            let frames = with_ctl(&app, move |c| c.frames(&id, count)).await?;
            Ok(Json(frames).into_response())
        }
    }
}

async fn stream_frames(app: SharedNode, device_id: String, fps: f64, mut socket: WebSocket) {
    let mut tick = tokio::time::interval(Duration::from_secs_f64(1.0 / fps));
    loop {
        tokio::select! {
            _ = tick.tick() => {
                let id = device_id.clone();
                let frame = match with_ctl(&app, move |c| c.frames(&id, 1)).await {
                    Ok(mut f) => f.pop(),
                    Err(_) => None,
                };
                let Some(frame) = frame else { break };
                let text = serde_json::to_string(&frame).unwrap_or_default();
                if socket.send(Message::Text(text.into())).await.is_err() {
                    break;
                }
            }
            msg = socket.recv() => match msg {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                _ => {}
            }
        }
    }
}
