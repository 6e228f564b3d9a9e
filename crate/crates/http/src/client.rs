//! Blocking HTTP clients: [`HttpNode`] lets the access server drive a remote
//! vantage point, [`ServerClient`] talks to the access server.

use std::time::Duration;

use pb_core::access::{DeviceList, JobExecution, JobSpec, NodeClient, NodeError, NodeJobStatus, Role};
use pb_core::controller::{JobRun, JobRunState, PipelineStep, StatusDocument};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;
use ureq::http::Response;
use ureq::{Agent, Body};

use crate::controller_api::RunJobBody;
use crate::server_api::{NewPrincipal, NodeView, RegisterNode, Submitted, TokenGrant};
use crate::ErrorBody;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
/// Traces can be large; cap downloads well above a long session at 5 kHz.
pub const ARTIFACT_LIMIT: u64 = 1 << 30;

fn agent(timeout: Duration) -> Agent {
    Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into()
}

fn error_text(resp: &mut Response<Body>) -> String {
    let status = resp.status();
    match resp.body_mut().read_json::<ErrorBody>() {
        Ok(b) => b.error,
        Err(_) => format!("HTTP {status}"),
    }
}

/// A remote controller daemon seen through its HTTP API.
pub struct HttpNode {
    base: String,
    agent: Agent,
}

impl HttpNode {
    pub fn new(address: &str) -> Self {
        Self::with_timeout(address, DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(address: &str, timeout: Duration) -> Self {
        Self { base: address.trim_end_matches('/').to_string(), agent: agent(timeout) }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn check(mut resp: Response<Body>) -> Result<Response<Body>, NodeError> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let text = error_text(&mut resp);
        Err(if status.as_u16() == 404 { NodeError::NotFound(text) } else { NodeError::Rejected(text) })
    }

    fn get(&self, path: &str) -> Result<Response<Body>, NodeError> {
        let resp = self.agent.get(&self.url(path)).call().map_err(|e| NodeError::Unreachable(e.to_string()))?;
        Self::check(resp)
    }

    fn post<B: Serialize>(&self, path: &str, body: &B) -> Result<Response<Body>, NodeError> {
        let resp = self.agent.post(&self.url(path)).send_json(body).map_err(|e| NodeError::Unreachable(e.to_string()))?;
        Self::check(resp)
    }

    fn json<T: DeserializeOwned>(mut resp: Response<Body>) -> Result<T, NodeError> {
        resp.body_mut().read_json().map_err(|e| NodeError::Unreachable(format!("bad response: {e}")))
    }
}

impl NodeClient for HttpNode {
    fn status(&self) -> Result<StatusDocument, NodeError> {
        Self::json(self.get("/status")?)
    }

    fn start_job(&self, job_id: &str, steps: &[PipelineStep], max_duration: f64) -> Result<(), NodeError> {
        let body = RunJobBody { job_id: job_id.into(), steps: steps.to_vec(), max_duration: Some(max_duration) };
        self.post("/jobs/run", &body).map(|_| ())
    }

    fn poll_job(&self, job_id: &str) -> Result<NodeJobStatus, NodeError> {
        let run: JobRun = Self::json(self.get(&format!("/jobs/{job_id}"))?)?;
        Ok(match run.state {
            JobRunState::Running => NodeJobStatus::Running,
            _ => NodeJobStatus::Done(run),
        })
    }

    fn abort_job(&self, job_id: &str) -> Result<(), NodeError> {
        self.post(&format!("/jobs/{job_id}/abort"), &serde_json::json!({})).map(|_| ())
    }

    fn fetch_artifact(&self, name: &str) -> Result<Vec<u8>, NodeError> {
        let mut resp = self.get(&format!("/artifacts/{name}"))?;
        resp.body_mut().with_config().limit(ARTIFACT_LIMIT).read_to_vec().map_err(|e| NodeError::Unreachable(e.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("HTTP {status}: {error}")]
    Api { status: u16, kind: String, error: String },
    #[error("bad response: {0}")]
    Decode(String),
}

/// Bearer-authenticated client for the access server.
pub struct ServerClient {
    base: String,
    token: String,
    agent: Agent,
}

impl ServerClient {
    pub fn new(address: &str, token: &str) -> Self {
        Self { base: address.trim_end_matches('/').to_string(), token: token.to_string(), agent: agent(DEFAULT_TIMEOUT) }
    }

    fn check(mut resp: Response<Body>) -> Result<Response<Body>, ClientError> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let (kind, error) = match resp.body_mut().read_json::<ErrorBody>() {
            Ok(b) => (b.kind, b.error),
            Err(_) => (String::new(), format!("HTTP {status}")),
        };
        Err(ClientError::Api { status: status.as_u16(), kind, error })
    }

    fn auth(&self) -> String {
        format!("Bearer {}", self.token)
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        let resp = self.agent.get(&format!("{}{path}", self.base)).header("Authorization", &self.auth()).call();
        let mut resp = Self::check(resp.map_err(|e| ClientError::Transport(e.to_string()))?)?;
        resp.body_mut().read_json().map_err(|e| ClientError::Decode(e.to_string()))
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        let resp = self.agent.post(&format!("{}{path}", self.base)).header("Authorization", &self.auth()).send_json(body);
        let mut resp = Self::check(resp.map_err(|e| ClientError::Transport(e.to_string()))?)?;
        resp.body_mut().read_json().map_err(|e| ClientError::Decode(e.to_string()))
    }

    pub fn add_principal(&self, id: &str, role: Role) -> Result<String, ClientError> {
        self.post::<_, TokenGrant>("/principals", &NewPrincipal { id: id.into(), role }).map(|g| g.token)
    }

    pub fn register_node(&self, req: &RegisterNode) -> Result<NodeView, ClientError> {
        self.post("/nodes", req)
    }

    pub fn nodes(&self) -> Result<Vec<NodeView>, ClientError> {
        self.get("/nodes")
    }

    pub fn devices(&self, node_id: &str) -> Result<DeviceList, ClientError> {
        self.get(&format!("/nodes/{node_id}/devices"))
    }

    pub fn refresh(&self) -> Result<Vec<NodeView>, ClientError> {
        self.post("/refresh", &serde_json::json!({}))
    }

    pub fn submit(&self, spec: &JobSpec) -> Result<String, ClientError> {
        self.post::<_, Submitted>("/jobs", spec).map(|s| s.job_id)
    }

    pub fn job(&self, job_id: &str) -> Result<JobExecution, ClientError> {
        self.get(&format!("/jobs/{job_id}"))
    }

    pub fn share(&self, job_id: &str) -> Result<String, ClientError> {
        self.post::<_, TokenGrant>(&format!("/jobs/{job_id}/share"), &serde_json::json!({})).map(|g| g.token)
    }

    pub fn artifact(&self, job_id: &str, name: &str) -> Result<Vec<u8>, ClientError> {
        let resp = self.agent.get(&format!("{}/jobs/{job_id}/artifacts/{name}", self.base)).header("Authorization", &self.auth()).call();
        let mut resp = Self::check(resp.map_err(|e| ClientError::Transport(e.to_string()))?)?;
        resp.body_mut().with_config().limit(ARTIFACT_LIMIT).read_to_vec().map_err(|e| ClientError::Decode(e.to_string()))
    }

    /// Polls until the job reaches a terminal state or `timeout` passes.
    pub fn wait(&self, job_id: &str, every: Duration, timeout: Duration) -> Result<JobExecution, ClientError> {
        let deadline = std::time::Instant::now() + timeout;
        loop {
            let job = self.job(job_id)?;
            if job.state.is_terminal() {
                return Ok(job);
            }
            if std::time::Instant::now() >= deadline {
                return Err(ClientError::Transport(format!("job {job_id} still {:?} after {timeout:?}", job.state)));
            }
            std::thread::sleep(every);
        }
    }
}
