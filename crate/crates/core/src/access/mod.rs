//! Access server: vantage-point registry, role checks, FIFO job scheduling
//! with one job per vantage point, reachability refresh and artifact collection.

mod node;
mod server;
mod store;

pub use self::node::{LocalNode, NodeClient, NodeError, NodeJobStatus};
pub use self::server::{AccessServer, Connector, ServerConfig, Transition, PROVISIONING_MAX_DURATION_S, PROVISIONING_OWNER};
pub use self::store::{Event, RegistrySnapshot, StateStore, EVENTS_FILE, REGISTRY_FILE};

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::PipelineStep;
use crate::device::DeviceSummary;

pub const DEFAULT_ZONE: &str = "powerbench.test";
pub const DEFAULT_REFRESH_PERIOD_S: f64 = 1800.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeState {
    Online,
    Offline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VantagePointRecord {
    pub id: String,
    pub address: String,
    pub dns_name: String,
    pub state: NodeState,
    pub last_seen: Option<f64>,
    #[serde(default)]
    pub location: String,
    #[serde(default)]
    pub labels: BTreeSet<String>,
    pub devices: Vec<DeviceSummary>,
    /// False until the first successful probe; device lists are stale until then.
    pub refreshed: bool,
    pub credential: String,
}

/// `GET /nodes/{id}/devices` body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceList {
    pub devices: Vec<DeviceSummary>,
    pub stale: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Administrator,
    Experimenter,
    Tester,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Principal {
    pub id: String,
    pub role: Role,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Experiment,
    Control,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Constraints {
    pub device_id: Option<String>,
    pub vantage_id: Option<String>,
    pub labels: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobSpec {
    /// Assigned by the server when absent.
    #[serde(default)]
    pub job_id: Option<String>,
    pub kind: JobKind,
    #[serde(default)]
    pub constraints: Constraints,
    pub steps: Vec<PipelineStep>,
    pub max_duration: f64,
    /// Filled in from the authenticated principal.
    #[serde(default)]
    pub owner: String,
}

impl JobSpec {
    pub fn validate(&self) -> Result<(), AccessError> {
        if self.steps.is_empty() {
            return Err(AccessError::Validation("a job needs at least one step".into()));
        }
        if !(self.max_duration.is_finite() && self.max_duration > 0.0) {
            return Err(AccessError::Validation(format!("max_duration must be positive, got {}", self.max_duration)));
        }
        if self.constraints.device_id.is_some() && self.constraints.vantage_id.is_some() {
            return Err(AccessError::Validation("set device_id or vantage_id, not both".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Dispatched,
    Running,
    Succeeded,
    Failed,
    Aborted,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Succeeded | JobState::Failed | JobState::Aborted)
    }

    /// Occupies its vantage point.
    pub fn is_active(self) -> bool {
        matches!(self, JobState::Dispatched | JobState::Running)
    }

    pub fn can_become(self, next: JobState) -> bool {
        use JobState::*;
        matches!(
            (self, next),
            (Queued, Dispatched) | (Queued, Aborted) | (Dispatched, Running) | (Dispatched, Failed) | (Running, Succeeded) | (Running, Failed) | (Running, Aborted)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub name: String,
    /// Where the bytes live: `node://<vantage>/<name>` until collected, then `store://<job>/<name>`.
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobExecution {
    pub job_id: String,
    pub spec: JobSpec,
    pub seq: u64,
    pub vantage_id: Option<String>,
    pub state: JobState,
    pub submitted_at: f64,
    pub started_at: Option<f64>,
    pub finished_at: Option<f64>,
    pub artifacts: Vec<ArtifactEntry>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AccessError {
    #[error("validation: {0}")]
    Validation(String),
    #[error("permission denied: {0}")]
    Permission(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("unauthenticated")]
    Unauthenticated,
    #[error("illegal transition {from:?} -> {to:?} for {job_id}")]
    Transition { job_id: String, from: JobState, to: JobState },
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for AccessError {
    fn from(e: std::io::Error) -> Self {
        AccessError::Io(e.to_string())
    }
}

/// Seconds on whatever timeline the server runs on.
pub trait Clock: Send + Sync {
    fn now(&self) -> f64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> f64 {
        std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
    }
}

/// Test clock advanced by hand; stored as milliseconds.
#[derive(Debug, Default, Clone)]
pub struct ManualClock(Arc<AtomicU64>);

impl ManualClock {
    pub fn new(start_s: f64) -> Self {
        let c = Self::default();
        c.set(start_s);
        c
    }

    pub fn set(&self, t: f64) {
        self.0.store((t * 1000.0).round() as u64, Ordering::SeqCst);
    }

    pub fn advance(&self, dt: f64) {
        self.0.fetch_add((dt * 1000.0).round() as u64, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> f64 {
        self.0.load(Ordering::SeqCst) as f64 / 1000.0
    }
}

/// Label rule for vantage-point ids.
pub fn valid_node_id(id: &str) -> bool {
    (1..=32).contains(&id.len()) && id.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
}
