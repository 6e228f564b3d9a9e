use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use thiserror::Error;

use crate::controller::{Controller, JobRun, JobRunState, PipelineStep, StatusDocument};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NodeError {
    #[error("node unreachable: {0}")]
    Unreachable(String),
    #[error("node rejected the request: {0}")]
    Rejected(String),
    #[error("not found on node: {0}")]
    NotFound(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeJobStatus {
    Running,
    Done(JobRun),
}

/// How the server talks to one vantage point. Calls toward a single node are
/// never issued in parallel.
pub trait NodeClient: Send + Sync {
    fn status(&self) -> Result<StatusDocument, NodeError>;
    fn start_job(&self, job_id: &str, steps: &[PipelineStep], max_duration: f64) -> Result<(), NodeError>;
    fn poll_job(&self, job_id: &str) -> Result<NodeJobStatus, NodeError>;
    /// Stops the job and forces the node back to its safe state.
    fn abort_job(&self, job_id: &str) -> Result<(), NodeError>;
    fn fetch_artifact(&self, name: &str) -> Result<Vec<u8>, NodeError>;
}

/// In-process node: the controller runs each job to completion on `start_job`.
#[derive(Clone)]
pub struct LocalNode {
    controller: Arc<Mutex<Controller>>,
    reachable: Arc<AtomicBool>,
}

impl LocalNode {
    pub fn new(controller: Controller) -> Self {
        Self::shared(Arc::new(Mutex::new(controller)))
    }

    pub fn shared(controller: Arc<Mutex<Controller>>) -> Self {
        Self { controller, reachable: Arc::new(AtomicBool::new(true)) }
    }

    pub fn controller(&self) -> MutexGuard<'_, Controller> {
        self.controller.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Simulates the node dropping off the network.
    pub fn set_reachable(&self, up: bool) {
        self.reachable.store(up, Ordering::SeqCst);
    }

    fn check(&self) -> Result<(), NodeError> {
        if self.reachable.load(Ordering::SeqCst) {
            Ok(())
        } else {
            Err(NodeError::Unreachable("probe timed out".into()))
        }
    }
}

impl NodeClient for LocalNode {
    fn status(&self) -> Result<StatusDocument, NodeError> {
        self.check()?;
        Ok(self.controller().status())
    }

    fn start_job(&self, job_id: &str, steps: &[PipelineStep], max_duration: f64) -> Result<(), NodeError> {
        self.check()?;
        self.controller().run_job(job_id, steps, Some(max_duration)).map(|_| ()).map_err(|e| NodeError::Rejected(e.to_string()))
    }

    fn poll_job(&self, job_id: &str) -> Result<NodeJobStatus, NodeError> {
        self.check()?;
        let c = self.controller();
        let run = c.job(job_id).ok_or_else(|| NodeError::NotFound(format!("job {job_id}")))?;
        Ok(match run.state {
            JobRunState::Running => NodeJobStatus::Running,
            _ => NodeJobStatus::Done(run.clone()),
        })
    }

    fn abort_job(&self, _job_id: &str) -> Result<(), NodeError> {
        self.check()?;
        self.controller().cleanup(true).map(|_| ()).map_err(|e| NodeError::Rejected(e.to_string()))
    }

    fn fetch_artifact(&self, name: &str) -> Result<Vec<u8>, NodeError> {
        self.check()?;
        self.controller().artifact(name).map_err(|e| NodeError::NotFound(e.to_string()))
    }
}
