use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::store::RegistrySnapshot;
use super::{
    valid_node_id, AccessError, ArtifactEntry, Clock, DeviceList, Event, JobExecution, JobKind, JobSpec, JobState, NodeClient, NodeError,
    NodeJobStatus, NodeState, Principal, Role, StateStore, VantagePointRecord, DEFAULT_REFRESH_PERIOD_S, DEFAULT_ZONE,
};
use crate::controller::{JobRunState, PipelineStep};

/// Builds the client used to reach a registered vantage point.
pub type Connector = Arc<dyn Fn(&VantagePointRecord) -> Arc<dyn NodeClient> + Send + Sync>;

pub const PROVISIONING_OWNER: &str = "system";
pub const PROVISIONING_MAX_DURATION_S: f64 = 600.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerConfig {
    pub zone: String,
    pub refresh_period_s: f64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self { zone: DEFAULT_ZONE.into(), refresh_period_s: DEFAULT_REFRESH_PERIOD_S }
    }
}

/// One job state change, as observed by the scheduler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub at: f64,
    pub job_id: String,
    pub vantage_id: Option<String>,
    pub from: Option<JobState>,
    pub to: JobState,
}

pub struct AccessServer {
    config: ServerConfig,
    clock: Arc<dyn Clock>,
    store: StateStore,
    connector: Connector,
    nodes: BTreeMap<String, VantagePointRecord>,
    clients: BTreeMap<String, Arc<dyn NodeClient>>,
    jobs: BTreeMap<String, JobExecution>,
    next_seq: u64,
    principals: BTreeMap<String, Principal>,
    tester_tokens: BTreeMap<String, String>,
    artifacts: BTreeMap<(String, String), Vec<u8>>,
    history: Vec<Transition>,
}

fn new_token() -> String {
    format!("{:032x}", rand::random::<u128>())
}

fn valid_artifact_name(name: &str) -> bool {
    !name.is_empty() && name != "." && name != ".." && name.bytes().all(|b| b.is_ascii_alphanumeric() || b"-_.".contains(&b))
}

impl AccessServer {
    pub fn new(config: ServerConfig, clock: Arc<dyn Clock>, store: StateStore, connector: Connector) -> Self {
        Self {
            config,
            clock,
            store,
            connector,
            nodes: BTreeMap::new(),
            clients: BTreeMap::new(),
            jobs: BTreeMap::new(),
            next_seq: 1,
            principals: BTreeMap::new(),
            tester_tokens: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            history: Vec::new(),
        }
    }

    /// Rebuilds state from the store's event log. Jobs caught mid-flight by
    /// a restart are failed; their nodes get a cleanup on next dispatch.
    pub fn open(config: ServerConfig, clock: Arc<dyn Clock>, store: StateStore, connector: Connector) -> Result<Self, AccessError> {
        let events = store.load_events()?;
        let mut s = Self::new(config, clock, store, connector);
        for e in events {
            match e {
                Event::Principal { principal, token } => {
                    s.principals.insert(token, principal);
                }
                Event::Node { record } => {
                    s.nodes.insert(record.id.clone(), record);
                }
                Event::NodeRemoved { id } => {
                    s.nodes.remove(&id);
                }
                Event::Job { execution } => {
                    s.next_seq = s.next_seq.max(execution.seq + 1);
                    s.jobs.insert(execution.job_id.clone(), execution);
                }
            }
        }
        for record in s.nodes.values() {
            s.clients.insert(record.id.clone(), (s.connector)(record));
        }
        let interrupted: Vec<String> = s.jobs.values().filter(|j| j.state.is_active()).map(|j| j.job_id.clone()).collect();
        for id in interrupted {
            s.transition(&id, JobState::Failed, Some("access server restarted".into()))?;
        }
        Ok(s)
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    pub fn now(&self) -> f64 {
        self.clock.now()
    }

    // ---- principals ----

    /// Creates the first administrator; refused once any principal exists.
    pub fn bootstrap_admin(&mut self, id: &str) -> Result<String, AccessError> {
        if !self.principals.is_empty() {
            return Err(AccessError::Conflict("already bootstrapped".into()));
        }
        self.insert_principal(Principal { id: id.into(), role: Role::Administrator })
    }

    /// Returns a bearer token for a new principal.
    pub fn add_principal(&mut self, caller: &Principal, id: &str, role: Role) -> Result<String, AccessError> {
        require(caller, &[Role::Administrator], "only administrators manage principals")?;
        if id.is_empty() {
            return Err(AccessError::Validation("empty principal id".into()));
        }
        self.insert_principal(Principal { id: id.into(), role })
    }

    fn insert_principal(&mut self, principal: Principal) -> Result<String, AccessError> {
        let token = new_token();
        self.store.append(&Event::Principal { principal: principal.clone(), token: token.clone() })?;
        self.principals.insert(token.clone(), principal);
        Ok(token)
    }

    pub fn authenticate(&self, token: &str) -> Result<Principal, AccessError> {
        if let Some(p) = self.principals.get(token) {
            return Ok(p.clone());
        }
        if let Some(job_id) = self.tester_tokens.get(token) {
            if self.jobs.get(job_id).is_some_and(|j| !j.state.is_terminal()) {
                return Ok(Principal { id: format!("tester:{job_id}"), role: Role::Tester });
            }
        }
        Err(AccessError::Unauthenticated)
    }

    /// Shares a job's live session with a tester. The token works until the job ends.
    pub fn issue_tester_token(&mut self, caller: &Principal, job_id: &str) -> Result<String, AccessError> {
        let job = self.jobs.get(job_id).ok_or_else(|| AccessError::NotFound(format!("job {job_id}")))?;
        if caller.role != Role::Administrator && !(caller.role == Role::Experimenter && job.spec.owner == caller.id) {
            return Err(AccessError::Permission("only the job owner or an administrator can share it".into()));
        }
        if job.state.is_terminal() {
            return Err(AccessError::Conflict(format!("job {job_id} has finished")));
        }
        let token = new_token();
        self.tester_tokens.insert(token.clone(), job_id.to_string());
        Ok(token)
    }

    /// Whether a tester token may attach to the mirroring session on `vantage_id`.
    pub fn tester_may_attach(&self, token: &str, vantage_id: &str) -> bool {
        self.tester_tokens
            .get(token)
            .and_then(|job_id| self.jobs.get(job_id))
            .is_some_and(|j| !j.state.is_terminal() && j.vantage_id.as_deref() == Some(vantage_id))
    }

    // ---- registry ----

    pub fn register_vantage_point(
        &mut self,
        caller: &Principal,
        id: &str,
        address: &str,
        credential: &str,
        location: &str,
        labels: impl IntoIterator<Item = String>,
    ) -> Result<VantagePointRecord, AccessError> {
        require(caller, &[Role::Administrator], "only administrators register vantage points")?;
        if !valid_node_id(id) {
            return Err(AccessError::Validation(format!("vantage point id {id:?} must match [a-z0-9-]{{1,32}}")));
        }
        if address.is_empty() {
            return Err(AccessError::Validation("empty address".into()));
        }
        let labels = labels.into_iter().collect();
        let fresh = match self.nodes.get_mut(id) {
            Some(existing) => {
                if existing.credential != credential {
                    return Err(AccessError::Conflict(format!("vantage point {id:?} is registered with a different credential")));
                }
                existing.address = address.to_string();
                existing.location = location.to_string();
                existing.labels = labels;
                false
            }
            None => {
                let record = VantagePointRecord {
                    id: id.to_string(),
                    address: address.to_string(),
                    dns_name: format!("{id}.{}", self.config.zone),
                    state: NodeState::Offline,
                    last_seen: None,
                    location: location.to_string(),
                    labels,
                    devices: Vec::new(),
                    refreshed: false,
                    credential: credential.to_string(),
                };
                self.nodes.insert(id.to_string(), record);
                true
            }
        };
        let record = self.nodes[id].clone();
        self.clients.insert(id.to_string(), (self.connector)(&record));
        self.store.append(&Event::Node { record })?;
        self.probe(id)?;
        if fresh {
            let spec = JobSpec {
                job_id: None,
                kind: JobKind::Control,
                constraints: super::Constraints { vantage_id: Some(id.to_string()), ..Default::default() },
                steps: vec![PipelineStep::Cleanup { force: true }],
                max_duration: PROVISIONING_MAX_DURATION_S,
                owner: PROVISIONING_OWNER.into(),
            };
            self.enqueue(spec)?;
        }
        self.persist_registry()?;
        Ok(self.nodes[id].clone())
    }

    pub fn remove_vantage_point(&mut self, caller: &Principal, id: &str) -> Result<(), AccessError> {
        require(caller, &[Role::Administrator], "only administrators remove vantage points")?;
        if !self.nodes.contains_key(id) {
            return Err(AccessError::NotFound(format!("vantage point {id}")));
        }
        if self.active_job_on(id).is_some() {
            return Err(AccessError::Conflict(format!("vantage point {id} is running a job")));
        }
        self.nodes.remove(id);
        self.clients.remove(id);
        self.store.append(&Event::NodeRemoved { id: id.to_string() })?;
        self.persist_registry()
    }

    fn expire_stale(&mut self) -> Result<(), AccessError> {
        let cutoff = self.now() - 2.0 * self.config.refresh_period_s;
        let stale: Vec<String> =
            self.nodes.values().filter(|n| n.state == NodeState::Online && n.last_seen.is_none_or(|t| t < cutoff)).map(|n| n.id.clone()).collect();
        for id in stale {
            self.mark_offline(&id, "not seen for two refresh periods")?;
        }
        Ok(())
    }

    pub fn list_nodes(&mut self, label: Option<&str>, state: Option<NodeState>) -> Result<Vec<VantagePointRecord>, AccessError> {
        self.expire_stale()?;
        Ok(self
            .nodes
            .values()
            .filter(|n| label.is_none_or(|l| n.labels.contains(l)))
            .filter(|n| state.is_none_or(|s| n.state == s))
            .cloned()
            .collect())
    }

    pub fn node(&self, id: &str) -> Option<&VantagePointRecord> {
        self.nodes.get(id)
    }

    pub fn list_devices(&self, id: &str) -> Result<DeviceList, AccessError> {
        let n = self.nodes.get(id).ok_or_else(|| AccessError::NotFound(format!("vantage point {id}")))?;
        Ok(DeviceList { devices: n.devices.clone(), stale: !n.refreshed })
    }

    pub fn snapshot(&self) -> RegistrySnapshot {
        RegistrySnapshot { zone: self.config.zone.clone(), nodes: self.nodes.values().cloned().collect() }
    }

    fn persist_registry(&self) -> Result<(), AccessError> {
        self.store.write_registry(&self.snapshot())
    }

    /// Probes one node; failures mark it offline and fail its running job.
    fn probe(&mut self, id: &str) -> Result<bool, AccessError> {
        let Some(client) = self.clients.get(id).cloned() else { return Ok(false) };
        match client.status() {
            Ok(status) => {
                let now = self.now();
                let n = self.nodes.get_mut(id).expect("probed node is registered");
                let changed = n.state != NodeState::Online || n.devices != status.devices || !n.refreshed;
                n.state = NodeState::Online;
                n.last_seen = Some(now);
                n.devices = status.devices;
                n.refreshed = true;
                if changed {
                    let record = n.clone();
                    self.store.append(&Event::Node { record })?;
                }
                Ok(true)
            }
            Err(e) => {
                self.mark_offline(id, &e.to_string())?;
                Ok(false)
            }
        }
    }

    fn mark_offline(&mut self, id: &str, reason: &str) -> Result<(), AccessError> {
        if let Some(n) = self.nodes.get_mut(id) {
            if n.state != NodeState::Offline {
                n.state = NodeState::Offline;
                let record = n.clone();
                self.store.append(&Event::Node { record })?;
            }
        }
        if let Some(job_id) = self.active_job_on(id) {
            self.transition(&job_id, JobState::Failed, Some(format!("vantage point {id} went offline: {reason}")))?;
        }
        Ok(())
    }

    /// Probes every node and persists the registry snapshot.
    pub fn refresh(&mut self) -> Result<RegistrySnapshot, AccessError> {
        let ids: Vec<String> = self.nodes.keys().cloned().collect();
        for id in ids {
            self.probe(&id)?;
        }
        self.persist_registry()?;
        Ok(self.snapshot())
    }

    // ---- jobs ----

    pub fn submit_job(&mut self, caller: &Principal, mut spec: JobSpec) -> Result<String, AccessError> {
        require(caller, &[Role::Administrator, Role::Experimenter], "testers cannot submit jobs")?;
        spec.validate()?;
        if let Some(v) = &spec.constraints.vantage_id {
            if !self.nodes.contains_key(v) {
                return Err(AccessError::Validation(format!("unknown vantage point {v:?}")));
            }
        }
        if let Some(d) = &spec.constraints.device_id {
            if !self.nodes.values().any(|n| n.devices.iter().any(|s| &s.device_id == d)) {
                return Err(AccessError::Validation(format!("unknown device {d:?}")));
            }
        }
        spec.owner = caller.id.clone();
        self.enqueue(spec)
    }

    fn enqueue(&mut self, mut spec: JobSpec) -> Result<String, AccessError> {
        let seq = self.next_seq;
        let job_id = match spec.job_id.take() {
            Some(id) if !valid_artifact_name(&id) => return Err(AccessError::Validation(format!("job id {id:?} has unsupported characters"))),
            Some(id) if self.jobs.contains_key(&id) => return Err(AccessError::Conflict(format!("job {id} exists"))),
            Some(id) => id,
            None => format!("job-{seq}"),
        };
        spec.job_id = Some(job_id.clone());
        self.next_seq += 1;
        let execution = JobExecution {
            job_id: job_id.clone(),
            spec,
            seq,
            vantage_id: None,
            state: JobState::Queued,
            submitted_at: self.now(),
            started_at: None,
            finished_at: None,
            artifacts: Vec::new(),
            error: None,
        };
        self.store.append(&Event::Job { execution: execution.clone() })?;
        self.history.push(Transition { at: execution.submitted_at, job_id: job_id.clone(), vantage_id: None, from: None, to: JobState::Queued });
        self.jobs.insert(job_id.clone(), execution);
        Ok(job_id)
    }

    pub fn job(&self, job_id: &str) -> Result<&JobExecution, AccessError> {
        self.jobs.get(job_id).ok_or_else(|| AccessError::NotFound(format!("job {job_id}")))
    }

    pub fn jobs(&self) -> impl Iterator<Item = &JobExecution> {
        self.jobs.values()
    }

    pub fn history(&self) -> &[Transition] {
        &self.history
    }

    fn active_job_on(&self, vantage_id: &str) -> Option<String> {
        self.jobs.values().find(|j| j.state.is_active() && j.vantage_id.as_deref() == Some(vantage_id)).map(|j| j.job_id.clone())
    }

    fn transition(&mut self, job_id: &str, to: JobState, error: Option<String>) -> Result<(), AccessError> {
        let now = self.now();
        let job = self.jobs.get_mut(job_id).ok_or_else(|| AccessError::NotFound(format!("job {job_id}")))?;
        if !job.state.can_become(to) {
            return Err(AccessError::Transition { job_id: job_id.into(), from: job.state, to });
        }
        let from = job.state;
        job.state = to;
        if to == JobState::Running {
            job.started_at = Some(now);
        }
        if to.is_terminal() {
            job.finished_at = Some(now);
        }
        if error.is_some() {
            job.error = error;
        }
        let execution = job.clone();
        self.history.push(Transition { at: now, job_id: job_id.into(), vantage_id: execution.vantage_id.clone(), from: Some(from), to });
        self.store.append(&Event::Job { execution })
    }

    /// Aborts a queued job, or a running one after forcing its node safe.
    pub fn abort_job(&mut self, caller: &Principal, job_id: &str) -> Result<(), AccessError> {
        let job = self.job(job_id)?;
        if caller.role != Role::Administrator && !(caller.role == Role::Experimenter && job.spec.owner == caller.id) {
            return Err(AccessError::Permission("only the job owner or an administrator can abort it".into()));
        }
        match job.state {
            JobState::Queued => self.transition(job_id, JobState::Aborted, Some("aborted by request".into())),
            JobState::Dispatched | JobState::Running => self.abort_running(job_id, "aborted by request"),
            s => Err(AccessError::Conflict(format!("job {job_id} is already {s:?}"))),
        }
    }

    fn abort_running(&mut self, job_id: &str, reason: &str) -> Result<(), AccessError> {
        let vantage = self.jobs[job_id].vantage_id.clone().unwrap_or_default();
        if self.jobs[job_id].state == JobState::Dispatched {
            return self.transition(job_id, JobState::Failed, Some(reason.into()));
        }
        if let Some(client) = self.clients.get(&vantage).cloned() {
            if let Err(NodeError::Unreachable(e)) = client.abort_job(job_id) {
                self.transition(job_id, JobState::Aborted, Some(reason.into()))?;
                return self.mark_offline(&vantage, &e);
            }
        }
        self.transition(job_id, JobState::Aborted, Some(reason.into()))
    }

    fn satisfies(node: &VantagePointRecord, spec: &JobSpec) -> bool {
        let c = &spec.constraints;
        c.vantage_id.as_deref().is_none_or(|v| v == node.id)
            && c.device_id.as_deref().is_none_or(|d| node.devices.iter().any(|s| s.device_id == d))
            && c.labels.is_subset(&node.labels)
    }

    /// Settles finished jobs, then gives each idle online node its oldest
    /// satisfiable queued job. Returns the ids dispatched.
    pub fn schedule(&mut self) -> Result<Vec<String>, AccessError> {
        self.expire_stale()?;
        let mut dispatched = Vec::new();
        loop {
            self.poll_active()?;
            let round = self.dispatch_round()?;
            if round.is_empty() {
                break;
            }
            dispatched.extend(round);
        }
        Ok(dispatched)
    }

    fn poll_active(&mut self) -> Result<(), AccessError> {
        let active: Vec<(String, String)> =
            self.jobs.values().filter(|j| j.state == JobState::Running).map(|j| (j.job_id.clone(), j.vantage_id.clone().unwrap_or_default())).collect();
        let now = self.now();
        for (job_id, vantage) in active {
            let Some(client) = self.clients.get(&vantage).cloned() else {
                self.transition(&job_id, JobState::Failed, Some(format!("vantage point {vantage} was removed")))?;
                continue;
            };
            match client.poll_job(&job_id) {
                Ok(NodeJobStatus::Running) => {
                    let job = &self.jobs[&job_id];
                    if now - job.started_at.unwrap_or(now) > job.spec.max_duration {
                        self.abort_running(&job_id, "exceeded max_duration")?;
                    }
                }
                Ok(NodeJobStatus::Done(run)) => {
                    self.collect_artifacts(&job_id, &vantage, &run.artifacts, client.as_ref())?;
                    let (state, error) = match run.state {
                        JobRunState::Succeeded => (JobState::Succeeded, None),
                        JobRunState::Aborted => (JobState::Aborted, run.error.clone()),
                        JobRunState::Failed | JobRunState::Running => (JobState::Failed, run.error.clone()),
                    };
                    self.transition(&job_id, state, error)?;
                }
                Err(NodeError::Unreachable(e)) => self.mark_offline(&vantage, &e)?,
                Err(e) => self.transition(&job_id, JobState::Failed, Some(e.to_string()))?,
            }
        }
        Ok(())
    }

    fn collect_artifacts(&mut self, job_id: &str, vantage: &str, names: &[String], client: &dyn NodeClient) -> Result<(), AccessError> {
        let mut entries = Vec::with_capacity(names.len());
        for name in names {
            let reference = match client.fetch_artifact(name) {
                Ok(data) if valid_artifact_name(name) => {
                    self.store.save_artifact(job_id, name, &data)?;
                    self.artifacts.insert((job_id.to_string(), name.clone()), data);
                    format!("store://{job_id}/{name}")
                }
                _ => format!("node://{vantage}/{name}"),
            };
            entries.push(ArtifactEntry { name: name.clone(), reference });
        }
        if let Some(job) = self.jobs.get_mut(job_id) {
            job.artifacts = entries;
        }
        Ok(())
    }

    fn dispatch_round(&mut self) -> Result<Vec<String>, AccessError> {
        let mut out = Vec::new();
        let idle: Vec<String> =
            self.nodes.values().filter(|n| n.state == NodeState::Online).map(|n| n.id.clone()).filter(|id| self.active_job_on(id).is_none()).collect();
        for node_id in idle {
            let mut queued: Vec<&JobExecution> = self.jobs.values().filter(|j| j.state == JobState::Queued).collect();
            queued.sort_by_key(|j| j.seq);
            let node = &self.nodes[&node_id];
            let Some(job_id) = queued.into_iter().find(|j| Self::satisfies(node, &j.spec)).map(|j| j.job_id.clone()) else { continue };
            let Some(client) = self.clients.get(&node_id).cloned() else { continue };
            self.jobs.get_mut(&job_id).expect("queued job").vantage_id = Some(node_id.clone());
            self.transition(&job_id, JobState::Dispatched, None)?;
            let (steps, max_duration) = {
                let spec = &self.jobs[&job_id].spec;
                (spec.steps.clone(), spec.max_duration)
            };
            match client.start_job(&job_id, &steps, max_duration) {
                Ok(()) => self.transition(&job_id, JobState::Running, None)?,
                Err(NodeError::Unreachable(e)) => {
                    self.transition(&job_id, JobState::Failed, Some(format!("dispatch failed: {e}")))?;
                    self.mark_offline(&node_id, &e)?;
                }
                Err(e) => self.transition(&job_id, JobState::Failed, Some(format!("dispatch failed: {e}")))?,
            }
            out.push(job_id);
        }
        Ok(out)
    }

    /// Collected artifact bytes, fetched from the node if not yet collected.
    pub fn artifact(&self, job_id: &str, name: &str) -> Result<Vec<u8>, AccessError> {
        let job = self.job(job_id)?;
        if !job.artifacts.iter().any(|a| a.name == name) {
            return Err(AccessError::NotFound(format!("artifact {name} of {job_id}")));
        }
        if let Some(data) = self.artifacts.get(&(job_id.to_string(), name.to_string())) {
            return Ok(data.clone());
        }
        if let Some(data) = self.store.load_artifact(job_id, name) {
            return Ok(data);
        }
        let vantage = job.vantage_id.as_deref().unwrap_or_default();
        let client = self.clients.get(vantage).ok_or_else(|| AccessError::NotFound(format!("vantage point {vantage}")))?;
        client.fetch_artifact(name).map_err(|e| AccessError::NotFound(e.to_string()))
    }

    /// Checks the one-job-per-node rule over the current job table.
    pub fn check_exclusion(&self) -> Result<(), String> {
        let mut busy: BTreeMap<&str, &str> = BTreeMap::new();
        for j in self.jobs.values().filter(|j| j.state.is_active()) {
            let v = j.vantage_id.as_deref().ok_or_else(|| format!("active job {} has no vantage point", j.job_id))?;
            if let Some(other) = busy.insert(v, &j.job_id) {
                return Err(format!("{v} runs {other} and {}", j.job_id));
            }
        }
        Ok(())
    }
}

fn require(caller: &Principal, roles: &[Role], msg: &str) -> Result<(), AccessError> {
    if roles.contains(&caller.role) {
        Ok(())
    } else {
        Err(AccessError::Permission(msg.into()))
    }
}
