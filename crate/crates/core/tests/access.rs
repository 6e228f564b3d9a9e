use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use pb_core::access::{
    AccessError, AccessServer, Connector, Constraints, JobKind, JobSpec, JobState, LocalNode, ManualClock, NodeClient, NodeState, Principal,
    Role, ServerConfig, StateStore, PROVISIONING_OWNER,
};
use pb_core::controller::{Controller, NodeSetupOptions, PipelineStep};
use pb_core::device::DeviceConfig;

struct Lab {
    clock: ManualClock,
    nodes: Arc<Mutex<BTreeMap<String, LocalNode>>>,
}

impl Lab {
    fn new() -> Self {
        Self { clock: ManualClock::new(1000.0), nodes: Arc::default() }
    }

    fn add(&self, id: &str, devices: &[(&str, &str)]) -> LocalNode {
        let devs = devices.iter().enumerate().map(|(i, (d, p))| DeviceConfig::new(d, p, i as u64 + 1).build().unwrap()).collect::<Vec<_>>();
        let mut c = Controller::with_devices(id, devs).unwrap();
        c.set_sample_rate(500.0).unwrap();
        let node = LocalNode::new(c);
        self.nodes.lock().unwrap().insert(id.to_string(), node.clone());
        node
    }

    fn connector(&self) -> Connector {
        let nodes = self.nodes.clone();
        Arc::new(move |r| -> Arc<dyn NodeClient> { Arc::new(nodes.lock().unwrap()[&r.id].clone()) })
    }

    fn server(&self, store: StateStore) -> AccessServer {
        AccessServer::new(ServerConfig::default(), Arc::new(self.clock.clone()), store, self.connector())
    }
}

fn admin() -> Principal {
    Principal { id: "root".into(), role: Role::Administrator }
}

fn alice() -> Principal {
    Principal { id: "alice".into(), role: Role::Experimenter }
}

fn measure(device: &str, secs: f64) -> JobSpec {
    JobSpec {
        job_id: None,
        kind: JobKind::Experiment,
        constraints: Constraints { device_id: Some(device.into()), ..Default::default() },
        steps: vec![
            PipelineStep::NodeSetup { device_id: device.into(), options: NodeSetupOptions { power: true, ..Default::default() } },
            PipelineStep::Measure { device_id: device.into(), duration_s: secs },
        ],
        max_duration: 600.0,
        owner: String::new(),
    }
}

#[test]
fn registration_assigns_dns_and_provisions() {
    let lab = Lab::new();
    lab.add("vp-1", &[("a1", "J7DUO")]);
    let mut s = lab.server(StateStore::memory());
    let r = s.register_vantage_point(&admin(), "vp-1", "10.0.0.5:8081", "k1", "lab", ["eu".to_string()]).unwrap();
    assert_eq!(r.dns_name, "vp-1.powerbench.test");
    assert_eq!(r.state, NodeState::Online);
    assert!(r.refreshed);
    assert_eq!(s.list_devices("vp-1").unwrap().devices[0].device_id, "a1");

    let provisioning: Vec<_> = s.jobs().filter(|j| j.spec.owner == PROVISIONING_OWNER).collect();
    assert_eq!(provisioning.len(), 1);
    assert_eq!(provisioning[0].spec.kind, JobKind::Control);

    // same credential: address update, same name; other credential: refused
    let again = s.register_vantage_point(&admin(), "vp-1", "10.0.0.6:8081", "k1", "lab", []).unwrap();
    assert_eq!(again.address, "10.0.0.6:8081");
    assert_eq!(again.dns_name, r.dns_name);
    assert!(matches!(s.register_vantage_point(&admin(), "vp-1", "x", "k2", "", []), Err(AccessError::Conflict(_))));
    assert!(matches!(s.register_vantage_point(&admin(), "VP_2", "x", "k", "", []), Err(AccessError::Validation(_))));
    assert!(matches!(s.register_vantage_point(&alice(), "vp-2", "x", "k", "", []), Err(AccessError::Permission(_))));
    assert_eq!(s.jobs().filter(|j| j.spec.owner == PROVISIONING_OWNER).count(), 1);

    s.schedule().unwrap();
    let p = s.jobs().find(|j| j.spec.owner == PROVISIONING_OWNER).unwrap();
    assert_eq!(p.state, JobState::Succeeded);
}

#[test]
fn fifo_per_node_and_constraint_matching() {
    let lab = Lab::new();
    lab.add("vp-a", &[("a1", "J7DUO")]);
    lab.add("vp-b", &[("b1", "LMX210")]);
    let mut s = lab.server(StateStore::memory());
    s.register_vantage_point(&admin(), "vp-a", "a:1", "k", "", ["gpu".to_string()]).unwrap();
    s.register_vantage_point(&admin(), "vp-b", "b:1", "k", "", []).unwrap();
    s.schedule().unwrap();

    let j1 = s.submit_job(&alice(), measure("a1", 1.0)).unwrap();
    let j2 = s.submit_job(&alice(), measure("b1", 1.0)).unwrap();
    let j3 = s.submit_job(&alice(), measure("a1", 1.0)).unwrap();
    let mut labelled = measure("a1", 1.0);
    labelled.constraints = Constraints { labels: ["missing".to_string()].into(), ..Default::default() };
    let j4 = s.submit_job(&alice(), labelled).unwrap();
    assert_eq!(s.job(&j1).unwrap().spec.owner, "alice");

    s.schedule().unwrap();
    for j in [&j1, &j2, &j3] {
        assert_eq!(s.job(j).unwrap().state, JobState::Succeeded, "{:?}", s.job(j).unwrap().error);
    }
    assert_eq!(s.job(&j1).unwrap().vantage_id.as_deref(), Some("vp-a"));
    assert_eq!(s.job(&j2).unwrap().vantage_id.as_deref(), Some("vp-b"));
    assert_eq!(s.job(&j4).unwrap().state, JobState::Queued);

    // dispatch order on vp-a follows submission order
    let order: Vec<_> =
        s.history().iter().filter(|t| t.to == JobState::Dispatched && t.vantage_id.as_deref() == Some("vp-a")).map(|t| t.job_id.clone()).collect();
    let p1 = order.iter().position(|j| *j == j1).unwrap();
    let p3 = order.iter().position(|j| *j == j3).unwrap();
    assert!(p1 < p3);

    let csv = s.job(&j1).unwrap().artifacts.iter().find(|a| a.name.ends_with(".csv")).unwrap().clone();
    assert!(csv.reference.starts_with("store://"));
    assert!(!s.artifact(&j1, &csv.name).unwrap().is_empty());
}

#[test]
fn submission_validation_and_roles() {
    let lab = Lab::new();
    lab.add("vp-a", &[("a1", "J7DUO")]);
    let mut s = lab.server(StateStore::memory());
    s.register_vantage_point(&admin(), "vp-a", "a:1", "k", "", []).unwrap();
    let tester = Principal { id: "t".into(), role: Role::Tester };
    assert!(matches!(s.submit_job(&tester, measure("a1", 1.0)), Err(AccessError::Permission(_))));
    assert!(matches!(s.submit_job(&alice(), measure("zz", 1.0)), Err(AccessError::Validation(_))));
    let mut bad = measure("a1", 1.0);
    bad.max_duration = 0.0;
    assert!(matches!(s.submit_job(&alice(), bad), Err(AccessError::Validation(_))));
    let mut both = measure("a1", 1.0);
    both.constraints.vantage_id = Some("vp-a".into());
    assert!(matches!(s.submit_job(&alice(), both), Err(AccessError::Validation(_))));
    let spec: Result<JobSpec, _> = serde_json::from_str(r#"{"kind":"experiment","steps":[],"max_duration":1,"bogus":1}"#);
    assert!(spec.is_err());
}

#[test]
fn tester_tokens_expire_with_the_job() {
    let lab = Lab::new();
    lab.add("vp-a", &[("a1", "J7DUO")]);
    let mut s = lab.server(StateStore::memory());
    let root = s.bootstrap_admin("root").unwrap();
    let root = s.authenticate(&root).unwrap();
    assert!(s.bootstrap_admin("again").is_err());
    let alice_token = s.add_principal(&root, "alice", Role::Experimenter).unwrap();
    let alice = s.authenticate(&alice_token).unwrap();
    s.register_vantage_point(&root, "vp-a", "a:1", "k", "", []).unwrap();
    let j = s.submit_job(&alice, measure("a1", 1.0)).unwrap();
    let bob = Principal { id: "bob".into(), role: Role::Experimenter };
    assert!(matches!(s.issue_tester_token(&bob, &j), Err(AccessError::Permission(_))));
    let t = s.issue_tester_token(&alice, &j).unwrap();
    assert_eq!(s.authenticate(&t).unwrap().role, Role::Tester);
    s.schedule().unwrap();
    assert!(s.job(&j).unwrap().state.is_terminal());
    assert!(matches!(s.authenticate(&t), Err(AccessError::Unauthenticated)));
    assert!(!s.tester_may_attach(&t, "vp-a"));
}

#[test]
fn refresh_marks_unreachable_offline_and_stale_nodes_expire() {
    let lab = Lab::new();
    let a = lab.add("vp-a", &[("a1", "J7DUO")]);
    lab.add("vp-b", &[("b1", "LMX210")]);
    let mut s = lab.server(StateStore::memory());
    s.register_vantage_point(&admin(), "vp-a", "a:1", "k", "", []).unwrap();
    s.register_vantage_point(&admin(), "vp-b", "b:1", "k", "", []).unwrap();
    a.set_reachable(false);
    s.refresh().unwrap();
    let offline = s.list_nodes(None, Some(NodeState::Offline)).unwrap();
    assert_eq!(offline.iter().map(|n| n.id.as_str()).collect::<Vec<_>>(), ["vp-a"]);

    // a queued job for the offline node waits rather than failing
    s.schedule().unwrap();
    let j = s.submit_job(&alice(), measure("a1", 1.0)).unwrap();
    s.schedule().unwrap();
    assert_eq!(s.job(&j).unwrap().state, JobState::Queued);
    a.set_reachable(true);
    s.refresh().unwrap();
    s.schedule().unwrap();
    assert_eq!(s.job(&j).unwrap().state, JobState::Succeeded);

    // no probe for two periods: offline without any network call
    lab.clock.advance(2.0 * s.config().refresh_period_s + 1.0);
    assert_eq!(s.list_nodes(None, Some(NodeState::Online)).unwrap().len(), 0);
    s.refresh().unwrap();
    assert_eq!(s.list_nodes(None, Some(NodeState::Online)).unwrap().len(), 2);
}

/// A node that accepts jobs but only finishes them when told to.
struct SlowNode {
    inner: LocalNode,
    pending: Mutex<Option<(String, Vec<PipelineStep>)>>,
}

impl NodeClient for SlowNode {
    fn status(&self) -> Result<pb_core::controller::StatusDocument, pb_core::access::NodeError> {
        self.inner.status()
    }
    fn start_job(&self, job_id: &str, steps: &[PipelineStep], _max: f64) -> Result<(), pb_core::access::NodeError> {
        *self.pending.lock().unwrap() = Some((job_id.into(), steps.to_vec()));
        Ok(())
    }
    fn poll_job(&self, job_id: &str) -> Result<pb_core::access::NodeJobStatus, pb_core::access::NodeError> {
        match &*self.pending.lock().unwrap() {
            Some((id, _)) if id == job_id => Ok(pb_core::access::NodeJobStatus::Running),
            _ => self.inner.poll_job(job_id),
        }
    }
    fn abort_job(&self, job_id: &str) -> Result<(), pb_core::access::NodeError> {
        self.pending.lock().unwrap().take();
        self.inner.abort_job(job_id)
    }
    fn fetch_artifact(&self, name: &str) -> Result<Vec<u8>, pb_core::access::NodeError> {
        self.inner.fetch_artifact(name)
    }
}

#[test]
fn overlong_and_orphaned_jobs() {
    let lab = Lab::new();
    let inner = lab.add("vp-a", &[("a1", "J7DUO")]);
    let slow = Arc::new(SlowNode { inner: inner.clone(), pending: Mutex::new(None) });
    let slow2 = slow.clone();
    let connector: Connector = Arc::new(move |_| -> Arc<dyn NodeClient> { slow2.clone() });
    let mut s = AccessServer::new(ServerConfig::default(), Arc::new(lab.clock.clone()), StateStore::memory(), connector);
    s.register_vantage_point(&admin(), "vp-a", "a:1", "k", "", []).unwrap();
    s.schedule().unwrap();
    let provisioning = s.jobs().next().unwrap().job_id.clone();
    assert_eq!(s.job(&provisioning).unwrap().state, JobState::Running);
    let mut spec = measure("a1", 1.0);
    spec.max_duration = 30.0;
    let j = s.submit_job(&alice(), spec).unwrap();
    // the node is busy: the second job stays queued
    s.schedule().unwrap();
    assert_eq!(s.job(&j).unwrap().state, JobState::Queued);
    s.abort_job(&admin(), &provisioning).unwrap();
    s.schedule().unwrap();
    assert_eq!(s.job(&j).unwrap().state, JobState::Running);
    lab.clock.advance(31.0);
    s.schedule().unwrap();
    assert_eq!(s.job(&j).unwrap().state, JobState::Aborted);
    assert!(inner.controller().is_safe());

    let k = s.submit_job(&alice(), measure("a1", 1.0)).unwrap();
    s.schedule().unwrap();
    assert_eq!(s.job(&k).unwrap().state, JobState::Running);
    inner.set_reachable(false);
    s.refresh().unwrap();
    let job = s.job(&k).unwrap();
    assert_eq!(job.state, JobState::Failed);
    assert!(job.error.as_deref().unwrap().contains("offline"));
    s.check_exclusion().unwrap();
}

#[test]
fn state_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let lab = Lab::new();
    lab.add("vp-a", &[("a1", "J7DUO")]);
    let (token, done, queued) = {
        let mut s = lab.server(StateStore::open(dir.path()).unwrap());
        let token = s.bootstrap_admin("root").unwrap();
        s.register_vantage_point(&admin(), "vp-a", "a:1", "k", "", []).unwrap();
        let done = s.submit_job(&alice(), measure("a1", 1.0)).unwrap();
        s.schedule().unwrap();
        let mut later = measure("a1", 1.0);
        later.constraints = Constraints { labels: ["later".to_string()].into(), ..Default::default() };
        let queued = s.submit_job(&alice(), later).unwrap();
        (token, done, queued)
    };
    let s = AccessServer::open(ServerConfig::default(), Arc::new(lab.clock.clone()), StateStore::open(dir.path()).unwrap(), lab.connector()).unwrap();
    assert_eq!(s.authenticate(&token).unwrap().role, Role::Administrator);
    assert_eq!(s.node("vp-a").unwrap().dns_name, "vp-a.powerbench.test");
    assert_eq!(s.job(&done).unwrap().state, JobState::Succeeded);
    assert_eq!(s.job(&queued).unwrap().state, JobState::Queued);
    let csv = s.job(&done).unwrap().artifacts.iter().find(|a| a.name.ends_with(".csv")).unwrap().name.clone();
    assert!(!s.artifact(&done, &csv).unwrap().is_empty());
    assert!(dir.path().join("registry.json").exists());
}
