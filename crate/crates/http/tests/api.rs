use std::sync::{Arc, Mutex};
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use pb_core::access::{
    AccessServer, Connector, Constraints, JobKind, JobSpec, JobState, ManualClock, NodeClient, NodeJobStatus, NodeState, Role, ServerConfig, StateStore,
};
use pb_core::automation::InputCommand;
use pb_core::controller::{Controller, JobRun, JobRunState, NodeSetupOptions, PipelineStep, StatusDocument};
use pb_core::device::{DeviceConfig, Frame, GRID_COLS, GRID_ROWS};
use pb_core::replay::{EventKind, RecordedEvent};
use pb_http::client::{ClientError, HttpNode, ServerClient};
use pb_http::controller_api::{self, NodeApp};
use pb_http::server_api::{self, RegisterNode};
use pb_http::ErrorBody;
use serde_json::{json, Value};
use ureq::Agent;

struct Served {
    base: String,
    rt: tokio::runtime::Runtime,
}

fn serve(app: axum::Router) -> Served {
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    rt.spawn(async move { axum::serve(listener, app).await.unwrap() });
    Served { base, rt }
}

fn controller() -> Controller {
    let devices = [
        DeviceConfig::new("a1", "J7DUO", 1).with_app("com.brave.browser", true).build().unwrap(),
        DeviceConfig::new("i1", "IPHONE7", 2).with_app("com.brave.browser", true).build().unwrap(),
    ];
    let mut c = Controller::with_devices("vp1", devices).unwrap();
    c.set_sample_rate(500.0).unwrap();
    c
}

fn agent() -> Agent {
    Agent::config_builder().http_status_as_error(false).timeout_global(Some(Duration::from_secs(20))).build().into()
}

fn post(a: &Agent, url: &str, body: Value) -> (u16, Value) {
    let mut r = a.post(url).send_json(body).unwrap();
    let status = r.status().as_u16();
    let text = r.body_mut().read_to_string().unwrap();
    (status, serde_json::from_str(&text).unwrap_or(Value::String(text)))
}

fn get(a: &Agent, url: &str) -> (u16, Value) {
    let mut r = a.get(url).call().unwrap();
    let status = r.status().as_u16();
    let text = r.body_mut().read_to_string().unwrap();
    (status, serde_json::from_str(&text).unwrap_or(Value::String(text)))
}

fn node() -> Served {
    serve(controller_api::router(NodeApp::new(controller())))
}

#[test]
fn controller_operations_and_error_statuses() {
    let n = node();
    let a = agent();
    let u = |p: &str| format!("{}{p}", n.base);

    let (s, status) = get(&a, &u("/status"));
    assert_eq!(s, 200);
    let doc: StatusDocument = serde_json::from_value(status).unwrap();
    assert_eq!(doc.node_id, "vp1");
    assert_eq!(doc.devices.len(), 2);

    // voltage before the monitor is on is a state conflict
    let (s, e) = post(&a, &u("/set_voltage"), json!({ "volts": 3.85 }));
    assert_eq!(s, 409);
    assert_eq!(serde_json::from_value::<ErrorBody>(e).unwrap().kind, "state");

    assert_eq!(post(&a, &u("/power_monitor"), json!({ "state": "on" })), (200, json!({ "state": "on" })));
    let (s, e) = post(&a, &u("/set_voltage"), json!({ "volts": 20.0 }));
    assert_eq!((s, e["kind"].as_str()), (400, Some("invalid")));
    let (s, cfg) = post(&a, &u("/set_voltage"), json!({ "volts": 3.85 }));
    assert_eq!(s, 200);
    assert_eq!(cfg["voltage"], 3.85);

    let (s, e) = post(&a, &u("/batt_switch"), json!({ "device_id": "nope" }));
    assert_eq!((s, e["kind"].as_str()), (404, Some("not_found")));
    let (s, _) = post(&a, &u("/node_setup"), json!({ "device_id": "a1", "options": NodeSetupOptions { power: true, ..Default::default() } }));
    assert_eq!(s, 200);
    let (s, started) = post(&a, &u("/start_monitor"), json!({ "device_id": "a1", "duration_s": 5.0 }));
    assert_eq!(s, 200);
    let (s, e) = post(&a, &u("/start_monitor"), json!({ "device_id": "a1", "duration_s": 5.0 }));
    assert_eq!((s, e["kind"].as_str()), (409, Some("exclusivity")));
    let (_, stopped) = post(&a, &u("/stop_monitor"), json!({}));
    assert_eq!(stopped["trace_id"], started["trace_id"]);

    let id = stopped["trace_id"].as_str().unwrap();
    let mut r = a.get(&u(&format!("/artifacts/trace-{id}.csv"))).call().unwrap();
    assert_eq!(r.headers()["content-type"], "text/csv");
    let csv = r.body_mut().read_to_string().unwrap();
    assert!(csv.starts_with("t_s,current_mA,voltage_V"));

    let (s, report) = post(&a, &u("/cleanup"), json!({ "force": true }));
    assert_eq!(s, 200);
    assert_eq!(report["safe"], true);

    // malformed bodies are rejected before they reach the controller
    assert_eq!(post(&a, &u("/power_monitor"), json!({ "state": "on", "extra": 1 })).0, 422);
    assert_eq!(get(&a, &u("/artifacts/missing.csv")).0, 404);
}

#[test]
fn execute_takes_a_command_or_a_shell_line() {
    let n = node();
    let a = agent();
    let u = |p: &str| format!("{}{p}", n.base);
    let cmd = InputCommand::LaunchApp { app: "com.brave.browser".into() };
    let (s, report) = post(&a, &u("/execute"), json!({ "device_id": "a1", "command": cmd }));
    assert_eq!(s, 200, "{report}");
    assert_eq!(report["device_id"], "a1");
    assert!(report["deliveries"].as_u64().unwrap() >= 1);
    let (s, out) = post(&a, &u("/execute"), json!({ "device_id": "a1", "shell": "dumpsys battery" }));
    assert_eq!(s, 200, "{out}");
    assert!(out["output"].is_string());
    assert_eq!(post(&a, &u("/execute"), json!({ "device_id": "a1" })).0, 400);
    assert_eq!(post(&a, &u("/execute"), json!({ "device_id": "a1", "command": cmd, "shell": "ls" })).0, 400);
}

#[test]
fn console_input_drives_a_live_recording() {
    let n = node();
    let a = agent();
    let u = |p: &str| format!("{}{p}", n.base);
    let (_, status) = get(&a, &u("/status"));
    let doc: StatusDocument = serde_json::from_value(status).unwrap();
    assert!(doc.devices.iter().any(|d| d.device_id == "a1"));

    let (s, opened) = post(&a, &u("/recordings"), json!({ "device_id": "a1", "live": true }));
    assert_eq!(s, 200);
    let session = opened["session_id"].as_str().unwrap().to_string();
    let view = (360, 640);
    let events = [
        RecordedEvent::mouse(200, EventKind::MouseDown, 180, 620, view),
        RecordedEvent::mouse(260, EventKind::MouseUp, 180, 620, view),
        RecordedEvent::key(900, EventKind::KeyDown, "Enter", view),
        RecordedEvent::key(950, EventKind::KeyUp, "Enter", view),
    ];
    let (s, report) = post(&a, &u("/input"), json!({ "session_id": session, "events": events }));
    assert_eq!(s, 200, "{report}");
    assert_eq!(report["total"], 4);
    assert!(!report["dispatched"].as_array().unwrap().is_empty());

    let (s, closed) = post(&a, &u(&format!("/recordings/{session}/stop")), json!({}));
    assert_eq!(s, 200, "{closed}");
    assert!(!closed["script"]["steps"].as_array().unwrap().is_empty());
    let (s, e) = post(&a, &u("/input"), json!({ "session_id": session, "events": [] }));
    assert!(s >= 400, "{e}");
    // unknown fields in the console schema are refused
    assert_eq!(post(&a, &u("/input"), json!({ "session_id": session, "events": [], "seq": 1 })).0, 422);
}

#[test]
fn frames_over_json_and_websocket() {
    let n = node();
    let a = agent();
    let u = |p: &str| format!("{}{p}", n.base);
    let (s, e) = get(&a, &u("/frames?device_id=a1"));
    assert_eq!((s, e["kind"].as_str()), (422, Some("device")), "{e}");
    let (s, link) = post(&a, &u("/device_mirroring"), json!({ "device_id": "a1", "state": "on" }));
    assert_eq!(s, 200, "{link}");
    let (s, frames) = get(&a, &u("/frames?device_id=a1&count=3"));
    assert_eq!(s, 200);
    let frames: Vec<Frame> = serde_json::from_value(frames).unwrap();
    assert_eq!(frames.len(), 3);
    assert!(frames.windows(2).all(|w| w[1].seq == w[0].seq + 1));
    assert_eq!(frames[0].cells.len(), GRID_COLS * GRID_ROWS);
    assert_eq!(get(&a, &u("/frames?device_id=zz")).0, 404);

    let ws = format!("{}/frames?device_id=a1&fps=50", n.base.replace("http://", "ws://"));
    let got: Vec<Frame> = n.rt.block_on(async move {
        let (mut socket, _) = tokio_tungstenite::connect_async(ws).await.unwrap();
        let mut got = Vec::new();
        while got.len() < 3 {
            let msg = tokio::time::timeout(Duration::from_secs(5), socket.next()).await.unwrap().unwrap().unwrap();
            if let tokio_tungstenite::tungstenite::Message::Text(t) = msg {
                got.push(serde_json::from_str(&t).unwrap());
            }
        }
        socket.send(tokio_tungstenite::tungstenite::Message::Close(None)).await.unwrap();
        got
    });
    assert!(got.windows(2).all(|w| w[1].seq > w[0].seq));
    assert!(got[0].seq > frames[2].seq);
}

#[test]
fn jobs_run_in_the_background_and_report_progress() {
    let n = node();
    let a = agent();
    let u = |p: &str| format!("{}{p}", n.base);
    let steps = vec![
        PipelineStep::NodeSetup { device_id: "a1".into(), options: NodeSetupOptions { power: true, ..Default::default() } },
        PipelineStep::Measure { device_id: "a1".into(), duration_s: 20.0 },
    ];
    let (s, accepted) = post(&a, &u("/jobs/run"), json!({ "job_id": "j1", "steps": steps }));
    assert_eq!((s, accepted["job_id"].as_str()), (202, Some("j1")));
    let run = loop {
        let (s, body) = get(&a, &u("/jobs/j1"));
        assert_eq!(s, 200);
        let run: JobRun = serde_json::from_value(body).unwrap();
        if run.state != JobRunState::Running {
            break run;
        }
        std::thread::sleep(Duration::from_millis(10));
    };
    assert_eq!(run.state, JobRunState::Succeeded, "{:?}", run.error);
    assert!(run.safe_after);
    assert!(run.artifacts.iter().any(|x| x.ends_with(".csv")));
    assert_eq!(post(&a, &u("/jobs/run"), json!({ "job_id": "j1", "steps": steps })).0, 400);
    assert_eq!(get(&a, &u("/jobs/nope")).0, 404);

    let node = HttpNode::new(&n.base);
    assert_eq!(node.poll_job("j1").unwrap(), NodeJobStatus::Done(run.clone()));
    assert!(node.fetch_artifact(&run.artifacts[0]).is_ok());
    node.abort_job("j1").unwrap();
    assert!(matches!(HttpNode::new("http://127.0.0.1:9").status(), Err(pb_core::access::NodeError::Unreachable(_))));
}

struct Testbed {
    _node: Served,
    server: Served,
    admin: String,
    shared: Arc<Mutex<AccessServer>>,
}

fn testbed() -> Testbed {
    let node = node();
    let clock = Arc::new(ManualClock::new(1000.0));
    let connector: Connector = Arc::new(|r| Arc::new(HttpNode::new(&r.address)) as Arc<dyn NodeClient>);
    let mut access = AccessServer::new(ServerConfig::default(), clock, StateStore::memory(), connector);
    let admin = access.bootstrap_admin("root").unwrap();
    let shared = Arc::new(Mutex::new(access));
    let server = serve(server_api::router(shared.clone()));
    let c = ServerClient::new(&server.base, &admin);
    let view = c.register_node(&RegisterNode { id: "vp1".into(), address: node.base.clone(), credential: "k".into(), location: "lab".into(), labels: vec!["eu".into()] }).unwrap();
    assert_eq!(view.state, NodeState::Online);
    Testbed { _node: node, server, admin, shared }
}

fn wait_terminal(c: &ServerClient, shared: &Arc<Mutex<AccessServer>>, id: &str) -> pb_core::access::JobExecution {
    for _ in 0..2000 {
        shared.lock().unwrap().schedule().unwrap();
        let job = c.job(id).unwrap();
        if job.state.is_terminal() {
            return job;
        }
        std::thread::sleep(Duration::from_millis(5));
    }
    panic!("job {id} never finished");
}

#[test]
fn server_drives_a_node_over_http() {
    let t = testbed();
    let admin = ServerClient::new(&t.server.base, &t.admin);
    let nodes = admin.nodes().unwrap();
    assert_eq!(nodes[0].dns_name, "vp1.powerbench.test");
    let raw = get(&agent(), &format!("{}/nodes", t.server.base));
    assert_eq!(raw.0, 401);
    let mut r = agent().get(&format!("{}/nodes", t.server.base)).header("Authorization", &format!("Bearer {}", t.admin)).call().unwrap();
    let body = r.body_mut().read_to_string().unwrap();
    assert!(!body.contains("credential"), "{body}");
    let devices = admin.devices("vp1").unwrap();
    assert!(!devices.stale);
    assert_eq!(devices.devices.len(), 2);

    let token = admin.add_principal("alice", Role::Experimenter).unwrap();
    let alice = ServerClient::new(&t.server.base, &token);
    let spec = JobSpec {
        job_id: None,
        kind: JobKind::Experiment,
        constraints: Constraints { device_id: Some("a1".into()), ..Default::default() },
        steps: vec![
            PipelineStep::NodeSetup { device_id: "a1".into(), options: NodeSetupOptions { power: true, ..Default::default() } },
            PipelineStep::Measure { device_id: "a1".into(), duration_s: 10.0 },
        ],
        max_duration: 600.0,
        owner: String::new(),
    };
    let id = alice.submit(&spec).unwrap();
    let job = wait_terminal(&alice, &t.shared, &id);
    assert_eq!(job.state, JobState::Succeeded, "{:?}", job.error);
    assert_eq!(job.spec.owner, "alice");
    let csv = job.artifacts.iter().find(|x| x.name.ends_with(".csv")).unwrap();
    assert!(csv.reference.starts_with("store://"));
    let bytes = alice.artifact(&id, &csv.name).unwrap();
    assert!(bytes.starts_with(b"t_s,current_mA,voltage_V"));

    // other experimenters cannot read it
    let bob = ServerClient::new(&t.server.base, &admin.add_principal("bob", Role::Experimenter).unwrap());
    assert!(matches!(bob.job(&id), Err(ClientError::Api { status: 403, .. })));
    assert!(matches!(bob.register_node(&RegisterNode { id: "x".into(), address: "http://h".into(), credential: "c".into(), location: String::new(), labels: vec![] }), Err(ClientError::Api { status: 403, .. })));
    let mut bad = spec.clone();
    bad.steps.clear();
    assert!(matches!(alice.submit(&bad), Err(ClientError::Api { status: 400, .. })));
    assert!(t.shared.lock().unwrap().check_exclusion().is_ok());
}

#[test]
fn tester_tokens_reach_only_the_shared_console() {
    let t = testbed();
    let admin = ServerClient::new(&t.server.base, &t.admin);
    let spec = JobSpec {
        job_id: Some("long".into()),
        kind: JobKind::Experiment,
        constraints: Constraints { vantage_id: Some("vp1".into()), ..Default::default() },
        steps: vec![PipelineStep::Wait { seconds: 1.0 }],
        max_duration: 600.0,
        owner: String::new(),
    };
    // queue it behind nothing but do not schedule: the token needs a live job
    t.shared.lock().unwrap().submit_job(&pb_core::access::Principal { id: "root".into(), role: Role::Administrator }, spec).unwrap();
    let tester = admin.share("long").unwrap();
    let a = agent();
    let mut r = a.get(&format!("{}/nodes/vp1/console", t.server.base)).header("Authorization", &format!("Bearer {tester}")).call().unwrap();
    // the job is queued, not on a node yet
    assert_eq!(r.status().as_u16(), 403, "{}", r.body_mut().read_to_string().unwrap());
    let as_tester = ServerClient::new(&t.server.base, &tester);
    assert!(matches!(as_tester.job("long"), Err(ClientError::Api { status: 403, .. })));
    assert!(matches!(as_tester.nodes(), Err(ClientError::Api { status: 403, .. })));
    let job = wait_terminal(&admin, &t.shared, "long");
    assert_eq!(job.state, JobState::Succeeded);
    assert!(matches!(as_tester.nodes(), Err(ClientError::Api { status: 401, .. })));
}
