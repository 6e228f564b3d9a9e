//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails or runs over its time limit.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use pb_core::access::{
    AccessServer, Connector, Constraints, JobKind, JobSpec, JobState, LocalNode, ManualClock, NodeClient, Role, ServerConfig, StateStore,
};
use pb_core::automation::hid::{decode_keystrokes, encode_key, encode_keystrokes, encode_move, parse_hex_lines, HidKeyboardReport, HidMouseReport, BUTTON_LEFT};
use pb_core::automation::{dispatch, Backend, HidCursor, InputCommand, Key};
use pb_core::controller::{Controller, DeviceSetupOptions, ExecRequest, NodeSetupOptions, PipelineStep, StatusDocument, Switch};
use pb_core::device::{DeviceConfig, SimDevice};
use pb_core::scenarios::{self, ScenarioOptions, STAIRCASE_HOLD_S, STAIRCASE_LEVELS};
use pb_core::trace::{compare_software, PowerTrace, TraceMeta};
use pb_core::wpm::{self, CatalogSpec, SiteCatalog, SiteStatus, WpmRequest};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, f64, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config { cases, failure_persistence: None, max_shrink_iters: 200, ..Config::default() },
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    )
}

// ---------------------------------------------------------------- energy

fn energy_oracle() -> Outcome {
    let (rate, secs, volts) = (5000.0, 10.0, 4.0);
    let n = (rate * secs) as usize;
    let flat = PowerTrace::from_currents(TraceMeta::default(), volts, rate, vec![100.0; n]).map_err(|e| e.to_string())?;
    let e_flat = flat.energy().map_err(|e| e.to_string())?;
    let err_flat = (e_flat - 4.0).abs() / 4.0;

    // I(t) = a + b sin(2 pi f t); exact integral over [0, T)
    let (a, b, f) = (120.0, 80.0, 0.37);
    let w = 2.0 * std::f64::consts::PI * f;
    let currents: Vec<f64> = (0..n).map(|i| a + b * (w * i as f64 / rate).sin()).collect();
    let sine = PowerTrace::from_currents(TraceMeta::default(), volts, rate, currents).map_err(|e| e.to_string())?;
    let analytic = volts / 1000.0 * (a * secs + b * (1.0 - (w * secs).cos()) / w);
    let err_sine = (sine.energy().map_err(|e| e.to_string())? - analytic).abs() / analytic;
    check(err_flat < 1e-6 && err_sine < 1e-3, format!("constant {e_flat:.9} J (rel err {err_flat:.1e} < 1e-6); sine rel err {err_sine:.1e} < 1e-3"))
}

// ---------------------------------------------------------------- scheduler

const VANTAGE_POINTS: usize = 4;
const SUBMITTERS: usize = 4;
const JOBS: usize = 200;

fn random_spec(rng: &mut ChaCha8Rng, devices: &[String]) -> JobSpec {
    let mut constraints = Constraints::default();
    let steps = match rng.random_range(0..5) {
        0 | 1 => {
            let d = devices[rng.random_range(0..devices.len())].clone();
            constraints.device_id = Some(d.clone());
            vec![
                PipelineStep::NodeSetup { device_id: d.clone(), options: NodeSetupOptions { power: true, ..Default::default() } },
                PipelineStep::Measure { device_id: d, duration_s: rng.random_range(0.5..3.0) },
            ]
        }
        2 => {
            constraints.vantage_id = Some(format!("vp{}", rng.random_range(0..VANTAGE_POINTS)));
            vec![PipelineStep::Wait { seconds: rng.random_range(1.0..60.0) }]
        }
        3 => {
            constraints.labels = BTreeSet::from([if rng.random_bool(0.5) { "eu" } else { "us" }.to_string()]);
            // monitor is off, so this fails on the node
            vec![PipelineStep::SetVoltage { volts: 4.0 }]
        }
        _ => vec![PipelineStep::Cleanup { force: false }],
    };
    JobSpec { job_id: None, kind: JobKind::Experiment, constraints, steps, max_duration: 1e6, owner: String::new() }
}

/// Replays the transition log: occupancy per vantage point never exceeds one.
fn max_occupancy(server: &AccessServer) -> usize {
    let mut active: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut worst = 0;
    for t in server.history() {
        let was = t.from.is_some_and(|s| matches!(s, JobState::Dispatched | JobState::Running));
        let is = matches!(t.to, JobState::Dispatched | JobState::Running);
        let Some(v) = &t.vantage_id else { continue };
        let set = active.entry(v.clone()).or_default();
        if is {
            set.insert(t.job_id.clone());
        } else if was {
            set.remove(&t.job_id);
        }
        worst = worst.max(set.len());
    }
    worst
}

fn scheduler_exclusion() -> Outcome {
    let clock = Arc::new(ManualClock::new(0.0));
    let mut nodes = BTreeMap::new();
    let mut devices = Vec::new();
    for v in 0..VANTAGE_POINTS {
        let ds: Vec<SimDevice> = (0..2)
            .map(|k| {
                let id = format!("d{v}{k}");
                devices.push(id.clone());
                DeviceConfig::new(&id, if k == 0 { "J7DUO" } else { "LMX210" }, (v * 2 + k) as u64).build().unwrap()
            })
            .collect();
        let mut c = Controller::with_devices(format!("vp{v}"), ds).map_err(|e| e.to_string())?;
        c.set_sample_rate(1000.0).map_err(|e| e.to_string())?;
        nodes.insert(format!("vp{v}"), LocalNode::new(c));
    }
    let nodes = Arc::new(nodes);
    let lookup = nodes.clone();
    let connector: Connector = Arc::new(move |r| Arc::new(lookup[&r.id].clone()) as Arc<dyn NodeClient>);
    let mut server = AccessServer::new(ServerConfig::default(), clock.clone(), StateStore::memory(), connector);
    let admin = server.bootstrap_admin("admin").map_err(|e| e.to_string())?;
    let admin = server.authenticate(&admin).map_err(|e| e.to_string())?;
    for v in 0..VANTAGE_POINTS {
        let label = if v % 2 == 0 { "eu" } else { "us" };
        server.register_vantage_point(&admin, &format!("vp{v}"), &format!("local:{v}"), "k", "", [label.to_string()]).map_err(|e| e.to_string())?;
    }
    let mut users = Vec::new();
    for u in 0..SUBMITTERS {
        let token = server.add_principal(&admin, &format!("user{u}"), Role::Experimenter).map_err(|e| e.to_string())?;
        users.push(server.authenticate(&token).map_err(|e| e.to_string())?);
    }
    let shared = Arc::new(Mutex::new(server));
    let submitting = AtomicBool::new(true);
    let mut violations = 0usize;
    let mut passes = 0usize;

    std::thread::scope(|s| {
        let handles: Vec<_> = users
            .iter()
            .enumerate()
            .map(|(u, who)| {
                let shared = &shared;
                let devices = &devices;
                s.spawn(move || {
                    let mut rng = ChaCha8Rng::seed_from_u64(100 + u as u64);
                    let mut mine: Vec<String> = Vec::new();
                    for _ in 0..JOBS / SUBMITTERS {
                        let spec = random_spec(&mut rng, devices);
                        let mut srv = shared.lock().unwrap();
                        mine.push(srv.submit_job(who, spec).expect("valid spec"));
                        if rng.random_bool(0.1) {
                            let victim = &mine[rng.random_range(0..mine.len())];
                            let _ = srv.abort_job(who, victim);
                        }
                        drop(srv);
                        std::thread::sleep(Duration::from_micros(rng.random_range(0..300)));
                    }
                })
            })
            .collect();
        let submitters_done = s.spawn(|| {
            for h in handles {
                h.join().unwrap();
            }
            submitting.store(false, Ordering::SeqCst);
        });

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        loop {
            let still_submitting = submitting.load(Ordering::SeqCst);
            let mut srv = shared.lock().unwrap();
            if still_submitting && rng.random_bool(0.05) {
                let v = format!("vp{}", rng.random_range(0..VANTAGE_POINTS));
                nodes[&v].set_reachable(rng.random_bool(0.5));
                srv.refresh().unwrap();
            } else if !still_submitting || passes.is_multiple_of(50) {
                for n in nodes.values() {
                    n.set_reachable(true);
                }
                srv.refresh().unwrap();
            }
            srv.schedule().unwrap();
            if srv.check_exclusion().is_err() {
                violations += 1;
            }
            clock.advance(1.0);
            passes += 1;
            let quiet = !still_submitting && srv.jobs().all(|j| j.state.is_terminal());
            drop(srv);
            if quiet {
                break;
            }
            std::thread::yield_now();
        }
        submitters_done.join().unwrap();
    });

    let srv = shared.lock().unwrap();
    let total = srv.jobs().count();
    let terminal = srv.jobs().filter(|j| j.state.is_terminal()).count();
    let mut by_state: BTreeMap<String, usize> = BTreeMap::new();
    for j in srv.jobs() {
        *by_state.entry(format!("{:?}", j.state)).or_default() += 1;
    }
    let worst = max_occupancy(&srv);
    check(
        violations == 0 && worst <= 1 && total == JOBS + VANTAGE_POINTS && terminal == total,
        format!("{total} jobs ({JOBS} submitted by {SUBMITTERS} threads + {VANTAGE_POINTS} provisioning), {terminal} terminal {by_state:?}; max occupancy {worst}, {violations} exclusion violations over {passes} passes"),
    )
}

// ---------------------------------------------------------------- controller

const DEVICES: [&str; 3] = ["a1", "a2", "i1"];
const FAULT_STEPS: [&str; 10] = ["power_monitor", "set_voltage", "batt_switch", "start_monitor", "device_mirroring", "device_setup", "execute", "usb", "link", "workload"];

#[derive(Debug, Clone)]
enum Op {
    PowerMonitor(bool),
    SetVoltage(f64),
    BattSwitch(usize),
    NodeSetup(usize, bool, bool, bool),
    DeviceSetup(usize),
    StartMonitor(usize, f64),
    StopMonitor,
    Mirroring(usize, bool),
    Execute(usize, u8, Option<usize>),
    Advance(f64),
    Cleanup(bool),
    FailStep(usize),
    ClearFaults,
    DropLinkAfter(usize),
    Spike(f64),
    RunJob(usize),
}

fn op() -> impl Strategy<Value = Op> {
    let dev = 0..DEVICES.len();
    prop_oneof![
        any::<bool>().prop_map(Op::PowerMonitor),
        (0.0..15.0f64).prop_map(Op::SetVoltage),
        dev.clone().prop_map(Op::BattSwitch),
        (dev.clone(), any::<bool>(), any::<bool>(), any::<bool>()).prop_map(|(d, p, v, m)| Op::NodeSetup(d, p, v, m)),
        dev.clone().prop_map(Op::DeviceSetup),
        (dev.clone(), 0.1..8.0f64).prop_map(|(d, s)| Op::StartMonitor(d, s)),
        Just(Op::StopMonitor),
        (dev.clone(), any::<bool>()).prop_map(|(d, on)| Op::Mirroring(d, on)),
        (dev.clone(), 0u8..4, proptest::option::of(0..3usize)).prop_map(|(d, c, b)| Op::Execute(d, c, b)),
        (0.0..4.0f64).prop_map(Op::Advance),
        any::<bool>().prop_map(Op::Cleanup),
        (0..FAULT_STEPS.len()).prop_map(Op::FailStep),
        Just(Op::ClearFaults),
        (0..4usize).prop_map(Op::DropLinkAfter),
        (0.0..9000.0f64).prop_map(Op::Spike),
        dev.prop_map(Op::RunJob),
    ]
}

fn model_controller() -> Controller {
    let devices = [
        DeviceConfig::new("a1", "J7DUO", 1).with_app("com.brave.browser", true).build().unwrap(),
        DeviceConfig::new("a2", "LMX210", 2).build().unwrap(),
        DeviceConfig::new("i1", "IPHONE7", 3).with_app("com.brave.browser", true).build().unwrap(),
    ];
    let mut c = Controller::with_devices("mc", devices).unwrap();
    c.set_sample_rate(100.0).unwrap();
    c
}

fn command(c: u8) -> InputCommand {
    match c {
        0 => InputCommand::Tap { x: 100, y: 200 },
        1 => InputCommand::Swipe { x1: 300, y1: 900, x2: 300, y2: 300, duration_ms: 250 },
        2 => InputCommand::Text { text: "hello".into() },
        _ => InputCommand::Key { key: Key::Home },
    }
}

fn apply(c: &mut Controller, op: &Op, jobs: &mut usize) {
    let d = |i: &usize| DEVICES[*i];
    // errors are expected; only the invariants matter
    let _ = match op {
        Op::PowerMonitor(on) => c.power_monitor(if *on { Switch::On } else { Switch::Off }).map(|_| ()),
        Op::SetVoltage(v) => c.set_voltage(*v).map(|_| ()),
        Op::BattSwitch(i) => c.batt_switch(d(i)).map(|_| ()),
        Op::NodeSetup(i, power, visual, mobile) => c.node_setup(d(i), NodeSetupOptions { power: *power, visual: *visual, mobile: *mobile, voltage: None }).map(|_| ()),
        Op::DeviceSetup(i) => c.device_setup(d(i), DeviceSetupOptions::default()).map(|_| ()),
        Op::StartMonitor(i, s) => c.start_monitor(d(i), *s).map(|_| ()),
        Op::StopMonitor => c.stop_monitor().map(|_| ()),
        Op::Mirroring(i, on) => c.device_mirroring(d(i), if *on { Switch::On } else { Switch::Off }).map(|_| ()),
        Op::Execute(i, cmd, b) => c.execute(&ExecRequest { device_id: d(i).into(), command: command(*cmd), backend: b.map(|k| Backend::ALL[k]) }).map(|_| ()),
        Op::Advance(dt) => c.advance(*dt),
        Op::Cleanup(force) => c.cleanup(*force).map(|_| ()),
        Op::FailStep(k) => {
            c.faults.fail_step(FAULT_STEPS[*k]);
            Ok(())
        }
        Op::ClearFaults => {
            c.faults.clear();
            Ok(())
        }
        Op::DropLinkAfter(k) => {
            c.faults.drop_backend_after(*k);
            Ok(())
        }
        Op::Spike(ma) => {
            c.faults.spike_next_sample(*ma);
            Ok(())
        }
        Op::RunJob(i) => {
            *jobs += 1;
            let steps = [
                PipelineStep::NodeSetup { device_id: d(i).into(), options: NodeSetupOptions { power: true, ..Default::default() } },
                PipelineStep::Measure { device_id: d(i).into(), duration_s: 1.0 },
            ];
            c.run_job(&format!("mc-{jobs}"), &steps, Some(30.0)).map(|_| ())
        }
    };
}

/// The safety rules, read only from the public status document.
fn safety_violation(s: &StatusDocument) -> Option<String> {
    let bypassed = s.relay.channels.values().filter(|c| **c == pb_core::controller::Channel::Monitor).count();
    if bypassed > 1 {
        return Some(format!("{bypassed} monitor channels"));
    }
    if s.relay.meter_socket == Switch::Off && bypassed > 0 {
        return Some("meter off with a bypassed channel".into());
    }
    if let Some(session) = s.session.as_ref().filter(|x| x.state == pb_core::controller::SessionState::Running) {
        if s.links.iter().any(|l| l.device_id == session.device_id && l.usb) {
            return Some(format!("USB on measured device {}", session.device_id));
        }
    }
    None
}

fn is_safe_state(s: &StatusDocument) -> bool {
    s.relay.meter_socket == Switch::Off
        && s.relay.channels.values().all(|c| *c == pb_core::controller::Channel::Battery)
        && s.links.iter().all(|l| l.usb)
        && s.session.as_ref().is_none_or(|x| x.state != pb_core::controller::SessionState::Running)
}

fn controller_model_check() -> Outcome {
    const SEQUENCES: u32 = 10_000;
    let mut runner = runner(SEQUENCES);
    let ops_run = std::cell::Cell::new(0usize);
    let result = runner.run(&proptest::collection::vec(op(), 1..40), |ops| {
        let mut c = model_controller();
        let mut jobs = 0;
        for op in &ops {
            apply(&mut c, op, &mut jobs);
            ops_run.set(ops_run.get() + 1);
            let s = c.status();
            if let Some(v) = safety_violation(&s) {
                return Err(TestCaseError::fail(format!("after {op:?}: {v}")));
            }
            c.check_invariants().map_err(|e| TestCaseError::fail(format!("after {op:?}: {e}")))?;
        }
        c.cleanup(true).map_err(|e| TestCaseError::fail(format!("cleanup failed: {e}")))?;
        prop_assert!(is_safe_state(&c.status()), "cleanup left {:?}", c.status());
        prop_assert!(c.is_safe());
        Ok(())
    });
    match result {
        Ok(()) => Ok(format!("{SEQUENCES} sequences, {} calls with injected faults; no invariant violation, cleanup always safe", ops_run.get())),
        Err(e) => Err(e.to_string()),
    }
}

// ---------------------------------------------------------------- calibrated figures

// published idle and video figures
const REF_J7DUO_IDLE_J: f64 = 359.0;
const REF_LMX210_IDLE_J: f64 = 270.0;
const REF_VIDEO_MA: f64 = 160.0;
const REF_VIDEO_MIRRORED_MA: f64 = 220.0;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn trace_of(m: &scenarios::Measured) -> Result<&PowerTrace, String> {
    m.trace.as_ref().ok_or_else(|| "scenario produced no trace".to_string())
}

fn calibrated_figures() -> Outcome {
    let opts = ScenarioOptions::default();
    let j7 = scenarios::idle("J7DUO", 600.0, opts).map_err(|e| e.to_string())?;
    let lmx = scenarios::idle("LMX210", 600.0, opts).map_err(|e| e.to_string())?;
    let e_j7 = trace_of(&j7)?.energy().map_err(|e| e.to_string())?;
    let e_lmx = trace_of(&lmx)?.energy().map_err(|e| e.to_string())?;
    let plain = scenarios::video("J7DUO", 120.0, false, opts).map_err(|e| e.to_string())?;
    let mirrored = scenarios::video("J7DUO", 120.0, true, opts).map_err(|e| e.to_string())?;
    let m_plain = median(trace_of(&plain)?.currents().to_vec());
    let m_mirror = median(trace_of(&mirrored)?.currents().to_vec());
    let rel = |x: f64, y: f64| (x - y).abs() / y;
    check(
        rel(e_j7, REF_J7DUO_IDLE_J) <= 0.02 && rel(e_lmx, REF_LMX210_IDLE_J) <= 0.02 && rel(m_plain, REF_VIDEO_MA) <= 0.05 && rel(m_mirror, REF_VIDEO_MIRRORED_MA) <= 0.05,
        format!(
            "idle 600 s: J7DUO {e_j7:.2} J vs 359 (±2%), LMX210 {e_lmx:.2} J vs 270 (±2%); video median {m_plain:.1} mA vs 160, mirrored {m_mirror:.1} mA vs 220 (±5%)"
        ),
    )
}

// ---------------------------------------------------------------- replay gap

fn replay_gap() -> Outcome {
    let opts = ScenarioOptions::default();
    let (recorded, closed) = scenarios::news_recorded(opts).map_err(|e| e.to_string())?;
    let replay = scenarios::news_replay(&closed.script, opts).map_err(|e| e.to_string())?;
    let e_rec = trace_of(&recorded)?.energy().map_err(|e| e.to_string())?;
    let e_rep = trace_of(&replay)?.energy().map_err(|e| e.to_string())?;
    let gap = (e_rec - e_rep) / e_rec;
    check(
        (0.08..=0.16).contains(&gap),
        format!("recorded {e_rec:.1} J (mirroring on) vs replay {e_rep:.1} J (mirroring off) over 380 s: replay lower by {:.2}% (8-16%)", gap * 100.0),
    )
}

// ---------------------------------------------------------------- HID

enum Golden {
    Text(String),
    Key(Key),
    Move { dx: i32, dy: i32, buttons: u8 },
}

fn parse_header(line: &str) -> Result<Golden, String> {
    let body = line.strip_prefix('#').map(str::trim).ok_or("missing header")?;
    let (kind, arg) = body.split_once(':').ok_or("header needs kind: value")?;
    let arg = arg.trim();
    let ints = |s: &str| -> Result<(i32, i32), String> {
        let v: Vec<i32> = s.split_whitespace().map(|t| t.parse().map_err(|e| format!("{t}: {e}"))).collect::<Result<_, _>>()?;
        Ok((v[0], v[1]))
    };
    Ok(match kind.trim() {
        "text" => Golden::Text(arg.replace("\\n", "\n")),
        "key" => Golden::Key(match arg {
            "enter" => Key::Enter,
            "home" => Key::Home,
            "backspace" => Key::Backspace,
            "tab" => Key::Tab,
            "escape" => Key::Escape,
            other => return Err(format!("unknown key {other}")),
        }),
        "move" => {
            let (dx, dy) = ints(arg)?;
            Golden::Move { dx, dy, buttons: 0 }
        }
        "move held" => {
            let (dx, dy) = ints(arg)?;
            Golden::Move { dx, dy, buttons: BUTTON_LEFT }
        }
        other => return Err(format!("unknown golden kind {other}")),
    })
}

fn golden_corpus() -> Result<usize, String> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/hid");
    let mut files: Vec<_> = std::fs::read_dir(&dir).map_err(|e| e.to_string())?.map(|e| e.unwrap().path()).filter(|p| p.extension().is_some_and(|x| x == "hex")).collect();
    files.sort();
    for path in &files {
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
        let expected = parse_hex_lines(&text).map_err(|e| format!("{name}: {e}"))?;
        let got: Vec<Vec<u8>> = match parse_header(text.lines().next().unwrap_or_default()).map_err(|e| format!("{name}: {e}"))? {
            Golden::Text(s) => {
                let reports = encode_keystrokes(&s).map_err(|e| format!("{name}: {e}"))?;
                let parsed: Vec<HidKeyboardReport> = expected.iter().map(|b| HidKeyboardReport::from_bytes(b)).collect::<Result<_, _>>().map_err(|e| format!("{name}: {e}"))?;
                if decode_keystrokes(&parsed).map_err(|e| format!("{name}: {e}"))? != s {
                    return Err(format!("{name}: golden reports do not decode to {s:?}"));
                }
                reports.iter().map(|r| r.to_bytes().to_vec()).collect()
            }
            Golden::Key(k) => encode_key(k).iter().map(|r| r.to_bytes().to_vec()).collect(),
            Golden::Move { dx, dy, buttons } => {
                let parsed: Vec<HidMouseReport> = expected.iter().map(|b| HidMouseReport::from_bytes(b)).collect::<Result<_, _>>().map_err(|e| format!("{name}: {e}"))?;
                let (sx, sy) = parsed.iter().fold((0i32, 0i32), |(x, y), r| (x + i32::from(r.dx), y + i32::from(r.dy)));
                if (sx, sy) != (dx, dy) {
                    return Err(format!("{name}: golden deltas sum to ({sx}, {sy})"));
                }
                encode_move(dx, dy, buttons).iter().map(|r| r.to_bytes().to_vec()).collect()
            }
        };
        if got != expected {
            return Err(format!("{name}: encoder output differs from the golden file"));
        }
    }
    Ok(files.len())
}

fn hid_round_trip() -> Outcome {
    const CASES: u32 = 2_000;
    let mut runner = runner(CASES);
    runner
        .run(&"[ -~]{0,64}", |s| {
            let reports = encode_keystrokes(&s).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(reports.len(), 2 * s.len());
            let wire: Vec<[u8; 8]> = reports.iter().map(|r| r.to_bytes()).collect();
            let back: Vec<HidKeyboardReport> = wire.iter().map(|b| HidKeyboardReport::from_bytes(b)).collect::<Result<_, _>>().map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(&back, &reports);
            prop_assert_eq!(decode_keystrokes(&back).map_err(|e| TestCaseError::fail(e.to_string()))?, s);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let files = golden_corpus()?;
    // the three pinned anchors, independent of the corpus files
    let a = encode_keystrokes("a").map_err(|e| e.to_string())?[0].to_bytes();
    let big_a = encode_keystrokes("A").map_err(|e| e.to_string())?[0].to_bytes();
    let chunks: Vec<[u8; 3]> = encode_move(-254, 0, 0).iter().map(|r| r.to_bytes()).collect();
    check(
        a[2] == 0x04 && big_a[0] == 0x02 && chunks == [[0, 0x81, 0], [0, 0x81, 0]],
        format!("{CASES} printable strings up to 64 chars round-trip; {files} golden files match byte for byte; 'a' = 0x04, shift = 0x02, deltas chunked at ±127"),
    )
}

// ---------------------------------------------------------------- backends

fn backend_command(screen: (u32, u32)) -> impl Strategy<Value = InputCommand> {
    let (w, h) = screen;
    prop_oneof![
        (0..w, 0..h).prop_map(|(x, y)| InputCommand::Tap { x, y }),
        (0..w, 0..h, 0..w, 0..h, 1u32..800).prop_map(|(x1, y1, x2, y2, duration_ms)| InputCommand::Swipe { x1, y1, x2, y2, duration_ms }),
        "[ -~]{1,24}".prop_map(|text| InputCommand::Text { text }),
        prop_oneof![Just(Key::Enter), Just(Key::Tab), Just(Key::Backspace), Just(Key::Escape), Just(Key::Home)].prop_map(|key| InputCommand::Key { key }),
        prop_oneof![Just("com.brave.browser"), Just("com.example.news"), Just("com.missing.app")].prop_map(|a| InputCommand::LaunchApp { app: a.to_string() }),
    ]
}

fn backend_device() -> SimDevice {
    DeviceConfig::new("d1", "J7DUO", 5).with_app("com.brave.browser", true).with_app("com.example.news", false).build().unwrap()
}

fn backend_equivalence() -> Outcome {
    const CASES: u32 = 500;
    let screen = backend_device().screen();
    let strategy = (proptest::collection::vec(backend_command(screen), 0..6), backend_command(screen));
    let mut runner = runner(CASES);
    runner
        .run(&strategy, |(prefix, cmd)| {
            // a random reachable device state
            let mut base = backend_device();
            let mut cursor = HidCursor(None);
            for p in &prefix {
                let _ = dispatch(p, Backend::UsbAdb, &mut base, &mut cursor);
            }
            let mut outcomes = Vec::new();
            for backend in Backend::ALL {
                let mut d = base.clone();
                let ok = dispatch(&cmd, backend, &mut d, &mut HidCursor(None)).is_ok();
                outcomes.push((backend, ok, d));
            }
            let (_, ok0, ref d0) = outcomes[0];
            for (backend, ok, d) in &outcomes[1..] {
                prop_assert_eq!(*ok, ok0, "{:?} success differs for {:?}", backend, cmd);
                prop_assert_eq!(d.state(), d0.state(), "{:?} state differs for {:?}", backend, cmd);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("{CASES} random commands on random device states leave identical state over USB ADB, WiFi ADB and Bluetooth HID"))
}

// ---------------------------------------------------------------- WPM

fn wpm_pipeline() -> Outcome {
    let spec = CatalogSpec::desk();
    let catalog = SiteCatalog::synthetic(spec);
    let urls = catalog.urls();
    let pre = wpm::prefilter(&urls, &catalog);
    // expected partition straight from the catalog construction
    let expected = BTreeMap::from([
        (SiteStatus::Active, spec.active),
        (SiteStatus::Filtered, spec.denylisted + spec.duplicate_tld),
        (SiteStatus::CertError, spec.cert_error),
        (SiteStatus::Timeout, spec.timeout),
        (SiteStatus::HttpError, spec.http_error),
    ]);
    if urls.len() != 20 || pre.counts() != expected {
        return Err(format!("{} sites, prefilter {:?} vs expected {expected:?}", urls.len(), pre.counts()));
    }

    let browser = "com.brave.browser";
    let device = DeviceConfig::new("d1", "J7DUO", 11).with_app(browser, true).build().map_err(|e| e.to_string())?;
    let mut ctl = Controller::with_devices("wpm", [device]).map_err(|e| e.to_string())?;
    ctl.set_sample_rate(1000.0).map_err(|e| e.to_string())?;
    let req = WpmRequest { reps: 3, ..WpmRequest::new("d1", browser, pre.active.clone()) };
    let r = wpm::run(&mut ctl, &catalog, &req).map_err(|e| e.to_string())?;

    let mut expected_log = vec!["node_setup", "device_setup"];
    for _ in 0..3 {
        expected_log.extend(["browser_setup", "run_test"]);
    }
    expected_log.push("cleanup");
    let log_ok = r.meta.step_log.iter().map(String::as_str).eq(expected_log.iter().copied());

    let trace = ctl.trace(&r.meta.trace_ids[0]).ok_or("no trace")?;
    let t0 = trace.meta().started_at;
    let dt = 1.0 / trace.sample_rate();
    let (mut inside, mut outside) = (0.0, 0.0);
    for (i, &ma) in trace.currents().iter().enumerate() {
        let t = t0 + i as f64 * dt;
        let e = ma / 1000.0 * trace.voltage() * dt;
        if r.loads.iter().any(|l| l.ok && t >= l.start - 1e-9 && t < l.end - 1e-9) {
            inside += e;
        } else {
            outside += e;
        }
    }
    let sliced: f64 = r.loads.iter().filter_map(|l| l.energy_j).sum();
    let total = r.session_energy_j.ok_or("no session energy")?;
    let conservation = ((sliced + outside) - total).abs() / total;
    let slice_err = (sliced - inside).abs() / inside;

    let mut median_mismatch = 0;
    for u in &r.urls {
        let e: Vec<f64> = r.loads.iter().filter(|l| l.url == u.url && l.ok).filter_map(|l| l.energy_j).collect();
        if e.len() != 3 || u.median_energy_j != Some(median(e)) {
            median_mismatch += 1;
        }
    }
    check(
        log_ok && conservation <= 1e-3 && slice_err <= 1e-3 && median_mismatch == 0 && r.urls.len() == spec.active,
        format!(
            "20-site catalog partitions {:?}; step log {}; slices + idle = session within {:.1e} (≤1e-3), slices vs sample tally {:.1e}; {} of {} medians over 3 reps disagree",
            pre.counts().values().collect::<Vec<_>>(),
            if log_ok { "in order" } else { "OUT OF ORDER" },
            conservation,
            slice_err,
            median_mismatch,
            r.urls.len()
        ),
    )
}

// ---------------------------------------------------------------- software vs hardware

fn staircase_comparison() -> Outcome {
    let (measured, series) = scenarios::staircase("J7DUO", ScenarioOptions::default()).map_err(|e| e.to_string())?;
    let trace = trace_of(&measured)?;
    let series = series.ok_or("device has no software meter")?;
    let cmp = compare_software(trace, &series).map_err(|e| e.to_string())?;
    let corr = cmp.correlation.ok_or("no correlation")?;

    // plateau level per step from readings fully inside it
    let hold = STAIRCASE_HOLD_S;
    let plateau: Vec<f64> = (0..STAIRCASE_LEVELS.len())
        .map(|k| {
            let inside: Vec<f64> = series.readings.iter().filter(|(t, _)| *t >= k as f64 * hold && t + series.cadence <= (k + 1) as f64 * hold).map(|r| r.1).collect();
            median(inside)
        })
        .collect();
    let mut worst_lag: f64 = 0.0;
    let mut missed = 0;
    for k in 1..STAIRCASE_LEVELS.len() {
        let edge = k as f64 * hold;
        let (old, new) = (plateau[k - 1], plateau[k]);
        match series.readings.iter().find(|(t, r)| *t > edge - series.cadence && (r - new).abs() < (r - old).abs()) {
            Some((t, _)) => worst_lag = worst_lag.max((t - edge).abs()),
            None => missed += 1,
        }
    }
    check(
        corr >= 0.95 && missed == 0 && worst_lag <= series.cadence,
        format!("{} windows at {} s cadence: correlation {corr:.4} (≥0.95); step edges seen at most {worst_lag:.1} s from the switch (≤ one window), {missed} missed", cmp.windows.len(), series.cadence),
    )
}

// ---------------------------------------------------------------- driver

fn main() {
    let criteria: [Criterion; 9] = [
        ("energy-integration oracle", 1.0, energy_oracle),
        ("scheduler exclusion", 30.0, scheduler_exclusion),
        ("controller safety model check", 60.0, controller_model_check),
        ("calibrated idle and video figures", 10.0, calibrated_figures),
        ("replay energy gap", 10.0, replay_gap),
        ("HID round trip and golden corpus", 5.0, hid_round_trip),
        ("backend equivalence", 10.0, backend_equivalence),
        ("WPM pipeline", 60.0, wpm_pipeline),
        ("software vs hardware staircase", 5.0, staircase_comparison),
    ];
    let mut failed = 0;
    for (name, limit, run) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        let (ok, detail) = match outcome {
            Ok(d) if secs <= limit => (true, d),
            Ok(d) => (false, format!("{d}; too slow")),
            Err(d) => (false, d),
        };
        if !ok {
            failed += 1;
        }
        println!("{} {name} [{secs:.2} s / {limit} s]: {detail}", if ok { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {} of 9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
