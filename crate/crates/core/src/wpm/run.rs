use super::{aggregate, Automation, LoadRecord, RunMeta, SiteCatalog, SiteStatus, WpmError, WpmRequest, WpmResult, CPU_SAMPLE_PERIOD_S};
use crate::automation::{InputCommand, Key};
use crate::controller::{Controller, ControllerError, DeviceSetupOptions, ExecRequest, NodeSetupOptions};
use crate::device::{Os, Scene, PAGE_LOAD_WORKLOAD};

/// Fixed slot for resetting and relaunching the browser.
pub const BROWSER_SETUP_S: f64 = 10.0;
pub const INTERACT_SCROLLS: usize = 4;
/// Simulated page-load time before interaction starts.
const SETTLE_S: f64 = 6.0;

fn step(name: &str) -> impl Fn(ControllerError) -> WpmError + '_ {
    move |source| WpmError::Step { step: name.to_string(), source: Box::new(source) }
}

/// Runs the WPM job on one device and leaves the node safe, whatever happens.
pub fn run(ctl: &mut Controller, catalog: &SiteCatalog, req: &WpmRequest) -> Result<WpmResult, WpmError> {
    req.validate()?;
    ctl.device(&req.device_id).map_err(step("node_setup"))?;
    let mut log = Vec::new();
    let started_at = ctl.now();
    let outcome = run_inner(ctl, catalog, req, &mut log);
    log.push("cleanup".to_string());
    let cleanup = ctl.cleanup(true).map_err(step("cleanup"));
    let (loads, trace_id) = outcome?;
    cleanup?;

    let mut loads = loads;
    let mut session_energy_j = None;
    if let Some(trace) = trace_id.as_ref().and_then(|id| ctl.trace(id)) {
        let t0 = trace.meta().started_at;
        for l in loads.iter_mut().filter(|l| l.ok) {
            l.energy_j = trace.energy_between(l.start - t0, l.end - t0).ok();
        }
        session_energy_j = trace.energy().ok();
    }
    Ok(WpmResult {
        urls: aggregate(&req.url_list, &loads),
        meta: RunMeta {
            device_id: req.device_id.clone(),
            browser: req.browser.clone(),
            reps: req.reps,
            automation: req.automation,
            visual: req.visual,
            started_at,
            finished_at: ctl.now(),
            trace_ids: trace_id.into_iter().collect(),
            step_log: log,
        },
        loads,
        session_energy_j,
    })
}

fn run_inner(ctl: &mut Controller, catalog: &SiteCatalog, req: &WpmRequest, log: &mut Vec<String>) -> Result<(Vec<LoadRecord>, Option<String>), WpmError> {
    let dev = req.device_id.as_str();
    log.push("node_setup".into());
    ctl.node_setup(dev, NodeSetupOptions { power: req.power, visual: req.visual, ..Default::default() }).map_err(step("node_setup"))?;
    log.push("device_setup".into());
    ctl.device_setup(dev, DeviceSetupOptions::default()).map_err(step("device_setup"))?;

    let trace_id = if req.power {
        // generous upper bound; the session is stopped explicitly
        let planned = f64::from(req.reps) * (BROWSER_SETUP_S + req.url_list.len() as f64 * req.page_slot);
        Some(ctl.start_monitor(dev, 2.0 * planned + 60.0).map_err(step("run_test"))?)
    } else {
        None
    };

    let mut loads = Vec::new();
    for rep in 0..req.reps {
        log.push("browser_setup".into());
        let setup = browser_setup(ctl, dev, &req.browser);
        log.push("run_test".into());
        match setup {
            Ok(()) => run_test(ctl, catalog, req, rep, &mut loads)?,
            Err(e) => {
                for url in &req.url_list {
                    let now = ctl.now();
                    loads.push(failed_load(url, rep, now, format!("browser_setup: {e}")));
                }
            }
        }
    }
    if trace_id.is_some() {
        ctl.stop_monitor().map_err(step("run_test"))?;
    }
    Ok((loads, trace_id))
}

fn failed_load(url: &str, rep: u32, at: f64, error: String) -> LoadRecord {
    LoadRecord { url: url.into(), rep, ok: false, error: Some(error), start: at, end: at, energy_j: None, bytes: 0, cpu_samples: Vec::new() }
}

fn exec(ctl: &mut Controller, dev: &str, command: InputCommand) -> Result<(), ControllerError> {
    ctl.execute(&ExecRequest { device_id: dev.into(), command, backend: None }).map(|_| ())
}

/// Installs if needed, wipes cache and settings, and relaunches through onboarding.
fn browser_setup(ctl: &mut Controller, dev: &str, browser: &str) -> Result<(), ControllerError> {
    let slot_start = ctl.now();
    ctl.faults.check("browser_setup")?;
    let device = ctl.device_mut(dev)?;
    device.stop_workload();
    if !device.state().apps.contains_key(browser) {
        let (w, h) = device.screen();
        device.install_app(browser, Some(Scene::browser(w, h)))?;
    }
    device.clear_app_data(browser)?;
    device.go_home();
    exec(ctl, dev, InputCommand::LaunchApp { app: browser.into() })?;
    let device = ctl.device(dev)?;
    if !device.state().apps[browser].onboarded {
        let accept = device.foreground_scene().target("onboarding_accept").map(|t| t.rect.center());
        let (x, y) = accept.ok_or_else(|| ControllerError::Precondition(format!("{browser} shows no onboarding button")))?;
        exec(ctl, dev, InputCommand::Tap { x, y })?;
    }
    if !ctl.device(dev)?.state().apps[browser].onboarded {
        return Err(ControllerError::Precondition(format!("{browser} is still onboarding")));
    }
    ctl.advance_to(slot_start + BROWSER_SETUP_S)
}

fn run_test(ctl: &mut Controller, catalog: &SiteCatalog, req: &WpmRequest, rep: u32, loads: &mut Vec<LoadRecord>) -> Result<(), WpmError> {
    let dev = req.device_id.as_str();
    for url in &req.url_list {
        let slot_start = ctl.now();
        let record = match load_page(ctl, catalog, req, url, rep) {
            Ok(r) => r,
            Err(e) => {
                // a fault or dropped link loses this load only
                if let Ok(d) = ctl.device_mut(dev) {
                    d.stop_workload();
                }
                failed_load(url, rep, ctl.now(), e.to_string())
            }
        };
        loads.push(record);
        ctl.advance_to(slot_start + req.page_slot).map_err(step("run_test"))?;
    }
    Ok(())
}

fn load_page(ctl: &mut Controller, catalog: &SiteCatalog, req: &WpmRequest, url: &str, rep: u32) -> Result<LoadRecord, ControllerError> {
    let dev = req.device_id.as_str();
    ctl.faults.check("run_test")?;
    let entry = catalog.lookup(url).ok_or_else(|| ControllerError::NotFound(format!("{url} does not resolve")))?;
    if entry.status != SiteStatus::Active {
        return Err(ControllerError::Precondition(format!("{url} is not loadable ({:?})", entry.status)));
    }
    ctl.device_mut(dev)?.define_workload(PAGE_LOAD_WORKLOAD, entry.workload())?;
    let bar = ctl.device(dev)?.foreground_scene().target("url_bar").map(|t| t.rect.center());
    let (bx, by) = bar.ok_or_else(|| ControllerError::Precondition(format!("{} is not in the foreground", req.browser)))?;
    exec(ctl, dev, InputCommand::Tap { x: bx, y: by })?;
    exec(ctl, dev, InputCommand::Text { text: url.to_string() })?;
    exec(ctl, dev, InputCommand::Key { key: Key::Enter })?;
    let start = ctl.now();
    let end = start + req.per_page_budget;

    let sample_cpu = ctl.device(dev)?.profile().os == Os::Android;
    let mut events: Vec<(f64, Option<usize>)> = Vec::new();
    let mut k = 0;
    while (k as f64) * CPU_SAMPLE_PERIOD_S < req.per_page_budget {
        events.push((start + k as f64 * CPU_SAMPLE_PERIOD_S, None));
        k += 1;
    }
    if req.automation == Automation::Interact {
        let lead = SETTLE_S.min(req.per_page_budget / 2.0);
        let spacing = (req.per_page_budget - lead) / INTERACT_SCROLLS as f64;
        for j in 0..INTERACT_SCROLLS {
            events.push((start + lead + (j as f64 + 0.5) * spacing, Some(j)));
        }
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));

    let (w, h) = ctl.device(dev)?.screen();
    let (top, bottom) = (h / 4, h * 3 / 4);
    let mut cpu_samples = Vec::new();
    for (t, scroll) in events {
        ctl.advance_to(t)?;
        match scroll {
            None if sample_cpu => cpu_samples.push(ctl.device(dev)?.effective_cpu()),
            None => {}
            Some(j) => {
                // even scrolls read down the page, odd ones come back up
                let (y1, y2) = if j % 2 == 0 { (bottom, top) } else { (top, bottom) };
                exec(ctl, dev, InputCommand::Swipe { x1: w / 2, y1, x2: w / 2, y2, duration_ms: 300 })?;
            }
        }
    }
    ctl.advance_to(end)?;
    ctl.device_mut(dev)?.stop_workload();
    Ok(LoadRecord {
        url: url.to_string(),
        rep,
        ok: true,
        error: None,
        start,
        end,
        energy_j: None,
        bytes: entry.bytes_within(req.per_page_budget),
        cpu_samples,
    })
}
