//! Canned experiments on a one-device node: idle, video, a brightness
//! staircase and an interactive news-browsing session with its replay.
//!
//! With `measure` off the device runs on battery and is integrated
//! analytically, which is what calibration uses; with it on the monitor
//! samples the device at 5 kHz.

use crate::controller::{Controller, ControllerError, DeviceSetupOptions, NodeSetupOptions, RecordingClosed, ReplayOptions, InputBatch};
use crate::device::{DeviceConfig, PowerModel, UsageIntegrals, WorkloadScript};
use crate::replay::{map_coords, AutomationScript, EventKind, RecordedEvent};
use crate::trace::{PowerTrace, SoftwareReadingSeries, TraceError};

pub const DUT: &str = "dut";
pub const NODE: &str = "node-1";
pub const NEWS_PROFILE: &str = "SMJ337A";
pub const NEWS_APP: &str = "com.brave.browser";
pub const NEWS_VIEW: (u32, u32) = (360, 640);
pub const NEWS_DURATION_S: f64 = 380.0;
pub const STAIRCASE_LEVELS: [u8; 6] = [0, 50, 100, 150, 200, 250];
pub const STAIRCASE_HOLD_S: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioOptions {
    pub seed: u64,
    pub measure: bool,
    pub noise: bool,
}

impl Default for ScenarioOptions {
    fn default() -> Self {
        Self { seed: 1, measure: true, noise: true }
    }
}

impl ScenarioOptions {
    /// Noise-free analytic run.
    pub fn analytic() -> Self {
        Self { seed: 1, measure: false, noise: false }
    }
}

/// What a scenario observed on the device under test.
#[derive(Debug, Clone)]
pub struct Measured {
    pub trace: Option<PowerTrace>,
    pub usage: UsageIntegrals,
    pub model: PowerModel,
    pub voltage: f64,
}

impl Measured {
    /// Trace energy when measured, otherwise the model energy of the usage integrals.
    pub fn energy(&self) -> Result<f64, TraceError> {
        match &self.trace {
            Some(t) => t.energy(),
            None => Ok(self.energy_under(&self.model)),
        }
    }

    pub fn energy_under(&self, model: &PowerModel) -> f64 {
        self.voltage * self.usage.charge_under(model) / 1000.0
    }

    pub fn mean_current_under(&self, model: &PowerModel) -> f64 {
        self.usage.charge_under(model) / self.usage.elapsed_s
    }
}

fn node(profile: &str, opts: ScenarioOptions, apps: &[(&str, bool)]) -> Result<Controller, ControllerError> {
    let mut cfg = DeviceConfig::new(DUT, profile, opts.seed);
    if !opts.noise {
        cfg.noise_ma = Some(0.0);
    }
    for (app, browser) in apps {
        cfg = cfg.with_app(app, *browser);
    }
    Controller::with_devices(NODE, [cfg.build()?])
}

fn prepare(ctl: &mut Controller, opts: ScenarioOptions, visual: bool) -> Result<(), ControllerError> {
    ctl.node_setup(DUT, NodeSetupOptions { power: opts.measure, visual, ..NodeSetupOptions::default() })?;
    ctl.device_setup(DUT, DeviceSetupOptions::default())?;
    Ok(())
}

fn observe(ctl: &mut Controller, opts: ScenarioOptions, seconds: f64) -> Result<Measured, ControllerError> {
    let before = *ctl.device(DUT)?.usage();
    let trace = if opts.measure {
        let id = ctl.start_monitor(DUT, seconds)?;
        ctl.advance(seconds)?;
        ctl.stop_monitor()?;
        ctl.trace(&id).cloned()
    } else {
        ctl.advance(seconds)?;
        None
    };
    finish(ctl, trace, &before)
}

fn finish(ctl: &Controller, trace: Option<PowerTrace>, before: &UsageIntegrals) -> Result<Measured, ControllerError> {
    let device = ctl.device(DUT)?;
    let voltage = ctl.monitor_config().voltage.unwrap_or(device.profile().model.supply_voltage);
    Ok(Measured { trace, usage: device.usage().since(before), model: device.profile().model.clone(), voltage })
}

/// Idle at home, WiFi on its preferred band, default brightness.
pub fn idle(profile: &str, seconds: f64, opts: ScenarioOptions) -> Result<Measured, ControllerError> {
    let mut ctl = node(profile, opts, &[])?;
    prepare(&mut ctl, opts, false)?;
    observe(&mut ctl, opts, seconds)
}

/// Video playback with mirroring on or off.
pub fn video(profile: &str, seconds: f64, mirroring: bool, opts: ScenarioOptions) -> Result<Measured, ControllerError> {
    let mut ctl = node(profile, opts, &[])?;
    prepare(&mut ctl, opts, mirroring)?;
    ctl.device_mut(DUT)?.start_named_workload("video")?;
    observe(&mut ctl, opts, seconds)
}

/// Brightness 0 to 250 in steps of 50, one minute each, with the software
/// meter's windows aligned to the start of the measurement.
pub fn staircase(profile: &str, opts: ScenarioOptions) -> Result<(Measured, Option<SoftwareReadingSeries>), ControllerError> {
    let mut ctl = node(profile, opts, &[])?;
    prepare(&mut ctl, opts, false)?;
    let start = ctl.now();
    let device = ctl.device_mut(DUT)?;
    device.restart_software_meter();
    device.start_workload(WorkloadScript::brightness_staircase(&STAIRCASE_LEVELS, STAIRCASE_HOLD_S))?;
    let seconds = STAIRCASE_HOLD_S * STAIRCASE_LEVELS.len() as f64;
    let measured = observe(&mut ctl, opts, seconds)?;
    let series = ctl.device(DUT)?.software_series(start, start + seconds);
    Ok((measured, series))
}

fn to_view(p: (u32, u32), device: (u32, u32)) -> (u32, u32) {
    map_coords(p, device, NEWS_VIEW)
}

/// A person browsing news sites in the console's 360x640 view: open the
/// browser, then every minute or so type a new URL, let it load, and scroll.
pub fn news_events(icon: (u32, u32), url_bar: (u32, u32), device: (u32, u32)) -> Vec<RecordedEvent> {
    let view = NEWS_VIEW;
    let mut events = Vec::new();
    let tap = |events: &mut Vec<RecordedEvent>, t: u64, (x, y): (u32, u32)| {
        events.push(RecordedEvent::mouse(t, EventKind::MouseDown, x, y, view));
        events.push(RecordedEvent::mouse(t + 80, EventKind::MouseUp, x, y, view));
    };
    let icon = to_view(icon, device);
    let bar = to_view(url_bar, device);
    tap(&mut events, 1_000, icon);
    let end_ms = (NEWS_DURATION_S * 1000.0) as u64;
    for site in 0..6u64 {
        let mut t = 3_000 + site * 62_000;
        tap(&mut events, t, bar);
        t += 700;
        for c in format!("news{site}.example.com").chars() {
            let key = c.to_string();
            events.push(RecordedEvent::key(t, EventKind::KeyDown, &key, view));
            events.push(RecordedEvent::key(t + 60, EventKind::KeyUp, &key, view));
            t += 150;
        }
        events.push(RecordedEvent::key(t, EventKind::KeyDown, "Enter", view));
        events.push(RecordedEvent::key(t + 60, EventKind::KeyUp, "Enter", view));
        // read while the page loads, then scroll down and back up
        t += 6_000;
        let stop = (3_000 + (site + 1) * 62_000 - 2_000).min(end_ms - 1_000);
        let mut down = true;
        while t + 5_000 < stop {
            let (from, to) = if down { (450, 250) } else { (250, 450) };
            events.push(RecordedEvent::mouse(t, EventKind::MouseDown, 180, from, view));
            events.push(RecordedEvent::mouse(t + 150, EventKind::MouseMove, 180, (from + to) / 2, view));
            events.push(RecordedEvent::mouse(t + 300, EventKind::MouseUp, 180, to, view));
            down = !down;
            t += 4_500 + (site * 700 + t / 1000) % 2_000;
        }
    }
    tap(&mut events, end_ms - 80, (180, 500));
    events
}

fn news_node(opts: ScenarioOptions) -> Result<Controller, ControllerError> {
    node(NEWS_PROFILE, opts, &[(NEWS_APP, true)])
}

type Point = (u32, u32);

fn news_targets(ctl: &Controller) -> Result<(Point, Point, Point), ControllerError> {
    let device = ctl.device(DUT)?;
    let icon = device.icon_center(NEWS_APP).ok_or_else(|| ControllerError::NotFound(format!("icon for {NEWS_APP}")))?;
    let bar = device
        .scene(NEWS_APP)
        .and_then(|s| s.target("url_bar"))
        .map(|t| t.rect.center())
        .ok_or_else(|| ControllerError::NotFound("url bar".into()))?;
    Ok((icon, bar, device.screen()))
}

/// The recorded session: a person drives the device live through the
/// console with mirroring on while the node measures it.
pub fn news_recorded(opts: ScenarioOptions) -> Result<(Measured, RecordingClosed), ControllerError> {
    let mut ctl = news_node(opts)?;
    prepare(&mut ctl, opts, true)?;
    let (icon, bar, screen) = news_targets(&ctl)?;
    let before = *ctl.device(DUT)?.usage();
    let start = ctl.now();
    let session_id = ctl.start_recording(DUT, true)?;
    let trace_id = if opts.measure { Some(ctl.start_monitor(DUT, NEWS_DURATION_S)?) } else { None };
    ctl.ingest_input(InputBatch { session_id: session_id.clone(), events: news_events(icon, bar, screen) })?;
    ctl.advance_to(start + NEWS_DURATION_S)?;
    let closed = ctl.stop_recording(&session_id)?;
    if trace_id.is_some() {
        ctl.stop_monitor()?;
    }
    let trace = trace_id.and_then(|id| ctl.trace(&id).cloned());
    Ok((finish(&ctl, trace, &before)?, closed))
}

/// Replays a compiled script on a fresh node with the same seed, mirroring off.
pub fn news_replay(script: &AutomationScript, opts: ScenarioOptions) -> Result<Measured, ControllerError> {
    let mut ctl = news_node(opts)?;
    prepare(&mut ctl, opts, false)?;
    let before = *ctl.device(DUT)?.usage();
    let outcome = ctl.replay(DUT, script, ReplayOptions { mirroring: false, measure: opts.measure })?;
    let trace = outcome.trace_id.and_then(|id| ctl.trace(&id).cloned());
    finish(&ctl, trace, &before)
}
