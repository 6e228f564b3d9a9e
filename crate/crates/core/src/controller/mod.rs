//! Vantage-point controller: relay bank, power monitor, device links,
//! mirroring, and the control jobs that keep them in a safe state.

mod faults;
mod input;
mod jobs;
mod setup;

pub use self::faults::FaultInjector;
pub use self::input::{ExecRequest, ExecutionReport, InputBatch, InputBatchReport, RecordingClosed, ReplayOptions, ReplayOutcome};
pub use self::jobs::{ArtifactRef, JobRun, JobRunState, PipelineStep, StepRecord};
pub use self::setup::{CleanupReport, DeviceSetupOptions, NodeSetupOptions, SetupReport};

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::automation::{DispatchError, HidCursor, LinkState, RoutingError};
use crate::device::{DeviceError, DeviceSummary, Frame, PowerSource, SimDevice, WifiBand};
use crate::replay::{Compiler, ReplayError, SessionStore};
use crate::trace::{PowerTrace, TraceError, TraceFault, TraceMeta, TraceSidecar};
use crate::wpm::SiteCatalog;

pub const MIN_VOLTAGE: f64 = 0.8;
pub const MAX_VOLTAGE: f64 = 13.5;
pub const DEFAULT_SAMPLE_RATE: f64 = 5000.0;
pub const DEFAULT_CURRENT_LIMIT_A: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Battery,
    Monitor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    pub fn is_on(self) -> bool {
        self == Switch::On
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelayBank {
    pub channels: BTreeMap<String, Channel>,
    pub meter_socket: Switch,
}

impl RelayBank {
    pub fn monitored(&self) -> Option<&str> {
        self.channels.iter().find(|(_, c)| **c == Channel::Monitor).map(|(d, _)| d.as_str())
    }

    pub fn monitor_count(&self) -> usize {
        self.channels.values().filter(|c| **c == Channel::Monitor).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorConfig {
    /// Unset until `set_voltage` after each power-on.
    pub voltage: Option<f64>,
    pub sample_rate: f64,
    pub current_limit_a: f64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self { voltage: None, sample_rate: DEFAULT_SAMPLE_RATE, current_limit_a: DEFAULT_CURRENT_LIMIT_A }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceLink {
    pub device_id: String,
    pub usb: bool,
    pub wifi_band: WifiBand,
    pub wifi_adb: bool,
    pub bluetooth_paired: bool,
    pub mirroring: bool,
    /// Experiments needing the cellular network (WiFi off).
    pub mobile_network: bool,
    #[serde(skip)]
    pub hid_cursor: HidCursor,
}

impl DeviceLink {
    pub fn link_state(&self) -> LinkState {
        LinkState { usb: self.usb, wifi: self.wifi_band, wifi_adb: self.wifi_adb, bluetooth_paired: self.bluetooth_paired }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Running,
    Stopped,
    Faulted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSession {
    pub trace_id: String,
    pub device_id: String,
    pub config: MonitorConfig,
    pub started_at: f64,
    pub duration: f64,
    pub state: SessionState,
    pub samples: usize,
}

#[derive(Debug)]
struct ActiveSession {
    info: MeasurementSession,
    total_ticks: usize,
    trace: PowerTrace,
    /// Ended on its own (duration or fault) and not yet collected by `stop_monitor`.
    auto_ended: bool,
}

#[derive(Debug, Clone)]
pub struct DeviceEntry {
    pub device: SimDevice,
    pub link: DeviceLink,
    pub address: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("unknown device {0:?}")]
    UnknownDevice(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("safety rule: {0}")]
    Safety(String),
    #[error("voltage {0} V outside [0.8, 13.5] V")]
    VoltageRange(f64),
    #[error("invalid state: {0}")]
    State(String),
    #[error("exclusivity: {0}")]
    Exclusivity(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("injected failure in {0}")]
    Injected(String),
    #[error("setup failed at {step}: {reason}")]
    SetupFailed { step: String, reason: String },
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error(transparent)]
    Dispatch(#[from] DispatchError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("i/o: {0}")]
    Io(String),
}

impl ControllerError {
    /// Stable machine-readable category, used for HTTP status mapping.
    pub fn kind(&self) -> &'static str {
        match self {
            ControllerError::UnknownDevice(_) | ControllerError::NotFound(_) => "not_found",
            ControllerError::Safety(_) => "safety",
            ControllerError::VoltageRange(_) | ControllerError::Invalid(_) => "invalid",
            ControllerError::State(_) | ControllerError::Precondition(_) => "state",
            ControllerError::Exclusivity(_) => "exclusivity",
            ControllerError::Routing(_) => "routing",
            ControllerError::Dispatch(DispatchError::Routing(_)) => "routing",
            ControllerError::Dispatch(DispatchError::Device(DeviceError::OutOfBounds { .. })) => "invalid",
            ControllerError::Dispatch(_) | ControllerError::Device(_) | ControllerError::Replay(_) => "device",
            ControllerError::Injected(_) | ControllerError::SetupFailed { .. } | ControllerError::Io(_) => "failure",
            ControllerError::Trace(_) => "trace",
        }
    }
}

impl From<std::io::Error> for ControllerError {
    fn from(e: std::io::Error) -> Self {
        ControllerError::Io(e.to_string())
    }
}

/// Shared status document: what the access server's probe sees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusDocument {
    pub node_id: String,
    pub clock_s: f64,
    pub devices: Vec<DeviceSummary>,
    pub relay: RelayBank,
    pub monitor: MonitorConfig,
    pub links: Vec<DeviceLink>,
    pub session: Option<MeasurementSession>,
    pub active_job: Option<String>,
}

pub struct Controller {
    node_id: String,
    devices: BTreeMap<String, DeviceEntry>,
    relay: RelayBank,
    monitor: MonitorConfig,
    session: Option<ActiveSession>,
    traces: BTreeMap<String, PowerTrace>,
    artifacts: BTreeMap<String, ArtifactRef>,
    now: f64,
    tick_carry: f64,
    next_trace: u64,
    pub(crate) recordings: SessionStore,
    pub(crate) live: BTreeMap<String, LiveDrive>,
    pub(crate) jobs: BTreeMap<String, JobRun>,
    pub(crate) current_job: Option<String>,
    pub faults: FaultInjector,
    trace_dir: Option<PathBuf>,
    sites: SiteCatalog,
}

/// Live-drive state of one device's open recording.
#[derive(Debug, Clone)]
pub(crate) struct LiveDrive {
    pub session_id: String,
    pub origin: f64,
    pub compiler: Option<Compiler>,
}

impl Controller {
    pub fn new(node_id: impl Into<String>) -> Self {
        Self {
            node_id: node_id.into(),
            devices: BTreeMap::new(),
            relay: RelayBank { channels: BTreeMap::new(), meter_socket: Switch::Off },
            monitor: MonitorConfig::default(),
            session: None,
            traces: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            now: 0.0,
            tick_carry: 0.0,
            next_trace: 0,
            recordings: SessionStore::default(),
            live: BTreeMap::new(),
            jobs: BTreeMap::new(),
            current_job: None,
            faults: FaultInjector::default(),
            trace_dir: None,
            sites: SiteCatalog::default(),
        }
    }

    pub fn with_devices(node_id: impl Into<String>, devices: impl IntoIterator<Item = SimDevice>) -> Result<Self, ControllerError> {
        let mut c = Self::new(node_id);
        for d in devices {
            c.attach_device(d, None)?;
        }
        Ok(c)
    }

    /// Exports sealed traces as CSV plus sidecar into `dir`.
    pub fn set_trace_dir(&mut self, dir: Option<PathBuf>) {
        self.trace_dir = dir;
    }

    /// Sites reachable from this node's simulated network.
    pub fn set_site_catalog(&mut self, sites: SiteCatalog) {
        self.sites = sites;
    }

    pub fn site_catalog(&self) -> &SiteCatalog {
        &self.sites
    }

    pub fn set_sample_rate(&mut self, rate: f64) -> Result<(), ControllerError> {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(ControllerError::Invalid(format!("sample rate must be positive, got {rate}")));
        }
        if self.session_running() {
            return Err(ControllerError::State("cannot change the sample rate during a session".into()));
        }
        self.monitor.sample_rate = rate;
        Ok(())
    }

    pub fn attach_device(&mut self, mut device: SimDevice, address: Option<String>) -> Result<(), ControllerError> {
        let id = device.id().to_string();
        if self.devices.contains_key(&id) {
            return Err(ControllerError::Invalid(format!("device {id:?} already attached")));
        }
        device.advance_to(self.now)?;
        let link = DeviceLink {
            device_id: id.clone(),
            usb: device.state().usb_connected,
            wifi_band: device.state().wifi,
            wifi_adb: false,
            bluetooth_paired: false,
            mirroring: device.state().mirroring_active,
            mobile_network: false,
            hid_cursor: HidCursor::default(),
        };
        let address = address.unwrap_or_else(|| format!("usb:{id}"));
        self.relay.channels.insert(id.clone(), Channel::Battery);
        self.devices.insert(id, DeviceEntry { device, link, address });
        Ok(())
    }

    pub fn node_id(&self) -> &str {
        &self.node_id
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn relay(&self) -> &RelayBank {
        &self.relay
    }

    pub fn monitor_config(&self) -> &MonitorConfig {
        &self.monitor
    }

    pub fn device(&self, id: &str) -> Result<&SimDevice, ControllerError> {
        self.devices.get(id).map(|e| &e.device).ok_or_else(|| ControllerError::UnknownDevice(id.into()))
    }

    pub fn device_mut(&mut self, id: &str) -> Result<&mut SimDevice, ControllerError> {
        self.devices.get_mut(id).map(|e| &mut e.device).ok_or_else(|| ControllerError::UnknownDevice(id.into()))
    }

    pub fn link(&self, id: &str) -> Result<&DeviceLink, ControllerError> {
        self.devices.get(id).map(|e| &e.link).ok_or_else(|| ControllerError::UnknownDevice(id.into()))
    }

    pub(crate) fn entry_mut(&mut self, id: &str) -> Result<&mut DeviceEntry, ControllerError> {
        self.devices.get_mut(id).ok_or_else(|| ControllerError::UnknownDevice(id.into()))
    }

    pub fn device_ids(&self) -> Vec<String> {
        self.devices.keys().cloned().collect()
    }

    pub fn summaries(&self) -> Vec<DeviceSummary> {
        self.devices.values().map(|e| e.device.summary(e.address.clone())).collect()
    }

    pub fn session(&self) -> Option<&MeasurementSession> {
        self.session.as_ref().map(|s| &s.info)
    }

    pub fn session_running(&self) -> bool {
        self.session.as_ref().is_some_and(|s| s.info.state == SessionState::Running)
    }

    pub fn measured_device(&self) -> Option<&str> {
        self.session.as_ref().filter(|s| s.info.state == SessionState::Running).map(|s| s.info.device_id.as_str())
    }

    pub fn status(&self) -> StatusDocument {
        StatusDocument {
            node_id: self.node_id.clone(),
            clock_s: self.now,
            devices: self.summaries(),
            relay: self.relay.clone(),
            monitor: self.monitor,
            links: self.devices.values().map(|e| e.link.clone()).collect(),
            session: self.session().cloned(),
            active_job: self.current_job.clone(),
        }
    }

    // ---- clock ----

    /// Advances the simulated clock. The measured device is sampled at the
    /// monitor rate; every other device is integrated analytically.
    pub fn advance(&mut self, dt: f64) -> Result<(), ControllerError> {
        if !(dt.is_finite() && dt >= 0.0) {
            return Err(ControllerError::Invalid(format!("dt must be finite and non-negative, got {dt}")));
        }
        self.run_until(self.now + dt)
    }

    /// Advances to an absolute clock reading; earlier readings are a no-op.
    pub fn advance_to(&mut self, t: f64) -> Result<(), ControllerError> {
        if !t.is_finite() {
            return Err(ControllerError::Invalid(format!("clock reading must be finite, got {t}")));
        }
        if t > self.now {
            self.run_until(t)
        } else {
            Ok(())
        }
    }

    fn run_until(&mut self, target: f64) -> Result<(), ControllerError> {
        let dt = target - self.now;
        if self.session_running() {
            self.sample_for(dt)?;
        } else {
            self.tick_carry = 0.0;
        }
        self.now = target;
        let measured = self.measured_device().map(str::to_string);
        for (id, entry) in self.devices.iter_mut() {
            if measured.as_deref() == Some(id.as_str()) {
                continue;
            }
            entry.device.advance_to(target)?;
        }
        Ok(())
    }

    fn sample_for(&mut self, dt: f64) -> Result<(), ControllerError> {
        let Some(active) = self.session.as_mut() else { return Ok(()) };
        let rate = active.trace.sample_rate();
        let exact = self.tick_carry + dt * rate;
        let n = (exact + 1e-9).floor();
        self.tick_carry = (exact - n).max(0.0);
        let take = (n as usize).min(active.total_ticks - active.trace.len());
        let device_id = active.info.device_id.clone();
        let entry = self.devices.get_mut(&device_id).ok_or_else(|| ControllerError::UnknownDevice(device_id.clone()))?;
        let limit_ma = active.info.config.current_limit_a * 1000.0;
        let tick = 1.0 / rate;
        for _ in 0..take {
            let mut current = entry.device.step(tick)?.current;
            if let Some(spike) = self.faults.take_spike() {
                current += spike;
            }
            active.trace.push(current)?;
            if current > limit_ma {
                let sample_index = active.trace.len() - 1;
                active.trace.seal_with_fault(TraceFault::Overcurrent { sample_index, current_ma: current, limit_ma });
                active.info.state = SessionState::Faulted;
                break;
            }
        }
        active.info.samples = active.trace.len();
        if active.info.state == SessionState::Running && active.trace.len() >= active.total_ticks {
            active.trace.seal();
            active.info.state = SessionState::Stopped;
        }
        if active.info.state != SessionState::Running {
            active.auto_ended = true;
            self.finish_trace()?;
        }
        Ok(())
    }

    /// Moves a sealed session trace into the store and registers its artifacts.
    fn finish_trace(&mut self) -> Result<(), ControllerError> {
        let Some(active) = self.session.as_mut() else { return Ok(()) };
        if self.traces.contains_key(&active.info.trace_id) {
            return Ok(());
        }
        let trace = active.trace.clone();
        let id = trace.id().to_string();
        active.trace = PowerTrace::new(trace.meta().clone(), trace.voltage(), trace.sample_rate())?;
        active.trace.seal();
        if let Some(dir) = &self.trace_dir {
            std::fs::create_dir_all(dir)?;
            crate::trace::export_csv(&trace, dir.join(format!("trace-{id}.csv")))?;
            let sidecar = serde_json::to_vec_pretty(&TraceSidecar::of(&trace)).map_err(|e| ControllerError::Io(e.to_string()))?;
            std::fs::write(dir.join(format!("trace-{id}.json")), sidecar)?;
        }
        self.artifacts.insert(format!("trace-{id}.csv"), ArtifactRef::TraceCsv { trace_id: id.clone() });
        self.artifacts.insert(format!("trace-{id}.json"), ArtifactRef::TraceSidecar { trace_id: id.clone() });
        if let Some(job) = self.current_job.clone() {
            if let Some(run) = self.jobs.get_mut(&job) {
                run.artifacts.push(format!("trace-{id}.csv"));
                run.artifacts.push(format!("trace-{id}.json"));
            }
        }
        self.traces.insert(id, trace);
        Ok(())
    }

    pub fn trace(&self, id: &str) -> Option<&PowerTrace> {
        self.traces.get(id)
    }

    pub fn trace_ids(&self) -> Vec<String> {
        self.traces.keys().cloned().collect()
    }

    /// Drops a stored trace and its artifacts.
    pub fn discard_trace(&mut self, id: &str) -> bool {
        self.artifacts.remove(&format!("trace-{id}.csv"));
        self.artifacts.remove(&format!("trace-{id}.json"));
        self.traces.remove(id).is_some()
    }

    pub fn artifact_names(&self) -> Vec<String> {
        self.artifacts.keys().cloned().collect()
    }

    pub(crate) fn register_artifact(&mut self, name: String, artifact: ArtifactRef) {
        self.artifacts.insert(name, artifact);
    }

    /// Registers an artifact and lists it under the running job, if any.
    pub(crate) fn attach_artifact(&mut self, name: String, artifact: ArtifactRef) {
        if let Some(run) = self.current_job.as_ref().and_then(|j| self.jobs.get_mut(j)) {
            run.artifacts.push(name.clone());
        }
        self.artifacts.insert(name, artifact);
    }

    /// Renders an artifact's bytes.
    pub fn artifact(&self, name: &str) -> Result<Vec<u8>, ControllerError> {
        let missing = || ControllerError::NotFound(format!("artifact {name:?}"));
        match self.artifacts.get(name).ok_or_else(missing)? {
            ArtifactRef::TraceCsv { trace_id } => {
                let trace = self.traces.get(trace_id).ok_or_else(missing)?;
                let mut out = Vec::new();
                crate::trace::write_csv(trace, &mut out)?;
                Ok(out)
            }
            ArtifactRef::TraceSidecar { trace_id } => {
                let trace = self.traces.get(trace_id).ok_or_else(missing)?;
                serde_json::to_vec_pretty(&TraceSidecar::of(trace)).map_err(|e| ControllerError::Io(e.to_string()))
            }
            ArtifactRef::Bytes { data } => Ok(data.clone()),
        }
    }

    // ---- core operations ----

    /// Toggles the monitor's power socket. Powering on clears the voltage.
    pub fn power_monitor(&mut self, state: Switch) -> Result<Switch, ControllerError> {
        self.faults.check("power_monitor")?;
        match state {
            Switch::On => {
                if !self.relay.meter_socket.is_on() {
                    self.relay.meter_socket = Switch::On;
                    self.monitor.voltage = None;
                }
            }
            Switch::Off => {
                if self.session_running() {
                    return Err(ControllerError::Safety("cannot power off the monitor during a measurement".into()));
                }
                if let Some(d) = self.relay.monitored() {
                    return Err(ControllerError::Safety(format!("device {d:?} is still powered by the monitor")));
                }
                self.relay.meter_socket = Switch::Off;
                self.monitor.voltage = None;
            }
        }
        Ok(self.relay.meter_socket)
    }

    pub fn set_voltage(&mut self, volts: f64) -> Result<MonitorConfig, ControllerError> {
        if !(MIN_VOLTAGE..=MAX_VOLTAGE).contains(&volts) {
            return Err(ControllerError::VoltageRange(volts));
        }
        if !self.relay.meter_socket.is_on() {
            return Err(ControllerError::State("monitor socket is off".into()));
        }
        if self.session_running() {
            return Err(ControllerError::State("cannot change voltage during a measurement".into()));
        }
        self.faults.check("set_voltage")?;
        self.monitor.voltage = Some(volts);
        if let Some(d) = self.relay.monitored().map(str::to_string) {
            self.entry_mut(&d)?.device.set_power_source(PowerSource::Monitor { voltage: volts });
        }
        Ok(self.monitor)
    }

    /// Toggles a device between battery and monitor power.
    pub fn batt_switch(&mut self, device_id: &str) -> Result<Channel, ControllerError> {
        let current = *self.relay.channels.get(device_id).ok_or_else(|| ControllerError::UnknownDevice(device_id.into()))?;
        let next = match current {
            Channel::Battery => Channel::Monitor,
            Channel::Monitor => Channel::Battery,
        };
        self.set_channel(device_id, next)
    }

    /// Puts a device on `channel`; a no-op when it already is.
    pub(crate) fn set_channel(&mut self, device_id: &str, channel: Channel) -> Result<Channel, ControllerError> {
        let current = *self.relay.channels.get(device_id).ok_or_else(|| ControllerError::UnknownDevice(device_id.into()))?;
        if current == channel {
            return Ok(channel);
        }
        match channel {
            Channel::Monitor => {
                if !self.relay.meter_socket.is_on() {
                    return Err(ControllerError::State("monitor socket is off".into()));
                }
                let Some(voltage) = self.monitor.voltage else {
                    return Err(ControllerError::State("monitor voltage not set".into()));
                };
                if let Some(other) = self.relay.monitored() {
                    return Err(ControllerError::Exclusivity(format!("monitor already powers {other:?}")));
                }
                self.faults.check("batt_switch")?;
                // make-before-break: the device sees the new source on its next sample
                self.entry_mut(device_id)?.device.set_power_source(PowerSource::Monitor { voltage });
            }
            Channel::Battery => {
                if self.measured_device() == Some(device_id) {
                    return Err(ControllerError::Safety(format!("{device_id:?} is being measured")));
                }
                self.faults.check("batt_switch")?;
                self.entry_mut(device_id)?.device.set_power_source(PowerSource::Battery);
            }
        }
        self.relay.channels.insert(device_id.to_string(), channel);
        Ok(channel)
    }

    /// Starts sampling `device_id` for `duration` seconds and returns the trace id.
    pub fn start_monitor(&mut self, device_id: &str, duration: f64) -> Result<String, ControllerError> {
        let entry = self.devices.get(device_id).ok_or_else(|| ControllerError::UnknownDevice(device_id.into()))?;
        if !(duration.is_finite() && duration > 0.0) {
            return Err(ControllerError::Invalid(format!("duration must be positive, got {duration}")));
        }
        if self.session_running() {
            return Err(ControllerError::Exclusivity("a measurement is already running".into()));
        }
        if self.relay.channels.get(device_id) != Some(&Channel::Monitor) {
            return Err(ControllerError::Precondition(format!("{device_id:?} is not powered by the monitor")));
        }
        if entry.link.usb {
            return Err(ControllerError::Precondition(format!("USB is still connected to {device_id:?}")));
        }
        let voltage = self.monitor.voltage.ok_or_else(|| ControllerError::State("monitor voltage not set".into()))?;
        self.faults.check("start_monitor")?;
        // collect a finished session before replacing it
        self.session = None;
        self.next_trace += 1;
        let trace_id = format!("{}-{}", self.node_id, self.next_trace);
        let meta = TraceMeta {
            trace_id: trace_id.clone(),
            device_id: device_id.to_string(),
            job_id: self.current_job.clone(),
            started_at: self.now,
        };
        let rate = self.monitor.sample_rate;
        let total_ticks = (duration * rate).round() as usize;
        let trace = PowerTrace::new(meta, voltage, rate)?;
        let info = MeasurementSession {
            trace_id: trace_id.clone(),
            device_id: device_id.to_string(),
            config: self.monitor,
            started_at: self.now,
            duration,
            state: SessionState::Running,
            samples: 0,
        };
        self.tick_carry = 0.0;
        self.session = Some(ActiveSession { info, total_ticks, trace, auto_ended: false });
        Ok(trace_id)
    }

    /// Stops the running session. A session that already ended on its own is
    /// returned once more without error.
    pub fn stop_monitor(&mut self) -> Result<String, ControllerError> {
        let Some(active) = self.session.as_mut() else {
            return Err(ControllerError::State("no measurement session".into()));
        };
        if active.info.state != SessionState::Running {
            if active.auto_ended {
                active.auto_ended = false;
                return Ok(active.info.trace_id.clone());
            }
            return Err(ControllerError::State("no running measurement session".into()));
        }
        active.trace.seal();
        active.info.state = SessionState::Stopped;
        let id = active.info.trace_id.clone();
        let device_id = active.info.device_id.clone();
        self.finish_trace()?;
        let now = self.now;
        let device = &mut self.entry_mut(&device_id)?.device;
        device.advance_to(now)?;
        Ok(id)
    }

    pub fn device_mirroring(&mut self, device_id: &str, state: Switch) -> Result<DeviceLink, ControllerError> {
        self.entry_mut(device_id)?;
        self.faults.check("device_mirroring")?;
        let entry = self.entry_mut(device_id)?;
        entry.link.mirroring = state.is_on();
        entry.device.set_mirroring(state.is_on());
        Ok(entry.link.clone())
    }

    /// Renders `count` consecutive frames of the mirrored screen at the current instant.
    pub fn frames(&mut self, device_id: &str, count: usize) -> Result<Vec<Frame>, ControllerError> {
        let device = self.device_mut(device_id)?;
        (0..count).map(|_| device.render_frame().map_err(ControllerError::from)).collect()
    }

    // ---- invariants ----

    /// Checks the safety, exclusivity and noise rules.
    pub fn check_invariants(&self) -> Result<(), String> {
        let monitored = self.relay.monitor_count();
        if monitored > 1 {
            return Err(format!("{monitored} channels on the monitor"));
        }
        if !self.relay.meter_socket.is_on() && monitored > 0 {
            return Err("monitor socket off while a channel is bypassed".into());
        }
        if monitored > 0 && self.monitor.voltage.is_none() {
            return Err("bypassed channel without a set voltage".into());
        }
        if let Some(d) = self.measured_device() {
            let entry = self.devices.get(d).ok_or("measured device missing")?;
            if entry.link.usb {
                return Err(format!("USB connected to measured device {d:?}"));
            }
            if self.relay.channels.get(d) != Some(&Channel::Monitor) {
                return Err(format!("measured device {d:?} not on the monitor"));
            }
        }
        for (id, entry) in &self.devices {
            let expect_monitor = self.relay.channels.get(id) == Some(&Channel::Monitor);
            let on_monitor = matches!(entry.device.power_source(), PowerSource::Monitor { .. });
            if expect_monitor != on_monitor {
                return Err(format!("device {id:?} power source disagrees with the relay"));
            }
        }
        Ok(())
    }

    /// Meter off, nothing bypassed, every USB link restored.
    pub fn is_safe(&self) -> bool {
        !self.relay.meter_socket.is_on() && self.relay.monitor_count() == 0 && self.devices.values().all(|e| e.link.usb) && !self.session_running()
    }
}
