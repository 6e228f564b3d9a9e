use serde::{Deserialize, Serialize};

use super::{Channel, Controller, ControllerError, LiveDrive, Switch};
use crate::automation::backend::check_hint;
use crate::automation::{dispatch, select_backend, Backend, Delivery, DispatchError, InputCommand, InputSink, LinkState, RoutingError};
use crate::replay::{compile, run_script, AutomationScript, CompileOutput, Compiler, RecordedEvent, RecordingSession, ReplayError, ReplayLog, Thresholds};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecRequest {
    pub device_id: String,
    pub command: InputCommand,
    /// Force a transport; it must still satisfy the routing rules.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<Backend>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub device_id: String,
    pub backend: Backend,
    pub deliveries: usize,
    pub acks: Vec<String>,
}

/// Body of `POST /input`: raw console events for an open recording.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputBatch {
    pub session_id: String,
    pub events: Vec<RecordedEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputBatchReport {
    pub session_id: String,
    /// Events now stored in the session.
    pub total: usize,
    pub dispatched: Vec<ExecutionReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingClosed {
    pub session: RecordingSession,
    pub script: AutomationScript,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplayOptions {
    /// Mirroring state during the replay; the previous state is restored afterwards.
    pub mirroring: bool,
    /// Measure the device for the script's duration.
    pub measure: bool,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        Self { mirroring: false, measure: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayOutcome {
    pub device_id: String,
    pub log: ReplayLog,
    pub trace_id: Option<String>,
    pub duration_s: f64,
}

/// Forwards deliveries to one device through the controller, so waits move
/// the node clock and every delivery checks the live link.
struct ControllerSink<'a> {
    ctl: &'a mut Controller,
    device_id: String,
}

impl InputSink for ControllerSink<'_> {
    fn screen(&self) -> (u32, u32) {
        self.ctl.devices[&self.device_id].device.screen()
    }

    fn icon_center(&self, app: &str) -> Option<(u32, u32)> {
        self.ctl.devices[&self.device_id].device.icon_center(app)
    }

    fn app_installed(&self, app: &str) -> bool {
        self.ctl.devices[&self.device_id].device.state().apps.contains_key(app)
    }

    fn deliver(&mut self, backend: Backend, delivery: &Delivery) -> Result<String, DispatchError> {
        self.gate(backend)?;
        if let Delivery::Wait { ms } = delivery {
            let t = self.ctl.now() + f64::from(*ms) / 1000.0;
            return self.run_clock(backend, t).map(|()| String::new());
        }
        let device = &mut self.ctl.devices.get_mut(&self.device_id).expect("sink device exists").device;
        crate::automation::dispatch::deliver_to_device(device, delivery)
    }

    fn now(&self) -> f64 {
        self.ctl.now()
    }

    fn wait_until(&mut self, backend: Backend, t: f64) -> Result<(), DispatchError> {
        self.gate(backend)?;
        self.run_clock(backend, t)
    }
}

impl ControllerSink<'_> {
    /// The link must be up and survive the fault injector.
    fn gate(&mut self, backend: Backend) -> Result<(), DispatchError> {
        let ctl = &mut *self.ctl;
        let entry = &ctl.devices[&self.device_id];
        let summary = entry.device.summary(entry.address.clone());
        if !backend.available(&summary, &ctl.link_state(&self.device_id)) {
            return Err(RoutingError::Unusable { device: self.device_id.clone(), backend, reason: "link is down".into() }.into());
        }
        if let Err(reason) = ctl.faults.on_delivery() {
            ctl.drop_link(&self.device_id, backend);
            return Err(RoutingError::Unusable { device: self.device_id.clone(), backend, reason }.into());
        }
        Ok(())
    }

    fn run_clock(&mut self, backend: Backend, t: f64) -> Result<(), DispatchError> {
        self.ctl.advance_to(t).map_err(|e| DispatchError::Routing(RoutingError::Unusable { device: self.device_id.clone(), backend, reason: e.to_string() }))
    }
}

impl Controller {
    /// Transport state of a device's link, with WiFi as the device reports it.
    pub fn link_state(&self, device_id: &str) -> LinkState {
        match self.devices.get(device_id) {
            Some(e) => LinkState { wifi: e.device.state().wifi, ..e.link.link_state() },
            None => LinkState::default(),
        }
    }

    fn drop_link(&mut self, device_id: &str, backend: Backend) {
        if let Some(e) = self.devices.get_mut(device_id) {
            match backend {
                Backend::UsbAdb => {
                    e.link.usb = false;
                    e.device.set_usb(false);
                }
                Backend::WifiAdb => e.link.wifi_adb = false,
                Backend::BluetoothHid => e.link.bluetooth_paired = false,
            }
        }
    }

    /// Backend the routing rules pick for this device right now.
    pub fn route(&self, device_id: &str, hint: Option<Backend>) -> Result<Backend, ControllerError> {
        let entry = self.devices.get(device_id).ok_or_else(|| ControllerError::UnknownDevice(device_id.into()))?;
        let summary = entry.device.summary(entry.address.clone());
        let link = self.link_state(device_id);
        let meter_active = self.relay.channels.get(device_id) == Some(&Channel::Monitor);
        let mobile = entry.link.mobile_network;
        Ok(match hint {
            Some(b) => check_hint(b, &summary, &link, meter_active, mobile)?,
            None => select_backend(&summary, &link, meter_active, mobile)?,
        })
    }

    pub fn execute(&mut self, req: &ExecRequest) -> Result<ExecutionReport, ControllerError> {
        let backend = self.route(&req.device_id, req.backend)?;
        self.faults.check("execute")?;
        let mut cursor = self.devices[&req.device_id].link.hid_cursor;
        let mut sink = ControllerSink { ctl: self, device_id: req.device_id.clone() };
        let result = dispatch(&req.command, backend, &mut sink, &mut cursor);
        self.entry_mut(&req.device_id)?.link.hid_cursor = cursor;
        let report = result?;
        Ok(ExecutionReport { device_id: req.device_id.clone(), backend: report.backend, deliveries: report.deliveries, acks: report.acks })
    }

    /// Plays a script with mirroring as requested, measuring the device when asked.
    pub fn replay(&mut self, device_id: &str, script: &AutomationScript, opts: ReplayOptions) -> Result<ReplayOutcome, ControllerError> {
        let screen = self.device(device_id)?.screen();
        script.validate(screen).map_err(ControllerError::Invalid)?;
        self.faults.check("replay")?;
        let was_mirroring = self.link(device_id)?.mirroring;
        self.device_mirroring(device_id, if opts.mirroring { Switch::On } else { Switch::Off })?;
        let duration_s = script.total_duration_ms() as f64 / 1000.0;
        let start = self.now;
        let trace_id = if opts.measure { Some(self.start_monitor(device_id, duration_s.max(1e-3))?) } else { None };
        let result = self.play(device_id, script);
        if trace_id.is_some() {
            if result.is_ok() {
                self.advance_to(start + duration_s.max(1e-3))?;
            }
            // finishes the trace whether it ran to length or is cut short
            self.stop_monitor()?;
        }
        self.device_mirroring(device_id, if was_mirroring { Switch::On } else { Switch::Off })?;
        let log = result?;
        Ok(ReplayOutcome { device_id: device_id.to_string(), log, trace_id, duration_s })
    }

    fn play(&mut self, device_id: &str, script: &AutomationScript) -> Result<ReplayLog, ControllerError> {
        // fixed up front; every delivery still re-checks the link
        let backend = self.route(device_id, None)?;
        let mut cursor = self.devices[device_id].link.hid_cursor;
        let mut sink = ControllerSink { ctl: self, device_id: device_id.to_string() };
        let result = run_script(script, &mut sink, &mut cursor, |_, _| Ok(backend));
        self.entry_mut(device_id)?.link.hid_cursor = cursor;
        Ok(result?)
    }

    /// Opens a recording for the console. With `live`, each recognised
    /// gesture is also executed on the device as it arrives.
    pub fn start_recording(&mut self, device_id: &str, live: bool) -> Result<String, ControllerError> {
        let screen = self.device(device_id)?.screen();
        let session_id = self.recordings.open(device_id, screen)?;
        let compiler = live.then(|| Compiler::live(screen, Thresholds::default()));
        self.live.insert(device_id.to_string(), LiveDrive { session_id: session_id.clone(), origin: self.now, compiler });
        Ok(session_id)
    }

    pub fn recording(&self, session_id: &str) -> Option<&RecordingSession> {
        self.recordings.get(session_id)
    }

    /// Ingests console events in order. The node clock follows event times.
    pub fn ingest_input(&mut self, batch: InputBatch) -> Result<InputBatchReport, ControllerError> {
        let session = self.recordings.get(&batch.session_id).ok_or_else(|| ReplayError::UnknownSession(batch.session_id.clone()))?;
        if session.closed {
            return Err(ReplayError::Closed(batch.session_id.clone()).into());
        }
        let device_id = session.device_id.clone();
        let mut dispatched = Vec::new();
        let mut total = session.events.len();
        for event in batch.events {
            let drive = self.live.get(&device_id).filter(|l| l.session_id == batch.session_id);
            let origin = drive.map_or(self.now, |l| l.origin);
            total = self.recordings.ingest(&batch.session_id, event.clone())?;
            self.advance_to(origin + event.t as f64 / 1000.0)?;
            let commands = match self.live.get_mut(&device_id).and_then(|l| l.compiler.as_mut()) {
                Some(c) => c.feed(&event),
                None => Vec::new(),
            };
            for timed in commands {
                dispatched.push(self.execute(&ExecRequest { device_id: device_id.clone(), command: timed.command, backend: None })?);
            }
        }
        Ok(InputBatchReport { session_id: batch.session_id, total, dispatched })
    }

    /// Seals a recording and compiles it into a script.
    pub fn stop_recording(&mut self, session_id: &str) -> Result<RecordingClosed, ControllerError> {
        let session = self.recordings.close(session_id)?.clone();
        if let Some(mut drive) = self.live.remove(&session.device_id) {
            if let Some(c) = drive.compiler.as_mut() {
                for timed in c.finish() {
                    self.execute(&ExecRequest { device_id: session.device_id.clone(), command: timed.command, backend: None })?;
                }
            }
        }
        let CompileOutput { script, warnings } = compile(&session, Thresholds::default());
        Ok(RecordingClosed { session, script, warnings })
    }
}
