use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Channel, Controller, ControllerError, Switch};
use crate::automation::HidCursor;
use crate::device::{Os, WifiBand, DAY_S};

/// Apps untouched for longer than this are removed during cleanup.
pub const STALE_APP_DAYS: f64 = 7.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NodeSetupOptions {
    /// Route the device through the power monitor.
    pub power: bool,
    /// Start screen mirroring for the console.
    pub visual: bool,
    /// The experiment uses the cellular network, so ADB over WiFi is not an option.
    pub mobile: bool,
    /// Monitor voltage; defaults to the device's nominal battery voltage.
    pub voltage: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceSetupOptions {
    pub brightness: Option<u8>,
    pub mobile_data: bool,
}

pub const DEFAULT_BRIGHTNESS: u8 = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetupReport {
    pub device_id: String,
    pub steps: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CleanupReport {
    /// Device left on the monitor because its measurement is still running.
    pub deferred: Option<String>,
    pub stopped_trace: Option<String>,
    pub removed_apps: BTreeMap<String, Vec<String>>,
    pub safe: bool,
}

impl Controller {
    fn preferred_band(&self, device_id: &str) -> Result<WifiBand, ControllerError> {
        Ok(if self.device(device_id)?.profile().supports_5ghz { WifiBand::Ghz5 } else { WifiBand::Ghz24 })
    }

    /// Prepares the node around one device. Any failure rolls the node back
    /// to its safe state before the error is returned.
    pub fn node_setup(&mut self, device_id: &str, opts: NodeSetupOptions) -> Result<SetupReport, ControllerError> {
        self.device(device_id)?;
        if self.session_running() {
            return Err(ControllerError::Exclusivity("a measurement is running".into()));
        }
        let mut steps = Vec::new();
        match self.node_setup_steps(device_id, opts, &mut steps) {
            Ok(()) => Ok(SetupReport { device_id: device_id.to_string(), steps }),
            Err((step, e)) => {
                self.cleanup(true)?;
                Err(ControllerError::SetupFailed { step: step.to_string(), reason: e.to_string() })
            }
        }
    }

    fn node_setup_steps(&mut self, id: &str, opts: NodeSetupOptions, steps: &mut Vec<String>) -> Result<(), (&'static str, ControllerError)> {
        fn at(name: &'static str) -> impl Fn(ControllerError) -> (&'static str, ControllerError) {
            move |e| (name, e)
        }
        if opts.power {
            self.power_monitor(Switch::On).map_err(at("power_monitor"))?;
            steps.push("power_monitor".into());
            let volts = match opts.voltage {
                Some(v) => v,
                None => self.device(id).map_err(at("set_voltage"))?.profile().model.supply_voltage,
            };
            // the monitor moves between devices only through an explicit battery step
            if let Some(other) = self.relay.monitored().filter(|d| *d != id).map(str::to_string) {
                self.set_channel(&other, Channel::Battery).map_err(at("batt_switch"))?;
            }
            if self.monitor.voltage != Some(volts) {
                if self.relay.monitored().is_some() {
                    self.set_channel(id, Channel::Battery).map_err(at("batt_switch"))?;
                }
                self.set_voltage(volts).map_err(at("set_voltage"))?;
            }
            steps.push("set_voltage".into());
            self.set_channel(id, Channel::Monitor).map_err(at("batt_switch"))?;
            steps.push("batt_switch".into());
        }
        let os = self.device(id).map_err(at("link"))?.profile().os;
        let band = self.preferred_band(id).map_err(at("link"))?;
        self.faults.check("link").map_err(at("link"))?;
        {
            let entry = self.entry_mut(id).map_err(at("link"))?;
            entry.link.mobile_network = opts.mobile;
            if !opts.mobile {
                entry.device.set_wifi(band).map_err(|e| ("link", e.into()))?;
                entry.link.wifi_band = band;
            }
            if os == Os::Android && !opts.mobile {
                entry.link.wifi_adb = true;
            }
            if os == Os::Ios || opts.mobile {
                entry.link.bluetooth_paired = true;
                entry.link.hid_cursor = HidCursor::default();
                entry.device.set_bluetooth(true);
                entry.device.reset_hid();
            }
        }
        steps.push("link".into());
        if opts.power {
            self.faults.check("usb").map_err(at("usb"))?;
            let entry = self.entry_mut(id).map_err(at("usb"))?;
            entry.link.usb = false;
            entry.device.set_usb(false);
            steps.push("usb".into());
        }
        if opts.visual {
            self.device_mirroring(id, Switch::On).map_err(at("device_mirroring"))?;
            steps.push("device_mirroring".into());
        }
        Ok(())
    }

    /// Puts the device in a reproducible state: quiet, radios as requested,
    /// nothing running, fixed brightness.
    pub fn device_setup(&mut self, device_id: &str, opts: DeviceSetupOptions) -> Result<SetupReport, ControllerError> {
        self.device(device_id)?;
        self.faults.check("device_setup")?;
        let band = self.preferred_band(device_id)?;
        let entry = self.entry_mut(device_id)?;
        let d = &mut entry.device;
        d.set_notifications(false);
        if opts.mobile_data {
            d.set_airplane(false);
            d.set_wifi(WifiBand::Off)?;
        } else {
            d.set_airplane(true);
            d.set_wifi(band)?;
        }
        entry.link.wifi_band = d.state().wifi;
        entry.link.mobile_network = opts.mobile_data;
        d.set_bluetooth(entry.link.bluetooth_paired);
        d.go_home();
        d.close_background_apps();
        d.stop_workload();
        d.set_auto_brightness(false);
        d.set_brightness(opts.brightness.unwrap_or(DEFAULT_BRIGHTNESS));
        let steps = ["notifications", "radios", "apps", "workload", "brightness"].map(String::from).to_vec();
        Ok(SetupReport { device_id: device_id.to_string(), steps })
    }

    /// Returns the node to its safe state. Without `force`, a device whose
    /// measurement is still running stays on the monitor.
    pub fn cleanup(&mut self, force: bool) -> Result<CleanupReport, ControllerError> {
        self.faults.suspend(true);
        let result = self.cleanup_inner(force);
        self.faults.suspend(false);
        result
    }

    fn cleanup_inner(&mut self, force: bool) -> Result<CleanupReport, ControllerError> {
        let mut report = CleanupReport::default();
        if self.session_running() {
            if force {
                report.stopped_trace = Some(self.stop_monitor()?);
            } else {
                report.deferred = self.measured_device().map(str::to_string);
            }
        }
        let ids = self.device_ids();
        for id in &ids {
            if report.deferred.as_deref() == Some(id.as_str()) {
                continue;
            }
            self.set_channel(id, Channel::Battery)?;
        }
        if report.deferred.is_none() {
            self.power_monitor(Switch::Off)?;
        }
        for id in &ids {
            if report.deferred.as_deref() == Some(id.as_str()) {
                continue;
            }
            let entry = self.entry_mut(id)?;
            entry.link.usb = true;
            entry.device.set_usb(true);
            entry.link.mirroring = false;
            entry.device.set_mirroring(false);
            entry.device.stop_workload();
            let removed = entry.device.remove_stale_apps(STALE_APP_DAYS * DAY_S);
            if !removed.is_empty() {
                report.removed_apps.insert(id.clone(), removed);
            }
        }
        report.safe = self.is_safe();
        Ok(report)
    }
}
