//! Simulated handset: interaction state machine, power model, software
//! battery meter and mirroring frame source.

pub mod config;
pub mod frame;
pub mod model;
pub mod profile;
pub mod scene;
pub mod workload;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::automation::adb::{parse_shell, AdbError, ShellCommand};
use crate::automation::command::{InputCommand, Key};
use crate::automation::hid::{HidError, HidKeyboardReport, HidMouseReport, KeyStroke, KeyboardDecoder};
use crate::trace::{PowerSample, SoftwareReadingSeries};

pub use self::config::{AppConfig, DeviceConfig, DeviceConfigFile};
pub use self::frame::{Frame, FrameEncoder, GRID_COLS, GRID_ROWS};
pub use self::model::{PowerInputs, PowerModel};
pub use self::profile::{DeviceProfile, NetworkProfile};
pub use self::scene::{ButtonAction, Rect, Scene, SceneState, Target, TargetKind, PAGE_LOAD_WORKLOAD};
pub use self::workload::{WorkloadAction, WorkloadScript, WorkloadStep};

pub const HOME: &str = "home";
pub const MAX_BRIGHTNESS: u8 = 250;
pub const DAY_S: f64 = 86_400.0;
const USB_CHARGE_MA: f64 = 500.0;
const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Os {
    Android,
    Ios,
}

impl fmt::Display for Os {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Os::Android => "android",
            Os::Ios => "ios",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum WifiBand {
    #[default]
    #[serde(rename = "off")]
    Off,
    #[serde(rename = "2.4GHz")]
    Ghz24,
    #[serde(rename = "5GHz")]
    Ghz5,
}

/// What the registry knows about a device.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceSummary {
    pub device_id: String,
    pub os: Os,
    pub screen: (u32, u32),
    pub adb_available: bool,
    pub address: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum PowerSource {
    Battery,
    Monitor { voltage: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppRecord {
    pub installed_at: f64,
    pub last_used: f64,
    pub onboarded: bool,
    pub cache_bytes: u64,
    /// System apps survive the stale-app sweep.
    pub protected: bool,
}

/// Observable device state. Two devices with equal `DeviceState` behave identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceState {
    pub brightness: u8,
    pub auto_brightness: bool,
    pub airplane: bool,
    pub mobile_data: bool,
    pub wifi: WifiBand,
    pub bluetooth: bool,
    pub notifications_enabled: bool,
    pub mirroring_active: bool,
    pub usb_connected: bool,
    pub foreground: Option<String>,
    pub background_apps: BTreeSet<String>,
    pub apps: BTreeMap<String, AppRecord>,
    pub scenes: BTreeMap<String, SceneState>,
    pub workload_cpu: f64,
    pub boost_until: f64,
}

impl DeviceState {
    pub fn foreground_or_home(&self) -> &str {
        self.foreground.as_deref().unwrap_or(HOME)
    }
}

/// Time integrals of the model inputs. Energy under any coefficient set is
/// affine in these, which is what calibration solves against.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UsageIntegrals {
    pub elapsed_s: f64,
    /// Integrated drawn current, mA·s (noise included when sampled).
    pub charge_mas: f64,
    pub brightness_s: f64,
    pub cpu_s: f64,
    pub wifi_24_s: f64,
    pub wifi_5_s: f64,
    pub bluetooth_s: f64,
}

impl UsageIntegrals {
    /// Noise-free charge, mA·s, under `model`.
    pub fn charge_under(&self, model: &PowerModel) -> f64 {
        model.base_ma * self.elapsed_s
            + model.brightness_ma_per_unit * self.brightness_s
            + model.cpu_ma * self.cpu_s
            + model.wifi_24_ma * self.wifi_24_s
            + model.wifi_5_ma * self.wifi_5_s
            + model.bluetooth_ma * self.bluetooth_s
    }

    pub fn since(&self, earlier: &UsageIntegrals) -> UsageIntegrals {
        UsageIntegrals {
            elapsed_s: self.elapsed_s - earlier.elapsed_s,
            charge_mas: self.charge_mas - earlier.charge_mas,
            brightness_s: self.brightness_s - earlier.brightness_s,
            cpu_s: self.cpu_s - earlier.cpu_s,
            wifi_24_s: self.wifi_24_s - earlier.wifi_24_s,
            wifi_5_s: self.wifi_5_s - earlier.wifi_5_s,
            bluetooth_s: self.bluetooth_s - earlier.bluetooth_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftwareReading {
    /// Time the report became visible (end of its window).
    pub t: f64,
    pub window_start: f64,
    pub current_ma: f64,
    pub voltage: f64,
}

/// State change caused by one input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "effect", rename_all = "snake_case")]
pub enum InputEffect {
    None,
    Launched { app: String },
    WentHome,
    Focused { field: Option<String> },
    Scrolled { target: String, offset: u32 },
    TextEntered { field: String },
    Submitted { field: String, value: String },
    Onboarded { app: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DeviceError {
    #[error("point ({x}, {y}) outside the {width}x{height} screen")]
    OutOfBounds { x: u32, y: u32, width: u32, height: u32 },
    #[error("app {0:?} is not installed")]
    AppNotInstalled(String),
    #[error("mirroring is off")]
    MirroringOff,
    #[error("unknown workload {0:?}")]
    UnknownWorkload(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dt must be positive and finite, got {0}")]
    BadStep(f64),
    #[error(transparent)]
    Hid(#[from] HidError),
    #[error(transparent)]
    Adb(#[from] AdbError),
}

/// Host side of the paired combo HID device: a relative cursor plus button
/// and keyboard state.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HidHost {
    pub cursor: (u32, u32),
    press: Option<PressState>,
    #[serde(skip)]
    keyboard: KeyboardDecoder,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct PressState {
    at: f64,
    point: (u32, u32),
    moved: bool,
}

#[derive(Debug, Clone, PartialEq)]
struct ActiveWorkload {
    script: WorkloadScript,
    started: f64,
    next: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct SoftwareMeter {
    cadence: Option<f64>,
    window_start: f64,
    charge: f64,
    history: Vec<SoftwareReading>,
}

impl SoftwareMeter {
    fn new(cadence: Option<f64>, now: f64) -> Self {
        Self { cadence, window_start: now, charge: 0.0, history: Vec::new() }
    }

    fn next_boundary(&self) -> Option<f64> {
        self.cadence.map(|c| self.window_start + c)
    }

    /// Accumulates `current` held over `[now, now + dt)`, closing windows on the way.
    fn integrate(&mut self, now: f64, current: f64, dt: f64, voltage: f64) {
        let Some(cadence) = self.cadence else { return };
        let end = now + dt;
        let mut t = now;
        loop {
            let boundary = self.window_start + cadence;
            if end + EPS < boundary {
                self.charge += current * (end - t);
                return;
            }
            self.charge += current * (boundary - t).max(0.0);
            self.history.push(SoftwareReading {
                t: boundary,
                window_start: self.window_start,
                current_ma: self.charge / cadence,
                voltage,
            });
            self.charge = 0.0;
            self.window_start = boundary;
            t = boundary;
            if (end - boundary).abs() <= EPS {
                return;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimDevice {
    id: String,
    profile: DeviceProfile,
    seed: u64,
    scenes: BTreeMap<String, Scene>,
    custom_home: bool,
    workloads: BTreeMap<String, WorkloadScript>,
    state: DeviceState,
    hid: HidHost,
    now: f64,
    rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
    active: Option<ActiveWorkload>,
    power: PowerSource,
    battery_mah: f64,
    meter: SoftwareMeter,
    encoder: FrameEncoder,
    usage: UsageIntegrals,
}

impl SimDevice {
    pub fn new(id: impl Into<String>, profile: DeviceProfile, seed: u64) -> Result<Self, DeviceError> {
        profile.validate().map_err(DeviceError::InvalidConfig)?;
        let noise = if profile.model.noise_ma > 0.0 {
            Some(Normal::new(0.0, profile.model.noise_ma).map_err(|e| DeviceError::InvalidConfig(e.to_string()))?)
        } else {
            None
        };
        let state = DeviceState {
            brightness: 128,
            auto_brightness: true,
            airplane: false,
            mobile_data: true,
            wifi: profile.preferred_band(),
            bluetooth: profile.os == Os::Ios,
            notifications_enabled: true,
            mirroring_active: false,
            usb_connected: true,
            foreground: None,
            background_apps: BTreeSet::new(),
            apps: BTreeMap::new(),
            scenes: BTreeMap::new(),
            workload_cpu: profile.idle_cpu_load,
            boost_until: f64::NEG_INFINITY,
        };
        let mut workloads = BTreeMap::new();
        workloads.insert(PAGE_LOAD_WORKLOAD.to_string(), WorkloadScript::page_load());
        workloads.insert("video".to_string(), WorkloadScript::video_playback());
        let (w, h) = profile.screen;
        let mut device = Self {
            id: id.into(),
            meter: SoftwareMeter::new(profile.software_cadence_s, 0.0),
            battery_mah: f64::from(profile.battery_mah),
            profile,
            seed,
            scenes: BTreeMap::new(),
            custom_home: false,
            workloads,
            state,
            hid: HidHost::default(),
            now: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise,
            active: None,
            power: PowerSource::Battery,
            encoder: FrameEncoder::default(),
            usage: UsageIntegrals::default(),
        };
        device.scenes.insert(HOME.into(), Scene::home_grid(std::iter::empty(), w, h));
        device.state.scenes.insert(HOME.into(), SceneState::default());
        Ok(device)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn profile(&self) -> &DeviceProfile {
        &self.profile
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn state(&self) -> &DeviceState {
        &self.state
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn screen(&self) -> (u32, u32) {
        self.profile.screen
    }

    pub fn hid_host(&self) -> &HidHost {
        &self.hid
    }

    pub fn power_source(&self) -> PowerSource {
        self.power
    }

    pub fn usage(&self) -> &UsageIntegrals {
        &self.usage
    }

    pub fn battery_mah(&self) -> f64 {
        self.battery_mah
    }

    pub fn summary(&self, address: impl Into<String>) -> DeviceSummary {
        DeviceSummary {
            device_id: self.id.clone(),
            os: self.profile.os,
            screen: self.profile.screen,
            adb_available: self.profile.os == Os::Android,
            address: address.into(),
        }
    }

    pub fn scene(&self, key: &str) -> Option<&Scene> {
        self.scenes.get(key)
    }

    pub fn foreground_scene(&self) -> &Scene {
        let key = self.state.foreground_or_home();
        self.scenes.get(key).or_else(|| self.scenes.get(HOME)).expect("home scene always present")
    }

    /// Center of the launcher icon for `app`, if it is on the home screen.
    pub fn icon_center(&self, app: &str) -> Option<(u32, u32)> {
        self.scenes.get(HOME)?.icon_for(app).map(|t| t.rect.center())
    }

    // ---- configuration ----

    pub fn set_scene(&mut self, key: &str, scene: Scene) -> Result<(), DeviceError> {
        let (w, h) = self.profile.screen;
        scene.validate(w, h).map_err(DeviceError::InvalidConfig)?;
        if key == HOME {
            self.custom_home = true;
        }
        self.state.scenes.insert(key.to_string(), scene.initial_state());
        self.scenes.insert(key.to_string(), scene);
        Ok(())
    }

    pub fn define_workload(&mut self, name: &str, script: WorkloadScript) -> Result<(), DeviceError> {
        script.validate().map_err(DeviceError::InvalidConfig)?;
        self.workloads.insert(name.to_string(), script);
        Ok(())
    }

    pub fn install_app(&mut self, app: &str, scene: Option<Scene>) -> Result<(), DeviceError> {
        if app.is_empty() {
            return Err(DeviceError::InvalidConfig("empty app id".into()));
        }
        let scene = scene.unwrap_or_default();
        let (w, h) = self.profile.screen;
        scene.validate(w, h).map_err(DeviceError::InvalidConfig)?;
        let now = self.now;
        self.state.apps.entry(app.to_string()).or_insert(AppRecord {
            installed_at: now,
            last_used: now,
            onboarded: scene.targets.iter().all(|t| !matches!(t.kind, TargetKind::Button { action: ButtonAction::CompleteOnboarding })),
            cache_bytes: 0,
            protected: false,
        });
        self.state.scenes.insert(app.to_string(), scene.initial_state());
        self.scenes.insert(app.to_string(), scene);
        self.rebuild_home();
        Ok(())
    }

    pub fn app_record_mut(&mut self, app: &str) -> Option<&mut AppRecord> {
        self.state.apps.get_mut(app)
    }

    pub fn uninstall_app(&mut self, app: &str) -> bool {
        if self.state.apps.remove(app).is_none() {
            return false;
        }
        if self.state.foreground.as_deref() == Some(app) {
            self.state.foreground = None;
        }
        self.state.background_apps.remove(app);
        self.state.scenes.remove(app);
        self.scenes.remove(app);
        self.rebuild_home();
        true
    }

    /// Clears cache and first-run state, as a fresh install would have.
    pub fn clear_app_data(&mut self, app: &str) -> Result<(), DeviceError> {
        let scene = self.scenes.get(app).ok_or_else(|| DeviceError::AppNotInstalled(app.into()))?;
        let needs_onboarding =
            scene.targets.iter().any(|t| matches!(t.kind, TargetKind::Button { action: ButtonAction::CompleteOnboarding }));
        let initial = scene.initial_state();
        let rec = self.state.apps.get_mut(app).ok_or_else(|| DeviceError::AppNotInstalled(app.into()))?;
        rec.cache_bytes = 0;
        rec.onboarded = !needs_onboarding;
        self.state.scenes.insert(app.to_string(), initial);
        Ok(())
    }

    /// Removes unprotected apps not used for `max_idle_s`. Returns the removed ids.
    pub fn remove_stale_apps(&mut self, max_idle_s: f64) -> Vec<String> {
        let now = self.now;
        let stale: Vec<String> = self
            .state
            .apps
            .iter()
            .filter(|(_, r)| !r.protected && now - r.last_used >= max_idle_s)
            .map(|(id, _)| id.clone())
            .collect();
        for app in &stale {
            self.uninstall_app(app);
        }
        stale
    }

    fn rebuild_home(&mut self) {
        if self.custom_home {
            return;
        }
        let (w, h) = self.profile.screen;
        let apps: Vec<&str> = self.state.apps.keys().map(String::as_str).collect();
        self.scenes.insert(HOME.into(), Scene::home_grid(apps, w, h));
    }

    // ---- settings ----

    pub fn set_brightness(&mut self, level: u8) {
        self.state.brightness = level.min(MAX_BRIGHTNESS);
    }

    pub fn set_auto_brightness(&mut self, on: bool) {
        self.state.auto_brightness = on;
    }

    /// Airplane mode drops every radio; WiFi and Bluetooth may be re-enabled afterwards.
    pub fn set_airplane(&mut self, on: bool) {
        self.state.airplane = on;
        if on {
            self.state.mobile_data = false;
            self.state.wifi = WifiBand::Off;
        } else {
            self.state.mobile_data = true;
        }
    }

    pub fn set_wifi(&mut self, band: WifiBand) -> Result<(), DeviceError> {
        if band == WifiBand::Ghz5 && !self.profile.supports_5ghz {
            return Err(DeviceError::InvalidConfig(format!("{} has no 5 GHz radio", self.profile.name)));
        }
        self.state.wifi = band;
        Ok(())
    }

    pub fn set_bluetooth(&mut self, on: bool) {
        self.state.bluetooth = on;
    }

    pub fn set_notifications(&mut self, on: bool) {
        self.state.notifications_enabled = on;
    }

    pub fn set_mirroring(&mut self, on: bool) {
        self.state.mirroring_active = on;
    }

    pub fn set_usb(&mut self, connected: bool) {
        self.state.usb_connected = connected;
    }

    /// Switches the supply without a gap: the next sample already uses the new source.
    pub fn set_power_source(&mut self, source: PowerSource) {
        self.power = source;
    }

    pub fn close_background_apps(&mut self) {
        self.state.background_apps.clear();
    }

    pub fn go_home(&mut self) {
        if let Some(prev) = self.state.foreground.take() {
            self.state.background_apps.insert(prev);
        }
    }

    /// Re-homes the HID cursor, as when the combo device (re)pairs.
    pub fn reset_hid(&mut self) {
        self.hid = HidHost::default();
    }

    // ---- workloads ----

    pub fn start_workload(&mut self, script: WorkloadScript) -> Result<(), DeviceError> {
        script.validate().map_err(DeviceError::InvalidConfig)?;
        self.active = Some(ActiveWorkload { script, started: self.now, next: 0 });
        self.apply_due_workload();
        Ok(())
    }

    pub fn start_named_workload(&mut self, name: &str) -> Result<(), DeviceError> {
        let script = self.workloads.get(name).cloned().ok_or_else(|| DeviceError::UnknownWorkload(name.into()))?;
        self.start_workload(script)
    }

    /// Ends any workload and returns the CPU to its idle level.
    pub fn stop_workload(&mut self) {
        self.active = None;
        self.state.workload_cpu = self.profile.idle_cpu_load;
    }

    pub fn workload_running(&self) -> bool {
        self.active.as_ref().is_some_and(|a| a.next < a.script.steps.len())
    }

    fn apply_due_workload(&mut self) {
        let Some(active) = self.active.as_mut() else { return };
        while let Some(step) = active.script.steps.get(active.next) {
            if active.started + step.at > self.now + EPS {
                break;
            }
            match step.action {
                WorkloadAction::SetCpu { load } => self.state.workload_cpu = load,
                WorkloadAction::SetBrightness { level } => self.state.brightness = level.min(MAX_BRIGHTNESS),
                WorkloadAction::VideoPlayback => self.state.workload_cpu = self.profile.video_cpu_load,
                WorkloadAction::Idle => self.state.workload_cpu = self.profile.idle_cpu_load,
            }
            active.next += 1;
        }
    }

    fn next_workload_event(&self) -> Option<f64> {
        let active = self.active.as_ref()?;
        active.script.steps.get(active.next).map(|s| active.started + s.at)
    }

    // ---- power ----

    /// CPU load excluding the mirroring overhead.
    pub fn cpu_load(&self) -> f64 {
        let boost = if self.now < self.state.boost_until { self.profile.input_boost_cpu } else { 0.0 };
        (self.state.workload_cpu + boost).min(1.0)
    }

    /// CPU utilisation as the OS would report it, mirroring included.
    pub fn effective_cpu(&self) -> f64 {
        self.profile.model.effective_cpu(self.cpu_load(), self.state.mirroring_active)
    }

    pub fn power_inputs(&self) -> PowerInputs {
        PowerInputs {
            brightness: self.state.brightness,
            cpu_load: self.cpu_load(),
            wifi: self.state.wifi,
            bluetooth: self.state.bluetooth,
            mirroring: self.state.mirroring_active,
        }
    }

    /// Noise-free current right now.
    pub fn current_ma(&self) -> f64 {
        self.profile.model.current_ma(&self.power_inputs())
    }

    pub fn supply_voltage(&self) -> f64 {
        match self.power {
            PowerSource::Battery => self.profile.model.supply_voltage,
            PowerSource::Monitor { voltage } => voltage,
        }
    }

    /// Draws one noisy sample for `[now, now + dt)` and advances time.
    pub fn step(&mut self, dt: f64) -> Result<PowerSample, DeviceError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(DeviceError::BadStep(dt));
        }
        self.apply_due_workload();
        let noise = match &self.noise {
            Some(n) => n.sample(&mut self.rng),
            None => 0.0,
        };
        let current = (self.current_ma() + noise).max(0.0);
        let sample = PowerSample { t: self.now, current };
        self.consume(current, dt);
        Ok(sample)
    }

    /// Advances time without sampling, integrating the noise-free model exactly.
    pub fn advance(&mut self, dt: f64) -> Result<(), DeviceError> {
        if !(dt.is_finite() && dt >= 0.0) {
            return Err(DeviceError::BadStep(dt));
        }
        self.run_until(self.now + dt);
        Ok(())
    }

    /// Advances to an absolute reading and lands on it exactly; earlier readings are a no-op.
    pub fn advance_to(&mut self, t: f64) -> Result<(), DeviceError> {
        if !t.is_finite() {
            return Err(DeviceError::BadStep(t));
        }
        if t > self.now {
            self.run_until(t);
        }
        Ok(())
    }

    fn run_until(&mut self, end: f64) {
        loop {
            self.apply_due_workload();
            if self.now >= end - EPS {
                self.now = self.now.max(end);
                self.apply_due_workload();
                return;
            }
            let mut next = end;
            if let Some(t) = self.next_workload_event() {
                next = next.min(t);
            }
            if self.state.boost_until > self.now {
                next = next.min(self.state.boost_until);
            }
            if let Some(b) = self.meter.next_boundary() {
                if b > self.now + EPS {
                    next = next.min(b);
                }
            }
            let current = self.current_ma();
            self.consume(current, (next - self.now).max(0.0));
        }
    }

    fn consume(&mut self, current: f64, dt: f64) {
        let inputs = self.power_inputs();
        let u = &mut self.usage;
        u.elapsed_s += dt;
        u.charge_mas += current * dt;
        u.brightness_s += f64::from(inputs.brightness) * dt;
        u.cpu_s += self.profile.model.effective_cpu(inputs.cpu_load, inputs.mirroring) * dt;
        match inputs.wifi {
            WifiBand::Off => {}
            WifiBand::Ghz24 => u.wifi_24_s += dt,
            WifiBand::Ghz5 => u.wifi_5_s += dt,
        }
        if inputs.bluetooth {
            u.bluetooth_s += dt;
        }
        let voltage = self.supply_voltage();
        self.meter.integrate(self.now, current, dt, voltage);
        if self.power == PowerSource::Battery {
            let delta = if self.state.usb_connected { USB_CHARGE_MA - current } else { -current };
            let cap = f64::from(self.profile.battery_mah);
            self.battery_mah = (self.battery_mah + delta * dt / 3600.0).clamp(0.0, cap);
        }
        self.now += dt;
    }

    // ---- software meter ----

    /// Mean current over the last completed reporting window; `None` before
    /// the first window closes or when the OS reports nothing.
    pub fn software_battery_reading(&self) -> Option<&SoftwareReading> {
        self.meter.history.last()
    }

    pub fn software_readings(&self) -> &[SoftwareReading] {
        &self.meter.history
    }

    /// Readings inside `[from, to]`, as a series timestamped when each became visible.
    pub fn software_series(&self, from: f64, to: f64) -> Option<SoftwareReadingSeries> {
        let cadence = self.meter.cadence?;
        let readings = self.meter.history.iter().filter(|r| r.t >= from - EPS && r.t <= to + EPS).map(|r| (r.t - from, r.current_ma)).collect();
        Some(SoftwareReadingSeries { cadence, readings })
    }

    /// Restarts the reporting windows at the current instant.
    pub fn restart_software_meter(&mut self) {
        self.meter = SoftwareMeter::new(self.profile.software_cadence_s, self.now);
    }

    // ---- input ----

    fn check_bounds(&self, x: u32, y: u32) -> Result<(), DeviceError> {
        let (width, height) = self.profile.screen;
        if x >= width || y >= height {
            return Err(DeviceError::OutOfBounds { x, y, width, height });
        }
        Ok(())
    }

    fn boost(&mut self) {
        self.state.boost_until = self.now + self.profile.input_boost_s;
    }

    fn launch(&mut self, app: &str) -> Result<InputEffect, DeviceError> {
        if !self.state.apps.contains_key(app) {
            return Err(DeviceError::AppNotInstalled(app.into()));
        }
        if self.state.foreground.as_deref() != Some(app) {
            if let Some(prev) = self.state.foreground.take() {
                self.state.background_apps.insert(prev);
            }
            self.state.background_apps.remove(app);
            self.state.foreground = Some(app.to_string());
        }
        let now = self.now;
        if let Some(rec) = self.state.apps.get_mut(app) {
            rec.last_used = now;
        }
        if !self.state.scenes.contains_key(app) {
            let initial = self.scenes.get(app).map(Scene::initial_state).unwrap_or_default();
            self.state.scenes.insert(app.to_string(), initial);
        }
        Ok(InputEffect::Launched { app: app.to_string() })
    }

    fn foreground_onboarded(&self) -> bool {
        match &self.state.foreground {
            None => true,
            Some(app) => self.state.apps.get(app).is_none_or(|r| r.onboarded),
        }
    }

    /// Applies a device-coordinate input and returns what changed.
    pub fn apply_input(&mut self, cmd: &InputCommand) -> Result<InputEffect, DeviceError> {
        cmd.validate().map_err(|e| DeviceError::InvalidInput(e.to_string()))?;
        for (x, y) in cmd.points() {
            self.check_bounds(x, y)?;
        }
        let effect = match cmd {
            InputCommand::Wait { .. } => return Ok(InputEffect::None),
            InputCommand::LaunchApp { app } => self.launch(app)?,
            InputCommand::Tap { x, y } => self.tap(*x, *y)?,
            InputCommand::Swipe { x1, y1, y2, .. } => self.swipe(*x1, *y1, *y2),
            InputCommand::Text { text } => self.type_text(text),
            InputCommand::Key { key } => self.press_key(*key),
        };
        self.boost();
        Ok(effect)
    }

    fn tap(&mut self, x: u32, y: u32) -> Result<InputEffect, DeviceError> {
        let onboarded = self.foreground_onboarded();
        let key = self.state.foreground_or_home().to_string();
        let Some(target) = self.foreground_scene().hit(x, y).cloned() else {
            return Ok(InputEffect::None);
        };
        if !onboarded && !matches!(target.kind, TargetKind::Button { .. }) {
            return Ok(InputEffect::None);
        }
        Ok(match target.kind {
            TargetKind::AppIcon { app } => {
                if self.state.apps.contains_key(&app) {
                    self.launch(&app)?
                } else {
                    InputEffect::None
                }
            }
            TargetKind::TextField { .. } => {
                let st = self.state.scenes.entry(key).or_default();
                st.focused = Some(target.id.clone());
                InputEffect::Focused { field: Some(target.id) }
            }
            TargetKind::Scrollable { .. } => {
                let st = self.state.scenes.entry(key).or_default();
                if st.focused.take().is_some() {
                    InputEffect::Focused { field: None }
                } else {
                    InputEffect::None
                }
            }
            TargetKind::Button { action: ButtonAction::CompleteOnboarding } => match self.state.foreground.clone() {
                Some(app) if !onboarded => {
                    if let Some(rec) = self.state.apps.get_mut(&app) {
                        rec.onboarded = true;
                    }
                    InputEffect::Onboarded { app }
                }
                _ => InputEffect::None,
            },
            TargetKind::Button { action: ButtonAction::None } => InputEffect::None,
        })
    }

    fn swipe(&mut self, x1: u32, y1: u32, y2: u32) -> InputEffect {
        if !self.foreground_onboarded() {
            return InputEffect::None;
        }
        let key = self.state.foreground_or_home().to_string();
        let Some(target) = self.foreground_scene().hit(x1, y1).cloned() else {
            return InputEffect::None;
        };
        let TargetKind::Scrollable { content_height } = target.kind else {
            return InputEffect::None;
        };
        let max = i64::from(content_height.saturating_sub(target.rect.h));
        let st = self.state.scenes.entry(key).or_default();
        let current = i64::from(st.scroll.get(&target.id).copied().unwrap_or(0));
        // dragging up moves the content down the page
        let offset = (current + i64::from(y1) - i64::from(y2)).clamp(0, max) as u32;
        st.scroll.insert(target.id.clone(), offset);
        InputEffect::Scrolled { target: target.id, offset }
    }

    fn focused_field(&self) -> Option<String> {
        if !self.foreground_onboarded() {
            return None;
        }
        self.state.scenes.get(self.state.foreground_or_home())?.focused.clone()
    }

    fn type_text(&mut self, text: &str) -> InputEffect {
        let Some(field) = self.focused_field() else { return InputEffect::None };
        let key = self.state.foreground_or_home().to_string();
        let st = self.state.scenes.entry(key).or_default();
        st.fields.entry(field.clone()).or_default().push_str(text);
        if let Some(app) = self.state.foreground.clone() {
            if let Some(rec) = self.state.apps.get_mut(&app) {
                rec.cache_bytes += text.len() as u64;
            }
        }
        InputEffect::TextEntered { field }
    }

    fn press_key(&mut self, key: Key) -> InputEffect {
        if key == Key::Home {
            let was_home = self.state.foreground.is_none();
            self.go_home();
            return if was_home { InputEffect::None } else { InputEffect::WentHome };
        }
        let scene_key = self.state.foreground_or_home().to_string();
        let field = self.focused_field();
        match key {
            Key::Enter => {
                let Some(field) = field else { return InputEffect::None };
                let value = self.state.scenes.get(&scene_key).and_then(|s| s.fields.get(&field)).cloned().unwrap_or_default();
                if let Some(st) = self.state.scenes.get_mut(&scene_key) {
                    st.submitted.push(value.clone());
                }
                let on_submit = self.scenes.get(&scene_key).and_then(|s| s.target(&field)).and_then(|t| match &t.kind {
                    TargetKind::TextField { on_submit } => on_submit.clone(),
                    _ => None,
                });
                if let Some(workload) = on_submit {
                    if let Some(script) = self.workloads.get(&workload).cloned() {
                        // a validated script cannot fail to start
                        let _ = self.start_workload(script);
                    }
                }
                InputEffect::Submitted { field, value }
            }
            Key::Tab => {
                if !self.foreground_onboarded() {
                    return InputEffect::None;
                }
                let fields: Vec<String> = self
                    .scenes
                    .get(&scene_key)
                    .map(|s| s.targets.iter().filter(|t| matches!(t.kind, TargetKind::TextField { .. })).map(|t| t.id.clone()).collect())
                    .unwrap_or_default();
                if fields.is_empty() {
                    return InputEffect::None;
                }
                let next = match field.and_then(|f| fields.iter().position(|x| *x == f)) {
                    Some(i) => fields[(i + 1) % fields.len()].clone(),
                    None => fields[0].clone(),
                };
                self.state.scenes.entry(scene_key).or_default().focused = Some(next.clone());
                InputEffect::Focused { field: Some(next) }
            }
            Key::Backspace => {
                let Some(field) = field else { return InputEffect::None };
                if let Some(st) = self.state.scenes.get_mut(&scene_key) {
                    st.fields.entry(field.clone()).or_default().pop();
                }
                InputEffect::TextEntered { field }
            }
            Key::Escape => match field {
                Some(_) => {
                    self.state.scenes.entry(scene_key).or_default().focused = None;
                    InputEffect::Focused { field: None }
                }
                None => InputEffect::None,
            },
            Key::Home => unreachable!("handled above"),
        }
    }

    /// Executes a shell line received over ADB; returns its textual output.
    pub fn receive_shell(&mut self, line: &str) -> Result<String, DeviceError> {
        match parse_shell(line)? {
            ShellCommand::Input(cmd) => {
                let effect = self.apply_input(&cmd)?;
                Ok(serde_json::to_string(&effect).unwrap_or_default())
            }
            ShellCommand::Dumpsys(service) if service == "battery" => Ok(format!(
                "level: {}\nvoltage: {}\nusb powered: {}",
                (100.0 * self.battery_mah / f64::from(self.profile.battery_mah)).round(),
                (self.supply_voltage() * 1000.0).round(),
                self.state.usb_connected
            )),
            ShellCommand::Dumpsys(service) => Ok(format!("service {service}: no dump")),
            ShellCommand::Logcat => Ok(String::new()),
            ShellCommand::Other(line) => Ok(format!("sh: {line}: ok")),
        }
    }

    /// Handles one mouse report from the paired combo device.
    pub fn receive_hid_mouse(&mut self, report: &HidMouseReport) -> Result<InputEffect, DeviceError> {
        report.validate()?;
        let (w, h) = self.profile.screen;
        let held_before = self.hid.press.is_some();
        let (cx, cy) = self.hid.cursor;
        let nx = (i64::from(cx) + i64::from(report.dx)).clamp(0, i64::from(w) - 1) as u32;
        let ny = (i64::from(cy) + i64::from(report.dy)).clamp(0, i64::from(h) - 1) as u32;
        self.hid.cursor = (nx, ny);
        match (held_before, report.left_pressed()) {
            (false, true) => {
                self.hid.press = Some(PressState { at: self.now, point: (nx, ny), moved: false });
                Ok(InputEffect::None)
            }
            (true, true) => {
                if let Some(p) = self.hid.press.as_mut() {
                    p.moved = true;
                }
                Ok(InputEffect::None)
            }
            (true, false) => {
                let press = self.hid.press.take().expect("held");
                let cmd = if press.moved {
                    let duration_ms = (((self.now - press.at) * 1000.0).round() as u32).max(1);
                    InputCommand::Swipe { x1: press.point.0, y1: press.point.1, x2: nx, y2: ny, duration_ms }
                } else {
                    InputCommand::Tap { x: press.point.0, y: press.point.1 }
                };
                self.apply_input(&cmd)
            }
            (false, false) => Ok(InputEffect::None),
        }
    }

    /// Handles one keyboard report; each newly pressed key is one input.
    pub fn receive_hid_keyboard(&mut self, report: &HidKeyboardReport) -> Result<Vec<InputEffect>, DeviceError> {
        report.validate()?;
        let strokes = self.hid.keyboard.feed(report);
        let mut effects = Vec::with_capacity(strokes.len());
        for stroke in strokes {
            let cmd = match stroke {
                KeyStroke::Char(c) => InputCommand::Text { text: c.to_string() },
                KeyStroke::Key(key) => InputCommand::Key { key },
            };
            effects.push(self.apply_input(&cmd)?);
        }
        Ok(effects)
    }

    // ---- mirroring ----

    /// Renders the foreground scene into a coarse grid and encodes it.
    pub fn render_frame(&mut self) -> Result<Frame, DeviceError> {
        if !self.state.mirroring_active {
            return Err(DeviceError::MirroringOff);
        }
        let (w, h) = self.profile.screen;
        let scene = self.foreground_scene().clone();
        let key = self.state.foreground_or_home().to_string();
        let st = self.state.scenes.get(&key).cloned().unwrap_or_default();
        let onboarding = !self.foreground_onboarded();
        let level = u32::from(self.state.brightness) + 5;
        let mut cells = Vec::with_capacity(GRID_COLS * GRID_ROWS);
        for row in 0..GRID_ROWS as u32 {
            for col in 0..GRID_COLS as u32 {
                let x = (2 * col + 1) * w / (2 * GRID_COLS as u32);
                let y = (2 * row + 1) * h / (2 * GRID_ROWS as u32);
                let base: u32 = match scene.hit(x, y) {
                    None => 16,
                    Some(t) => match &t.kind {
                        TargetKind::AppIcon { .. } => 200,
                        TargetKind::TextField { .. } => {
                            let len = st.fields.get(&t.id).map_or(0, |s| s.len() as u32);
                            let focus = if st.focused.as_deref() == Some(t.id.as_str()) { 40 } else { 0 };
                            120 + focus + len % 32
                        }
                        TargetKind::Scrollable { .. } => {
                            let offset = st.scroll.get(&t.id).copied().unwrap_or(0);
                            64 + ((y + offset) / 97 % 5) * 24
                        }
                        TargetKind::Button { .. } if onboarding => 240,
                        TargetKind::Button { .. } => 16,
                    },
                };
                cells.push((base * level / 255).min(255) as u8);
            }
        }
        Ok(self.encoder.encode(w, h, cells))
    }

    pub fn frame_encoder(&self) -> &FrameEncoder {
        &self.encoder
    }
}
