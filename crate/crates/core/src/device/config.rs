//! Device config file: one JSON document per controller listing its devices.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DeviceError, DeviceProfile, Scene, SimDevice, WorkloadScript, DAY_S, HOME};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    pub id: String,
    #[serde(default)]
    pub installed_days_ago: f64,
    #[serde(default)]
    pub last_used_days_ago: f64,
    /// Browser apps get the stock browser scene (URL bar, page, onboarding button).
    #[serde(default)]
    pub browser: bool,
    #[serde(default)]
    pub protected: bool,
    #[serde(default)]
    pub scene: Option<Scene>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    pub device_id: String,
    pub profile: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub address: Option<String>,
    /// Overrides the noise amplitude of the profile, mA.
    #[serde(default)]
    pub noise_ma: Option<f64>,
    #[serde(default)]
    pub apps: Vec<AppConfig>,
    /// Replaces the generated launcher grid.
    #[serde(default)]
    pub home_scene: Option<Scene>,
    #[serde(default)]
    pub workloads: BTreeMap<String, WorkloadScript>,
    #[serde(default)]
    pub startup_workload: Option<String>,
}

/// Top-level file shape: `{"devices": [...]}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfigFile {
    pub devices: Vec<DeviceConfig>,
}

impl DeviceConfigFile {
    pub fn parse(text: &str) -> Result<Self, DeviceError> {
        let file: Self = serde_json::from_str(text).map_err(|e| DeviceError::InvalidConfig(e.to_string()))?;
        let mut seen = std::collections::BTreeSet::new();
        for d in &file.devices {
            if !seen.insert(d.device_id.as_str()) {
                return Err(DeviceError::InvalidConfig(format!("duplicate device id {:?}", d.device_id)));
            }
        }
        Ok(file)
    }

    pub fn build(&self) -> Result<Vec<SimDevice>, DeviceError> {
        self.devices.iter().map(DeviceConfig::build).collect()
    }
}

impl DeviceConfig {
    pub fn new(device_id: &str, profile: &str, seed: u64) -> Self {
        Self {
            device_id: device_id.into(),
            profile: profile.into(),
            seed,
            address: None,
            noise_ma: None,
            apps: Vec::new(),
            home_scene: None,
            workloads: BTreeMap::new(),
            startup_workload: None,
        }
    }

    pub fn with_app(mut self, id: &str, browser: bool) -> Self {
        self.apps.push(AppConfig {
            id: id.into(),
            installed_days_ago: 30.0,
            last_used_days_ago: 1.0,
            browser,
            protected: false,
            scene: None,
        });
        self
    }

    pub fn build(&self) -> Result<SimDevice, DeviceError> {
        if self.device_id.is_empty() {
            return Err(DeviceError::InvalidConfig("empty device id".into()));
        }
        let mut profile = DeviceProfile::preset(&self.profile)
            .ok_or_else(|| DeviceError::InvalidConfig(format!("unknown profile {:?}", self.profile)))?;
        if let Some(noise) = self.noise_ma {
            profile.model.noise_ma = noise;
        }
        let (w, h) = profile.screen;
        let mut device = SimDevice::new(self.device_id.clone(), profile, self.seed)?;
        for app in &self.apps {
            if !(app.installed_days_ago.is_finite() && app.last_used_days_ago.is_finite()) {
                return Err(DeviceError::InvalidConfig(format!("app {:?}: day offsets must be finite", app.id)));
            }
            let scene = match (&app.scene, app.browser) {
                (Some(s), _) => Some(s.clone()),
                (None, true) => Some(Scene::browser(w, h)),
                (None, false) => None,
            };
            device.install_app(&app.id, scene)?;
            let rec = device.app_record_mut(&app.id).expect("just installed");
            rec.installed_at = -app.installed_days_ago * DAY_S;
            rec.last_used = -app.last_used_days_ago * DAY_S;
            rec.protected = app.protected;
            // configured apps have been used before
            rec.onboarded = true;
        }
        if let Some(home) = &self.home_scene {
            device.set_scene(HOME, home.clone())?;
        }
        for (name, script) in &self.workloads {
            device.define_workload(name, script.clone())?;
        }
        if let Some(name) = &self.startup_workload {
            device.start_named_workload(name)?;
        }
        Ok(device)
    }
}
