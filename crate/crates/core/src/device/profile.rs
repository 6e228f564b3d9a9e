//! Device and network presets.
//!
//! Anchored coefficients (base currents, CPU coefficients, video CPU level)
//! come out of [`crate::calibration`]; the
//! `presets_match_calibration` test keeps the two in sync.

use serde::{Deserialize, Serialize};

use super::model::PowerModel;
use super::Os;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub name: String,
    pub os: Os,
    pub screen: (u32, u32),
    pub supports_5ghz: bool,
    /// Seconds between software battery reports; `None` when the OS exposes none.
    pub software_cadence_s: Option<f64>,
    pub battery_mah: u32,
    pub model: PowerModel,
    pub idle_cpu_load: f64,
    pub video_cpu_load: f64,
    /// Transient CPU added by each input event, and how long it lasts.
    pub input_boost_cpu: f64,
    pub input_boost_s: f64,
}

pub const ANDROID_CADENCE_S: f64 = 30.0;
pub const DEFAULT_INPUT_BOOST_CPU: f64 = 0.05;
pub const DEFAULT_INPUT_BOOST_S: f64 = 0.3;

// Solved anchors, regenerate with `cargo run -p pb-core --bin pb-calibrate`.
pub(crate) const J7DUO_BASE_MA: f64 = 111.41125541125541;
pub(crate) const J7DUO_CPU_MA: f64 = 400.0;
pub(crate) const J7DUO_VIDEO_CPU: f64 = 0.041471861471861486;
pub(crate) const LMX210_BASE_MA: f64 = 83.02105263157895;
pub(crate) const IPHONE7_BASE_MA: f64 = 74.04912280701755;
pub(crate) const SMJ337A_BASE_MA: f64 = 164.19862422753843;
pub(crate) const SMJ337A_CPU_MA: f64 = 243.20670746083923;

impl DeviceProfile {
    pub const PRESET_NAMES: [&'static str; 7] = ["J7DUO", "IPHONE7", "SMJ337A", "LMX210", "PIXEL3A", "PIXEL4", "PIXEL5"];

    pub fn preset(name: &str) -> Option<DeviceProfile> {
        let android = |name: &str, screen, supports_5ghz, battery_mah, model: PowerModel, idle_cpu_load, video_cpu_load| DeviceProfile {
            name: name.to_string(),
            os: Os::Android,
            screen,
            supports_5ghz,
            software_cadence_s: Some(ANDROID_CADENCE_S),
            battery_mah,
            model,
            idle_cpu_load,
            video_cpu_load,
            input_boost_cpu: DEFAULT_INPUT_BOOST_CPU,
            input_boost_s: DEFAULT_INPUT_BOOST_S,
        };
        let profile = match name {
            "J7DUO" => android(
                "J7DUO",
                (720, 1280),
                true,
                3000,
                PowerModel {
                    base_ma: J7DUO_BASE_MA,
                    brightness_ma_per_unit: 0.40,
                    cpu_ma: J7DUO_CPU_MA,
                    supply_voltage: 3.85,
                    ..PowerModel::default()
                },
                0.03,
                J7DUO_VIDEO_CPU,
            ),
            "SMJ337A" => android(
                "SMJ337A",
                (720, 1280),
                false,
                2600,
                PowerModel {
                    base_ma: SMJ337A_BASE_MA,
                    brightness_ma_per_unit: 0.36,
                    cpu_ma: SMJ337A_CPU_MA,
                    supply_voltage: 3.85,
                    ..PowerModel::default()
                },
                0.04,
                0.10,
            ),
            "LMX210" => android(
                "LMX210",
                (720, 1280),
                false,
                2500,
                PowerModel {
                    base_ma: LMX210_BASE_MA,
                    brightness_ma_per_unit: 0.32,
                    cpu_ma: 260.0,
                    supply_voltage: 3.80,
                    ..PowerModel::default()
                },
                0.04,
                0.10,
            ),
            "IPHONE7" => DeviceProfile {
                name: "IPHONE7".into(),
                os: Os::Ios,
                screen: (750, 1334),
                supports_5ghz: true,
                software_cadence_s: None,
                battery_mah: 1960,
                model: PowerModel {
                    base_ma: IPHONE7_BASE_MA,
                    brightness_ma_per_unit: 0.30,
                    cpu_ma: 280.0,
                    supply_voltage: 3.80,
                    ..PowerModel::default()
                },
                idle_cpu_load: 0.02,
                video_cpu_load: 0.08,
                input_boost_cpu: DEFAULT_INPUT_BOOST_CPU,
                input_boost_s: DEFAULT_INPUT_BOOST_S,
            },
            "PIXEL3A" | "PIXEL4" | "PIXEL5" => {
                let cadence = match name {
                    "PIXEL3A" => 2.23,
                    "PIXEL4" => 0.66,
                    _ => 0.60,
                };
                let mut p = android(
                    name,
                    (1080, 2340),
                    true,
                    4000,
                    PowerModel { base_ma: 95.0, brightness_ma_per_unit: 0.30, cpu_ma: 320.0, supply_voltage: 3.87, ..PowerModel::default() },
                    0.03,
                    0.06,
                );
                p.software_cadence_s = Some(cadence);
                p
            }
            _ => return None,
        };
        Some(profile)
    }

    pub fn presets() -> Vec<DeviceProfile> {
        Self::PRESET_NAMES.iter().filter_map(|n| Self::preset(n)).collect()
    }

    pub fn validate(&self) -> Result<(), String> {
        self.model.validate()?;
        if self.screen.0 == 0 || self.screen.1 == 0 {
            return Err("screen dimensions must be positive".into());
        }
        if let Some(c) = self.software_cadence_s {
            if !(c.is_finite() && c > 0.0) {
                return Err(format!("software cadence must be positive, got {c}"));
            }
        }
        for (name, v) in [("idle_cpu_load", self.idle_cpu_load), ("video_cpu_load", self.video_cpu_load), ("input_boost_cpu", self.input_boost_cpu)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} {v} outside [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn preferred_band(&self) -> super::WifiBand {
        if self.supports_5ghz {
            super::WifiBand::Ghz5
        } else {
            super::WifiBand::Ghz24
        }
    }
}

/// Emulated network location (VPN exit) characteristics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkProfile {
    pub name: String,
    pub download_mbps: f64,
    pub upload_mbps: f64,
    pub latency_ms: f64,
}

impl NetworkProfile {
    pub fn presets() -> Vec<NetworkProfile> {
        [
            ("South Africa", 6.26, 9.77, 222.04),
            ("China", 7.64, 7.77, 286.32),
            ("Japan", 9.68, 7.76, 239.38),
            ("Brazil", 9.75, 8.82, 235.05),
            ("CA, USA", 10.63, 14.87, 215.16),
        ]
        .into_iter()
        .map(|(name, download_mbps, upload_mbps, latency_ms)| NetworkProfile { name: name.into(), download_mbps, upload_mbps, latency_ms })
        .collect()
    }

    pub fn preset(name: &str) -> Option<NetworkProfile> {
        Self::presets().into_iter().find(|p| p.name == name)
    }

    /// Seconds to move `bytes` downstream, including one round trip.
    pub fn transfer_time_s(&self, bytes: u64) -> f64 {
        self.latency_ms / 1000.0 + (bytes as f64 * 8.0) / (self.download_mbps * 1e6)
    }
}
