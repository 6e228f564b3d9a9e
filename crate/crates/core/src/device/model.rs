use serde::{Deserialize, Serialize};

use super::WifiBand;

/// Affine current-draw model of a handset.
///
/// `I = base + brightness_coeff * brightness + cpu_coeff * effective_cpu
///      + wifi(band) + bluetooth + noise`, clamped at zero, where
/// `effective_cpu = min(1, cpu_load + mirroring_cpu_overhead * [mirroring])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerModel {
    pub base_ma: f64,
    pub brightness_ma_per_unit: f64,
    pub cpu_ma: f64,
    pub wifi_24_ma: f64,
    pub wifi_5_ma: f64,
    pub bluetooth_ma: f64,
    pub mirroring_cpu_overhead: f64,
    /// Standard deviation of the Gaussian noise, mA.
    pub noise_ma: f64,
    pub supply_voltage: f64,
}

impl Default for PowerModel {
    fn default() -> Self {
        Self {
            base_ma: 100.0,
            brightness_ma_per_unit: 0.3,
            cpu_ma: 300.0,
            wifi_24_ma: 9.0,
            wifi_5_ma: 12.0,
            bluetooth_ma: 3.0,
            mirroring_cpu_overhead: 0.15,
            noise_ma: 5.0,
            supply_voltage: 3.85,
        }
    }
}

/// Device state the model reads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerInputs {
    pub brightness: u8,
    pub cpu_load: f64,
    pub wifi: WifiBand,
    pub bluetooth: bool,
    pub mirroring: bool,
}

impl PowerModel {
    pub fn validate(&self) -> Result<(), String> {
        let coeffs = [
            ("base_ma", self.base_ma),
            ("brightness_ma_per_unit", self.brightness_ma_per_unit),
            ("cpu_ma", self.cpu_ma),
            ("wifi_24_ma", self.wifi_24_ma),
            ("wifi_5_ma", self.wifi_5_ma),
            ("bluetooth_ma", self.bluetooth_ma),
            ("mirroring_cpu_overhead", self.mirroring_cpu_overhead),
            ("noise_ma", self.noise_ma),
        ];
        for (name, v) in coeffs {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        if !(self.supply_voltage.is_finite() && self.supply_voltage > 0.0) {
            return Err(format!("supply_voltage must be positive, got {}", self.supply_voltage));
        }
        Ok(())
    }

    pub fn effective_cpu(&self, cpu_load: f64, mirroring: bool) -> f64 {
        let overhead = if mirroring { self.mirroring_cpu_overhead } else { 0.0 };
        (cpu_load + overhead).min(1.0)
    }

    pub fn radio_ma(&self, wifi: WifiBand, bluetooth: bool) -> f64 {
        let wifi = match wifi {
            WifiBand::Off => 0.0,
            WifiBand::Ghz24 => self.wifi_24_ma,
            WifiBand::Ghz5 => self.wifi_5_ma,
        };
        wifi + if bluetooth { self.bluetooth_ma } else { 0.0 }
    }

    /// Noise-free current in mA.
    pub fn current_ma(&self, inputs: &PowerInputs) -> f64 {
        let current = self.base_ma
            + self.brightness_ma_per_unit * f64::from(inputs.brightness)
            + self.cpu_ma * self.effective_cpu(inputs.cpu_load, inputs.mirroring)
            + self.radio_ma(inputs.wifi, inputs.bluetooth);
        current.max(0.0)
    }
}
