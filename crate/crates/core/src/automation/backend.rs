use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{DeviceSummary, Os, WifiBand};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    UsbAdb,
    WifiAdb,
    BluetoothHid,
}

impl Backend {
    pub const ALL: [Backend; 3] = [Backend::UsbAdb, Backend::WifiAdb, Backend::BluetoothHid];

    pub fn is_adb(self) -> bool {
        matches!(self, Backend::UsbAdb | Backend::WifiAdb)
    }

    /// Whether the transport is physically usable on this link right now.
    pub fn available(self, device: &DeviceSummary, link: &LinkState) -> bool {
        match self {
            Backend::UsbAdb => device.adb_available && link.usb,
            Backend::WifiAdb => device.adb_available && link.wifi_adb && link.wifi != WifiBand::Off,
            Backend::BluetoothHid => link.bluetooth_paired,
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::UsbAdb => "usb_adb",
            Backend::WifiAdb => "wifi_adb",
            Backend::BluetoothHid => "bluetooth_hid",
        })
    }
}

/// Transport-relevant part of a controller's device link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LinkState {
    pub usb: bool,
    pub wifi: WifiBand,
    pub wifi_adb: bool,
    pub bluetooth_paired: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RoutingError {
    #[error("no input backend available for {device} (tried {tried:?})")]
    NoBackend { device: String, tried: Vec<Backend> },
    #[error("backend {backend} is not usable for {device}: {reason}")]
    Unusable { device: String, backend: Backend, reason: String },
}

/// Ordered backends the rules allow, best first.
pub fn preference(os: Os, meter_active: bool, needs_mobile_network: bool) -> Vec<Backend> {
    match (os, meter_active, needs_mobile_network) {
        (Os::Ios, _, _) => vec![Backend::BluetoothHid],
        (Os::Android, false, _) => vec![Backend::UsbAdb, Backend::WifiAdb, Backend::BluetoothHid],
        (Os::Android, true, false) => vec![Backend::WifiAdb, Backend::BluetoothHid],
        // WiFi is down for mobile-network tests
        (Os::Android, true, true) => vec![Backend::BluetoothHid],
    }
}

/// First preferred backend that is available on the link.
pub fn select_backend(
    device: &DeviceSummary,
    link: &LinkState,
    meter_active: bool,
    needs_mobile_network: bool,
) -> Result<Backend, RoutingError> {
    let tried = preference(device.os, meter_active, needs_mobile_network);
    tried
        .iter()
        .copied()
        .find(|b| b.available(device, link))
        .ok_or_else(|| RoutingError::NoBackend { device: device.device_id.clone(), tried })
}

/// Validates an explicit backend request against the same rules.
pub fn check_hint(
    hint: Backend,
    device: &DeviceSummary,
    link: &LinkState,
    meter_active: bool,
    needs_mobile_network: bool,
) -> Result<Backend, RoutingError> {
    let unusable = |reason: &str| RoutingError::Unusable { device: device.device_id.clone(), backend: hint, reason: reason.into() };
    if !preference(device.os, meter_active, needs_mobile_network).contains(&hint) {
        return Err(unusable("not permitted in the current measurement mode"));
    }
    if !hint.available(device, link) {
        return Err(unusable("link is down"));
    }
    Ok(hint)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn android() -> DeviceSummary {
        DeviceSummary { device_id: "d1".into(), os: Os::Android, screen: (720, 1280), adb_available: true, address: "usb:d1".into() }
    }

    fn all_up() -> LinkState {
        LinkState { usb: true, wifi: WifiBand::Ghz5, wifi_adb: true, bluetooth_paired: true }
    }

    #[test]
    fn rule_table() {
        let d = android();
        assert_eq!(select_backend(&d, &all_up(), false, false), Ok(Backend::UsbAdb));
        let measuring = LinkState { usb: false, ..all_up() };
        assert_eq!(select_backend(&d, &measuring, true, false), Ok(Backend::WifiAdb));
        assert_eq!(select_backend(&d, &measuring, true, true), Ok(Backend::BluetoothHid));
        let ios = DeviceSummary { os: Os::Ios, adb_available: false, ..android() };
        assert_eq!(select_backend(&ios, &all_up(), false, false), Ok(Backend::BluetoothHid));
    }

    #[test]
    fn no_backend_is_a_routing_error() {
        let d = android();
        let down = LinkState::default();
        assert!(matches!(select_backend(&d, &down, true, false), Err(RoutingError::NoBackend { .. })));
        assert!(check_hint(Backend::UsbAdb, &d, &down, true, false).is_err());
    }
}
