//! Turns an [`InputCommand`] into transport deliveries and sends them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::adb::{to_adb, AdbError};
use super::backend::{Backend, RoutingError};
use super::command::{CommandError, InputCommand, Key};
use super::hid::{encode_key, encode_keystrokes, encode_move, HidError, HidKeyboardReport, HidMouseReport, BUTTON_LEFT, MAX_DELTA};
use crate::device::{DeviceError, SimDevice};

/// One unit sent over a transport.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Delivery {
    Shell { line: String },
    Mouse { report: HidMouseReport },
    Keyboard { report: HidKeyboardReport },
    Wait { ms: u32 },
}

/// Where deliveries land: a device directly, or a controller forwarding to one.
pub trait InputSink {
    fn screen(&self) -> (u32, u32);
    fn icon_center(&self, app: &str) -> Option<(u32, u32)>;
    fn app_installed(&self, app: &str) -> bool;
    /// Returns the device acknowledgment text.
    fn deliver(&mut self, backend: Backend, delivery: &Delivery) -> Result<String, DispatchError>;
    fn now(&self) -> f64;
    /// Lets simulated time run to the absolute reading `t`.
    fn wait_until(&mut self, backend: Backend, t: f64) -> Result<(), DispatchError>;
}

/// The dispatcher's idea of where the HID cursor is; `None` until homed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct HidCursor(pub Option<(i32, i32)>);

impl HidCursor {
    pub fn homed() -> Self {
        Self(Some((0, 0)))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DispatchError {
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error(transparent)]
    Command(#[from] CommandError),
    #[error(transparent)]
    Adb(#[from] AdbError),
    #[error(transparent)]
    Hid(#[from] HidError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error("backend lost after {delivered} of {total} deliveries: {reason}")]
    Partial { delivered: usize, total: usize, reason: String, acks: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchReport {
    pub backend: Backend,
    pub deliveries: usize,
    pub acks: Vec<String>,
}

fn check_points(cmd: &InputCommand, (w, h): (u32, u32)) -> Result<(), DeviceError> {
    for (x, y) in cmd.points() {
        if x >= w || y >= h {
            return Err(DeviceError::OutOfBounds { x, y, width: w, height: h });
        }
    }
    Ok(())
}

fn mouse(reports: Vec<HidMouseReport>) -> impl Iterator<Item = Delivery> {
    reports.into_iter().map(|report| Delivery::Mouse { report })
}

fn keyboard(reports: impl IntoIterator<Item = HidKeyboardReport>) -> impl Iterator<Item = Delivery> {
    reports.into_iter().map(|report| Delivery::Keyboard { report })
}

struct PointerPlan {
    out: Vec<Delivery>,
    cursor: (i32, i32),
    screen: (u32, u32),
}

impl PointerPlan {
    fn new(start: HidCursor, screen: (u32, u32)) -> Self {
        let mut plan = Self { out: Vec::new(), cursor: (0, 0), screen };
        match start.0 {
            Some(c) => plan.cursor = c,
            // overshoot to the top-left corner; the host clamps
            None => plan.out.extend(mouse(encode_move(-(screen.0 as i32) - MAX_DELTA, -(screen.1 as i32) - MAX_DELTA, 0))),
        }
        plan
    }

    fn move_to(&mut self, x: u32, y: u32, buttons: u8) {
        let (x, y) = (x.min(self.screen.0 - 1) as i32, y.min(self.screen.1 - 1) as i32);
        self.out.extend(mouse(encode_move(x - self.cursor.0, y - self.cursor.1, buttons)));
        self.cursor = (x, y);
    }

    fn click(&mut self) {
        self.out.push(Delivery::Mouse { report: HidMouseReport::new(BUTTON_LEFT, 0, 0) });
        self.out.push(Delivery::Mouse { report: HidMouseReport::new(0, 0, 0) });
    }

    /// Press, interpolated held moves spaced over `duration_ms`, release.
    fn drag(&mut self, to: (u32, u32), duration_ms: u32) {
        self.out.push(Delivery::Mouse { report: HidMouseReport::new(BUTTON_LEFT, 0, 0) });
        let start = self.cursor;
        let (dx, dy) = (to.0 as i32 - start.0, to.1 as i32 - start.1);
        let steps = (dx.abs().max(dy.abs()) as u32).div_ceil(MAX_DELTA as u32).max(1);
        let mut elapsed = 0u32;
        for k in 1..=steps {
            let at = (u64::from(duration_ms) * u64::from(k) / u64::from(steps)) as u32;
            self.out.push(Delivery::Wait { ms: at - elapsed });
            elapsed = at;
            let px = start.0 + (f64::from(dx) * f64::from(k) / f64::from(steps)).round() as i32;
            let py = start.1 + (f64::from(dy) * f64::from(k) / f64::from(steps)).round() as i32;
            let (ddx, ddy) = (px - self.cursor.0, py - self.cursor.1);
            self.out.push(Delivery::Mouse { report: HidMouseReport::new(BUTTON_LEFT, ddx as i8, ddy as i8) });
            self.cursor = (px, py);
        }
        self.out.push(Delivery::Mouse { report: HidMouseReport::new(0, 0, 0) });
    }
}

/// Deliveries for `cmd` on `backend`, plus the cursor position afterwards.
pub fn plan(cmd: &InputCommand, backend: Backend, sink: &dyn InputSink, cursor: HidCursor) -> Result<(Vec<Delivery>, HidCursor), DispatchError> {
    cmd.validate()?;
    check_points(cmd, sink.screen())?;
    if let InputCommand::LaunchApp { app } = cmd {
        if !sink.app_installed(app) {
            return Err(DeviceError::AppNotInstalled(app.clone()).into());
        }
    }
    if backend.is_adb() {
        let out = match cmd {
            InputCommand::Wait { ms } => vec![Delivery::Wait { ms: *ms }],
            // the input tool returns once the gesture has played out
            InputCommand::Swipe { duration_ms, .. } => {
                vec![Delivery::Wait { ms: *duration_ms }, Delivery::Shell { line: to_adb(cmd)? }]
            }
            _ => vec![Delivery::Shell { line: to_adb(cmd)? }],
        };
        return Ok((out, cursor));
    }
    let screen = sink.screen();
    let (out, cursor) = match cmd {
        InputCommand::Wait { ms } => (vec![Delivery::Wait { ms: *ms }], cursor),
        InputCommand::Text { text } => (keyboard(encode_keystrokes(text)?).collect(), cursor),
        InputCommand::Key { key } => (keyboard(encode_key(*key)).collect(), cursor),
        InputCommand::Tap { x, y } => {
            let mut p = PointerPlan::new(cursor, screen);
            p.move_to(*x, *y, 0);
            p.click();
            (p.out, HidCursor(Some(p.cursor)))
        }
        InputCommand::Swipe { x1, y1, x2, y2, duration_ms } => {
            let mut p = PointerPlan::new(cursor, screen);
            p.move_to(*x1, *y1, 0);
            p.drag((*x2, *y2), *duration_ms);
            (p.out, HidCursor(Some(p.cursor)))
        }
        InputCommand::LaunchApp { app } => {
            let (x, y) = sink.icon_center(app).ok_or_else(|| DeviceError::AppNotInstalled(app.clone()))?;
            let mut out: Vec<Delivery> = keyboard(encode_key(Key::Home)).collect();
            let mut p = PointerPlan::new(cursor, screen);
            p.move_to(x, y, 0);
            p.click();
            out.extend(p.out);
            (out, HidCursor(Some(p.cursor)))
        }
    };
    Ok((out, cursor))
}

/// Plans and delivers `cmd`. On a mid-command failure the HID cursor becomes unknown
/// and the error carries the delivered prefix.
pub fn dispatch(cmd: &InputCommand, backend: Backend, sink: &mut dyn InputSink, cursor: &mut HidCursor) -> Result<DispatchReport, DispatchError> {
    let (deliveries, after) = plan(cmd, backend, &*sink, *cursor)?;
    let total = deliveries.len();
    let mut acks = Vec::with_capacity(total);
    // waits land at offsets from the start so chunking cannot shift the clock
    let start = sink.now();
    let mut waited_ms = 0u64;
    for (i, d) in deliveries.iter().enumerate() {
        let outcome = match d {
            Delivery::Wait { ms } => {
                waited_ms += u64::from(*ms);
                sink.wait_until(backend, start + waited_ms as f64 / 1000.0).map(|()| String::new())
            }
            _ => sink.deliver(backend, d),
        };
        match outcome {
            Ok(ack) => acks.push(ack),
            Err(e) => {
                if backend == Backend::BluetoothHid && i > 0 {
                    *cursor = HidCursor(None);
                }
                if i == 0 {
                    return Err(e);
                }
                return Err(DispatchError::Partial { delivered: i, total, reason: e.to_string(), acks });
            }
        }
    }
    *cursor = after;
    Ok(DispatchReport { backend, deliveries: total, acks })
}

/// Delivers straight into a device, every transport always up.
impl InputSink for SimDevice {
    fn screen(&self) -> (u32, u32) {
        SimDevice::screen(self)
    }

    fn icon_center(&self, app: &str) -> Option<(u32, u32)> {
        SimDevice::icon_center(self, app)
    }

    fn app_installed(&self, app: &str) -> bool {
        self.state().apps.contains_key(app)
    }

    fn deliver(&mut self, _backend: Backend, delivery: &Delivery) -> Result<String, DispatchError> {
        deliver_to_device(self, delivery)
    }

    fn now(&self) -> f64 {
        SimDevice::now(self)
    }

    fn wait_until(&mut self, _backend: Backend, t: f64) -> Result<(), DispatchError> {
        Ok(self.advance_to(t)?)
    }
}

/// Device-side handling of one delivery.
pub fn deliver_to_device(device: &mut SimDevice, delivery: &Delivery) -> Result<String, DispatchError> {
    Ok(match delivery {
        Delivery::Shell { line } => device.receive_shell(line)?,
        Delivery::Mouse { report } => serde_json::to_string(&device.receive_hid_mouse(report)?).unwrap_or_default(),
        Delivery::Keyboard { report } => serde_json::to_string(&device.receive_hid_keyboard(report)?).unwrap_or_default(),
        Delivery::Wait { ms } => {
            device.advance(f64::from(*ms) / 1000.0)?;
            String::new()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{DeviceConfig, Scene};

    fn device() -> SimDevice {
        let mut d = DeviceConfig::new("d1", "J7DUO", 1).with_app("com.example.news", false).with_app("com.brave.browser", true).build().unwrap();
        d.set_scene("com.example.news", Scene::browser(720, 1280)).unwrap();
        d
    }

    #[test]
    fn hid_tap_moves_then_clicks() {
        let d = device();
        let (out, after) = plan(&InputCommand::Tap { x: 300, y: 0 }, Backend::BluetoothHid, &d, HidCursor::homed()).unwrap();
        let bytes: Vec<[u8; 3]> = out
            .iter()
            .map(|d| match d {
                Delivery::Mouse { report } => report.to_bytes(),
                other => panic!("unexpected {other:?}"),
            })
            .collect();
        assert_eq!(bytes, vec![[0, 127, 0], [0, 127, 0], [0, 46, 0], [1, 0, 0], [0, 0, 0]]);
        assert_eq!(after, HidCursor(Some((300, 0))));
    }

    #[test]
    fn hid_swipe_timing_matches_duration() {
        let d = device();
        let cmd = InputCommand::Swipe { x1: 100, y1: 1000, x2: 100, y2: 200, duration_ms: 301 };
        let (out, _) = plan(&cmd, Backend::BluetoothHid, &d, HidCursor::homed()).unwrap();
        let waited: u32 = out.iter().map(|d| if let Delivery::Wait { ms } = d { *ms } else { 0 }).sum();
        assert_eq!(waited, 301);
    }

    #[test]
    fn chunked_waits_end_on_the_same_clock() {
        let cmd = InputCommand::Swipe { x1: 0, y1: 0, x2: 0, y2: 128, duration_ms: 74 };
        let (mut a, mut h) = (device(), device());
        dispatch(&cmd, Backend::UsbAdb, &mut a, &mut HidCursor(None)).unwrap();
        dispatch(&cmd, Backend::BluetoothHid, &mut h, &mut HidCursor(None)).unwrap();
        assert_eq!(a.now().to_bits(), h.now().to_bits());
        assert_eq!(a.state(), h.state());
    }

    #[test]
    fn launch_via_hid_and_adb_agree() {
        let cmd = InputCommand::LaunchApp { app: "com.brave.browser".into() };
        let mut a = device();
        let mut b = device();
        dispatch(&cmd, Backend::UsbAdb, &mut a, &mut HidCursor::homed()).unwrap();
        dispatch(&cmd, Backend::BluetoothHid, &mut b, &mut HidCursor::homed()).unwrap();
        assert_eq!(a.state().foreground.as_deref(), Some("com.brave.browser"));
        assert_eq!(a.state(), b.state());
    }

    #[test]
    fn unknown_cursor_is_rehomed() {
        let mut d = device();
        let mut cursor = HidCursor(None);
        dispatch(&InputCommand::Tap { x: 10, y: 10 }, Backend::BluetoothHid, &mut d, &mut cursor).unwrap();
        assert_eq!(d.hid_host().cursor, (10, 10));
        assert_eq!(cursor, HidCursor(Some((10, 10))));
    }

    #[test]
    fn bounds_checked_before_delivery() {
        let mut d = device();
        let err = dispatch(&InputCommand::Tap { x: 720, y: 0 }, Backend::WifiAdb, &mut d, &mut HidCursor::homed()).unwrap_err();
        assert!(matches!(err, DispatchError::Device(DeviceError::OutOfBounds { .. })));
    }
}
