//! Action replay: captured console input becomes a device-space automation script.

mod compile;
mod script;
mod store;

pub use self::compile::{compile, CompileOutput, Compiler, Thresholds, Timed};
pub use self::script::{run_script, AutomationScript, ReplayLog, ReplayLogEntry, ScriptStep};
pub use self::store::{RecordingSession, SessionStore};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::automation::DispatchError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    MouseDown,
    MouseUp,
    MouseMove,
    KeyDown,
    KeyUp,
}

impl EventKind {
    pub fn is_mouse(self) -> bool {
        matches!(self, EventKind::MouseDown | EventKind::MouseUp | EventKind::MouseMove)
    }
}

/// One raw input event as the console captured it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordedEvent {
    /// Milliseconds since the session started.
    pub t: u64,
    pub kind: EventKind,
    /// View pixels; present for mouse kinds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<(u32, u32)>,
    /// DOM key name; present for key kinds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    pub view_size: (u32, u32),
}

impl RecordedEvent {
    pub fn mouse(t: u64, kind: EventKind, x: u32, y: u32, view_size: (u32, u32)) -> Self {
        Self { t, kind, position: Some((x, y)), key: None, view_size }
    }

    pub fn key(t: u64, kind: EventKind, key: &str, view_size: (u32, u32)) -> Self {
        Self { t, kind, position: None, key: Some(key.to_string()), view_size }
    }

    pub fn validate(&self) -> Result<(), ReplayError> {
        let (w, h) = self.view_size;
        if w == 0 || h == 0 {
            return Err(ReplayError::InvalidEvent("view size must be positive".into()));
        }
        if self.kind.is_mouse() {
            let (x, y) = self.position.ok_or_else(|| ReplayError::InvalidEvent("mouse event without position".into()))?;
            if x > w || y > h {
                return Err(ReplayError::OutOfView { x, y, w, h });
            }
        } else if self.key.as_deref().is_none_or(str::is_empty) {
            return Err(ReplayError::InvalidEvent("key event without key".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReplayError {
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("session {0:?} is closed")]
    Closed(String),
    #[error("device {0:?} already has an open session")]
    AlreadyRecording(String),
    #[error("position ({x}, {y}) outside the {w}x{h} view")]
    OutOfView { x: u32, y: u32, w: u32, h: u32 },
    #[error("invalid event: {0}")]
    InvalidEvent(String),
    #[error("invalid script line {line}: {reason}")]
    Script { line: usize, reason: String },
    #[error("replay aborted after {delivered} of {total} steps: {source}")]
    Aborted {
        delivered: usize,
        total: usize,
        #[source]
        source: DispatchError,
        log: ReplayLog,
    },
}

/// Maps a view point to device pixels: round half up, then clamp into the screen.
pub fn map_coords(p: (u32, u32), view_size: (u32, u32), device_size: (u32, u32)) -> (u32, u32) {
    (map_axis(p.0, view_size.0, device_size.0), map_axis(p.1, view_size.1, device_size.1))
}

fn map_axis(v: u32, view: u32, device: u32) -> u32 {
    if view == 0 || device == 0 {
        return 0;
    }
    let (v, view, device) = (u64::from(v), u64::from(view), u64::from(device));
    // floor(v * device / view + 1/2) in exact integer arithmetic
    let scaled = (2 * v * device + view) / (2 * view);
    scaled.min(device - 1) as u32
}
