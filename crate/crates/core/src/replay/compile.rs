use serde::{Deserialize, Serialize};

use super::{map_coords, EventKind, RecordedEvent, RecordingSession};
use crate::automation::{InputCommand, Key};
use crate::replay::{AutomationScript, ScriptStep};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Largest down/up displacement, device pixels, still read as a tap.
    pub tap_max_distance_px: f64,
    pub tap_max_duration_ms: u64,
    /// Keystrokes further apart than this start a new text run.
    pub text_gap_ms: u64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { tap_max_distance_px: 20.0, tap_max_duration_ms: 250, text_gap_ms: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct TextRun {
    start: u64,
    end: u64,
    text: String,
}

/// A recognised command and the recording time it starts at.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timed {
    pub start_ms: u64,
    pub command: InputCommand,
}

/// Incremental gesture recogniser. In live mode keystrokes are emitted one
/// by one as they arrive instead of being coalesced.
#[derive(Debug, Clone)]
pub struct Compiler {
    thresholds: Thresholds,
    device_size: (u32, u32),
    coalesce_text: bool,
    down: Option<(u64, (u32, u32))>,
    text: Option<TextRun>,
    warnings: Vec<String>,
}

fn char_for_key(name: &str) -> Option<char> {
    if name == "Spacebar" {
        return Some(' ');
    }
    let mut chars = name.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if (' '..='~').contains(&c) => Some(c),
        _ => None,
    }
}

impl Compiler {
    pub fn new(device_size: (u32, u32), thresholds: Thresholds) -> Self {
        Self { thresholds, device_size, coalesce_text: true, down: None, text: None, warnings: Vec::new() }
    }

    pub fn live(device_size: (u32, u32), thresholds: Thresholds) -> Self {
        Self { coalesce_text: false, ..Self::new(device_size, thresholds) }
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    fn flush_text(&mut self, out: &mut Vec<Timed>) {
        if let Some(run) = self.text.take() {
            out.push(Timed { start_ms: run.start, command: InputCommand::Text { text: run.text } });
        }
    }

    pub fn feed(&mut self, event: &RecordedEvent) -> Vec<Timed> {
        let mut out = Vec::new();
        match event.kind {
            EventKind::MouseDown | EventKind::MouseMove | EventKind::MouseUp => {
                self.flush_text(&mut out);
                let Some(pos) = event.position else { return out };
                let mapped = map_coords(pos, event.view_size, self.device_size);
                match event.kind {
                    EventKind::MouseDown => {
                        if let Some((t, _)) = self.down.replace((event.t, mapped)) {
                            self.warnings.push(format!("mouse_down at {t} ms has no matching mouse_up; dropped"));
                        }
                    }
                    EventKind::MouseUp => match self.down.take() {
                        Some((t0, a)) => out.push(self.gesture(t0, a, event.t, mapped)),
                        None => self.warnings.push(format!("mouse_up at {} ms without mouse_down; ignored", event.t)),
                    },
                    _ => {}
                }
            }
            EventKind::KeyDown => {
                let name = event.key.as_deref().unwrap_or_default();
                if let Some(c) = char_for_key(name) {
                    if !self.coalesce_text {
                        out.push(Timed { start_ms: event.t, command: InputCommand::Text { text: c.to_string() } });
                        return out;
                    }
                    match self.text.as_mut() {
                        Some(run) if event.t.saturating_sub(run.end) <= self.thresholds.text_gap_ms => {
                            run.text.push(c);
                            run.end = event.t;
                        }
                        _ => {
                            self.flush_text(&mut out);
                            self.text = Some(TextRun { start: event.t, end: event.t, text: c.to_string() });
                        }
                    }
                } else if let Some(key) = Key::from_name(name) {
                    self.flush_text(&mut out);
                    out.push(Timed { start_ms: event.t, command: InputCommand::Key { key } });
                }
                // modifier and navigation keys carry no command of their own
            }
            EventKind::KeyUp => {}
        }
        out
    }

    fn gesture(&self, t0: u64, a: (u32, u32), t1: u64, b: (u32, u32)) -> Timed {
        let dx = f64::from(b.0) - f64::from(a.0);
        let dy = f64::from(b.1) - f64::from(a.1);
        let duration = t1.saturating_sub(t0);
        let command = if dx.hypot(dy) < self.thresholds.tap_max_distance_px && duration < self.thresholds.tap_max_duration_ms {
            InputCommand::Tap { x: a.0, y: a.1 }
        } else {
            InputCommand::Swipe { x1: a.0, y1: a.1, x2: b.0, y2: b.1, duration_ms: duration.clamp(1, u64::from(u32::MAX)) as u32 }
        };
        Timed { start_ms: t0, command }
    }

    pub fn finish(&mut self) -> Vec<Timed> {
        let mut out = Vec::new();
        self.flush_text(&mut out);
        if let Some((t, _)) = self.down.take() {
            self.warnings.push(format!("trailing mouse_down at {t} ms has no mouse_up; dropped"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompileOutput {
    pub script: AutomationScript,
    pub warnings: Vec<String>,
}

/// Compiles a session into a script whose delays reproduce the recorded timing.
/// A trailing wait pads the script to the last recorded event.
pub fn compile(session: &RecordingSession, thresholds: Thresholds) -> CompileOutput {
    let mut compiler = Compiler::new(session.device_size, thresholds);
    let mut timed = Vec::new();
    for e in &session.events {
        timed.extend(compiler.feed(e));
    }
    timed.extend(compiler.finish());
    let mut steps = Vec::with_capacity(timed.len() + 1);
    let mut cursor = 0u64;
    for Timed { start_ms, command } in timed {
        let delay = start_ms.saturating_sub(cursor);
        cursor = cursor.max(start_ms) + u64::from(command.duration_ms());
        steps.push(ScriptStep { delay_ms: delay, command });
    }
    if !steps.is_empty() {
        let span = session.span_ms();
        if span > cursor {
            steps.push(ScriptStep { delay_ms: 0, command: InputCommand::Wait { ms: (span - cursor).min(u64::from(u32::MAX)) as u32 } });
        }
    }
    CompileOutput { script: AutomationScript { steps }, warnings: compiler.warnings }
}
