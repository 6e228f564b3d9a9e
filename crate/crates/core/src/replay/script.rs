use serde::{Deserialize, Serialize};

use super::ReplayError;
use crate::automation::{dispatch, Backend, Delivery, DispatchError, HidCursor, InputCommand, InputSink};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptStep {
    pub delay_ms: u64,
    pub command: InputCommand,
}

/// Ordered `(delay, command)` pairs in device coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AutomationScript {
    pub steps: Vec<ScriptStep>,
}

impl AutomationScript {
    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Delays plus gesture and wait durations.
    pub fn total_duration_ms(&self) -> u64 {
        self.steps.iter().map(|s| s.delay_ms + u64::from(s.command.duration_ms())).sum()
    }

    pub fn validate(&self, device_size: (u32, u32)) -> Result<(), String> {
        for (i, step) in self.steps.iter().enumerate() {
            step.command.validate().map_err(|e| format!("step {i}: {e}"))?;
            for (x, y) in step.command.points() {
                if x >= device_size.0 || y >= device_size.1 {
                    return Err(format!("step {i}: ({x}, {y}) outside the {}x{} screen", device_size.0, device_size.1));
                }
            }
        }
        Ok(())
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for step in &self.steps {
            out.push_str(&serde_json::to_string(step).expect("script steps serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, ReplayError> {
        let mut steps = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let step: ScriptStep = serde_json::from_str(line).map_err(|e| ReplayError::Script { line: n + 1, reason: e.to_string() })?;
            step.command.validate().map_err(|e| ReplayError::Script { line: n + 1, reason: e.to_string() })?;
            steps.push(step);
        }
        Ok(Self { steps })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayLogEntry {
    pub step: usize,
    pub command: InputCommand,
    pub backend: Backend,
    pub acks: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReplayLog {
    pub entries: Vec<ReplayLogEntry>,
}

fn wait(sink: &mut dyn InputSink, backend: Backend, mut ms: u64) -> Result<(), DispatchError> {
    while ms > 0 {
        let chunk = ms.min(u64::from(u32::MAX));
        sink.deliver(backend, &Delivery::Wait { ms: chunk as u32 })?;
        ms -= chunk;
    }
    Ok(())
}

/// Plays `script` into `sink`, choosing a backend per command. Stops at the
/// first failure; the error carries the log of completed steps.
pub fn run_script(
    script: &AutomationScript,
    sink: &mut dyn InputSink,
    cursor: &mut HidCursor,
    mut choose: impl FnMut(&dyn InputSink, &InputCommand) -> Result<Backend, DispatchError>,
) -> Result<ReplayLog, ReplayError> {
    let mut log = ReplayLog::default();
    let total = script.steps.len();
    for (i, step) in script.steps.iter().enumerate() {
        let result = choose(&*sink, &step.command).and_then(|backend| {
            wait(sink, backend, step.delay_ms)?;
            dispatch(&step.command, backend, sink, cursor)
        });
        match result {
            Ok(report) => log.entries.push(ReplayLogEntry { step: i, command: step.command.clone(), backend: report.backend, acks: report.acks }),
            Err(source) => return Err(ReplayError::Aborted { delivered: i, total, source, log }),
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automation::Key;

    #[test]
    fn jsonl_round_trip() {
        let script = AutomationScript {
            steps: vec![
                ScriptStep { delay_ms: 0, command: InputCommand::Tap { x: 1, y: 2 } },
                ScriptStep { delay_ms: 120, command: InputCommand::Text { text: "a \"b\"".into() } },
                ScriptStep { delay_ms: 5, command: InputCommand::Key { key: Key::Enter } },
            ],
        };
        let text = script.to_jsonl();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(text.lines().next().unwrap(), r#"{"delay_ms":0,"command":{"type":"tap","x":1,"y":2}}"#);
        assert_eq!(AutomationScript::from_jsonl(&text).unwrap(), script);
    }

    #[test]
    fn bad_lines_are_located() {
        let err = AutomationScript::from_jsonl("{\"delay_ms\":0,\"command\":{\"type\":\"wait\",\"ms\":1}}\nnope\n").unwrap_err();
        assert!(matches!(err, ReplayError::Script { line: 2, .. }));
        let zero = r#"{"delay_ms":0,"command":{"type":"swipe","x1":0,"y1":0,"x2":1,"y2":1,"duration_ms":0}}"#;
        assert!(AutomationScript::from_jsonl(zero).is_err());
    }
}
