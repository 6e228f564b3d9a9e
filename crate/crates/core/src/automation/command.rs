use std::fmt;

use serde::{Deserialize, Serialize};

/// Named non-character keys understood by every backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Key {
    Enter,
    Tab,
    Backspace,
    Escape,
    Home,
}

impl Key {
    pub const ALL: [Key; 5] = [Key::Enter, Key::Tab, Key::Backspace, Key::Escape, Key::Home];

    /// Parses the key names a browser reports for keyboard events.
    pub fn from_name(name: &str) -> Option<Key> {
        match name {
            "Enter" | "enter" | "Return" => Some(Key::Enter),
            "Tab" | "tab" => Some(Key::Tab),
            "Backspace" | "backspace" => Some(Key::Backspace),
            "Escape" | "escape" | "Esc" => Some(Key::Escape),
            "Home" | "home" => Some(Key::Home),
            _ => None,
        }
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Key::Enter => "Enter",
            Key::Tab => "Tab",
            Key::Backspace => "Backspace",
            Key::Escape => "Escape",
            Key::Home => "Home",
        };
        f.write_str(name)
    }
}

/// High-level input vocabulary. Coordinates are device pixels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InputCommand {
    Tap { x: u32, y: u32 },
    Swipe { x1: u32, y1: u32, x2: u32, y2: u32, duration_ms: u32 },
    Text { text: String },
    Key { key: Key },
    LaunchApp { app: String },
    Wait { ms: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CommandError {
    #[error("swipe duration must be positive")]
    ZeroDuration,
    #[error("text must be nonempty")]
    EmptyText,
    #[error("app id must be nonempty")]
    EmptyApp,
}

impl InputCommand {
    pub fn validate(&self) -> Result<(), CommandError> {
        match self {
            InputCommand::Swipe { duration_ms: 0, .. } => Err(CommandError::ZeroDuration),
            InputCommand::Text { text } if text.is_empty() => Err(CommandError::EmptyText),
            InputCommand::LaunchApp { app } if app.is_empty() => Err(CommandError::EmptyApp),
            _ => Ok(()),
        }
    }

    /// Time the command occupies once delivered (gestures and waits).
    pub fn duration_ms(&self) -> u32 {
        match self {
            InputCommand::Swipe { duration_ms, .. } => *duration_ms,
            InputCommand::Wait { ms } => *ms,
            _ => 0,
        }
    }

    /// Points the command touches, for bounds checks.
    pub fn points(&self) -> Vec<(u32, u32)> {
        match self {
            InputCommand::Tap { x, y } => vec![(*x, *y)],
            InputCommand::Swipe { x1, y1, x2, y2, .. } => vec![(*x1, *y1), (*x2, *y2)],
            _ => Vec::new(),
        }
    }
}
