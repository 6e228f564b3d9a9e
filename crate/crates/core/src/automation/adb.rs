//! ADB shell command strings for the input tool, and the device-side parser.

use thiserror::Error;

use super::command::{InputCommand, Key};

const LAUNCHER_CATEGORY: &str = "android.intent.category.LAUNCHER";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdbError {
    #[error("text contains characters the input tool cannot carry: {0:?}")]
    Unescapable(Vec<char>),
    #[error("text contains a literal \"%s\", which the input tool turns into a space")]
    AmbiguousPercent,
    #[error("invalid app id {0:?}")]
    BadAppId(String),
    #[error("{0:?} is not a device command")]
    NotDeliverable(String),
    #[error("cannot parse shell command {line:?}: {reason}")]
    Parse { line: String, reason: String },
}

fn keycode(key: Key) -> &'static str {
    match key {
        Key::Enter => "KEYCODE_ENTER",
        Key::Tab => "KEYCODE_TAB",
        Key::Backspace => "KEYCODE_DEL",
        Key::Escape => "KEYCODE_ESCAPE",
        Key::Home => "KEYCODE_HOME",
    }
}

fn key_from_code(code: &str) -> Option<Key> {
    let key = match code {
        "KEYCODE_ENTER" | "66" => Key::Enter,
        "KEYCODE_TAB" | "61" => Key::Tab,
        "KEYCODE_DEL" | "67" => Key::Backspace,
        "KEYCODE_ESCAPE" | "111" => Key::Escape,
        "KEYCODE_HOME" | "3" => Key::Home,
        _ => return None,
    };
    Some(key)
}

fn valid_app_id(app: &str) -> bool {
    !app.is_empty() && app.chars().all(|c| c.is_ascii_alphanumeric() || c == '.' || c == '_')
}

// characters the device shell would otherwise interpret
fn needs_escape(c: char) -> bool {
    matches!(
        c,
        '(' | ')' | '<' | '>' | '|' | ';' | '&' | '*' | '\\' | '~' | '"' | '\'' | '`' | '$' | '?' | '#' | '['
            | ']' | '{' | '}' | '!'
    )
}

/// Escapes text for `input text`: spaces become `%s`, shell metacharacters get a backslash.
pub fn escape_text(text: &str) -> Result<String, AdbError> {
    let bad: Vec<char> = text.chars().filter(|c| !(' '..='~').contains(c)).collect();
    if !bad.is_empty() {
        return Err(AdbError::Unescapable(bad));
    }
    if text.contains("%s") {
        return Err(AdbError::AmbiguousPercent);
    }
    let mut out = String::with_capacity(text.len() + 8);
    for c in text.chars() {
        match c {
            ' ' => out.push_str("%s"),
            c if needs_escape(c) => {
                out.push('\\');
                out.push(c);
            }
            c => out.push(c),
        }
    }
    Ok(out)
}

/// Renders a command in the syntax of the platform `input` tool.
pub fn to_adb(cmd: &InputCommand) -> Result<String, AdbError> {
    Ok(match cmd {
        InputCommand::Tap { x, y } => format!("input tap {x} {y}"),
        InputCommand::Swipe { x1, y1, x2, y2, duration_ms } => {
            format!("input swipe {x1} {y1} {x2} {y2} {duration_ms}")
        }
        InputCommand::Text { text } => format!("input text {}", escape_text(text)?),
        InputCommand::Key { key } => format!("input keyevent {}", keycode(*key)),
        InputCommand::LaunchApp { app } => {
            if !valid_app_id(app) {
                return Err(AdbError::BadAppId(app.clone()));
            }
            format!("monkey -p {app} -c {LAUNCHER_CATEGORY} 1")
        }
        InputCommand::Wait { .. } => return Err(AdbError::NotDeliverable("wait".into())),
    })
}

/// A shell line as the simulated device understands it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ShellCommand {
    Input(InputCommand),
    Dumpsys(String),
    Logcat,
    Other(String),
}

/// Splits on unescaped whitespace, resolving backslash escapes.
fn tokenize(line: &str) -> Result<Vec<String>, String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut in_token = false;
    let mut chars = line.chars();
    while let Some(c) = chars.next() {
        match c {
            '\\' => {
                let next = chars.next().ok_or("dangling backslash")?;
                current.push(next);
                in_token = true;
            }
            c if c.is_whitespace() => {
                if in_token {
                    tokens.push(std::mem::take(&mut current));
                    in_token = false;
                }
            }
            c => {
                current.push(c);
                in_token = true;
            }
        }
    }
    if in_token {
        tokens.push(current);
    }
    Ok(tokens)
}

fn parse_u32(tok: &str) -> Result<u32, String> {
    tok.parse::<u32>().map_err(|_| format!("expected a non-negative integer, got {tok:?}"))
}

/// Parses a shell line sent over ADB.
pub fn parse_shell(line: &str) -> Result<ShellCommand, AdbError> {
    let err = |reason: String| AdbError::Parse { line: line.to_string(), reason };
    let tokens = tokenize(line).map_err(|r| err(r.to_string()))?;
    let words: Vec<&str> = tokens.iter().map(String::as_str).collect();
    let cmd = match words.as_slice() {
        [] => return Err(err("empty command".into())),
        ["input", "tap", x, y] => InputCommand::Tap { x: parse_u32(x).map_err(err)?, y: parse_u32(y).map_err(err)? },
        ["input", "swipe", x1, y1, x2, y2, rest @ ..] if rest.len() <= 1 => {
            let duration_ms = match rest {
                [d] => parse_u32(d).map_err(err)?,
                _ => 300,
            };
            if duration_ms == 0 {
                return Err(err("swipe duration must be positive".into()));
            }
            InputCommand::Swipe {
                x1: parse_u32(x1).map_err(err)?,
                y1: parse_u32(y1).map_err(err)?,
                x2: parse_u32(x2).map_err(err)?,
                y2: parse_u32(y2).map_err(err)?,
                duration_ms,
            }
        }
        ["input", "text", _, ..] => {
            // the escaped text is a single token; spaces travel as %s
            let raw = line
                .trim_start()
                .strip_prefix("input")
                .map(str::trim_start)
                .and_then(|r| r.strip_prefix("text"))
                .map(str::trim_start)
                .ok_or_else(|| err("expected literal `input text`".into()))?;
            let unescaped = tokenize(raw).map_err(|r| err(r.to_string()))?;
            if unescaped.len() != 1 {
                return Err(err("text must be a single escaped token".into()));
            }
            InputCommand::Text { text: unescaped[0].replace("%s", " ") }
        }
        ["input", "keyevent", code] => {
            InputCommand::Key { key: key_from_code(code).ok_or_else(|| err(format!("unknown keycode {code}")))? }
        }
        ["monkey", "-p", app, "-c", category, "1"] if *category == LAUNCHER_CATEGORY => {
            if !valid_app_id(app) {
                return Err(AdbError::BadAppId(app.to_string()));
            }
            InputCommand::LaunchApp { app: app.to_string() }
        }
        ["input", ..] => return Err(err("unsupported input subcommand".into())),
        ["dumpsys", service] => return Ok(ShellCommand::Dumpsys(service.to_string())),
        ["logcat", ..] => return Ok(ShellCommand::Logcat),
        _ => return Ok(ShellCommand::Other(line.to_string())),
    };
    Ok(ShellCommand::Input(cmd))
}
