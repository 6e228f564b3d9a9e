//! Bluetooth HID combo keyboard/pointer encoding.
//!
//! Reports use the USB HID boot layouts: 3-byte relative mouse reports and
//! 8-byte keyboard reports. The pointer is relative, so a tracked virtual
//! cursor turns absolute targets into bounded deltas.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::command::Key;

/// Device subclass advertised by the combo keyboard/pointing service.
pub const COMBO_SUBCLASS: u8 = 0xC0;

pub const BUTTON_LEFT: u8 = 0x01;
pub const MOD_LEFT_SHIFT: u8 = 0x02;
pub const MOD_LEFT_GUI: u8 = 0x08;
pub const MAX_DELTA: i32 = 127;

const USAGE_ENTER: u8 = 0x28;
const USAGE_ESCAPE: u8 = 0x29;
const USAGE_BACKSPACE: u8 = 0x2A;
const USAGE_TAB: u8 = 0x2B;
const USAGE_SPACE: u8 = 0x2C;
const USAGE_H: u8 = 0x0B;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HidError {
    #[error("character {0:?} has no keycode mapping")]
    Unmappable(char),
    #[error("unmappable characters: {0:?}")]
    UnmappableText(Vec<char>),
    #[error("mouse delta -128 is outside the report range")]
    DeltaRange,
    #[error("keyboard report reserved byte is {0:#04x}, expected 0x00")]
    Reserved(u8),
    #[error("keyboard report repeats keycode {0:#04x}")]
    DuplicateKey(u8),
    #[error("report must be {expected} bytes, got {got}")]
    Length { expected: usize, got: usize },
    #[error("keycode {0:#04x} with modifiers {1:#04x} does not decode to text")]
    NotText(u8, u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HidMouseReport {
    pub buttons: u8,
    pub dx: i8,
    pub dy: i8,
}

impl HidMouseReport {
    pub const LEN: usize = 3;

    pub fn new(buttons: u8, dx: i8, dy: i8) -> Self {
        Self { buttons, dx, dy }
    }

    pub fn to_bytes(self) -> [u8; 3] {
        [self.buttons, self.dx as u8, self.dy as u8]
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, HidError> {
        if bytes.len() != Self::LEN {
            return Err(HidError::Length { expected: Self::LEN, got: bytes.len() });
        }
        let report = Self { buttons: bytes[0], dx: bytes[1] as i8, dy: bytes[2] as i8 };
        report.validate()?;
        Ok(report)
    }

    pub fn validate(&self) -> Result<(), HidError> {
        if self.dx == i8::MIN || self.dy == i8::MIN {
            return Err(HidError::DeltaRange);
        }
        Ok(())
    }

    pub fn left_pressed(&self) -> bool {
        self.buttons & BUTTON_LEFT != 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct HidKeyboardReport {
    pub modifiers: u8,
    pub keys: [u8; 6],
}

impl HidKeyboardReport {
    pub const LEN: usize = 8;

    pub fn release() -> Self {
        Self::default()
    }

    pub fn press(modifiers: u8, usage: u8) -> Self {
        Self { modifiers, keys: [usage, 0, 0, 0, 0, 0] }
    }

    pub fn to_bytes(self) -> [u8; 8] {
        let k = self.keys;
        [self.modifiers, 0x00, k[0], k[1], k[2], k[3], k[4], k[5]]
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, HidError> {
        if bytes.len() != Self::LEN {
            return Err(HidError::Length { expected: Self::LEN, got: bytes.len() });
        }
        if bytes[1] != 0 {
            return Err(HidError::Reserved(bytes[1]));
        }
        let mut keys = [0u8; 6];
        keys.copy_from_slice(&bytes[2..]);
        let report = Self { modifiers: bytes[0], keys };
        report.validate()?;
        Ok(report)
    }

    pub fn validate(&self) -> Result<(), HidError> {
        for (i, &k) in self.keys.iter().enumerate() {
            if k != 0 && self.keys[..i].contains(&k) {
                return Err(HidError::DuplicateKey(k));
            }
        }
        Ok(())
    }

    pub fn is_release(&self) -> bool {
        self.modifiers == 0 && self.keys.iter().all(|&k| k == 0)
    }

    pub fn pressed(&self) -> impl Iterator<Item = u8> + '_ {
        self.keys.iter().copied().filter(|&k| k != 0)
    }
}

/// Keycode and shift state for a character, `None` outside printable ASCII plus enter/tab.
pub fn char_to_usage(c: char) -> Option<(u8, bool)> {
    let usage = match c {
        'a'..='z' => (0x04 + (c as u8 - b'a'), false),
        'A'..='Z' => (0x04 + (c as u8 - b'A'), true),
        '1'..='9' => (0x1E + (c as u8 - b'1'), false),
        '0' => (0x27, false),
        '\n' => (USAGE_ENTER, false),
        '\t' => (USAGE_TAB, false),
        ' ' => (USAGE_SPACE, false),
        '!' => (0x1E, true),
        '@' => (0x1F, true),
        '#' => (0x20, true),
        '$' => (0x21, true),
        '%' => (0x22, true),
        '^' => (0x23, true),
        '&' => (0x24, true),
        '*' => (0x25, true),
        '(' => (0x26, true),
        ')' => (0x27, true),
        '-' => (0x2D, false),
        '_' => (0x2D, true),
        '=' => (0x2E, false),
        '+' => (0x2E, true),
        '[' => (0x2F, false),
        '{' => (0x2F, true),
        ']' => (0x30, false),
        '}' => (0x30, true),
        '\\' => (0x31, false),
        '|' => (0x31, true),
        ';' => (0x33, false),
        ':' => (0x33, true),
        '\'' => (0x34, false),
        '"' => (0x34, true),
        '`' => (0x35, false),
        '~' => (0x35, true),
        ',' => (0x36, false),
        '<' => (0x36, true),
        '.' => (0x37, false),
        '>' => (0x37, true),
        '/' => (0x38, false),
        '?' => (0x38, true),
        _ => return None,
    };
    Some(usage)
}

/// Inverse of [`char_to_usage`].
pub fn usage_to_char(usage: u8, shift: bool) -> Option<char> {
    let c = match (usage, shift) {
        (0x04..=0x1D, false) => (b'a' + usage - 0x04) as char,
        (0x04..=0x1D, true) => (b'A' + usage - 0x04) as char,
        (0x1E..=0x26, false) => (b'1' + usage - 0x1E) as char,
        (0x27, false) => '0',
        (USAGE_ENTER, false) => '\n',
        (USAGE_TAB, false) => '\t',
        (USAGE_SPACE, false) => ' ',
        (0x1E, true) => '!',
        (0x1F, true) => '@',
        (0x20, true) => '#',
        (0x21, true) => '$',
        (0x22, true) => '%',
        (0x23, true) => '^',
        (0x24, true) => '&',
        (0x25, true) => '*',
        (0x26, true) => '(',
        (0x27, true) => ')',
        (0x2D, false) => '-',
        (0x2D, true) => '_',
        (0x2E, false) => '=',
        (0x2E, true) => '+',
        (0x2F, false) => '[',
        (0x2F, true) => '{',
        (0x30, false) => ']',
        (0x30, true) => '}',
        (0x31, false) => '\\',
        (0x31, true) => '|',
        (0x33, false) => ';',
        (0x33, true) => ':',
        (0x34, false) => '\'',
        (0x34, true) => '"',
        (0x35, false) => '`',
        (0x35, true) => '~',
        (0x36, false) => ',',
        (0x36, true) => '<',
        (0x37, false) => '.',
        (0x37, true) => '>',
        (0x38, false) => '/',
        (0x38, true) => '?',
        _ => return None,
    };
    Some(c)
}

/// One press report and one all-zero release report per character.
pub fn encode_keystrokes(text: &str) -> Result<Vec<HidKeyboardReport>, HidError> {
    let bad: Vec<char> = text.chars().filter(|&c| char_to_usage(c).is_none()).collect();
    if !bad.is_empty() {
        return Err(HidError::UnmappableText(bad));
    }
    let mut reports = Vec::with_capacity(text.len() * 2);
    for c in text.chars() {
        let (usage, shift) = char_to_usage(c).ok_or(HidError::Unmappable(c))?;
        let modifiers = if shift { MOD_LEFT_SHIFT } else { 0 };
        reports.push(HidKeyboardReport::press(modifiers, usage));
        reports.push(HidKeyboardReport::release());
    }
    Ok(reports)
}

pub fn encode_key(key: Key) -> [HidKeyboardReport; 2] {
    let press = match key {
        Key::Enter => HidKeyboardReport::press(0, USAGE_ENTER),
        Key::Tab => HidKeyboardReport::press(0, USAGE_TAB),
        Key::Backspace => HidKeyboardReport::press(0, USAGE_BACKSPACE),
        Key::Escape => HidKeyboardReport::press(0, USAGE_ESCAPE),
        // GUI+H: the home-screen shortcut for a hardware keyboard
        Key::Home => HidKeyboardReport::press(MOD_LEFT_GUI, USAGE_H),
    };
    [press, HidKeyboardReport::release()]
}

/// What a newly pressed keycode means to the host.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyStroke {
    Char(char),
    Key(Key),
}

pub fn stroke_for(usage: u8, modifiers: u8) -> Option<KeyStroke> {
    if modifiers & MOD_LEFT_GUI != 0 {
        return (usage == USAGE_H).then_some(KeyStroke::Key(Key::Home));
    }
    match usage {
        USAGE_ENTER => Some(KeyStroke::Key(Key::Enter)),
        USAGE_TAB => Some(KeyStroke::Key(Key::Tab)),
        USAGE_BACKSPACE => Some(KeyStroke::Key(Key::Backspace)),
        USAGE_ESCAPE => Some(KeyStroke::Key(Key::Escape)),
        _ => usage_to_char(usage, modifiers & MOD_LEFT_SHIFT != 0).map(KeyStroke::Char),
    }
}

/// Tracks the previous keyboard report so only newly pressed keys count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyboardDecoder {
    previous: HidKeyboardReport,
}

impl KeyboardDecoder {
    pub fn feed(&mut self, report: &HidKeyboardReport) -> Vec<KeyStroke> {
        let strokes = report
            .pressed()
            .filter(|k| !self.previous.keys.contains(k))
            .filter_map(|k| stroke_for(k, report.modifiers))
            .collect();
        self.previous = *report;
        strokes
    }
}

/// Reconstructs text from keystroke reports. Enter and Tab come back as `\n` and `\t`.
pub fn decode_keystrokes(reports: &[HidKeyboardReport]) -> Result<String, HidError> {
    let mut decoder = KeyboardDecoder::default();
    let mut out = String::new();
    for report in reports {
        report.validate()?;
        let modifiers = report.modifiers;
        for usage in report.pressed().filter(|k| !decoder.previous.keys.contains(k)).collect::<Vec<_>>() {
            let shift = modifiers & MOD_LEFT_SHIFT != 0;
            let c = usage_to_char(usage, shift).ok_or(HidError::NotText(usage, modifiers))?;
            if modifiers & !MOD_LEFT_SHIFT != 0 {
                return Err(HidError::NotText(usage, modifiers));
            }
            out.push(c);
        }
        decoder.previous = *report;
    }
    Ok(out)
}

/// Splits a relative displacement into reports with `|dx|, |dy| <= 127`.
/// The deltas sum to exactly `(dx, dy)`.
pub fn encode_move(dx: i32, dy: i32, buttons: u8) -> Vec<HidMouseReport> {
    let (mut rx, mut ry) = (dx, dy);
    let mut reports = Vec::new();
    while rx != 0 || ry != 0 {
        let sx = rx.clamp(-MAX_DELTA, MAX_DELTA);
        let sy = ry.clamp(-MAX_DELTA, MAX_DELTA);
        reports.push(HidMouseReport::new(buttons, sx as i8, sy as i8));
        rx -= sx;
        ry -= sy;
    }
    reports
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PointerOp {
    MoveTo { x: i32, y: i32 },
    Press,
    Release,
    Click,
}

/// Encodes a pointer path from the tracked `cursor`, updating it in place.
pub fn encode_pointer(cursor: &mut (i32, i32), ops: &[PointerOp]) -> Vec<HidMouseReport> {
    let mut buttons = 0u8;
    let mut reports = Vec::new();
    for op in ops {
        match *op {
            PointerOp::MoveTo { x, y } => {
                reports.extend(encode_move(x - cursor.0, y - cursor.1, buttons));
                *cursor = (x, y);
            }
            PointerOp::Press => {
                buttons |= BUTTON_LEFT;
                reports.push(HidMouseReport::new(buttons, 0, 0));
            }
            PointerOp::Release => {
                buttons &= !BUTTON_LEFT;
                reports.push(HidMouseReport::new(buttons, 0, 0));
            }
            PointerOp::Click => {
                reports.push(HidMouseReport::new(buttons | BUTTON_LEFT, 0, 0));
                reports.push(HidMouseReport::new(buttons & !BUTTON_LEFT, 0, 0));
            }
        }
    }
    reports
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PointerSummary {
    pub dx: i64,
    pub dy: i64,
    pub presses: usize,
    pub releases: usize,
}

/// Integrates deltas and counts left-button transitions.
pub fn decode_pointer(reports: &[HidMouseReport]) -> PointerSummary {
    let mut summary = PointerSummary::default();
    let mut down = false;
    for r in reports {
        summary.dx += r.dx as i64;
        summary.dy += r.dy as i64;
        match (down, r.left_pressed()) {
            (false, true) => summary.presses += 1,
            (true, false) => summary.releases += 1,
            _ => {}
        }
        down = r.left_pressed();
    }
    summary
}

/// Report map of the combo service: keyboard on report id 1, mouse on id 2.
pub const COMBO_REPORT_MAP: &[u8] = &[
    // keyboard
    0x05, 0x01, 0x09, 0x06, 0xA1, 0x01, 0x85, 0x01, //
    0x05, 0x07, 0x19, 0xE0, 0x29, 0xE7, 0x15, 0x00, 0x25, 0x01, 0x75, 0x01, 0x95, 0x08, 0x81, 0x02, //
    0x95, 0x01, 0x75, 0x08, 0x81, 0x01, //
    0x95, 0x06, 0x75, 0x08, 0x15, 0x00, 0x25, 0x65, 0x05, 0x07, 0x19, 0x00, 0x29, 0x65, 0x81, 0x00, //
    0xC0, //
    // mouse
    0x05, 0x01, 0x09, 0x02, 0xA1, 0x01, 0x85, 0x02, 0x09, 0x01, 0xA1, 0x00, //
    0x05, 0x09, 0x19, 0x01, 0x29, 0x03, 0x15, 0x00, 0x25, 0x01, 0x95, 0x03, 0x75, 0x01, 0x81, 0x02, //
    0x95, 0x01, 0x75, 0x05, 0x81, 0x01, //
    0x05, 0x01, 0x09, 0x30, 0x09, 0x31, 0x15, 0x81, 0x25, 0x7F, 0x75, 0x08, 0x95, 0x02, 0x81, 0x06, //
    0xC0, 0xC0,
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HidServiceDescriptor {
    pub subclass: u8,
    pub report_map: Vec<u8>,
}

impl HidServiceDescriptor {
    pub fn combo() -> Self {
        Self { subclass: COMBO_SUBCLASS, report_map: COMBO_REPORT_MAP.to_vec() }
    }

    /// Report ids declared in the map, in order.
    pub fn report_ids(&self) -> Vec<u8> {
        let map = &self.report_map;
        let mut ids = Vec::new();
        let mut i = 0;
        while i < map.len() {
            let prefix = map[i];
            let size = match prefix & 0x03 {
                3 => 4,
                n => n as usize,
            };
            if prefix == 0x85 && i + 1 < map.len() {
                ids.push(map[i + 1]);
            }
            i += 1 + size;
        }
        ids
    }
}

/// Space-separated lowercase hex, one report per line; the golden-file format.
pub fn to_hex_lines<const N: usize>(reports: impl IntoIterator<Item = [u8; N]>) -> String {
    let mut out = String::new();
    for bytes in reports {
        let line: Vec<String> = bytes.iter().map(|b| format!("{b:02x}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Parses golden-file hex lines. Blank lines and `#` comments are skipped.
pub fn parse_hex_lines(text: &str) -> Result<Vec<Vec<u8>>, String> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bytes = line
            .split_whitespace()
            .map(|tok| u8::from_str_radix(tok, 16).map_err(|e| format!("line {}: {tok:?}: {e}", n + 1)))
            .collect::<Result<Vec<u8>, String>>()?;
        out.push(bytes);
    }
    Ok(out)
}

impl fmt::Display for HidMouseReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:#04x},{},{})", self.buttons, self.dx, self.dy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_displacement_no_reports() {
        let mut cursor = (10, 10);
        assert!(encode_pointer(&mut cursor, &[PointerOp::MoveTo { x: 10, y: 10 }]).is_empty());
    }

    #[test]
    fn chunks_300_pixels() {
        let mut cursor = (0, 0);
        let reports = encode_pointer(&mut cursor, &[PointerOp::MoveTo { x: 300, y: 0 }, PointerOp::Click]);
        let expected = vec![
            HidMouseReport::new(0, 127, 0),
            HidMouseReport::new(0, 127, 0),
            HidMouseReport::new(0, 46, 0),
            HidMouseReport::new(1, 0, 0),
            HidMouseReport::new(0, 0, 0),
        ];
        assert_eq!(reports, expected);
        assert_eq!(cursor, (300, 0));
    }

    #[test]
    fn click_in_place() {
        let mut cursor = (5, 5);
        let reports = encode_pointer(&mut cursor, &[PointerOp::Click]);
        assert_eq!(reports.iter().map(|r| r.to_bytes()).collect::<Vec<_>>(), vec![[1, 0, 0], [0, 0, 0]]);
    }

    #[test]
    fn keystroke_layouts() {
        assert!(encode_keystrokes("").unwrap().is_empty());
        let a = encode_keystrokes("a").unwrap();
        assert_eq!(a[0].to_bytes(), [0x00, 0x00, 0x04, 0, 0, 0, 0, 0]);
        assert_eq!(a[1].to_bytes(), [0; 8]);
        let upper = encode_keystrokes("A").unwrap();
        assert_eq!(upper[0].to_bytes(), [0x02, 0x00, 0x04, 0, 0, 0, 0, 0]);
        assert_eq!(upper[1].to_bytes(), [0; 8]);
    }

    #[test]
    fn unmappable_chars_are_listed() {
        assert_eq!(encode_keystrokes("ok\u{7f}é"), Err(HidError::UnmappableText(vec!['\u{7f}', 'é'])));
    }

    #[test]
    fn keyboard_report_validation() {
        assert_eq!(HidKeyboardReport::from_bytes(&[0, 1, 0, 0, 0, 0, 0, 0]), Err(HidError::Reserved(1)));
        assert_eq!(HidKeyboardReport::from_bytes(&[0, 0, 4, 4, 0, 0, 0, 0]), Err(HidError::DuplicateKey(4)));
        assert!(HidKeyboardReport::from_bytes(&[0, 0, 4, 5, 0, 0, 0, 0]).is_ok());
        assert_eq!(HidMouseReport::from_bytes(&[0, 0x80, 0]), Err(HidError::DeltaRange));
        assert!(HidMouseReport::from_bytes(&[0, 1]).is_err());
    }

    #[test]
    fn every_mapped_char_round_trips() {
        for b in 0u8..128 {
            let c = b as char;
            if let Some((usage, shift)) = char_to_usage(c) {
                assert_eq!(usage_to_char(usage, shift), Some(c));
            }
        }
    }

    #[test]
    fn home_key_uses_gui_modifier() {
        let [press, release] = encode_key(Key::Home);
        assert_eq!(press.modifiers, MOD_LEFT_GUI);
        assert!(release.is_release());
        let mut dec = KeyboardDecoder::default();
        assert_eq!(dec.feed(&press), vec![KeyStroke::Key(Key::Home)]);
        assert!(dec.feed(&release).is_empty());
    }

    #[test]
    fn descriptor_declares_both_reports() {
        let d = HidServiceDescriptor::combo();
        assert_eq!(d.subclass, 0xC0);
        assert_eq!(d.report_ids(), vec![1, 2]);
    }
}
