#![no_main]

use libfuzzer_sys::fuzz_target;
use pb_core::automation::adb::parse_shell;
use pb_core::automation::Key;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else { return };
    let _ = parse_shell(line);
    let _ = Key::from_name(line);
});
