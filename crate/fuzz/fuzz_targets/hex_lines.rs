#![no_main]

use libfuzzer_sys::fuzz_target;
use pb_core::automation::hid::{parse_hex_lines, to_hex_lines};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(lines) = parse_hex_lines(text) else { return };
    // fixed-width rows survive a print and re-parse
    if let Some(mouse) = lines.iter().map(|l| <[u8; 3]>::try_from(&l[..]).ok()).collect::<Option<Vec<_>>>() {
        assert_eq!(parse_hex_lines(&to_hex_lines(mouse)).unwrap(), lines);
    }
});
