#![no_main]

use libfuzzer_sys::fuzz_target;
use pb_core::automation::hid::{decode_keystrokes, decode_pointer, HidKeyboardReport, HidMouseReport};

fuzz_target!(|data: &[u8]| {
    if let Ok(r) = HidMouseReport::from_bytes(data) {
        assert_eq!(&r.to_bytes()[..], data);
    }
    if let Ok(r) = HidKeyboardReport::from_bytes(data) {
        assert_eq!(&r.to_bytes()[..], data);
    }
    let keys: Vec<HidKeyboardReport> = data.chunks_exact(8).filter_map(|c| HidKeyboardReport::from_bytes(c).ok()).collect();
    let _ = decode_keystrokes(&keys);
    let mice: Vec<HidMouseReport> = data.chunks_exact(3).filter_map(|c| HidMouseReport::from_bytes(c).ok()).collect();
    let _ = decode_pointer(&mice);
});
