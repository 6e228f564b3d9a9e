#![no_main]

use libfuzzer_sys::fuzz_target;
use pb_core::device::DeviceConfigFile;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(file) = DeviceConfigFile::parse(text) {
        let _ = file.build();
    }
});
