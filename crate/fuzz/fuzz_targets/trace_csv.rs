#![no_main]

use libfuzzer_sys::fuzz_target;
use pb_core::trace::{read_csv, write_csv, TraceMeta};

fuzz_target!(|data: &[u8]| {
    let Ok(trace) = read_csv(data, TraceMeta::default(), None) else { return };
    let _ = trace.energy();
    let mut out = Vec::new();
    write_csv(&trace, &mut out).unwrap();
    let again = read_csv(&out[..], TraceMeta::default(), Some(trace.sample_rate())).unwrap();
    assert_eq!(again.len(), trace.len());
});
