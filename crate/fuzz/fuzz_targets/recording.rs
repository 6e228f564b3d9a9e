#![no_main]

use libfuzzer_sys::fuzz_target;
use pb_core::replay::{compile, RecordedEvent, RecordingSession, Thresholds};

fuzz_target!(|data: &[u8]| {
    let Ok(events) = serde_json::from_slice::<Vec<RecordedEvent>>(data) else { return };
    let mut session = RecordingSession::new("fuzz", "d1", (1080, 1920));
    for e in events {
        let _ = session.push(e);
    }
    let out = compile(&session, Thresholds::default());
    assert!(out.script.validate(session.device_size).is_ok());
});
