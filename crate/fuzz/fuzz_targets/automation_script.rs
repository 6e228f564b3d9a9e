#![no_main]

use libfuzzer_sys::fuzz_target;
use pb_core::replay::AutomationScript;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(script) = AutomationScript::from_jsonl(text) else { return };
    let _ = script.validate((1080, 1920));
    let _ = script.total_duration_ms();
    assert_eq!(AutomationScript::from_jsonl(&script.to_jsonl()).unwrap(), script);
});
