#![no_main]

use libfuzzer_sys::fuzz_target;
use pb_core::access::{Event, JobSpec};
use pb_core::controller::{InputBatch, PipelineStep};

fuzz_target!(|data: &[u8]| {
    if let Ok(spec) = serde_json::from_slice::<JobSpec>(data) {
        let _ = spec.validate();
    }
    let _ = serde_json::from_slice::<PipelineStep>(data);
    let _ = serde_json::from_slice::<InputBatch>(data);
    let _ = serde_json::from_slice::<Event>(data);
});
