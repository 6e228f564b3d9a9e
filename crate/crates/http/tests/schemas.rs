//! Wire shapes the web console depends on. A failure here means the console
//! needs changing too.

use pb_core::access::{DeviceList, JobSpec};
use pb_core::controller::{Controller, InputBatch, StatusDocument};
use pb_core::device::{DeviceConfig, Frame};
use pb_core::replay::{EventKind, RecordedEvent};
use pb_http::server_api::NodeView;
use pb_http::ErrorBody;
use serde_json::{json, Value};

fn keys(v: &Value) -> Vec<&str> {
    let mut k: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    k.sort_unstable();
    k
}

#[test]
fn input_batch() {
    let doc = json!({
        "session_id": "rec-1",
        "events": [
            { "t": 120, "kind": "mouse_down", "position": [10, 20], "view_size": [360, 640] },
            { "t": 180, "kind": "mouse_up", "position": [10, 20], "view_size": [360, 640] },
            { "t": 400, "kind": "key_down", "key": "a", "view_size": [360, 640] }
        ]
    });
    let batch: InputBatch = serde_json::from_value(doc.clone()).unwrap();
    assert_eq!(batch.events[0], RecordedEvent::mouse(120, EventKind::MouseDown, 10, 20, (360, 640)));
    assert_eq!(batch.events[2], RecordedEvent::key(400, EventKind::KeyDown, "a", (360, 640)));
    assert_eq!(serde_json::to_value(&batch).unwrap(), doc);
    let mut extra = doc;
    extra["events"][0]["pressure"] = json!(1);
    assert!(serde_json::from_value::<InputBatch>(extra).is_err());
}

#[test]
fn frame() {
    let doc = json!({ "seq": 4, "width": 1080, "height": 1920, "cells": [0, 255], "bytes": 64 });
    let f: Frame = serde_json::from_value(doc.clone()).unwrap();
    assert_eq!(serde_json::to_value(f).unwrap(), doc);
}

#[test]
fn status_and_device_listing() {
    let d = DeviceConfig::new("d1", "J7DUO", 1).build().unwrap();
    let c = Controller::with_devices("vp1", [d]).unwrap();
    let status = serde_json::to_value(c.status()).unwrap();
    assert_eq!(keys(&status), ["active_job", "clock_s", "devices", "links", "monitor", "node_id", "relay", "session"]);
    assert_eq!(keys(&status["devices"][0]), ["adb_available", "address", "device_id", "os", "screen"]);
    let back: StatusDocument = serde_json::from_value(status.clone()).unwrap();
    assert_eq!(back, c.status());

    let list = serde_json::to_value(DeviceList { devices: c.status().devices, stale: false }).unwrap();
    assert_eq!(keys(&list), ["devices", "stale"]);
}

#[test]
fn node_view_hides_the_credential() {
    let view = json!({
        "id": "vp1", "address": "http://10.0.0.2:8081", "dns_name": "vp1.powerbench.test", "state": "online",
        "last_seen": 12.5, "location": "lab", "labels": ["eu"], "devices": [], "refreshed": true
    });
    let v: NodeView = serde_json::from_value(view.clone()).unwrap();
    assert_eq!(serde_json::to_value(v).unwrap(), view);
}

#[test]
fn job_submission_and_errors() {
    let doc = json!({
        "kind": "experiment",
        "constraints": { "device_id": "d1" },
        "steps": [
            { "op": "node_setup", "device_id": "d1", "options": { "power": true } },
            { "op": "measure", "device_id": "d1", "duration_s": 60.0 },
            { "op": "execute", "device_id": "d1", "command": { "type": "tap", "x": 5, "y": 9 } }
        ],
        "max_duration": 600.0
    });
    let spec: JobSpec = serde_json::from_value(doc).unwrap();
    spec.validate().unwrap();
    assert_eq!(spec.steps[1].op(), "measure");
    let bad = json!({ "kind": "experiment", "steps": [{ "op": "reboot" }], "max_duration": 1.0 });
    assert!(serde_json::from_value::<JobSpec>(bad).is_err());

    let e: ErrorBody = serde_json::from_value(json!({ "error": "not found: job j9", "kind": "not_found" })).unwrap();
    assert_eq!(e.kind, "not_found");
}
