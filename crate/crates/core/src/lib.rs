pub mod access;
pub mod automation;
pub mod calibration;
pub mod controller;
pub mod device;
pub mod replay;
pub mod scenarios;
pub mod trace;
pub mod wpm;
