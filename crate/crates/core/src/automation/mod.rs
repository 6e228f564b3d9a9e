//! One input vocabulary, three transports.

pub mod adb;
pub mod backend;
pub mod command;
pub mod dispatch;
pub mod hid;

pub use self::backend::{preference, select_backend, Backend, LinkState, RoutingError};
pub use self::command::{CommandError, InputCommand, Key};
pub use self::dispatch::{dispatch, plan, Delivery, DispatchError, DispatchReport, HidCursor, InputSink};
