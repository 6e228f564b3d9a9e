use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{RecordedEvent, ReplayError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordingSession {
    pub session_id: String,
    pub device_id: String,
    pub device_size: (u32, u32),
    pub events: Vec<RecordedEvent>,
    pub closed: bool,
}

impl RecordingSession {
    pub fn new(session_id: &str, device_id: &str, device_size: (u32, u32)) -> Self {
        Self { session_id: session_id.into(), device_id: device_id.into(), device_size, events: Vec::new(), closed: false }
    }

    /// Appends in arrival order; a timestamp older than its predecessor is raised to it.
    pub fn push(&mut self, mut event: RecordedEvent) -> Result<usize, ReplayError> {
        if self.closed {
            return Err(ReplayError::Closed(self.session_id.clone()));
        }
        event.validate()?;
        if let Some(prev) = self.events.last() {
            event.t = event.t.max(prev.t);
        }
        self.events.push(event);
        Ok(self.events.len())
    }

    /// Last event time, ms.
    pub fn span_ms(&self) -> u64 {
        self.events.last().map_or(0, |e| e.t)
    }
}

/// Open and sealed recording sessions; at most one open session per device.
#[derive(Debug, Clone, Default)]
pub struct SessionStore {
    sessions: BTreeMap<String, RecordingSession>,
    next: u64,
}

impl SessionStore {
    pub fn open(&mut self, device_id: &str, device_size: (u32, u32)) -> Result<String, ReplayError> {
        if self.sessions.values().any(|s| s.device_id == device_id && !s.closed) {
            return Err(ReplayError::AlreadyRecording(device_id.into()));
        }
        self.next += 1;
        let id = format!("rec-{}", self.next);
        self.sessions.insert(id.clone(), RecordingSession::new(&id, device_id, device_size));
        Ok(id)
    }

    pub fn ingest(&mut self, session_id: &str, event: RecordedEvent) -> Result<usize, ReplayError> {
        self.session_mut(session_id)?.push(event)
    }

    /// Ingests a batch in order; stops at the first rejected event.
    pub fn ingest_batch(&mut self, session_id: &str, events: impl IntoIterator<Item = RecordedEvent>) -> Result<usize, ReplayError> {
        let session = self.session_mut(session_id)?;
        let mut count = session.events.len();
        for e in events {
            count = session.push(e)?;
        }
        Ok(count)
    }

    pub fn close(&mut self, session_id: &str) -> Result<&RecordingSession, ReplayError> {
        let s = self.session_mut(session_id)?;
        s.closed = true;
        Ok(s)
    }

    pub fn get(&self, session_id: &str) -> Option<&RecordingSession> {
        self.sessions.get(session_id)
    }

    pub fn open_session_for(&self, device_id: &str) -> Option<&RecordingSession> {
        self.sessions.values().find(|s| s.device_id == device_id && !s.closed)
    }

    fn session_mut(&mut self, session_id: &str) -> Result<&mut RecordingSession, ReplayError> {
        self.sessions.get_mut(session_id).ok_or_else(|| ReplayError::UnknownSession(session_id.into()))
    }
}

#[cfg(test)]
mod tests {
    use super::super::EventKind;
    use super::*;

    const VIEW: (u32, u32) = (360, 640);

    #[test]
    fn clamps_backwards_timestamps() {
        let mut store = SessionStore::default();
        let id = store.open("d1", (720, 1280)).unwrap();
        assert_eq!(store.ingest(&id, RecordedEvent::mouse(0, EventKind::MouseDown, 1, 1, VIEW)).unwrap(), 1);
        store.ingest(&id, RecordedEvent::mouse(50, EventKind::MouseMove, 2, 2, VIEW)).unwrap();
        store.ingest(&id, RecordedEvent::mouse(40, EventKind::MouseUp, 2, 2, VIEW)).unwrap();
        assert_eq!(store.get(&id).unwrap().events[2].t, 50);
    }

    #[test]
    fn closed_and_out_of_view() {
        let mut store = SessionStore::default();
        let id = store.open("d1", (720, 1280)).unwrap();
        assert!(matches!(store.open("d1", (720, 1280)), Err(ReplayError::AlreadyRecording(_))));
        assert!(store.ingest(&id, RecordedEvent::mouse(0, EventKind::MouseDown, 361, 0, VIEW)).is_err());
        store.close(&id).unwrap();
        assert!(matches!(store.ingest(&id, RecordedEvent::mouse(0, EventKind::MouseDown, 1, 1, VIEW)), Err(ReplayError::Closed(_))));
        assert!(store.open("d1", (720, 1280)).is_ok());
    }
}
