use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AccessError, JobExecution, Principal, VantagePointRecord};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const REGISTRY_FILE: &str = "registry.json";

/// One line of the append-only log. Each carries the full new value of what
/// changed, so replaying the log in order rebuilds the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Principal { principal: Principal, token: String },
    Node { record: VantagePointRecord },
    NodeRemoved { id: String },
    Job { execution: JobExecution },
}

/// Materialized registry served by `list_nodes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrySnapshot {
    pub zone: String,
    pub nodes: Vec<VantagePointRecord>,
}

/// Event log plus snapshot in a state directory; a no-op without one.
#[derive(Debug, Clone, Default)]
pub struct StateStore {
    dir: Option<PathBuf>,
}

impl StateStore {
    pub fn memory() -> Self {
        Self { dir: None }
    }

    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, AccessError> {
        let dir = dir.into();
        fs::create_dir_all(dir.join("artifacts"))?;
        Ok(Self { dir: Some(dir) })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn append(&self, event: &Event) -> Result<(), AccessError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let mut f = OpenOptions::new().create(true).append(true).open(dir.join(EVENTS_FILE))?;
        let line = serde_json::to_string(event).map_err(|e| AccessError::Io(e.to_string()))?;
        writeln!(f, "{line}")?;
        Ok(())
    }

    /// Events in log order. A torn final line from a crash is skipped.
    pub fn load_events(&self) -> Result<Vec<Event>, AccessError> {
        let Some(dir) = &self.dir else { return Ok(Vec::new()) };
        let path = dir.join(EVENTS_FILE);
        if !path.exists() {
            return Ok(Vec::new());
        }
        let lines: Vec<String> = BufReader::new(File::open(path)?).lines().collect::<Result<_, _>>()?;
        let mut events = Vec::with_capacity(lines.len());
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(line) {
                Ok(e) => events.push(e),
                Err(_) if i + 1 == lines.len() => break,
                Err(e) => return Err(AccessError::Io(format!("{EVENTS_FILE} line {}: {e}", i + 1))),
            }
        }
        Ok(events)
    }

    /// Rewrites the snapshot atomically.
    pub fn write_registry(&self, snapshot: &RegistrySnapshot) -> Result<(), AccessError> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let text = serde_json::to_string_pretty(snapshot).map_err(|e| AccessError::Io(e.to_string()))?;
        let tmp = dir.join(format!("{REGISTRY_FILE}.tmp"));
        fs::write(&tmp, text + "\n")?;
        fs::rename(tmp, dir.join(REGISTRY_FILE))?;
        Ok(())
    }

    pub fn read_registry(&self) -> Result<Option<RegistrySnapshot>, AccessError> {
        let Some(dir) = &self.dir else { return Ok(None) };
        let path = dir.join(REGISTRY_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map(Some).map_err(|e| AccessError::Io(e.to_string()))
    }

    fn artifact_path(&self, job_id: &str, name: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join("artifacts").join(job_id).join(name))
    }

    pub fn save_artifact(&self, job_id: &str, name: &str, data: &[u8]) -> Result<(), AccessError> {
        if let Some(path) = self.artifact_path(job_id, name) {
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(path, data)?;
        }
        Ok(())
    }

    pub fn load_artifact(&self, job_id: &str, name: &str) -> Option<Vec<u8>> {
        fs::read(self.artifact_path(job_id, name)?).ok()
    }
}
