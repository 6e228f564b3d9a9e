use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Controller, ControllerError, DeviceSetupOptions, ExecRequest, NodeSetupOptions, ReplayOptions, Switch};
use crate::automation::{Backend, InputCommand};
use crate::replay::AutomationScript;
use crate::wpm::{self, WpmError, WpmRequest};

/// Where an artifact's bytes come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ArtifactRef {
    TraceCsv { trace_id: String },
    TraceSidecar { trace_id: String },
    Bytes { data: Vec<u8> },
}

/// One step of a control job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum PipelineStep {
    NodeSetup {
        device_id: String,
        #[serde(default)]
        options: NodeSetupOptions,
    },
    DeviceSetup {
        device_id: String,
        #[serde(default)]
        options: DeviceSetupOptions,
    },
    Cleanup {
        #[serde(default)]
        force: bool,
    },
    PowerMonitor {
        state: Switch,
    },
    SetVoltage {
        volts: f64,
    },
    BattSwitch {
        device_id: String,
    },
    StartMonitor {
        device_id: String,
        duration_s: f64,
    },
    StopMonitor,
    DeviceMirroring {
        device_id: String,
        state: Switch,
    },
    Execute {
        device_id: String,
        command: InputCommand,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        backend: Option<Backend>,
    },
    Shell {
        device_id: String,
        line: String,
    },
    Wait {
        seconds: f64,
    },
    Workload {
        device_id: String,
        name: String,
    },
    Replay {
        device_id: String,
        script: AutomationScript,
        #[serde(default)]
        options: ReplayOptions,
    },
    Measure {
        device_id: String,
        duration_s: f64,
    },
    Wpm {
        request: WpmRequest,
    },
}

impl PipelineStep {
    pub fn op(&self) -> &'static str {
        match self {
            PipelineStep::NodeSetup { .. } => "node_setup",
            PipelineStep::DeviceSetup { .. } => "device_setup",
            PipelineStep::Cleanup { .. } => "cleanup",
            PipelineStep::PowerMonitor { .. } => "power_monitor",
            PipelineStep::SetVoltage { .. } => "set_voltage",
            PipelineStep::BattSwitch { .. } => "batt_switch",
            PipelineStep::StartMonitor { .. } => "start_monitor",
            PipelineStep::StopMonitor => "stop_monitor",
            PipelineStep::DeviceMirroring { .. } => "device_mirroring",
            PipelineStep::Execute { .. } => "execute",
            PipelineStep::Shell { .. } => "shell",
            PipelineStep::Wait { .. } => "wait",
            PipelineStep::Workload { .. } => "workload",
            PipelineStep::Replay { .. } => "replay",
            PipelineStep::Measure { .. } => "measure",
            PipelineStep::Wpm { .. } => "wpm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobRunState {
    Running,
    Succeeded,
    Failed,
    /// Stopped for running past its time budget.
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    pub op: String,
    pub started_at: f64,
    pub ended_at: f64,
    pub ok: bool,
    pub output: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRun {
    pub job_id: String,
    pub state: JobRunState,
    pub steps: Vec<StepRecord>,
    pub artifacts: Vec<String>,
    pub error: Option<String>,
    /// Whether the closing cleanup left the node safe.
    pub safe_after: bool,
}

fn to_value<T: Serialize>(v: T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

impl Controller {
    /// Runs a control job to completion, or until it has used `max_duration`
    /// seconds of node time. Whatever happens, a forced cleanup closes the
    /// job so the node is left safe.
    pub fn run_job(&mut self, job_id: &str, steps: &[PipelineStep], max_duration: Option<f64>) -> Result<JobRun, ControllerError> {
        if let Some(current) = &self.current_job {
            return Err(ControllerError::Exclusivity(format!("job {current:?} is running")));
        }
        if self.jobs.contains_key(job_id) {
            return Err(ControllerError::Invalid(format!("job {job_id:?} already ran")));
        }
        self.current_job = Some(job_id.to_string());
        self.jobs.insert(
            job_id.to_string(),
            JobRun { job_id: job_id.to_string(), state: JobRunState::Running, steps: Vec::new(), artifacts: Vec::new(), error: None, safe_after: false },
        );
        let mut error = None;
        let mut aborted = false;
        let start = self.now;
        for (index, step) in steps.iter().enumerate() {
            let started_at = self.now;
            let result = self.run_step(step);
            let ok = result.is_ok();
            let output = match result {
                Ok(v) => v,
                Err(e) => {
                    error = Some(format!("step {index} ({}): {e}", step.op()));
                    json!({ "error": e.to_string(), "kind": e.kind() })
                }
            };
            let record = StepRecord { index, op: step.op().to_string(), started_at, ended_at: self.now, ok, output };
            self.jobs.get_mut(job_id).expect("job registered").steps.push(record);
            if !ok {
                break;
            }
            if let Some(limit) = max_duration {
                if self.now - start > limit {
                    aborted = true;
                    error = Some(format!("exceeded max duration of {limit} s after step {index}"));
                    break;
                }
            }
        }
        let cleanup = self.cleanup(true);
        let safe_after = cleanup.as_ref().is_ok_and(|r| r.safe);
        self.current_job = None;
        let run = self.jobs.get_mut(job_id).expect("job registered");
        run.state = if error.is_none() { JobRunState::Succeeded } else { JobRunState::Failed };
        run.error = error.or_else(|| cleanup.as_ref().err().map(|e| format!("cleanup: {e}")));
        if aborted {
            run.state = JobRunState::Aborted;
        } else if run.error.is_some() {
            run.state = JobRunState::Failed;
        }
        run.safe_after = safe_after;
        let log_name = format!("job-{job_id}.json");
        run.artifacts.push(log_name.clone());
        let data = serde_json::to_vec_pretty(&*run).unwrap_or_default();
        let run = run.clone();
        self.register_artifact(log_name, ArtifactRef::Bytes { data });
        Ok(run)
    }

    pub fn job(&self, job_id: &str) -> Option<&JobRun> {
        self.jobs.get(job_id)
    }

    pub fn current_job(&self) -> Option<&str> {
        self.current_job.as_deref()
    }

    fn run_step(&mut self, step: &PipelineStep) -> Result<Value, ControllerError> {
        Ok(match step {
            PipelineStep::NodeSetup { device_id, options } => to_value(self.node_setup(device_id, *options)?),
            PipelineStep::DeviceSetup { device_id, options } => to_value(self.device_setup(device_id, *options)?),
            PipelineStep::Cleanup { force } => to_value(self.cleanup(*force)?),
            PipelineStep::PowerMonitor { state } => to_value(self.power_monitor(*state)?),
            PipelineStep::SetVoltage { volts } => to_value(self.set_voltage(*volts)?),
            PipelineStep::BattSwitch { device_id } => to_value(self.batt_switch(device_id)?),
            PipelineStep::StartMonitor { device_id, duration_s } => json!({ "trace_id": self.start_monitor(device_id, *duration_s)? }),
            PipelineStep::StopMonitor => json!({ "trace_id": self.stop_monitor()? }),
            PipelineStep::DeviceMirroring { device_id, state } => to_value(self.device_mirroring(device_id, *state)?),
            PipelineStep::Execute { device_id, command, backend } => {
                to_value(self.execute(&ExecRequest { device_id: device_id.clone(), command: command.clone(), backend: *backend })?)
            }
            PipelineStep::Shell { device_id, line } => json!({ "output": self.shell(device_id, line)? }),
            PipelineStep::Wait { seconds } => {
                self.faults.check("wait")?;
                self.advance(*seconds)?;
                json!({ "clock_s": self.now })
            }
            PipelineStep::Workload { device_id, name } => {
                self.faults.check("workload")?;
                self.device_mut(device_id)?.start_named_workload(name)?;
                json!({ "workload": name })
            }
            PipelineStep::Replay { device_id, script, options } => to_value(self.replay(device_id, script, *options)?),
            PipelineStep::Measure { device_id, duration_s } => {
                let trace_id = self.start_monitor(device_id, *duration_s)?;
                self.advance(*duration_s)?;
                self.stop_monitor()?;
                let energy = self.trace(&trace_id).map(|t| t.energy()).transpose()?;
                json!({ "trace_id": trace_id, "energy_j": energy })
            }
            PipelineStep::Wpm { request } => {
                let sites = std::mem::take(&mut self.sites);
                let outcome = wpm::run(self, &sites, request);
                self.sites = sites;
                let result = outcome.map_err(|e| match e {
                    WpmError::Step { source, .. } => *source,
                    other => ControllerError::Invalid(other.to_string()),
                })?;
                let owner = self.current_job.clone().unwrap_or_else(|| "adhoc".into());
                let n = self.artifacts.keys().filter(|k| k.starts_with(&format!("wpm-{owner}-"))).count();
                let name = format!("wpm-{owner}-{n}.json");
                let data = serde_json::to_vec_pretty(&result).map_err(|e| ControllerError::Io(e.to_string()))?;
                self.attach_artifact(name.clone(), ArtifactRef::Bytes { data });
                json!({ "artifact": name, "urls": result.urls, "session_energy_j": result.session_energy_j })
            }
        })
    }

    /// Runs a raw shell line over whichever ADB transport the rules allow.
    pub fn shell(&mut self, device_id: &str, line: &str) -> Result<String, ControllerError> {
        let backend = self.route(device_id, None)?;
        if !backend.is_adb() {
            return Err(ControllerError::Precondition(format!("no ADB transport to {device_id:?}; shell needs one")));
        }
        self.faults.check("shell")?;
        let delivery = crate::automation::Delivery::Shell { line: line.to_string() };
        Ok(crate::automation::dispatch::deliver_to_device(self.device_mut(device_id)?, &delivery)?)
    }
}
