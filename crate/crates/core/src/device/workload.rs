use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum WorkloadAction {
    SetCpu { load: f64 },
    SetBrightness { level: u8 },
    /// Uses the profile's video-decoding CPU level.
    VideoPlayback,
    /// Back to the profile's idle CPU level.
    Idle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadStep {
    /// Seconds after the workload starts.
    pub at: f64,
    #[serde(flatten)]
    pub action: WorkloadAction,
}

/// Ordered `(time offset, action)` program driving device activity.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WorkloadScript {
    pub steps: Vec<WorkloadStep>,
}

impl WorkloadScript {
    pub fn new(steps: impl IntoIterator<Item = (f64, WorkloadAction)>) -> Self {
        Self { steps: steps.into_iter().map(|(at, action)| WorkloadStep { at, action }).collect() }
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut last = 0.0;
        for step in &self.steps {
            if !(step.at.is_finite() && step.at >= last) {
                return Err(format!("workload offsets must be finite and non-decreasing, got {}", step.at));
            }
            last = step.at;
            if let WorkloadAction::SetCpu { load } = step.action {
                if !(0.0..=1.0).contains(&load) {
                    return Err(format!("cpu load {load} outside [0, 1]"));
                }
            }
        }
        Ok(())
    }

    pub fn video_playback() -> Self {
        Self::new([(0.0, WorkloadAction::VideoPlayback)])
    }

    /// Default browser page load: a burst while the page renders, a settling
    /// phase for late resources, then idle.
    pub fn page_load() -> Self {
        Self::new([
            (0.0, WorkloadAction::SetCpu { load: 0.80 }),
            (6.0, WorkloadAction::SetCpu { load: 0.35 }),
            (20.0, WorkloadAction::Idle),
        ])
    }

    /// Brightness staircase: each level held for `hold` seconds.
    pub fn brightness_staircase(levels: &[u8], hold: f64) -> Self {
        Self::new(levels.iter().enumerate().map(|(i, &level)| (i as f64 * hold, WorkloadAction::SetBrightness { level })))
    }
}
