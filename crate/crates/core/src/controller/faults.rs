use std::collections::BTreeSet;

use super::ControllerError;

/// Test hook for failure paths: failing named steps, dropping a link after a
/// number of deliveries, or spiking the next sampled current.
#[derive(Debug, Clone, Default)]
pub struct FaultInjector {
    fail_steps: BTreeSet<String>,
    drop_after: Option<usize>,
    delivered: usize,
    spike_ma: Option<f64>,
    suspended: bool,
}

impl FaultInjector {
    pub fn fail_step(&mut self, step: &str) {
        self.fail_steps.insert(step.to_string());
    }

    pub fn clear_step(&mut self, step: &str) {
        self.fail_steps.remove(step);
    }

    /// The input link fails on the delivery after `k` more succeed.
    pub fn drop_backend_after(&mut self, k: usize) {
        self.drop_after = Some(k);
        self.delivered = 0;
    }

    /// Adds `ma` to the next sampled current.
    pub fn spike_next_sample(&mut self, ma: f64) {
        self.spike_ma = Some(ma);
    }

    pub fn clear(&mut self) {
        *self = Self::default();
    }

    pub fn is_armed(&self) -> bool {
        !self.fail_steps.is_empty() || self.drop_after.is_some() || self.spike_ma.is_some()
    }

    pub(crate) fn check(&self, step: &str) -> Result<(), ControllerError> {
        if !self.suspended && self.fail_steps.contains(step) {
            return Err(ControllerError::Injected(step.to_string()));
        }
        Ok(())
    }

    pub(crate) fn on_delivery(&mut self) -> Result<(), String> {
        if self.suspended {
            return Ok(());
        }
        if let Some(k) = self.drop_after {
            if self.delivered >= k {
                self.drop_after = None;
                return Err("injected link loss".into());
            }
            self.delivered += 1;
        }
        Ok(())
    }

    pub(crate) fn take_spike(&mut self) -> Option<f64> {
        self.spike_ma.take()
    }

    /// Cleanup runs with injection paused so it can always restore safety.
    pub(crate) fn suspend(&mut self, on: bool) {
        self.suspended = on;
    }
}
