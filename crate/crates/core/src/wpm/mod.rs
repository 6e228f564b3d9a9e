//! Web Power Monitor: per-site energy of scripted browser loads.
//!
//! A run prepares the node and device once, then for each repetition resets
//! the browser and loads every URL in its own fixed-length slot. One
//! measurement session spans the whole run; each load's energy is the slice
//! of that trace covering its load window.

mod catalog;
mod report;
mod run;

pub use self::catalog::{prefilter, registrable_name, CatalogSpec, LoadPhase, PrefilterReport, SiteCatalog, SiteCatalogEntry, SiteStatus};
pub use self::report::{report, ReportFormat, DISPLAY_PERIOD_S};
pub use self::run::{run, BROWSER_SETUP_S, INTERACT_SCROLLS};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::ControllerError;

pub const DEFAULT_REPS: u32 = 3;
pub const DEFAULT_PAGE_BUDGET_S: f64 = 30.0;
pub const DEFAULT_PAGE_SLOT_S: f64 = 120.0;
pub const CPU_SAMPLE_PERIOD_S: f64 = 3.0;
pub const PROBE_BUDGET_S: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Automation {
    #[default]
    SimpleLoad,
    Interact,
}

fn default_reps() -> u32 {
    DEFAULT_REPS
}
fn default_true() -> bool {
    true
}
fn default_budget() -> f64 {
    DEFAULT_PAGE_BUDGET_S
}
fn default_slot() -> f64 {
    DEFAULT_PAGE_SLOT_S
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WpmRequest {
    pub url_list: Vec<String>,
    pub device_id: String,
    pub browser: String,
    #[serde(default = "default_reps")]
    pub reps: u32,
    #[serde(default = "default_true")]
    pub power: bool,
    #[serde(default)]
    pub visual: bool,
    #[serde(default)]
    pub automation: Automation,
    #[serde(default = "default_budget")]
    pub per_page_budget: f64,
    #[serde(default = "default_slot")]
    pub page_slot: f64,
}

impl WpmRequest {
    pub fn new(device_id: &str, browser: &str, urls: impl IntoIterator<Item = String>) -> Self {
        Self {
            url_list: urls.into_iter().collect(),
            device_id: device_id.into(),
            browser: browser.into(),
            reps: DEFAULT_REPS,
            power: true,
            visual: false,
            automation: Automation::SimpleLoad,
            per_page_budget: DEFAULT_PAGE_BUDGET_S,
            page_slot: DEFAULT_PAGE_SLOT_S,
        }
    }

    pub fn validate(&self) -> Result<(), WpmError> {
        if self.reps == 0 {
            return Err(WpmError::Invalid("reps must be at least 1".into()));
        }
        if self.url_list.is_empty() {
            return Err(WpmError::Invalid("url_list is empty".into()));
        }
        if self.browser.is_empty() || self.device_id.is_empty() {
            return Err(WpmError::Invalid("device_id and browser are required".into()));
        }
        if !(self.per_page_budget.is_finite() && self.per_page_budget > 0.0) {
            return Err(WpmError::Invalid(format!("per_page_budget must be positive, got {}", self.per_page_budget)));
        }
        if !(self.page_slot.is_finite() && self.page_slot >= self.per_page_budget) {
            return Err(WpmError::Invalid(format!("page_slot {} is shorter than per_page_budget {}", self.page_slot, self.per_page_budget)));
        }
        Ok(())
    }
}

/// One load of one URL in one repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadRecord {
    pub url: String,
    pub rep: u32,
    pub ok: bool,
    pub error: Option<String>,
    /// Load window on the controller clock.
    pub start: f64,
    pub end: f64,
    /// Sliced from the run's trace; absent when power was off or the load failed.
    pub energy_j: Option<f64>,
    pub bytes: u64,
    /// Reported CPU utilisation sampled every 3 s; empty where the OS hides it.
    pub cpu_samples: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpuPercentiles {
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrlResult {
    pub url: String,
    pub failed: bool,
    pub successful_reps: u32,
    pub median_energy_j: Option<f64>,
    pub median_bytes: Option<f64>,
    /// Per-percentile medians across reps; absent on iOS.
    pub cpu: Option<CpuPercentiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub device_id: String,
    pub browser: String,
    pub reps: u32,
    pub automation: Automation,
    pub visual: bool,
    pub started_at: f64,
    pub finished_at: f64,
    pub trace_ids: Vec<String>,
    /// Pipeline steps in the order they ran.
    pub step_log: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WpmResult {
    pub meta: RunMeta,
    pub urls: Vec<UrlResult>,
    pub loads: Vec<LoadRecord>,
    /// Energy of the whole session, loads and gaps included.
    pub session_energy_j: Option<f64>,
}

impl WpmResult {
    /// Energy of everything in the session outside load windows.
    pub fn idle_energy_j(&self) -> Option<f64> {
        let loads: f64 = self.loads.iter().filter_map(|l| l.energy_j).sum();
        self.session_energy_j.map(|t| t - loads)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WpmError {
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("{step} failed: {source}")]
    Step { step: String, source: Box<ControllerError> },
    #[error("unknown report format {0:?}")]
    Format(String),
}

/// Middle element for odd counts, mean of the two middle ones for even.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Nearest-rank percentiles; `None` for no samples.
pub fn cpu_percentiles(samples: &[f64]) -> Option<CpuPercentiles> {
    if samples.is_empty() {
        return None;
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = |p: f64| {
        let k = (p / 100.0 * v.len() as f64).ceil() as usize;
        v[k.clamp(1, v.len()) - 1]
    };
    Some(CpuPercentiles { p25: rank(25.0), p50: rank(50.0), p75: rank(75.0) })
}

/// Folds per-rep loads into per-URL medians, in `url_list` order.
pub fn aggregate(url_list: &[String], loads: &[LoadRecord]) -> Vec<UrlResult> {
    url_list
        .iter()
        .map(|url| {
            let ok: Vec<&LoadRecord> = loads.iter().filter(|l| &l.url == url && l.ok).collect();
            let energies: Vec<f64> = ok.iter().filter_map(|l| l.energy_j).collect();
            let bytes: Vec<f64> = ok.iter().map(|l| l.bytes as f64).collect();
            let pct: Vec<CpuPercentiles> = ok.iter().filter_map(|l| cpu_percentiles(&l.cpu_samples)).collect();
            let cpu = (!pct.is_empty()).then(|| CpuPercentiles {
                p25: median(&pct.iter().map(|p| p.p25).collect::<Vec<_>>()).unwrap_or_default(),
                p50: median(&pct.iter().map(|p| p.p50).collect::<Vec<_>>()).unwrap_or_default(),
                p75: median(&pct.iter().map(|p| p.p75).collect::<Vec<_>>()).unwrap_or_default(),
            });
            UrlResult {
                url: url.clone(),
                failed: ok.is_empty(),
                successful_reps: ok.len() as u32,
                median_energy_j: median(&energies),
                median_bytes: median(&bytes),
                cpu,
            }
        })
        .collect()
}
