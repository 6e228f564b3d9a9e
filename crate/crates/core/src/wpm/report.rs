use std::str::FromStr;

use serde::Serialize;

use super::{WpmError, WpmResult};
use crate::trace::{compensated_sum, PowerTrace};

pub const DISPLAY_PERIOD_S: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// Result plus plot-ready series.
    Json,
    /// One row per URL.
    Csv,
}

impl FromStr for ReportFormat {
    type Err = WpmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(WpmError::Format(other.into())),
        }
    }
}

#[derive(Serialize)]
struct EnergyBar<'a> {
    url: &'a str,
    energy_j: f64,
}

#[derive(Serialize)]
struct CpuBox<'a> {
    url: &'a str,
    p25: f64,
    p50: f64,
    p75: f64,
}

#[derive(Serialize)]
struct CurrentSeries<'a> {
    url: &'a str,
    rep: u32,
    period_s: f64,
    /// Seconds since the load started.
    t: Vec<f64>,
    current_ma: Vec<f64>,
}

#[derive(Serialize)]
struct Series<'a> {
    energy_per_url: Vec<EnergyBar<'a>>,
    cpu_boxes: Vec<CpuBox<'a>>,
    current: Vec<CurrentSeries<'a>>,
}

#[derive(Serialize)]
struct Document<'a> {
    result: &'a WpmResult,
    series: Series<'a>,
}

/// Renders a result; `traces` supplies the run's sessions for the current plots.
pub fn report(result: &WpmResult, traces: &[&PowerTrace], format: ReportFormat) -> Result<String, WpmError> {
    match format {
        ReportFormat::Json => {
            let series = Series {
                energy_per_url: result
                    .urls
                    .iter()
                    .filter_map(|u| u.median_energy_j.map(|e| EnergyBar { url: &u.url, energy_j: e }))
                    .collect(),
                cpu_boxes: result.urls.iter().filter_map(|u| u.cpu.map(|c| CpuBox { url: &u.url, p25: c.p25, p50: c.p50, p75: c.p75 })).collect(),
                current: current_series(result, traces),
            };
            serde_json::to_string_pretty(&Document { result, series }).map_err(|e| WpmError::Invalid(e.to_string()))
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            let io = |e: csv::Error| WpmError::Invalid(e.to_string());
            w.write_record(["url", "failed", "successful_reps", "median_energy_j", "median_bytes", "cpu_p25", "cpu_p50", "cpu_p75"]).map_err(io)?;
            for u in &result.urls {
                w.write_record([
                    u.url.clone(),
                    u.failed.to_string(),
                    u.successful_reps.to_string(),
                    fmt(u.median_energy_j),
                    fmt(u.median_bytes),
                    fmt(u.cpu.map(|c| c.p25)),
                    fmt(u.cpu.map(|c| c.p50)),
                    fmt(u.cpu.map(|c| c.p75)),
                ])
                .map_err(io)?;
            }
            let bytes = w.into_inner().map_err(|e| WpmError::Invalid(e.to_string()))?;
            String::from_utf8(bytes).map_err(|e| WpmError::Invalid(e.to_string()))
        }
    }
}

fn current_series<'a>(result: &'a WpmResult, traces: &[&PowerTrace]) -> Vec<CurrentSeries<'a>> {
    let Some(trace) = result.meta.trace_ids.first().and_then(|id| traces.iter().find(|t| t.id() == id)) else {
        return Vec::new();
    };
    let t0 = trace.meta().started_at;
    let currents = trace.currents();
    result
        .loads
        .iter()
        .filter(|l| l.ok)
        .map(|l| {
            let buckets = ((l.end - l.start) / DISPLAY_PERIOD_S).round() as usize;
            let mut t = Vec::with_capacity(buckets);
            let mut current_ma = Vec::with_capacity(buckets);
            for k in 0..buckets {
                let from = l.start - t0 + k as f64 * DISPLAY_PERIOD_S;
                let range = trace.index_range(from, from + DISPLAY_PERIOD_S);
                if range.is_empty() {
                    continue;
                }
                t.push(k as f64 * DISPLAY_PERIOD_S);
                current_ma.push(compensated_sum(currents[range.clone()].iter().copied()) / range.len() as f64);
            }
            CurrentSeries { url: &l.url, rep: l.rep, period_s: DISPLAY_PERIOD_S, t, current_ma }
        })
        .collect()
}
