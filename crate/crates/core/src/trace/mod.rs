//! Power traces: acquisition buffering, energy integration and downsampling.
//!
//! A trace stores one current reading (mA) per sample tick. Sample `i` sits
//! at `i / sample_rate` seconds from the trace start, so timestamps are
//! exact and strictly increasing by construction.

mod compare;
mod csv;

pub use self::compare::{compare_software, SoftwareComparison, SoftwareReadingSeries, WindowComparison};
pub use self::csv::{export_csv, read_csv, write_csv, TraceSidecar, CSV_HEADER};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TraceError {
    #[error("trace {0} is sealed")]
    Sealed(String),
    #[error("trace {0} is not sealed")]
    NotSealed(String),
    #[error("invalid trace parameter: {0}")]
    Invalid(String),
    #[error("malformed csv at line {line}: {reason}")]
    Csv { line: usize, reason: String },
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for TraceError {
    fn from(e: std::io::Error) -> Self {
        TraceError::Io(e.to_string())
    }
}

/// A single current reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSample {
    /// Seconds since trace start.
    pub t: f64,
    /// Milliamperes.
    pub current: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub trace_id: String,
    pub device_id: String,
    pub job_id: Option<String>,
    /// Controller clock reading (seconds) when acquisition began.
    pub started_at: f64,
}

/// Why a trace was sealed early.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TraceFault {
    Overcurrent { sample_index: usize, current_ma: f64, limit_ma: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerTrace {
    meta: TraceMeta,
    voltage: f64,
    sample_rate: f64,
    currents: Vec<f64>,
    sealed: bool,
    fault: Option<TraceFault>,
}

impl PowerTrace {
    pub fn new(meta: TraceMeta, voltage: f64, sample_rate: f64) -> Result<Self, TraceError> {
        if !(voltage.is_finite() && voltage > 0.0) {
            return Err(TraceError::Invalid(format!("voltage must be positive, got {voltage}")));
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(TraceError::Invalid(format!("sample rate must be positive, got {sample_rate}")));
        }
        Ok(Self { meta, voltage, sample_rate, currents: Vec::new(), sealed: false, fault: None })
    }

    /// Builds a sealed trace from raw currents.
    pub fn from_currents(
        meta: TraceMeta,
        voltage: f64,
        sample_rate: f64,
        currents: Vec<f64>,
    ) -> Result<Self, TraceError> {
        let mut trace = Self::new(meta, voltage, sample_rate)?;
        if let Some(bad) = currents.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return Err(TraceError::Invalid(format!("current must be finite and >= 0, got {bad}")));
        }
        trace.currents = currents;
        trace.sealed = true;
        Ok(trace)
    }

    pub fn meta(&self) -> &TraceMeta {
        &self.meta
    }

    pub fn id(&self) -> &str {
        &self.meta.trace_id
    }

    pub fn voltage(&self) -> f64 {
        self.voltage
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn tick(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.currents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.currents.is_empty()
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    pub fn fault(&self) -> Option<&TraceFault> {
        self.fault.as_ref()
    }

    /// Covered time span in seconds (`len / sample_rate`).
    pub fn duration(&self) -> f64 {
        self.currents.len() as f64 / self.sample_rate
    }

    pub fn currents(&self) -> &[f64] {
        &self.currents
    }

    pub fn sample(&self, index: usize) -> Option<PowerSample> {
        self.currents
            .get(index)
            .map(|&current| PowerSample { t: index as f64 / self.sample_rate, current })
    }

    pub fn samples(&self) -> impl Iterator<Item = PowerSample> + '_ {
        let rate = self.sample_rate;
        self.currents
            .iter()
            .enumerate()
            .map(move |(i, &current)| PowerSample { t: i as f64 / rate, current })
    }

    pub fn push(&mut self, current_ma: f64) -> Result<(), TraceError> {
        if self.sealed {
            return Err(TraceError::Sealed(self.meta.trace_id.clone()));
        }
        self.currents.push(current_ma.max(0.0));
        Ok(())
    }

    pub fn seal(&mut self) {
        self.sealed = true;
    }

    pub fn seal_with_fault(&mut self, fault: TraceFault) {
        self.fault = Some(fault);
        self.sealed = true;
    }

    pub fn set_job_id(&mut self, job_id: Option<String>) {
        self.meta.job_id = job_id;
    }

    /// Integrated energy in joules at the configured rail voltage.
    pub fn energy(&self) -> Result<f64, TraceError> {
        self.ensure_sealed()?;
        Ok(integrate(&self.currents, self.voltage, self.sample_rate))
    }

    /// Energy of the samples whose timestamps fall in `[from, to)`.
    pub fn energy_between(&self, from: f64, to: f64) -> Result<f64, TraceError> {
        self.ensure_sealed()?;
        let range = self.index_range(from, to);
        Ok(integrate(&self.currents[range], self.voltage, self.sample_rate))
    }

    /// Mean current (mA) of the samples in `[from, to)`, `None` when no sample falls inside.
    pub fn mean_between(&self, from: f64, to: f64) -> Option<f64> {
        let range = self.index_range(from, to);
        if range.is_empty() {
            return None;
        }
        let n = range.len() as f64;
        Some(compensated_sum(self.currents[range].iter().copied()) / n)
    }

    /// Sample indices whose timestamps lie in `[from, to)`.
    pub fn index_range(&self, from: f64, to: f64) -> std::ops::Range<usize> {
        let lo = index_at(from, self.sample_rate).min(self.currents.len());
        let hi = index_at(to, self.sample_rate).min(self.currents.len());
        lo..hi.max(lo)
    }

    pub fn downsample(&self, period: f64) -> Result<Downsampled, TraceError> {
        if !(period.is_finite() && period >= 2.0 / self.sample_rate) {
            return Err(TraceError::Invalid(format!(
                "downsample period {period} s is below two sample ticks ({} s)",
                2.0 / self.sample_rate
            )));
        }
        let mut buckets: Vec<Bucket> = Vec::new();
        let mut start = 0usize;
        let mut k = 0usize;
        while start < self.currents.len() {
            let end = index_at((k + 1) as f64 * period, self.sample_rate).min(self.currents.len());
            if end > start {
                let slice = &self.currents[start..end];
                let full = index_at((k + 1) as f64 * period, self.sample_rate)
                    - index_at(k as f64 * period, self.sample_rate);
                buckets.push(Bucket {
                    t_start: k as f64 * period,
                    mean_ma: compensated_sum(slice.iter().copied()) / slice.len() as f64,
                    samples: slice.len(),
                    width_s: slice.len() as f64 / self.sample_rate,
                    partial: slice.len() < full,
                });
            }
            start = end;
            k += 1;
        }
        Ok(Downsampled { period, voltage: self.voltage, buckets })
    }

    /// Joins two traces sharing voltage and rate into one sealed trace.
    pub fn concat(&self, other: &PowerTrace) -> Result<PowerTrace, TraceError> {
        if self.voltage != other.voltage || self.sample_rate != other.sample_rate {
            return Err(TraceError::Invalid("voltage and sample rate must match".into()));
        }
        let mut currents = self.currents.clone();
        currents.extend_from_slice(&other.currents);
        PowerTrace::from_currents(self.meta.clone(), self.voltage, self.sample_rate, currents)
    }

    fn ensure_sealed(&self) -> Result<(), TraceError> {
        if self.sealed {
            Ok(())
        } else {
            Err(TraceError::NotSealed(self.meta.trace_id.clone()))
        }
    }
}

/// First sample index whose timestamp is `>= t`. Tolerates float noise in
/// `t * rate` so that window edges on exact tick multiples stay exact.
fn index_at(t: f64, rate: f64) -> usize {
    if t <= 0.0 {
        return 0;
    }
    let x = t * rate;
    let nearest = x.round();
    if (x - nearest).abs() < 1e-6 {
        nearest as usize
    } else {
        x.ceil() as usize
    }
}

/// `V * sum(I_i / 1000) * dt` with Neumaier-compensated left-to-right accumulation.
pub fn integrate(currents_ma: &[f64], voltage: f64, sample_rate: f64) -> f64 {
    voltage * compensated_sum(currents_ma.iter().copied()) / 1000.0 / sample_rate
}

/// Neumaier (improved Kahan) summation, left to right.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub t_start: f64,
    pub mean_ma: f64,
    pub samples: usize,
    /// Time covered by the samples in this bucket.
    pub width_s: f64,
    pub partial: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Downsampled {
    pub period: f64,
    pub voltage: f64,
    pub buckets: Vec<Bucket>,
}

impl Downsampled {
    /// Energy recomputed from bucket means weighted by bucket width.
    pub fn energy(&self) -> f64 {
        self.voltage * compensated_sum(self.buckets.iter().map(|b| b.mean_ma * b.width_s)) / 1000.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> TraceMeta {
        TraceMeta { trace_id: "t".into(), ..Default::default() }
    }

    #[test]
    fn constant_trace_energy() {
        let trace = PowerTrace::from_currents(meta(), 4.0, 5000.0, vec![100.0; 50_000]).unwrap();
        let e = trace.energy().unwrap();
        assert!((e - 4.0).abs() / 4.0 < 1e-12, "{e}");
    }

    #[test]
    fn empty_trace_has_zero_energy() {
        let trace = PowerTrace::from_currents(meta(), 4.0, 5000.0, vec![]).unwrap();
        assert_eq!(trace.energy().unwrap(), 0.0);
    }

    #[test]
    fn unsealed_energy_is_refused() {
        let mut trace = PowerTrace::new(meta(), 4.0, 5000.0).unwrap();
        trace.push(1.0).unwrap();
        assert_eq!(trace.energy(), Err(TraceError::NotSealed("t".into())));
        trace.seal();
        assert!(trace.push(1.0).is_err());
    }

    #[test]
    fn downsample_partial_bucket() {
        let trace = PowerTrace::from_currents(meta(), 4.0, 5000.0, vec![7.0; 50_000]).unwrap();
        let ds = trace.downsample(3.0).unwrap();
        assert_eq!(ds.buckets.len(), 4);
        assert!(ds.buckets[..3].iter().all(|b| !b.partial && b.samples == 15_000));
        assert!(ds.buckets[3].partial);
        assert_eq!(ds.buckets[3].samples, 5_000);
        assert!(ds.buckets.iter().all(|b| b.mean_ma == 7.0));
        assert!((ds.energy() - trace.energy().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn downsample_rejects_tiny_period() {
        let trace = PowerTrace::from_currents(meta(), 4.0, 5000.0, vec![1.0; 10]).unwrap();
        assert!(matches!(trace.downsample(1.0 / 5000.0), Err(TraceError::Invalid(_))));
        assert!(trace.downsample(2.0 / 5000.0).is_ok());
    }

    #[test]
    fn compensated_sum_beats_naive() {
        let values = std::iter::once(1e16).chain(std::iter::repeat_n(1.0, 1000)).chain(std::iter::once(-1e16));
        assert_eq!(compensated_sum(values), 1000.0);
    }

    #[test]
    fn window_indices_on_tick_multiples() {
        let trace = PowerTrace::from_currents(meta(), 1.0, 5000.0, vec![1.0; 50_000]).unwrap();
        assert_eq!(trace.index_range(0.0, 3.0), 0..15_000);
        assert_eq!(trace.index_range(9.0, 12.0), 45_000..50_000);
        assert_eq!(trace.index_range(20.0, 30.0), 50_000..50_000);
    }
}
