use serde::{Deserialize, Serialize};

use super::{PowerTrace, TraceError};

/// Coarse software-side battery readings, timestamped on the trace clock.
///
/// A reading reported at `t` is the value the device exposes during
/// `[t, t + cadence)`, until the next report replaces it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftwareReadingSeries {
    pub cadence: f64,
    pub readings: Vec<(f64, f64)>,
}

impl SoftwareReadingSeries {
    pub fn new(cadence: f64, readings: Vec<(f64, f64)>) -> Result<Self, TraceError> {
        let series = Self { cadence, readings };
        series.validate()?;
        Ok(series)
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        if !(self.cadence.is_finite() && self.cadence > 0.0) {
            return Err(TraceError::Invalid(format!("cadence must be positive, got {}", self.cadence)));
        }
        for pair in self.readings.windows(2) {
            let gap = pair[1].0 - pair[0].0;
            if (gap - self.cadence).abs() > 0.1 * self.cadence {
                return Err(TraceError::Invalid(format!(
                    "reading spacing {gap} s deviates from cadence {} s by more than 10%",
                    self.cadence
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowComparison {
    pub t_start: f64,
    pub t_end: f64,
    pub reading_ma: f64,
    pub hardware_mean_ma: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftwareComparison {
    pub windows: Vec<WindowComparison>,
    /// Pearson correlation between readings and hardware window means;
    /// `None` when either side has zero variance or fewer than two windows.
    pub correlation: Option<f64>,
}

impl SoftwareComparison {
    pub fn max_relative_error(&self) -> f64 {
        self.windows.iter().map(|w| w.relative_error).fold(0.0, f64::max)
    }
}

/// Aligns each reading to the trace window it is exposed over and reports
/// per-window relative error plus the trend correlation.
pub fn compare_software(trace: &PowerTrace, series: &SoftwareReadingSeries) -> Result<SoftwareComparison, TraceError> {
    series.validate()?;
    let end = trace.duration() + 0.5 * trace.tick();
    let mut windows = Vec::new();
    for &(t, reading) in &series.readings {
        let t_end = t + series.cadence;
        if t < 0.0 || t_end > end {
            continue;
        }
        let Some(mean) = trace.mean_between(t, t_end) else { continue };
        let relative_error = if mean == 0.0 {
            if reading == 0.0 { 0.0 } else { f64::INFINITY }
        } else {
            (reading - mean).abs() / mean
        };
        windows.push(WindowComparison { t_start: t, t_end, reading_ma: reading, hardware_mean_ma: mean, relative_error });
    }
    if windows.is_empty() {
        return Err(TraceError::Invalid("software series does not overlap the trace".into()));
    }
    let xs: Vec<f64> = windows.iter().map(|w| w.reading_ma).collect();
    let ys: Vec<f64> = windows.iter().map(|w| w.hardware_mean_ma).collect();
    Ok(SoftwareComparison { correlation: pearson(&xs, &ys), windows })
}

pub(crate) fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 || n != ys.len() {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    // relative threshold: constant series come out with rounding-level variance
    let scale = xs.iter().chain(ys).map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
    if sxx <= 1e-18 * scale || syy <= 1e-18 * scale {
        return None;
    }
    Some(sxy / (sxx.sqrt() * syy.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::TraceMeta;

    fn staircase(levels: &[f64], seconds_each: usize, rate: f64) -> PowerTrace {
        let per = (seconds_each as f64 * rate) as usize;
        let currents = levels.iter().flat_map(|&l| std::iter::repeat_n(l, per)).collect();
        PowerTrace::from_currents(TraceMeta::default(), 4.0, rate, currents).unwrap()
    }

    #[test]
    fn own_window_means_match_exactly() {
        let trace = staircase(&[100.0, 140.0, 180.0, 220.0], 60, 100.0);
        let readings = (0..8).map(|k| {
            let t = k as f64 * 30.0;
            (t, trace.mean_between(t, t + 30.0).unwrap())
        });
        let series = SoftwareReadingSeries::new(30.0, readings.collect()).unwrap();
        let report = compare_software(&trace, &series).unwrap();
        assert_eq!(report.windows.len(), 8);
        assert!(report.windows.iter().all(|w| w.relative_error == 0.0));
        assert!((report.correlation.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_offset_has_no_correlation() {
        let trace = staircase(&[100.0], 120, 100.0);
        let series = SoftwareReadingSeries::new(30.0, (0..4).map(|k| (k as f64 * 30.0, 110.0)).collect()).unwrap();
        let report = compare_software(&trace, &series).unwrap();
        assert_eq!(report.windows.len(), 4);
        for w in &report.windows {
            assert!((w.relative_error - 0.10).abs() < 1e-12);
        }
        assert_eq!(report.correlation, None);
    }

    #[test]
    fn lagging_readings_show_error_at_steps() {
        // readings reported at the end of each averaging window
        let trace = staircase(&[100.0, 150.0], 60, 100.0);
        let readings = vec![(30.0, 100.0), (60.0, 100.0), (90.0, 150.0)];
        let report = compare_software(&trace, &SoftwareReadingSeries::new(30.0, readings).unwrap()).unwrap();
        let errors: Vec<f64> = report.windows.iter().map(|w| w.relative_error).collect();
        assert_eq!(errors[0], 0.0);
        assert!(errors[1] > 0.0);
        assert_eq!(errors[2], 0.0);
    }

    #[test]
    fn disjoint_series_is_rejected() {
        let trace = staircase(&[100.0], 10, 100.0);
        let series = SoftwareReadingSeries::new(30.0, vec![(100.0, 1.0)]).unwrap();
        assert!(matches!(compare_software(&trace, &series), Err(TraceError::Invalid(_))));
    }

    #[test]
    fn irregular_spacing_is_rejected() {
        assert!(SoftwareReadingSeries::new(30.0, vec![(0.0, 1.0), (40.0, 1.0)]).is_err());
        assert!(SoftwareReadingSeries::new(30.0, vec![(0.0, 1.0), (32.0, 1.0)]).is_ok());
    }
}
