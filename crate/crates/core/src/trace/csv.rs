use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PowerTrace, TraceError, TraceMeta};

pub const CSV_HEADER: &str = "t_s,current_mA,voltage_V";

/// JSON metadata written next to an exported trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSidecar {
    pub trace_id: String,
    pub device_id: String,
    pub job_id: Option<String>,
    pub voltage: f64,
    pub sample_rate: f64,
    pub sample_count: usize,
    pub started_at: f64,
    pub faulted: bool,
}

impl TraceSidecar {
    pub fn of(trace: &PowerTrace) -> Self {
        let meta = trace.meta();
        Self {
            trace_id: meta.trace_id.clone(),
            device_id: meta.device_id.clone(),
            job_id: meta.job_id.clone(),
            voltage: trace.voltage(),
            sample_rate: trace.sample_rate(),
            sample_count: trace.len(),
            started_at: meta.started_at,
            faulted: trace.fault().is_some(),
        }
    }

    pub fn meta(&self) -> TraceMeta {
        TraceMeta {
            trace_id: self.trace_id.clone(),
            device_id: self.device_id.clone(),
            job_id: self.job_id.clone(),
            started_at: self.started_at,
        }
    }
}

/// Writes the sealed trace as CSV. Returns the number of bytes written.
pub fn write_csv<W: Write>(trace: &PowerTrace, out: W) -> Result<usize, TraceError> {
    if !trace.is_sealed() {
        return Err(TraceError::NotSealed(trace.id().to_string()));
    }
    let mut out = CountingWriter { inner: out, count: 0 };
    writeln!(out, "{CSV_HEADER}")?;
    let voltage = format!("{:.3}", trace.voltage());
    for s in trace.samples() {
        writeln!(out, "{:.6},{:.3},{}", s.t, s.current, voltage)?;
    }
    out.flush()?;
    Ok(out.count)
}

/// Writes `trace` to `path` as CSV. Returns the byte count.
pub fn export_csv(trace: &PowerTrace, path: impl AsRef<Path>) -> Result<usize, TraceError> {
    if !trace.is_sealed() {
        return Err(TraceError::NotSealed(trace.id().to_string()));
    }
    let file = File::create(path)?;
    write_csv(trace, BufWriter::new(file))
}

/// Parses an exported CSV back into a sealed trace.
///
/// The sample rate is taken from `rate_hint` when given, otherwise inferred
/// from the first two timestamps. Every timestamp must sit on its tick to
/// within the printed precision.
pub fn read_csv<R: Read>(input: R, meta: TraceMeta, rate_hint: Option<f64>) -> Result<PowerTrace, TraceError> {
    let mut reader = ::csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(input);
    let mut rows: Vec<(f64, f64, f64)> = Vec::new();
    let mut saw_header = false;
    for (i, record) in reader.records().enumerate() {
        let line = i + 1;
        let record = record.map_err(|e| TraceError::Csv { line, reason: e.to_string() })?;
        if i == 0 {
            let header: Vec<&str> = record.iter().collect();
            if header.join(",") != CSV_HEADER {
                return Err(TraceError::Csv { line, reason: format!("expected header {CSV_HEADER:?}") });
            }
            saw_header = true;
            continue;
        }
        if record.len() != 3 {
            return Err(TraceError::Csv { line, reason: format!("expected 3 fields, got {}", record.len()) });
        }
        let field = |k: usize| -> Result<f64, TraceError> {
            let v: f64 = record[k]
                .trim()
                .parse()
                .map_err(|_| TraceError::Csv { line, reason: format!("bad number {:?}", &record[k]) })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(TraceError::Csv { line, reason: "non-finite value".into() })
            }
        };
        rows.push((field(0)?, field(1)?, field(2)?));
    }
    if !saw_header {
        return Err(TraceError::Csv { line: 1, reason: "missing header".into() });
    }

    let rate = match (rate_hint, rows.len()) {
        (Some(r), _) => r,
        (None, n) if n >= 2 => {
            let dt = rows[1].0 - rows[0].0;
            if dt <= 0.0 {
                return Err(TraceError::Csv { line: 3, reason: "timestamps must increase".into() });
            }
            // the exporter prints 6 decimals; recover the rate rounded to a whole Hz
            (1.0 / dt).round()
        }
        (None, _) => return Err(TraceError::Invalid("cannot infer sample rate from fewer than two samples".into())),
    };
    if !(rate.is_finite() && rate > 0.0) {
        return Err(TraceError::Invalid(format!("bad sample rate {rate}")));
    }

    let voltage = rows.first().map(|r| r.2);
    let mut currents = Vec::with_capacity(rows.len());
    for (i, &(t, current, v)) in rows.iter().enumerate() {
        let line = i + 2;
        let expected = i as f64 / rate;
        if (t - expected).abs() > 1e-6 {
            return Err(TraceError::Csv { line, reason: format!("timestamp {t} off its tick {expected}") });
        }
        if Some(v) != voltage {
            return Err(TraceError::Csv { line, reason: "voltage changes within trace".into() });
        }
        if current < 0.0 {
            return Err(TraceError::Csv { line, reason: "negative current".into() });
        }
        currents.push(current);
    }
    // an empty trace keeps no voltage column; fall back to a nominal rail
    let voltage = voltage.unwrap_or(1.0);
    PowerTrace::from_currents(meta, voltage, rate, currents)
}

struct CountingWriter<W> {
    inner: W,
    count: usize,
}

impl<W: Write> Write for CountingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.count += n;
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}
