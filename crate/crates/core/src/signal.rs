//! Uniformly sampled time series, value ranges and the two-column CSV format.
//!
//! Every stage of the link exchanges [`Signal`]s. On disk a signal is a CSV
//! file with a single `time_s,value` header line; the sample rate is not
//! stored but recovered from the time column.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "time_s,value";

/// Largest relative deviation of one sample interval from the median interval.
const MAX_INTERVAL_DEVIATION: f64 = 1e-6;

/// A finite, uniformly sampled, real-valued time series.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    samples: Vec<f64>,
    sample_rate_hz: f64,
    t0_s: f64,
}

impl Signal {
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64) -> Result<Self> {
        Self::with_start(samples, sample_rate_hz, 0.0)
    }

    pub fn with_start(samples: Vec<f64>, sample_rate_hz: f64, t0_s: f64) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::param(
                "sample_rate_hz",
                format!("must be positive and finite, got {sample_rate_hz}"),
            ));
        }
        if !t0_s.is_finite() {
            return Err(Error::param("t0_s", "must be finite"));
        }
        if let Some(index) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            samples,
            sample_rate_hz,
            t0_s,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn t0_s(&self) -> f64 {
        self.t0_s
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    /// Time stamp of sample `i`.
    pub fn time_of(&self, i: usize) -> f64 {
        self.t0_s + i as f64 / self.sample_rate_hz
    }

    /// Builds a signal with the same timing from new sample values.
    pub fn map(&self, f: impl FnMut(f64) -> f64) -> Result<Signal> {
        Signal::with_start(
            self.samples.iter().copied().map(f).collect(),
            self.sample_rate_hz,
            self.t0_s,
        )
    }

    /// Value at time `t` by linear interpolation, clamped to the end samples.
    pub fn interpolate(&self, t: f64) -> f64 {
        let n = self.samples.len();
        if n == 0 {
            return 0.0;
        }
        let pos = (t - self.t0_s) * self.sample_rate_hz;
        if pos <= 0.0 {
            return self.samples[0];
        }
        let i = pos.floor() as usize;
        if i + 1 >= n {
            return self.samples[n - 1];
        }
        let frac = pos - i as f64;
        self.samples[i] + frac * (self.samples[i + 1] - self.samples[i])
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io_err = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = File::create(path).map_err(io_err)?;
        let mut w = BufWriter::new(file);
        self.write_csv_to(&mut w).map_err(io_err)?;
        w.flush().map_err(io_err)
    }

    /// Writes the CSV text. `{}` on f64 prints the shortest string that
    /// parses back to the same value, so the roundtrip is exact.
    pub fn write_csv_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for (i, x) in self.samples.iter().enumerate() {
            writeln!(w, "{},{}", self.time_of(i), x)?;
        }
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Signal> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::read_csv_from(BufReader::new(file), path)
    }

    pub fn read_csv_from(reader: impl BufRead, path: &Path) -> Result<Signal> {
        let parse_err = |line: usize, reason: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let mut times = Vec::new();
        let mut values = Vec::new();
        let mut saw_header = false;
        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|source| Error::Io {
                path: path.to_path_buf(),
                source,
            })?;
            let line = line.trim();
            if !saw_header {
                if line != CSV_HEADER {
                    return Err(parse_err(
                        lineno,
                        format!("expected header `{CSV_HEADER}`, found `{line}`"),
                    ));
                }
                saw_header = true;
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let (t, v) = line
                .split_once(',')
                .ok_or_else(|| parse_err(lineno, "expected two comma-separated columns".into()))?;
            let t: f64 = t
                .trim()
                .parse()
                .map_err(|e| parse_err(lineno, format!("bad time value `{t}`: {e}")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|e| parse_err(lineno, format!("bad sample value `{v}`: {e}")))?;
            if !t.is_finite() || !v.is_finite() {
                return Err(parse_err(lineno, "non-finite value".into()));
            }
            if let Some(&prev) = times.last() {
                if t <= prev {
                    return Err(parse_err(
                        lineno,
                        format!("time column not increasing ({t} after {prev})"),
                    ));
                }
            }
            times.push(t);
            values.push(v);
        }
        if !saw_header {
            return Err(parse_err(1, "missing header".into()));
        }
        if times.len() < 2 {
            return Err(parse_err(
                times.len() + 1,
                "at least two samples are needed to infer the sample rate".into(),
            ));
        }

        let mut dts: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
        let mut sorted = dts.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        for (i, dt) in dts.drain(..).enumerate() {
            if ((dt - median) / median).abs() > MAX_INTERVAL_DEVIATION {
                // data line i+1 sits on file line i+3 (header + 1-based)
                return Err(parse_err(
                    i + 3,
                    format!("sample interval {dt} s differs from median {median} s"),
                ));
            }
        }
        let span = times[times.len() - 1] - times[0];
        let rate = snap_rate((times.len() - 1) as f64 / span);
        Signal::with_start(values, rate, times[0])
    }
}

/// Rounds an estimated rate to 12 significant digits when that is within
/// 1e-9 relative, removing the text-rounding noise of the time column.
fn snap_rate(rate: f64) -> f64 {
    let snapped: f64 = format!("{rate:.11e}").parse().unwrap_or(rate);
    if ((snapped - rate) / rate).abs() < 1e-9 {
        snapped
    } else {
        rate
    }
}

/// Closed interval `[lo, hi]` with `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueRange {
    pub lo: f64,
    pub hi: f64,
}

impl ValueRange {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        let r = Self { lo, hi };
        r.validate()?;
        Ok(r)
    }

    pub fn unit() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::param(
                "range",
                format!("need finite lo < hi, got [{}, {}]", self.lo, self.hi),
            ));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    /// Maps `u` in `[0, 1]` back into the range.
    pub fn denormalize(&self, u: f64) -> f64 {
        self.lo + u * self.width()
    }
}

/// Result of [`normalize`]: the value in `[0, 1]` and whether it was clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalized {
    pub value: f64,
    pub clamped: bool,
}

pub fn normalize(x: f64, r: ValueRange) -> Normalized {
    let u = (x - r.lo) / (r.hi - r.lo);
    if u < 0.0 {
        Normalized {
            value: 0.0,
            clamped: true,
        }
    } else if u > 1.0 {
        Normalized {
            value: 1.0,
            clamped: true,
        }
    } else {
        Normalized {
            value: u,
            clamped: false,
        }
    }
}

/// Normalizes every sample, returning the values and the clamp count.
pub fn normalize_all(xs: &[f64], r: ValueRange) -> (Vec<f64>, usize) {
    let mut clamped = 0;
    let out = xs
        .iter()
        .map(|&x| {
            let n = normalize(x, r);
            clamped += usize::from(n.clamped);
            n.value
        })
        .collect();
    (out, clamped)
}
