//! Cluster-head receiver: per-window FFT, peak search inside each sensor's
//! band, and the linear frequency-to-voltage map.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::link::SensorBand;
use crate::signal::Signal;

pub const MIN_WINDOW: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowFn {
    #[default]
    Rectangular,
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    None,
    Parabolic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverParams {
    pub fs_hz: f64,
    pub ns: usize,
    pub window_fn: WindowFn,
    pub interpolation: Interpolation,
    pub bands: Vec<SensorBand>,
}

impl ReceiverParams {
    pub fn new(bands: Vec<SensorBand>) -> Self {
        Self {
            fs_hz: 500e3,
            ns: 5000,
            window_fn: WindowFn::Rectangular,
            interpolation: Interpolation::None,
            bands,
        }
    }

    /// Bin spacing `fs / ns`.
    pub fn resolution_hz(&self) -> f64 {
        self.fs_hz / self.ns as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fs_hz.is_finite() && self.fs_hz > 0.0) {
            return Err(Error::param("fs_hz", "must be positive"));
        }
        if self.ns < MIN_WINDOW {
            return Err(Error::param(
                "ns",
                format!("window of {} samples is below the minimum {MIN_WINDOW}", self.ns),
            ));
        }
        for b in &self.bands {
            b.validate(self.fs_hz)?;
        }
        Ok(())
    }
}

/// Which bin won and the frequency reported for it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub bin: usize,
    pub freq_hz: f64,
}

/// Reusable FFT plan and scratch for one window size.
pub struct SpectrumAnalyzer {
    ns: usize,
    fft: Arc<dyn Fft<f64>>,
    taper: Option<Vec<f64>>,
    buf: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl SpectrumAnalyzer {
    pub fn new(ns: usize, window_fn: WindowFn) -> Result<Self> {
        if ns < MIN_WINDOW {
            return Err(Error::param("ns", format!("window must be at least {MIN_WINDOW}")));
        }
        let fft = FftPlanner::new().plan_fft_forward(ns);
        let taper = match window_fn {
            WindowFn::Rectangular => None,
            // periodic Hann
            WindowFn::Hann => Some(
                (0..ns)
                    .map(|n| 0.5 * (1.0 - (2.0 * PI * n as f64 / ns as f64).cos()))
                    .collect(),
            ),
        };
        let scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
        Ok(Self {
            ns,
            fft,
            taper,
            buf: vec![Complex::default(); ns],
            scratch,
        })
    }

    pub fn ns(&self) -> usize {
        self.ns
    }

    /// One-sided magnitude spectrum, `ns / 2 + 1` bins.
    pub fn spectrum(&mut self, window: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.ns / 2 + 1];
        self.spectrum_into(window, &mut out)?;
        Ok(out)
    }

    pub fn spectrum_into(&mut self, window: &[f64], out: &mut [f64]) -> Result<()> {
        if window.len() != self.ns {
            return Err(Error::LengthMismatch {
                expected: self.ns,
                actual: window.len(),
            });
        }
        match &self.taper {
            None => {
                for (b, &x) in self.buf.iter_mut().zip(window) {
                    *b = Complex::new(x, 0.0);
                }
            }
            Some(w) => {
                for ((b, &x), &t) in self.buf.iter_mut().zip(window).zip(w) {
                    *b = Complex::new(x * t, 0.0);
                }
            }
        }
        self.fft.process_with_scratch(&mut self.buf, &mut self.scratch);
        for (o, c) in out.iter_mut().zip(&self.buf[..self.ns / 2 + 1]) {
            *o = c.norm();
        }
        Ok(())
    }
}

/// Convenience one-shot spectrum.
pub fn spectrum(window: &[f64], window_fn: WindowFn) -> Result<Vec<f64>> {
    SpectrumAnalyzer::new(window.len(), window_fn)?.spectrum(window)
}

/// Inclusive bin range covered by a band.
pub fn band_bins(band: &SensorBand, fs_hz: f64, ns: usize) -> Result<(usize, usize)> {
    let bin_hz = fs_hz / ns as f64;
    let lo = (band.f_base_hz / bin_hz - 1e-9).ceil().max(0.0) as usize;
    let hi = ((band.f_top_hz() / bin_hz + 1e-9).floor() as usize).min(ns / 2);
    if lo > hi {
        return Err(Error::param(
            "bands",
            format!("sensor {} band contains no FFT bin at ns = {ns}", band.sensor_id),
        ));
    }
    Ok((lo, hi))
}

/// Maximum-magnitude bin inside the band; ties go to the lower bin.
pub fn detect_peak(spec: &[f64], band: &SensorBand, p: &ReceiverParams) -> Result<Peak> {
    let (lo, hi) = band_bins(band, p.fs_hz, p.ns)?;
    if hi >= spec.len() {
        return Err(Error::LengthMismatch {
            expected: p.ns / 2 + 1,
            actual: spec.len(),
        });
    }
    let mut best = lo;
    for k in lo + 1..=hi {
        if spec[k] > spec[best] {
            best = k;
        }
    }
    let mut offset = 0.0;
    if p.interpolation == Interpolation::Parabolic && best > 0 && best + 1 < spec.len() {
        let (a, b, c) = (spec[best - 1], spec[best], spec[best + 1]);
        let denom = a - 2.0 * b + c;
        if denom != 0.0 {
            offset = (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
        }
    }
    Ok(Peak {
        bin: best,
        freq_hz: (best as f64 + offset) * p.resolution_hz(),
    })
}

/// `(f - f_base) / kf`, clamped to `[0, v_max]`.
pub fn freq_to_voltage(f_hz: f64, band: &SensorBand, kf_hz_per_v: f64, v_max: f64) -> f64 {
    ((f_hz - band.f_base_hz) / kf_hz_per_v).clamp(0.0, v_max)
}

/// Recovered encoded-voltage stream of one sensor plus the winning bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Demodulated {
    pub sensor_id: u32,
    pub voltages: Signal,
    pub peak_bins: Vec<usize>,
}

/// Splits `rx` into consecutive `ns`-sample windows (a trailing partial
/// window is dropped) and recovers one voltage per window per band.
pub fn demodulate_stream(
    rx: &Signal,
    p: &ReceiverParams,
    kf_hz_per_v: f64,
    v_max: f64,
) -> Result<Vec<Demodulated>> {
    p.validate()?;
    if !(kf_hz_per_v.is_finite() && kf_hz_per_v > 0.0) {
        return Err(Error::param("kf_hz_per_v", "must be positive"));
    }
    if rx.sample_rate_hz() != p.fs_hz {
        return Err(Error::RateMismatch {
            a: rx.sample_rate_hz(),
            b: p.fs_hz,
        });
    }
    if rx.len() < p.ns {
        return Err(Error::param(
            "ns",
            format!("recording of {} samples is shorter than one window of {}", rx.len(), p.ns),
        ));
    }
    let windows = rx.len() / p.ns;
    let mut analyzer = SpectrumAnalyzer::new(p.ns, p.window_fn)?;
    let mut spec = vec![0.0; p.ns / 2 + 1];
    let mut volts: Vec<Vec<f64>> = vec![Vec::with_capacity(windows); p.bands.len()];
    let mut bins: Vec<Vec<usize>> = vec![Vec::with_capacity(windows); p.bands.len()];
    for w in rx.samples().chunks_exact(p.ns) {
        analyzer.spectrum_into(w, &mut spec)?;
        for (i, band) in p.bands.iter().enumerate() {
            let peak = detect_peak(&spec, band, p)?;
            volts[i].push(freq_to_voltage(peak.freq_hz, band, kf_hz_per_v, v_max));
            bins[i].push(peak.bin);
        }
    }
    let out_rate = p.fs_hz / p.ns as f64;
    p.bands
        .iter()
        .zip(volts.into_iter().zip(bins))
        .map(|(band, (v, b))| {
            Ok(Demodulated {
                sensor_id: band.sensor_id,
                voltages: Signal::with_start(v, out_rate, rx.t0_s())?,
                peak_bins: b,
            })
        })
        .collect()
}
