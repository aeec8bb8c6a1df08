//! Transmit side of the link: voltage-to-frequency modulation, frequency
//! division multiplexing of many sensors, and the additive noise channel.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::codec::AjsccParams;
use crate::error::{Error, Result};
use crate::signal::Signal;

/// Each sensor slot is split 1 : 8 : 1 into the gap below `f_base_hz`, the
/// span of the encoded range and the guard above the top tone.
const GUARD_DIVISOR: f64 = 10.0;

/// Frequency band of one sensor. The tone for 0 V sits at `f_base_hz` and
/// the band occupies `[f_base_hz, f_base_hz + band_width_hz]`, the top
/// `guard_hz` of which is kept free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorBand {
    pub sensor_id: u32,
    pub f_base_hz: f64,
    pub band_width_hz: f64,
    pub guard_hz: f64,
}

impl SensorBand {
    pub fn f_top_hz(&self) -> f64 {
        self.f_base_hz + self.band_width_hz
    }

    pub fn validate(&self, fs_hz: f64) -> Result<()> {
        if !(self.f_base_hz.is_finite() && self.f_base_hz > 0.0) {
            return Err(Error::param("f_base_hz", "must be positive"));
        }
        if !(self.band_width_hz.is_finite() && self.band_width_hz > 0.0) {
            return Err(Error::param("band_width_hz", "must be positive"));
        }
        if !(self.guard_hz.is_finite() && self.guard_hz >= 0.0) {
            return Err(Error::param("guard_hz", "must be non-negative"));
        }
        if self.f_top_hz() > fs_hz / 2.0 {
            return Err(Error::param(
                "band_width_hz",
                format!(
                    "sensor {} band ends at {} Hz, above Nyquist {} Hz",
                    self.sensor_id,
                    self.f_top_hz(),
                    fs_hz / 2.0
                ),
            ));
        }
        Ok(())
    }

    fn overlaps(&self, other: &SensorBand) -> bool {
        self.f_base_hz <= other.f_top_hz() && other.f_base_hz <= self.f_top_hz()
    }
}

/// Evenly splits `(0, fs/2]` into `n` slots. Returns the bands and the
/// frequency sensitivity that makes `v_max` span 80% of a slot.
pub fn default_band_plan(n: usize, fs_hz: f64, v_max: f64) -> Result<(Vec<SensorBand>, f64)> {
    if n == 0 {
        return Err(Error::param("sensors", "need at least one sensor"));
    }
    let slot = fs_hz / 2.0 / n as f64;
    let guard = slot / GUARD_DIVISOR;
    let span = slot - 2.0 * guard;
    let bands = (0..n)
        .map(|i| SensorBand {
            sensor_id: i as u32,
            f_base_hz: i as f64 * slot + guard,
            band_width_hz: span + guard,
            guard_hz: guard,
        })
        .collect();
    Ok((bands, span / v_max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FmLinkParams {
    pub fs_hz: f64,
    pub kf_hz_per_v: f64,
    pub sensors: Vec<SensorBand>,
    /// `f64::INFINITY` disables the noise.
    pub snr_db: f64,
    pub seed: u64,
    pub hold_window: usize,
}

impl FmLinkParams {
    /// Single-sensor link on the default band plan.
    pub fn default_for(codec: &AjsccParams) -> Self {
        let fs_hz = 500e3;
        let (sensors, kf_hz_per_v) =
            default_band_plan(1, fs_hz, codec.v_max()).expect("one sensor is a valid plan");
        Self {
            fs_hz,
            kf_hz_per_v,
            sensors,
            snr_db: f64::INFINITY,
            seed: 0,
            hold_window: 5000,
        }
    }

    pub fn validate(&self, v_max: f64) -> Result<()> {
        if !(self.fs_hz.is_finite() && self.fs_hz > 0.0) {
            return Err(Error::param("fs_hz", "must be positive"));
        }
        if !(self.kf_hz_per_v.is_finite() && self.kf_hz_per_v > 0.0) {
            return Err(Error::param("kf_hz_per_v", "must be positive"));
        }
        if self.hold_window == 0 {
            return Err(Error::param("hold_window", "must be at least one sample"));
        }
        if self.sensors.is_empty() {
            return Err(Error::param("sensors", "need at least one sensor band"));
        }
        let span = self.kf_hz_per_v * v_max;
        for (i, b) in self.sensors.iter().enumerate() {
            b.validate(self.fs_hz)?;
            if b.band_width_hz + 1e-9 * b.band_width_hz < span + b.guard_hz {
                return Err(Error::param(
                    "band_width_hz",
                    format!(
                        "sensor {} band {} Hz cannot hold the {} Hz swing plus {} Hz guard",
                        b.sensor_id, b.band_width_hz, span, b.guard_hz
                    ),
                ));
            }
            for other in &self.sensors[i + 1..] {
                if b.overlaps(other) {
                    return Err(Error::param(
                        "sensors",
                        format!("bands of sensors {} and {} overlap", b.sensor_id, other.sensor_id),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Continuous-phase FM: every encoded sample is held for `hold_window`
/// output samples at `f_base + kf * v`; the output is a unit cosine at `fs_hz`.
pub fn fm_modulate(encoded: &Signal, band: &SensorBand, p: &FmLinkParams) -> Result<Signal> {
    if encoded.is_empty() {
        return Err(Error::Empty("encoded signal"));
    }
    let hold = p.hold_window;
    let mut out = Vec::with_capacity(encoded.len() * hold);
    // phase in cycles, kept in [0, 1)
    let mut phase = 0.0f64;
    for (k, &v) in encoded.samples().iter().enumerate() {
        let f = band.f_base_hz + p.kf_hz_per_v * v;
        if !(f >= band.f_base_hz && f <= band.f_top_hz()) {
            return Err(Error::BandPlan {
                sample: k,
                freq_hz: f,
                lo_hz: band.f_base_hz,
                hi_hz: band.f_top_hz(),
            });
        }
        let step = f / p.fs_hz;
        for n in 0..hold {
            out.push((2.0 * PI * (phase + step * n as f64)).cos());
        }
        phase = (phase + step * hold as f64).fract();
    }
    Signal::with_start(out, p.fs_hz, encoded.t0_s())
}

/// Sums the sensor waveforms and scales by `1 / count`.
pub fn fdma_mux(tones: Vec<Signal>) -> Result<Signal> {
    let mut iter = tones.into_iter();
    let first = iter.next().ok_or(Error::Empty("no sensor waveforms to multiplex"))?;
    let (rate, t0) = (first.sample_rate_hz(), first.t0_s());
    let mut acc = first.into_samples();
    let mut count = 1usize;
    for tone in iter {
        if tone.len() != acc.len() {
            return Err(Error::LengthMismatch {
                expected: acc.len(),
                actual: tone.len(),
            });
        }
        if tone.sample_rate_hz() != rate {
            return Err(Error::RateMismatch {
                a: rate,
                b: tone.sample_rate_hz(),
            });
        }
        for (a, b) in acc.iter_mut().zip(tone.samples()) {
            *a += b;
        }
        count += 1;
    }
    if count > 1 {
        let n = count as f64;
        acc.iter_mut().for_each(|a| *a /= n);
    }
    Signal::with_start(acc, rate, t0)
}

pub fn mean_power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Adds white Gaussian noise at `snr_db` relative to the measured signal
/// power. An infinite SNR returns the input unchanged.
pub fn awgn(sig: Signal, snr_db: f64, seed: u64) -> Result<Signal> {
    if sig.is_empty() {
        return Err(Error::Empty("channel input"));
    }
    if snr_db.is_nan() {
        return Err(Error::param("snr_db", "must not be NaN"));
    }
    if snr_db == f64::INFINITY {
        return Ok(sig);
    }
    let sigma = (mean_power(sig.samples()) / 10f64.powf(snr_db / 10.0)).sqrt();
    let (rate, t0) = (sig.sample_rate_hz(), sig.t0_s());
    let mut x = sig.into_samples();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in &mut x {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += sigma * z;
    }
    Signal::with_start(x, rate, t0)
}

/// Adds `offsets[M]` to every sample whose stage index is `M`, modelling a
/// per-stage bias of the hardware adder.
pub fn stage_bias_impairment(encoded: &Signal, offsets: &[f64], p: &AjsccParams) -> Result<Signal> {
    if offsets.len() != p.levels_l {
        return Err(Error::LengthMismatch {
            expected: p.levels_l,
            actual: offsets.len(),
        });
    }
    encoded.map(|v| v + offsets[p.level_of_voltage(v)])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> FmLinkParams {
        FmLinkParams::default_for(&AjsccParams::default())
    }

    fn peak_bin(x: &[f64]) -> usize {
        // brute-force DFT magnitude over the first half
        let n = x.len();
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, &v) in x.iter().enumerate() {
                    let ph = -2.0 * PI * (k * i % n) as f64 / n as f64;
                    re += v * ph.cos();
                    im += v * ph.sin();
                }
                (k, re * re + im * im)
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0
    }

    #[test]
    fn default_plan_numbers() {
        let p = params();
        let b = &p.sensors[0];
        assert_eq!(b.f_base_hz, 25e3);
        assert_eq!(b.f_top_hz(), 250e3);
        assert!((p.kf_hz_per_v - 200e3 / 11.0).abs() < 1e-9);
        p.validate(11.0).unwrap();
    }

    #[test]
    fn eight_sensor_plan_is_disjoint() {
        let (sensors, kf) = default_band_plan(8, 500e3, 11.0).unwrap();
        let p = FmLinkParams { sensors, kf_hz_per_v: kf, ..params() };
        p.validate(11.0).unwrap();
    }

    #[test]
    fn overlapping_bands_rejected() {
        let mut p = params();
        let mut b = p.sensors[0].clone();
        b.sensor_id = 1;
        b.f_base_hz += 1000.0;
        b.band_width_hz -= 2000.0;
        p.sensors.push(b);
        assert!(p.validate(11.0).is_err());
    }

    #[test]
    fn zero_volts_is_base_tone() {
        let mut p = params();
        p.hold_window = 500;
        let enc = Signal::new(vec![0.0], 1000.0).unwrap();
        let tone = fm_modulate(&enc, &p.sensors[0], &p).unwrap();
        // 25 kHz at 500 kHz with 500 samples is bin 25
        assert_eq!(peak_bin(tone.samples()), 25);
    }

    #[test]
    fn constant_voltage_peak_within_half_bin() {
        let mut p = params();
        p.hold_window = 1000;
        let v = 3.3;
        let enc = Signal::new(vec![v], 500.0).unwrap();
        let tone = fm_modulate(&enc, &p.sensors[0], &p).unwrap();
        let f = p.sensors[0].f_base_hz + p.kf_hz_per_v * v;
        let bin_hz = p.fs_hz / 1000.0;
        let got = peak_bin(tone.samples()) as f64 * bin_hz;
        assert!((got - f).abs() <= bin_hz / 2.0);
    }

    #[test]
    fn phase_is_continuous_between_held_values() {
        let mut p = params();
        p.hold_window = 37;
        let enc = Signal::new(vec![1.0, 7.5, 2.0, 10.9], 10.0).unwrap();
        let tone = fm_modulate(&enc, &p.sensors[0], &p).unwrap();
        let f_max = p.sensors[0].f_base_hz + p.kf_hz_per_v * 10.9;
        let max_step = 2.0 * PI * f_max / p.fs_hz;
        let x = tone.samples();
        // |cos a - cos b| <= |a - b|
        for w in x.windows(2) {
            assert!((w[1] - w[0]).abs() <= max_step + 1e-12);
        }
    }

    #[test]
    fn unit_amplitude_and_rms() {
        let mut p = params();
        p.hold_window = 5000;
        let enc = Signal::new(vec![0.3, 4.1, 9.0, 2.2], 100.0).unwrap();
        let x = fm_modulate(&enc, &p.sensors[0], &p).unwrap();
        assert!(x.samples().iter().all(|v| v.abs() <= 1.0));
        let rms = mean_power(x.samples()).sqrt();
        assert!((rms - 0.5f64.sqrt()).abs() / 0.5f64.sqrt() < 1e-3);
    }

    #[test]
    fn out_of_band_voltage_is_error() {
        let p = params();
        let enc = Signal::new(vec![1.0, -0.5], 100.0).unwrap();
        match fm_modulate(&enc, &p.sensors[0], &p) {
            Err(Error::BandPlan { sample, .. }) => assert_eq!(sample, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mux_single_is_identity_and_rejects_empty() {
        let s = Signal::new(vec![0.1, -0.2, 0.3], 10.0).unwrap();
        assert_eq!(fdma_mux(vec![s.clone()]).unwrap(), s);
        assert!(fdma_mux(vec![]).is_err());
        let short = Signal::new(vec![0.0; 2], 10.0).unwrap();
        assert!(fdma_mux(vec![s, short]).is_err());
    }

    #[test]
    fn mux_shows_both_tones() {
        let (sensors, kf) = default_band_plan(2, 500e3, 11.0).unwrap();
        let p = FmLinkParams { sensors, kf_hz_per_v: kf, hold_window: 500, ..params() };
        let a = fm_modulate(&Signal::new(vec![2.0], 1e3).unwrap(), &p.sensors[0], &p).unwrap();
        let b = fm_modulate(&Signal::new(vec![6.0], 1e3).unwrap(), &p.sensors[1], &p).unwrap();
        let m = fdma_mux(vec![a, b]).unwrap();
        let bin_hz = 1000.0;
        let half = m.len() / 2;
        let mags: Vec<f64> = (0..=half)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, &v) in m.samples().iter().enumerate() {
                    let ph = -2.0 * PI * (k * i % m.len()) as f64 / m.len() as f64;
                    re += v * ph.cos();
                    im += v * ph.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect();
        for (band, v) in p.sensors.iter().zip([2.0, 6.0]) {
            let lo = (band.f_base_hz / bin_hz).ceil() as usize;
            let hi = (band.f_top_hz() / bin_hz).floor() as usize;
            let k = (lo..=hi.min(half)).max_by(|&i, &j| mags[i].total_cmp(&mags[j])).unwrap();
            let f = band.f_base_hz + kf * v;
            assert!((k as f64 * bin_hz - f).abs() <= bin_hz / 2.0);
        }
    }

    #[test]
    fn awgn_identity_when_disabled() {
        let s = Signal::new(vec![0.5, -0.5, 0.25], 10.0).unwrap();
        assert_eq!(awgn(s.clone(), f64::INFINITY, 1).unwrap(), s);
    }

    #[test]
    fn awgn_hits_configured_snr() {
        let n = 1_000_000;
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).cos()).collect();
        let s = Signal::new(x.clone(), 1e6).unwrap();
        let snr_db = 12.5;
        let y = awgn(s, snr_db, 99).unwrap();
        let noise: Vec<f64> = y.samples().iter().zip(&x).map(|(a, b)| a - b).collect();
        let mean = noise.iter().sum::<f64>() / n as f64;
        let var = noise.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1) as f64;
        let measured = 10.0 * (mean_power(&x) / var).log10();
        assert!((measured - snr_db).abs() < 0.1, "{measured}");
    }

    #[test]
    fn awgn_deterministic_and_seed_independent() {
        let n = 200_000;
        let s = Signal::new(vec![1.0; n], 1e3).unwrap();
        let a = awgn(s.clone(), 0.0, 5).unwrap();
        assert_eq!(a, awgn(s.clone(), 0.0, 5).unwrap());
        let b = awgn(s, 0.0, 6).unwrap();
        let na: Vec<f64> = a.samples().iter().map(|v| v - 1.0).collect();
        let nb: Vec<f64> = b.samples().iter().map(|v| v - 1.0).collect();
        let cross = na.iter().zip(&nb).map(|(x, y)| x * y).sum::<f64>();
        let norm = (na.iter().map(|x| x * x).sum::<f64>() * nb.iter().map(|x| x * x).sum::<f64>()).sqrt();
        assert!((cross / norm).abs() < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn stage_bias_examples() {
        let p = AjsccParams::default();
        let enc = Signal::new(vec![0.2, 0.9, 1.5, 5.5, 10.7], 100.0).unwrap();
        let zero = stage_bias_impairment(&enc, &[0.0; 11], &p).unwrap();
        assert_eq!(zero, enc);
        let shifted = stage_bias_impairment(&enc, &[0.05; 11], &p).unwrap();
        for (a, b) in shifted.samples().iter().zip(enc.samples()) {
            assert!((a - b - 0.05).abs() < 1e-15);
        }
        let mut level0 = [0.0; 11];
        level0[0] = 0.05;
        let only0 = stage_bias_impairment(&enc, &level0, &p).unwrap();
        for (a, b) in only0.samples().iter().zip(enc.samples()) {
            let expect_shift = p.level_of_voltage(*b) == 0;
            assert_eq!(a != b, expect_shift, "{b}");
        }
        assert!(stage_bias_impairment(&enc, &[0.0; 3], &p).is_err());
    }
}
