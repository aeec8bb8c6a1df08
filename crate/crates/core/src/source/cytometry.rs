//! Impedance-cytometry readout: bead-transit pulses on a resistive channel,
//! excited at `f0` and recovered by a lock-in (mix + low-pass) chain.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::lowpass::ButterworthLowpass;
use crate::error::{Error, Result};
use crate::signal::Signal;

/// Gaussian bumps are evaluated out to this many standard deviations.
const PULSE_SUPPORT_SIGMAS: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulsePolarity {
    #[default]
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CytometryParams {
    pub f0_hz: f64,
    pub excitation_amplitude_v: f64,
    pub baseline_r_ohm: f64,
    /// Resistance change while a bead sits between the electrodes.
    pub delta_r_ohm: f64,
    pub rf_ohm: f64,
    /// Full width at half maximum of one transit pulse.
    pub pulse_width_s: f64,
    pub event_rate_hz: f64,
    pub lpf_cutoff_hz: f64,
    /// Envelope level with no bead present (residual electrode imbalance).
    pub baseline_envelope: f64,
    pub polarity: PulsePolarity,
    /// Simulation rate of the excitation/mixing stage.
    pub carrier_rate_hz: f64,
    #[serde(skip)]
    pub duration_s: f64,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for CytometryParams {
    fn default() -> Self {
        Self {
            f0_hz: 500e3,
            excitation_amplitude_v: 0.5,
            baseline_r_ohm: 100e3,
            delta_r_ohm: 1e3,
            rf_ohm: 10e6,
            pulse_width_s: transit_time_s(0.1, 30.0, 20.0, 30.0 + 7.8),
            event_rate_hz: 1.0,
            lpf_cutoff_hz: 10e3,
            baseline_envelope: 0.002,
            polarity: PulsePolarity::Positive,
            carrier_rate_hz: 2e6,
            duration_s: 60.0,
            seed: 0,
        }
    }
}

/// Time for a bead to cross `path_um` of a rectangular channel at a given
/// volumetric flow rate, assuming plug flow.
pub fn transit_time_s(flow_ul_per_min: f64, width_um: f64, height_um: f64, path_um: f64) -> f64 {
    let flow_m3_per_s = flow_ul_per_min * 1e-9 / 60.0;
    let area_m2 = width_um * height_um * 1e-12;
    let velocity = flow_m3_per_s / area_m2;
    path_um * 1e-6 / velocity
}

impl CytometryParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::param(name, format!("must be positive, got {v}")))
            }
        };
        positive("f0_hz", self.f0_hz)?;
        positive("baseline_r_ohm", self.baseline_r_ohm)?;
        positive("rf_ohm", self.rf_ohm)?;
        positive("pulse_width_s", self.pulse_width_s)?;
        positive("lpf_cutoff_hz", self.lpf_cutoff_hz)?;
        positive("carrier_rate_hz", self.carrier_rate_hz)?;
        if !self.excitation_amplitude_v.is_finite() {
            return Err(Error::param("excitation_amplitude_v", "must be finite"));
        }
        if !self.baseline_envelope.is_finite() {
            return Err(Error::param("baseline_envelope", "must be finite"));
        }
        if !(self.delta_r_ohm.is_finite() && self.delta_r_ohm >= 0.0) {
            return Err(Error::param("delta_r_ohm", "must be non-negative"));
        }
        if !(self.event_rate_hz.is_finite() && self.event_rate_hz >= 0.0) {
            return Err(Error::param("event_rate_hz", "must be non-negative"));
        }
        if self.f0_hz <= 2.0 * self.lpf_cutoff_hz {
            return Err(Error::param(
                "lpf_cutoff_hz",
                "excitation frequency must exceed twice the low-pass cutoff",
            ));
        }
        if self.pulse_width_s <= 1.0 / self.f0_hz {
            return Err(Error::param(
                "pulse_width_s",
                "pulse must span more than one excitation period",
            ));
        }
        if self.event_rate_hz * self.pulse_width_s >= 0.5 {
            return Err(Error::param(
                "event_rate_hz",
                "rate x pulse width must stay below 0.5 so pulses rarely overlap",
            ));
        }
        if !(self.duration_s.is_finite() && self.duration_s * self.carrier_rate_hz >= 1.0) {
            return Err(Error::param(
                "duration_s",
                format!("duration {} s is too short for one sample", self.duration_s),
            ));
        }
        Ok(())
    }

    /// Lock-in gain `R_f / R * V_exc`.
    pub fn gain(&self) -> f64 {
        self.rf_ohm / self.baseline_r_ohm * self.excitation_amplitude_v
    }

    /// Envelope height of one bead pulse, `±ΔR / R`.
    pub fn pulse_height(&self) -> f64 {
        let h = self.delta_r_ohm / self.baseline_r_ohm;
        match self.polarity {
            PulsePolarity::Positive => h,
            PulsePolarity::Negative => -h,
        }
    }

    pub fn pulse_sigma_s(&self) -> f64 {
        self.pulse_width_s / (2.0 * (2.0 * 2f64.ln()).sqrt())
    }

    fn carrier_samples(&self) -> usize {
        (self.duration_s * self.carrier_rate_hz).floor() as usize
    }
}

/// Bead arrival times on `[0, duration_s)`, a homogeneous Poisson process.
pub fn bead_arrivals(p: &CytometryParams) -> Result<Vec<f64>> {
    p.validate()?;
    if p.event_rate_hz == 0.0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let gaps = Exp::new(p.event_rate_hz).map_err(|e| Error::param("event_rate_hz", e.to_string()))?;
    let mut t = 0.0;
    let mut events = Vec::new();
    loop {
        t += gaps.sample(&mut rng);
        if t >= p.duration_s {
            break;
        }
        events.push(t);
    }
    Ok(events)
}

/// Evaluates the baseline-plus-pulses envelope for increasing times.
struct EnvelopeCursor<'a> {
    events: &'a [f64],
    first_live: usize,
    base: f64,
    height: f64,
    inv_two_var: f64,
    support: f64,
}

impl<'a> EnvelopeCursor<'a> {
    fn new(p: &CytometryParams, events: &'a [f64]) -> Self {
        let sigma = p.pulse_sigma_s();
        Self {
            events,
            first_live: 0,
            base: p.baseline_envelope,
            height: if p.delta_r_ohm == 0.0 { 0.0 } else { p.pulse_height() },
            inv_two_var: 1.0 / (2.0 * sigma * sigma),
            support: PULSE_SUPPORT_SIGMAS * sigma,
        }
    }

    #[inline]
    fn at(&mut self, t: f64) -> f64 {
        while self.first_live < self.events.len() && self.events[self.first_live] + self.support < t {
            self.first_live += 1;
        }
        let mut a = self.base;
        if self.height != 0.0 {
            for &te in &self.events[self.first_live..] {
                if te - self.support > t {
                    break;
                }
                let d = t - te;
                a += self.height * (-d * d * self.inv_two_var).exp();
            }
        }
        a
    }
}

/// Dimensionless impedance envelope sampled at `carrier_rate_hz`.
pub fn gen_impedance_envelope(p: &CytometryParams) -> Result<Signal> {
    let events = bead_arrivals(p)?;
    let mut cursor = EnvelopeCursor::new(p, &events);
    let fs = p.carrier_rate_hz;
    let a = (0..p.carrier_samples())
        .map(|n| cursor.at(n as f64 / fs))
        .collect();
    Signal::new(a, fs)
}

/// Excitation, transimpedance gain, mixer and low-pass, one sample at a time.
pub struct LockIn {
    gain: f64,
    carrier: Carrier,
    lpf: ButterworthLowpass,
    n: u64,
    primed: bool,
}

enum Carrier {
    /// One period of the carrier when `fs / f0` is an integer.
    Table(Vec<f64>),
    Direct { cycles_per_sample: f64 },
}

impl Carrier {
    #[inline]
    fn at(&self, n: u64) -> f64 {
        match self {
            Carrier::Table(t) => t[(n % t.len() as u64) as usize],
            Carrier::Direct { cycles_per_sample } => {
                (2.0 * PI * (n as f64 * cycles_per_sample).fract()).cos()
            }
        }
    }
}

impl LockIn {
    pub fn new(p: &CytometryParams, fs_hz: f64) -> Result<Self> {
        if fs_hz < 4.0 * p.f0_hz {
            return Err(Error::param(
                "carrier_rate_hz",
                format!(
                    "sample rate {fs_hz} Hz aliases the {} Hz excitation; need at least 4 x f0",
                    p.f0_hz
                ),
            ));
        }
        let ratio = fs_hz / p.f0_hz;
        let period = ratio.round();
        let carrier = if (ratio - period).abs() < 1e-12 * ratio && period <= 4096.0 {
            let period = period as usize;
            Carrier::Table(
                (0..period)
                    .map(|n| (2.0 * PI * n as f64 / period as f64).cos())
                    .collect(),
            )
        } else {
            Carrier::Direct {
                cycles_per_sample: p.f0_hz / fs_hz,
            }
        };
        Ok(Self {
            gain: p.gain(),
            carrier,
            lpf: ButterworthLowpass::new(p.lpf_cutoff_hz, fs_hz)?,
            n: 0,
            primed: false,
        })
    }

    /// Processes one envelope sample. The filter starts settled at the
    /// baseband level of the first sample so there is no start-up transient.
    #[inline]
    pub fn step(&mut self, envelope: f64) -> f64 {
        if !self.primed {
            self.lpf.settle(self.gain * envelope / 2.0);
            self.primed = true;
        }
        let c = self.carrier.at(self.n);
        self.n += 1;
        let received = self.gain * envelope * c;
        self.lpf.process(received * c)
    }
}

/// Runs an envelope through the lock-in chain; output ≈ `gain * A(t) / 2`.
pub fn lock_in_chain(envelope: &Signal, p: &CytometryParams) -> Result<Signal> {
    let mut chain = LockIn::new(p, envelope.sample_rate_hz())?;
    let out = envelope.samples().iter().map(|&a| chain.step(a)).collect();
    Signal::with_start(out, envelope.sample_rate_hz(), envelope.t0_s())
}

/// Envelope generation and lock-in detection streamed at `carrier_rate_hz`,
/// decimated to `output_rate_hz` by keeping every D-th sample. Equivalent to
/// `lock_in_chain(gen_impedance_envelope(p))` followed by decimation, without
/// holding the carrier-rate signal in memory.
pub fn synthesize_readout(p: &CytometryParams, output_rate_hz: f64) -> Result<Signal> {
    let events = bead_arrivals(p)?;
    let fs = p.carrier_rate_hz;
    let decim = decimation_factor(fs, output_rate_hz)?;
    let mut cursor = EnvelopeCursor::new(p, &events);
    let mut chain = LockIn::new(p, fs)?;
    let total = p.carrier_samples();
    let mut out = Vec::with_capacity(total / decim + 1);
    for n in 0..total {
        let y = chain.step(cursor.at(n as f64 / fs));
        if n % decim == 0 {
            out.push(y);
        }
    }
    Signal::new(out, fs / decim as f64)
}

pub(crate) fn decimation_factor(fs: f64, output_rate_hz: f64) -> Result<usize> {
    let ratio = fs / output_rate_hz;
    let d = ratio.round();
    if !(output_rate_hz > 0.0 && d >= 1.0 && (ratio - d).abs() <= 1e-9 * ratio) {
        return Err(Error::param(
            "source_rate_hz",
            format!("{output_rate_hz} Hz must divide the carrier rate {fs} Hz"),
        ));
    }
    Ok(d as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(duration_s: f64) -> CytometryParams {
        CytometryParams {
            duration_s,
            seed: 11,
            ..Default::default()
        }
    }

    /// Amplitude of the `f` component over a whole number of cycles.
    fn tone_amplitude(x: &[f64], f: f64, fs: f64) -> f64 {
        let (mut c, mut s) = (0.0, 0.0);
        for (n, &v) in x.iter().enumerate() {
            let ph = 2.0 * PI * f * n as f64 / fs;
            c += v * ph.cos();
            s += v * ph.sin();
        }
        2.0 * (c * c + s * s).sqrt() / x.len() as f64
    }

    #[test]
    fn default_transit_time_from_geometry() {
        let t = transit_time_s(0.1, 30.0, 20.0, 37.8);
        assert!((t - 0.013608).abs() < 1e-6, "{t}");
    }

    #[test]
    fn zero_delta_r_gives_flat_envelope() {
        let p = CytometryParams {
            delta_r_ohm: 0.0,
            ..short(0.05)
        };
        let env = gen_impedance_envelope(&p).unwrap();
        assert!(env.samples().iter().all(|&a| a == p.baseline_envelope));
    }

    #[test]
    fn zero_rate_gives_flat_envelope() {
        let p = CytometryParams {
            event_rate_hz: 0.0,
            ..short(0.05)
        };
        assert!(bead_arrivals(&p).unwrap().is_empty());
        let env = gen_impedance_envelope(&p).unwrap();
        assert!(env.samples().iter().all(|&a| a == p.baseline_envelope));
    }

    #[test]
    fn poisson_count_in_interval() {
        // mean 100; [50, 150] covers well beyond 99.99%
        let p = CytometryParams {
            event_rate_hz: 10.0,
            pulse_width_s: 0.01,
            ..short(10.0)
        };
        let n = bead_arrivals(&p).unwrap().len();
        assert!((50..=150).contains(&n), "{n}");
    }

    #[test]
    fn arrivals_reproducible() {
        let p = short(30.0);
        assert_eq!(bead_arrivals(&p).unwrap(), bead_arrivals(&p).unwrap());
        let q = CytometryParams { seed: 12, ..p.clone() };
        assert_ne!(bead_arrivals(&p).unwrap(), bead_arrivals(&q).unwrap());
    }

    #[test]
    fn too_short_duration_is_error() {
        let p = short(0.0);
        assert!(gen_impedance_envelope(&p).is_err());
    }

    #[test]
    fn invalid_params_rejected() {
        let bad = [
            CytometryParams { lpf_cutoff_hz: 300e3, ..short(0.01) },
            CytometryParams { pulse_width_s: 1e-6, ..short(0.01) },
            CytometryParams { delta_r_ohm: -1.0, ..short(0.01) },
            CytometryParams { event_rate_hz: 100.0, ..short(0.01) },
        ];
        for p in bad {
            assert!(p.validate().is_err(), "{p:?}");
        }
    }

    #[test]
    fn constant_envelope_gives_half_gain() {
        let p = short(0.01);
        let env = Signal::new(vec![0.3; 20_000], p.carrier_rate_hz).unwrap();
        let out = lock_in_chain(&env, &p).unwrap();
        let want = p.gain() * 0.3 / 2.0;
        for &y in &out.samples()[100..] {
            assert!(((y - want) / want).abs() < 0.01, "{y} vs {want}");
        }
    }

    #[test]
    fn zero_envelope_gives_zero() {
        let p = short(0.01);
        let env = Signal::new(vec![0.0; 1000], p.carrier_rate_hz).unwrap();
        assert!(lock_in_chain(&env, &p).unwrap().samples().iter().all(|&y| y == 0.0));
    }

    #[test]
    fn undersampled_carrier_is_error() {
        let p = short(0.01);
        let env = Signal::new(vec![1.0; 100], 3.0 * p.f0_hz).unwrap();
        assert!(lock_in_chain(&env, &p).is_err());
    }

    #[test]
    fn mixing_image_rejected_by_40_db() {
        // 5 f0 puts the 2 f0 image away from Nyquist so it is not nulled trivially.
        let p = short(0.01);
        let fs = 5.0 * p.f0_hz;
        let env = Signal::new(vec![1.0; 50_000], fs).unwrap();
        let out = lock_in_chain(&env, &p).unwrap();
        let tail = &out.samples()[10_000..];
        let dc = tail.iter().sum::<f64>() / tail.len() as f64;
        let image = tone_amplitude(tail, fs - 2.0 * p.f0_hz, fs);
        assert!(image / dc < 0.01, "image/dc = {}", image / dc);
    }

    #[test]
    fn gaussian_pulse_passes_at_half_gain() {
        let p = short(0.05);
        let fs = p.carrier_rate_hz;
        let sigma = p.pulse_sigma_s();
        let t_peak = 0.025;
        let env: Vec<f64> = (0..(0.05 * fs) as usize)
            .map(|n| {
                let d = n as f64 / fs - t_peak;
                (-d * d / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let out = lock_in_chain(&Signal::new(env, fs).unwrap(), &p).unwrap();
        let (imax, &ymax) = out
            .samples()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        let want = p.gain() / 2.0;
        assert!(((ymax - want) / want).abs() < 0.05);
        // group delay of a 10 kHz 4th-order Butterworth is well under 1 ms
        assert!((out.time_of(imax) - t_peak).abs() < 1e-3);
    }

    #[test]
    fn chain_is_linear() {
        let p = short(0.002);
        let fs = p.carrier_rate_hz;
        let a: Vec<f64> = (0..4000).map(|n| (n as f64 * 1e-3).sin()).collect();
        let b: Vec<f64> = (0..4000).map(|n| 0.5 + (n as f64 * 3e-3).cos()).collect();
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - 3.0 * y).collect();
        let ya = lock_in_chain(&Signal::new(a, fs).unwrap(), &p).unwrap();
        let yb = lock_in_chain(&Signal::new(b, fs).unwrap(), &p).unwrap();
        let ym = lock_in_chain(&Signal::new(mix, fs).unwrap(), &p).unwrap();
        let scale = ym.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..ym.len() {
            let want = 2.0 * ya.samples()[i] - 3.0 * yb.samples()[i];
            assert!((ym.samples()[i] - want).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn tone_envelope_follows_filter_response() {
        let p = short(0.02);
        let fs = p.carrier_rate_hz;
        let fm = 4e3; // below cutoff / 2
        let env: Vec<f64> = (0..40_000)
            .map(|n| (2.0 * PI * fm * n as f64 / fs).cos())
            .collect();
        let out = lock_in_chain(&Signal::new(env, fs).unwrap(), &p).unwrap();
        // analyze 25 whole cycles after the transient
        let tail = &out.samples()[15_000..15_000 + 12_500];
        let got = tone_amplitude(tail, fm, fs) / (p.gain() / 2.0);
        let ratio = (PI * fm / fs).tan() / (PI * p.lpf_cutoff_hz / fs).tan();
        let want = 1.0 / (1.0 + ratio.powi(8)).sqrt();
        assert!(((got - want) / want).abs() < 0.02, "{got} vs {want}");
    }

    #[test]
    fn streamed_readout_matches_composed_ops() {
        let p = CytometryParams {
            event_rate_hz: 20.0,
            pulse_width_s: 0.005,
            ..short(0.2)
        };
        let env = gen_impedance_envelope(&p).unwrap();
        let full = lock_in_chain(&env, &p).unwrap();
        let decim = full.samples().iter().step_by(2000).copied().collect::<Vec<_>>();
        let streamed = synthesize_readout(&p, 1000.0).unwrap();
        assert_eq!(streamed.samples(), &decim[..]);
        assert_eq!(streamed.sample_rate_hz(), 1000.0);
    }

    #[test]
    fn readout_rate_must_divide_carrier() {
        assert!(synthesize_readout(&short(0.01), 3000.0).is_err());
    }
}
