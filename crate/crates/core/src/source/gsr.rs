//! Synthetic galvanic skin response: tonic level, linear drift and
//! double-exponential phasic responses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{Signal, ValueRange};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhasicEvent {
    pub onset_s: f64,
    pub amplitude: f64,
    pub rise_s: f64,
    pub decay_s: f64,
}

impl PhasicEvent {
    /// Response `t` seconds after onset (zero before it).
    pub fn response(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        self.amplitude * (1.0 - (-t / self.rise_s).exp()) * (-t / self.decay_s).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GsrParams {
    pub tonic_level: f64,
    pub drift_rate_per_s: f64,
    pub phasic_events: Vec<PhasicEvent>,
    /// Extra responses at random onsets, drawn from `seed`; 0 disables them.
    pub random_event_rate_hz: f64,
    pub range: ValueRange,
    #[serde(skip)]
    pub duration_s: f64,
    #[serde(skip)]
    pub sample_rate_hz: f64,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for GsrParams {
    fn default() -> Self {
        let ev = |onset_s, amplitude, rise_s, decay_s| PhasicEvent {
            onset_s,
            amplitude,
            rise_s,
            decay_s,
        };
        Self {
            tonic_level: 0.22,
            drift_rate_per_s: 0.002,
            phasic_events: vec![
                ev(4.0, 0.45, 1.0, 6.0),
                ev(17.0, 0.70, 1.5, 8.0),
                ev(33.0, 0.40, 0.8, 5.0),
                ev(46.0, 0.55, 1.2, 7.0),
            ],
            random_event_rate_hz: 0.0,
            range: ValueRange::unit(),
            duration_s: 60.0,
            sample_rate_hz: 1000.0,
            seed: 0,
        }
    }
}

impl GsrParams {
    pub fn validate(&self) -> Result<()> {
        self.range.validate()?;
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::param("sample_rate_hz", "must be positive"));
        }
        if !(self.duration_s.is_finite() && self.duration_s * self.sample_rate_hz >= 1.0) {
            return Err(Error::param(
                "duration_s",
                format!("duration {} s is too short for one sample", self.duration_s),
            ));
        }
        if !(self.random_event_rate_hz.is_finite() && self.random_event_rate_hz >= 0.0) {
            return Err(Error::param("random_event_rate_hz", "must be non-negative"));
        }
        for e in &self.phasic_events {
            if !(e.rise_s > 0.0 && e.decay_s > 0.0) {
                return Err(Error::param(
                    "phasic_events",
                    "rise and decay time constants must be positive",
                ));
            }
        }
        Ok(())
    }

    /// Configured events plus the random ones drawn from `seed`.
    pub fn all_events(&self) -> Vec<PhasicEvent> {
        let mut events = self.phasic_events.clone();
        if self.random_event_rate_hz > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            let count = (self.random_event_rate_hz * self.duration_s).round() as usize;
            for _ in 0..count {
                events.push(PhasicEvent {
                    onset_s: rng.random_range(0.0..self.duration_s),
                    amplitude: rng.random_range(0.05..0.2) * self.range.width(),
                    rise_s: rng.random_range(0.5..2.0),
                    decay_s: rng.random_range(3.0..10.0),
                });
            }
        }
        events
    }
}

pub fn gen_gsr(p: &GsrParams) -> Result<Signal> {
    p.validate()?;
    let events = p.all_events();
    let n = (p.duration_s * p.sample_rate_hz).floor() as usize;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / p.sample_rate_hz;
        let phasic: f64 = events.iter().map(|e| e.response(t - e.onset_s)).sum();
        let x = p.tonic_level + p.drift_rate_per_s * t + phasic;
        if !p.range.contains(x) {
            return Err(Error::param(
                "gsr",
                format!(
                    "value {x} at t = {t} s leaves the declared range [{}, {}]",
                    p.range.lo, p.range.hi
                ),
            ));
        }
        out.push(x);
    }
    Signal::new(out, p.sample_rate_hz)
}
