//! Two-into-one staircase mapping.
//!
//! The quantized source `x2` selects how many stages of the adder are
//! saturated at `V_R`; the continuous source `x1` drives the one active
//! stage linearly. Decoding is a floor/remainder pair on `v / V_R`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{normalize, Signal, ValueRange};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Folding {
    /// Every active stage rises with `x1`.
    #[default]
    None,
    /// Odd stages run `x1` downwards so the mapping is continuous at stage corners.
    Alternating,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AjsccParams {
    pub levels_l: usize,
    pub v_r: f64,
    pub x1_range: ValueRange,
    pub x2_range: ValueRange,
    #[serde(default)]
    pub folding: Folding,
}

impl Default for AjsccParams {
    fn default() -> Self {
        Self {
            levels_l: 11,
            v_r: 1.0,
            x1_range: ValueRange::unit(),
            x2_range: ValueRange::unit(),
            folding: Folding::None,
        }
    }
}

impl AjsccParams {
    pub fn validate(&self) -> Result<()> {
        if self.levels_l < 2 {
            return Err(Error::param("levels_l", "need at least 2 stages"));
        }
        if !(self.v_r.is_finite() && self.v_r > 0.0) {
            return Err(Error::param("v_r", "must be positive and finite"));
        }
        self.x1_range.validate()?;
        self.x2_range.validate()
    }

    /// Top of the encoded range, `L * V_R`.
    pub fn v_max(&self) -> f64 {
        self.levels_l as f64 * self.v_r
    }

    fn top_level(&self) -> usize {
        self.levels_l - 1
    }

    /// Spacing of the `x2` reconstruction grid.
    pub fn x2_step(&self) -> f64 {
        self.x2_range.width() / self.top_level() as f64
    }

    /// Grid value of level `m`.
    pub fn x2_level_value(&self, m: usize) -> f64 {
        self.x2_range.denormalize(m as f64 / self.top_level() as f64)
    }

    /// Stage index a voltage falls into, `floor(v / V_R)` clamped to `0..L`.
    pub fn level_of_voltage(&self, v: f64) -> usize {
        let m = (v.clamp(0.0, self.v_max()) / self.v_r).floor() as usize;
        m.min(self.top_level())
    }
}

/// Level index `M` for `x2`; ties round half up.
pub fn quantize_x2(x2: f64, p: &AjsccParams) -> usize {
    let scaled = normalize(x2, p.x2_range).value * p.top_level() as f64;
    ((scaled + 0.5).floor() as usize).min(p.top_level())
}

pub fn encode(x1: f64, x2: f64, p: &AjsccParams) -> f64 {
    let m = quantize_x2(x2, p);
    let u = normalize(x1, p.x1_range).value;
    let within = match p.folding {
        Folding::Alternating if m % 2 == 1 => 1.0 - u,
        _ => u,
    };
    (m as f64 + within) * p.v_r
}

pub fn decode(v: f64, p: &AjsccParams) -> (f64, f64) {
    let v = v.clamp(0.0, p.v_max());
    let m = p.level_of_voltage(v);
    let r = v - m as f64 * p.v_r;
    let mut u = (r / p.v_r).clamp(0.0, 1.0);
    if p.folding == Folding::Alternating && m % 2 == 1 {
        u = 1.0 - u;
    }
    (p.x1_range.denormalize(u), p.x2_level_value(m))
}

/// Sample-wise [`encode`] over two aligned signals.
pub fn encode_signals(x1: &Signal, x2: &Signal, p: &AjsccParams) -> Result<Signal> {
    p.validate()?;
    if x1.len() != x2.len() {
        return Err(Error::LengthMismatch {
            expected: x1.len(),
            actual: x2.len(),
        });
    }
    if x1.sample_rate_hz() != x2.sample_rate_hz() {
        return Err(Error::RateMismatch {
            a: x1.sample_rate_hz(),
            b: x2.sample_rate_hz(),
        });
    }
    let v = x1
        .samples()
        .iter()
        .zip(x2.samples())
        .map(|(&a, &b)| encode(a, b, p))
        .collect();
    Signal::with_start(v, x1.sample_rate_hz(), x1.t0_s())
}

/// Sample-wise [`decode`], returning `(x1_hat, x2_hat)`.
pub fn decode_signal(v: &Signal, p: &AjsccParams) -> Result<(Signal, Signal)> {
    p.validate()?;
    let (a, b): (Vec<f64>, Vec<f64>) = v.samples().iter().map(|&s| decode(s, p)).unzip();
    Ok((
        Signal::with_start(a, v.sample_rate_hz(), v.t0_s())?,
        Signal::with_start(b, v.sample_rate_hz(), v.t0_s())?,
    ))
}

/// How many samples of `x2` fall on each level.
pub fn stage_occupancy(x2: &[f64], p: &AjsccParams) -> Vec<usize> {
    let mut counts = vec![0; p.levels_l];
    for &x in x2 {
        counts[quantize_x2(x, p)] += 1;
    }
    counts
}
