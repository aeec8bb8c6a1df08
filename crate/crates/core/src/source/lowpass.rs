//! Fourth-order Butterworth low-pass as two bilinear-transform biquads.

use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    s1: f64,
    s2: f64,
}

impl Biquad {
    /// Prewarped bilinear low-pass section with quality factor `q`.
    fn lowpass(cutoff_hz: f64, fs_hz: f64, q: f64) -> Self {
        let k = (PI * cutoff_hz / fs_hz).tan();
        let k2 = k * k;
        let norm = 1.0 / (1.0 + k / q + k2);
        let b0 = k2 * norm;
        Self {
            b0,
            b1: 2.0 * b0,
            b2: b0,
            a1: 2.0 * (k2 - 1.0) * norm,
            a2: (1.0 - k / q + k2) * norm,
            s1: 0.0,
            s2: 0.0,
        }
    }

    #[inline]
    fn process(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.s1;
        self.s1 = self.b1 * x - self.a1 * y + self.s2;
        self.s2 = self.b2 * x - self.a2 * y;
        y
    }

    /// Sets the state to the steady state for a constant input `c` (unit DC gain).
    fn settle(&mut self, c: f64) {
        self.s2 = (self.b2 - self.a2) * c;
        self.s1 = (self.b1 - self.a1) * c + self.s2;
    }
}

/// Fourth-order Butterworth-magnitude low-pass filter (direct form II transposed).
#[derive(Debug, Clone)]
pub struct ButterworthLowpass {
    sections: [Biquad; 2],
}

impl ButterworthLowpass {
    pub fn new(cutoff_hz: f64, fs_hz: f64) -> Result<Self> {
        if !(cutoff_hz > 0.0 && cutoff_hz < fs_hz / 2.0) {
            return Err(Error::param(
                "lpf_cutoff_hz",
                format!("cutoff {cutoff_hz} Hz must lie in (0, fs/2) for fs = {fs_hz} Hz"),
            ));
        }
        // Pole-pair quality factors of the 4th-order Butterworth prototype.
        let q1 = 1.0 / (2.0 * (PI / 8.0).cos());
        let q2 = 1.0 / (2.0 * (3.0 * PI / 8.0).cos());
        Ok(Self {
            sections: [
                Biquad::lowpass(cutoff_hz, fs_hz, q1),
                Biquad::lowpass(cutoff_hz, fs_hz, q2),
            ],
        })
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        let y = self.sections[0].process(x);
        self.sections[1].process(y)
    }

    pub fn settle(&mut self, c: f64) {
        for s in &mut self.sections {
            s.settle(c);
        }
    }

    /// Magnitude response evaluated from the filter coefficients.
    pub fn magnitude_at(&self, f_hz: f64, fs_hz: f64) -> f64 {
        let w = 2.0 * PI * f_hz / fs_hz;
        self.sections
            .iter()
            .map(|s| {
                // H(e^{jw}) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)
                let (c1, s1) = (w.cos(), -w.sin());
                let (c2, s2) = ((2.0 * w).cos(), -(2.0 * w).sin());
                let nr = s.b0 + s.b1 * c1 + s.b2 * c2;
                let ni = s.b1 * s1 + s.b2 * s2;
                let dr = 1.0 + s.a1 * c1 + s.a2 * c2;
                let di = s.a1 * s1 + s.a2 * s2;
                ((nr * nr + ni * ni) / (dr * dr + di * di)).sqrt()
            })
            .product()
    }
}
