//! Reconstruction clean-up: an error-floor threshold for the microfluidic
//! channel and a centred running median for the physiological channel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::Signal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    Fixed,
    #[default]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdParams {
    pub mode: ThresholdMode,
    pub theta: f64,
    pub auto_percentile: f64,
    pub auto_margin: f64,
}

impl Default for ThresholdParams {
    fn default() -> Self {
        Self {
            mode: ThresholdMode::Auto,
            theta: 0.0,
            auto_percentile: 90.0,
            auto_margin: 1.1,
        }
    }
}

impl ThresholdParams {
    pub fn fixed(theta: f64) -> Self {
        Self {
            mode: ThresholdMode::Fixed,
            theta,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            ThresholdMode::Fixed if !self.theta.is_finite() => {
                Err(Error::param("theta", "fixed threshold must be finite"))
            }
            ThresholdMode::Auto
                if !(self.auto_percentile > 0.0 && self.auto_percentile < 100.0) =>
            {
                Err(Error::param("auto_percentile", "must lie in (0, 100)"))
            }
            ThresholdMode::Auto if !(self.auto_margin > 1.0 && self.auto_margin.is_finite()) => {
                Err(Error::param("auto_margin", "must be greater than 1"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Thresholded {
    pub signal: Signal,
    pub theta: f64,
    /// Set when auto mode met a constant signal and fell back to its value.
    pub degenerate: bool,
}

/// Linear-interpolated percentile (`q` in percent) of unsorted data.
pub fn percentile(xs: &[f64], q: f64) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 >= sorted.len() {
        sorted[sorted.len() - 1]
    } else {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    }
}

/// Zeroes every sample at or below the threshold.
pub fn threshold_filter(sig: &Signal, p: &ThresholdParams) -> Result<Thresholded> {
    p.validate()?;
    if sig.is_empty() {
        return Err(Error::Empty("threshold input"));
    }
    let xs = sig.samples();
    let (theta, degenerate) = match p.mode {
        ThresholdMode::Fixed => (p.theta, false),
        ThresholdMode::Auto => {
            let first = xs[0];
            if xs.iter().all(|&x| x == first) {
                (first, true)
            } else {
                (p.auto_margin * percentile(xs, p.auto_percentile), false)
            }
        }
    };
    let signal = sig.map(|x| if x > theta { x } else { 0.0 })?;
    Ok(Thresholded {
        signal,
        theta,
        degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgePolicy {
    /// Use only the samples that exist; even counts take the lower middle.
    Shrink,
    /// Mirror the signal about its end samples.
    #[default]
    Reflect,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MedianParams {
    pub order_k: usize,
    pub edge_policy: EdgePolicy,
}

impl Default for MedianParams {
    fn default() -> Self {
        Self {
            order_k: 200,
            edge_policy: EdgePolicy::Reflect,
        }
    }
}

impl MedianParams {
    /// Window length: `order_k + 1` for even orders, `order_k` for odd ones.
    pub fn window(&self) -> usize {
        if self.order_k.is_multiple_of(2) {
            self.order_k + 1
        } else {
            self.order_k
        }
    }
}

/// Sorted multiset for the sliding window.
struct SortedWindow {
    values: Vec<f64>,
}

impl SortedWindow {
    fn insert(&mut self, x: f64) {
        let i = self.values.partition_point(|v| v.total_cmp(&x).is_lt());
        self.values.insert(i, x);
    }

    fn remove(&mut self, x: f64) {
        let i = self.values.partition_point(|v| v.total_cmp(&x).is_lt());
        debug_assert!(self.values[i] == x);
        self.values.remove(i);
    }

    fn lower_median(&self) -> f64 {
        self.values[(self.values.len() - 1) / 2]
    }
}

/// Centred running median; output length equals input length.
pub fn median_filter(sig: &Signal, p: &MedianParams) -> Result<Signal> {
    if p.order_k == 0 {
        return Err(Error::param("order_k", "must be positive"));
    }
    let w = p.window();
    let xs = sig.samples();
    let n = xs.len();
    if w > n {
        return Err(Error::param(
            "order_k",
            format!("median window {w} exceeds signal length {n}"),
        ));
    }
    let half = w / 2;
    let mut win = SortedWindow {
        values: Vec::with_capacity(w),
    };
    let mut out = Vec::with_capacity(n);
    match p.edge_policy {
        EdgePolicy::Reflect => {
            // index -k maps to k, n-1+k maps to n-1-k
            let at = |i: isize| -> f64 {
                let n = n as isize;
                let j = if i < 0 {
                    -i
                } else if i >= n {
                    2 * (n - 1) - i
                } else {
                    i
                };
                xs[j as usize]
            };
            for i in -(half as isize)..=(half as isize) {
                win.insert(at(i));
            }
            for i in 0..n as isize {
                out.push(win.lower_median());
                if i + 1 < n as isize {
                    win.remove(at(i - half as isize));
                    win.insert(at(i + half as isize + 1));
                }
            }
        }
        EdgePolicy::Shrink => {
            for &x in &xs[..=half.min(n - 1)] {
                win.insert(x);
            }
            for i in 0..n {
                out.push(win.lower_median());
                if i + half + 1 < n {
                    win.insert(xs[i + half + 1]);
                }
                if i >= half {
                    win.remove(xs[i - half]);
                }
            }
        }
    }
    Signal::with_start(out, sig.sample_rate_hz(), sig.t0_s())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sig(xs: Vec<f64>) -> Signal {
        Signal::new(xs, 100.0).unwrap()
    }

    /// Sort-every-window reference with the same edge rules.
    fn brute_median(xs: &[f64], w: usize, policy: EdgePolicy) -> Vec<f64> {
        let n = xs.len() as isize;
        let half = (w / 2) as isize;
        (0..n)
            .map(|i| {
                let mut win: Vec<f64> = match policy {
                    EdgePolicy::Reflect => (i - half..=i + half)
                        .map(|j| {
                            let j = if j < 0 { -j } else if j >= n { 2 * (n - 1) - j } else { j };
                            xs[j as usize]
                        })
                        .collect(),
                    EdgePolicy::Shrink => ((i - half).max(0)..=(i + half).min(n - 1))
                        .map(|j| xs[j as usize])
                        .collect(),
                };
                win.sort_by(f64::total_cmp);
                win[(win.len() - 1) / 2]
            })
            .collect()
    }

    #[test]
    fn threshold_trivial_cases() {
        let s = sig(vec![0.1, 0.2, 0.3]);
        let below = threshold_filter(&s, &ThresholdParams::fixed(0.5)).unwrap();
        assert!(below.signal.samples().iter().all(|&x| x == 0.0));
        let above = threshold_filter(&s, &ThresholdParams::fixed(0.05)).unwrap();
        assert_eq!(above.signal, s);
    }

    #[test]
    fn auto_threshold_sits_above_floor() {
        // 100 samples: floor 0.1 with 5 pulse samples at 1.0
        let mut xs = vec![0.1; 100];
        for i in [10, 30, 50, 70, 90] {
            xs[i] = 1.0;
        }
        let out = threshold_filter(&sig(xs.clone()), &ThresholdParams::default()).unwrap();
        // 90th percentile of the data is the floor value
        assert!((out.theta - 0.11).abs() < 1e-12);
        for (y, x) in out.signal.samples().iter().zip(&xs) {
            assert_eq!(*y, if *x == 1.0 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn auto_threshold_constant_signal_falls_back() {
        let out = threshold_filter(&sig(vec![0.4; 10]), &ThresholdParams::default()).unwrap();
        assert!(out.degenerate);
        assert_eq!(out.theta, 0.4);
        assert!(out.signal.samples().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile(&[4.0, 1.0, 3.0, 2.0], 50.0), 2.5);
        assert_eq!(percentile(&[1.0, 2.0], 100.0), 2.0);
    }

    #[test]
    fn threshold_param_validation() {
        assert!(ThresholdParams::fixed(f64::NAN).validate().is_err());
        let p = ThresholdParams { auto_margin: 0.9, ..Default::default() };
        assert!(p.validate().is_err());
    }

    #[test]
    fn window_forced_odd() {
        assert_eq!(MedianParams { order_k: 200, ..Default::default() }.window(), 201);
        assert_eq!(MedianParams { order_k: 7, ..Default::default() }.window(), 7);
    }

    #[test]
    fn median_constant_unchanged() {
        let s = sig(vec![2.5; 50]);
        for policy in [EdgePolicy::Reflect, EdgePolicy::Shrink] {
            let p = MedianParams { order_k: 8, edge_policy: policy };
            assert_eq!(median_filter(&s, &p).unwrap(), s);
        }
    }

    #[test]
    fn median_removes_spike() {
        let mut xs = vec![1.0; 40];
        xs[17] = 50.0;
        let p = MedianParams { order_k: 2, ..Default::default() };
        let out = median_filter(&sig(xs.clone()), &p).unwrap();
        assert!(out.samples().iter().all(|&x| x == 1.0));
        assert_eq!(out.samples(), &brute_median(&xs, 3, EdgePolicy::Reflect)[..]);
    }

    #[test]
    fn median_step_edge_preserved() {
        let xs: Vec<f64> = (0..1000).map(|i| if i < 500 { 0.0 } else { 1.0 }).collect();
        for policy in [EdgePolicy::Reflect, EdgePolicy::Shrink] {
            let p = MedianParams { order_k: 200, edge_policy: policy };
            let out = median_filter(&sig(xs.clone()), &p).unwrap();
            assert_eq!(out.samples(), &brute_median(&xs, 201, policy)[..]);
            let edge = out.samples().iter().position(|&y| y == 1.0).unwrap();
            assert!((edge as isize - 500).abs() <= 100);
            assert!(out.samples().iter().all(|&y| y == 0.0 || y == 1.0));
        }
    }

    #[test]
    fn median_window_too_long_is_error() {
        let p = MedianParams { order_k: 200, ..Default::default() };
        assert!(median_filter(&sig(vec![0.0; 100]), &p).is_err());
    }

    proptest! {
        #[test]
        fn median_matches_brute_force(xs in prop::collection::vec(-5.0f64..5.0, 9..120),
                                      k in 1usize..9, shrink in any::<bool>()) {
            let policy = if shrink { EdgePolicy::Shrink } else { EdgePolicy::Reflect };
            let p = MedianParams { order_k: k, edge_policy: policy };
            let w = p.window();
            prop_assume!(w <= xs.len());
            let out = median_filter(&sig(xs.clone()), &p).unwrap();
            prop_assert_eq!(out.samples(), &brute_median(&xs, w, policy)[..]);
            for y in out.samples() {
                prop_assert!(xs.contains(y));
            }
        }

        #[test]
        fn fixed_threshold_idempotent(xs in prop::collection::vec(-1.0f64..1.0, 1..200),
                                      theta in -1.0f64..1.0) {
            let p = ThresholdParams::fixed(theta);
            let once = threshold_filter(&sig(xs), &p).unwrap().signal;
            let twice = threshold_filter(&once, &p).unwrap().signal;
            prop_assert_eq!(once, twice);
        }
    }
}
