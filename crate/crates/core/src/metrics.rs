//! Reconstruction error and pulse precision/recall.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{Signal, ValueRange};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub mse: f64,
    pub rmse: f64,
    /// RMSE as a percentage of the signal's declared range.
    pub nrmse_pct: f64,
    pub compared_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseMetrics {
    pub true_events: usize,
    pub detected: usize,
    pub matched: usize,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalMetrics {
    #[serde(flatten)]
    pub error: ErrorMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pulses: Option<PulseMetrics>,
}

/// `recovered` held (zero-order) onto the sample times of `original`,
/// restricted to the span where both exist. Returns `(original, held)` pairs.
pub fn zoh_align(original: &Signal, recovered: &Signal) -> Vec<(f64, f64)> {
    let rate = recovered.sample_rate_hz();
    original
        .samples()
        .iter()
        .enumerate()
        .filter_map(|(i, &x)| {
            let pos = (original.time_of(i) - recovered.t0_s()) * rate;
            if pos < -1e-9 {
                return None;
            }
            let j = (pos + 1e-9).floor() as usize;
            recovered.samples().get(j).map(|&y| (x, y))
        })
        .collect()
}

pub fn error_metrics(original: &Signal, recovered: &Signal, range: ValueRange) -> Result<ErrorMetrics> {
    if original.is_empty() || recovered.is_empty() {
        return Err(Error::Empty("metrics input"));
    }
    let pairs = zoh_align(original, recovered);
    if pairs.is_empty() {
        return Err(Error::Empty("signals do not overlap in time"));
    }
    let mse = pairs.iter().map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / pairs.len() as f64;
    let rmse = mse.sqrt();
    Ok(ErrorMetrics {
        mse,
        rmse,
        nrmse_pct: 100.0 * rmse / range.width(),
        compared_samples: pairs.len(),
    })
}

/// Pulse times in a thresholded signal. Each maximal run of strictly
/// positive samples holds one or more pulses; a run is split where it dips to
/// half of the smaller neighbouring peak or lower, so beads arriving close
/// together are counted separately. A pulse is timed at the centre of the
/// sample interval holding its largest value (first one on ties).
pub fn detect_pulses(sig: &Signal) -> Vec<f64> {
    let xs = sig.samples();
    let half_interval = 0.5 / sig.sample_rate_hz();
    let mut times = Vec::new();
    let mut i = 0;
    while i < xs.len() {
        if xs[i] <= 0.0 {
            i += 1;
            continue;
        }
        let mut peak = i;
        // lowest sample since `peak`
        let mut valley = xs[i];
        let mut j = i + 1;
        while j < xs.len() && xs[j] > 0.0 {
            let x = xs[j];
            if x < valley {
                valley = x;
            } else if valley <= 0.5 * xs[peak] && valley <= 0.5 * x {
                times.push(sig.time_of(peak) + half_interval);
                peak = j;
                valley = x;
            } else if x > xs[peak] {
                peak = j;
                valley = x;
            }
            j += 1;
        }
        times.push(sig.time_of(peak) + half_interval);
        i = j;
    }
    times
}

/// Greedy nearest-neighbour matching within `tolerance_s`: closest pairs are
/// committed first and each event or detection is used at most once.
pub fn match_pulses(detected: &[f64], events: &[f64], tolerance_s: f64) -> PulseMetrics {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, &d) in detected.iter().enumerate() {
        // events are few enough that the quadratic scan is fine
        for (j, &e) in events.iter().enumerate() {
            let dist = (d - e).abs();
            if dist <= tolerance_s {
                pairs.push((dist, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_d = vec![false; detected.len()];
    let mut used_e = vec![false; events.len()];
    let mut matched = 0;
    for (_, i, j) in pairs {
        if !used_d[i] && !used_e[j] {
            used_d[i] = true;
            used_e[j] = true;
            matched += 1;
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    PulseMetrics {
        true_events: events.len(),
        detected: detected.len(),
        matched,
        precision: ratio(matched, detected.len()),
        recall: ratio(matched, events.len()),
    }
}

/// Error metrics plus, when `events` is given, pulse matching of the pulses
/// detected in `recovered` against the true event times.
pub fn compute_metrics(
    original: &Signal,
    recovered: &Signal,
    events: Option<&[f64]>,
    range: ValueRange,
    tolerance_s: f64,
) -> Result<SignalMetrics> {
    let error = error_metrics(original, recovered, range)?;
    let pulses = events.map(|ev| match_pulses(&detect_pulses(recovered), ev, tolerance_s));
    Ok(SignalMetrics { error, pulses })
}

/// Fixed-width histogram with explicit under/overflow counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
    pub underflow: usize,
    pub overflow: usize,
}

impl Histogram {
    pub fn build(values: impl IntoIterator<Item = f64>, lo: f64, hi: f64, bins: usize) -> Self {
        let mut h = Histogram {
            lo,
            hi,
            counts: vec![0; bins],
            underflow: 0,
            overflow: 0,
        };
        let width = (hi - lo) / bins as f64;
        for v in values {
            if v < lo {
                h.underflow += 1;
            } else if v > hi {
                h.overflow += 1;
            } else {
                let k = (((v - lo) / width) as usize).min(bins - 1);
                h.counts[k] += 1;
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pulse_train(times: &[f64], rate: f64, n: usize) -> Signal {
        let mut xs = vec![0.0; n];
        for &t in times {
            let c = (t * rate).round() as usize;
            xs[c] = 1.0;
            xs[c - 1] = 0.5;
            xs[c + 1] = 0.5;
        }
        Signal::new(xs, rate).unwrap()
    }

    #[test]
    fn identical_signals() {
        let events = [0.5, 1.2, 3.3];
        let s = pulse_train(&events, 100.0, 500);
        let m = compute_metrics(&s, &s, Some(&events), ValueRange::unit(), 0.014).unwrap();
        assert_eq!(m.error.mse, 0.0);
        let p = m.pulses.unwrap();
        assert_eq!((p.precision, p.recall), (1.0, 1.0));
    }

    #[test]
    fn constant_offset_rmse() {
        let a = Signal::new((0..100).map(|i| (i as f64 * 0.1).sin()).collect(), 10.0).unwrap();
        let b = a.map(|x| x + 0.1).unwrap();
        let m = error_metrics(&a, &b, ValueRange::new(-1.0, 1.0).unwrap()).unwrap();
        assert!((m.rmse - 0.1).abs() < 1e-12);
        assert!((m.nrmse_pct - 5.0).abs() < 1e-9);
    }

    #[test]
    fn zoh_holds_coarse_samples() {
        let orig = Signal::new(vec![0.0; 40], 1000.0).unwrap();
        let rec = Signal::new(vec![1.0, 2.0, 3.0], 100.0).unwrap();
        let pairs = zoh_align(&orig, &rec);
        assert_eq!(pairs.len(), 30);
        assert!(pairs[..10].iter().all(|p| p.1 == 1.0));
        assert!(pairs[10..20].iter().all(|p| p.1 == 2.0));
        assert!(pairs[20..].iter().all(|p| p.1 == 3.0));
    }

    #[test]
    fn one_missed_one_spurious() {
        let events: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let mut detected: Vec<f64> = events.iter().map(|t| t + 0.004).collect();
        detected.remove(3);
        detected.push(10.5);
        let m = match_pulses(&detected, &events, 0.014);
        assert_eq!(m.matched, 9);
        assert!((m.recall - 0.9).abs() < 1e-12);
        assert!((m.precision - 0.9).abs() < 1e-12);
    }

    #[test]
    fn greedy_prefers_closest_pair() {
        // detection at 1.0 sits between events; the closer event wins
        let m = match_pulses(&[1.0, 1.011], &[0.995, 1.01], 0.02);
        assert_eq!(m.matched, 2);
    }

    #[test]
    fn pulses_are_positive_runs() {
        let s = Signal::new(vec![0.0, 0.2, 0.9, 0.3, 0.0, 0.0, 0.4, 0.0], 10.0).unwrap();
        let t = detect_pulses(&s);
        assert_eq!(t.len(), 2);
        assert!((t[0] - 0.25).abs() < 1e-12 && (t[1] - 0.65).abs() < 1e-12);
    }

    #[test]
    fn close_pulses_are_split_at_deep_valleys() {
        // two peaks over a shared floor with a valley below half height
        let xs = vec![0.0, 0.3, 1.0, 0.4, 0.2, 0.8, 0.3, 0.0];
        let t = detect_pulses(&Signal::new(xs, 10.0).unwrap());
        assert_eq!(t.len(), 2);
        assert!((t[0] - 0.25).abs() < 1e-12 && (t[1] - 0.55).abs() < 1e-12);
    }

    #[test]
    fn ripple_on_a_pulse_top_is_one_pulse() {
        let xs = vec![0.1, 0.5, 0.95, 0.9, 1.0, 0.92, 0.6, 0.55, 0.58, 0.2];
        let t = detect_pulses(&Signal::new(xs, 10.0).unwrap());
        assert_eq!(t.len(), 1);
        assert!((t[0] - 0.45).abs() < 1e-12);
    }

    #[test]
    fn empty_input_is_error() {
        let a = Signal::new(vec![], 10.0).unwrap();
        let b = Signal::new(vec![1.0], 10.0).unwrap();
        assert!(error_metrics(&a, &b, ValueRange::unit()).is_err());
        assert!(error_metrics(&b, &a, ValueRange::unit()).is_err());
    }

    #[test]
    fn histogram_counts() {
        let h = Histogram::build([-2.0, -0.5, 0.0, 0.49, 0.5, 3.0], -1.0, 1.0, 4);
        assert_eq!(h.underflow, 1);
        assert_eq!(h.overflow, 1);
        assert_eq!(h.counts, vec![0, 1, 2, 1]);
    }
}
