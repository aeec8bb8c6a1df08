//! Run configuration: a JSON document with every parameter block, dotted
//! `key=value` overrides, and resolution into the per-module parameter types.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::codec::AjsccParams;
use crate::error::Error;
use crate::filters::{MedianParams, ThresholdParams};
use crate::link::{default_band_plan, FmLinkParams, SensorBand};
use crate::receiver::{Interpolation, ReceiverParams, WindowFn};
use crate::signal::ValueRange;
use crate::source::{CytometryParams, GsrParams};
use crate::StageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub fs_hz: f64,
    /// Derived from the band plan when absent.
    pub kf_hz_per_v: Option<f64>,
    /// Number of sensors in the default band plan (ignored when `sensors` is set).
    pub num_sensors: usize,
    pub sensors: Option<Vec<SensorBand>>,
    /// `null` disables channel noise.
    pub snr_db: Option<f64>,
    /// Defaults to the receiver window `ns`.
    pub hold_window: Option<usize>,
    /// Per-stage bias added to the encoded voltage, one entry per level.
    pub stage_offsets_v: Option<Vec<f64>>,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            fs_hz: 500e3,
            kf_hz_per_v: None,
            num_sensors: 1,
            sensors: None,
            snr_db: Some(30.0),
            hold_window: None,
            stage_offsets_v: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReceiverConfig {
    /// Must equal `link.fs_hz` when given.
    pub fs_hz: Option<f64>,
    pub ns: usize,
    pub window_fn: WindowFn,
    pub interpolation: Interpolation,
    /// Must equal the transmitter band plan when given.
    pub bands: Option<Vec<SensorBand>>,
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        Self {
            fs_hz: None,
            ns: 5000,
            window_fn: WindowFn::Rectangular,
            interpolation: Interpolation::None,
            bands: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub plots: bool,
    /// Also write the channel waveform at the link rate (large).
    pub waveform_csv: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            plots: true,
            waveform_csv: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: String,
    /// Master seed; every stage seed is derived from it.
    pub seed: u64,
    pub output_dir: String,
    pub duration_s: f64,
    /// Rate of the source signals handed to the encoder.
    pub source_rate_hz: f64,
    pub cytometry: CytometryParams,
    pub gsr: GsrParams,
    /// Recorded GSR trace used instead of the synthetic generator.
    pub gsr_csv: Option<String>,
    pub ajscc: AjsccParams,
    pub link: LinkConfig,
    pub receiver: ReceiverConfig,
    pub threshold: ThresholdParams,
    pub median: MedianParams,
    pub outputs: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: "default".into(),
            seed: 1,
            output_dir: "out".into(),
            duration_s: 60.0,
            source_rate_hz: 1000.0,
            cytometry: CytometryParams::default(),
            gsr: GsrParams::default(),
            gsr_csv: None,
            ajscc: AjsccParams {
                // baseline readout 0.05 V, bead pulses to 0.30 V
                x1_range: ValueRange { lo: 0.0, hi: 0.4 },
                ..AjsccParams::default()
            },
            link: LinkConfig::default(),
            receiver: ReceiverConfig::default(),
            threshold: ThresholdParams::default(),
            median: MedianParams::default(),
            outputs: OutputConfig::default(),
        }
    }
}

/// Stage tags mixed into the master seed.
#[derive(Debug, Clone, Copy)]
pub enum SeedStream {
    Cytometry(u32),
    Gsr(u32),
    Channel,
}

/// SplitMix64 finalizer over the master seed and a stream tag.
pub fn derive_seed(master: u64, stream: SeedStream) -> u64 {
    let tag: u64 = match stream {
        SeedStream::Cytometry(i) => 0x100 + i as u64,
        SeedStream::Gsr(i) => 0x200_0000 + i as u64,
        SeedStream::Channel => 0x300_0000_0000,
    };
    let mut z = master ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Parameters for every module after defaults and seeds are filled in.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub cytometry: Vec<CytometryParams>,
    pub gsr: Vec<GsrParams>,
    pub codec: AjsccParams,
    pub link: FmLinkParams,
    pub receiver: ReceiverParams,
    pub offsets: Option<Vec<f64>>,
}

fn config_err(path: &str, err: Error) -> StageError {
    StageError::new("config", path, err)
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, StageError> {
        serde_json::from_str(text)
            .map_err(|e| config_err("", Error::param("config", e.to_string())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Reads `path` (or starts from defaults), then applies overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, StageError> {
        let base = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|source| {
                    config_err("", Error::Io {
                        path: p.to_path_buf(),
                        source,
                    })
                })?;
                Self::from_json(&text)?
            }
            None => Self::default(),
        };
        base.with_overrides(overrides)
    }

    /// Applies `a.b.c=value` overrides. Values parse as JSON when possible
    /// and as plain strings otherwise; every key must already exist.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, StageError> {
        let mut doc = serde_json::to_value(self).expect("config serializes");
        for ov in overrides {
            let (key, raw) = ov.split_once('=').ok_or_else(|| {
                config_err(ov, Error::param("override", "expected key=value"))
            })?;
            let key = key.trim();
            let value: Value =
                serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let slot = key
                .split('.')
                .try_fold(&mut doc, |node, seg| match node {
                    Value::Object(map) => map.get_mut(seg),
                    Value::Array(items) => seg.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
                    _ => None,
                })
                .ok_or_else(|| config_err(key, Error::param("override", "unknown config key")))?;
            *slot = value;
        }
        serde_json::from_value(doc)
            .map_err(|e| config_err("", Error::param("override", e.to_string())))
    }

    pub fn hold_window(&self) -> usize {
        self.link.hold_window.unwrap_or(self.receiver.ns)
    }

    /// Resolves defaults and checks the blocks agree with each other.
    pub fn resolve(&self) -> Result<Resolved, StageError> {
        let codec = self.ajscc;
        codec.validate().map_err(|e| config_err("ajscc", e))?;
        if !(self.duration_s.is_finite() && self.duration_s >= 0.0) {
            return Err(config_err("duration_s", Error::param("duration_s", "must be non-negative")));
        }
        if !(self.source_rate_hz.is_finite() && self.source_rate_hz > 0.0) {
            return Err(config_err("source_rate_hz", Error::param("source_rate_hz", "must be positive")));
        }

        let (sensors, plan_kf) = match &self.link.sensors {
            Some(s) => (s.clone(), None),
            None => {
                let (s, kf) = default_band_plan(self.link.num_sensors, self.link.fs_hz, codec.v_max())
                    .map_err(|e| config_err("link.num_sensors", e))?;
                (s, Some(kf))
            }
        };
        let kf = match (self.link.kf_hz_per_v, plan_kf) {
            (Some(kf), _) => kf,
            (None, Some(kf)) => kf,
            (None, None) => {
                // explicit bands: span 80% of the narrowest band
                let narrowest = sensors
                    .iter()
                    .map(|b| b.band_width_hz - b.guard_hz)
                    .fold(f64::INFINITY, f64::min);
                narrowest / codec.v_max()
            }
        };
        let link = FmLinkParams {
            fs_hz: self.link.fs_hz,
            kf_hz_per_v: kf,
            sensors,
            snr_db: self.link.snr_db.unwrap_or(f64::INFINITY),
            seed: derive_seed(self.seed, SeedStream::Channel),
            hold_window: self.hold_window(),
        };
        link.validate(codec.v_max()).map_err(|e| config_err("link", e))?;

        if let Some(fs) = self.receiver.fs_hz {
            if fs != link.fs_hz {
                return Err(config_err(
                    "receiver.fs_hz",
                    Error::param("fs_hz", format!("receiver rate {fs} Hz differs from link rate {} Hz", link.fs_hz)),
                ));
            }
        }
        if let Some(bands) = &self.receiver.bands {
            if bands != &link.sensors {
                return Err(config_err(
                    "receiver.bands",
                    Error::param("bands", "receiver bands must mirror the transmitter band plan"),
                ));
            }
        }
        let receiver = ReceiverParams {
            fs_hz: link.fs_hz,
            ns: self.receiver.ns,
            window_fn: self.receiver.window_fn,
            interpolation: self.receiver.interpolation,
            bands: link.sensors.clone(),
        };
        receiver.validate().map_err(|e| config_err("receiver", e))?;

        if let Some(off) = &self.link.stage_offsets_v {
            if off.len() != codec.levels_l {
                return Err(config_err(
                    "link.stage_offsets_v",
                    Error::LengthMismatch {
                        expected: codec.levels_l,
                        actual: off.len(),
                    },
                ));
            }
        }
        self.threshold.validate().map_err(|e| config_err("threshold", e))?;

        let n = link.sensors.len() as u32;
        let cytometry = (0..n)
            .map(|i| CytometryParams {
                duration_s: self.duration_s,
                seed: derive_seed(self.seed, SeedStream::Cytometry(i)),
                ..self.cytometry.clone()
            })
            .collect();
        let gsr = (0..n)
            .map(|i| GsrParams {
                duration_s: self.duration_s,
                sample_rate_hz: self.source_rate_hz,
                seed: derive_seed(self.seed, SeedStream::Gsr(i)),
                ..self.gsr.clone()
            })
            .collect();

        Ok(Resolved {
            cytometry,
            gsr,
            codec,
            link,
            receiver,
            offsets: self.link.stage_offsets_v.clone(),
        })
    }

    /// This config with every derived default written out explicitly.
    pub fn effective(&self) -> Result<RunConfig, StageError> {
        let r = self.resolve()?;
        let mut eff = self.clone();
        eff.link.kf_hz_per_v = Some(r.link.kf_hz_per_v);
        eff.link.num_sensors = r.link.sensors.len();
        eff.link.sensors = Some(r.link.sensors.clone());
        eff.link.hold_window = Some(r.link.hold_window);
        eff.receiver.fs_hz = Some(r.link.fs_hz);
        eff.receiver.bands = Some(r.link.sensors);
        Ok(eff)
    }
}
