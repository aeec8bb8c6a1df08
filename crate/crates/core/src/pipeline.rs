//! End-to-end orchestration: generate, encode, modulate, channel, demodulate,
//! decode, filter and score, plus the run-directory layout shared by the
//! one-shot pipeline and the per-stage command line.
//!
//! Each encoded sample stands for one hold interval of `hold_window` link
//! samples. The sources are read at the centre of every interval, and the
//! receiver's windows are aligned with the intervals.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::codec::{decode_signal, encode_signals, stage_occupancy, AjsccParams};
use crate::config::{Resolved, RunConfig};
use crate::error::Error;
use crate::filters::{median_filter, threshold_filter, Thresholded};
use crate::link::{awgn, fdma_mux, fm_modulate, stage_bias_impairment, SensorBand};
use crate::metrics::{compute_metrics, error_metrics, zoh_align, ErrorMetrics, Histogram, SignalMetrics};
use crate::plot::{self, Panel, Series};
use crate::receiver::{demodulate_stream, Demodulated, ReceiverParams};
use crate::signal::{normalize_all, Signal};
use crate::source::{bead_arrivals, gen_gsr, synthesize_readout};
use crate::StageError;

/// Keys that live at the top level of [`RunConfig`] even when a parameter
/// block reports them.
const TOP_LEVEL_KEYS: [&str; 3] = ["duration_s", "source_rate_hz", "seed"];

/// Maps a module error to a stage error, pointing at `block.<name>` when the
/// error names a parameter.
fn blame(stage: &'static str, block: &'static str) -> impl Fn(Error) -> StageError {
    move |e| {
        let path = match &e {
            Error::InvalidParameter { name, .. } => {
                let name = if *name == "sample_rate_hz" { "source_rate_hz" } else { name };
                if TOP_LEVEL_KEYS.contains(&name) || block.is_empty() {
                    name.to_string()
                } else {
                    format!("{block}.{name}")
                }
            }
            _ => block.to_string(),
        };
        StageError::new(stage, path, e)
    }
}

fn io_err<'a>(stage: &'static str, path: &'a Path) -> impl Fn(std::io::Error) -> StageError + 'a {
    move |source| {
        StageError::new(
            stage,
            "output_dir",
            Error::Io {
                path: path.to_path_buf(),
                source,
            },
        )
    }
}

/// Source signals of one sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Sources {
    /// Lock-in readout at `source_rate_hz`.
    pub x1: Signal,
    pub x2: Signal,
    /// True bead arrival times.
    pub events: Vec<f64>,
}

/// Impedance readout and bead arrival times for every sensor.
pub fn gen_cytometry_stage(cfg: &RunConfig, r: &Resolved) -> Result<Vec<(Signal, Vec<f64>)>, StageError> {
    let err = blame("gen-cytometry", "cytometry");
    r.cytometry
        .iter()
        .map(|p| {
            let x1 = synthesize_readout(p, cfg.source_rate_hz).map_err(&err)?;
            let events = bead_arrivals(p).map_err(&err)?;
            Ok((x1, events))
        })
        .collect()
}

/// Physiological signal for every sensor, synthetic or replayed from `gsr_csv`.
pub fn gen_gsr_stage(cfg: &RunConfig, r: &Resolved) -> Result<Vec<Signal>, StageError> {
    if let Some(path) = &cfg.gsr_csv {
        let sig = Signal::read_csv(path).map_err(|e| StageError::new("gen-gsr", "gsr_csv", e))?;
        if sig.duration_s() + 1e-9 < cfg.duration_s {
            return Err(StageError::new(
                "gen-gsr",
                "gsr_csv",
                Error::param(
                    "gsr_csv",
                    format!("recording lasts {} s, run needs {} s", sig.duration_s(), cfg.duration_s),
                ),
            ));
        }
        return Ok(vec![sig; r.gsr.len()]);
    }
    let err = blame("gen-gsr", "gsr");
    r.gsr.iter().map(|p| gen_gsr(p).map_err(&err)).collect()
}

pub fn gen_sources(cfg: &RunConfig, r: &Resolved) -> Result<Vec<Sources>, StageError> {
    let cyto = gen_cytometry_stage(cfg, r)?;
    let gsr = gen_gsr_stage(cfg, r)?;
    Ok(cyto
        .into_iter()
        .zip(gsr)
        .map(|((x1, events), x2)| Sources { x1, x2, events })
        .collect())
}

/// Number of whole hold intervals in the run.
pub fn hold_count(cfg: &RunConfig, r: &Resolved) -> usize {
    let per_s = r.link.fs_hz / r.link.hold_window as f64;
    (cfg.duration_s * per_s + 1e-9).floor() as usize
}

/// `sig` read at the centre of each of `count` hold intervals; the result is
/// sampled at the interval rate and starts at 0.
pub fn sample_at_holds(sig: &Signal, count: usize, r: &Resolved) -> Result<Signal, Error> {
    let interval = r.link.hold_window as f64 / r.link.fs_hz;
    let xs = (0..count).map(|k| sig.interpolate((k as f64 + 0.5) * interval)).collect();
    Signal::new(xs, 1.0 / interval)
}

/// Staircase-encodes each sensor's sources at the hold rate.
pub fn encode_stage(cfg: &RunConfig, r: &Resolved, x1: &[Signal], x2: &[Signal]) -> Result<Vec<Signal>, StageError> {
    let count = hold_count(cfg, r);
    if count == 0 {
        return Err(StageError::new(
            "encode",
            "duration_s",
            Error::param("duration_s", "run is shorter than one hold interval"),
        ));
    }
    let err = blame("encode", "ajscc");
    x1.iter()
        .zip(x2)
        .map(|(a, b)| {
            let a = sample_at_holds(a, count, r).map_err(&err)?;
            let b = sample_at_holds(b, count, r).map_err(&err)?;
            encode_signals(&a, &b, &r.codec).map_err(&err)
        })
        .collect()
}

/// Optional stage bias, clamping into the encoder's output range, FM
/// modulation in each sensor's band, and FDMA multiplexing.
pub fn modulate_stage(r: &Resolved, encoded: &[Signal]) -> Result<Signal, StageError> {
    if encoded.len() != r.link.sensors.len() {
        return Err(StageError::new(
            "modulate",
            "link.sensors",
            Error::LengthMismatch {
                expected: r.link.sensors.len(),
                actual: encoded.len(),
            },
        ));
    }
    let v_max = r.codec.v_max();
    let tones = encoded
        .iter()
        .zip(&r.link.sensors)
        .map(|(v, band)| {
            let biased = match &r.offsets {
                Some(off) => stage_bias_impairment(v, off, &r.codec)
                    .map_err(|e| StageError::new("modulate", "link.stage_offsets_v", e))?,
                None => v.clone(),
            };
            let clamped = biased
                .map(|x| x.clamp(0.0, v_max))
                .map_err(|e| StageError::new("modulate", "link", e))?;
            fm_modulate(&clamped, band, &r.link).map_err(|e| StageError::new("modulate", "link.sensors", e))
        })
        .collect::<Result<Vec<_>, _>>()?;
    fdma_mux(tones).map_err(|e| StageError::new("modulate", "link.sensors", e))
}

pub fn channel_stage(r: &Resolved, tx: Signal) -> Result<Signal, StageError> {
    awgn(tx, r.link.snr_db, r.link.seed).map_err(|e| StageError::new("channel", "link.snr_db", e))
}

pub fn demodulate_stage(r: &Resolved, rp: &ReceiverParams, rx: &Signal) -> Result<Vec<Demodulated>, StageError> {
    demodulate_stream(rx, rp, r.link.kf_hz_per_v, r.codec.v_max()).map_err(blame("demodulate", "receiver"))
}

pub fn decode_stage(r: &Resolved, received: &[Signal]) -> Result<Vec<(Signal, Signal)>, StageError> {
    received
        .iter()
        .map(|v| decode_signal(v, &r.codec).map_err(blame("decode", "ajscc")))
        .collect()
}

/// Threshold filter on the decoded readout, median filter on the decoded
/// physiological signal.
pub fn filter_stage(cfg: &RunConfig, x1: &Signal, x2: &Signal) -> Result<(Thresholded, Signal), StageError> {
    let t = threshold_filter(x1, &cfg.threshold).map_err(blame("filter", "threshold"))?;
    let m = median_filter(x2, &cfg.median).map_err(blame("filter", "median"))?;
    Ok((t, m))
}

/// Everything the report is computed from for one sensor.
#[derive(Debug, Clone)]
pub struct SensorOutputs {
    pub band: SensorBand,
    pub sources: Sources,
    pub encoded: Signal,
    /// Recovered encoded-voltage stream.
    pub received: Signal,
    pub peak_bins: Vec<usize>,
    pub x1_decoded: Signal,
    pub x2_decoded: Signal,
    pub x1_filtered: Signal,
    pub x2_filtered: Signal,
    pub threshold: ThresholdInfo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdInfo {
    pub theta: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorReport {
    pub sensor_id: u32,
    pub true_events: usize,
    pub x1_decoded: ErrorMetrics,
    pub x2_decoded: ErrorMetrics,
    /// RMS of the decoded x1 and x2 normalized errors.
    pub combined_nrmse_pct: f64,
    pub x1_filtered: SignalMetrics,
    pub x2_filtered: ErrorMetrics,
    pub threshold: ThresholdInfo,
    /// Encoded samples per staircase level.
    pub stage_occupancy: Vec<usize>,
    pub x1_clamped: usize,
    pub x2_clamped: usize,
    /// Decoded minus original x2, over plus/minus one quantizer step.
    pub x2_error_histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub scenario: String,
    pub seed: u64,
    pub duration_s: f64,
    pub fs_hz: f64,
    pub ns: usize,
    pub resolution_hz: f64,
    pub hold_window: usize,
    pub kf_hz_per_v: f64,
    /// `None` when the channel is noise free.
    pub snr_db: Option<f64>,
    pub sensors: Vec<SensorReport>,
    pub warnings: Vec<String>,
    /// Wall-clock time of the run; kept out of the written report so that
    /// identical runs produce identical files.
    #[serde(skip)]
    pub runtime_s: f64,
}

pub fn combined_nrmse(x1: &ErrorMetrics, x2: &ErrorMetrics) -> f64 {
    ((x1.nrmse_pct * x1.nrmse_pct + x2.nrmse_pct * x2.nrmse_pct) / 2.0).sqrt()
}

/// Decoded-signal error of one sensor, the figure of merit of the ns sweep.
pub fn decoded_errors(
    codec: &AjsccParams,
    src: &Sources,
    x1_decoded: &Signal,
    x2_decoded: &Signal,
) -> Result<(ErrorMetrics, ErrorMetrics), Error> {
    Ok((
        error_metrics(&src.x1, x1_decoded, codec.x1_range)?,
        error_metrics(&src.x2, x2_decoded, codec.x2_range)?,
    ))
}

/// Builds the report from per-sensor outputs ("metrics" stage).
pub fn build_report(cfg: &RunConfig, r: &Resolved, outputs: &[SensorOutputs]) -> Result<ReconstructionReport, StageError> {
    let err = blame("metrics", "");
    let count = hold_count(cfg, r);
    let mut warnings = Vec::new();
    let mut sensors = Vec::with_capacity(outputs.len());
    for (i, o) in outputs.iter().enumerate() {
        let id = o.band.sensor_id;
        let (x1_decoded, x2_decoded) = decoded_errors(&r.codec, &o.sources, &o.x1_decoded, &o.x2_decoded).map_err(&err)?;
        let x1_filtered = compute_metrics(
            &o.sources.x1,
            &o.x1_filtered,
            Some(&o.sources.events),
            r.codec.x1_range,
            r.cytometry[i].pulse_width_s,
        )
        .map_err(&err)?;
        let x2_filtered = error_metrics(&o.sources.x2, &o.x2_filtered, r.codec.x2_range).map_err(&err)?;

        let held_x1 = sample_at_holds(&o.sources.x1, count, r).map_err(&err)?;
        let held_x2 = sample_at_holds(&o.sources.x2, count, r).map_err(&err)?;
        let (_, x1_clamped) = normalize_all(held_x1.samples(), r.codec.x1_range);
        let (_, x2_clamped) = normalize_all(held_x2.samples(), r.codec.x2_range);
        let step = r.codec.x2_step();
        let x2_error_histogram = Histogram::build(
            zoh_align(&o.sources.x2, &o.x2_decoded).into_iter().map(|(x, y)| y - x),
            -step,
            step,
            20,
        );

        if o.threshold.degenerate {
            warnings.push(format!("sensor {id}: decoded x1 is constant; auto threshold fell back to its value"));
        }
        if x1_clamped + x2_clamped > 0 {
            warnings.push(format!(
                "sensor {id}: {x1_clamped} x1 and {x2_clamped} x2 samples clamped to their ranges"
            ));
        }
        sensors.push(SensorReport {
            sensor_id: id,
            true_events: o.sources.events.len(),
            combined_nrmse_pct: combined_nrmse(&x1_decoded, &x2_decoded),
            x1_decoded,
            x2_decoded,
            x1_filtered,
            x2_filtered,
            threshold: o.threshold,
            stage_occupancy: stage_occupancy(held_x2.samples(), &r.codec),
            x1_clamped,
            x2_clamped,
            x2_error_histogram,
        });
    }
    Ok(ReconstructionReport {
        scenario: cfg.scenario.clone(),
        seed: cfg.seed,
        duration_s: cfg.duration_s,
        fs_hz: r.link.fs_hz,
        ns: r.receiver.ns,
        resolution_hz: r.receiver.resolution_hz(),
        hold_window: r.link.hold_window,
        kf_hz_per_v: r.link.kf_hz_per_v,
        snr_db: cfg.link.snr_db,
        sensors,
        warnings,
        runtime_s: 0.0,
    })
}

/// Transmitter side of a run: sources, encoded streams and channel output.
#[derive(Debug, Clone)]
pub struct Transmission {
    pub resolved: Resolved,
    pub sources: Vec<Sources>,
    pub encoded: Vec<Signal>,
    pub rx: Signal,
}

pub fn transmit(cfg: &RunConfig) -> Result<Transmission, StageError> {
    let resolved = cfg.resolve()?;
    let sources = gen_sources(cfg, &resolved)?;
    let x1: Vec<Signal> = sources.iter().map(|s| s.x1.clone()).collect();
    let x2: Vec<Signal> = sources.iter().map(|s| s.x2.clone()).collect();
    let encoded = encode_stage(cfg, &resolved, &x1, &x2)?;
    let tx = modulate_stage(&resolved, &encoded)?;
    let rx = channel_stage(&resolved, tx)?;
    Ok(Transmission {
        resolved,
        sources,
        encoded,
        rx,
    })
}

/// Receiver side: demodulate, decode and filter every sensor.
pub fn receive(cfg: &RunConfig, tx: &Transmission, rp: &ReceiverParams) -> Result<Vec<SensorOutputs>, StageError> {
    let r = &tx.resolved;
    let demod = demodulate_stage(r, rp, &tx.rx)?;
    let received: Vec<Signal> = demod.iter().map(|d| d.voltages.clone()).collect();
    let decoded = decode_stage(r, &received)?;
    demod
        .into_iter()
        .zip(decoded)
        .enumerate()
        .map(|(i, (d, (x1_decoded, x2_decoded)))| {
            let (t, x2_filtered) = filter_stage(cfg, &x1_decoded, &x2_decoded)?;
            Ok(SensorOutputs {
                band: r.link.sensors[i].clone(),
                sources: tx.sources[i].clone(),
                encoded: tx.encoded[i].clone(),
                received: d.voltages,
                peak_bins: d.peak_bins,
                x1_decoded,
                x2_decoded,
                x1_filtered: t.signal,
                x2_filtered,
                threshold: ThresholdInfo {
                    theta: t.theta,
                    degenerate: t.degenerate,
                },
            })
        })
        .collect()
}

/// A complete in-memory run.
#[derive(Debug, Clone)]
pub struct Run {
    pub transmission: Transmission,
    pub outputs: Vec<SensorOutputs>,
    pub report: ReconstructionReport,
}

/// Runs the whole chain without touching the file system.
pub fn execute(cfg: &RunConfig) -> Result<Run, StageError> {
    let start = Instant::now();
    let transmission = transmit(cfg)?;
    let outputs = receive(cfg, &transmission, &transmission.resolved.receiver)?;
    let mut report = build_report(cfg, &transmission.resolved, &outputs)?;
    report.runtime_s = start.elapsed().as_secs_f64();
    Ok(Run {
        transmission,
        outputs,
        report,
    })
}

/// File layout of a run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn sensor_dir(&self, id: u32) -> PathBuf {
        self.root.join(format!("sensor-{id}"))
    }

    pub fn sensor_file(&self, id: u32, name: &str) -> PathBuf {
        self.sensor_dir(id).join(name)
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn create(&self, stage: &'static str, ids: impl IntoIterator<Item = u32>) -> Result<(), StageError> {
        for id in ids {
            let d = self.sensor_dir(id);
            fs::create_dir_all(&d).map_err(io_err(stage, &d))?;
        }
        fs::create_dir_all(&self.root).map_err(io_err(stage, &self.root))
    }
}

pub const EVENTS_HEADER: &str = "time_s";

pub fn write_events(path: &Path, events: &[f64]) -> Result<(), Error> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    writeln!(w, "{EVENTS_HEADER}").map_err(io)?;
    for t in events {
        writeln!(w, "{t}").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_events(path: &Path) -> Result<Vec<f64>, Error> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let f = fs::File::open(path).map_err(io)?;
    let mut events = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io)?;
        let parse_err = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        if i == 0 {
            if line.trim() != EVENTS_HEADER {
                return Err(parse_err(format!("expected header `{EVENTS_HEADER}`")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let t: f64 = line.trim().parse().map_err(|e| parse_err(format!("{e}")))?;
        events.push(t);
    }
    Ok(events)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
    text.push('\n');
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Error> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        reason: e.to_string(),
    })
}

/// Per-sensor file names shared by the pipeline and the stage commands.
pub mod files {
    pub const X1: &str = "x1.csv";
    pub const X2: &str = "x2.csv";
    pub const EVENTS: &str = "events.csv";
    pub const ENCODED: &str = "encoded.csv";
    pub const RECEIVED: &str = "received.csv";
    pub const X1_DECODED: &str = "x1_decoded.csv";
    pub const X2_DECODED: &str = "x2_decoded.csv";
    pub const X1_FILTERED: &str = "x1_filtered.csv";
    pub const X2_FILTERED: &str = "x2_filtered.csv";
    pub const THRESHOLD: &str = "threshold.json";
    /// Multiplexed transmitter output before the channel.
    pub const TX_WAVEFORM: &str = "tx_waveform.csv";
    /// Channel output seen by the receiver.
    pub const WAVEFORM: &str = "waveform.csv";
    pub const REPORT: &str = "report.json";
    pub const EFFECTIVE_CONFIG: &str = "effective_config.json";
    pub const SWEEP: &str = "sweep.csv";
}

fn write_signal(stage: &'static str, sig: &Signal, path: &Path) -> Result<(), StageError> {
    sig.write_csv(path).map_err(|e| StageError::new(stage, "output_dir", e))
}

fn read_signal(stage: &'static str, path: &Path) -> Result<Signal, StageError> {
    Signal::read_csv(path).map_err(|e| StageError::new(stage, "output_dir", e))
}

/// Writes the configuration with all derived values filled in.
pub fn write_effective_config(stage: &'static str, cfg: &RunConfig, dir: &RunDir) -> Result<(), StageError> {
    let eff = cfg.effective()?;
    let path = dir.file(files::EFFECTIVE_CONFIG);
    fs::write(&path, eff.to_json() + "\n").map_err(io_err(stage, &path))
}

/// Draws the source and reconstruction figures, returning failures as text.
fn write_plots(dir: &RunDir, o: &SensorOutputs) -> Vec<String> {
    let id = o.band.sensor_id;
    let sources = [
        Panel {
            title: "microfluidic readout x1",
            x_label: "time (s)",
            y_label: "V",
            series: vec![Series::from_signal("x1", &o.sources.x1)],
        },
        Panel {
            title: "physiological signal x2",
            x_label: "time (s)",
            y_label: "level",
            series: vec![Series::from_signal("x2", &o.sources.x2)],
        },
        Panel {
            title: "encoded voltage",
            x_label: "time (s)",
            y_label: "V",
            series: vec![
                Series::from_signal("encoded", &o.encoded),
                Series::from_signal("received", &o.received),
            ],
        },
    ];
    let recon = [
        Panel {
            title: "x1 decoded and thresholded",
            x_label: "time (s)",
            y_label: "V",
            series: vec![
                Series::from_signal("decoded", &o.x1_decoded),
                Series::from_signal("filtered", &o.x1_filtered),
            ],
        },
        Panel {
            title: "x2 decoded and median filtered",
            x_label: "time (s)",
            y_label: "level",
            series: vec![
                Series::from_signal("original", &o.sources.x2),
                Series::from_signal("decoded", &o.x2_decoded),
                Series::from_signal("filtered", &o.x2_filtered),
            ],
        },
    ];
    let mut warnings = Vec::new();
    for (name, title, panels) in [
        ("sources.svg", format!("sensor {id}: sources and encoded signal"), &sources[..]),
        ("reconstruction.svg", format!("sensor {id}: reconstruction"), &recon[..]),
    ] {
        if let Err(e) = plot::write_svg(&dir.sensor_file(id, name), &title, panels) {
            warnings.push(format!("plot skipped: {e}"));
        }
    }
    warnings
}

fn write_sensor_outputs(dir: &RunDir, o: &SensorOutputs) -> Result<(), StageError> {
    let id = o.band.sensor_id;
    let f = |name| dir.sensor_file(id, name);
    write_signal("gen-cytometry", &o.sources.x1, &f(files::X1))?;
    write_events(&f(files::EVENTS), &o.sources.events).map_err(|e| StageError::new("gen-cytometry", "output_dir", e))?;
    write_signal("gen-gsr", &o.sources.x2, &f(files::X2))?;
    write_signal("encode", &o.encoded, &f(files::ENCODED))?;
    write_signal("demodulate", &o.received, &f(files::RECEIVED))?;
    write_signal("decode", &o.x1_decoded, &f(files::X1_DECODED))?;
    write_signal("decode", &o.x2_decoded, &f(files::X2_DECODED))?;
    write_signal("filter", &o.x1_filtered, &f(files::X1_FILTERED))?;
    write_signal("filter", &o.x2_filtered, &f(files::X2_FILTERED))?;
    write_json(&f(files::THRESHOLD), &o.threshold).map_err(|e| StageError::new("filter", "output_dir", e))
}

/// Runs the full chain and writes every artifact under `cfg.output_dir`.
pub fn run_pipeline(cfg: &RunConfig) -> Result<ReconstructionReport, StageError> {
    let run = execute(cfg)?;
    let dir = RunDir::new(&cfg.output_dir);
    dir.create("pipeline", run.outputs.iter().map(|o| o.band.sensor_id))?;
    write_effective_config("pipeline", cfg, &dir)?;
    let mut report = run.report;
    for o in &run.outputs {
        write_sensor_outputs(&dir, o)?;
        if cfg.outputs.plots {
            report.warnings.extend(write_plots(&dir, o));
        }
    }
    if cfg.outputs.waveform_csv {
        write_signal("channel", &run.transmission.rx, &dir.file(files::WAVEFORM))?;
    }
    write_json(&dir.file(files::REPORT), &report).map_err(|e| StageError::new("metrics", "output_dir", e))?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ns: usize,
    pub sensor_id: u32,
    pub rmse_x1: f64,
    pub rmse_x2: f64,
    pub nrmse_x1_pct: f64,
    pub nrmse_x2_pct: f64,
    pub combined_nrmse_pct: f64,
}

/// Receiver window sweep over one recorded channel output. Scores the
/// decoded (unfiltered) signals.
pub fn sweep_transmission(tx: &Transmission, ns_values: &[usize]) -> Result<Vec<SweepRow>, StageError> {
    let r = &tx.resolved;
    let mut rows = Vec::new();
    for &ns in ns_values {
        let rp = ReceiverParams { ns, ..r.receiver.clone() };
        let demod = demodulate_stage(r, &rp, &tx.rx)?;
        for (i, d) in demod.iter().enumerate() {
            let (x1, x2) = decode_signal(&d.voltages, &r.codec).map_err(blame("decode", "ajscc"))?;
            let (e1, e2) = decoded_errors(&r.codec, &tx.sources[i], &x1, &x2).map_err(blame("metrics", ""))?;
            rows.push(SweepRow {
                ns,
                sensor_id: d.sensor_id,
                rmse_x1: e1.rmse,
                rmse_x2: e2.rmse,
                nrmse_x1_pct: e1.nrmse_pct,
                nrmse_x2_pct: e2.nrmse_pct,
                combined_nrmse_pct: combined_nrmse(&e1, &e2),
            });
        }
    }
    Ok(rows)
}

pub const SWEEP_HEADER: &str = "ns,sensor_id,rmse_x1,rmse_x2,nrmse_x1_pct,nrmse_x2_pct,combined_nrmse_pct";

/// Re-runs the receiver for each `ns` over the same channel output and writes
/// `sweep.csv` and `sweep.svg` under `cfg.output_dir`.
pub fn ns_sweep(cfg: &RunConfig, ns_values: &[usize]) -> Result<Vec<SweepRow>, StageError> {
    if ns_values.is_empty() {
        return Err(StageError::new("ns-sweep", "receiver.ns", Error::Empty("ns sweep values")));
    }
    let tx = transmit(cfg)?;
    let rows = sweep_transmission(&tx, ns_values)?;
    let dir = RunDir::new(&cfg.output_dir);
    dir.create("ns-sweep", [])?;
    let path = dir.file(files::SWEEP);
    let mut text = String::from(SWEEP_HEADER);
    text.push('\n');
    for r in &rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.ns, r.sensor_id, r.rmse_x1, r.rmse_x2, r.nrmse_x1_pct, r.nrmse_x2_pct, r.combined_nrmse_pct
        ));
    }
    fs::write(&path, text).map_err(io_err("ns-sweep", &path))?;
    if cfg.outputs.plots {
        let series = tx
            .resolved
            .link
            .sensors
            .iter()
            .map(|b| Series {
                label: format!("sensor {}", b.sensor_id),
                points: rows
                    .iter()
                    .filter(|r| r.sensor_id == b.sensor_id)
                    .map(|r| ((r.ns as f64).log10(), r.combined_nrmse_pct))
                    .collect(),
            })
            .collect();
        let panel = Panel {
            title: "combined decoded NRMSE vs window size",
            x_label: "log10(ns)",
            y_label: "NRMSE (%)",
            series,
        };
        // plots never fail the run
        if let Err(e) = plot::write_svg(&dir.file("sweep.svg"), "receiver window sweep", &[panel]) {
            eprintln!("warning: plot skipped: {e}");
        }
    }
    Ok(rows)
}

/// Individually runnable pipeline stages. Each reads the previous stage's
/// files from the run directory and writes its own, so running them in
/// order reproduces the pipeline's files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    GenCytometry,
    GenGsr,
    Encode,
    Modulate,
    Channel,
    Demodulate,
    Decode,
    Filter,
    Metrics,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::GenCytometry => "gen-cytometry",
            Stage::GenGsr => "gen-gsr",
            Stage::Encode => "encode",
            Stage::Modulate => "modulate",
            Stage::Channel => "channel",
            Stage::Demodulate => "demodulate",
            Stage::Decode => "decode",
            Stage::Filter => "filter",
            Stage::Metrics => "metrics",
        }
    }
}

/// Runs one stage against the run directory `cfg.output_dir`.
pub fn run_stage(stage: Stage, cfg: &RunConfig) -> Result<(), StageError> {
    let r = cfg.resolve()?;
    let dir = RunDir::new(&cfg.output_dir);
    let ids: Vec<u32> = r.link.sensors.iter().map(|b| b.sensor_id).collect();
    let name = stage.name();
    dir.create(name, ids.iter().copied())?;
    let read_all = |file: &str| -> Result<Vec<Signal>, StageError> {
        ids.iter().map(|&id| read_signal(name, &dir.sensor_file(id, file))).collect()
    };
    let write_all = |file: &str, sigs: &[Signal]| -> Result<(), StageError> {
        ids.iter()
            .zip(sigs)
            .try_for_each(|(&id, s)| write_signal(name, s, &dir.sensor_file(id, file)))
    };
    match stage {
        Stage::GenCytometry => {
            write_effective_config(name, cfg, &dir)?;
            for (&id, (x1, events)) in ids.iter().zip(gen_cytometry_stage(cfg, &r)?) {
                write_signal(name, &x1, &dir.sensor_file(id, files::X1))?;
                write_events(&dir.sensor_file(id, files::EVENTS), &events)
                    .map_err(|e| StageError::new(name, "output_dir", e))?;
            }
        }
        Stage::GenGsr => write_all(files::X2, &gen_gsr_stage(cfg, &r)?)?,
        Stage::Encode => {
            let x1 = read_all(files::X1)?;
            let x2 = read_all(files::X2)?;
            write_all(files::ENCODED, &encode_stage(cfg, &r, &x1, &x2)?)?;
        }
        Stage::Modulate => {
            let tx = modulate_stage(&r, &read_all(files::ENCODED)?)?;
            write_signal(name, &tx, &dir.file(files::TX_WAVEFORM))?;
        }
        Stage::Channel => {
            let tx = read_signal(name, &dir.file(files::TX_WAVEFORM))?;
            write_signal(name, &channel_stage(&r, tx)?, &dir.file(files::WAVEFORM))?;
        }
        Stage::Demodulate => {
            let rx = read_signal(name, &dir.file(files::WAVEFORM))?;
            let demod = demodulate_stage(&r, &r.receiver, &rx)?;
            let v: Vec<Signal> = demod.into_iter().map(|d| d.voltages).collect();
            write_all(files::RECEIVED, &v)?;
        }
        Stage::Decode => {
            let (x1, x2): (Vec<Signal>, Vec<Signal>) = decode_stage(&r, &read_all(files::RECEIVED)?)?.into_iter().unzip();
            write_all(files::X1_DECODED, &x1)?;
            write_all(files::X2_DECODED, &x2)?;
        }
        Stage::Filter => {
            let x1 = read_all(files::X1_DECODED)?;
            let x2 = read_all(files::X2_DECODED)?;
            for ((&id, a), b) in ids.iter().zip(&x1).zip(&x2) {
                let (t, m) = filter_stage(cfg, a, b)?;
                write_signal(name, &t.signal, &dir.sensor_file(id, files::X1_FILTERED))?;
                write_signal(name, &m, &dir.sensor_file(id, files::X2_FILTERED))?;
                let info = ThresholdInfo {
                    theta: t.theta,
                    degenerate: t.degenerate,
                };
                write_json(&dir.sensor_file(id, files::THRESHOLD), &info)
                    .map_err(|e| StageError::new(name, "output_dir", e))?;
            }
        }
        Stage::Metrics => {
            let outputs = load_outputs(&dir, &r, name)?;
            let report = build_report(cfg, &r, &outputs)?;
            write_json(&dir.file(files::REPORT), &report).map_err(|e| StageError::new(name, "output_dir", e))?;
        }
    }
    Ok(())
}

/// Reads every per-sensor artifact back from a run directory.
pub fn load_outputs(dir: &RunDir, r: &Resolved, stage: &'static str) -> Result<Vec<SensorOutputs>, StageError> {
    r.link
        .sensors
        .iter()
        .map(|band| {
            let id = band.sensor_id;
            let f = |name| dir.sensor_file(id, name);
            let events = read_events(&f(files::EVENTS)).map_err(|e| StageError::new(stage, "output_dir", e))?;
            let threshold: ThresholdInfo =
                read_json(&f(files::THRESHOLD)).map_err(|e| StageError::new(stage, "output_dir", e))?;
            Ok(SensorOutputs {
                band: band.clone(),
                sources: Sources {
                    x1: read_signal(stage, &f(files::X1))?,
                    x2: read_signal(stage, &f(files::X2))?,
                    events,
                },
                encoded: read_signal(stage, &f(files::ENCODED))?,
                received: read_signal(stage, &f(files::RECEIVED))?,
                peak_bins: Vec::new(),
                x1_decoded: read_signal(stage, &f(files::X1_DECODED))?,
                x2_decoded: read_signal(stage, &f(files::X2_DECODED))?,
                x1_filtered: read_signal(stage, &f(files::X1_FILTERED))?,
                x2_filtered: read_signal(stage, &f(files::X2_FILTERED))?,
                threshold,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short_cfg() -> RunConfig {
        RunConfig::default()
            .with_overrides(&["duration_s=3".into(), "median.order_k=20".into()])
            .unwrap()
    }

    #[test]
    fn empty_duration_names_generator_stage() {
        let cfg = RunConfig::default().with_overrides(&["duration_s=0".into()]).unwrap();
        let err = execute(&cfg).unwrap_err();
        assert_eq!(err.stage, "gen-cytometry");
        assert_eq!(err.config_path, "duration_s");
        assert!(err.to_string().contains("gen-cytometry"));
    }

    #[test]
    fn hold_sampling_reads_interval_centres() {
        let cfg = short_cfg();
        let r = cfg.resolve().unwrap();
        let ramp = Signal::new((0..3000).map(|i| i as f64 / 1000.0).collect(), 1000.0).unwrap();
        let held = sample_at_holds(&ramp, hold_count(&cfg, &r), &r).unwrap();
        assert_eq!(held.len(), 300);
        assert_eq!(held.sample_rate_hz(), 100.0);
        assert!((held.samples()[7] - 0.075).abs() < 1e-12);
    }

    #[test]
    fn short_run_recovers_grid_constant_sources() {
        let mut cfg = short_cfg();
        cfg.link.snr_db = None;
        cfg.cytometry.delta_r_ohm = 0.0;
        cfg.gsr.tonic_level = 0.3;
        cfg.gsr.drift_rate_per_s = 0.0;
        cfg.gsr.phasic_events.clear();
        let run = execute(&cfg).unwrap();
        let s = &run.report.sensors[0];
        assert_eq!(s.x2_decoded.rmse, 0.0);
        assert!(s.x1_decoded.nrmse_pct < 0.5);
        assert_eq!(s.stage_occupancy[3], 300);
    }

    #[test]
    fn oversize_window_is_a_demodulate_error() {
        let cfg = short_cfg();
        let tx = transmit(&cfg).unwrap();
        let err = sweep_transmission(&tx, &[2_000_000]).unwrap_err();
        assert_eq!(err.stage, "demodulate");
        assert_eq!(err.config_path, "receiver.ns");
    }
}
