use std::path::PathBuf;
use std::process::ExitCode;

use ajscc_core::pipeline::{self, Stage};
use ajscc_core::{ReconstructionReport, RunConfig, StageError};
use clap::{Parser, Subcommand};

/// AJSCC sensor link simulator.
///
/// Every stage works on a run directory (`--out`): it reads the files of the
/// previous stage and writes its own, so running the stages in order gives
/// the same files as `pipeline`.
#[derive(Parser)]
#[command(name = "ajscc", version)]
struct Cli {
    /// JSON run configuration; defaults are used for anything it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dotted config override such as `receiver.ns=1000` (repeatable).
    #[arg(long = "override", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the impedance readout and bead arrival times.
    GenCytometry,
    /// Synthesize (or replay) the physiological signal.
    GenGsr,
    /// Staircase-encode the sources at the hold rate.
    Encode,
    /// FM-modulate and multiplex the encoded streams.
    Modulate,
    /// Add channel noise.
    Channel,
    /// Recover encoded voltages by windowed FFT peak detection.
    Demodulate,
    /// Split recovered voltages into x1 and x2.
    Decode,
    /// Threshold x1 and median-filter x2.
    Filter,
    /// Score the reconstruction and write report.json.
    Metrics,
    /// Run every stage and write all artifacts.
    Pipeline,
    /// Re-run the receiver for several window sizes over one channel output.
    NsSweep {
        /// Window sizes to try.
        #[arg(long, value_delimiter = ',', default_values_t = [500usize, 1000, 5000, 20000])]
        ns: Vec<usize>,
    },
}

fn load(cli: &Cli) -> Result<RunConfig, StageError> {
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    let mut cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    if let Some(out) = &cli.out {
        cfg.output_dir = out.to_string_lossy().into_owned();
    }
    Ok(cfg)
}

fn print_summary(report: &ReconstructionReport) {
    for s in &report.sensors {
        let pulses = s.x1_filtered.pulses.expect("pipeline scores pulses");
        println!(
            "sensor {}: x1 nrmse {:.3}% (filtered {:.3}%), x2 nrmse {:.3}% (filtered {:.3}%), \
             pulses {}/{} recall {:.3} precision {:.3}, theta {:.6}",
            s.sensor_id,
            s.x1_decoded.nrmse_pct,
            s.x1_filtered.error.nrmse_pct,
            s.x2_decoded.nrmse_pct,
            s.x2_filtered.nrmse_pct,
            pulses.matched,
            pulses.true_events,
            pulses.recall,
            pulses.precision,
            s.threshold.theta,
        );
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
}

fn run(cli: &Cli) -> Result<(), StageError> {
    let cfg = load(cli)?;
    let stage = match &cli.command {
        Command::GenCytometry => Stage::GenCytometry,
        Command::GenGsr => Stage::GenGsr,
        Command::Encode => Stage::Encode,
        Command::Modulate => Stage::Modulate,
        Command::Channel => Stage::Channel,
        Command::Demodulate => Stage::Demodulate,
        Command::Decode => Stage::Decode,
        Command::Filter => Stage::Filter,
        Command::Metrics => Stage::Metrics,
        Command::Pipeline => {
            let report = pipeline::run_pipeline(&cfg)?;
            print_summary(&report);
            eprintln!("runtime: {:.2} s", report.runtime_s);
            return Ok(());
        }
        Command::NsSweep { ns } => {
            let rows = pipeline::ns_sweep(&cfg, ns)?;
            println!("{}", pipeline::SWEEP_HEADER);
            for r in rows {
                println!(
                    "{},{},{:.6},{:.6},{:.4},{:.4},{:.4}",
                    r.ns, r.sensor_id, r.rmse_x1, r.rmse_x2, r.nrmse_x1_pct, r.nrmse_x2_pct, r.combined_nrmse_pct
                );
            }
            return Ok(());
        }
    };
    pipeline::run_stage(stage, &cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e.source);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
