use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use shapekit::device::{open_sink, SinkKind};
use shapekit::force::force_csv;
use shapekit::model::{DisplayProfile, ProfileId, TuningParams, DEFAULT_FRAME_RATE_HZ};
use shapekit::pattern::{export_csv, save_file};
use shapekit::playback::{Clock, PlaybackJob, RealClock, SimulatedClock};
use shapekit::service::{ClockMode, Service, ServiceConfig, DEFAULT_PORT};
use shapekit::synth::{CameraModel, ScenarioKind, TrajectoryScenario};
use shapekit::tracker::{DirSource, FrameSource, SourceSpec, SynthSource, TrackerCalibration};
use shapekit::workflow::{
    contact_force, load_pattern, run_playback, simulate_recording, track_to_recording,
    tune_recording, DurationSpec, TrackOptions, WorkflowError,
};

#[derive(Parser)]
#[command(
    name = "shapekit",
    version,
    about = "Record, tune and play back pin shape display patterns"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ScenarioArgs {
    /// Peak height in mm.
    #[arg(long)]
    amplitude: Option<f64>,
    /// Wave period, e.g. 2s.
    #[arg(long)]
    period: Option<DurationSpec>,
    /// Sequential/random-walk step, e.g. 100ms.
    #[arg(long)]
    step: Option<DurationSpec>,
    /// Random-walk seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ScenarioArgs {
    fn build(&self, kind: ScenarioKind, duration_ms: f64, rate: f64) -> TrajectoryScenario {
        let mut s = TrajectoryScenario::new(kind, duration_ms);
        if let Some(a) = self.amplitude {
            s = s.with_amplitude(a);
        }
        if let Some(p) = self.period {
            s = s.with_period(p.to_ms(rate));
        }
        if let Some(p) = self.step {
            s = s.with_step(p.to_ms(rate));
        }
        if let Some(seed) = self.seed {
            s = s.with_seed(seed);
        }
        s
    }
}

#[derive(Copy, Clone, ValueEnum)]
enum PlayClock {
    Real,
    Sim,
}

#[derive(Copy, Clone, ValueEnum)]
enum ServeClock {
    Real,
    Manual,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a ground-truth recording directly from a scenario.
    Simulate {
        #[arg(long)]
        scenario: ScenarioKind,
        /// Length as frames (90f) or time (3s, 1500ms).
        #[arg(long, default_value = "10s")]
        duration: DurationSpec,
        #[command(flatten)]
        params: ScenarioArgs,
        #[arg(long, default_value_t = DEFAULT_FRAME_RATE_HZ)]
        rate: f64,
        #[arg(long, default_value = "L")]
        profile: ProfileId,
        #[arg(long)]
        name: Option<String>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Track a frame source into a recording.
    Track {
        /// synth:<scenario> or dir:<path>.
        #[arg(long)]
        source: SourceSpec,
        /// Use the first frame as the rest baseline.
        #[arg(long)]
        calibrate_first: bool,
        /// Calibration JSON to use instead of --calibrate-first.
        #[arg(long, conflicts_with = "calibrate_first")]
        calibration: Option<PathBuf>,
        /// Write the calibration used to this file.
        #[arg(long)]
        save_calibration: Option<PathBuf>,
        /// Synthetic scenario length.
        #[arg(long, default_value = "10s")]
        duration: DurationSpec,
        #[command(flatten)]
        params: ScenarioArgs,
        /// Synthetic camera noise, in pixels.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        camera_seed: u64,
        /// Pace capture at the frame rate and drop frames under load.
        #[arg(long)]
        realtime: bool,
        #[arg(long, default_value_t = DEFAULT_FRAME_RATE_HZ)]
        rate: f64,
        #[arg(long, default_value = "L")]
        profile: ProfileId,
        #[arg(long, default_value = "tracked")]
        name: String,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Play a pattern file into a sink.
    Play {
        file: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        gain: f64,
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// sim, ideal or serial:<path>.
        #[arg(long, default_value = "sim")]
        sink: SinkKind,
        #[arg(long = "loop")]
        looping: bool,
        /// Per-frame CSV of achieved heights and RMS error.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Wall-clock pacing, or a simulated clock that runs instantly.
        #[arg(long, value_enum, default_value = "real")]
        clock: PlayClock,
    },
    /// Apply height gain and speed factor, writing a new pattern file.
    Tune {
        file: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        gain: f64,
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Export a pattern file as CSV.
    Export {
        file: PathBuf,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Estimate contact force from detached and attached takes.
    Force {
        #[arg(long)]
        detached: PathBuf,
        #[arg(long)]
        attached: PathBuf,
        /// Compare frame-for-frame without auto-alignment.
        #[arg(long)]
        no_align: bool,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run the HTTP/WebSocket service.
    Serve {
        #[arg(long, default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "patterns")]
        library: PathBuf,
        #[arg(long, default_value = "L")]
        profile: ProfileId,
        #[arg(long, value_enum, default_value = "real")]
        clock: ServeClock,
    },
}

fn write(path: &Path, text: &str) -> Result<(), WorkflowError> {
    std::fs::write(path, text).map_err(|e| WorkflowError::Io(format!("{}: {e}", path.display())))
}

fn interrupt_flag() -> Arc<AtomicBool> {
    let flag = Arc::new(AtomicBool::new(false));
    let f = Arc::clone(&flag);
    if let Err(e) = ctrlc::set_handler(move || f.store(true, Ordering::Release)) {
        log::warn!("cannot install interrupt handler: {e}");
    }
    flag
}

fn open_source(
    spec: &SourceSpec,
    scenario: impl FnOnce(ScenarioKind) -> TrajectoryScenario,
    camera: CameraModel,
    profile: &DisplayProfile,
    rate: f64,
) -> Result<Box<dyn FrameSource>, WorkflowError> {
    match spec {
        SourceSpec::Synth(kind) => Ok(Box::new(SynthSource::new(
            &scenario(*kind),
            camera,
            profile,
            rate,
        )?)),
        SourceSpec::Dir(path) => Ok(Box::new(DirSource::open(path, rate)?)),
        SourceSpec::Camera(_) => Err(WorkflowError::Param(
            "live camera capture is not supported by this build; use synth: or dir:".into(),
        )),
    }
}

fn run(command: Command) -> Result<(), WorkflowError> {
    match command {
        Command::Simulate {
            scenario,
            duration,
            params,
            rate,
            profile,
            name,
            output,
        } => {
            let s = params.build(scenario, duration.to_ms(rate), rate);
            let name = name.unwrap_or_else(|| scenario.to_string());
            let rec = simulate_recording(&s, &DisplayProfile::for_id(profile), rate, &name)?;
            save_file(&rec, &output)?;
            println!(
                "frames={} duration_ms={} output={}",
                rec.len(),
                rec.duration_ms(),
                output.display()
            );
        }
        Command::Track {
            source,
            calibrate_first,
            calibration,
            save_calibration,
            duration,
            params,
            noise,
            camera_seed,
            realtime,
            rate,
            profile,
            name,
            output,
        } => {
            let profile = DisplayProfile::for_id(profile);
            let camera = CameraModel {
                noise_sigma_px: noise,
                seed: camera_seed,
                ..CameraModel::default()
            };
            let stream = open_source(
                &source,
                |k| params.build(k, duration.to_ms(rate), rate),
                camera,
                &profile,
                rate,
            )?;
            let mut options = TrackOptions::new(profile, rate, &name);
            options.calibrate_first = calibrate_first;
            options.realtime = realtime;
            options.interrupt = Some(interrupt_flag());
            if let Some(path) = calibration {
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| WorkflowError::Io(format!("{}: {e}", path.display())))?;
                let cal: TrackerCalibration = serde_json::from_str(&text)
                    .map_err(|e| WorkflowError::Param(format!("{}: {e}", path.display())))?;
                options.calibration = Some(cal);
            }
            let outcome = track_to_recording(stream, &options)?;
            save_file(&outcome.recording, &output)?;
            if let Some(path) = save_calibration {
                let text = serde_json::to_string_pretty(&outcome.calibration)
                    .map_err(|e| WorkflowError::Io(e.to_string()))?;
                write(&path, &text)?;
            }
            println!(
                "frames={} dropped={} frames_with_missing_lanes={} output={}",
                outcome.recording.len(),
                outcome.dropped,
                outcome.frames_with_missing_lanes,
                output.display()
            );
        }
        Command::Play {
            file,
            gain,
            speed,
            sink,
            looping,
            report,
            clock,
        } => {
            let rec = load_pattern(&file)?;
            if looping && matches!(clock, PlayClock::Sim) {
                return Err(WorkflowError::Param("--loop needs --clock real".into()));
            }
            let tuning = TuningParams::new(gain, speed)?;
            let mut job = PlaybackJob::new(&rec, tuning, looping)?;
            let stop = job.stop_handle();
            let flag = interrupt_flag();
            let watcher = {
                let stop = stop.clone();
                std::thread::spawn(move || {
                    while !stop.is_stopped() {
                        if flag.load(Ordering::Acquire) {
                            stop.stop();
                        }
                        std::thread::sleep(std::time::Duration::from_millis(20));
                    }
                })
            };
            let mut sink = open_sink(&sink, rec.display_profile)?;
            let mut clock: Box<dyn Clock> = match clock {
                PlayClock::Real => Box::new(RealClock::new()),
                PlayClock::Sim => Box::new(SimulatedClock::new()),
            };
            let outcome = run_playback(&mut job, sink.as_mut(), clock.as_mut());
            stop.stop();
            let _ = watcher.join();
            let outcome = outcome?;
            if let Some(path) = report {
                write(&path, &outcome.report_csv())?;
            }
            let r = &outcome.report;
            let rms = outcome
                .rms_error_mm()
                .map(|v| format!("{v:.6}"))
                .unwrap_or_else(|| "n/a".into());
            println!(
                "state={:?} frames_sent={} passes={} max_lateness_ms={:.3} rms_error_mm={rms}",
                r.state, r.frames_sent, r.passes_completed, r.max_lateness_ms
            );
            if let Some(e) = &r.error {
                return Err(WorkflowError::Device(shapekit::device::DeviceError::Sink(
                    e.clone(),
                )));
            }
        }
        Command::Tune {
            file,
            gain,
            speed,
            output,
        } => {
            let rec = load_pattern(&file)?;
            let tuned = tune_recording(&rec, &TuningParams::new(gain, speed)?)?;
            save_file(&tuned, &output)?;
            println!("frames={} output={}", tuned.len(), output.display());
        }
        Command::Export { file, csv } => {
            let rec = load_pattern(&file)?;
            write(&csv, &export_csv(&rec))?;
            println!("rows={} output={}", rec.len(), csv.display());
        }
        Command::Force {
            detached,
            attached,
            no_align,
            output,
        } => {
            let det = load_pattern(&detached)?;
            let att = load_pattern(&attached)?;
            let (alignment, frames) = contact_force(&det, &att, !no_align)?;
            write(&output, &force_csv(&frames))?;
            if let Some(al) = alignment {
                if al.low_confidence {
                    eprintln!(
                        "warning[LowConfidence]: peak correlation {:.3} below 0.5; alignment may be wrong",
                        al.peak_correlation
                    );
                }
                println!(
                    "rows={} lag_ms={:.3} peak_correlation={:.4} output={}",
                    frames.len(),
                    al.lag_ms,
                    al.peak_correlation,
                    output.display()
                );
            } else {
                println!("rows={} output={}", frames.len(), output.display());
            }
        }
        Command::Serve {
            port,
            library,
            profile,
            clock,
        } => {
            let mut config = ServiceConfig::new(library);
            config.profile = DisplayProfile::for_id(profile);
            config.clock = match clock {
                ServeClock::Real => ClockMode::RealTime,
                ServeClock::Manual => ClockMode::Manual,
            };
            let runtime =
                tokio::runtime::Runtime::new().map_err(|e| WorkflowError::Io(e.to_string()))?;
            runtime.block_on(async move {
                let service = Service::new(config)?;
                let listener = Service::bind(port)
                    .await
                    .map_err(|e| WorkflowError::Io(format!("port {port}: {e}")))?;
                let addr = listener
                    .local_addr()
                    .map_err(|e| WorkflowError::Io(e.to_string()))?;
                println!("listening on http://{addr}");
                service
                    .serve(listener, async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await
                    .map_err(|e| WorkflowError::Io(e.to_string()))
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(1)
        }
    }
}
