//! End-to-end compositions of the modules, shared by the command line, the
//! acceptance tests and anything else driving the kit from code.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use thiserror::Error;

use crate::device::{DeviceError, PinSink};
use crate::force::{
    estimate_contact_force, estimate_contact_force_aligned, Alignment, ForceError, ForceFrame,
};
use crate::model::{
    DisplayProfile, Heights, ModelError, PatternRecording, PinFrame, TuningParams, PIN_COUNT,
};
use crate::pattern::{csv_number, load_file, PatternError, RecordingSession};
use crate::playback::{Clock, PlaybackError, PlaybackJob, PlaybackReport};
use crate::synth::{SynthError, TrajectoryScenario};
use crate::tracker::{
    calibrate_baseline, run_pipeline, Delivery, FrameSource, Pacing, PipelineOptions, SourceFrame,
    Tracker, TrackerCalibration, TrackerConfig, TrackerError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkflowError {
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error(transparent)]
    Playback(#[from] PlaybackError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Force(#[from] ForceError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl WorkflowError {
    /// Stable token identifying the error class.
    pub fn code(&self) -> &'static str {
        match self {
            WorkflowError::Pattern(e) => match e {
                PatternError::State { .. } => "StateError",
                PatternError::EmptyRecording => "EmptyRecording",
                PatternError::NotFound(_) => "NotFound",
                PatternError::Format(_) => "FormatError",
                PatternError::Io(_) => "IoError",
            },
            WorkflowError::Playback(PlaybackError::Param(_)) => "ParamError",
            WorkflowError::Playback(PlaybackError::State(_)) => "StateError",
            WorkflowError::Device(e) => match e {
                DeviceError::Protocol(_) => "ProtocolError",
                DeviceError::Crc { .. } => "CrcError",
                DeviceError::Range { .. } => "RangeError",
                DeviceError::Sink(_) => "SinkError",
            },
            WorkflowError::Tracker(TrackerError::CalibrationFailed(_)) => "CalibrationFailed",
            WorkflowError::Tracker(TrackerError::DegenerateScale { .. }) => "DegenerateScale",
            WorkflowError::Tracker(_) => "TrackerError",
            WorkflowError::Force(ForceError::TooShort { .. }) => "TooShort",
            WorkflowError::Force(ForceError::Profile(_)) => "ProfileError",
            WorkflowError::Synth(_) => "SynthError",
            WorkflowError::Model(_) | WorkflowError::Param(_) => "ParamError",
            WorkflowError::Io(_) => "IoError",
        }
    }
}

/// A duration given either in frames (`90f`) or time (`3s`, `1500ms`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DurationSpec {
    Frames(u64),
    Millis(f64),
}

impl DurationSpec {
    pub fn to_ms(self, rate_hz: f64) -> f64 {
        match self {
            DurationSpec::Frames(n) => n as f64 * 1000.0 / rate_hz,
            DurationSpec::Millis(ms) => ms,
        }
    }
}

impl FromStr for DurationSpec {
    type Err = WorkflowError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad =
            || WorkflowError::Param(format!("bad duration {s:?}; use e.g. 90f, 3s or 1500ms"));
        let s = s.trim();
        let (number, unit) = if let Some(n) = s.strip_suffix("ms") {
            (n, "ms")
        } else if let Some(n) = s.strip_suffix('s') {
            (n, "s")
        } else if let Some(n) = s.strip_suffix('f') {
            (n, "f")
        } else {
            return Err(bad());
        };
        let spec = match unit {
            "f" => DurationSpec::Frames(number.parse().map_err(|_| bad())?),
            _ => {
                let v: f64 = number.parse().map_err(|_| bad())?;
                if !(v.is_finite() && v >= 0.0) {
                    return Err(bad());
                }
                DurationSpec::Millis(if unit == "s" { v * 1000.0 } else { v })
            }
        };
        Ok(spec)
    }
}

/// Ground-truth recording of a scenario, no camera involved.
pub fn simulate_recording(
    scenario: &TrajectoryScenario,
    profile: &DisplayProfile,
    rate_hz: f64,
    name: &str,
) -> Result<PatternRecording, WorkflowError> {
    let mut rec = scenario.sample_recording(profile, rate_hz)?;
    rec.name = name.to_string();
    Ok(rec)
}

/// Load a pattern file, reporting a missing file as `NotFound`.
pub fn load_pattern(path: &Path) -> Result<PatternRecording, WorkflowError> {
    Ok(load_file(path)?)
}

#[derive(Debug, Clone)]
pub struct TrackOptions {
    pub profile: DisplayProfile,
    pub rate_hz: f64,
    /// Use the first source frame as the rest baseline.
    pub calibrate_first: bool,
    /// Calibration to use instead of calibrating on the first frame.
    pub calibration: Option<TrackerCalibration>,
    /// Pace capture at `rate_hz` with latest-wins delivery instead of
    /// processing every frame as fast as possible.
    pub realtime: bool,
    pub name: String,
    /// Raised to end capture early; the take so far is kept.
    pub interrupt: Option<Arc<AtomicBool>>,
}

impl TrackOptions {
    pub fn new(profile: DisplayProfile, rate_hz: f64, name: &str) -> Self {
        Self {
            profile,
            rate_hz,
            calibrate_first: true,
            calibration: None,
            realtime: false,
            name: name.to_string(),
            interrupt: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrackOutcome {
    pub recording: PatternRecording,
    pub calibration: TrackerCalibration,
    pub dropped: u64,
    /// Frames in which at least one lane had no marker.
    pub frames_with_missing_lanes: usize,
}

struct Prepend {
    first: Option<SourceFrame>,
    rest: Box<dyn FrameSource>,
}

impl FrameSource for Prepend {
    fn next_frame(&mut self) -> Option<Result<SourceFrame, TrackerError>> {
        match self.first.take() {
            Some(f) => Some(Ok(f)),
            None => self.rest.next_frame(),
        }
    }

    fn describe(&self) -> String {
        self.rest.describe()
    }
}

/// Sync on the first frame (or a given calibration), then record every
/// following frame through the capture pipeline.
pub fn track_to_recording(
    mut source: Box<dyn FrameSource>,
    options: &TrackOptions,
) -> Result<TrackOutcome, WorkflowError> {
    let first = source.next_frame().ok_or_else(|| {
        WorkflowError::Param(format!("{} produced no frames", source.describe()))
    })??;
    let mut config = TrackerConfig::for_image(first.image.width(), first.image.height());
    config.target_rate_hz = options.rate_hz;

    let mut session = RecordingSession::new(options.profile, options.rate_hz);
    session.begin_sync()?;
    let (calibration, source): (TrackerCalibration, Box<dyn FrameSource>) = if options
        .calibrate_first
    {
        match calibrate_baseline(&first.image, &config) {
            Ok(cal) => (cal, source),
            Err(e) => {
                session.abort_sync()?;
                return Err(e.into());
            }
        }
    } else {
        let cal = options.calibration.clone().ok_or_else(|| {
            WorkflowError::Param("tracking needs --calibrate-first or a calibration file".into())
        })?;
        let rest = Box::new(Prepend {
            first: Some(first),
            rest: source,
        });
        (cal, rest)
    };
    session.complete_sync(calibration.clone())?;
    session.start_recording()?;

    let tracker = Tracker::new(calibration.clone(), config, options.profile)?;
    let pipeline = PipelineOptions {
        pacing: if options.realtime {
            Pacing::RealTime
        } else {
            Pacing::Unpaced
        },
        delivery: if options.realtime {
            Delivery::LatestWins
        } else {
            Delivery::Lossless
        },
    };
    let mut handle = run_pipeline(source, tracker, pipeline);
    let mut missing = 0;
    let mut interrupted = false;
    for tracked in handle.by_ref() {
        if !tracked.missing_lanes.is_empty() {
            missing += 1;
        }
        session.push_frame(tracked.frame);
        if options
            .interrupt
            .as_ref()
            .is_some_and(|f| f.load(Ordering::Acquire))
        {
            interrupted = true;
            break;
        }
    }
    let summary = if interrupted {
        handle.finish()
    } else {
        handle.wait()
    };
    if let Some(e) = summary.error {
        return Err(e.into());
    }
    session.note_capture_drops(summary.dropped);
    let mut annotations = BTreeMap::new();
    if missing > 0 {
        annotations.insert("frames_with_missing_lanes".into(), missing.to_string());
    }
    let recording = session.stop_recording(&options.name, annotations)?;
    Ok(TrackOutcome {
        recording,
        calibration,
        dropped: summary.dropped,
        frames_with_missing_lanes: missing,
    })
}

/// Apply tuning and record the parameters as annotations.
pub fn tune_recording(
    recording: &PatternRecording,
    tuning: &TuningParams,
) -> Result<PatternRecording, WorkflowError> {
    let mut out = crate::playback::apply_tuning(recording, tuning)?;
    out.annotations
        .insert("tuned_height_gain".into(), tuning.height_gain.to_string());
    out.annotations
        .insert("tuned_speed_factor".into(), tuning.speed_factor.to_string());
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct PlayOutcome {
    pub report: PlaybackReport,
    /// The recording as commanded, after tuning.
    pub commanded: PatternRecording,
    /// What the sink achieved, if it keeps a trace.
    pub trace: Option<Vec<PinFrame>>,
}

/// Play a prepared job into `sink` and collect what it achieved.
pub fn run_playback(
    job: &mut PlaybackJob,
    sink: &mut dyn PinSink,
    clock: &mut dyn Clock,
) -> Result<PlayOutcome, WorkflowError> {
    let report = job.play(sink, clock)?;
    Ok(PlayOutcome {
        report,
        commanded: job.tuned_recording().clone(),
        trace: sink.trace().map(<[PinFrame]>::to_vec),
    })
}

/// Root-mean-square difference over all pins of two equally long frame runs.
pub fn rms_error(a: &[Heights], b: &[Heights]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        for p in 0..PIN_COUNT {
            sum += (x[p] - y[p]).powi(2);
        }
    }
    (sum / (n * PIN_COUNT) as f64).sqrt()
}

fn frame_rms(a: &Heights, b: &Heights) -> f64 {
    rms_error(std::slice::from_ref(a), std::slice::from_ref(b))
}

impl PlayOutcome {
    /// Commanded frame behind trace sample `j` (looping wraps around).
    fn commanded_at(&self, j: usize) -> &Heights {
        &self.commanded.frames[j % self.commanded.len()]
    }

    /// Overall RMS error between commanded and achieved heights.
    pub fn rms_error_mm(&self) -> Option<f64> {
        let trace = self.trace.as_ref()?;
        if trace.is_empty() {
            return Some(0.0);
        }
        let commanded: Vec<Heights> = (0..trace.len()).map(|j| *self.commanded_at(j)).collect();
        let achieved: Vec<Heights> = trace.iter().map(|f| f.heights_mm).collect();
        Some(rms_error(&commanded, &achieved))
    }

    /// `t_ms,rms_error_mm,a0..a24`: per-frame error and achieved heights.
    pub fn report_csv(&self) -> String {
        let mut out = String::from("t_ms,rms_error_mm");
        for i in 0..PIN_COUNT {
            let _ = write!(out, ",a{i}");
        }
        out.push('\n');
        for (j, f) in self.trace.iter().flatten().enumerate() {
            out.push_str(&csv_number(f.t_ms));
            out.push(',');
            out.push_str(&csv_number(frame_rms(self.commanded_at(j), &f.heights_mm)));
            for h in &f.heights_mm {
                out.push(',');
                out.push_str(&csv_number(*h));
            }
            out.push('\n');
        }
        out
    }
}

/// Contact-force analysis of two takes, optionally auto-aligned first.
pub fn contact_force(
    detached: &PatternRecording,
    attached: &PatternRecording,
    align: bool,
) -> Result<(Option<Alignment>, Vec<ForceFrame>), WorkflowError> {
    let profile = detached.display_profile;
    if align {
        let (al, frames) = estimate_contact_force_aligned(detached, attached, &profile)?;
        Ok((Some(al), frames))
    } else {
        Ok((None, estimate_contact_force(detached, attached, &profile)?))
    }
}
