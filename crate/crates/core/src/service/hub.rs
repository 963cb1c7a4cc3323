use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::watch;

use crate::device::{open_sink, DeviceError, PinSink, SinkKind};
use crate::model::{DisplayProfile, Heights, PatternRecording, PinFrame, TuningParams};
use crate::pattern::{LibraryEntry, PatternError, PatternLibrary, RecordingSession, SessionState};
use crate::playback::{
    Clock, JobState, PlaybackJob, PlaybackReport, RealClock, SharedSink, SimulatedClock, StopHandle,
};
use crate::synth::{CameraModel, ScenarioKind, TrajectoryScenario};
use crate::tracker::{
    calibrate_baseline, DirSource, FrameSource, SynthSource, Tracker, TrackerConfig,
};

use super::ClockMode;

/// Failures with a fixed HTTP meaning.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HubError {
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Internal(String),
}

impl From<PatternError> for HubError {
    fn from(e: PatternError) -> Self {
        match e {
            PatternError::State { .. } => HubError::Conflict(e.to_string()),
            PatternError::NotFound(_) => HubError::NotFound(e.to_string()),
            PatternError::EmptyRecording | PatternError::Format(_) => {
                HubError::Invalid(e.to_string())
            }
            PatternError::Io(_) => HubError::Internal(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LiveSource {
    Tracking,
    Playback,
}

/// One message on the live channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveFrame {
    pub t_ms: f64,
    pub heights_mm: Heights,
    pub source: LiveSource,
}

/// `POST /session/source` body.
#[derive(Debug, Clone, Deserialize)]
pub struct SourceRequest {
    pub kind: String,
    #[serde(default)]
    pub params: Value,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SynthParams {
    scenario: String,
    duration_ms: f64,
    amplitude_mm: Option<f64>,
    period_ms: Option<f64>,
    step_ms: Option<f64>,
    seed: Option<u64>,
    noise_px: f64,
    camera_seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            scenario: "wave".into(),
            duration_ms: 10_000.0,
            amplitude_mm: None,
            period_ms: None,
            step_ms: None,
            seed: None,
            noise_px: 0.0,
            camera_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct DirParams {
    path: PathBuf,
}

#[derive(Debug, Clone)]
enum SourceSpec {
    Synth {
        scenario: TrajectoryScenario,
        camera: CameraModel,
    },
    Dir(PathBuf),
}

struct ActiveSource {
    descriptor: String,
    spec: SourceSpec,
    stream: Box<dyn FrameSource>,
    exhausted: bool,
}

/// `POST /playback/start` body.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaybackRequest {
    pub id: String,
    #[serde(default = "one")]
    pub gain: f64,
    #[serde(default = "one")]
    pub speed: f64,
    #[serde(default = "default_sink")]
    pub sink: String,
    #[serde(default, rename = "loop")]
    pub looping: bool,
}

fn one() -> f64 {
    1.0
}

fn default_sink() -> String {
    "sim".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaybackStatus {
    pub job_id: String,
    pub pattern_id: String,
    pub sink: String,
    pub state: JobState,
    pub frames_sent: u64,
    pub report: Option<PlaybackReport>,
}

struct PlaybackSlot {
    job_id: String,
    pattern_id: String,
    sink: String,
    stop: StopHandle,
    sent: Arc<AtomicU64>,
    report: Arc<Mutex<Option<PlaybackReport>>>,
    thread: Option<JoinHandle<()>>,
}

impl PlaybackSlot {
    fn is_running(&self) -> bool {
        self.report.lock().unwrap().is_none()
    }

    fn status(&self) -> PlaybackStatus {
        let report = self.report.lock().unwrap().clone();
        PlaybackStatus {
            job_id: self.job_id.clone(),
            pattern_id: self.pattern_id.clone(),
            sink: self.sink.clone(),
            state: report
                .as_ref()
                .map(|r| r.state)
                .unwrap_or(JobState::Playing),
            frames_sent: self.sent.load(Ordering::Acquire),
            report,
        }
    }
}

/// Forwards to the real sink and mirrors every frame onto the live channel.
struct LiveTap<'a> {
    inner: &'a mut dyn PinSink,
    live: watch::Sender<Option<LiveFrame>>,
    sent: Arc<AtomicU64>,
}

impl PinSink for LiveTap<'_> {
    fn send(&mut self, frame: &PinFrame) -> Result<(), DeviceError> {
        self.inner.send(frame)?;
        self.sent.fetch_add(1, Ordering::AcqRel);
        self.live.send_replace(Some(LiveFrame {
            t_ms: frame.t_ms,
            heights_mm: frame.heights_mm,
            source: LiveSource::Playback,
        }));
        Ok(())
    }

    fn close(&mut self) -> Result<(), DeviceError> {
        self.inner.close()
    }

    fn describe(&self) -> String {
        self.inner.describe()
    }
}

/// Client-visible session state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub state: SessionState,
    pub calibrated: bool,
    pub source: Option<String>,
    pub subscribers: usize,
    pub playback: Option<PlaybackStatus>,
    pub last_error: Option<String>,
}

/// Single owner of the session, library, capture source and playback job.
pub struct Hub {
    mode: ClockMode,
    profile: DisplayProfile,
    frame_rate_hz: f64,
    session: RecordingSession,
    library: PatternLibrary,
    source: Option<ActiveSource>,
    tracker: Option<Tracker>,
    live: watch::Sender<Option<LiveFrame>>,
    serial_sinks: BTreeMap<PathBuf, SharedSink>,
    playback: Option<PlaybackSlot>,
    next_job: u64,
    last_error: Option<String>,
}

impl Hub {
    pub fn new(
        mode: ClockMode,
        profile: DisplayProfile,
        frame_rate_hz: f64,
        library: PatternLibrary,
        live: watch::Sender<Option<LiveFrame>>,
    ) -> Self {
        Self {
            mode,
            profile,
            frame_rate_hz,
            session: RecordingSession::new(profile, frame_rate_hz),
            library,
            source: None,
            tracker: None,
            live,
            serial_sinks: BTreeMap::new(),
            playback: None,
            next_job: 1,
            last_error: None,
        }
    }

    pub fn state(&self) -> SessionState {
        self.session.state()
    }

    pub fn snapshot(&self, subscribers: usize) -> SessionSnapshot {
        SessionSnapshot {
            state: self.session.state(),
            calibrated: self.tracker.is_some(),
            source: self.source.as_ref().map(|s| s.descriptor.clone()),
            subscribers,
            playback: self.playback.as_ref().map(PlaybackSlot::status),
            last_error: self.last_error.clone(),
        }
    }

    fn open_stream(&self, spec: &SourceSpec) -> Result<Box<dyn FrameSource>, HubError> {
        match spec {
            SourceSpec::Synth { scenario, camera } => {
                let src =
                    SynthSource::new(scenario, camera.clone(), &self.profile, self.frame_rate_hz)
                        .map_err(|e| HubError::Invalid(e.to_string()))?
                        .looping(true);
                Ok(Box::new(src))
            }
            SourceSpec::Dir(path) => DirSource::open(path, self.frame_rate_hz)
                .map(|s| Box::new(s) as Box<dyn FrameSource>)
                .map_err(|e| HubError::Invalid(e.to_string())),
        }
    }

    fn parse_source(&self, req: &SourceRequest) -> Result<(String, SourceSpec), HubError> {
        let params = if req.params.is_null() {
            Value::Object(Default::default())
        } else {
            req.params.clone()
        };
        let invalid = |e: serde_json::Error| HubError::Invalid(format!("bad source params: {e}"));
        match req.kind.as_str() {
            "synth" => {
                let p: SynthParams = serde_json::from_value(params).map_err(invalid)?;
                let kind: ScenarioKind = p
                    .scenario
                    .parse()
                    .map_err(|e: crate::synth::SynthError| HubError::Invalid(e.to_string()))?;
                let mut scenario = TrajectoryScenario::new(kind, p.duration_ms);
                if let Some(a) = p.amplitude_mm {
                    scenario = scenario.with_amplitude(a);
                }
                if let Some(v) = p.period_ms {
                    scenario = scenario.with_period(v);
                }
                if let Some(v) = p.step_ms {
                    scenario = scenario.with_step(v);
                }
                if let Some(v) = p.seed {
                    scenario = scenario.with_seed(v);
                }
                scenario
                    .validate()
                    .map_err(|e| HubError::Invalid(e.to_string()))?;
                let camera = CameraModel {
                    noise_sigma_px: p.noise_px,
                    seed: p.camera_seed,
                    ..CameraModel::default()
                };
                Ok((
                    format!("synth:{kind}"),
                    SourceSpec::Synth { scenario, camera },
                ))
            }
            "dir" => {
                let p: DirParams = serde_json::from_value(params).map_err(invalid)?;
                Ok((format!("dir:{}", p.path.display()), SourceSpec::Dir(p.path)))
            }
            "camera" => Err(HubError::Invalid(
                "live camera capture is not supported by this build; use synth or dir".into(),
            )),
            other => Err(HubError::Invalid(format!("unknown source kind {other:?}"))),
        }
    }

    /// Select a capture source. Resets calibration; refused mid-recording.
    pub fn set_source(&mut self, req: &SourceRequest) -> Result<(), HubError> {
        if self.session.state() == SessionState::Recording {
            return Err(HubError::Conflict(
                "cannot change source while Recording".into(),
            ));
        }
        let (descriptor, spec) = self.parse_source(req)?;
        let stream = self.open_stream(&spec)?;
        self.session.reset();
        self.tracker = None;
        self.last_error = None;
        self.source = Some(ActiveSource {
            descriptor,
            spec,
            stream,
            exhausted: false,
        });
        Ok(())
    }

    /// Start Sync: the next frame becomes the baseline. The source restarts
    /// from its rest lead-in, as the operator holds the pins at rest.
    pub fn begin_sync(&mut self) -> Result<(), HubError> {
        let Some(spec) = self.source.as_ref().map(|s| s.spec.clone()) else {
            return Err(HubError::Conflict("cannot sync without a source".into()));
        };
        self.session.begin_sync()?;
        match self.open_stream(&spec) {
            Ok(stream) => {
                let src = self.source.as_mut().expect("checked above");
                src.stream = stream;
                src.exhausted = false;
                self.last_error = None;
                Ok(())
            }
            Err(e) => {
                self.session.abort_sync()?;
                Err(e)
            }
        }
    }

    /// Pull and process one source frame. Returns false when nothing was read.
    pub fn step(&mut self) -> bool {
        let Some(src) = self.source.as_mut() else {
            return false;
        };
        if src.exhausted {
            return false;
        }
        let frame = match src.stream.next_frame() {
            None => {
                src.exhausted = true;
                if self.session.state() == SessionState::Syncing {
                    self.fail_sync("source ended before a sync frame".into());
                }
                return false;
            }
            Some(Err(e)) => {
                self.last_error = Some(e.to_string());
                if self.session.state() == SessionState::Syncing {
                    self.fail_sync(e.to_string());
                }
                return true;
            }
            Some(Ok(f)) => f,
        };
        match self.session.state() {
            SessionState::Idle => {}
            SessionState::Syncing => {
                let config = TrackerConfig::for_image(frame.image.width(), frame.image.height());
                let result = calibrate_baseline(&frame.image, &config).and_then(|cal| {
                    Tracker::new(cal.clone(), config, self.profile).map(|t| (cal, t))
                });
                match result {
                    Ok((cal, tracker)) => {
                        self.tracker = Some(tracker);
                        self.session.complete_sync(cal).expect("session is syncing");
                    }
                    Err(e) => self.fail_sync(e.to_string()),
                }
            }
            SessionState::Tracking | SessionState::Recording => {
                let tracker = self.tracker.as_mut().expect("tracking implies calibration");
                match tracker.track(&frame.image, frame.t_ms) {
                    Ok(tracked) => {
                        self.session.push_frame(tracked.frame);
                        self.live.send_replace(Some(LiveFrame {
                            t_ms: tracked.frame.t_ms,
                            heights_mm: tracked.frame.heights_mm,
                            source: LiveSource::Tracking,
                        }));
                    }
                    Err(e) => {
                        self.session.note_capture_drops(1);
                        self.last_error = Some(e.to_string());
                    }
                }
            }
        }
        true
    }

    fn fail_sync(&mut self, reason: String) {
        log::warn!("sync failed: {reason}");
        self.last_error = Some(format!("sync failed: {reason}"));
        self.tracker = None;
        let _ = self.session.abort_sync();
    }

    pub fn start_recording(&mut self) -> Result<(), HubError> {
        self.session.start_recording()?;
        Ok(())
    }

    /// Stop, name and persist the take. Returns the saved entry.
    pub fn stop_recording(
        &mut self,
        name: &str,
        annotations: BTreeMap<String, String>,
    ) -> Result<LibraryEntry, HubError> {
        if self.session.state() == SessionState::Recording && name.trim().is_empty() {
            return Err(HubError::Invalid("pattern name must not be empty".into()));
        }
        let rec = self.session.stop_recording(name.trim(), annotations)?;
        let id = self.library.save(&rec)?;
        Ok(self.library.get(&id).cloned().expect("just saved"))
    }

    pub fn patterns(&self) -> Vec<LibraryEntry> {
        self.library.list()
    }

    pub fn pattern(&self, id: &str) -> Result<PatternRecording, HubError> {
        Ok(self.library.load(id)?)
    }

    pub fn delete_pattern(&mut self, id: &str) -> Result<(), HubError> {
        Ok(self.library.delete(id)?)
    }

    fn sink_for(&mut self, kind: &SinkKind) -> Result<SharedSink, HubError> {
        if let SinkKind::Serial(path) = kind {
            if let Some(shared) = self.serial_sinks.get(path) {
                return Ok(shared.clone());
            }
        }
        let sink = open_sink(kind, self.profile).map_err(|e| HubError::Invalid(e.to_string()))?;
        let shared = SharedSink::new(sink);
        if let SinkKind::Serial(path) = kind {
            self.serial_sinks.insert(path.clone(), shared.clone());
        }
        Ok(shared)
    }

    /// Start the single playback job. Under the manual clock the job runs to
    /// completion before this returns.
    pub fn start_playback(&mut self, req: &PlaybackRequest) -> Result<String, HubError> {
        if self.playback.as_ref().is_some_and(PlaybackSlot::is_running) {
            return Err(HubError::Conflict(
                "a playback job is already running".into(),
            ));
        }
        let tuning =
            TuningParams::new(req.gain, req.speed).map_err(|e| HubError::Invalid(e.to_string()))?;
        let kind: SinkKind = req
            .sink
            .parse()
            .map_err(|e: DeviceError| HubError::Invalid(e.to_string()))?;
        let recording = self.library.load(&req.id)?;
        if self.mode == ClockMode::Manual && req.looping {
            return Err(HubError::Invalid(
                "looping playback needs the real-time clock".into(),
            ));
        }
        let mut job = PlaybackJob::new(&recording, tuning, req.looping)
            .map_err(|e| HubError::Invalid(e.to_string()))?;
        let shared = self.sink_for(&kind)?;
        let lease = shared
            .claim()
            .map_err(|e| HubError::Conflict(e.to_string()))?;

        let job_id = format!("job-{}", self.next_job);
        self.next_job += 1;
        let sent = Arc::new(AtomicU64::new(0));
        let report = Arc::new(Mutex::new(None));
        let stop = job.stop_handle();
        let live = self.live.clone();
        let mode = self.mode;
        let thread = {
            let sent = Arc::clone(&sent);
            let report = Arc::clone(&report);
            std::thread::Builder::new()
                .name(job_id.clone())
                .spawn(move || {
                    let mut guard = lease.sink();
                    let mut tap = LiveTap {
                        inner: guard.as_mut(),
                        live,
                        sent,
                    };
                    let mut clock: Box<dyn Clock> = match mode {
                        ClockMode::RealTime => Box::new(RealClock::new()),
                        ClockMode::Manual => Box::new(SimulatedClock::new()),
                    };
                    let outcome =
                        job.play(&mut tap, clock.as_mut())
                            .unwrap_or_else(|e| PlaybackReport {
                                frames_sent: 0,
                                passes_completed: 0,
                                max_lateness_ms: 0.0,
                                state: JobState::Stopped,
                                error: Some(e.to_string()),
                            });
                    drop(guard);
                    *report.lock().unwrap() = Some(outcome);
                })
                .map_err(|e| HubError::Internal(e.to_string()))?
        };
        let mut slot = PlaybackSlot {
            job_id: job_id.clone(),
            pattern_id: req.id.clone(),
            sink: req.sink.clone(),
            stop,
            sent,
            report,
            thread: Some(thread),
        };
        if self.mode == ClockMode::Manual {
            if let Some(t) = slot.thread.take() {
                let _ = t.join();
            }
        }
        self.playback = Some(slot);
        Ok(job_id)
    }

    /// Signal the running job to stop; returns its handle for joining.
    pub fn stop_playback(&mut self) -> Result<Option<JoinHandle<()>>, HubError> {
        match self.playback.as_mut() {
            Some(slot) if slot.is_running() => {
                slot.stop.stop();
                Ok(slot.thread.take())
            }
            _ => Err(HubError::Conflict("no playback job is running".into())),
        }
    }

    pub fn playback_status(&self) -> Option<PlaybackStatus> {
        self.playback.as_ref().map(PlaybackSlot::status)
    }

    pub fn mode(&self) -> ClockMode {
        self.mode
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.frame_rate_hz
    }

    /// Stop playback and wait for it, for shutdown.
    pub fn shutdown(&mut self) {
        if let Some(slot) = self.playback.as_mut() {
            slot.stop.stop();
            if let Some(t) = slot.thread.take() {
                let _ = t.join();
            }
        }
    }
}
