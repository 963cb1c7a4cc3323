//! Height/speed tuning and clocked replay of recordings into a sink.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::PinSink;
use crate::model::{clamp_height, Heights, PatternRecording, PinFrame, TuningParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlaybackError {
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("invalid state: {0}")]
    State(String),
}

/// Scale every height by `gain`, clamping to the stroke.
pub fn tune_height(
    recording: &PatternRecording,
    gain: f64,
) -> Result<PatternRecording, PlaybackError> {
    if !(gain.is_finite() && gain >= 0.0) {
        return Err(PlaybackError::Param(format!(
            "gain must be >= 0, got {gain}"
        )));
    }
    let mut out = recording.clone();
    if gain == 1.0 {
        return Ok(out);
    }
    let profile = recording.display_profile;
    for frame in &mut out.frames {
        for h in frame.iter_mut() {
            *h = clamp_height(*h * gain, &profile);
        }
    }
    Ok(out)
}

/// Play `factor` times faster, resampled onto the same frame-rate grid.
///
/// Output frame `j` takes the source at fractional index `j * factor`,
/// linearly interpolated; `ceil((n - 1) / factor) + 1` frames are produced and
/// the last one is the source's last frame.
pub fn tune_speed(
    recording: &PatternRecording,
    factor: f64,
) -> Result<PatternRecording, PlaybackError> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(PlaybackError::Param(format!(
            "speed factor must be > 0, got {factor}"
        )));
    }
    let mut out = recording.clone();
    let n = recording.frames.len();
    if factor == 1.0 || n <= 1 {
        return Ok(out);
    }
    let last = n - 1;
    let out_len = ((last as f64 / factor) - 1e-9).ceil() as usize + 1;
    out.frames = (0..out_len)
        .map(|j| {
            let s = j as f64 * factor;
            if s >= last as f64 {
                return recording.frames[last];
            }
            let i = s.floor() as usize;
            let frac = s - i as f64;
            let (a, b) = (&recording.frames[i], &recording.frames[i + 1]);
            if frac == 0.0 {
                return *a;
            }
            let mut h: Heights = *a;
            for (k, v) in h.iter_mut().enumerate() {
                *v = a[k] + (b[k] - a[k]) * frac;
            }
            h
        })
        .collect();
    Ok(out)
}

/// Height gain first, then speed.
pub fn apply_tuning(
    recording: &PatternRecording,
    tuning: &TuningParams,
) -> Result<PatternRecording, PlaybackError> {
    tuning
        .validate()
        .map_err(|e| PlaybackError::Param(e.to_string()))?;
    let tuned = tune_speed(
        &tune_height(recording, tuning.height_gain)?,
        tuning.speed_factor,
    )?;
    Ok(tuned)
}

/// Time source for playback scheduling, in milliseconds.
pub trait Clock: Send {
    fn now_ms(&self) -> f64;

    /// Block until `t_ms` (no-op if already past).
    fn sleep_until_ms(&mut self, t_ms: f64);
}

/// Wall-clock time from construction.
#[derive(Debug)]
pub struct RealClock {
    start: Instant,
}

impl RealClock {
    pub fn new() -> Self {
        Self {
            start: Instant::now(),
        }
    }
}

impl Default for RealClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for RealClock {
    fn now_ms(&self) -> f64 {
        self.start.elapsed().as_secs_f64() * 1000.0
    }

    fn sleep_until_ms(&mut self, t_ms: f64) {
        let now = self.now_ms();
        if t_ms > now {
            std::thread::sleep(Duration::from_secs_f64((t_ms - now) / 1000.0));
        }
    }
}

/// Time that jumps straight to each deadline.
#[derive(Debug, Default)]
pub struct SimulatedClock {
    now_ms: f64,
}

impl SimulatedClock {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Clock for SimulatedClock {
    fn now_ms(&self) -> f64 {
        self.now_ms
    }

    fn sleep_until_ms(&mut self, t_ms: f64) {
        self.now_ms = self.now_ms.max(t_ms);
    }
}

/// Cross-thread stop signal, checked at every frame boundary.
#[derive(Debug, Clone, Default)]
pub struct StopHandle(Arc<AtomicBool>);

impl StopHandle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stop(&self) {
        self.0.store(true, Ordering::Release);
    }

    pub fn is_stopped(&self) -> bool {
        self.0.load(Ordering::Acquire)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JobState {
    Ready,
    Playing,
    Stopped,
    Finished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaybackReport {
    pub frames_sent: u64,
    pub passes_completed: u64,
    pub max_lateness_ms: f64,
    pub state: JobState,
    /// Set when the sink failed and playback was aborted.
    pub error: Option<String>,
}

/// One replay of a tuned recording.
#[derive(Debug)]
pub struct PlaybackJob {
    recording: PatternRecording,
    tuning: TuningParams,
    looping: bool,
    state: JobState,
    stop: StopHandle,
}

impl PlaybackJob {
    /// Validates the tuning and pre-computes the tuned recording.
    pub fn new(
        recording: &PatternRecording,
        tuning: TuningParams,
        looping: bool,
    ) -> Result<Self, PlaybackError> {
        let tuned = apply_tuning(recording, &tuning)?;
        if tuned.is_empty() {
            return Err(PlaybackError::Param("recording has no frames".into()));
        }
        Ok(Self {
            recording: tuned,
            tuning,
            looping,
            state: JobState::Ready,
            stop: StopHandle::new(),
        })
    }

    pub fn tuned_recording(&self) -> &PatternRecording {
        &self.recording
    }

    pub fn tuning(&self) -> TuningParams {
        self.tuning
    }

    pub fn state(&self) -> JobState {
        self.state
    }

    pub fn stop_handle(&self) -> StopHandle {
        self.stop.clone()
    }

    /// Deliver frames at the recording's rate on absolute deadlines
    /// `t0 + i / rate`. Looping jobs run until stopped.
    pub fn play(
        &mut self,
        sink: &mut dyn PinSink,
        clock: &mut dyn Clock,
    ) -> Result<PlaybackReport, PlaybackError> {
        if self.state != JobState::Ready {
            return Err(PlaybackError::State(format!(
                "job is {:?}, expected Ready",
                self.state
            )));
        }
        self.state = JobState::Playing;
        let rate = self.recording.frame_rate_hz;
        let n = self.recording.len() as u64;
        let t0 = clock.now_ms();
        let mut report = PlaybackReport {
            frames_sent: 0,
            passes_completed: 0,
            max_lateness_ms: 0.0,
            state: JobState::Playing,
            error: None,
        };
        let mut index: u64 = 0;
        loop {
            if self.stop.is_stopped() {
                self.state = JobState::Stopped;
                break;
            }
            let in_pass = (index % n) as usize;
            if index > 0 && in_pass == 0 {
                report.passes_completed += 1;
                if !self.looping {
                    self.state = JobState::Finished;
                    break;
                }
            }
            let t_rel = index as f64 * 1000.0 / rate;
            clock.sleep_until_ms(t0 + t_rel);
            report.max_lateness_ms = report.max_lateness_ms.max(clock.now_ms() - (t0 + t_rel));
            let frame = PinFrame::new(t_rel, self.recording.frames[in_pass]);
            if let Err(e) = sink.send(&frame) {
                report.error = Some(e.to_string());
                self.state = JobState::Stopped;
                break;
            }
            report.frames_sent += 1;
            index += 1;
        }
        if let Err(e) = sink.close() {
            report.error.get_or_insert(e.to_string());
        }
        report.state = self.state;
        Ok(report)
    }
}

/// A sink shared between callers, owned by at most one playing job at a time.
#[derive(Clone)]
pub struct SharedSink {
    inner: Arc<Mutex<Box<dyn PinSink>>>,
    busy: Arc<AtomicBool>,
}

/// Exclusive use of a [`SharedSink`]; released on drop.
pub struct SinkLease {
    inner: Arc<Mutex<Box<dyn PinSink>>>,
    busy: Arc<AtomicBool>,
}

impl SharedSink {
    pub fn new(sink: Box<dyn PinSink>) -> Self {
        Self {
            inner: Arc::new(Mutex::new(sink)),
            busy: Arc::new(AtomicBool::new(false)),
        }
    }

    pub fn claim(&self) -> Result<SinkLease, PlaybackError> {
        if self.busy.swap(true, Ordering::AcqRel) {
            return Err(PlaybackError::State(
                "sink is owned by another playing job".into(),
            ));
        }
        Ok(SinkLease {
            inner: Arc::clone(&self.inner),
            busy: Arc::clone(&self.busy),
        })
    }

    pub fn is_busy(&self) -> bool {
        self.busy.load(Ordering::Acquire)
    }

    /// Inspect the sink (e.g. its trace) while no job holds it.
    pub fn with_sink<R>(&self, f: impl FnOnce(&dyn PinSink) -> R) -> R {
        let guard = self.inner.lock().unwrap();
        f(guard.as_ref())
    }
}

impl SinkLease {
    pub fn sink(&self) -> MutexGuard<'_, Box<dyn PinSink>> {
        self.inner.lock().unwrap()
    }
}

impl Drop for SinkLease {
    fn drop(&mut self) {
        self.busy.store(false, Ordering::Release);
    }
}

/// Claim `sink` and play `job` into it.
pub fn play_shared(
    job: &mut PlaybackJob,
    sink: &SharedSink,
    clock: &mut dyn Clock,
) -> Result<PlaybackReport, PlaybackError> {
    let lease = sink.claim()?;
    let mut guard = lease.sink();
    job.play(guard.as_mut(), clock)
}
