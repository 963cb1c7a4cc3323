use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::model::{DisplayProfile, Heights, PatternRecording, PinFrame};
use crate::tracker::TrackerCalibration;

use super::PatternError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SessionState {
    Idle,
    Syncing,
    Tracking,
    Recording,
}

impl SessionState {
    pub const ALL: [SessionState; 4] = [
        SessionState::Idle,
        SessionState::Syncing,
        SessionState::Tracking,
        SessionState::Recording,
    ];

    /// The transition table. A failed sync falls back to `Idle`.
    pub fn can_transition_to(self, next: SessionState) -> bool {
        use SessionState::*;
        matches!(
            (self, next),
            (Idle, Syncing)
                | (Syncing, Tracking)
                | (Syncing, Idle)
                | (Tracking, Recording)
                | (Recording, Tracking)
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SessionState::Idle => "Idle",
            SessionState::Syncing => "Syncing",
            SessionState::Tracking => "Tracking",
            SessionState::Recording => "Recording",
        }
    }
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Commands a session accepts; used in state errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionAction {
    BeginSync,
    CompleteSync,
    AbortSync,
    StartRecording,
    StopRecording,
}

impl SessionAction {
    fn target(self) -> SessionState {
        match self {
            SessionAction::BeginSync => SessionState::Syncing,
            SessionAction::CompleteSync => SessionState::Tracking,
            SessionAction::AbortSync => SessionState::Idle,
            SessionAction::StartRecording => SessionState::Recording,
            SessionAction::StopRecording => SessionState::Tracking,
        }
    }

    fn required(self) -> SessionState {
        match self {
            SessionAction::BeginSync => SessionState::Idle,
            SessionAction::CompleteSync | SessionAction::AbortSync => SessionState::Syncing,
            SessionAction::StartRecording => SessionState::Tracking,
            SessionAction::StopRecording => SessionState::Recording,
        }
    }
}

impl fmt::Display for SessionAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SessionAction::BeginSync => "begin sync",
            SessionAction::CompleteSync => "complete sync",
            SessionAction::AbortSync => "abort sync",
            SessionAction::StartRecording => "start recording",
            SessionAction::StopRecording => "stop recording",
        };
        f.write_str(s)
    }
}

/// Sync / track / record state machine around one capture stream.
#[derive(Debug, Clone)]
pub struct RecordingSession {
    state: SessionState,
    calibration: Option<Arc<TrackerCalibration>>,
    buffer: Vec<PinFrame>,
    started_at: Option<DateTime<Utc>>,
    profile: DisplayProfile,
    frame_rate_hz: f64,
    capture_drops: u64,
}

impl RecordingSession {
    pub fn new(profile: DisplayProfile, frame_rate_hz: f64) -> Self {
        Self {
            state: SessionState::Idle,
            calibration: None,
            buffer: Vec::new(),
            started_at: None,
            profile,
            frame_rate_hz,
            capture_drops: 0,
        }
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn calibration(&self) -> Option<&Arc<TrackerCalibration>> {
        self.calibration.as_ref()
    }

    pub fn profile(&self) -> &DisplayProfile {
        &self.profile
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    fn transition(&mut self, action: SessionAction) -> Result<(), PatternError> {
        let target = action.target();
        if self.state != action.required() || !self.state.can_transition_to(target) {
            return Err(PatternError::State {
                state: self.state,
                action,
            });
        }
        self.state = target;
        Ok(())
    }

    pub fn begin_sync(&mut self) -> Result<(), PatternError> {
        self.transition(SessionAction::BeginSync)
    }

    pub fn complete_sync(&mut self, calibration: TrackerCalibration) -> Result<(), PatternError> {
        self.transition(SessionAction::CompleteSync)?;
        self.calibration = Some(Arc::new(calibration));
        Ok(())
    }

    pub fn abort_sync(&mut self) -> Result<(), PatternError> {
        self.transition(SessionAction::AbortSync)
    }

    pub fn start_recording(&mut self) -> Result<(), PatternError> {
        self.transition(SessionAction::StartRecording)?;
        self.buffer.clear();
        self.capture_drops = 0;
        self.started_at = Some(Utc::now());
        Ok(())
    }

    /// Offer a tracked frame; kept only while recording.
    pub fn push_frame(&mut self, frame: PinFrame) -> bool {
        if self.state == SessionState::Recording {
            self.buffer.push(frame);
            true
        } else {
            false
        }
    }

    /// Frames the capture pipeline dropped before they reached the session.
    pub fn note_capture_drops(&mut self, n: u64) {
        if self.state == SessionState::Recording {
            self.capture_drops += n;
        }
    }

    /// End the take, resample it onto the frame-rate grid and name it.
    pub fn stop_recording(
        &mut self,
        name: &str,
        annotations: BTreeMap<String, String>,
    ) -> Result<PatternRecording, PatternError> {
        self.transition(SessionAction::StopRecording)?;
        let frames = std::mem::take(&mut self.buffer);
        if frames.is_empty() {
            return Err(PatternError::EmptyRecording);
        }
        let (grid, repeats) = resample_to_grid(&frames, self.frame_rate_hz);
        let mut rec = PatternRecording::new(name, self.profile, self.frame_rate_hz, grid);
        if let Some(started) = self.started_at.take() {
            rec.created_utc = started;
        }
        rec.annotations = annotations;
        let drops = repeats as u64 + self.capture_drops;
        if drops > 0 {
            rec.annotations.insert("drops".into(), drops.to_string());
        }
        Ok(rec)
    }

    /// Drop calibration and any take in progress.
    pub fn reset(&mut self) {
        *self = Self::new(self.profile, self.frame_rate_hz);
    }
}

/// Nearest-frame resampling onto `t0 + i / rate`, spanning first to last
/// frame. Grid slots whose nearest frame was already used by the previous
/// slot repeat it; the number of such repeats is returned alongside.
pub fn resample_to_grid(frames: &[PinFrame], rate_hz: f64) -> (Vec<Heights>, usize) {
    let Some(first) = frames.first() else {
        return (Vec::new(), 0);
    };
    let t0 = first.t_ms;
    let span = frames.last().map(|f| f.t_ms - t0).unwrap_or(0.0);
    let period = 1000.0 / rate_hz;
    let n = (span / period + 1e-6).floor() as usize + 1;
    let mut out = Vec::with_capacity(n);
    let mut repeats = 0;
    let mut j = 0usize;
    let mut last_pick = None;
    for i in 0..n {
        let g = t0 + i as f64 * period;
        while j + 1 < frames.len() && (frames[j + 1].t_ms - g).abs() < (frames[j].t_ms - g).abs() {
            j += 1;
        }
        if last_pick == Some(j) {
            repeats += 1;
        }
        last_pick = Some(j);
        out.push(frames[j].heights_mm);
    }
    (out, repeats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PIN_COUNT;

    fn calibration() -> TrackerCalibration {
        TrackerCalibration {
            rest_y_px: [50.0; PIN_COUNT],
            mm_per_px: [0.1; PIN_COUNT],
            captured_utc: Utc::now(),
        }
    }

    fn tracking_session() -> RecordingSession {
        let mut s = RecordingSession::new(DisplayProfile::large(), 30.0);
        s.begin_sync().unwrap();
        s.complete_sync(calibration()).unwrap();
        s
    }

    #[test]
    fn three_seconds_at_30hz_is_90_frames() {
        let mut s = tracking_session();
        s.start_recording().unwrap();
        for k in 0..90 {
            let t = 5000.0 + k as f64 * 1000.0 / 30.0;
            s.push_frame(PinFrame::new(t, [k as f64 / 10.0; PIN_COUNT]));
        }
        let rec = s.stop_recording("wave", BTreeMap::new()).unwrap();
        assert_eq!(rec.len(), 90);
        assert_eq!(rec.name, "wave");
        assert_eq!(rec.frames[89][0], 8.9);
        assert!(!rec.annotations.contains_key("drops"));
        assert_eq!(s.state(), SessionState::Tracking);
    }

    #[test]
    fn immediate_stop_is_empty() {
        let mut s = tracking_session();
        s.start_recording().unwrap();
        assert_eq!(
            s.stop_recording("x", BTreeMap::new()),
            Err(PatternError::EmptyRecording)
        );
        assert_eq!(s.state(), SessionState::Tracking);
    }

    #[test]
    fn start_while_idle_is_a_state_error() {
        let mut s = RecordingSession::new(DisplayProfile::large(), 30.0);
        assert_eq!(
            s.start_recording(),
            Err(PatternError::State {
                state: SessionState::Idle,
                action: SessionAction::StartRecording
            })
        );
    }

    #[test]
    fn transition_table_is_exact() {
        use SessionState::*;
        let legal = [
            (Idle, Syncing),
            (Syncing, Tracking),
            (Syncing, Idle),
            (Tracking, Recording),
            (Recording, Tracking),
        ];
        for from in SessionState::ALL {
            for to in SessionState::ALL {
                assert_eq!(
                    from.can_transition_to(to),
                    legal.contains(&(from, to)),
                    "{from} -> {to}"
                );
            }
        }
    }

    #[test]
    fn every_action_rejected_outside_its_state() {
        let actions = [
            SessionAction::BeginSync,
            SessionAction::CompleteSync,
            SessionAction::AbortSync,
            SessionAction::StartRecording,
            SessionAction::StopRecording,
        ];
        for state in SessionState::ALL {
            for action in actions {
                let mut s = RecordingSession::new(DisplayProfile::large(), 30.0);
                // Drive to `state`.
                match state {
                    SessionState::Idle => {}
                    SessionState::Syncing => s.begin_sync().unwrap(),
                    SessionState::Tracking => {
                        s = tracking_session();
                    }
                    SessionState::Recording => {
                        s = tracking_session();
                        s.start_recording().unwrap();
                        s.push_frame(PinFrame::rest(0.0));
                    }
                }
                let result = match action {
                    SessionAction::BeginSync => s.begin_sync(),
                    SessionAction::CompleteSync => s.complete_sync(calibration()),
                    SessionAction::AbortSync => s.abort_sync(),
                    SessionAction::StartRecording => s.start_recording(),
                    SessionAction::StopRecording => {
                        s.stop_recording("n", BTreeMap::new()).map(|_| ())
                    }
                };
                if state == action.required() {
                    assert!(result.is_ok(), "{action} in {state}");
                    assert_eq!(s.state(), action.target());
                } else {
                    assert_eq!(result, Err(PatternError::State { state, action }));
                    assert_eq!(s.state(), state);
                }
            }
        }
    }

    #[test]
    fn frames_outside_recording_are_ignored() {
        let mut s = tracking_session();
        assert!(!s.push_frame(PinFrame::rest(0.0)));
        assert_eq!(s.buffered(), 0);
        s.start_recording().unwrap();
        assert!(s.push_frame(PinFrame::rest(0.0)));
        assert_eq!(s.buffered(), 1);
    }

    #[test]
    fn gaps_are_filled_and_counted() {
        let period = 1000.0 / 30.0;
        // Frames 3 and 4 missing.
        let frames: Vec<PinFrame> = (0..10)
            .filter(|k| *k != 3 && *k != 4)
            .map(|k| PinFrame::new(k as f64 * period, [k as f64; PIN_COUNT]))
            .collect();
        let (grid, repeats) = resample_to_grid(&frames, 30.0);
        assert_eq!(grid.len(), 10);
        assert_eq!(repeats, 2);
        let firsts: Vec<f64> = grid.iter().map(|f| f[0]).collect();
        assert_eq!(
            firsts,
            vec![0.0, 1.0, 2.0, 2.0, 5.0, 5.0, 6.0, 7.0, 8.0, 9.0]
        );

        let mut s = tracking_session();
        s.start_recording().unwrap();
        for f in frames {
            s.push_frame(f);
        }
        s.note_capture_drops(2);
        let rec = s.stop_recording("gappy", BTreeMap::new()).unwrap();
        assert_eq!(rec.annotations["drops"], "4");
    }

    #[test]
    fn jittered_timestamps_resample_to_grid() {
        let period = 1000.0 / 30.0;
        let frames: Vec<PinFrame> = (0..60)
            .map(|k| {
                let jitter = if k % 2 == 0 { 4.0 } else { -4.0 };
                let t = if k == 0 {
                    0.0
                } else {
                    k as f64 * period + jitter
                };
                PinFrame::new(t, [k as f64 / 10.0; PIN_COUNT])
            })
            .collect();
        let (grid, _) = resample_to_grid(&frames, 30.0);
        assert_eq!(grid.len(), 59);
        for (i, f) in grid.iter().enumerate() {
            assert_eq!(f[0], i as f64 / 10.0);
        }
    }
}
