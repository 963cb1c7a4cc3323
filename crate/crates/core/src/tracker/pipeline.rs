//! Continuous capture: a producer thread pulls frames from a source, tracks
//! them and hands results to one consumer through a single-slot mailbox.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::{FrameSource, TrackedFrame, Tracker, TrackerError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pacing {
    /// Emit at most one frame per `1 / target_rate_hz`, on absolute deadlines.
    RealTime,
    /// Emit as fast as the source and tracker allow.
    Unpaced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delivery {
    /// A new frame replaces an unread one; the replaced frame counts as a drop.
    LatestWins,
    /// The producer waits for the consumer. Memory stays bounded to one frame.
    Lossless,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineOptions {
    pub pacing: Pacing,
    pub delivery: Delivery,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            pacing: Pacing::RealTime,
            delivery: Delivery::LatestWins,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSummary {
    pub produced: u64,
    pub dropped: u64,
    pub error: Option<TrackerError>,
}

#[derive(Default)]
struct Slot {
    latest: Option<TrackedFrame>,
    closed: bool,
}

struct Shared {
    slot: Mutex<Slot>,
    ready: Condvar,
    produced: AtomicU64,
    dropped: AtomicU64,
    stop: AtomicBool,
}

/// Consumer end of a running pipeline.
pub struct PipelineHandle {
    shared: Arc<Shared>,
    worker: Option<JoinHandle<Option<TrackerError>>>,
}

/// Start tracking `source` on a background thread.
pub fn run_pipeline<S>(source: S, tracker: Tracker, options: PipelineOptions) -> PipelineHandle
where
    S: FrameSource + 'static,
{
    let shared = Arc::new(Shared {
        slot: Mutex::new(Slot::default()),
        ready: Condvar::new(),
        produced: AtomicU64::new(0),
        dropped: AtomicU64::new(0),
        stop: AtomicBool::new(false),
    });
    let worker_shared = Arc::clone(&shared);
    let worker = std::thread::Builder::new()
        .name("shapekit-capture".into())
        .spawn(move || produce(source, tracker, options, &worker_shared))
        .expect("spawn capture thread");
    PipelineHandle {
        shared,
        worker: Some(worker),
    }
}

fn produce<S: FrameSource>(
    mut source: S,
    mut tracker: Tracker,
    options: PipelineOptions,
    shared: &Shared,
) -> Option<TrackerError> {
    let period = Duration::from_secs_f64(1.0 / tracker.config().target_rate_hz);
    let start = Instant::now();
    let mut index: u32 = 0;
    let mut error = None;
    while !shared.stop.load(Ordering::Acquire) {
        if options.pacing == Pacing::RealTime {
            let deadline = start + period * index;
            let now = Instant::now();
            if deadline > now {
                std::thread::sleep(deadline - now);
            }
        }
        index = index.wrapping_add(1);
        let frame = match source.next_frame() {
            None => break,
            Some(Ok(frame)) => frame,
            Some(Err(e)) => {
                error = Some(e);
                break;
            }
        };
        let tracked = match tracker.track(&frame.image, frame.t_ms) {
            Ok(t) => t,
            Err(e) => {
                error = Some(e);
                break;
            }
        };
        shared.produced.fetch_add(1, Ordering::Relaxed);
        let mut slot = shared.slot.lock().unwrap();
        if options.delivery == Delivery::Lossless {
            while slot.latest.is_some() && !shared.stop.load(Ordering::Acquire) {
                slot = shared.ready.wait(slot).unwrap();
            }
        }
        if slot.latest.replace(tracked).is_some() {
            shared.dropped.fetch_add(1, Ordering::Relaxed);
        }
        shared.ready.notify_all();
    }
    let mut slot = shared.slot.lock().unwrap();
    slot.closed = true;
    shared.ready.notify_all();
    error
}

impl PipelineHandle {
    /// Next frame, blocking until one is available. `None` once the source is
    /// exhausted and everything has been read.
    pub fn recv(&self) -> Option<TrackedFrame> {
        let mut slot = self.shared.slot.lock().unwrap();
        loop {
            if let Some(frame) = slot.latest.take() {
                self.shared.ready.notify_all();
                return Some(frame);
            }
            if slot.closed {
                return None;
            }
            slot = self.shared.ready.wait(slot).unwrap();
        }
    }

    pub fn try_recv(&self) -> Option<TrackedFrame> {
        let frame = self.shared.slot.lock().unwrap().latest.take();
        if frame.is_some() {
            self.shared.ready.notify_all();
        }
        frame
    }

    pub fn dropped(&self) -> u64 {
        self.shared.dropped.load(Ordering::Relaxed)
    }

    pub fn produced(&self) -> u64 {
        self.shared.produced.load(Ordering::Relaxed)
    }

    pub fn stop(&self) {
        self.shared.stop.store(true, Ordering::Release);
        self.shared.ready.notify_all();
    }

    /// Stop capturing, wait for the producer, and report totals. Frames still
    /// unread are discarded.
    pub fn finish(mut self) -> PipelineSummary {
        self.stop();
        self.join_worker()
    }

    /// Wait for the source to run out (without stopping it) and report.
    pub fn wait(mut self) -> PipelineSummary {
        self.join_worker()
    }

    fn join_worker(&mut self) -> PipelineSummary {
        let error = self
            .worker
            .take()
            .map(|w| {
                w.join().unwrap_or_else(|_| {
                    Some(TrackerError::Source("capture thread panicked".into()))
                })
            })
            .unwrap_or(None);
        PipelineSummary {
            produced: self.produced(),
            dropped: self.dropped(),
            error,
        }
    }
}

impl Iterator for PipelineHandle {
    type Item = TrackedFrame;

    fn next(&mut self) -> Option<TrackedFrame> {
        self.recv()
    }
}

impl Drop for PipelineHandle {
    fn drop(&mut self) {
        self.stop();
        if let Some(worker) = self.worker.take() {
            let _ = worker.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DisplayProfile;
    use crate::model::PinFrame;
    use crate::synth::{render_frame, CameraModel, ScenarioKind, TrajectoryScenario};
    use crate::tracker::{calibrate_baseline, SynthSource, TrackerConfig, VecSource};

    fn tracker_for(cam: &CameraModel) -> Tracker {
        let config = TrackerConfig::for_camera(cam);
        let rest = render_frame(&PinFrame::rest(0.0), cam).unwrap();
        let cal = calibrate_baseline(&rest, &config).unwrap();
        Tracker::new(cal, config, DisplayProfile::large()).unwrap()
    }

    fn wave_source(cam: &CameraModel) -> SynthSource {
        SynthSource::new(
            &TrajectoryScenario::new(ScenarioKind::Wave, 3000.0),
            cam.clone(),
            &DisplayProfile::large(),
            30.0,
        )
        .unwrap()
        .with_lead_rest_frames(0)
    }

    #[test]
    fn realtime_wave_delivers_every_frame() {
        let cam = CameraModel::default();
        let handle = run_pipeline(
            wave_source(&cam),
            tracker_for(&cam),
            PipelineOptions::default(),
        );
        let mut times = Vec::new();
        while let Some(f) = handle.recv() {
            times.push(f.frame.t_ms);
        }
        let summary = handle.wait();
        assert_eq!(times.len(), 90);
        assert!(times.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(summary.dropped, 0);
        assert_eq!(summary.produced, 90);
        assert!(summary.error.is_none());
    }

    #[test]
    fn empty_source_ends_cleanly() {
        let cam = CameraModel::default();
        let handle = run_pipeline(
            VecSource::new(Vec::new()),
            tracker_for(&cam),
            PipelineOptions::default(),
        );
        assert!(handle.recv().is_none());
        let summary = handle.wait();
        assert_eq!((summary.produced, summary.dropped), (0, 0));
        assert!(summary.error.is_none());
    }

    #[test]
    fn stalled_consumer_drops_and_sees_latest() {
        let cam = CameraModel::default();
        let mut handle = run_pipeline(
            wave_source(&cam),
            tracker_for(&cam),
            PipelineOptions::default(),
        );
        let first = handle.recv().unwrap();
        std::thread::sleep(Duration::from_secs(1));
        let after = handle.recv().unwrap();
        assert!(handle.dropped() > 0);
        // Latest-wins: the frame read after the stall is the newest produced.
        let produced = handle.produced();
        let expected_t = (produced - 1) as f64 * 1000.0 / 30.0;
        assert!(after.frame.t_ms >= expected_t - 1000.0 / 30.0 - 1e-9);
        assert!(after.frame.t_ms > first.frame.t_ms + 500.0);
        let rest: Vec<_> = handle.by_ref().collect();
        let summary = handle.wait();
        assert_eq!(summary.produced, 90);
        assert_eq!(2 + rest.len() as u64 + summary.dropped, 90);
    }

    #[test]
    fn lossless_unpaced_never_drops() {
        let cam = CameraModel::default();
        let options = PipelineOptions {
            pacing: Pacing::Unpaced,
            delivery: Delivery::Lossless,
        };
        let handle = run_pipeline(wave_source(&cam), tracker_for(&cam), options);
        let mut n = 0;
        while handle.recv().is_some() {
            n += 1;
            if n % 10 == 0 {
                std::thread::sleep(Duration::from_millis(5));
            }
        }
        let summary = handle.wait();
        assert_eq!((n, summary.dropped), (90, 0));
    }

    #[test]
    fn source_error_is_reported() {
        let cam = CameraModel::default();
        let bad = crate::tracker::SourceFrame {
            t_ms: 0.0,
            image: crate::image::GreyImage::filled(10, 10, 0),
        };
        let handle = run_pipeline(
            VecSource::new(vec![bad]),
            tracker_for(&cam),
            PipelineOptions::default(),
        );
        assert!(handle.recv().is_none());
        assert!(matches!(
            handle.wait().error,
            Some(TrackerError::Dimensions { .. })
        ));
    }
}
