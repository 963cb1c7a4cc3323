//! HTTP + WebSocket control surface over one recording session, the pattern
//! library and one playback job.
//!
//! | Route | Body | Result |
//! |---|---|---|
//! | `GET /health` | | `{name, version, uptime_s}` |
//! | `GET /session` | | session snapshot |
//! | `POST /session/source` | `{kind, params}` | snapshot |
//! | `POST /session/sync` | | snapshot |
//! | `POST /session/step` | `{frames}` | snapshot (manual clock only) |
//! | `POST /session/record/start` | | snapshot |
//! | `POST /session/record/stop` | `{name, annotations}` | `{id, entry}` |
//! | `GET /patterns` | | `[entry]` |
//! | `GET /patterns/{id}` | | pattern file JSON |
//! | `DELETE /patterns/{id}` | | 204 |
//! | `POST /playback/start` | `{id, gain, speed, sink, loop}` | `{job_id}` |
//! | `POST /playback/stop` | | playback status |
//! | `GET /playback` | | playback status or `null` |
//! | `GET /live` | | WebSocket of `{t_ms, heights_mm, source}` |
//!
//! Errors are `{error, message, state}` with 409 for illegal transitions,
//! 404 for unknown ids and 422 for bad parameters.

mod api;
mod hub;

use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use axum::Router;
use tokio::net::TcpListener;
use tokio::sync::watch;

use crate::model::{DisplayProfile, DEFAULT_FRAME_RATE_HZ};
use crate::pattern::{PatternError, PatternLibrary};

pub use hub::{
    Hub, HubError, LiveFrame, LiveSource, PlaybackRequest, PlaybackStatus, SessionSnapshot,
    SourceRequest,
};

pub const DEFAULT_PORT: u16 = 7341;

/// How capture and playback time advances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockMode {
    /// A capture thread pulls one source frame per period; playback runs on
    /// the wall clock.
    RealTime,
    /// Frames advance only through `POST /session/step`; playback runs on a
    /// simulated clock and finishes before its start request returns.
    Manual,
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub library_dir: PathBuf,
    pub profile: DisplayProfile,
    pub frame_rate_hz: f64,
    pub clock: ClockMode,
}

impl ServiceConfig {
    pub fn new(library_dir: impl Into<PathBuf>) -> Self {
        Self {
            library_dir: library_dir.into(),
            profile: DisplayProfile::default(),
            frame_rate_hz: DEFAULT_FRAME_RATE_HZ,
            clock: ClockMode::RealTime,
        }
    }

    pub fn with_clock(mut self, clock: ClockMode) -> Self {
        self.clock = clock;
        self
    }
}

/// Shared handler state.
#[derive(Clone)]
pub struct AppState {
    hub: Arc<Mutex<Hub>>,
    live: watch::Receiver<Option<LiveFrame>>,
    subscribers: Arc<AtomicUsize>,
    started: Instant,
}

impl AppState {
    pub fn hub(&self) -> &Arc<Mutex<Hub>> {
        &self.hub
    }

    pub fn subscribers(&self) -> usize {
        self.subscribers.load(Ordering::Acquire)
    }
}

/// A configured service: handler state plus the capture thread.
pub struct Service {
    state: AppState,
    ticker_stop: Arc<AtomicBool>,
    ticker: Option<JoinHandle<()>>,
}

impl Service {
    /// Open the library and, under the real-time clock, start capturing.
    pub fn new(config: ServiceConfig) -> Result<Self, PatternError> {
        let library = PatternLibrary::open(&config.library_dir)?;
        let (tx, rx) = watch::channel(None);
        let hub = Hub::new(
            config.clock,
            config.profile,
            config.frame_rate_hz,
            library,
            tx,
        );
        let state = AppState {
            hub: Arc::new(Mutex::new(hub)),
            live: rx,
            subscribers: Arc::new(AtomicUsize::new(0)),
            started: Instant::now(),
        };
        let ticker_stop = Arc::new(AtomicBool::new(false));
        let ticker = match config.clock {
            ClockMode::RealTime => Some(spawn_ticker(
                Arc::clone(&state.hub),
                Arc::clone(&ticker_stop),
                config.frame_rate_hz,
            )),
            ClockMode::Manual => None,
        };
        Ok(Self {
            state,
            ticker_stop,
            ticker,
        })
    }

    pub fn state(&self) -> &AppState {
        &self.state
    }

    pub fn router(&self) -> Router {
        api::router(self.state.clone())
    }

    /// Serve on `listener` until `shutdown` resolves.
    pub async fn serve(
        self,
        listener: TcpListener,
        shutdown: impl Future<Output = ()> + Send + 'static,
    ) -> std::io::Result<()> {
        let app = self.router();
        axum::serve(listener, app)
            .with_graceful_shutdown(shutdown)
            .await
    }

    pub async fn bind(port: u16) -> std::io::Result<TcpListener> {
        TcpListener::bind(SocketAddr::from(([127, 0, 0, 1], port))).await
    }
}

impl Drop for Service {
    fn drop(&mut self) {
        self.ticker_stop.store(true, Ordering::Release);
        if let Some(t) = self.ticker.take() {
            let _ = t.join();
        }
        if let Ok(mut hub) = self.state.hub.lock() {
            hub.shutdown();
        }
    }
}

fn spawn_ticker(hub: Arc<Mutex<Hub>>, stop: Arc<AtomicBool>, rate_hz: f64) -> JoinHandle<()> {
    std::thread::Builder::new()
        .name("capture".into())
        .spawn(move || {
            let period = Duration::from_secs_f64(1.0 / rate_hz);
            let start = Instant::now();
            let mut tick: u32 = 0;
            while !stop.load(Ordering::Acquire) {
                hub.lock().unwrap().step();
                tick += 1;
                let deadline = start + period * tick;
                let now = Instant::now();
                if deadline > now {
                    std::thread::sleep(deadline - now);
                } else if now - deadline > period {
                    tick = ((now - start).as_secs_f64() / period.as_secs_f64()) as u32;
                }
            }
        })
        .expect("spawn capture thread")
}
