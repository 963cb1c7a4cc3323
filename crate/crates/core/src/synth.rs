//! Synthetic camera: ground-truth pin trajectories and rendered tracking-view
//! frames.
//!
//! The tracking view shows 25 vertical lanes, one cable per lane, each with a
//! single dark marker. A pin extension of `h` mm moves its marker `h /
//! mm_per_px` pixels *down* from the lane's rest row.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::GreyImage;
use crate::model::{
    clamp_height, DisplayProfile, Heights, PatternRecording, PinFrame, GRID_SIZE, PIN_COUNT,
};

/// Subsamples per pixel axis used for marker edge coverage.
const SUPERSAMPLE: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("time {t_ms} ms outside scenario range [0, {duration_ms}]")]
    Range { t_ms: f64, duration_ms: f64 },
    #[error("marker {lane} centre ({x:.2}, {y:.2}) falls outside the image")]
    Geometry { lane: usize, x: f64, y: f64 },
    #[error("invalid camera model: {0}")]
    Camera(String),
    #[error("invalid scenario: {0}")]
    Scenario(String),
}

/// Geometry and photometry of the simulated tracking camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraModel {
    pub width_px: u32,
    pub height_px: u32,
    pub marker_radius_px: f64,
    pub mm_per_px: f64,
    /// Rest row of lane 0's marker centre.
    pub rest_y_px: f64,
    /// Extra rest-row offset per lane column, so lanes do not all share a row.
    pub rest_stagger_px: f64,
    pub noise_sigma_px: f64,
    pub background_level: u8,
    pub marker_level: u8,
    pub seed: u64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            width_px: 640,
            height_px: 480,
            marker_radius_px: 4.0,
            mm_per_px: 0.1,
            rest_y_px: 60.0,
            rest_stagger_px: 6.0,
            noise_sigma_px: 0.0,
            background_level: 200,
            marker_level: 30,
            seed: 0,
        }
    }
}

impl CameraModel {
    pub const LANES: usize = PIN_COUNT;

    pub fn lane_width_px(&self) -> f64 {
        self.width_px as f64 / Self::LANES as f64
    }

    /// Half-open pixel column range `[x0, x1)` belonging to `lane`.
    pub fn lane_bounds(&self, lane: usize) -> (u32, u32) {
        let w = self.lane_width_px();
        let x0 = (lane as f64 * w).round() as u32;
        let x1 = (((lane + 1) as f64) * w).round() as u32;
        (x0, x1.min(self.width_px))
    }

    pub fn lane_center_x(&self, lane: usize) -> f64 {
        (lane as f64 + 0.5) * self.lane_width_px()
    }

    pub fn rest_y(&self, lane: usize) -> f64 {
        self.rest_y_px + (lane % GRID_SIZE) as f64 * self.rest_stagger_px
    }

    pub fn validate(&self, profile: &DisplayProfile) -> Result<(), SynthError> {
        let fail = |msg: String| Err(SynthError::Camera(msg));
        if self.width_px == 0 || self.height_px == 0 {
            return fail("image dimensions must be non-zero".into());
        }
        if !(self.mm_per_px > 0.0 && self.mm_per_px.is_finite()) {
            return fail(format!("mm_per_px must be > 0, got {}", self.mm_per_px));
        }
        if self.marker_radius_px.is_nan() || self.marker_radius_px < 1.0 {
            return fail(format!(
                "marker_radius_px must be >= 1, got {}",
                self.marker_radius_px
            ));
        }
        if self.noise_sigma_px.is_nan() || self.noise_sigma_px < 0.0 {
            return fail("noise_sigma_px must be >= 0".into());
        }
        if self.marker_level >= self.background_level {
            return fail("marker_level must be darker than background_level".into());
        }
        if 2.0 * (self.marker_radius_px + 1.0) >= self.lane_width_px() {
            return fail(format!(
                "markers of radius {} do not fit {:.1} px lanes",
                self.marker_radius_px,
                self.lane_width_px()
            ));
        }
        let margin = self.marker_radius_px + 1.0 + 4.0 * self.noise_sigma_px;
        let top = (0..Self::LANES)
            .map(|l| self.rest_y(l))
            .fold(f64::MAX, f64::min);
        let bottom = (0..Self::LANES)
            .map(|l| self.rest_y(l))
            .fold(f64::MIN, f64::max)
            + profile.stroke_mm / self.mm_per_px;
        if top - margin < 0.0 || bottom + margin > self.height_px as f64 {
            return fail(format!(
                "full-stroke travel [{top:.1}, {bottom:.1}] px does not fit a {} px image",
                self.height_px
            ));
        }
        Ok(())
    }

    /// Noise-free marker centre for a given pin height.
    pub fn marker_center(&self, lane: usize, height_mm: f64) -> (f64, f64) {
        (
            self.lane_center_x(lane),
            self.rest_y(lane) + height_mm / self.mm_per_px,
        )
    }
}

fn frame_rng(seed: u64, t_ms: f64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ t_ms.to_bits().rotate_left(17))
}

/// Render one tracking-view frame.
///
/// Markers are filled discs with area-weighted edge pixels; every pixel away
/// from a marker holds `background_level`.
pub fn render_frame(truth: &PinFrame, cam: &CameraModel) -> Result<GreyImage, SynthError> {
    let mut img = GreyImage::filled(cam.width_px, cam.height_px, cam.background_level);
    let jitter = if cam.noise_sigma_px > 0.0 {
        Some(Normal::new(0.0, cam.noise_sigma_px).map_err(|e| SynthError::Camera(e.to_string()))?)
    } else {
        None
    };
    let mut rng = frame_rng(cam.seed, truth.t_ms);
    let r = cam.marker_radius_px;
    for (lane, &h) in truth.heights_mm.iter().enumerate() {
        let (mut cx, mut cy) = cam.marker_center(lane, h);
        if let Some(normal) = &jitter {
            cx += normal.sample(&mut rng);
            cy += normal.sample(&mut rng);
        }
        if !(cx - r >= 0.0
            && cy - r >= 0.0
            && cx + r <= cam.width_px as f64
            && cy + r <= cam.height_px as f64)
        {
            return Err(SynthError::Geometry { lane, x: cx, y: cy });
        }
        draw_disc(&mut img, cx, cy, r, cam.background_level, cam.marker_level);
    }
    Ok(img)
}

fn draw_disc(img: &mut GreyImage, cx: f64, cy: f64, r: f64, bg: u8, fg: u8) {
    let x0 = (cx - r).floor().max(0.0) as u32;
    let y0 = (cy - r).floor().max(0.0) as u32;
    let x1 = ((cx + r).ceil() as u32).min(img.width());
    let y1 = ((cy + r).ceil() as u32).min(img.height());
    let r2 = r * r;
    let contrast = bg as f64 - fg as f64;
    let step = 1.0 / SUPERSAMPLE as f64;
    for y in y0..y1 {
        for x in x0..x1 {
            let mut inside = 0usize;
            for sy in 0..SUPERSAMPLE {
                let py = y as f64 + (sy as f64 + 0.5) * step - cy;
                for sx in 0..SUPERSAMPLE {
                    let px = x as f64 + (sx as f64 + 0.5) * step - cx;
                    if px * px + py * py <= r2 {
                        inside += 1;
                    }
                }
            }
            if inside > 0 {
                let coverage = inside as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
                let value = (bg as f64 - coverage * contrast).round() as u8;
                img.set(x, y, value.min(img.get(x, y)));
            }
        }
    }
}

/// Trajectory families: travelling waves, sequential strokes, uniform
/// rise/fall, a bounded random walk, and a constant hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Wave,
    Sequential,
    Uniform,
    RandomWalk,
    Constant,
}

impl ScenarioKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::Wave => "wave",
            ScenarioKind::Sequential => "sequential",
            ScenarioKind::Uniform => "uniform",
            ScenarioKind::RandomWalk => "random_walk",
            ScenarioKind::Constant => "constant",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "wave" => Ok(Self::Wave),
            "sequential" => Ok(Self::Sequential),
            "uniform" => Ok(Self::Uniform),
            "random" | "random_walk" | "random-walk" => Ok(Self::RandomWalk),
            "constant" => Ok(Self::Constant),
            other => Err(SynthError::Scenario(format!("unknown scenario {other:?}"))),
        }
    }
}

/// Parameters of one ground-truth trajectory.
///
/// * `wave`: `h = A/2 (1 - cos 2pi(t/P - col/5))`, a wave travelling across
///   columns.
/// * `uniform`: every pin follows `A/2 (1 - cos 2pi t/P)`.
/// * `sequential`: pin `order[floor(t/step) mod len]` held at `A`, rest at 0.
/// * `random_walk`: per-pin reflected Gaussian walk on knots every `step_ms`,
///   linearly interpolated.
/// * `constant`: every pin held at `A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectoryScenario {
    pub kind: ScenarioKind,
    pub duration_ms: f64,
    pub amplitude_mm: f64,
    pub period_ms: f64,
    pub step_ms: f64,
    pub order: Vec<usize>,
    pub seed: u64,
}

impl Default for TrajectoryScenario {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::Wave,
            duration_ms: 3000.0,
            amplitude_mm: 5.0,
            period_ms: 2000.0,
            step_ms: 100.0,
            order: (0..PIN_COUNT).collect(),
            seed: 7,
        }
    }
}

impl TrajectoryScenario {
    pub fn new(kind: ScenarioKind, duration_ms: f64) -> Self {
        Self {
            kind,
            duration_ms,
            ..Self::default()
        }
    }

    pub fn constant(height_mm: f64, duration_ms: f64) -> Self {
        Self {
            kind: ScenarioKind::Constant,
            duration_ms,
            amplitude_mm: height_mm,
            ..Self::default()
        }
    }

    pub fn with_amplitude(mut self, amplitude_mm: f64) -> Self {
        self.amplitude_mm = amplitude_mm;
        self
    }

    pub fn with_period(mut self, period_ms: f64) -> Self {
        self.period_ms = period_ms;
        self
    }

    pub fn with_step(mut self, step_ms: f64) -> Self {
        self.step_ms = step_ms;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(SynthError::Scenario(format!("{name} must be > 0, got {v}")))
            }
        };
        if !(self.duration_ms.is_finite() && self.duration_ms >= 0.0) {
            return Err(SynthError::Scenario("duration_ms must be >= 0".into()));
        }
        if !(self.amplitude_mm.is_finite() && self.amplitude_mm >= 0.0) {
            return Err(SynthError::Scenario("amplitude_mm must be >= 0".into()));
        }
        match self.kind {
            ScenarioKind::Wave | ScenarioKind::Uniform => positive("period_ms", self.period_ms),
            ScenarioKind::Sequential => {
                positive("step_ms", self.step_ms)?;
                if self.order.is_empty() || self.order.iter().any(|&p| p >= PIN_COUNT) {
                    return Err(SynthError::Scenario(
                        "sequential order must list pins in 0..25".into(),
                    ));
                }
                Ok(())
            }
            ScenarioKind::RandomWalk => positive("step_ms", self.step_ms),
            ScenarioKind::Constant => Ok(()),
        }
    }

    /// Number of frames on a `rate_hz` grid strictly inside the duration.
    pub fn frame_count(&self, rate_hz: f64) -> usize {
        (self.duration_ms * rate_hz / 1000.0 + 1e-9).floor() as usize
    }

    /// Ground truth sampled on a `rate_hz` grid as a recording.
    pub fn sample_recording(
        &self,
        profile: &DisplayProfile,
        rate_hz: f64,
    ) -> Result<PatternRecording, SynthError> {
        let traj = Trajectory::new(self, profile)?;
        let frames = (0..self.frame_count(rate_hz))
            .map(|i| traj.heights_at(i as f64 * 1000.0 / rate_hz))
            .collect();
        let mut rec = PatternRecording::new(self.kind.as_str(), *profile, rate_hz, frames);
        rec.annotations
            .insert("source".into(), format!("synthetic:{}", self.kind));
        Ok(rec)
    }
}

/// A scenario prepared for repeated sampling.
#[derive(Debug, Clone)]
pub struct Trajectory {
    scenario: TrajectoryScenario,
    amplitude: f64,
    profile: DisplayProfile,
    knots: Vec<Heights>,
}

impl Trajectory {
    pub fn new(
        scenario: &TrajectoryScenario,
        profile: &DisplayProfile,
    ) -> Result<Self, SynthError> {
        scenario.validate()?;
        let amplitude = scenario.amplitude_mm.min(profile.stroke_mm);
        let knots = if scenario.kind == ScenarioKind::RandomWalk {
            random_walk_knots(scenario, amplitude)
        } else {
            Vec::new()
        };
        Ok(Self {
            scenario: scenario.clone(),
            amplitude,
            profile: *profile,
            knots,
        })
    }

    pub fn scenario(&self) -> &TrajectoryScenario {
        &self.scenario
    }

    pub fn truth_at(&self, t_ms: f64) -> Result<PinFrame, SynthError> {
        if !(t_ms >= 0.0 && t_ms <= self.scenario.duration_ms) {
            return Err(SynthError::Range {
                t_ms,
                duration_ms: self.scenario.duration_ms,
            });
        }
        Ok(PinFrame::new(t_ms, self.heights_at(t_ms)))
    }

    fn heights_at(&self, t_ms: f64) -> Heights {
        let a = self.amplitude;
        let s = &self.scenario;
        let mut h = [0.0; PIN_COUNT];
        match s.kind {
            ScenarioKind::Constant => h = [a; PIN_COUNT],
            ScenarioKind::Uniform => {
                h = [0.5 * a * (1.0 - (2.0 * PI * t_ms / s.period_ms).cos()); PIN_COUNT];
            }
            ScenarioKind::Wave => {
                for (i, v) in h.iter_mut().enumerate() {
                    let col = (i % GRID_SIZE) as f64;
                    let phase = t_ms / s.period_ms - col / GRID_SIZE as f64;
                    *v = 0.5 * a * (1.0 - (2.0 * PI * phase).cos());
                }
            }
            ScenarioKind::Sequential => {
                let k = (t_ms / s.step_ms).floor() as usize;
                h[s.order[k % s.order.len()]] = a;
            }
            ScenarioKind::RandomWalk => {
                let pos = t_ms / s.step_ms;
                let k = (pos.floor() as usize).min(self.knots.len() - 2);
                let frac = (pos - k as f64).clamp(0.0, 1.0);
                for (i, v) in h.iter_mut().enumerate() {
                    let (p, q) = (self.knots[k][i], self.knots[k + 1][i]);
                    *v = p + (q - p) * frac;
                }
            }
        }
        for v in &mut h {
            *v = clamp_height(*v, &self.profile);
        }
        h
    }
}

fn random_walk_knots(s: &TrajectoryScenario, amplitude: f64) -> Vec<Heights> {
    let count = (s.duration_ms / s.step_ms).ceil() as usize + 2;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let sigma = amplitude / 4.0;
    let mut current = [0.5 * amplitude; PIN_COUNT];
    let mut knots = Vec::with_capacity(count);
    knots.push(current);
    for _ in 1..count {
        for v in &mut current {
            // Box-Muller keeps the walk independent of distribution internals.
            let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            let u2: f64 = rng.random();
            let step = sigma * (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos();
            let mut next = *v + step;
            if next < 0.0 {
                next = -next;
            }
            if next > amplitude {
                next = 2.0 * amplitude - next;
            }
            *v = next.clamp(0.0, amplitude);
        }
        knots.push(current);
    }
    knots
}

/// Ground truth of `scenario` at `t_ms`.
pub fn truth_at(
    scenario: &TrajectoryScenario,
    t_ms: f64,
    profile: &DisplayProfile,
) -> Result<PinFrame, SynthError> {
    Trajectory::new(scenario, profile)?.truth_at(t_ms)
}
