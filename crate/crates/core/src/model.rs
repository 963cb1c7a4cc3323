//! Domain types shared by every other module.
//!
//! Units are millimetres and milliseconds throughout. Pin order is row-major
//! with row 0 being the top row of the tracking camera view.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Pins per side of the square display.
pub const GRID_SIZE: usize = 5;
/// Pins per display.
pub const PIN_COUNT: usize = GRID_SIZE * GRID_SIZE;
/// Capture and playback rate used when nothing else is specified.
pub const DEFAULT_FRAME_RATE_HZ: f64 = 30.0;
/// Pin travel of the pin-art prototype; used as the default for every profile.
pub const DEFAULT_STROKE_MM: f64 = 10.0;

/// Pin heights in row-major order.
pub type Heights = [f64; PIN_COUNT];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("grid index out of range: row {row}, col {col}")]
    Index { row: usize, col: usize },
    #[error("linear pin index out of range: {0}")]
    LinearIndex(usize),
    #[error("invalid display profile: {0}")]
    Profile(String),
    #[error("invalid tuning parameter: {0}")]
    Tuning(String),
    #[error("invalid recording: {0}")]
    Recording(String),
}

/// Position of one pin in the 5x5 grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridIndex {
    row: usize,
    col: usize,
}

impl GridIndex {
    pub fn new(row: usize, col: usize) -> Result<Self, ModelError> {
        if row >= GRID_SIZE || col >= GRID_SIZE {
            return Err(ModelError::Index { row, col });
        }
        Ok(Self { row, col })
    }

    pub fn from_linear(index: usize) -> Result<Self, ModelError> {
        if index >= PIN_COUNT {
            return Err(ModelError::LinearIndex(index));
        }
        Ok(Self {
            row: index / GRID_SIZE,
            col: index % GRID_SIZE,
        })
    }

    pub fn row(self) -> usize {
        self.row
    }

    pub fn col(self) -> usize {
        self.col
    }

    pub fn linear(self) -> usize {
        self.row * GRID_SIZE + self.col
    }
}

/// Row-major linear index of `(row, col)`.
pub fn linear_index(row: usize, col: usize) -> Result<usize, ModelError> {
    GridIndex::new(row, col).map(GridIndex::linear)
}

/// Which of the three display scales a profile describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProfileId {
    S,
    M,
    L,
}

impl ProfileId {
    pub fn as_str(self) -> &'static str {
        match self {
            ProfileId::S => "S",
            ProfileId::M => "M",
            ProfileId::L => "L",
        }
    }
}

impl fmt::Display for ProfileId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ProfileId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "S" | "SMALL" => Ok(ProfileId::S),
            "M" | "MEDIUM" => Ok(ProfileId::M),
            "L" | "LARGE" => Ok(ProfileId::L),
            other => Err(ModelError::Profile(format!("unknown profile id {other:?}"))),
        }
    }
}

/// Geometry and spring stiffness of one display side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisplayProfile {
    pub id: ProfileId,
    pub pin_pitch_mm: f64,
    pub stroke_mm: f64,
    pub spring_n_per_mm: f64,
}

impl DisplayProfile {
    /// Defaults for `id`: pitch 5/10/15 mm, springs 0.1/0.1/0.3 N/mm.
    pub fn for_id(id: ProfileId) -> Self {
        let (pin_pitch_mm, spring_n_per_mm) = match id {
            ProfileId::S => (5.0, 0.1),
            ProfileId::M => (10.0, 0.1),
            ProfileId::L => (15.0, 0.3),
        };
        Self {
            id,
            pin_pitch_mm,
            stroke_mm: DEFAULT_STROKE_MM,
            spring_n_per_mm,
        }
    }

    pub fn small() -> Self {
        Self::for_id(ProfileId::S)
    }

    pub fn medium() -> Self {
        Self::for_id(ProfileId::M)
    }

    pub fn large() -> Self {
        Self::for_id(ProfileId::L)
    }

    pub fn with_stroke(mut self, stroke_mm: f64) -> Result<Self, ModelError> {
        self.stroke_mm = stroke_mm;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fields = [
            ("pin_pitch_mm", self.pin_pitch_mm),
            ("stroke_mm", self.stroke_mm),
            ("spring_n_per_mm", self.spring_n_per_mm),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(ModelError::Profile(format!(
                    "{name} must be finite and > 0, got {value}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for DisplayProfile {
    fn default() -> Self {
        Self::large()
    }
}

/// Clamp a height into `[0, stroke]`. NaN maps to 0.
pub fn clamp_height(h_mm: f64, profile: &DisplayProfile) -> f64 {
    if h_mm.is_nan() {
        return 0.0;
    }
    h_mm.clamp(0.0, profile.stroke_mm)
}

/// One timestamped snapshot of all 25 pin extensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinFrame {
    pub t_ms: f64,
    pub heights_mm: Heights,
}

impl PinFrame {
    pub fn new(t_ms: f64, heights_mm: Heights) -> Self {
        Self { t_ms, heights_mm }
    }

    pub fn rest(t_ms: f64) -> Self {
        Self::new(t_ms, [0.0; PIN_COUNT])
    }

    pub fn height(&self, index: GridIndex) -> f64 {
        self.heights_mm[index.linear()]
    }

    /// Copy with every height clamped to the profile's stroke.
    pub fn clamped(&self, profile: &DisplayProfile) -> Self {
        let mut heights = self.heights_mm;
        for h in &mut heights {
            *h = clamp_height(*h, profile);
        }
        Self::new(self.t_ms, heights)
    }

    pub fn is_within(&self, profile: &DisplayProfile) -> bool {
        self.heights_mm
            .iter()
            .all(|h| h.is_finite() && *h >= 0.0 && *h <= profile.stroke_mm)
    }

    pub fn mean_height(&self) -> f64 {
        self.heights_mm.iter().sum::<f64>() / PIN_COUNT as f64
    }
}

/// Format tag written into every pattern file.
pub const PATTERN_FORMAT_VERSION: &str = "shapekit-pattern/1";

/// A named sequence of frames on a uniform time grid.
///
/// Frame `i` sits at `i * 1000 / frame_rate_hz` milliseconds; recordings carry
/// no per-frame wall-clock timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternRecording {
    pub format_version: String,
    pub name: String,
    pub created_utc: DateTime<Utc>,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub display_profile: DisplayProfile,
    pub frame_rate_hz: f64,
    pub frames: Vec<Heights>,
    pub annotations: BTreeMap<String, String>,
}

impl PatternRecording {
    pub fn new(
        name: impl Into<String>,
        display_profile: DisplayProfile,
        frame_rate_hz: f64,
        frames: Vec<Heights>,
    ) -> Self {
        Self {
            format_version: PATTERN_FORMAT_VERSION.to_string(),
            name: name.into(),
            created_utc: Utc::now(),
            grid_rows: GRID_SIZE,
            grid_cols: GRID_SIZE,
            display_profile,
            frame_rate_hz,
            frames,
            annotations: BTreeMap::new(),
        }
    }

    pub fn frame_period_ms(&self) -> f64 {
        1000.0 / self.frame_rate_hz
    }

    /// Nominal grid time of frame `index`.
    pub fn frame_time_ms(&self, index: usize) -> f64 {
        index as f64 * 1000.0 / self.frame_rate_hz
    }

    /// Time of the last frame; zero for single-frame and empty recordings.
    pub fn duration_ms(&self) -> f64 {
        self.frame_time_ms(self.frames.len().saturating_sub(1))
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn pin_frame(&self, index: usize) -> Option<PinFrame> {
        self.frames
            .get(index)
            .map(|h| PinFrame::new(self.frame_time_ms(index), *h))
    }

    pub fn pin_frames(&self) -> impl Iterator<Item = PinFrame> + '_ {
        self.frames
            .iter()
            .enumerate()
            .map(|(i, h)| PinFrame::new(self.frame_time_ms(i), *h))
    }

    /// Checks every invariant a persisted recording must satisfy.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.format_version != PATTERN_FORMAT_VERSION {
            return Err(ModelError::Recording(format!(
                "unsupported format_version {:?}",
                self.format_version
            )));
        }
        if self.grid_rows != GRID_SIZE || self.grid_cols != GRID_SIZE {
            return Err(ModelError::Recording(format!(
                "grid must be {GRID_SIZE}x{GRID_SIZE}, got {}x{}",
                self.grid_rows, self.grid_cols
            )));
        }
        self.display_profile.validate()?;
        if !(self.frame_rate_hz.is_finite() && self.frame_rate_hz > 0.0) {
            return Err(ModelError::Recording(format!(
                "frame_rate_hz must be > 0, got {}",
                self.frame_rate_hz
            )));
        }
        if self.frames.is_empty() {
            return Err(ModelError::Recording("recording has no frames".into()));
        }
        let stroke = self.display_profile.stroke_mm;
        for (i, frame) in self.frames.iter().enumerate() {
            if let Some(pin) = frame
                .iter()
                .position(|h| !(h.is_finite() && *h >= 0.0 && *h <= stroke))
            {
                return Err(ModelError::Recording(format!(
                    "frame {i} pin {pin} height {} outside [0, {stroke}]",
                    frame[pin]
                )));
            }
        }
        Ok(())
    }
}

/// Global height and speed adjustments applied before playback.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningParams {
    pub height_gain: f64,
    pub speed_factor: f64,
}

impl TuningParams {
    pub fn new(height_gain: f64, speed_factor: f64) -> Result<Self, ModelError> {
        let params = Self {
            height_gain,
            speed_factor,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.height_gain.is_finite() && self.height_gain >= 0.0) {
            return Err(ModelError::Tuning(format!(
                "height_gain must be >= 0, got {}",
                self.height_gain
            )));
        }
        if !(self.speed_factor.is_finite() && self.speed_factor > 0.0) {
            return Err(ModelError::Tuning(format!(
                "speed_factor must be > 0, got {}",
                self.speed_factor
            )));
        }
        Ok(())
    }
}

impl Default for TuningParams {
    fn default() -> Self {
        Self {
            height_gain: 1.0,
            speed_factor: 1.0,
        }
    }
}
