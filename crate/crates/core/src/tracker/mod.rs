//! Marker tracking: grey frames in, pin heights out.
//!
//! Each of the 25 lanes is a fixed vertical strip of the image holding one
//! cable marker. Detection thresholds the frame, labels dark blobs per lane
//! and takes the darkness-weighted centroid of the largest one. Heights are
//! the marker's downward displacement from a calibrated rest row, scaled to
//! millimetres and clamped to the stroke.

mod detect;
mod pipeline;
mod source;

use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::GreyImage;
use crate::model::{clamp_height, DisplayProfile, PinFrame, DEFAULT_FRAME_RATE_HZ, PIN_COUNT};
use crate::synth::CameraModel;

pub use detect::{detect_lanes, detect_markers, otsu_threshold, LaneDetection, Markers};
pub use pipeline::{
    run_pipeline, Delivery, Pacing, PipelineHandle, PipelineOptions, PipelineSummary,
};
pub use source::{DirSource, FrameSource, SourceFrame, SourceSpec, SynthSource, VecSource};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackerError {
    #[error("frame is {got:?}, tracker configured for {expected:?}")]
    Dimensions {
        expected: (u32, u32),
        got: (u32, u32),
    },
    #[error("no marker found in lane {0}")]
    LaneMissing(usize),
    #[error("calibration failed, no marker in lanes {0:?}")]
    CalibrationFailed(Vec<usize>),
    #[error("lane {lane} moved only {delta_px:.2} px between rest and full stroke")]
    DegenerateScale { lane: usize, delta_px: f64 },
    #[error("invalid tracker config: {0}")]
    Config(String),
    #[error("frame source: {0}")]
    Source(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "level")]
pub enum ThresholdMode {
    Fixed(u8),
    Otsu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub width_px: u32,
    pub height_px: u32,
    pub threshold: ThresholdMode,
    pub min_blob_area_px: usize,
    pub max_blob_area_px: usize,
    /// Half-open column ranges, one per lane, in pin order.
    pub lanes: Vec<(u32, u32)>,
    pub target_rate_hz: f64,
    /// Scale assigned to every lane by baseline calibration.
    pub default_mm_per_px: f64,
}

impl TrackerConfig {
    /// Lane geometry and scale taken from a camera model.
    pub fn for_camera(cam: &CameraModel) -> Self {
        Self {
            width_px: cam.width_px,
            height_px: cam.height_px,
            threshold: ThresholdMode::Otsu,
            min_blob_area_px: 8,
            max_blob_area_px: 4000,
            lanes: (0..PIN_COUNT).map(|l| cam.lane_bounds(l)).collect(),
            target_rate_hz: DEFAULT_FRAME_RATE_HZ,
            default_mm_per_px: cam.mm_per_px,
        }
    }

    /// Equal-width lanes across an image of the given size, default scale.
    pub fn for_image(width_px: u32, height_px: u32) -> Self {
        Self::for_camera(&CameraModel {
            width_px,
            height_px,
            ..CameraModel::default()
        })
    }

    pub fn validate(&self) -> Result<(), TrackerError> {
        let fail = |m: String| Err(TrackerError::Config(m));
        if self.min_blob_area_px == 0 || self.min_blob_area_px >= self.max_blob_area_px {
            return fail(format!(
                "need 0 < min_blob_area ({}) < max_blob_area ({})",
                self.min_blob_area_px, self.max_blob_area_px
            ));
        }
        if self.lanes.len() != PIN_COUNT {
            return fail(format!(
                "expected {PIN_COUNT} lanes, got {}",
                self.lanes.len()
            ));
        }
        let mut sorted = self.lanes.clone();
        sorted.sort_unstable();
        for (i, &(x0, x1)) in sorted.iter().enumerate() {
            if x0 >= x1 || x1 > self.width_px {
                return fail(format!("lane [{x0}, {x1}) is empty or outside the image"));
            }
            if i > 0 && sorted[i - 1].1 > x0 {
                return fail(format!("lanes overlap at column {x0}"));
            }
        }
        if self.target_rate_hz.is_nan() || self.target_rate_hz <= 0.0 {
            return fail("target_rate_hz must be > 0".into());
        }
        if self.default_mm_per_px.is_nan() || self.default_mm_per_px <= 0.0 {
            return fail("default_mm_per_px must be > 0".into());
        }
        Ok(())
    }

    fn check_dims(&self, image: &GreyImage) -> Result<(), TrackerError> {
        if (image.width(), image.height()) != (self.width_px, self.height_px) {
            return Err(TrackerError::Dimensions {
                expected: (self.width_px, self.height_px),
                got: (image.width(), image.height()),
            });
        }
        Ok(())
    }
}

/// Rest marker rows and per-lane pixel scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerCalibration {
    pub rest_y_px: [f64; PIN_COUNT],
    pub mm_per_px: [f64; PIN_COUNT],
    pub captured_utc: DateTime<Utc>,
}

impl TrackerCalibration {
    pub fn validate(&self) -> Result<(), TrackerError> {
        if let Some(lane) = self
            .mm_per_px
            .iter()
            .position(|s| !(s.is_finite() && *s > 0.0))
        {
            return Err(TrackerError::Config(format!(
                "lane {lane} has non-positive mm_per_px"
            )));
        }
        if let Some(lane) = self.rest_y_px.iter().position(|y| !y.is_finite()) {
            return Err(TrackerError::Config(format!("lane {lane} has no rest row")));
        }
        Ok(())
    }

    fn height_mm(&self, lane: usize, y_px: f64, profile: &DisplayProfile) -> f64 {
        clamp_height(
            (y_px - self.rest_y_px[lane]) * self.mm_per_px[lane],
            profile,
        )
    }
}

/// Capture the rest frame as the baseline. The caller guarantees every pin is
/// at rest in `image`.
pub fn calibrate_baseline(
    image: &GreyImage,
    config: &TrackerConfig,
) -> Result<TrackerCalibration, TrackerError> {
    let lanes = detect_lanes(image, config)?;
    let missing: Vec<usize> = lanes
        .iter()
        .enumerate()
        .filter(|(_, l)| l.centroid.is_none())
        .map(|(i, _)| i)
        .collect();
    if !missing.is_empty() {
        return Err(TrackerError::CalibrationFailed(missing));
    }
    let mut rest_y_px = [0.0; PIN_COUNT];
    for (lane, det) in lanes.iter().enumerate() {
        rest_y_px[lane] = det.centroid.map(|c| c.1).unwrap_or_default();
    }
    Ok(TrackerCalibration {
        rest_y_px,
        mm_per_px: [config.default_mm_per_px; PIN_COUNT],
        captured_utc: Utc::now(),
    })
}

/// Baseline plus per-lane scale from a rest frame and a full-stroke frame.
pub fn calibrate_scale(
    rest_image: &GreyImage,
    full_image: &GreyImage,
    stroke_mm: f64,
    config: &TrackerConfig,
) -> Result<TrackerCalibration, TrackerError> {
    let mut cal = calibrate_baseline(rest_image, config)?;
    let full = detect_markers(full_image, config)?;
    for lane in 0..PIN_COUNT {
        let delta_px = (full.centroids[lane].1 - cal.rest_y_px[lane]).abs();
        cal.mm_per_px[lane] = scale_from_delta(lane, delta_px, stroke_mm)?;
    }
    Ok(cal)
}

/// `stroke / |dy|`, refusing travel under 2 px.
pub fn scale_from_delta(lane: usize, delta_px: f64, stroke_mm: f64) -> Result<f64, TrackerError> {
    if delta_px.is_nan() || delta_px.abs() < 2.0 {
        return Err(TrackerError::DegenerateScale { lane, delta_px });
    }
    Ok(stroke_mm / delta_px.abs())
}

/// Strict single-frame tracking: any missing lane is an error.
pub fn track_frame(
    image: &GreyImage,
    t_ms: f64,
    calibration: &TrackerCalibration,
    config: &TrackerConfig,
    profile: &DisplayProfile,
) -> Result<PinFrame, TrackerError> {
    let markers = detect_markers(image, config)?;
    let mut heights = [0.0; PIN_COUNT];
    for (lane, h) in heights.iter_mut().enumerate() {
        *h = calibration.height_mm(lane, markers.centroids[lane].1, profile);
    }
    Ok(PinFrame::new(t_ms, heights))
}

/// A tracked frame with per-lane diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackedFrame {
    pub frame: PinFrame,
    /// Lanes with no marker; their heights repeat the last known value.
    pub missing_lanes: Vec<usize>,
    /// Lanes where more than one valid blob was seen.
    pub ambiguous_lanes: Vec<usize>,
}

/// Stateful tracker holding the shared calibration and last-known heights.
#[derive(Debug, Clone)]
pub struct Tracker {
    calibration: Arc<TrackerCalibration>,
    config: Arc<TrackerConfig>,
    profile: DisplayProfile,
    last: [f64; PIN_COUNT],
}

impl Tracker {
    pub fn new(
        calibration: TrackerCalibration,
        config: TrackerConfig,
        profile: DisplayProfile,
    ) -> Result<Self, TrackerError> {
        config.validate()?;
        calibration.validate()?;
        Ok(Self {
            calibration: Arc::new(calibration),
            config: Arc::new(config),
            profile,
            last: [0.0; PIN_COUNT],
        })
    }

    pub fn calibration(&self) -> &TrackerCalibration {
        &self.calibration
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn profile(&self) -> &DisplayProfile {
        &self.profile
    }

    /// Replace the calibration wholesale.
    pub fn recalibrate(&mut self, calibration: TrackerCalibration) -> Result<(), TrackerError> {
        calibration.validate()?;
        self.calibration = Arc::new(calibration);
        self.last = [0.0; PIN_COUNT];
        Ok(())
    }

    pub fn track(&mut self, image: &GreyImage, t_ms: f64) -> Result<TrackedFrame, TrackerError> {
        let lanes = detect_lanes(image, &self.config)?;
        let mut heights = self.last;
        let mut missing_lanes = Vec::new();
        let mut ambiguous_lanes = Vec::new();
        for (lane, det) in lanes.iter().enumerate() {
            match det.centroid {
                Some((_, y)) => heights[lane] = self.calibration.height_mm(lane, y, &self.profile),
                None => missing_lanes.push(lane),
            }
            if det.ambiguous {
                ambiguous_lanes.push(lane);
            }
        }
        if !ambiguous_lanes.is_empty() {
            log::warn!("t={t_ms:.1} ms: several markers in lanes {ambiguous_lanes:?}");
        }
        self.last = heights;
        Ok(TrackedFrame {
            frame: PinFrame::new(t_ms, heights),
            missing_lanes,
            ambiguous_lanes,
        })
    }
}
