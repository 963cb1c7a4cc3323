use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::image::GreyImage;
use crate::model::{DisplayProfile, PinFrame};
use crate::synth::{render_frame, CameraModel, ScenarioKind, Trajectory, TrajectoryScenario};

use super::TrackerError;

/// One captured image and its capture time.
#[derive(Debug, Clone)]
pub struct SourceFrame {
    pub t_ms: f64,
    pub image: GreyImage,
}

/// Anything that yields tracking-view frames. `None` ends the stream.
pub trait FrameSource: Send {
    fn next_frame(&mut self) -> Option<Result<SourceFrame, TrackerError>>;

    fn describe(&self) -> String;
}

impl<S: FrameSource + ?Sized> FrameSource for Box<S> {
    fn next_frame(&mut self) -> Option<Result<SourceFrame, TrackerError>> {
        (**self).next_frame()
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

/// Renders a scenario through the synthetic camera.
///
/// The stream opens with `lead_rest_frames` frames of every pin at rest (what
/// the camera sees when sync is pressed), followed by the scenario sampled at
/// `rate_hz`. Timestamps advance by one period per emitted frame.
pub struct SynthSource {
    trajectory: Trajectory,
    camera: CameraModel,
    rate_hz: f64,
    lead_rest_frames: usize,
    scenario_frames: usize,
    looping: bool,
    index: usize,
}

impl SynthSource {
    pub fn new(
        scenario: &TrajectoryScenario,
        camera: CameraModel,
        profile: &DisplayProfile,
        rate_hz: f64,
    ) -> Result<Self, TrackerError> {
        let trajectory =
            Trajectory::new(scenario, profile).map_err(|e| TrackerError::Source(e.to_string()))?;
        camera
            .validate(profile)
            .map_err(|e| TrackerError::Source(e.to_string()))?;
        Ok(Self {
            scenario_frames: scenario.frame_count(rate_hz),
            trajectory,
            camera,
            rate_hz,
            lead_rest_frames: 1,
            looping: false,
            index: 0,
        })
    }

    pub fn with_lead_rest_frames(mut self, n: usize) -> Self {
        self.lead_rest_frames = n;
        self
    }

    /// Repeat the scenario forever instead of ending after one pass.
    pub fn looping(mut self, looping: bool) -> Self {
        self.looping = looping;
        self
    }

    pub fn camera(&self) -> &CameraModel {
        &self.camera
    }

    /// Ground truth behind emitted frame `index`.
    pub fn truth_for(&self, index: usize) -> PinFrame {
        let t_ms = index as f64 * 1000.0 / self.rate_hz;
        if index < self.lead_rest_frames || self.scenario_frames == 0 {
            return PinFrame::rest(t_ms);
        }
        let k = (index - self.lead_rest_frames) % self.scenario_frames;
        let truth = self
            .trajectory
            .truth_at(k as f64 * 1000.0 / self.rate_hz)
            .expect("grid time inside scenario duration");
        PinFrame::new(t_ms, truth.heights_mm)
    }
}

impl FrameSource for SynthSource {
    fn next_frame(&mut self) -> Option<Result<SourceFrame, TrackerError>> {
        let total = self.lead_rest_frames + self.scenario_frames;
        if !self.looping && self.index >= total {
            return None;
        }
        let truth = self.truth_for(self.index);
        self.index += 1;
        Some(
            render_frame(&truth, &self.camera)
                .map(|image| SourceFrame {
                    t_ms: truth.t_ms,
                    image,
                })
                .map_err(|e| TrackerError::Source(e.to_string())),
        )
    }

    fn describe(&self) -> String {
        format!("synth:{}", self.trajectory.scenario().kind)
    }
}

/// PGM/PNG stills from a directory, in file-name order, stamped on a
/// fixed-rate grid.
pub struct DirSource {
    dir: PathBuf,
    files: Vec<PathBuf>,
    rate_hz: f64,
    index: usize,
}

impl DirSource {
    pub fn open(dir: &Path, rate_hz: f64) -> Result<Self, TrackerError> {
        let entries = std::fs::read_dir(dir)
            .map_err(|e| TrackerError::Source(format!("{}: {e}", dir.display())))?;
        let mut files: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|x| x.to_str())
                    .map(|x| matches!(x.to_ascii_lowercase().as_str(), "pgm" | "png"))
                    .unwrap_or(false)
            })
            .collect();
        files.sort();
        Ok(Self {
            dir: dir.to_path_buf(),
            files,
            rate_hz,
            index: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }
}

impl FrameSource for DirSource {
    fn next_frame(&mut self) -> Option<Result<SourceFrame, TrackerError>> {
        let path = self.files.get(self.index)?;
        let t_ms = self.index as f64 * 1000.0 / self.rate_hz;
        self.index += 1;
        Some(
            GreyImage::load(path)
                .map(|image| SourceFrame { t_ms, image })
                .map_err(|e| TrackerError::Source(format!("{}: {e}", path.display()))),
        )
    }

    fn describe(&self) -> String {
        format!("dir:{}", self.dir.display())
    }
}

/// In-memory frames, mostly for tests and replays.
pub struct VecSource {
    frames: std::vec::IntoIter<SourceFrame>,
}

impl VecSource {
    pub fn new(frames: Vec<SourceFrame>) -> Self {
        Self {
            frames: frames.into_iter(),
        }
    }
}

impl FrameSource for VecSource {
    fn next_frame(&mut self) -> Option<Result<SourceFrame, TrackerError>> {
        self.frames.next().map(Ok)
    }

    fn describe(&self) -> String {
        "memory".into()
    }
}

/// Textual source selector: `synth:<scenario>`, `dir:<path>` or
/// `camera:<index>`.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceSpec {
    Synth(ScenarioKind),
    Dir(PathBuf),
    Camera(u32),
}

impl FromStr for SourceSpec {
    type Err = TrackerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| TrackerError::Source(format!("expected <kind>:<arg>, got {s:?}")))?;
        match kind {
            "synth" => arg
                .parse()
                .map(SourceSpec::Synth)
                .map_err(|e: crate::synth::SynthError| TrackerError::Source(e.to_string())),
            "dir" => Ok(SourceSpec::Dir(PathBuf::from(arg))),
            "camera" => arg
                .parse()
                .map(SourceSpec::Camera)
                .map_err(|_| TrackerError::Source(format!("bad camera index {arg:?}"))),
            other => Err(TrackerError::Source(format!(
                "unknown source kind {other:?}"
            ))),
        }
    }
}
