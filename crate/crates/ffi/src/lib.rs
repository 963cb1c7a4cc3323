//! C ABI over the shapekit core.
//!
//! Every fallible call returns an [`SkStatus`]; on failure the message is
//! available from [`sk_last_error`] on the same thread. Objects are opaque
//! handles created by `*_new`/`*_load` calls and released with the matching
//! `*_free`. Height buffers are `SK_PIN_COUNT` doubles in row-major order.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use shapekit::device::{
    crc8, decode_frame, encode_frame, height_to_position_byte, position_byte_to_height,
    position_byte_to_pwm_ticks, DeviceFrame, PinSink, SimulatedDisplay,
};
use shapekit::force::static_force;
use shapekit::image::GreyImage;
use shapekit::model::{Heights, ModelError};
use shapekit::pattern::{load_file, save_file, PatternError};
use shapekit::playback::{apply_tuning, PlaybackJob, SimulatedClock};
use shapekit::synth::{render_frame, CameraModel, ScenarioKind, TrajectoryScenario};
use shapekit::tracker::{calibrate_baseline, Tracker, TrackerConfig, TrackerError};
use shapekit::workflow::{rms_error, WorkflowError};
use shapekit::{DisplayProfile, PatternRecording, PinFrame, ProfileId, TuningParams};

pub const SK_PIN_COUNT: usize = 25;
pub const SK_WIRE_FRAME_LEN: usize = 29;

const _: () = assert!(SK_PIN_COUNT == shapekit::PIN_COUNT);
const _: () = assert!(SK_WIRE_FRAME_LEN == shapekit::device::WIRE_FRAME_LEN);

pub const SK_PROFILE_S: u32 = 0;
pub const SK_PROFILE_M: u32 = 1;
pub const SK_PROFILE_L: u32 = 2;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NotFound = 3,
    FormatError = 4,
    IoError = 5,
    StateError = 6,
    CrcError = 7,
    ProtocolError = 8,
    RangeError = 9,
    TrackerError = 10,
    Panic = 11,
}

/// A pattern recording.
pub struct SkRecording(PatternRecording);

/// The servo-limited display simulator.
pub struct SkSimDisplay(SimulatedDisplay);

/// A calibrated marker tracker.
pub struct SkTracker(Tracker);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(SkStatus, String);

impl From<WorkflowError> for Failure {
    fn from(e: WorkflowError) -> Self {
        let status = match e.code() {
            "NotFound" => SkStatus::NotFound,
            "FormatError" => SkStatus::FormatError,
            "IoError" => SkStatus::IoError,
            "StateError" | "EmptyRecording" => SkStatus::StateError,
            "CrcError" => SkStatus::CrcError,
            "ProtocolError" => SkStatus::ProtocolError,
            "RangeError" => SkStatus::RangeError,
            "CalibrationFailed" | "DegenerateScale" | "TrackerError" => SkStatus::TrackerError,
            _ => SkStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

macro_rules! failure_from {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                WorkflowError::from(e).into()
            }
        }
    )*};
}

failure_from!(
    PatternError,
    TrackerError,
    shapekit::device::DeviceError,
    shapekit::playback::PlaybackError,
    shapekit::synth::SynthError,
    ModelError
);

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(SkStatus::InvalidArgument, msg.into())
}

fn null(what: &str) -> Failure {
    Failure(SkStatus::NullPointer, format!("{what} is null"))
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SkStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SkStatus::Panic
        }
    }
}

fn profile(id: u32) -> Result<DisplayProfile, Failure> {
    match id {
        SK_PROFILE_S => Ok(DisplayProfile::for_id(ProfileId::S)),
        SK_PROFILE_M => Ok(DisplayProfile::for_id(ProfileId::M)),
        SK_PROFILE_L => Ok(DisplayProfile::for_id(ProfileId::L)),
        other => Err(invalid(format!("unknown profile {other}"))),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn heights_arg(p: *const f64) -> Result<Heights, Failure> {
    if p.is_null() {
        return Err(null("heights"));
    }
    let mut h = [0.0; SK_PIN_COUNT];
    h.copy_from_slice(slice::from_raw_parts(p, SK_PIN_COUNT));
    Ok(h)
}

unsafe fn write_heights(out: *mut f64, h: &Heights) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    slice::from_raw_parts_mut(out, SK_PIN_COUNT).copy_from_slice(h);
    Ok(())
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn image_arg(pixels: *const u8, width: u32, height: u32) -> Result<GreyImage, Failure> {
    if pixels.is_null() {
        return Err(null("pixels"));
    }
    let len = width as usize * height as usize;
    GreyImage::from_raw(width, height, slice::from_raw_parts(pixels, len).to_vec())
        .map_err(|e| invalid(e.to_string()))
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn sk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Release a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sk_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// CRC-8/SMBUS of `len` bytes.
///
/// # Safety
/// `bytes` is null (read as empty) or holds `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn sk_crc8(bytes: *const u8, len: usize) -> u8 {
    if bytes.is_null() {
        return crc8(&[]);
    }
    crc8(slice::from_raw_parts(bytes, len))
}

/// Encode a position frame into `out` (`SK_WIRE_FRAME_LEN` bytes).
///
/// # Safety
/// `positions` holds `SK_PIN_COUNT` bytes, `out` has room for
/// `SK_WIRE_FRAME_LEN`.
#[no_mangle]
pub unsafe extern "C" fn sk_encode_frame(seq: u8, positions: *const u8, out: *mut u8) -> SkStatus {
    guard(|| {
        if positions.is_null() || out.is_null() {
            return Err(null("buffer"));
        }
        let mut p = [0u8; SK_PIN_COUNT];
        p.copy_from_slice(slice::from_raw_parts(positions, SK_PIN_COUNT));
        let wire = encode_frame(&DeviceFrame::new(seq, p));
        slice::from_raw_parts_mut(out, SK_WIRE_FRAME_LEN).copy_from_slice(&wire);
        Ok(())
    })
}

/// Decode one wire frame, checking framing and CRC.
///
/// # Safety
/// `bytes` holds `len` bytes; `out_positions` has room for `SK_PIN_COUNT`.
#[no_mangle]
pub unsafe extern "C" fn sk_decode_frame(
    bytes: *const u8,
    len: usize,
    out_seq: *mut u8,
    out_positions: *mut u8,
) -> SkStatus {
    guard(|| {
        if bytes.is_null() || out_seq.is_null() || out_positions.is_null() {
            return Err(null("buffer"));
        }
        let frame = decode_frame(slice::from_raw_parts(bytes, len))?;
        *out_seq = frame.seq;
        slice::from_raw_parts_mut(out_positions, SK_PIN_COUNT).copy_from_slice(&frame.positions);
        Ok(())
    })
}

/// Position byte for a height; heights outside the stroke are a range error.
///
/// # Safety
/// `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sk_height_to_position(
    h_mm: f64,
    profile_id: u32,
    out: *mut u8,
) -> SkStatus {
    guard(|| {
        let p = profile(profile_id)?;
        let out = handle_mut(out, "out")?;
        *out = height_to_position_byte(h_mm, &p)?;
        Ok(())
    })
}

/// Height for a position byte; NaN for an unknown profile.
#[no_mangle]
pub extern "C" fn sk_position_to_height(position: u8, profile_id: u32) -> f64 {
    profile(profile_id).map_or(f64::NAN, |p| position_byte_to_height(position, &p))
}

#[no_mangle]
pub extern "C" fn sk_position_to_pwm_ticks(position: u8) -> u16 {
    position_byte_to_pwm_ticks(position)
}

/// Per-pin spring force in newtons for a height frame.
///
/// # Safety
/// `heights` and `out_force_n` hold `SK_PIN_COUNT` doubles.
#[no_mangle]
pub unsafe extern "C" fn sk_static_force(
    heights: *const f64,
    profile_id: u32,
    out_force_n: *mut f64,
) -> SkStatus {
    guard(|| {
        let p = profile(profile_id)?;
        let f = static_force(&PinFrame::new(0.0, heights_arg(heights)?), &p);
        write_heights(out_force_n, &f.spring_force_n)
    })
}

/// Build a recording from `frame_count` frames of `SK_PIN_COUNT` heights.
///
/// # Safety
/// `heights` holds `frame_count * SK_PIN_COUNT` doubles; `name` is a
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sk_recording_new(
    name: *const c_char,
    profile_id: u32,
    rate_hz: f64,
    heights: *const f64,
    frame_count: usize,
    out: *mut *mut SkRecording,
) -> SkStatus {
    guard(|| {
        let name = str_arg(name, "name")?;
        let p = profile(profile_id)?;
        if heights.is_null() && frame_count > 0 {
            return Err(null("heights"));
        }
        let frames = (0..frame_count)
            .map(|i| heights_arg(heights.add(i * SK_PIN_COUNT)))
            .collect::<Result<Vec<_>, _>>()?;
        let rec = PatternRecording::new(name, p, rate_hz, frames);
        rec.validate()?;
        put(out, SkRecording(rec))
    })
}

/// Ground truth of a named scenario (`wave`, `sequential`, `uniform`,
/// `random_walk`) with default parameters.
///
/// # Safety
/// `scenario` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sk_recording_simulate(
    scenario: *const c_char,
    duration_ms: f64,
    rate_hz: f64,
    profile_id: u32,
    out: *mut *mut SkRecording,
) -> SkStatus {
    guard(|| {
        let kind: ScenarioKind = str_arg(scenario, "scenario")?
            .parse()
            .map_err(|e: shapekit::synth::SynthError| invalid(e.to_string()))?;
        let p = profile(profile_id)?;
        let rec = TrajectoryScenario::new(kind, duration_ms).sample_recording(&p, rate_hz)?;
        put(out, SkRecording(rec))
    })
}

/// # Safety
/// `path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sk_recording_load(
    path: *const c_char,
    out: *mut *mut SkRecording,
) -> SkStatus {
    guard(|| {
        let rec = load_file(Path::new(str_arg(path, "path")?))?;
        put(out, SkRecording(rec))
    })
}

/// # Safety
/// `rec` is a live handle; `path` is a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sk_recording_save(
    rec: *const SkRecording,
    path: *const c_char,
) -> SkStatus {
    guard(|| {
        let rec = handle(rec, "recording")?;
        save_file(&rec.0, Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `rec` is null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn sk_recording_free(rec: *mut SkRecording) {
    if !rec.is_null() {
        drop(Box::from_raw(rec));
    }
}

/// # Safety
/// `rec` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sk_recording_frame_count(rec: *const SkRecording) -> usize {
    rec.as_ref().map_or(0, |r| r.0.len())
}

/// # Safety
/// `rec` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sk_recording_frame_rate(rec: *const SkRecording) -> f64 {
    rec.as_ref().map_or(f64::NAN, |r| r.0.frame_rate_hz)
}

/// Copy frame `index` into `out_heights`.
///
/// # Safety
/// `rec` is a live handle; `out_heights` holds `SK_PIN_COUNT` doubles.
#[no_mangle]
pub unsafe extern "C" fn sk_recording_frame(
    rec: *const SkRecording,
    index: usize,
    out_heights: *mut f64,
) -> SkStatus {
    guard(|| {
        let rec = handle(rec, "recording")?;
        let frame = rec
            .0
            .frames
            .get(index)
            .ok_or_else(|| invalid(format!("frame {index} of {}", rec.0.len())))?;
        write_heights(out_heights, frame)
    })
}

/// Apply height gain then speed factor, producing a new recording.
///
/// # Safety
/// `rec` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sk_recording_tune(
    rec: *const SkRecording,
    height_gain: f64,
    speed_factor: f64,
    out: *mut *mut SkRecording,
) -> SkStatus {
    guard(|| {
        let rec = handle(rec, "recording")?;
        let tuning = TuningParams::new(height_gain, speed_factor)?;
        put(out, SkRecording(apply_tuning(&rec.0, &tuning)?))
    })
}

/// The recording as pattern-file JSON. Free with `sk_string_free`.
///
/// # Safety
/// `rec` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sk_recording_to_json(
    rec: *const SkRecording,
    out: *mut *mut c_char,
) -> SkStatus {
    guard(|| {
        let rec = handle(rec, "recording")?;
        let out = handle_mut(out, "out")?;
        let text = shapekit::pattern::to_json(&rec.0)?;
        *out = CString::new(text)
            .map_err(|e| invalid(e.to_string()))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sk_sim_new(profile_id: u32, out: *mut *mut SkSimDisplay) -> SkStatus {
    guard(|| {
        put(
            out,
            SkSimDisplay(SimulatedDisplay::new(profile(profile_id)?)),
        )
    })
}

/// # Safety
/// `sim` is null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn sk_sim_free(sim: *mut SkSimDisplay) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Advance every servo `dt_ms` toward the commanded position bytes and write
/// the achieved heights.
///
/// # Safety
/// `sim` is a live handle; `positions` holds `SK_PIN_COUNT` bytes;
/// `out_heights` holds `SK_PIN_COUNT` doubles.
#[no_mangle]
pub unsafe extern "C" fn sk_sim_step(
    sim: *mut SkSimDisplay,
    positions: *const u8,
    dt_ms: f64,
    out_heights: *mut f64,
) -> SkStatus {
    guard(|| {
        let sim = handle_mut(sim, "display")?;
        if positions.is_null() {
            return Err(null("positions"));
        }
        if !(dt_ms.is_finite() && dt_ms >= 0.0) {
            return Err(invalid(format!("dt_ms must be >= 0, got {dt_ms}")));
        }
        let mut p = [0u8; SK_PIN_COUNT];
        p.copy_from_slice(slice::from_raw_parts(positions, SK_PIN_COUNT));
        let achieved = sim.0.sim_step(&DeviceFrame::new(0, p), dt_ms);
        write_heights(out_heights, &achieved.heights_mm)
    })
}

/// Play `rec` into the simulator on a simulated clock and report the RMS
/// difference, in mm, between commanded and achieved heights.
///
/// # Safety
/// `sim` and `rec` are live handles; `out_rms_mm` is writable.
#[no_mangle]
pub unsafe extern "C" fn sk_sim_play(
    sim: *mut SkSimDisplay,
    rec: *const SkRecording,
    out_rms_mm: *mut f64,
) -> SkStatus {
    guard(|| {
        let sim = handle_mut(sim, "display")?;
        let rec = handle(rec, "recording")?;
        let out = handle_mut(out_rms_mm, "out")?;
        let mut job = PlaybackJob::new(&rec.0, TuningParams::default(), false)?;
        sim.0.clear_trace();
        job.play(&mut sim.0, &mut SimulatedClock::new())?;
        let achieved: Vec<Heights> = PinSink::trace(&sim.0)
            .unwrap_or_default()
            .iter()
            .map(|f| f.heights_mm)
            .collect();
        *out = rms_error(&achieved, &job.tuned_recording().frames);
        Ok(())
    })
}

/// Render heights through the default synthetic camera into a 640x480
/// greyscale buffer.
///
/// # Safety
/// `heights` holds `SK_PIN_COUNT` doubles; `out_pixels` holds `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn sk_render_frame(
    heights: *const f64,
    out_pixels: *mut u8,
    len: usize,
) -> SkStatus {
    guard(|| {
        let cam = CameraModel::default();
        let image = render_frame(&PinFrame::new(0.0, heights_arg(heights)?), &cam)?;
        let bytes = image.as_bytes();
        if out_pixels.is_null() {
            return Err(null("pixels"));
        }
        if len < bytes.len() {
            return Err(invalid(format!(
                "buffer holds {len} bytes, need {}",
                bytes.len()
            )));
        }
        slice::from_raw_parts_mut(out_pixels, bytes.len()).copy_from_slice(bytes);
        Ok(())
    })
}

/// Calibrate a tracker on a greyscale frame with every pin at rest.
///
/// # Safety
/// `pixels` holds `width * height` bytes; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sk_tracker_new(
    pixels: *const u8,
    width: u32,
    height: u32,
    profile_id: u32,
    out: *mut *mut SkTracker,
) -> SkStatus {
    guard(|| {
        let p = profile(profile_id)?;
        let image = image_arg(pixels, width, height)?;
        let config = TrackerConfig::for_image(width, height);
        let cal = calibrate_baseline(&image, &config)?;
        put(out, SkTracker(Tracker::new(cal, config, p)?))
    })
}

/// # Safety
/// `tracker` is null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn sk_tracker_free(tracker: *mut SkTracker) {
    if !tracker.is_null() {
        drop(Box::from_raw(tracker));
    }
}

/// Track one frame. Lanes with no marker keep their last height and are
/// counted in `out_missing`.
///
/// # Safety
/// `tracker` is a live handle; `pixels` holds `width * height` bytes;
/// `out_heights` holds `SK_PIN_COUNT` doubles; `out_missing` is null or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn sk_tracker_track(
    tracker: *mut SkTracker,
    pixels: *const u8,
    width: u32,
    height: u32,
    t_ms: f64,
    out_heights: *mut f64,
    out_missing: *mut u32,
) -> SkStatus {
    guard(|| {
        let tracker = handle_mut(tracker, "tracker")?;
        let image = image_arg(pixels, width, height)?;
        let tracked = tracker.0.track(&image, t_ms)?;
        write_heights(out_heights, &tracked.frame.heights_mm)?;
        if let Some(m) = out_missing.as_mut() {
            *m = tracked.missing_lanes.len() as u32;
        }
        Ok(())
    })
}
