//! Pattern recording: the capture session, the `.skp.json` file format, CSV
//! export and an on-disk pattern library.
//!
//! A pattern file is UTF-8 JSON with exactly the fields of
//! [`PatternRecording`]. Frames are stored one JSON array of 25 numbers per
//! line so files diff cleanly.

mod library;
mod session;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use thiserror::Error;

use crate::model::{
    DisplayProfile, Heights, PatternRecording, PinFrame, PATTERN_FORMAT_VERSION, PIN_COUNT,
};

pub use library::{LibraryEntry, PatternLibrary, PATTERN_FILE_SUFFIX};
pub use session::{resample_to_grid, RecordingSession, SessionAction, SessionState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatIssue {
    #[error("unsupported format_version {0:?}")]
    Version(String),
    #[error("bad field: {0}")]
    Field(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PatternError {
    #[error("cannot {action} while {state}")]
    State {
        state: SessionState,
        action: SessionAction,
    },
    #[error("recording holds no frames")]
    EmptyRecording,
    #[error("pattern {0:?} not found")]
    NotFound(String),
    #[error("malformed pattern file: {0}")]
    Format(#[from] FormatIssue),
    #[error("pattern i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for PatternError {
    fn from(e: std::io::Error) -> Self {
        PatternError::Io(e.to_string())
    }
}

#[derive(Serialize)]
struct FileOut<'a> {
    format_version: &'a str,
    name: &'a str,
    created_utc: &'a DateTime<Utc>,
    grid_rows: usize,
    grid_cols: usize,
    display_profile: &'a DisplayProfile,
    frame_rate_hz: f64,
    frames: Vec<Box<RawValue>>,
    annotations: &'a BTreeMap<String, String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileIn {
    format_version: String,
    name: String,
    created_utc: DateTime<Utc>,
    grid_rows: usize,
    grid_cols: usize,
    display_profile: DisplayProfile,
    frame_rate_hz: f64,
    frames: Vec<Vec<f64>>,
    #[serde(default)]
    annotations: BTreeMap<String, String>,
}

/// Serialize a recording to the pattern file text.
pub fn to_json(recording: &PatternRecording) -> Result<String, PatternError> {
    recording
        .validate()
        .map_err(|e| FormatIssue::Field(e.to_string()))?;
    let frames = recording
        .frames
        .iter()
        .map(|f| {
            serde_json::value::to_raw_value(&f[..]).map_err(|e| PatternError::Io(e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let out = FileOut {
        format_version: &recording.format_version,
        name: &recording.name,
        created_utc: &recording.created_utc,
        grid_rows: recording.grid_rows,
        grid_cols: recording.grid_cols,
        display_profile: &recording.display_profile,
        frame_rate_hz: recording.frame_rate_hz,
        frames,
        annotations: &recording.annotations,
    };
    let mut text =
        serde_json::to_string_pretty(&out).map_err(|e| PatternError::Io(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

/// Parse and validate pattern file text.
pub fn from_json(text: &str) -> Result<PatternRecording, PatternError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| FormatIssue::Field(format!("not JSON: {e}")))?;
    match value.get("format_version") {
        Some(serde_json::Value::String(v)) if v == PATTERN_FORMAT_VERSION => {}
        Some(serde_json::Value::String(v)) => return Err(FormatIssue::Version(v.clone()).into()),
        Some(other) => return Err(FormatIssue::Version(other.to_string()).into()),
        None => return Err(FormatIssue::Field("format_version missing".into()).into()),
    }
    let raw: FileIn =
        serde_json::from_value(value).map_err(|e| FormatIssue::Field(e.to_string()))?;
    let mut frames: Vec<Heights> = Vec::with_capacity(raw.frames.len());
    for (i, f) in raw.frames.iter().enumerate() {
        let heights: Heights = f.as_slice().try_into().map_err(|_| {
            FormatIssue::Field(format!(
                "frames[{i}] has {} entries, expected {PIN_COUNT}",
                f.len()
            ))
        })?;
        frames.push(heights);
    }
    let recording = PatternRecording {
        format_version: raw.format_version,
        name: raw.name,
        created_utc: raw.created_utc,
        grid_rows: raw.grid_rows,
        grid_cols: raw.grid_cols,
        display_profile: raw.display_profile,
        frame_rate_hz: raw.frame_rate_hz,
        frames,
        annotations: raw.annotations,
    };
    recording
        .validate()
        .map_err(|e| FormatIssue::Field(e.to_string()))?;
    Ok(recording)
}

pub fn save_file(recording: &PatternRecording, path: &Path) -> Result<(), PatternError> {
    let text = to_json(recording)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_file(path: &Path) -> Result<PatternRecording, PatternError> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => PatternError::NotFound(path.display().to_string()),
        _ => PatternError::Io(format!("{}: {e}", path.display())),
    })?;
    from_json(&text)
}

/// Decimal rendering used by every CSV export: rounded to 1e-6, shortest form.
pub fn csv_number(x: f64) -> String {
    let r = (x * 1e6).round() / 1e6;
    if r == 0.0 {
        "0".to_string()
    } else {
        format!("{r}")
    }
}

/// `t_ms,p0..p24` header, for any per-pin CSV.
pub fn csv_header(prefix: char) -> String {
    let mut header = String::from("t_ms");
    for i in 0..PIN_COUNT {
        let _ = write!(header, ",{prefix}{i}");
    }
    header
}

fn push_row(out: &mut String, t_ms: f64, heights: &Heights) {
    out.push_str(&csv_number(t_ms));
    for h in heights {
        out.push(',');
        out.push_str(&csv_number(*h));
    }
    out.push('\n');
}

/// CSV of frames: header `t_ms,p0,...,p24`, then one row per frame in mm.
pub fn frames_to_csv<'a>(frames: impl IntoIterator<Item = &'a PinFrame>) -> String {
    let mut out = csv_header('p');
    out.push('\n');
    for f in frames {
        push_row(&mut out, f.t_ms, &f.heights_mm);
    }
    out
}

/// CSV export of a recording on its nominal time grid.
pub fn export_csv(recording: &PatternRecording) -> String {
    let frames: Vec<PinFrame> = recording.pin_frames().collect();
    frames_to_csv(&frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(n: usize) -> PatternRecording {
        let frames = (0..n)
            .map(|i| {
                let mut f = [0.0; PIN_COUNT];
                for (p, h) in f.iter_mut().enumerate() {
                    *h = ((i * 7 + p * 3) % 100) as f64 / 10.0;
                }
                f
            })
            .collect();
        let mut rec = PatternRecording::new("wave", DisplayProfile::large(), 30.0, frames);
        rec.annotations.insert("topic".into(), "calm".into());
        rec
    }

    #[test]
    fn json_round_trip() {
        let rec = sample(90);
        let text = to_json(&rec).unwrap();
        assert_eq!(from_json(&text).unwrap(), rec);
        // One frame per line.
        assert!(text.lines().count() > 90);
    }

    #[test]
    fn version_gate() {
        let text = to_json(&sample(2))
            .unwrap()
            .replace("shapekit-pattern/1", "shapekit-pattern/2");
        assert_eq!(
            from_json(&text),
            Err(PatternError::Format(FormatIssue::Version(
                "shapekit-pattern/2".into()
            )))
        );
    }

    #[test]
    fn short_frame_is_a_field_error() {
        let mut value: serde_json::Value =
            serde_json::from_str(&to_json(&sample(3)).unwrap()).unwrap();
        value["frames"][1].as_array_mut().unwrap().pop();
        let err = from_json(&value.to_string()).unwrap_err();
        match err {
            PatternError::Format(FormatIssue::Field(msg)) => assert!(msg.contains("frames[1]")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn out_of_range_height_and_garbage_rejected() {
        let mut value: serde_json::Value =
            serde_json::from_str(&to_json(&sample(3)).unwrap()).unwrap();
        value["frames"][0][4] = serde_json::json!(11.0);
        assert!(matches!(
            from_json(&value.to_string()),
            Err(PatternError::Format(FormatIssue::Field(_)))
        ));
        assert!(matches!(
            from_json("{nope"),
            Err(PatternError::Format(FormatIssue::Field(_)))
        ));
        assert!(matches!(
            from_json("{}"),
            Err(PatternError::Format(FormatIssue::Field(_)))
        ));
    }

    #[test]
    fn csv_shapes() {
        let one = PatternRecording::new("z", DisplayProfile::large(), 30.0, vec![[0.0; PIN_COUNT]]);
        let csv = export_csv(&one);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].split(',').count(), 26);
        assert_eq!(lines[1].split(',').count(), 26);
        assert!(lines[0].starts_with("t_ms,p0,p1,"));
        assert!(lines[0].ends_with(",p24"));

        let tenth =
            PatternRecording::new("z", DisplayProfile::large(), 30.0, vec![[0.1; PIN_COUNT]]);
        let csv = export_csv(&tenth);
        let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
        assert!(row[1..].iter().all(|v| *v == "0.1"));

        assert_eq!(export_csv(&sample(90)).lines().count(), 91);
        assert_eq!(csv_number(1000.0 / 30.0), "33.333333");
    }

    #[test]
    fn file_helpers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.skp.json");
        let rec = sample(5);
        save_file(&rec, &path).unwrap();
        assert_eq!(load_file(&path).unwrap(), rec);
        assert!(matches!(
            load_file(&dir.path().join("missing.skp.json")),
            Err(PatternError::NotFound(_))
        ));
    }

    fn arb_recording() -> impl Strategy<Value = PatternRecording> {
        (
            prop::collection::vec(prop::array::uniform25(0.0f64..=10.0), 1..40),
            1.0f64..240.0,
            "[a-z ]{0,12}",
            prop::sample::select(vec![
                DisplayProfile::small(),
                DisplayProfile::medium(),
                DisplayProfile::large(),
            ]),
            prop::collection::btree_map("[a-z]{1,6}", "[ -~]{0,10}", 0..4),
        )
            .prop_map(|(frames, rate, name, profile, annotations)| {
                let mut rec = PatternRecording::new(name, profile, rate, frames);
                rec.annotations = annotations;
                rec
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]
        #[test]
        fn file_round_trip_is_lossless(rec in arb_recording()) {
            let back = from_json(&to_json(&rec).unwrap()).unwrap();
            prop_assert_eq!(back, rec);
        }
    }
}
