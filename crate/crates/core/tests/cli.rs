use std::path::Path;
use std::process::{Command, Output};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use serde_json::{json, Value};
use tower::ServiceExt;

use shapekit::pattern::{load_file, save_file};
use shapekit::service::{ClockMode, Service, ServiceConfig};

fn shapekit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shapekit"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn field<'a>(line: &'a str, key: &str) -> &'a str {
    line.split_whitespace()
        .find_map(|kv| kv.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
        .unwrap_or_else(|| panic!("{key} missing from {line:?}"))
}

#[test]
fn simulate_then_play_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let sim = shapekit(
        dir.path(),
        &[
            "simulate",
            "--scenario",
            "wave",
            "--duration",
            "90f",
            "-o",
            "w.skp.json",
        ],
    );
    assert!(sim.status.success(), "{}", stderr(&sim));
    assert_eq!(field(&stdout(&sim), "frames"), "90");

    let play = shapekit(
        dir.path(),
        &[
            "play",
            "w.skp.json",
            "--sink",
            "sim",
            "--clock",
            "sim",
            "--report",
            "r.csv",
        ],
    );
    assert!(play.status.success(), "{}", stderr(&play));
    let out = stdout(&play);
    assert_eq!(field(&out, "frames_sent"), "90");
    assert_eq!(field(&out, "state"), "Finished");
    let rms: f64 = field(&out, "rms_error_mm").parse().unwrap();
    assert!(rms < 0.5, "{rms}");

    let report = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    let mut lines = report.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&header[..2], ["t_ms", "rms_error_mm"]);
    assert_eq!(header.len(), 2 + 25);
    assert_eq!(lines.count(), 90);
}

#[test]
fn tune_identity_keeps_frames() {
    let dir = tempfile::tempdir().unwrap();
    assert!(shapekit(
        dir.path(),
        &[
            "simulate",
            "--scenario",
            "random_walk",
            "--duration",
            "2s",
            "-o",
            "a.skp.json"
        ]
    )
    .status
    .success());
    let tune = shapekit(
        dir.path(),
        &[
            "tune",
            "a.skp.json",
            "--gain",
            "1",
            "--speed",
            "1",
            "-o",
            "b.skp.json",
        ],
    );
    assert!(tune.status.success(), "{}", stderr(&tune));
    let a = load_file(&dir.path().join("a.skp.json")).unwrap();
    let b = load_file(&dir.path().join("b.skp.json")).unwrap();
    assert_eq!(a.frames, b.frames);
    assert_eq!(b.annotations["tuned_height_gain"], "1");

    let tune = shapekit(
        dir.path(),
        &["tune", "a.skp.json", "--speed", "2", "-o", "c.skp.json"],
    );
    assert!(tune.status.success());
    assert_eq!(load_file(&dir.path().join("c.skp.json")).unwrap().len(), 31);
}

#[test]
fn export_writes_one_row_per_frame() {
    let dir = tempfile::tempdir().unwrap();
    assert!(shapekit(
        dir.path(),
        &[
            "simulate",
            "--scenario",
            "wave",
            "--duration",
            "10f",
            "-o",
            "a.skp.json"
        ]
    )
    .status
    .success());
    let o = shapekit(dir.path(), &["export", "a.skp.json", "--csv", "a.csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("a.csv")).unwrap();
    assert!(csv.starts_with("t_ms,p0,"));
    assert_eq!(csv.lines().count(), 11);
}

#[test]
fn force_between_identical_takes_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert!(shapekit(
        dir.path(),
        &[
            "simulate",
            "--scenario",
            "wave",
            "--duration",
            "2s",
            "-o",
            "a.skp.json"
        ]
    )
    .status
    .success());
    let o = shapekit(
        dir.path(),
        &[
            "force",
            "--detached",
            "a.skp.json",
            "--attached",
            "a.skp.json",
            "-o",
            "f.csv",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("f.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let first_c = header.iter().position(|h| *h == "c0_approx").unwrap();
    for row in lines {
        for v in row.split(',').skip(first_c) {
            assert_eq!(v.parse::<f64>().unwrap(), 0.0);
        }
    }
}

#[test]
fn missing_file_is_not_found() {
    let dir = tempfile::tempdir().unwrap();
    let o = shapekit(dir.path(), &["play", "nope.skp.json", "--clock", "sim"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[NotFound]"), "{}", stderr(&o));
}

#[test]
fn bad_tuning_is_param_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(shapekit(
        dir.path(),
        &[
            "simulate",
            "--scenario",
            "wave",
            "--duration",
            "10f",
            "-o",
            "a.skp.json"
        ]
    )
    .status
    .success());
    let o = shapekit(
        dir.path(),
        &["tune", "a.skp.json", "--speed", "0", "-o", "b.skp.json"],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).starts_with("error[ParamError]"),
        "{}",
        stderr(&o)
    );
    assert!(!dir.path().join("b.skp.json").exists());
}

#[test]
fn corrupt_file_is_format_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.skp.json"), "{\"frames\": 3}").unwrap();
    let o = shapekit(dir.path(), &["export", "bad.skp.json", "--csv", "x.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).starts_with("error[FormatError]"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        shapekit(
            dir.path(),
            &[
                "simulate",
                "--scenario",
                "wave",
                "--duration",
                "3",
                "-o",
                "x"
            ]
        )
        .status
        .code(),
        Some(2)
    );
    assert_eq!(shapekit(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(shapekit(dir.path(), &["play"]).status.code(), Some(2));
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> Value {
    let builder = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => builder
            .header("content-type", "application/json")
            .body(Body::from(v.to_string()))
            .unwrap(),
        None => builder.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    assert!(resp.status() == StatusCode::OK || resp.status() == StatusCode::NO_CONTENT);
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX)
        .await
        .unwrap();
    if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    }
}

#[tokio::test]
async fn cli_and_api_agree() {
    let dir = tempfile::tempdir().unwrap();
    let lib = dir.path().join("lib");
    let service = Service::new(ServiceConfig::new(&lib).with_clock(ClockMode::Manual)).unwrap();
    let app = service.router();

    let source = json!({"kind": "synth", "params": {"scenario": "wave"}});
    call(&app, "POST", "/session/source", Some(source)).await;
    call(&app, "POST", "/session/sync", None).await;
    call(&app, "POST", "/session/step", Some(json!({"frames": 1}))).await;
    call(&app, "POST", "/session/record/start", None).await;
    call(&app, "POST", "/session/step", Some(json!({"frames": 30}))).await;
    let stop = call(
        &app,
        "POST",
        "/session/record/stop",
        Some(json!({"name": "api"})),
    )
    .await;
    let id = stop["id"].as_str().unwrap().to_string();
    let api_file = call(&app, "GET", &format!("/patterns/{id}"), None).await;
    let api_frames: Vec<[f64; 25]> = serde_json::from_value(api_file["frames"].clone()).unwrap();

    let track = shapekit(
        dir.path(),
        &[
            "track",
            "--source",
            "synth:wave",
            "--calibrate-first",
            "--duration",
            "30f",
            "-o",
            "cli.skp.json",
        ],
    );
    assert!(track.status.success(), "{}", stderr(&track));
    let cli = load_file(&dir.path().join("cli.skp.json")).unwrap();
    assert_eq!(cli.frames, api_frames);

    let started = call(
        &app,
        "POST",
        "/playback/start",
        Some(json!({"id": id, "gain": 0.5, "speed": 2.0, "sink": "sim"})),
    )
    .await;
    assert!(started["job_id"].is_string());
    let status = call(&app, "GET", "/playback", None).await;

    let api_path = dir.path().join("api.skp.json");
    save_file(&cli, &api_path).unwrap();
    let play = shapekit(
        dir.path(),
        &[
            "play",
            "api.skp.json",
            "--gain",
            "0.5",
            "--speed",
            "2",
            "--sink",
            "sim",
            "--clock",
            "sim",
        ],
    );
    assert!(play.status.success(), "{}", stderr(&play));
    let out = stdout(&play);
    assert_eq!(
        field(&out, "frames_sent"),
        status["frames_sent"].to_string()
    );
    assert_eq!(field(&out, "state"), status["state"].as_str().unwrap());
}
