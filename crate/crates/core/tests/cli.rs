use std::path::Path;
use std::process::{Command, Output};

fn gapcast(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gapcast"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn synth(dir: &Path) {
    std::fs::write(
        dir.join("synth.json"),
        r#"{"n_stations": 4, "n_hours": 500, "n_cameras": 2, "outages": {"rate": 0.2}}"#,
    )
    .unwrap();
    let out = gapcast(
        dir,
        &["synth", "--config", "synth.json", "--out-dir", "data"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn help_and_version_succeed() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&gapcast(dir.path(), &["--help"])), 0);
    let out = gapcast(dir.path(), &["--version"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&gapcast(d, &[])), 1);
    assert_eq!(code(&gapcast(d, &["frobnicate"])), 1);
    assert_eq!(
        code(&gapcast(d, &["train", "--model", "gru", "--out", "m.json"])),
        1
    );
    // No station file from flags or config.
    let out = gapcast(d, &["analyze"]);
    assert_eq!(code(&out), 1);
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(
        code(&gapcast(d, &["analyze", "--stations", "missing.csv"])),
        2
    );
    std::fs::write(d.join("bad.csv"), "when,where\n").unwrap();
    assert_eq!(code(&gapcast(d, &["analyze", "--stations", "bad.csv"])), 2);
    std::fs::write(
        d.join("cfg.json"),
        r#"{"split_ratio": 0.8, "colour": "blue"}"#,
    )
    .unwrap();
    assert_eq!(code(&gapcast(d, &["eval", "--config", "cfg.json"])), 2);
}

#[test]
fn full_workflow_writes_outputs_and_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    for f in ["stations.csv", "truth.csv", "vehicles.csv"] {
        assert!(d.join("data").join(f).exists(), "{f}");
    }
    assert!(d.join("data/stations.csv.manifest.json").exists());

    let run = |args: &[&str]| {
        let out = gapcast(d, args);
        assert_eq!(
            code(&out),
            0,
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    };
    let stations = ["--stations", "data/stations.csv"];
    let with = |rest: &[&'static str]| -> Vec<&'static str> {
        stations
            .iter()
            .copied()
            .chain(rest.iter().copied())
            .collect()
    };

    run(&[&["analyze"][..], &with(&["--out", "coverage.csv"])].concat());
    run(&[
        &["impute"][..],
        &with(&["--out", "filled.csv", "--grid-out", "grid.json"]),
    ]
    .concat());
    let windows = run(&[
        &["windows"][..],
        &with(&["--feature-set", "fs2", "--grid", "grid.json"]),
    ]
    .concat());
    assert!(!windows.is_empty());
    run(&[
        &["train"][..],
        &with(&[
            "--model",
            "mlp",
            "--feature-set",
            "fs2",
            "--grid",
            "grid.json",
            "--out",
            "model.json",
        ]),
    ]
    .concat());
    run(&[
        &["predict"][..],
        &with(&[
            "--model",
            "model.json",
            "--grid",
            "grid.json",
            "--horizon",
            "1",
            "--round",
            "--out",
            "pred.csv",
        ]),
    ]
    .concat());

    let pred = std::fs::read_to_string(d.join("pred.csv")).unwrap();
    let mut lines = pred.lines();
    assert_eq!(lines.next(), Some("station_id,horizon,target_time,aqi"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.contains(",+1d,")));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("pred.csv.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "predict");
    let inputs = manifest["inputs"].as_object().unwrap();
    assert_eq!(inputs.len(), 3, "{inputs:?}");
    assert!(inputs.values().all(|v| v.as_str().unwrap().len() == 64));
}

#[test]
fn explicit_manifest_path_is_used() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d);
    let out = gapcast(
        d,
        &[
            "analyze",
            "--stations",
            "data/stations.csv",
            "--manifest",
            "run.json",
        ],
    );
    assert_eq!(code(&out), 0);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("run.json")).unwrap()).unwrap();
    assert_eq!(manifest["tool"], "gapcast");
    assert!(manifest["config_sha256"].as_str().is_some());
}
