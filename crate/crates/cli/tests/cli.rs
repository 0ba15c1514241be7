use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn otl(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_otl"))
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "otl {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_run_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    otl(&[
        "synth",
        "--out",
        path(&data),
        "--frames",
        "40",
        "--seed",
        "2",
    ]);
    for f in [
        "run.toml",
        "features.csv",
        "test/features.csv",
        "detections.csv",
        "calib.txt",
        "timestamps.txt",
    ] {
        assert!(data.join(f).is_file(), "{f} missing");
    }

    let ckpt = dir.path().join("ckpt");
    let report = dir.path().join("report.csv");
    let stdout = otl(&[
        "run",
        "--config",
        path(&data.join("run.toml")),
        "--seed",
        "4",
        "--checkpoint-dir",
        path(&ckpt),
        "--report",
        path(&report),
    ])
    .stdout;
    let stdout = String::from_utf8(stdout).unwrap();
    assert!(stdout.contains("mode: full"), "{stdout}");
    assert!(stdout.contains("macro-F1"), "{stdout}");

    let csv = fs::read_to_string(&report).unwrap();
    assert!(csv.starts_with("point,samples_learned,micro_f1,macro_f1,true_Car_pred_Car"));
    let final_row = csv.lines().last().unwrap().to_string();
    assert!(final_row.starts_with("final,"));
    assert_eq!(
        fs::read_to_string(dir.path().join("report.timing.csv"))
            .unwrap()
            .lines()
            .count(),
        7
    );

    // Scoring the saved model reproduces the run's final metrics.
    let eval = otl(&[
        "eval",
        "--model",
        path(&ckpt.join("final.bin")),
        "--test",
        path(&data.join("test")),
    ])
    .stdout;
    let eval = String::from_utf8(eval).unwrap();
    let eval_final = eval.lines().last().unwrap();
    let tail = |row: &str| {
        row.split(',')
            .skip(2)
            .map(str::to_owned)
            .collect::<Vec<_>>()
    };
    assert_eq!(tail(eval_final), tail(&final_row));
}

#[test]
fn mode_override_and_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    otl(&[
        "synth",
        "--scenario",
        "single-car",
        "--out",
        path(dir.path()),
        "--frames",
        "10",
    ]);
    let out = otl(&[
        "run",
        "--config",
        path(&dir.path().join("run.toml")),
        "--mode",
        "volumetric-only",
    ])
    .stdout;
    assert!(String::from_utf8(out)
        .unwrap()
        .contains("mode: volumetric-only"));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "no_such_key = 1\n").unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_otl"))
        .args(["run", "--config", path(&bad)])
        .output()
        .unwrap()
        .status;
    assert!(!status.success());
}
