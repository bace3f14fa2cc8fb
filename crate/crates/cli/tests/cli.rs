use std::path::Path;
use std::process::{Command, Output};

use coopfuse::error_models::ModelSet;
use coopfuse::simulator::ScenarioConfig;

fn coopfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coopfuse"))
        .args(args)
        .output()
        .unwrap()
}

fn short_config(dir: &Path, model_file: Option<&str>) -> String {
    let mut c = ScenarioConfig::table_ii("sm/sp/CIS", 5).unwrap();
    c.duration = 10.0;
    c.model_file = model_file.map(String::from);
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&c).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn simulate_replay_and_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let config = short_config(dir.path(), None);
    for mode in ["parameterized", "fixed"] {
        let o = coopfuse(&["simulate", "--config", &config, "--mode", mode, "--out", out]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let log = dir.path().join("sm_sp_CIS-s5-fixed.ndjson");
    let replayed = dir.path().join("replayed.json");
    let o = coopfuse(&[
        "replay",
        "--log",
        log.to_str().unwrap(),
        "--mode",
        "fixed",
        "--out",
        replayed.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let written = std::fs::read_to_string(dir.path().join("sm_sp_CIS-s5-fixed.report.json")).unwrap();
    assert_eq!(std::fs::read_to_string(&replayed).unwrap(), written);

    let o = coopfuse(&["report", "--runs", out]);
    assert!(o.status.success());
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let lines: Vec<_> = summary.lines().collect();
    assert!(lines[0].starts_with("scenario,mode,runs,rmse"));
    assert_eq!(lines.len(), 3);
    assert!(lines.iter().any(|l| l.starts_with("sm/sp/CIS,fixed,1,")));
    // The parameterized row carries its ratio to the fixed row.
    let param = lines.iter().find(|l| l.starts_with("sm/sp/CIS,parameterized")).unwrap();
    assert!(!param.ends_with(','));
    let residuals = std::fs::read_to_string(dir.path().join("residuals_sm_sp_CIS.csv")).unwrap();
    assert!(residuals.lines().count() > 1);
}

#[test]
fn samples_fit_and_model_file_feed_each_other() {
    let dir = tempfile::tempdir().unwrap();
    let samples = dir.path().join("samples.csv");
    let models = dir.path().join("models.json");
    let o = coopfuse(&[
        "samples",
        "--n",
        "4000",
        "--seed",
        "3",
        "--out",
        samples.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let o = coopfuse(&[
        "fit",
        "--samples",
        samples.to_str().unwrap(),
        "--degree",
        "1",
        "--out",
        models.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let fitted: ModelSet = serde_json::from_str(&std::fs::read_to_string(&models).unwrap()).unwrap();
    let truth = ModelSet::table_iv_parameterized();
    let (f, t) = (
        fitted.camera_distal.eval(4.5).unwrap(),
        truth.camera_distal.eval(4.5).unwrap(),
    );
    assert!((f - t).abs() / t < 0.05, "fitted {f} vs {t}");

    // A config naming the fitted file, relative to itself, runs.
    let config = short_config(dir.path(), Some("models.json"));
    let out = dir.path().join("runs");
    let o = coopfuse(&["simulate", "--config", &config, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn bad_inputs_exit_with_status_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{not json").unwrap();
    let o = coopfuse(&["simulate", "--config", bad.to_str().unwrap(), "--out", out]);
    assert_eq!(o.status.code(), Some(2));

    let o = coopfuse(&["simulate", "--scenario", "xl/sp", "--out", out]);
    assert_eq!(o.status.code(), Some(2));

    let missing = short_config(dir.path(), Some("absent.json"));
    let o = coopfuse(&["simulate", "--config", &missing, "--out", out]);
    assert_eq!(o.status.code(), Some(2));

    let mut c = ScenarioConfig::table_ii("sm/sp", 1).unwrap();
    c.cav_count = 0;
    c.duration = -1.0;
    std::fs::write(&bad, serde_json::to_string(&c).unwrap()).unwrap();
    let o = coopfuse(&["simulate", "--config", bad.to_str().unwrap(), "--out", out]);
    assert_eq!(o.status.code(), Some(2));

    let csv = dir.path().join("s.csv");
    std::fs::write(&csv, "predictor,error,component,source\nabc,0.1,camera_distal,x\n").unwrap();
    let o = coopfuse(&["fit", "--samples", csv.to_str().unwrap(), "--out", out]);
    assert_eq!(o.status.code(), Some(2));

    let o = coopfuse(&["report", "--runs", out]);
    assert_eq!(o.status.code(), Some(2));
}
