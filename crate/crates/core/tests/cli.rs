use std::path::Path;
use std::process::{Command, Output};

fn stcos(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stcos"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn config(extra_model: &str) -> String {
    format!(
        r#"{{
  "schema_version": 1,
  "model": {{
    "mc_points": 100,
    "basis": {{"temporal": {{"kind": "equispaced", "count": 3}}{extra_model}}},
    "chain": {{"iterations": 300, "burn_in": 100, "thin": 1}}
  }},
  "data": {{
    "fine": "data/fine.geojson",
    "supports": "data/supports.geojson",
    "estimates": "data/estimates.csv"
  }},
  "predict": {{"targets": "data/fine.geojson", "periods": [{{"year": 2015, "period": 2}}]}}
}}"#
    )
}

#[test]
fn fit_then_predict_and_reject_changed_config() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("c.json"), config("")).unwrap();
    for (cmd, out) in [("simulate", "data"), ("fit", "fit"), ("predict", "fit")] {
        let o = stcos(d, &[cmd, "--config", "c.json", "--out", out]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let preds = std::fs::read_to_string(d.join("fit/predictions.csv")).unwrap();
    assert_eq!(preds.lines().count(), 26);
    assert!(String::from_utf8_lossy(&stcos(d, &["predict", "--config", "c.json", "--out", "fit"]).stderr)
        .contains("ratio diagnostics skipped"));
    for f in ["draws.csv", "k0.bin", "k0.json", "sigma0.bin", "manifest.json", "fitted.json", "chain.json"] {
        assert!(d.join("fit").join(f).exists(), "{f} missing");
    }

    std::fs::write(d.join("c2.json"), config(r#", "w_t": 2.0"#)).unwrap();
    let o = stcos(d, &["predict", "--config", "c2.json", "--out", "fit"]);
    assert_eq!(o.status.code(), Some(3));
    let o = stcos(d, &["predict", "--config", "c.json", "--seed", "99", "--out", "fit"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn input_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("c.json"), config("")).unwrap();
    let o = stcos(d, &["fit", "--config", "c.json", "--out", "fit"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("fine.geojson"));

    std::fs::write(d.join("zero.json"), r#"{"schema_version": 1, "simulate": {"config": {"survey_sd": 0.0}}}"#).unwrap();
    let o = stcos(d, &["simulate", "--config", "zero.json", "--out", "data"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!d.join("data/estimates.csv").exists());

    std::fs::write(d.join("typo.json"), r#"{"schema_version": 1, "modle": {}}"#).unwrap();
    assert_eq!(stcos(d, &["fit", "--config", "typo.json"]).status.code(), Some(2));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(stcos(dir.path(), &["explode"]).status.code(), Some(1));
    assert_eq!(stcos(dir.path(), &["fit", "--threads", "x"]).status.code(), Some(1));
    assert_eq!(stcos(dir.path(), &["--help"]).status.code(), Some(0));
}
