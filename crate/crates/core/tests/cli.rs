use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ennsurv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ennsurv")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn last_status_line(out: &Output) -> serde_json::Value {
    let err = String::from_utf8_lossy(&out.stderr);
    let line = err.lines().last().expect("status line");
    serde_json::from_str(line).expect("json status")
}

#[test]
fn simulate_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let model = dir.path().join("m.json");
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "epochs = 15\nk = 5\nlr = 0.05\n").unwrap();

    let out = ennsurv(&["simulate", "--kind", "lph", "--n", "200", "--seed", "3", "--out", p(&data)]);
    assert!(out.status.success());
    assert_eq!(last_status_line(&out)["status"], "ok");
    let header = fs::read_to_string(&data).unwrap();
    let header = header.lines().next().unwrap();
    assert!(header.contains("duration") && header.contains("event"));

    let out = ennsurv(&["train", "--data", p(&data), "--config", p(&cfg), "--model-out", p(&model)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let history = fs::read_to_string(dir.path().join("m.json.history.csv")).unwrap();
    assert!(history.starts_with("epoch,train_cost,val_cost,lr"));
    assert!(history.lines().count() >= 2);

    let eval_dir = dir.path().join("eval");
    let out = ennsurv(&[
        "eval", "--model", p(&model), "--data", p(&data), "--out-dir", p(&eval_dir), "--heatmap", "f0",
        "--heatmap-grid", "5",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["metrics.csv", "calibration.csv", "survival.csv", "heatmap.csv"] {
        assert!(eval_dir.join(f).is_file(), "missing {f}");
    }
    let heat = fs::read_to_string(eval_dir.join("heatmap.csv")).unwrap();
    assert_eq!(heat.lines().count(), 1 + 25);
    for line in heat.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
        assert!(0.0 <= v[2] && v[2] <= v[3] && v[3] <= 1.0, "{line}");
    }
}

#[test]
fn input_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let out = ennsurv(&["train", "--data", p(&missing), "--model-out", p(&dir.path().join("m.json"))]);
    assert_eq!(out.status.code(), Some(2));
    let status = last_status_line(&out);
    assert_eq!(status["status"], "error");
    assert_eq!(status["code"], 2);

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "x0,time,event\n1.0,2.0,1\n").unwrap();
    let out = ennsurv(&["train", "--data", p(&bad), "--model-out", p(&dir.path().join("m.json"))]);
    assert_eq!(out.status.code(), Some(2));

    let neg = dir.path().join("neg.csv");
    fs::write(&neg, "x0,duration,event\n1.0,-2.0,1\n").unwrap();
    let out = ennsurv(&["train", "--data", p(&neg), "--model-out", p(&dir.path().join("m.json"))]);
    assert_eq!(out.status.code(), Some(2));

    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "epochz = 3\n").unwrap();
    let data = dir.path().join("d.csv");
    assert!(ennsurv(&["simulate", "--kind", "illustrative", "--n", "50", "--out", p(&data)]).status.success());
    let out = ennsurv(&["train", "--data", p(&data), "--config", p(&cfg), "--model-out", p(&dir.path().join("m.json"))]);
    assert_eq!(out.status.code(), Some(2));

    let out = ennsurv(&["simulate", "--kind", "illustrative", "--n", "10", "--censor", "1.5", "--out", p(&data)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn corrupted_model_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let model = dir.path().join("m.json");
    assert!(ennsurv(&["simulate", "--kind", "illustrative", "--n", "50", "--out", p(&data)]).status.success());
    fs::write(&model, "{\"format\": \"something-else\"}").unwrap();
    let out = ennsurv(&["eval", "--model", p(&model), "--data", p(&data), "--out-dir", p(&dir.path().join("e"))]);
    assert_eq!(out.status.code(), Some(2));
}
