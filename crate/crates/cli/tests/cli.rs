//! End-to-end smoke tests driving the binary through a full
//! simulate → train → predict → loocv → eval → report round trip.

use std::path::Path;
use std::process::Command;

fn npmlda() -> Command {
    Command::new(env!("CARGO_BIN_EXE_npmlda"))
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("scenario.toml");
    std::fs::write(
        &path,
        r#"
[scenario]
model = 1
n_train = 20
n_test = 20
replications = 2
master_seed = 7

[scenario.pattern]
sparsity = "dense"
size = "large"
theta = 1.1
p = 8
q = 8
noise_seed = 0

[npmle]
grid_size = 60
max_iter = 200
"#,
    )
    .unwrap();
    path
}

#[test]
fn full_pipeline_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let sim_out = dir.path().join("sim");

    let status = npmlda()
        .args(["simulate", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&sim_out)
        .args(["--jobs", "2"])
        .status()
        .unwrap();
    assert!(status.success());
    let train_data = sim_out.join("rep_000/train");
    assert!(train_data.join("manifest.json").is_file());

    let model = dir.path().join("model.json");
    let status = npmlda()
        .args(["train", "--data"])
        .arg(&train_data)
        .arg("--out")
        .arg(&model)
        .args(["--config"])
        .arg(&config)
        .status()
        .unwrap();
    assert!(status.success());

    let preds = dir.path().join("preds.csv");
    let status = npmlda()
        .args(["predict", "--model"])
        .arg(&model)
        .arg("--data")
        .arg(sim_out.join("rep_000/test"))
        .arg("--out")
        .arg(&preds)
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&preds).unwrap();
    assert!(text.starts_with("index,true_label,predicted,delta\n"));
    assert_eq!(text.lines().count(), 41); // header + 2 classes x 20

    let output = npmlda()
        .args(["loocv", "--data"])
        .arg(&train_data)
        .args(["--method", "naive", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(output.status.success());
    assert!(String::from_utf8_lossy(&output.stdout).starts_with("loocv_rate,"));

    let report_json = dir.path().join("report.json");
    let report_csv = dir.path().join("report.csv");
    let status = npmlda()
        .args(["eval", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&report_json)
        .arg("--csv")
        .arg(&report_csv)
        .status()
        .unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(&report_csv).unwrap();
    assert!(csv.starts_with("scenario,method,size,theta,mean_rate,se,reps\n"));
    assert_eq!(csv.lines().count(), 4); // header + npmlda/naive/oracle

    // regenerate the CSV from the JSON report
    let csv2_path = dir.path().join("report2.csv");
    let status = npmlda()
        .args(["report", "--in"])
        .arg(&report_json)
        .arg("--out")
        .arg(&csv2_path)
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(csv, std::fs::read_to_string(&csv2_path).unwrap());
}

#[test]
fn failure_exits_nonzero_with_error_line() {
    let output = npmlda()
        .args([
            "train",
            "--data",
            "/nonexistent/dataset",
            "--out",
            "/tmp/never.json",
        ])
        .output()
        .unwrap();
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).starts_with("error: "));
}
