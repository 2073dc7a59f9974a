use std::path::Path;
use std::process::{Command, Output};

fn cloudheat(data_dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cloudheat"))
        .arg("--data-dir")
        .arg(data_dir)
        .args(args)
        .env_remove("CHM_DATA_DIR")
        .env_remove("CHM_INTERVAL_MS")
        .env_remove("CHM_INSTANCE_TAG")
        .output()
        .expect("run cloudheat")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "exit {:?}: {}", o.status, String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn replay_of_empty_file_exits_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let spans = dir.path().join("empty.ndjson");
    std::fs::write(&spans, "").unwrap();
    let out = stdout(&cloudheat(&data, &["replay", spans.to_str().unwrap()]));
    let report: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(report["sealed"], 0);
    assert_eq!(report["totals"]["accepted"], 0);
    assert_eq!(std::fs::read_dir(&data).unwrap().count(), 0);
}

#[test]
fn generate_replay_matrix_shows_rate_limit_share() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let spans = dir.path().join("spans.ndjson");
    let gen = ["generate", "--scenario", "rate-limit", "--hours", "1", "--seed", "2024", "--out"];
    let mut args: Vec<&str> = gen.to_vec();
    args.push(spans.to_str().unwrap());
    stdout(&cloudheat(&data, &args));
    assert_eq!(std::fs::read_to_string(&spans).unwrap().lines().count(), 60);

    let report = stdout(&cloudheat(&data, &["replay", spans.to_str().unwrap()]));
    let report: serde_json::Value = serde_json::from_str(report.trim()).unwrap();
    assert_eq!(report["sealed"], 60);

    let csv = stdout(&cloudheat(&data, &["matrix", "--codes", "429", "--mode", "percent"]));
    let mut rows = csv.lines();
    let header: Vec<&str> = rows.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "svc-ratelimited").expect("target column");
    let mut dcs = 0;
    for row in rows {
        let cells: Vec<&str> = row.split(',').collect();
        let v: f64 = cells[col].parse().unwrap();
        assert!((v - 40.0).abs() <= 0.5, "{}: {v}", cells[0]);
        dcs += 1;
    }
    assert_eq!(dcs, 3);
}

#[test]
fn generate_to_stdout_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["generate", "--scenario", "demo", "--hours", "0.1", "--seed", "9"];
    let a = stdout(&cloudheat(dir.path(), &args));
    let b = stdout(&cloudheat(dir.path(), &args));
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 6);
}

#[test]
fn failures_exit_non_zero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let missing = cloudheat(dir.path(), &["replay", "/nonexistent/spans.ndjson"]);
    assert!(!missing.status.success());
    assert!(!missing.stderr.is_empty());

    let bad_query = cloudheat(dir.path(), &["matrix", "--mode", "percent"]);
    assert!(!bad_query.status.success());
    assert!(String::from_utf8_lossy(&bad_query.stderr).contains("codes"));

    let bad_scenario = cloudheat(dir.path(), &["generate", "--scenario", "nope"]);
    assert!(!bad_scenario.status.success());
}
