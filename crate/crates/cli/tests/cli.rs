use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mflqj"))
}

fn example() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/ex51.json")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn solve_reports_the_closed_form_value() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["solve", example().to_str().unwrap(), "--grid", "400", "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let line = text.lines().find(|l| l.starts_with("optimal value:")).unwrap();
    let value: f64 = line.trim_start_matches("optimal value:").trim().parse().unwrap();
    assert!((value - 1.0 / 6.0).abs() <= 1e-8, "{value}");
    for f in ["riccati.csv", "gains.csv", "adjoint.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn missing_field_is_named_and_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut json: serde_json::Value = serde_json::from_str(&fs::read_to_string(example()).unwrap()).unwrap();
    json["weights"].as_object_mut().unwrap().remove("G");
    let path = dir.path().join("broken.json");
    fs::write(&path, json.to_string()).unwrap();
    let o = run(&["solve", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("weights.G"), "{}", stderr(&o));
}

#[test]
fn unknown_example_exits_with_one() {
    let o = run(&["verify-example", "5.9"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("5.9"));
}

fn verify_status(grid: &str, dir: &Path) -> (Option<i32>, bool) {
    let o = run(&[
        "verify-example",
        "5.1",
        "--grid",
        grid,
        "--paths",
        "4000",
        "--directions",
        "0",
        "--out",
        dir.to_str().unwrap(),
    ]);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    (o.status.code(), summary["pass"].as_bool().unwrap())
}

#[test]
fn verify_exit_code_follows_the_report() {
    for grid in ["200", "20"] {
        let dir = tempfile::tempdir().unwrap();
        let (code, pass) = verify_status(grid, dir.path());
        assert_eq!(code == Some(0), pass, "grid {grid}");
        if !pass {
            assert_eq!(code, Some(2));
        }
    }
}

#[test]
fn check_s_flags_the_indefinite_control_weight() {
    let o = run(&["check-s", example().to_str().unwrap(), "--grid", "20"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("\"pass\": false"), "{text}");
}

#[test]
fn canonical_shift_recovers_the_value() {
    let o = run(&["shift", example().to_str().unwrap(), "--shift", "canonical", "--grid", "4000"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("satisfy the assumption: true"), "{text}");
    let line = text.lines().find(|l| l.starts_with("optimal value:")).unwrap();
    let value: f64 = line.trim_start_matches("optimal value:").trim().parse().unwrap();
    assert!((value - 1.0 / 6.0).abs() <= 1e-8);
}

#[test]
fn simulate_is_deterministic() {
    let file = example();
    let args = ["simulate", file.to_str().unwrap(), "--grid", "100", "--paths", "2000", "--seed", "3"];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn sweep_writes_csv_and_chart() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "sweep",
        "5.4",
        "--param",
        "r",
        "--values",
        "0.02,0.05",
        "--grid",
        "100",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("sweep_r.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "t,r=0.02,r=0.05");
    assert_eq!(csv.lines().count(), 102);
    assert!(dir.path().join("sweep_r.svg").exists());
}
