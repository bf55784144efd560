use mflqj::builtin::{ExampleId, MarketParams};
use mflqj::io::read_table;
use mflqj::verify::{emit_report, emit_sweep, market_sweep, run_example, RunConfig};

fn config() -> RunConfig {
    RunConfig {
        paths: 20_000,
        directions: 0,
        ..RunConfig::default()
    }
}

#[test]
fn examples_without_closed_form_pass_at_default_resolution() {
    for id in [ExampleId::ShiftedScalar, ExampleId::Fbsde, ExampleId::AssetLiability] {
        let rep = run_example(id, &config()).unwrap();
        assert!(rep.pass, "{}", rep.summary());
        assert!(!rep.checks.is_empty());
    }
}

#[test]
fn closed_form_run_passes_on_a_coarse_grid() {
    let cfg = RunConfig {
        steps: 200,
        paths: 4000,
        directions: 2,
        ..RunConfig::default()
    };
    let rep = run_example(ExampleId::ClosedForm, &cfg).unwrap();
    assert!(rep.pass, "{}", rep.summary());
}

#[test]
fn report_files_are_written_and_readable() {
    let dir = tempfile::tempdir().unwrap();
    let rep = run_example(ExampleId::Fbsde, &config()).unwrap();
    let written = emit_report(&rep, dir.path()).unwrap();
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["pass"], serde_json::Value::Bool(rep.pass));
    assert_eq!(summary["checks"].as_array().unwrap().len(), rep.checks.len());
    for p in written.iter().filter(|p| p.extension().is_some_and(|e| e == "csv")) {
        let t = read_table(p).unwrap();
        assert!(!t.rows.is_empty(), "{}", p.display());
    }
}

#[test]
fn sweep_writes_one_column_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = market_sweep(&MarketParams::default(), "r", &[0.02, 0.05, 0.08], 200, 1).unwrap();
    let written = emit_sweep(&sweep, dir.path(), "sweep_r").unwrap();
    let csv = written.iter().find(|p| p.extension().is_some_and(|e| e == "csv")).unwrap();
    let t = read_table(csv).unwrap();
    assert_eq!(t.headers.len(), 4);
    assert_eq!(t.rows.len(), 201);
}
