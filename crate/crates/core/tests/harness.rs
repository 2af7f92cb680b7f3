use std::fs;
use std::path::Path;

use alignlab_core::harness::{self, compare, load_runs, ExperimentConfig, MetricTable};
use alignlab_core::Error;

fn config(out: &Path, body: &str) -> ExperimentConfig {
    let text = format!(
        r#"{{"seed": 3, "output_dir": {:?}, {body}}}"#,
        out.to_string_lossy()
    );
    ExperimentConfig::from_json(&text).unwrap()
}

#[test]
fn cpgd_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let (path, manifest) =
        harness::run(&config(&out, r#""kind": "cpgd", "cpgd": {"steps": 12}"#)).unwrap();
    assert_eq!(path, out);
    assert_eq!(manifest.kind, "cpgd");
    for f in [
        "metrics.csv",
        "snapshot.json",
        "summary.json",
        "manifest.json",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let table =
        MetricTable::from_csv(&fs::read_to_string(out.join("metrics.csv")).unwrap()).unwrap();
    assert_eq!(table.rows.len(), 12);
    assert_eq!(table.columns[0], "step");
    // No temporary directories left next to the output.
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn existing_output_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), r#""kind": "cpgd", "cpgd": {"steps": 2}"#);
    assert!(matches!(harness::run(&cfg), Err(Error::Config(_))));
}

#[test]
fn malformed_configs_are_rejected_before_running() {
    for bad in [
        r#"{"seed": 1, "output_dir": "x", "kind": "cpgd", "cpgd": {"steps": 0}}"#,
        r#"{"seed": 1, "output_dir": "x", "kind": "cpgd", "cpgd": {"clip_epsilon": -1}}"#,
        r#"{"seed": 1, "output_dir": "x", "kind": "nope"}"#,
        r#"{"seed": 1, "kind": "cpgd"}"#,
        r#"{"seed": 1, "output_dir": "x", "kind": "cale"}"#,
        r#"{"seed": 1, "output_dir": "x", "kind": "constrained", "training": {"lambda0": 0}}"#,
        r#"{"seed": 1, "output_dir": "x", "kind": "cpgd", "cpgd": {"unknown": 1}}"#,
        "not json",
    ] {
        assert!(ExperimentConfig::from_json(bad).is_err(), "accepted {bad}");
    }
}

#[test]
fn failed_run_leaves_nothing_behind() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("diff");
    let body = format!(
        r#""kind": "diff", "source": {:?}, "target": {:?}"#,
        dir.path().join("missing-a.txt").to_string_lossy(),
        dir.path().join("missing-b.txt").to_string_lossy()
    );
    assert!(harness::run(&config(&out, &body)).is_err());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn cale_at_zero_alpha_logs_the_same_metrics_as_plain_cpgd() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    harness::run(&config(
        &a,
        r#""kind": "cpgd", "cpgd": {"steps": 15}, "eval_samples": 50"#,
    ))
    .unwrap();
    harness::run(&config(
        &b,
        r#""kind": "cale", "alpha": 0.0, "cpgd": {"steps": 15}, "eval_samples": 50"#,
    ))
    .unwrap();
    assert_eq!(
        fs::read(a.join("metrics.csv")).unwrap(),
        fs::read(b.join("metrics.csv")).unwrap()
    );
}

#[test]
fn seed_families_compare_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let steps = r#""cpgd": {"steps": 20}, "eval_samples": 50, "replicates": 3"#;
    harness::run(&config(
        &a,
        &format!(r#""kind": "cale", "alpha": 0.05, {steps}"#),
    ))
    .unwrap();
    harness::run(&config(
        &b,
        &format!(r#""kind": "cale", "alpha": 0.0, {steps}"#),
    ))
    .unwrap();
    assert_eq!(load_runs(&a).unwrap().len(), 3);

    let cmp = compare(&a, &b, &["mean_length".to_string()]).unwrap();
    assert_eq!(cmp.seeds, 3);
    let c = &cmp.columns[0];
    assert_eq!(c.a_lower + c.a_higher + c.ties, 3);

    let same = compare(&a, &a, &[]).unwrap();
    for c in &same.columns {
        assert_eq!((c.a_lower, c.a_higher, c.ties), (0, 0, 3));
        assert_eq!(c.final_a, c.final_b);
    }
}

#[test]
fn compare_rejects_mismatched_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    harness::run(&config(
        &a,
        r#""kind": "cpgd", "cpgd": {"steps": 3}, "eval_samples": 10"#,
    ))
    .unwrap();
    harness::run(&config(
        &b,
        r#""kind": "constrained", "training": {"steps": 3}"#,
    ))
    .unwrap();
    assert!(matches!(compare(&a, &b, &[]), Err(Error::Schema(_))));
    assert!(matches!(
        compare(&a, &a, &["no_such_column".to_string()]),
        Err(Error::Schema(_))
    ));
}

#[test]
fn csv_round_trips() {
    let mut t = MetricTable::new(&["x", "y"]);
    t.push(0, &[0.1, -2.5]);
    t.push(1, &[1e-300, 3.0]);
    let back = MetricTable::from_csv(&t.to_csv()).unwrap();
    assert_eq!(back, t);
    assert!(MetricTable::from_csv("step,x\n0,1,2\n").is_err());
    assert!(MetricTable::from_csv("step,x\n0,abc\n").is_err());
}

#[test]
fn diff_and_simplify_runs_record_their_traces() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("a.txt");
    let tgt = dir.path().join("b.txt");
    fs::write(&src, "the cat sat").unwrap();
    fs::write(&tgt, "the dog sat").unwrap();
    let out = dir.path().join("diff");
    let body = format!(
        r#""kind": "diff", "source": {:?}, "target": {:?}"#,
        src.to_string_lossy(),
        tgt.to_string_lossy()
    );
    harness::run(&config(&out, &body)).unwrap();
    let table =
        MetricTable::from_csv(&fs::read_to_string(out.join("metrics.csv")).unwrap()).unwrap();
    assert_eq!(table.column("cost").unwrap(), vec![2.0]);

    let hint = dir.path().join("hint.txt");
    let reference = dir.path().join("ref.txt");
    fs::write(
        &hint,
        "Filler here. The capital of France is Paris. More filler.",
    )
    .unwrap();
    fs::write(&reference, "Paris").unwrap();
    let out = dir.path().join("simplify");
    let body = format!(
        r#""kind": "simplify", "hint": {:?}, "reference": {:?}"#,
        hint.to_string_lossy(),
        reference.to_string_lossy()
    );
    harness::run(&config(&out, &body)).unwrap();
    let summary = fs::read_to_string(out.join("summary.json")).unwrap();
    assert!(summary.contains("Paris"));
}
