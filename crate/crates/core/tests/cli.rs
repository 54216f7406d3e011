mod common;

use std::fs;
use std::path::Path;

use common::*;
use seqft::cli::{cmd_export_curves, import_curves, RunReport};
use seqft::metrics::perf_auc;
use seqft::selector::{SelectorModelFile, N_FEATURES};
use serde_json::Value;
use sha2::{Digest, Sha256};

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr_json(out: &std::process::Output) -> Value {
    serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).expect("machine-readable error")
}

#[test]
fn verify_fixtures_passes_on_shipped_data() {
    let out = seqft(&["verify-fixtures", "--fixtures", s(&fixtures_dir())]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["rows"], 128);
    assert_eq!(report["tasks"], 55);
    assert_eq!(report["strategy_cells_matched"], 24);
    assert_eq!(report["discrepancies"].as_array().unwrap().len(), 1);
    assert_eq!(report["discrepancies"][0]["known"], true);
}

fn copy_fixtures(to: &Path) {
    for entry in fs::read_dir(fixtures_dir()).unwrap() {
        let entry = entry.unwrap();
        fs::copy(entry.path(), to.join(entry.file_name())).unwrap();
    }
}

fn reseal(dir: &Path) {
    let path = dir.join("manifest.json");
    let mut manifest: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    let files = manifest["files"].as_object_mut().unwrap();
    for (name, digest) in files.iter_mut() {
        let hex: String = Sha256::digest(fs::read(dir.join(name)).unwrap()).iter().map(|b| format!("{b:02x}")).collect();
        *digest = Value::String(hex);
    }
    fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();
}

#[test]
fn perturbed_oracle_cell_is_reported_with_row_id() {
    let dir = tempfile::tempdir().unwrap();
    copy_fixtures(dir.path());
    let table = dir.path().join("table_c1.csv");
    let text = fs::read_to_string(&table).unwrap();
    // Row 1: oracle 56.97 -> 50.00.
    fs::write(&table, text.replacen("43.31,22.52,56.97,43.31,56.97", "43.31,22.52,56.97,43.31,50.00", 1)).unwrap();

    let out = seqft(&["verify-fixtures", "--fixtures", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2), "checksum must catch the edit");
    assert_eq!(stderr_json(&out)["error"], "fixture_checksum_mismatch");

    reseal(dir.path());
    let out = seqft(&["verify-fixtures", "--fixtures", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    let violations = report["oracle"]["violations"].as_array().unwrap();
    assert_eq!(violations.len(), 1);
    assert_eq!(violations[0]["row_id"], "C.1#1");
    assert_eq!(violations[0]["kind"], "oracle");
}

#[test]
fn missing_inputs_exit_two() {
    let out = seqft(&["run", "--benchmark", "/nonexistent/bench.json", "--strategy", "naive", "--backend", "x.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "benchmark_not_found");

    let out = seqft(&["verify-fixtures", "--fixtures", "/nonexistent"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "fixtures_not_found");
}

#[test]
fn selective_without_model_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let (_, bench, backend) = write_synthetic(dir.path(), 1);
    let out = seqft(&["run", "--benchmark", s(&bench), "--strategy", "selective", "--backend", s(&backend)]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "model_required");
}

fn run_report(bench: &Path, backend: &Path, strategy: &str, out: &Path, extra: &[&str]) -> RunReport {
    let mut args = vec!["run", "--benchmark", s(bench), "--strategy", strategy, "--backend", s(backend), "--out", s(out)];
    args.extend_from_slice(extra);
    let o = seqft(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    RunReport::load(out).unwrap()
}

#[test]
fn independent_is_zero_and_oracle_is_nonnegative() {
    let dir = tempfile::tempdir().unwrap();
    let (g, bench, backend) = write_synthetic(dir.path(), 2);
    let ind = run_report(&bench, &backend, "independent", &dir.path().join("ind.json"), &[]);
    assert_eq!(ind.rows.len(), g.benchmark.triplets.len());
    assert!(ind.rows.iter().all(|r| r.relative_pct == 0.0 && r.chosen_path.is_empty()));

    let oracle = run_report(&bench, &backend, "oracle", &dir.path().join("or.json"), &[]);
    assert!(oracle.rows.iter().all(|r| r.relative_pct >= 0.0));
    assert!(oracle.summary_consistent());
}

#[test]
fn reports_are_byte_identical_across_runs_and_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (_, bench, backend) = write_synthetic(dir.path(), 3);
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    run_report(&bench, &backend, "naive", &a, &["--seed", "9", "--jobs", "1"]);
    run_report(&bench, &backend, "naive", &b, &["--seed", "9", "--jobs", "4"]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert!(RunReport::metadata_path(&a).exists());
    let c = dir.path().join("c.json");
    run_report(&bench, &backend, "naive", &c, &["--seed", "10"]);
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn export_curves_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (_, bench, backend) = write_synthetic(dir.path(), 4);
    let report = run_report(&bench, &backend, "naive", &dir.path().join("r.json"), &["--budget", "2000"]);
    let csv = dir.path().join("curves.csv");
    let o = seqft(&["export-curves", "--report", s(&dir.path().join("r.json")), "--out", s(&csv)]);
    assert_eq!(o.status.code(), Some(0));
    let total: usize = report.curves.iter().map(|c| c.points.len()).sum();
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), total + 1);

    let curves = import_curves(&csv).unwrap();
    for row in &report.rows {
        let c = &curves[&(row.triplet.clone(), "naive".to_string())];
        assert!((perf_auc(c, 2000).unwrap() - row.perf_auc).abs() <= 1e-12);
    }

    let mut empty = report.clone();
    empty.rows.clear();
    assert_eq!(cmd_export_curves(&empty, &csv).unwrap(), 0);
    assert_eq!(fs::read_to_string(&csv).unwrap(), "triplet,strategy,step,perf\n");

    let mut dangling = report;
    dangling.curves.clear();
    assert_eq!(cmd_export_curves(&dangling, &csv).unwrap_err().code, "dangling_curve_reference");
}

#[test]
fn train_selector_writes_a_loadable_model() {
    let dir = tempfile::tempdir().unwrap();
    let (_, bench, backend) = write_synthetic(dir.path(), 5);
    let model = dir.path().join("model.json");
    let o = seqft(&["train-selector", "--benchmark", s(&bench), "--backend", s(&backend), "--out", s(&model), "--rounds", "20"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let losses: Vec<f64> = String::from_utf8_lossy(&o.stdout)
        .lines()
        .map(|l| l.rsplit(' ').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(losses.len(), 21);
    assert!(losses.windows(2).all(|w| w[1] <= w[0]));

    let loaded = SelectorModelFile::load(&model).unwrap();
    assert_eq!(loaded.n_features, N_FEATURES);
    let report = run_report(&bench, &backend, "selective", &dir.path().join("sel.json"), &["--model", s(&model)]);
    assert!(report.summary_consistent());

    let text = fs::read_to_string(&model).unwrap().replacen("update_cosine_softmax", "update_cosine_other", 1);
    fs::write(&model, text).unwrap();
    let o = seqft(&["run", "--benchmark", s(&bench), "--strategy", "selective", "--backend", s(&backend), "--model", s(&model)]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"], "model_invalid");
}

#[test]
fn label_pairs_and_build_benchmark_from_records() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("records.json");
    let mut raw = Vec::new();
    for s in 0..6 {
        for t in 0..6 {
            if s != t {
                let v = [12.0, -9.0, 1.0][(s + t) % 3];
                raw.push(serde_json::json!({"source_task": format!("t{s}"), "target_task": format!("t{t}"), "trials": [v, v + 0.5]}));
            }
        }
    }
    fs::write(&records, serde_json::to_string(&raw).unwrap()).unwrap();
    let labeled = dir.path().join("labeled.json");
    let o = seqft(&["label-pairs", "--records", s(&records), "--out", s(&labeled)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let out: Vec<Value> = serde_json::from_str(&fs::read_to_string(&labeled).unwrap()).unwrap();
    assert_eq!(out[0]["label"], "negative"); // t0->t1: (0+1)%3 = 1
    assert_eq!(out[1]["label"], "neutral");

    let tasks = dir.path().join("tasks.json");
    let task_list: Vec<Value> = (0..6)
        .map(|i| serde_json::json!({"task_id": format!("t{i}"), "family": "f", "metric": seqft::metrics::MetricSpec::unit_score("accuracy")}))
        .collect();
    fs::write(&tasks, serde_json::to_string(&task_list).unwrap()).unwrap();
    let bench = dir.path().join("bench.json");
    let o = seqft(&["build-benchmark", "--records", s(&labeled), "--tasks", s(&tasks), "--per-config-targets", "1", "--pairs-per-target", "1", "--out", s(&bench)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let b = seqft::benchmark::BenchmarkFile::load(&bench).unwrap();
    assert!(!b.triplets.is_empty());
}

#[test]
fn synthetic_build_then_measured_labels_agree() {
    let dir = tempfile::tempdir().unwrap();
    let bench = dir.path().join("b.json");
    let backend = dir.path().join("be.json");
    let o = seqft(&[
        "build-benchmark", "--synthetic", "--n-tasks", "8", "--per-config-targets", "1", "--pairs-per-target", "1",
        "--budget", "2000", "--seed", "3", "--out", s(&bench), "--backend-out", s(&backend),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let b = seqft::benchmark::BenchmarkFile::load(&bench).unwrap();
    let measured = dir.path().join("m.json");
    let o = seqft(&[
        "label-pairs", "--benchmark", s(&bench), "--backend", s(&backend), "--budget", "2000", "--seed", "3",
        "--out", s(&measured),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m: Vec<seqft::benchmark::TransferRecord> = serde_json::from_str(&fs::read_to_string(&measured).unwrap()).unwrap();
    assert_eq!(m, b.records);
}
