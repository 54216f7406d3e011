#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use seqft::backends::{ExternalBackend, Init, ParamGroup, ParameterState, TaskSpec, TrainRequest, TrainerEndpoint};
use seqft::benchmark::{generate_synthetic_benchmark, GeneratedBenchmark, SyntheticBenchmarkSpec};
use seqft::cli::BackendConfig;
use seqft::metrics::MetricSpec;

pub const EVAL_STEPS: [u64; 5] = [0, 5, 10, 50, 100];

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn seqft(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqft")).args(args).output().expect("binary runs")
}

pub fn root_state() -> ParameterState {
    ParameterState::new(ParamGroup::ALL.iter().map(|&g| (g, vec![0.25, -1.5])).collect()).unwrap()
}

pub fn plain_task() -> TaskSpec {
    TaskSpec { task_id: "echo_task".into(), family_id: "f".into(), metric: MetricSpec::loss("loss"), synthetic: None }
}

pub fn echo_request() -> TrainRequest {
    let init = Init { lineage: vec!["prev".into()], state: Arc::new(root_state()) };
    TrainRequest::new("echo_task", init, 100, EVAL_STEPS.to_vec()).unwrap()
}

/// A worker that ignores its request and prints `response` verbatim.
pub fn echo_backend(dir: &Path, response: &str) -> ExternalBackend {
    fs::write(dir.join("response.json"), format!("{response}\n")).unwrap();
    root_state().save(&dir.join("final.state")).unwrap();
    let endpoint = TrainerEndpoint {
        command: "sh".into(),
        args: vec!["-c".into(), "cat > /dev/null; cat response.json".into()],
        working_dir: dir.to_path_buf(),
        timeout_secs: 30.0,
    };
    ExternalBackend::new(endpoint, root_state())
}

pub fn response_line(curve: &[(u64, &str)]) -> String {
    let pts: Vec<String> = curve.iter().map(|(s, v)| format!("[{s},{v}]")).collect();
    format!(
        r#"{{"curve":[{}],"probe":{{"loss0":1.0,"loss5":0.9,"metric0":0.8,"metric5":0.7}},"state_ref":"final.state"}}"#,
        pts.join(",")
    )
}

pub fn small_spec(seed: u64) -> SyntheticBenchmarkSpec {
    SyntheticBenchmarkSpec { n_tasks: 14, budget: 10_000, per_config_targets: 2, pairs_per_target: 2, seed, ..Default::default() }
}

/// Generates a synthetic benchmark and writes `bench.json` and `backend.json` into `dir`.
pub fn write_synthetic(dir: &Path, seed: u64) -> (GeneratedBenchmark, PathBuf, PathBuf) {
    let g = generate_synthetic_benchmark(&small_spec(seed)).unwrap();
    let bench = dir.join("bench.json");
    let backend = dir.join("backend.json");
    g.benchmark.save(&bench).unwrap();
    fs::write(&backend, serde_json::to_string_pretty(&BackendConfig::synthetic(&g)).unwrap()).unwrap();
    (g, bench, backend)
}
