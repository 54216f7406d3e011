mod common;

use std::collections::HashMap;
use std::io::Cursor;

use common::*;
use seqft::backends::{
    serve_worker, Backend, BackendError, ContractViolation, SyntheticBackend, SyntheticParams, TaskSpec, TransferEffectMatrix,
    WireRequest, WireResponse,
};

const VALUES: [f64; 5] = [1.0 / 3.0, 0.1 + 0.2, 0.123_456_789_012_345_68, std::f64::consts::SQRT_2 / 10.0, 5e-324];

#[test]
fn echo_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut sorted = VALUES;
    sorted.sort_by(|a, b| b.total_cmp(a));
    let text: Vec<String> = sorted.iter().map(|v| v.to_string()).collect();
    let curve: Vec<(u64, &str)> = EVAL_STEPS.iter().copied().zip(text.iter().map(String::as_str)).collect();
    let backend = echo_backend(dir.path(), &response_line(&curve));
    let result = backend.train(&plain_task(), &echo_request(), 7).unwrap();
    for (&(step, got), (&want_step, &want)) in result.curve.points().iter().zip(EVAL_STEPS.iter().zip(&sorted)) {
        assert_eq!(step, want_step);
        assert_eq!(got.to_bits(), want.to_bits());
    }
    assert_eq!(result.final_state, root_state());
    assert_eq!(result.probe.metric5, 0.7);
}

fn violation(curve: &[(u64, &str)]) -> ContractViolation {
    let dir = tempfile::tempdir().unwrap();
    let backend = echo_backend(dir.path(), &response_line(curve));
    match backend.train(&plain_task(), &echo_request(), 0) {
        Err(BackendError::Validation(v)) => v,
        other => panic!("expected a validation error, got {other:?}"),
    }
}

#[test]
fn missing_step_zero() {
    let v = violation(&[(5, "0.9"), (10, "0.8"), (50, "0.5"), (100, "0.4")]);
    assert_eq!(v, ContractViolation::MissingStepZero);
}

#[test]
fn non_monotone_steps() {
    let v = violation(&[(0, "1.0"), (10, "0.9"), (5, "0.8"), (50, "0.5"), (100, "0.4")]);
    assert_eq!(v, ContractViolation::NonMonotoneSteps { index: 2 });
}

#[test]
fn nan_value_bare_and_quoted() {
    for nan in ["NaN", "\"NaN\""] {
        let v = violation(&[(0, "1.0"), (5, "0.9"), (10, nan), (50, "0.5"), (100, "0.4")]);
        assert_eq!(v, ContractViolation::NonFiniteValue { step: 10 });
    }
}

#[test]
fn steps_must_match_request() {
    let v = violation(&[(0, "1.0"), (5, "0.9"), (100, "0.4")]);
    assert!(matches!(v, ContractViolation::StepMismatch { .. }));
}

#[test]
fn worker_that_says_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let mut backend = echo_backend(dir.path(), "");
    backend.endpoint.args = vec!["-c".into(), "cat > /dev/null".into()];
    assert!(matches!(backend.train(&plain_task(), &echo_request(), 0), Err(BackendError::NoResponse(_))));
}

#[test]
fn slow_worker_times_out() {
    let dir = tempfile::tempdir().unwrap();
    let mut backend = echo_backend(dir.path(), "");
    backend.endpoint.args = vec!["-c".into(), "sleep 5".into()];
    backend.endpoint.timeout_secs = 0.2;
    assert!(matches!(backend.train(&plain_task(), &echo_request(), 0), Err(BackendError::Timeout(_))));
}

#[test]
fn in_process_worker_matches_direct_training() {
    let dir = tempfile::tempdir().unwrap();
    let mut task: TaskSpec = plain_task();
    task.synthetic = Some(SyntheticParams { zero_shot_loss: 1.0, asymptote: 0.1, time_constant: 30.0, optimum: root_state() });
    let backend = SyntheticBackend::new(TransferEffectMatrix::default(), root_state());
    let request = echo_request();
    let direct = backend.train(&task, &request, 11).unwrap();

    root_state().save(&dir.path().join("init.state")).unwrap();
    let wire = serde_json::json!({
        "task_id": "echo_task", "budget": 100, "eval_steps": EVAL_STEPS,
        "init": {"lineage": ["prev"], "state_ref": "init.state"}, "seed": 11
    });
    let _: WireRequest = serde_json::from_value(wire.clone()).unwrap();
    let tasks: HashMap<String, TaskSpec> = [(task.task_id.clone(), task)].into();
    let mut out = Vec::new();
    let served = serve_worker(&backend, &tasks, Cursor::new(format!("{wire}\n\n")), &mut out, dir.path()).unwrap();
    assert_eq!(served, 1);
    let resp = WireResponse::parse(std::str::from_utf8(&out).unwrap().lines().next().unwrap()).unwrap();
    let got: Vec<(u64, u64)> = resp.curve.iter().map(|&(s, v)| (s, v.0.to_bits())).collect();
    let want: Vec<(u64, u64)> = direct.curve.points().iter().map(|&(s, v)| (s, v.to_bits())).collect();
    assert_eq!(got, want);
}
