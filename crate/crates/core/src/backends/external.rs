//! Newline-delimited JSON worker protocol.
//!
//! One request line goes to the worker's stdin, one response line comes back
//! on stdout. Parameter states travel by file reference in the binary layout
//! of [`ParameterState::save`]. Relative `state_ref` paths resolve against the
//! endpoint's working directory.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::Duration;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{
    check_curve_points, Backend, BackendError, Init, ParameterState, Probe, TaskSpec, TrainRequest, TrainResult,
};
use crate::metrics::LearningCurve;

/// Curve value on the wire. Accepts JSON numbers and the strings
/// `"NaN"`, `"Infinity"`, `"-Infinity"` so non-finite values reach validation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WireFloat(pub f64);

impl Serialize for WireFloat {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else if self.0.is_nan() {
            s.serialize_str("NaN")
        } else if self.0 > 0.0 {
            s.serialize_str("Infinity")
        } else {
            s.serialize_str("-Infinity")
        }
    }
}

impl<'de> Deserialize<'de> for WireFloat {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = WireFloat;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number or one of \"NaN\", \"Infinity\", \"-Infinity\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<WireFloat, E> {
                Ok(WireFloat(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<WireFloat, E> {
                Ok(WireFloat(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<WireFloat, E> {
                Ok(WireFloat(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<WireFloat, E> {
                match v {
                    "NaN" => Ok(WireFloat(f64::NAN)),
                    "Infinity" => Ok(WireFloat(f64::INFINITY)),
                    "-Infinity" => Ok(WireFloat(f64::NEG_INFINITY)),
                    other => Err(E::invalid_value(de::Unexpected::Str(other), &self)),
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireInit {
    pub lineage: Vec<String>,
    pub state_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub task_id: String,
    pub budget: u64,
    pub eval_steps: Vec<u64>,
    pub init: WireInit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireProbe {
    pub loss0: WireFloat,
    pub loss5: WireFloat,
    pub metric0: WireFloat,
    pub metric5: WireFloat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub curve: Vec<(u64, WireFloat)>,
    pub probe: WireProbe,
    pub state_ref: String,
}

#[derive(Serialize, Deserialize)]
struct WireError {
    error: String,
}

impl WireResponse {
    /// Parses one response line. Bare `NaN`/`Infinity` tokens (as emitted by
    /// some JSON encoders) are quoted before decoding.
    pub fn parse(line: &str) -> Result<Self, BackendError> {
        let line = line.trim_end();
        match serde_json::from_str::<WireResponse>(line) {
            Ok(r) => Ok(r),
            Err(first) => {
                if let Ok(e) = serde_json::from_str::<WireError>(line) {
                    return Err(BackendError::Malformed(format!("worker error: {}", e.error)));
                }
                let quoted = quote_bare_non_finite(line);
                if quoted != line {
                    if let Ok(r) = serde_json::from_str(&quoted) {
                        return Ok(r);
                    }
                }
                Err(BackendError::Malformed(first.to_string()))
            }
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("wire response serializes")
    }
}

fn quote_bare_non_finite(line: &str) -> String {
    let mut out = String::with_capacity(line.len() + 8);
    let mut in_string = false;
    let mut escaped = false;
    let mut rest = line;
    while let Some(c) = rest.chars().next() {
        if in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
        } else if c == '"' {
            in_string = true;
        } else {
            let token = ["-Infinity", "Infinity", "NaN"].into_iter().find(|t| rest.starts_with(t));
            if let Some(t) = token {
                out.push('"');
                out.push_str(t);
                out.push('"');
                rest = &rest[t.len()..];
                continue;
            }
        }
        out.push(c);
        rest = &rest[c.len_utf8()..];
    }
    out
}

/// A launchable worker process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerEndpoint {
    pub command: String,
    #[serde(default)]
    pub args: Vec<String>,
    pub working_dir: PathBuf,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
}

fn default_timeout_secs() -> f64 {
    600.0
}

impl TrainerEndpoint {
    fn resolve(&self, state_ref: &str) -> PathBuf {
        let p = Path::new(state_ref);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.working_dir.join(p)
        }
    }
}

/// Backend that forwards every request to a fresh worker process.
#[derive(Debug)]
pub struct ExternalBackend {
    pub endpoint: TrainerEndpoint,
    root: ParameterState,
    counter: AtomicU64,
}

impl ExternalBackend {
    pub fn new(endpoint: TrainerEndpoint, root: ParameterState) -> Self {
        Self { endpoint, root, counter: AtomicU64::new(0) }
    }

    /// Sends one request line and returns the raw response line.
    pub fn exchange(&self, request: &WireRequest) -> Result<String, BackendError> {
        let mut child = Command::new(&self.endpoint.command)
            .args(&self.endpoint.args)
            .current_dir(&self.endpoint.working_dir)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| BackendError::Launch { command: self.endpoint.command.clone(), source })?;

        let mut stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut line = serde_json::to_string(request)?;
        line.push('\n');
        // A worker that exits without reading stdin is reported through the response path.
        let _ = stdin.write_all(line.as_bytes());
        drop(stdin);

        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            let mut buf = String::new();
            let res = reader.read_line(&mut buf).map(|_| buf);
            let _ = tx.send(res);
        });
        let timeout = Duration::from_secs_f64(self.endpoint.timeout_secs);
        let response = match rx.recv_timeout(timeout) {
            Ok(res) => res?,
            Err(_) => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(BackendError::Timeout(timeout));
            }
        };
        let status = child.wait()?;
        if response.trim().is_empty() {
            return Err(BackendError::NoResponse(status.to_string()));
        }
        Ok(response)
    }
}

impl Backend for ExternalBackend {
    fn root_state(&self) -> &ParameterState {
        &self.root
    }

    fn train(&self, task: &TaskSpec, request: &TrainRequest, seed: u64) -> Result<TrainResult, BackendError> {
        request.validate()?;
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        let init_name = format!("init-{}-{}-{n}.state", std::process::id(), sanitize(&task.task_id));
        request.init.state.save(&self.endpoint.working_dir.join(&init_name))?;
        let wire = WireRequest {
            task_id: request.task_id.clone(),
            budget: request.budget,
            eval_steps: request.eval_steps.clone(),
            init: WireInit { lineage: request.init.lineage.clone(), state_ref: init_name },
            seed: Some(seed),
        };
        let line = self.exchange(&wire)?;
        let response = WireResponse::parse(&line)?;
        decode_response(&response, task, request, |r| self.endpoint.resolve(r))
    }
}

fn sanitize(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' }).collect()
}

/// Validates a decoded response against its request and loads the returned state.
pub(crate) fn decode_response(
    response: &WireResponse,
    task: &TaskSpec,
    request: &TrainRequest,
    resolve: impl Fn(&str) -> PathBuf,
) -> Result<TrainResult, BackendError> {
    let points: Vec<(u64, f64)> = response.curve.iter().map(|&(s, v)| (s, v.0)).collect();
    check_curve_points(&points, task.metric.lower_bound)?;
    let curve = LearningCurve::new(points, task.metric.metric_id.clone(), task.metric.lower_bound)?;
    let p = &response.probe;
    let probe = Probe { loss0: p.loss0.0, loss5: p.loss5.0, metric0: p.metric0.0, metric5: p.metric5.0 };
    let final_state = ParameterState::load(&resolve(&response.state_ref))?;
    let result = TrainResult { curve, final_state, probe };
    result.validate(request)?;
    Ok(result)
}

/// Worker loop: answers every request line on `input` using `backend`.
/// Returned states are written under `working_dir`.
pub fn serve_worker<R: BufRead, W: Write>(
    backend: &dyn Backend,
    tasks: &HashMap<String, TaskSpec>,
    input: R,
    mut output: W,
    working_dir: &Path,
) -> Result<usize, BackendError> {
    let mut served = 0;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match answer(backend, tasks, &line, working_dir, served) {
            Ok(resp) => resp.to_line(),
            Err(e) => serde_json::to_string(&WireError { error: e.to_string() })?,
        };
        writeln!(output, "{reply}")?;
        output.flush()?;
        served += 1;
    }
    Ok(served)
}

fn answer(
    backend: &dyn Backend,
    tasks: &HashMap<String, TaskSpec>,
    line: &str,
    working_dir: &Path,
    n: usize,
) -> Result<WireResponse, BackendError> {
    let req: WireRequest = serde_json::from_str(line)?;
    let task = tasks
        .get(&req.task_id)
        .ok_or_else(|| BackendError::InvalidRequest(format!("unknown task {}", req.task_id)))?;
    let state_path = {
        let p = Path::new(&req.init.state_ref);
        if p.is_absolute() { p.to_path_buf() } else { working_dir.join(p) }
    };
    let state = ParameterState::load(&state_path)?;
    let request = TrainRequest::new(
        req.task_id.clone(),
        Init { lineage: req.init.lineage.clone(), state: Arc::new(state) },
        req.budget,
        req.eval_steps.clone(),
    )?;
    let result = backend.train(task, &request, req.seed.unwrap_or(0))?;
    let out_name = format!("out-{}-{}-{n}.state", std::process::id(), sanitize(&req.task_id));
    result.final_state.save(&working_dir.join(&out_name))?;
    Ok(WireResponse {
        curve: result.curve.points().iter().map(|&(s, v)| (s, WireFloat(v))).collect(),
        probe: WireProbe {
            loss0: WireFloat(result.probe.loss0),
            loss5: WireFloat(result.probe.loss5),
            metric0: WireFloat(result.probe.metric0),
            metric5: WireFloat(result.probe.metric5),
        },
        state_ref: out_name,
    })
}
