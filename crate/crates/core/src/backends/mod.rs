//! Training backends.
//!
//! A backend answers one question: starting from a given parameter state and
//! task lineage, what does the learning curve on a task look like over `budget`
//! updates, and which state is kept at the end. [`SyntheticBackend`] answers it
//! with a closed-form learner driven by a transfer-effect matrix;
//! [`ExternalBackend`] forwards requests to a worker process.

mod external;
mod state;
mod synthetic;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{LearningCurve, MetricSpec, MetricsError};

pub use external::{serve_worker, ExternalBackend, TrainerEndpoint, WireFloat, WireInit, WireProbe, WireRequest, WireResponse};
pub use state::{ParamGroup, ParameterState};
pub use synthetic::{SyntheticBackend, TransferEffect, TransferEffectMatrix};

/// Steps at which the selector probes a run ("0-shot" and "5-shot").
pub const PROBE_STEPS: [u64; 2] = [0, 5];

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("task {0} has no synthetic parameters")]
    MissingSyntheticParams(String),
    #[error("invalid synthetic parameters for task {task}: {reason}")]
    InvalidSyntheticParams { task: String, reason: String },
    #[error("invalid train request: {0}")]
    InvalidRequest(String),
    #[error("invalid parameter state: {0}")]
    InvalidState(String),
    #[error("failed to launch worker `{command}`: {source}")]
    Launch { command: String, source: std::io::Error },
    #[error("worker timed out after {0:?}")]
    Timeout(std::time::Duration),
    #[error("worker exited without a response (status {0})")]
    NoResponse(String),
    #[error("malformed worker response: {0}")]
    Malformed(String),
    #[error("train result violates its contract: {0}")]
    Validation(#[from] ContractViolation),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Ways a returned [`TrainResult`] can break the request's contract.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContractViolation {
    #[error("curve has no step-0 evaluation")]
    MissingStepZero,
    #[error("curve steps are not strictly increasing at index {index}")]
    NonMonotoneSteps { index: usize },
    #[error("non-finite curve value at step {step}")]
    NonFiniteValue { step: u64 },
    #[error("curve steps {got:?} do not match requested eval steps {expected:?}")]
    StepMismatch { expected: Vec<u64>, got: Vec<u64> },
    #[error("curve value {value} at step {step} is below the metric lower bound")]
    BelowLowerBound { step: u64, value: f64 },
    #[error("non-finite probe value")]
    NonFiniteProbe,
    #[error("final state layout differs from the initial state")]
    StateLayout,
}

/// Closed-form learner parameters for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    /// Loss before any update from the root model.
    pub zero_shot_loss: f64,
    /// Loss approached as updates go to infinity.
    pub asymptote: f64,
    pub time_constant: f64,
    pub optimum: ParameterState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub family_id: String,
    pub metric: MetricSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticParams>,
}

/// Starting point for a run: the state to load plus the tasks it was trained through.
#[derive(Debug, Clone, PartialEq)]
pub struct Init {
    pub lineage: Vec<String>,
    pub state: Arc<ParameterState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRequest {
    pub task_id: String,
    pub init: Init,
    pub budget: u64,
    pub eval_steps: Vec<u64>,
}

impl TrainRequest {
    pub fn new(task_id: impl Into<String>, init: Init, budget: u64, eval_steps: Vec<u64>) -> Result<Self, BackendError> {
        let req = Self { task_id: task_id.into(), init, budget, eval_steps };
        req.validate()?;
        Ok(req)
    }

    /// A short run evaluated only at the probe steps.
    pub fn probe(task_id: impl Into<String>, init: Init) -> Self {
        Self { task_id: task_id.into(), init, budget: PROBE_STEPS[1], eval_steps: PROBE_STEPS.to_vec() }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.budget < PROBE_STEPS[1] {
            return Err(BackendError::InvalidRequest(format!("budget {} is below the 5-step probe", self.budget)));
        }
        if !self.eval_steps.windows(2).all(|w| w[0] < w[1]) {
            return Err(BackendError::InvalidRequest("eval steps must be strictly increasing".into()));
        }
        for probe in PROBE_STEPS {
            if self.eval_steps.binary_search(&probe).is_err() {
                return Err(BackendError::InvalidRequest(format!("eval steps must include step {probe}")));
            }
        }
        if let Some(&last) = self.eval_steps.last() {
            if last > self.budget {
                return Err(BackendError::InvalidRequest(format!(
                    "eval step {last} is outside budget {}",
                    self.budget
                )));
            }
        }
        Ok(())
    }
}

/// Step 0, then 16 log-spaced steps from 1 to `budget`; step 5 is always included.
pub fn default_eval_steps(budget: u64) -> Vec<u64> {
    let mut steps = vec![0u64];
    let top = (budget.max(1) as f64).ln();
    for i in 0..16 {
        let s = (top * i as f64 / 15.0).exp().round() as u64;
        steps.push(s.clamp(1, budget.max(1)));
    }
    if budget >= PROBE_STEPS[1] {
        steps.push(PROBE_STEPS[1]);
    }
    steps.sort_unstable();
    steps.dedup();
    steps
}

/// Metric and NLL values at the probe steps, lower-is-better.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub loss0: f64,
    pub loss5: f64,
    pub metric0: f64,
    pub metric5: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub curve: LearningCurve,
    /// State of the checkpoint kept from the run (the best evaluated step).
    pub final_state: ParameterState,
    pub probe: Probe,
}

impl TrainResult {
    pub fn validate(&self, request: &TrainRequest) -> Result<(), ContractViolation> {
        check_curve_points(self.curve.points(), self.curve.lower_bound)?;
        let got: Vec<u64> = self.curve.points().iter().map(|p| p.0).collect();
        if got != request.eval_steps {
            return Err(ContractViolation::StepMismatch { expected: request.eval_steps.clone(), got });
        }
        let p = self.probe;
        if ![p.loss0, p.loss5, p.metric0, p.metric5].iter().all(|v| v.is_finite()) {
            return Err(ContractViolation::NonFiniteProbe);
        }
        if !self.final_state.same_layout(&request.init.state) {
            return Err(ContractViolation::StateLayout);
        }
        Ok(())
    }
}

/// Structural checks shared by locally built and wire-decoded curves.
pub(crate) fn check_curve_points(points: &[(u64, f64)], lower_bound: f64) -> Result<(), ContractViolation> {
    if points.first().map(|p| p.0) != Some(0) {
        return Err(ContractViolation::MissingStepZero);
    }
    for (i, w) in points.windows(2).enumerate() {
        if w[1].0 <= w[0].0 {
            return Err(ContractViolation::NonMonotoneSteps { index: i + 1 });
        }
    }
    for &(step, value) in points {
        if !value.is_finite() {
            return Err(ContractViolation::NonFiniteValue { step });
        }
        if value < lower_bound {
            return Err(ContractViolation::BelowLowerBound { step, value });
        }
    }
    Ok(())
}

/// Something that can train a task from an initialization.
pub trait Backend: Send + Sync {
    /// The pre-trained root state every independent run starts from.
    fn root_state(&self) -> &ParameterState;

    fn train(&self, task: &TaskSpec, request: &TrainRequest, seed: u64) -> Result<TrainResult, BackendError>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_shape() {
        let steps = default_eval_steps(10_000);
        assert_eq!(steps[0], 0);
        assert_eq!(steps[1], 1);
        assert_eq!(*steps.last().unwrap(), 10_000);
        assert!(steps.contains(&5));
        assert!(steps.windows(2).all(|w| w[0] < w[1]));
        assert!(steps.len() >= 16 && steps.len() <= 18);
    }

    #[test]
    fn request_validation() {
        let init = Init { lineage: vec![], state: Arc::new(ParameterState::zeros(1)) };
        assert!(TrainRequest::new("t", init.clone(), 100, vec![0, 5, 100]).is_ok());
        assert!(TrainRequest::new("t", init.clone(), 100, vec![0, 5, 101]).is_err());
        assert!(TrainRequest::new("t", init.clone(), 100, vec![0, 10]).is_err());
        assert!(TrainRequest::new("t", init.clone(), 100, vec![5, 0]).is_err());
        assert!(TrainRequest::new("t", init, 4, vec![0]).is_err());
    }
}
