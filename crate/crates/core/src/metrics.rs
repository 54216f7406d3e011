//! Learning-curve efficiency metrics.
//!
//! Every curve is stored in lower-is-better ("loss-like") form. `Perf(B)` is the
//! running minimum of the curve over all evaluations at or before `B` updates,
//! and `PerfAUC(B_max)` integrates `Perf(e^b)` for `b` in `[0, ln B_max]`.
//! Because evaluations happen at integer steps, the integrand is a
//! right-continuous step function in log-budget space and the integral is
//! computed exactly, segment by segment.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("learning curve is empty")]
    EmptyCurve,
    #[error("curve steps must be strictly increasing (step {prev} followed by {next})")]
    NonIncreasingSteps { prev: u64, next: u64 },
    #[error("curve value {value} at step {step} is not finite")]
    NonFiniteValue { step: u64, value: f64 },
    #[error("curve value {value} at step {step} is below the metric lower bound {lower_bound}")]
    BelowLowerBound { step: u64, value: f64, lower_bound: f64 },
    #[error("budget {budget} is below the first recorded step {first_step}")]
    BudgetBeforeFirstStep { budget: u64, first_step: u64 },
    #[error("curve has no evaluation at step 0 or 1 to anchor the log-budget integral")]
    MissingAnchor,
    #[error("maximum budget must be at least 1")]
    InvalidBudget,
    #[error("summaries are not comparable: {0}")]
    Mismatch(String),
    #[error("degenerate baseline: PerfAUC_ind - L*ln(B_max) = {denominator} must be positive")]
    DegenerateBaseline { denominator: f64 },
    #[error("median of an empty list")]
    EmptyList,
}

/// Whether larger raw scores are better or worse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    LowerIsBetter,
    HigherIsBetter,
}

/// Monotone map from a raw metric score onto the loss-like scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    Identity,
    /// `upper - raw`, e.g. error = 1 - accuracy.
    Complement { upper: f64 },
}

/// How a task's metric maps onto the lower-is-better scale used by every curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub metric_id: String,
    pub orientation: Orientation,
    pub transform: Transform,
    /// Lower bound `L` of the transformed metric.
    pub lower_bound: f64,
}

impl MetricSpec {
    /// A loss already in lower-is-better form with lower bound 0.
    pub fn loss(metric_id: impl Into<String>) -> Self {
        Self {
            metric_id: metric_id.into(),
            orientation: Orientation::LowerIsBetter,
            transform: Transform::Identity,
            lower_bound: 0.0,
        }
    }

    /// A score in `[0, 1]` where higher is better (accuracy, F1, ROUGE), mapped to `1 - score`.
    pub fn unit_score(metric_id: impl Into<String>) -> Self {
        Self {
            metric_id: metric_id.into(),
            orientation: Orientation::HigherIsBetter,
            transform: Transform::Complement { upper: 1.0 },
            lower_bound: 0.0,
        }
    }

    pub fn to_loss(&self, raw: f64) -> f64 {
        match self.transform {
            Transform::Identity => raw,
            Transform::Complement { upper } => upper - raw,
        }
    }
}

/// Evaluations of one training run, in lower-is-better form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    points: Vec<(u64, f64)>,
    pub metric_id: String,
    pub lower_bound: f64,
}

impl LearningCurve {
    pub fn new(
        points: Vec<(u64, f64)>,
        metric_id: impl Into<String>,
        lower_bound: f64,
    ) -> Result<Self, MetricsError> {
        for (i, &(step, value)) in points.iter().enumerate() {
            if !value.is_finite() {
                return Err(MetricsError::NonFiniteValue { step, value });
            }
            if value < lower_bound {
                return Err(MetricsError::BelowLowerBound { step, value, lower_bound });
            }
            if i > 0 {
                let prev = points[i - 1].0;
                if step <= prev {
                    return Err(MetricsError::NonIncreasingSteps { prev, next: step });
                }
            }
        }
        Ok(Self { points, metric_id: metric_id.into(), lower_bound })
    }

    pub fn points(&self) -> &[(u64, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn value_at(&self, step: u64) -> Option<f64> {
        self.points
            .binary_search_by_key(&step, |&(s, _)| s)
            .ok()
            .map(|i| self.points[i].1)
    }

    /// Step of the first evaluation attaining the minimum within `budget`.
    pub fn best_step(&self, budget: u64) -> Option<u64> {
        let mut best: Option<(u64, f64)> = None;
        for &(s, v) in self.points.iter().take_while(|&&(s, _)| s <= budget) {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((s, v));
            }
        }
        best.map(|(s, _)| s)
    }

    /// Shifts every evaluation `offset` updates later and prepends `anchor` at step 0.
    /// Used to charge extra updates (probe runs) against a curve.
    pub fn delayed(&self, offset: u64, anchor: f64) -> Result<Self, MetricsError> {
        if offset == 0 {
            return Ok(self.clone());
        }
        let mut points = Vec::with_capacity(self.points.len() + 1);
        points.push((0, anchor));
        points.extend(self.points.iter().map(|&(s, v)| (s + offset, v)));
        Self::new(points, self.metric_id.clone(), self.lower_bound)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfSummary {
    pub perf_auc: f64,
    pub budget_max: u64,
    pub curve_id: String,
}

impl PerfSummary {
    pub fn of(
        curve: &LearningCurve,
        budget_max: u64,
        curve_id: impl Into<String>,
    ) -> Result<Self, MetricsError> {
        Ok(Self { perf_auc: perf_auc(curve, budget_max)?, budget_max, curve_id: curve_id.into() })
    }
}

/// Best (minimum) loss over evaluations at or before `budget` updates.
pub fn best_perf(curve: &LearningCurve, budget: u64) -> Result<f64, MetricsError> {
    let first_step = curve.points.first().ok_or(MetricsError::EmptyCurve)?.0;
    if budget < first_step {
        return Err(MetricsError::BudgetBeforeFirstStep { budget, first_step });
    }
    Ok(curve
        .points
        .iter()
        .take_while(|&&(s, _)| s <= budget)
        .map(|&(_, v)| v)
        .fold(f64::INFINITY, f64::min))
}

/// Exact area under `Perf(e^b)` for `b` in `[0, ln budget_max]`.
pub fn perf_auc(curve: &LearningCurve, budget_max: u64) -> Result<f64, MetricsError> {
    if budget_max < 1 {
        return Err(MetricsError::InvalidBudget);
    }
    let points = curve.points();
    if points.first().is_none_or(|&(s, _)| s > 1) {
        return Err(MetricsError::MissingAnchor);
    }
    let upper = (budget_max as f64).ln();
    // Perf(1) covers every evaluation at step 0 or 1.
    let mut running = points
        .iter()
        .take_while(|&&(s, _)| s <= 1)
        .map(|&(_, v)| v)
        .fold(f64::INFINITY, f64::min);
    let mut left = 0.0;
    let mut area = 0.0;
    for &(step, value) in points.iter().skip_while(|&&(s, _)| s <= 1) {
        if step >= budget_max {
            break;
        }
        let b = (step as f64).ln();
        area += running * (b - left);
        left = b;
        running = running.min(value);
    }
    area += running * (upper - left);
    Ok(area)
}

/// Fraction of the gap between the independent baseline and a perfect-from-step-0
/// learner that the method closes: `(ind - m) / (ind - L ln B_max)`.
pub fn relative_perf_auc(
    method: &PerfSummary,
    independent: &PerfSummary,
    spec: &MetricSpec,
) -> Result<f64, MetricsError> {
    if method.budget_max != independent.budget_max {
        return Err(MetricsError::Mismatch(format!(
            "budget_max {} vs {}",
            method.budget_max, independent.budget_max
        )));
    }
    let floor = spec.lower_bound * (independent.budget_max as f64).ln();
    let denominator = independent.perf_auc - floor;
    if !(denominator > 0.0) {
        return Err(MetricsError::DegenerateBaseline { denominator });
    }
    Ok((independent.perf_auc - method.perf_auc) / denominator)
}

/// Median; the mean of the two middle order statistics for even counts.
pub fn median_of(values: &[f64]) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyList);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Ok(if sorted.len() % 2 == 0 { (sorted[mid - 1] + sorted[mid]) / 2.0 } else { sorted[mid] })
}
