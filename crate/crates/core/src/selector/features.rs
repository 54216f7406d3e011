//! Candidate features for a (source checkpoint, target task) pair.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::SelectorError;
use crate::backends::{ParamGroup, ParameterState, Probe};
use crate::engine::CheckpointRecord;

pub const N_FEATURES: usize = 24;

/// Fixed feature order; persisted with every model file.
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "rel_metric_0shot",
    "rel_metric_5shot",
    "rel_nll_0shot",
    "rel_nll_5shot",
    "weight_change_max_softmax",
    "weight_change_mean_softmax",
    "weight_change_max_embedding",
    "weight_change_mean_embedding",
    "weight_change_max_layers_1",
    "weight_change_mean_layers_1",
    "weight_change_max_layers_2",
    "weight_change_mean_layers_2",
    "weight_change_max_layers_3",
    "weight_change_mean_layers_3",
    "weight_change_max_layers_4",
    "weight_change_mean_layers_4",
    "update_cosine_softmax",
    "update_cosine_embedding",
    "update_cosine_layers_1",
    "update_cosine_layers_2",
    "update_cosine_layers_3",
    "update_cosine_layers_4",
    "same_family_last",
    "same_family_any",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; N_FEATURES]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        FEATURE_NAMES.iter().position(|n| *n == name).map(|i| self.0[i])
    }
}

/// Probe results needed to featurize one candidate.
#[derive(Debug, Clone)]
pub struct ProbeSet<'a> {
    /// Target task trained 5 steps from the candidate.
    pub candidate: Probe,
    /// Target task trained 5 steps from the root.
    pub independent: Probe,
    /// State of the independent 5-step run.
    pub independent_state: &'a ParameterState,
}

/// Task id to family id.
pub type FamilyMap = BTreeMap<String, String>;

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

pub fn extract_features(
    candidate: &CheckpointRecord,
    target_family: &str,
    probes: &ProbeSet<'_>,
    root: &ParameterState,
    families: &FamilyMap,
) -> Result<FeatureVector, SelectorError> {
    let (c, i) = (probes.candidate, probes.independent);
    for v in [c.loss0, c.loss5, c.metric0, c.metric5, i.loss0, i.loss5, i.metric0, i.metric5] {
        if !v.is_finite() {
            return Err(SelectorError::MissingProbe);
        }
    }
    if !candidate.state.same_layout(root) || !probes.independent_state.same_layout(root) {
        return Err(SelectorError::LayoutMismatch);
    }
    let cand_delta = candidate.state.delta(root).map_err(|_| SelectorError::LayoutMismatch)?;
    let ind_delta = probes.independent_state.delta(root).map_err(|_| SelectorError::LayoutMismatch)?;

    let mut f = [0.0; N_FEATURES];
    f[0] = c.metric0 - i.metric0;
    f[1] = c.metric5 - i.metric5;
    f[2] = c.loss0 - i.loss0;
    f[3] = c.loss5 - i.loss5;
    for (k, group) in ParamGroup::ALL.iter().enumerate() {
        let d = &cand_delta.iter().find(|(g, _)| g == group).expect("canonical layout").1;
        let e = &ind_delta.iter().find(|(g, _)| g == group).expect("canonical layout").1;
        let max = d.iter().map(|x| x.abs()).fold(0.0, f64::max);
        let mean = if d.is_empty() { 0.0 } else { d.iter().map(|x| x.abs()).sum::<f64>() / d.len() as f64 };
        f[4 + 2 * k] = max;
        f[5 + 2 * k] = mean;
        f[16 + k] = cosine(d, e);
    }
    let family_of = |t: &String| families.get(t).map(String::as_str);
    f[22] = f64::from(u8::from(candidate.lineage.last().and_then(family_of) == Some(target_family)));
    f[23] = f64::from(u8::from(candidate.lineage.iter().any(|t| family_of(t) == Some(target_family))));
    Ok(FeatureVector(f))
}
