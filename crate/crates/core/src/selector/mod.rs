//! Learned checkpoint selection.
//!
//! A discriminator scores every non-root checkpoint in the zoo for the next
//! task. Candidates with confidence strictly above the threshold form the
//! positive set; the most confident one is used as the initialization, and
//! the root is used when the set is empty.

mod features;
mod gbdt;

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{Backend, BackendError, Init, TaskSpec, TrainRequest, PROBE_STEPS};
use crate::engine::CheckpointRecord;

pub use features::{extract_features, FamilyMap, FeatureVector, ProbeSet, FEATURE_NAMES, N_FEATURES};
pub use gbdt::{gbdt_fit, logistic_loss, sigmoid, FitTrace, GbdtModel, GbdtParams, Node, RegressionTree};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SelectorError {
    #[error("training data has a single class")]
    SingleClass,
    #[error("invalid training data: {0}")]
    InvalidTrainingData(String),
    #[error("expected {expected} features, got {got}")]
    FeatureLength { expected: usize, got: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("model feature manifest does not match the built-in feature order")]
    ManifestMismatch,
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
    #[error("probe results missing or non-finite")]
    MissingProbe,
    #[error("candidate and root states have different group layouts")]
    LayoutMismatch,
    #[error("probe run failed for candidate {candidate}: {source}")]
    Probe { candidate: String, source: BackendError },
    #[error("discriminator failed: {0}")]
    Discriminator(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Scores how likely a candidate checkpoint is to transfer positively to a target.
pub trait Discriminator: Send + Sync {
    fn confidence(
        &self,
        candidate: &CheckpointRecord,
        target: &TaskSpec,
        features: &FeatureVector,
    ) -> Result<f64, SelectorError>;
}

impl Discriminator for GbdtModel {
    fn confidence(&self, _: &CheckpointRecord, _: &TaskSpec, features: &FeatureVector) -> Result<f64, SelectorError> {
        GbdtModel::confidence(self, features.as_slice())
    }
}

impl<D: Discriminator + ?Sized> Discriminator for Arc<D> {
    fn confidence(&self, c: &CheckpointRecord, t: &TaskSpec, f: &FeatureVector) -> Result<f64, SelectorError> {
        (**self).confidence(c, t, f)
    }
}

/// Versioned on-disk form of a selector model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorModelFile {
    pub format_version: u32,
    pub feature_names: Vec<String>,
    pub model: GbdtModel,
}

impl SelectorModelFile {
    pub fn new(model: GbdtModel) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            model,
        }
    }

    pub fn from_json(text: &str) -> Result<GbdtModel, SelectorError> {
        let file: SelectorModelFile = serde_json::from_str(text)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(SelectorError::UnsupportedVersion(file.format_version));
        }
        if file.feature_names.len() != N_FEATURES
            || file.feature_names.iter().zip(FEATURE_NAMES).any(|(a, b)| a != b)
            || file.model.n_features != N_FEATURES
        {
            return Err(SelectorError::ManifestMismatch);
        }
        file.model.validate()?;
        Ok(file.model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn save(model: &GbdtModel, path: &Path) -> Result<(), SelectorError> {
        fs::write(path, Self::new(model.clone()).to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<GbdtModel, SelectorError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectiveConfig {
    pub threshold: f64,
    /// Charge probe updates against the selected run's budget.
    pub charge_probes: bool,
}

impl Default for SelectiveConfig {
    fn default() -> Self {
        Self { threshold: DEFAULT_THRESHOLD, charge_probes: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub checkpoint_id: String,
    pub confidence: f64,
    pub features: FeatureVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Index into the zoo; 0 is the root.
    pub chosen: usize,
    pub scores: Vec<CandidateScore>,
    /// Updates spent on probe runs (0 when the zoo holds only the root).
    pub probe_updates: u64,
    /// Metric of the root-initialized probe at step 0.
    pub independent_zero_shot: Option<f64>,
}

/// Index of the most confident candidate strictly above `threshold`, ties to the
/// most recent; `0` (the root) when none qualifies. `confidences[k]` belongs to zoo index `k + 1`.
pub fn pick_most_confident(confidences: &[f64], threshold: f64) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for (k, &c) in confidences.iter().enumerate() {
        if c > threshold && best.is_none_or(|(_, b)| c >= b) {
            best = Some((k + 1, c));
        }
    }
    best.map_or(0, |(i, _)| i)
}

/// Scores every non-root checkpoint of `zoo` for `target` and picks an initialization.
pub fn selective_select(
    zoo: &[CheckpointRecord],
    target: &TaskSpec,
    discriminator: &dyn Discriminator,
    backend: &dyn Backend,
    seed: u64,
    families: &FamilyMap,
    config: &SelectiveConfig,
) -> Result<Selection, SelectorError> {
    let root = zoo.first().filter(|r| r.lineage.is_empty()).ok_or_else(|| {
        SelectorError::InvalidModel("zoo must start with the root checkpoint".into())
    })?;
    let candidates = &zoo[1..];
    if candidates.is_empty() {
        return Ok(Selection { chosen: 0, scores: vec![], probe_updates: 0, independent_zero_shot: None });
    }

    let probe = |record: &CheckpointRecord| {
        let init = Init { lineage: record.lineage.clone(), state: record.state.clone() };
        backend
            .train(target, &TrainRequest::probe(target.task_id.clone(), init), seed)
            .map_err(|source| SelectorError::Probe { candidate: record.id.clone(), source })
    };
    let independent = probe(root)?;
    let scores = candidates
        .par_iter()
        .map(|cand| {
            let run = probe(cand)?;
            let probes = ProbeSet {
                candidate: run.probe,
                independent: independent.probe,
                independent_state: &independent.final_state,
            };
            let features = extract_features(cand, &target.family_id, &probes, backend.root_state(), families)?;
            let confidence = discriminator.confidence(cand, target, &features)?;
            if !(0.0..=1.0).contains(&confidence) {
                return Err(SelectorError::Discriminator(format!("confidence {confidence} outside [0, 1]")));
            }
            Ok(CandidateScore { checkpoint_id: cand.id.clone(), confidence, features })
        })
        .collect::<Result<Vec<_>, SelectorError>>()?;

    let confidences: Vec<f64> = scores.iter().map(|s| s.confidence).collect();
    let chosen = pick_most_confident(&confidences, config.threshold);
    Ok(Selection {
        chosen,
        scores,
        probe_updates: PROBE_STEPS[1] * (candidates.len() as u64 + 1),
        independent_zero_shot: Some(independent.probe.metric0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_most_confident_above_threshold() {
        assert_eq!(pick_most_confident(&[0.7, 0.3], 0.5), 1);
        assert_eq!(pick_most_confident(&[0.4, 0.3], 0.5), 0);
        assert_eq!(pick_most_confident(&[], 0.5), 0);
        assert_eq!(pick_most_confident(&[0.5], 0.5), 0);
        assert_eq!(pick_most_confident(&[0.6, 0.9, 0.8], 0.5), 2);
        // Ties go to the most recent checkpoint.
        assert_eq!(pick_most_confident(&[0.8, 0.8], 0.5), 2);
    }

    #[test]
    fn model_file_round_trip_and_manifest() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| (0..N_FEATURES).map(|j| ((i * 7 + j) % 5) as f64).collect()).collect();
        let y: Vec<bool> = (0..10).map(|i| i % 2 == 0).collect();
        let (model, _) = gbdt_fit(&x, &y, &GbdtParams::default(), 1).unwrap();
        let text = SelectorModelFile::new(model.clone()).to_json();
        let back = SelectorModelFile::from_json(&text).unwrap();
        for row in &x {
            assert_eq!(model.confidence(row).unwrap().to_bits(), back.confidence(row).unwrap().to_bits());
        }
        let tampered = text.replacen("rel_metric_0shot", "rel_metric_zero", 1);
        assert!(matches!(SelectorModelFile::from_json(&tampered), Err(SelectorError::ManifestMismatch)));
        let versioned = text.replacen("\"format_version\": 1", "\"format_version\": 2", 1);
        assert!(matches!(SelectorModelFile::from_json(&versioned), Err(SelectorError::UnsupportedVersion(2))));
    }
}
