//! Pairwise transfer labels, family-level pair search and diagnostic triplets.

mod fixtures;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{SyntheticParams, TaskSpec};
use crate::metrics::MetricSpec;
use crate::seed::derive_seed;

pub use fixtures::{
    load_fixtures, reproduce_table2, label_consistency, CellCheck, ExceptionsManifest, FixtureRow, Fixtures, KnownDiscrepancy,
    LabelException, LabelMismatch, Table2Row, TaskMeta, TaskRegistry, FIXTURE_COLUMNS,
};
pub use synthetic::{generate_synthetic_benchmark, measure_pair, GeneratedBenchmark, SyntheticBenchmarkSpec};

/// Relative PerfAUC threshold, in percent, separating transfer classes.
pub const LABEL_THRESHOLD: f64 = 5.0;
pub const BENCHMARK_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("transfer record {source_task}->{target_task} has no trials")]
    EmptyTrials { source_task: String, target_task: String },
    #[error("transfer record {0} has a non-finite trial")]
    NonFiniteTrial(String),
    #[error("K = {k} is outside 1..={families}")]
    InvalidK { k: usize, families: usize },
    #[error("family matrix must be {n}x{n} over the family registry")]
    MatrixShape { n: usize },
    #[error("invalid triplet {0}")]
    InvalidTriplet(String),
    #[error("neutral/neutral is not a triplet configuration")]
    NeutralNeutral,
    #[error("unknown polarity `{0}`")]
    UnknownPolarity(String),
    #[error("unsupported benchmark version {0}")]
    UnsupportedVersion(u32),
    #[error("benchmark references unknown task {0}")]
    UnknownTask(String),
    #[error("checksum mismatch for fixture file {0}")]
    Checksum(String),
    #[error("fixture schema error in {file}: {reason}")]
    Schema { file: String, reason: String },
    #[error("pair measurement failed: {0}")]
    Measurement(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Positive,
    Negative,
    Neutral,
    Unlabeled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Pos,
    Neg,
    Neu,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Pos => "pos",
            Polarity::Neg => "neg",
            Polarity::Neu => "neu",
        }
    }

    pub fn of(label: Label) -> Option<Polarity> {
        match label {
            Label::Positive => Some(Polarity::Pos),
            Label::Negative => Some(Polarity::Neg),
            Label::Neutral => Some(Polarity::Neu),
            Label::Unlabeled => None,
        }
    }
}

impl FromStr for Polarity {
    type Err = BenchmarkError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pos" => Ok(Polarity::Pos),
            "neg" => Ok(Polarity::Neg),
            "neu" => Ok(Polarity::Neu),
            other => Err(BenchmarkError::UnknownPolarity(other.to_string())),
        }
    }
}

/// Intended polarities of A->C and B->C.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawConfig")]
pub struct TripletConfig {
    pub a_to_c: Polarity,
    pub b_to_c: Polarity,
}

#[derive(Deserialize)]
struct RawConfig {
    a_to_c: Polarity,
    b_to_c: Polarity,
}

impl TryFrom<RawConfig> for TripletConfig {
    type Error = BenchmarkError;
    fn try_from(raw: RawConfig) -> Result<Self, Self::Error> {
        TripletConfig::new(raw.a_to_c, raw.b_to_c)
    }
}

impl TripletConfig {
    /// The eight configurations, in appendix table order.
    pub const ALL: [TripletConfig; 8] = {
        use Polarity::*;
        [
            TripletConfig { a_to_c: Pos, b_to_c: Pos },
            TripletConfig { a_to_c: Pos, b_to_c: Neg },
            TripletConfig { a_to_c: Pos, b_to_c: Neu },
            TripletConfig { a_to_c: Neg, b_to_c: Pos },
            TripletConfig { a_to_c: Neg, b_to_c: Neg },
            TripletConfig { a_to_c: Neg, b_to_c: Neu },
            TripletConfig { a_to_c: Neu, b_to_c: Pos },
            TripletConfig { a_to_c: Neu, b_to_c: Neg },
        ]
    };

    pub fn new(a_to_c: Polarity, b_to_c: Polarity) -> Result<Self, BenchmarkError> {
        if a_to_c == Polarity::Neu && b_to_c == Polarity::Neu {
            return Err(BenchmarkError::NeutralNeutral);
        }
        Ok(Self { a_to_c, b_to_c })
    }

    pub fn tag(&self) -> String {
        format!("{}/{}", self.a_to_c.as_str(), self.b_to_c.as_str())
    }

    pub fn has_positive_leg(&self) -> bool {
        self.a_to_c == Polarity::Pos || self.b_to_c == Polarity::Pos
    }
}

impl fmt::Display for TripletConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

impl FromStr for TripletConfig {
    type Err = BenchmarkError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s.split_once('/').ok_or_else(|| BenchmarkError::UnknownPolarity(s.to_string()))?;
        TripletConfig::new(a.parse()?, b.parse()?)
    }
}

/// Pairwise result `source -> target`: relative PerfAUC in percent, one per trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRecord {
    pub source_task: String,
    pub target_task: String,
    pub trials: Vec<f64>,
    #[serde(default = "unlabeled")]
    pub label: Label,
}

fn unlabeled() -> Label {
    Label::Unlabeled
}

impl TransferRecord {
    pub fn new(source: impl Into<String>, target: impl Into<String>, trials: Vec<f64>) -> Result<Self, BenchmarkError> {
        let rec = Self { source_task: source.into(), target_task: target.into(), trials, label: Label::Unlabeled };
        rec.check()?;
        Ok(rec)
    }

    fn check(&self) -> Result<(), BenchmarkError> {
        if self.trials.is_empty() {
            return Err(BenchmarkError::EmptyTrials {
                source_task: self.source_task.clone(),
                target_task: self.target_task.clone(),
            });
        }
        if self.trials.iter().any(|t| !t.is_finite()) {
            return Err(BenchmarkError::NonFiniteTrial(format!("{}->{}", self.source_task, self.target_task)));
        }
        Ok(())
    }

    /// Copy with `label` assigned by [`label_pair`].
    pub fn labeled(&self, threshold: f64) -> Result<Self, BenchmarkError> {
        Ok(Self { label: label_pair(self, threshold)?, ..self.clone() })
    }
}

/// Positive iff every trial exceeds `+threshold`, negative iff every trial is
/// below `-threshold`, neutral otherwise.
pub fn label_pair(record: &TransferRecord, threshold: f64) -> Result<Label, BenchmarkError> {
    record.check()?;
    let min = record.trials.iter().copied().fold(f64::INFINITY, f64::min);
    let max = record.trials.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(if min > threshold {
        Label::Positive
    } else if max < -threshold {
        Label::Negative
    } else {
        Label::Neutral
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySelection {
    pub target_family: String,
    pub best_sources: Vec<String>,
    pub worst_sources: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySearch {
    pub selections: Vec<FamilySelection>,
    /// Unique `(source, target)` task pairs, source != target.
    pub pairs: BTreeSet<(String, String)>,
}

impl FamilySearch {
    pub fn count(&self) -> usize {
        self.pairs.len()
    }
}

/// `matrix[s][t]` is the average transfer from source family `s` to target
/// family `t`. For each target, the `k` best and `k` worst sources are kept
/// and expanded to member task pairs.
pub fn family_search(
    matrix: &[Vec<f64>],
    families: &[String],
    tasks: &BTreeMap<String, String>,
    k: usize,
) -> Result<FamilySearch, BenchmarkError> {
    let n = families.len();
    if matrix.len() != n || matrix.iter().any(|row| row.len() != n) {
        return Err(BenchmarkError::MatrixShape { n });
    }
    if k == 0 || k > n {
        return Err(BenchmarkError::InvalidK { k, families: n });
    }
    let members = |fam: &str| -> Vec<String> {
        tasks.iter().filter(|(_, f)| f.as_str() == fam).map(|(t, _)| t.clone()).collect()
    };
    let mut selections = Vec::with_capacity(n);
    let mut pairs = BTreeSet::new();
    for (t, target_family) in families.iter().enumerate() {
        let mut order: Vec<usize> = (0..n).collect();
        // Stable: equal scores keep registry order.
        order.sort_by(|&a, &b| matrix[b][t].total_cmp(&matrix[a][t]));
        let best: Vec<usize> = order[..k].to_vec();
        let worst: Vec<usize> = order.iter().rev().take(k).copied().collect();
        for &s in best.iter().chain(&worst) {
            for src in members(&families[s]) {
                for tgt in members(target_family.as_str()) {
                    if src != tgt {
                        pairs.insert((src.clone(), tgt));
                    }
                }
            }
        }
        selections.push(FamilySelection {
            target_family: target_family.clone(),
            best_sources: best.iter().map(|&i| families[i].clone()).collect(),
            worst_sources: worst.iter().map(|&i| families[i].clone()).collect(),
        });
    }
    Ok(FamilySearch { selections, pairs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletSpec {
    pub a: String,
    pub b: String,
    pub c: String,
    pub config: TripletConfig,
    /// Pair records justifying the polarities, as `source->target`.
    #[serde(default)]
    pub provenance: Vec<String>,
}

impl TripletSpec {
    pub fn id(&self) -> String {
        format!("{}>{}>{}", self.a, self.b, self.c)
    }

    pub fn validate(&self) -> Result<(), BenchmarkError> {
        if self.a == self.b || self.b == self.c || self.a == self.c {
            return Err(BenchmarkError::InvalidTriplet(self.id()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shortfall {
    pub config: TripletConfig,
    pub wanted: usize,
    pub got: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletBuild {
    pub triplets: Vec<TripletSpec>,
    pub shortfalls: Vec<Shortfall>,
}

/// Samples, per configuration, `per_config_targets` targets and
/// `pairs_per_target` ordered source pairs whose labels match. Sampling is
/// without replacement within a configuration and seeded per configuration.
pub fn build_triplets(
    records: &[TransferRecord],
    per_config_targets: usize,
    pairs_per_target: usize,
    seed: u64,
) -> TripletBuild {
    // target -> polarity -> sources
    let mut by_target: BTreeMap<&str, BTreeMap<Polarity, Vec<&str>>> = BTreeMap::new();
    for r in records {
        if let Some(p) = Polarity::of(r.label) {
            if r.source_task != r.target_task {
                by_target.entry(&r.target_task).or_default().entry(p).or_default().push(&r.source_task);
            }
        }
    }
    for sources in by_target.values_mut().flat_map(|m| m.values_mut()) {
        sources.sort_unstable();
        sources.dedup();
    }

    let mut triplets = Vec::new();
    let mut shortfalls = Vec::new();
    for config in TripletConfig::ALL {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &config.tag()));
        let mut eligible: Vec<(&str, Vec<(&str, &str)>)> = by_target
            .iter()
            .filter_map(|(&c, m)| {
                let empty = Vec::new();
                let a_src = m.get(&config.a_to_c).unwrap_or(&empty);
                let b_src = m.get(&config.b_to_c).unwrap_or(&empty);
                let pairs: Vec<(&str, &str)> = a_src
                    .iter()
                    .flat_map(|&a| b_src.iter().filter(move |&&b| b != a).map(move |&b| (a, b)))
                    .collect();
                (!pairs.is_empty()).then_some((c, pairs))
            })
            .collect();
        eligible.shuffle(&mut rng);
        // Targets that can fill their quota go first; shuffle order is kept otherwise.
        eligible.sort_by_key(|(_, pairs)| pairs.len() < pairs_per_target);
        let mut got = 0;
        for (c, mut pairs) in eligible.into_iter().take(per_config_targets) {
            pairs.shuffle(&mut rng);
            for (a, b) in pairs.into_iter().take(pairs_per_target) {
                triplets.push(TripletSpec {
                    a: a.to_string(),
                    b: b.to_string(),
                    c: c.to_string(),
                    config,
                    provenance: vec![format!("{a}->{c}"), format!("{b}->{c}")],
                });
                got += 1;
            }
        }
        let wanted = per_config_targets * pairs_per_target;
        if got < wanted {
            shortfalls.push(Shortfall { config, wanted, got });
        }
    }
    TripletBuild { triplets, shortfalls }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTask {
    pub task_id: String,
    pub family: String,
    pub metric: MetricSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticParams>,
}

impl BenchmarkTask {
    pub fn to_spec(&self) -> TaskSpec {
        TaskSpec {
            task_id: self.task_id.clone(),
            family_id: self.family.clone(),
            metric: self.metric.clone(),
            synthetic: self.synthetic.clone(),
        }
    }
}

impl From<&TaskSpec> for BenchmarkTask {
    fn from(t: &TaskSpec) -> Self {
        Self { task_id: t.task_id.clone(), family: t.family_id.clone(), metric: t.metric.clone(), synthetic: t.synthetic.clone() }
    }
}

/// On-disk benchmark: tasks, triplets and (optionally) the labeled pair
/// records they were drawn from, which double as selector training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkFile {
    pub version: u32,
    pub tasks: Vec<BenchmarkTask>,
    pub triplets: Vec<TripletSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub records: Vec<TransferRecord>,
}

impl BenchmarkFile {
    pub fn new(tasks: Vec<BenchmarkTask>, triplets: Vec<TripletSpec>, records: Vec<TransferRecord>) -> Self {
        Self { version: BENCHMARK_VERSION, tasks, triplets, records }
    }

    pub fn validate(&self) -> Result<(), BenchmarkError> {
        if self.version != BENCHMARK_VERSION {
            return Err(BenchmarkError::UnsupportedVersion(self.version));
        }
        let ids: BTreeSet<&str> = self.tasks.iter().map(|t| t.task_id.as_str()).collect();
        for t in &self.triplets {
            t.validate()?;
            for id in [&t.a, &t.b, &t.c] {
                if !ids.contains(id.as_str()) {
                    return Err(BenchmarkError::UnknownTask(id.clone()));
                }
            }
        }
        for r in &self.records {
            r.check()?;
        }
        Ok(())
    }

    pub fn task(&self, id: &str) -> Option<TaskSpec> {
        self.tasks.iter().find(|t| t.task_id == id).map(BenchmarkTask::to_spec)
    }

    /// Task id to family id.
    pub fn families(&self) -> BTreeMap<String, String> {
        self.tasks.iter().map(|t| (t.task_id.clone(), t.family.clone())).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("benchmark serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, BenchmarkError> {
        let file: Self = serde_json::from_str(text)?;
        file.validate()?;
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, BenchmarkError> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), BenchmarkError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }
}
