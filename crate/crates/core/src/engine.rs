//! Sequence driver: trains tasks in order, keeps every kept checkpoint in an
//! append-only zoo rooted at the pre-trained state, and scores each task's
//! run against independent fine-tuning from the root.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{default_eval_steps, Backend, BackendError, Init, ParameterState, TaskSpec, TrainRequest, TrainResult};
use crate::benchmark::FixtureRow;
use crate::metrics::{relative_perf_auc, LearningCurve, MetricsError, PerfSummary};
use crate::seed::derive_seed;
use crate::selector::{selective_select, Discriminator, FamilyMap, FeatureVector, SelectiveConfig, SelectorError};

pub const ROOT_ID: &str = "root";
pub const DEFAULT_ORACLE_DEPTH: usize = 4;
/// Tolerance for fixture consistency checks, in percentage points.
pub const FIXTURE_TOLERANCE: f64 = 0.005;

#[derive(Debug, Error, Clone)]
pub enum EngineError {
    #[error("task sequence is empty")]
    EmptySequence,
    #[error("budget {0} is too small (at least 5 updates are needed for probing)")]
    InvalidBudget(u64),
    #[error("task {0} appears more than once in the sequence")]
    DuplicateTask(String),
    #[error("backend failed on task {task_id}: {source}")]
    Backend { task_id: String, source: Arc<BackendError> },
    #[error("metric computation failed on task {task_id}: {source}")]
    Metrics { task_id: String, source: MetricsError },
    #[error("selection failed on task {task_id}: {source}")]
    Selector { task_id: String, source: Arc<SelectorError> },
    #[error("strategy returned unknown checkpoint {0}")]
    UnknownCheckpoint(String),
    #[error("oracle search over {prior} prior tasks exceeds max depth {max_depth}")]
    OracleTooDeep { prior: usize, max_depth: usize },
    #[error("malformed fixture row {0}")]
    MalformedFixture(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task_id: String,
    pub best_loss: f64,
    pub best_step: u64,
    pub perf: PerfSummary,
}

/// A model in the zoo. The root has an empty lineage and no summary.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointRecord {
    pub id: String,
    pub lineage: Vec<String>,
    pub state: Arc<ParameterState>,
    pub summary: Option<TaskSummary>,
}

impl CheckpointRecord {
    pub fn root(state: ParameterState) -> Self {
        Self { id: ROOT_ID.to_string(), lineage: vec![], state: Arc::new(state), summary: None }
    }

    pub fn id_for(lineage: &[String]) -> String {
        if lineage.is_empty() {
            ROOT_ID.to_string()
        } else {
            lineage.join(">")
        }
    }

    pub fn is_root(&self) -> bool {
        self.lineage.is_empty()
    }

    fn init(&self) -> Init {
        Init { lineage: self.lineage.clone(), state: self.state.clone() }
    }
}

/// Append-only checkpoint zoo; index 0 is always the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Zoo {
    records: Vec<CheckpointRecord>,
}

impl Zoo {
    pub fn new(root_state: ParameterState) -> Self {
        Self { records: vec![CheckpointRecord::root(root_state)] }
    }

    pub fn records(&self) -> &[CheckpointRecord] {
        &self.records
    }

    pub fn root(&self) -> &CheckpointRecord {
        &self.records[0]
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, id: &str) -> Option<&CheckpointRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn push(&mut self, record: CheckpointRecord) {
        self.records.push(record);
    }
}

/// The most recently trained checkpoint, or the root when nothing was trained yet.
pub fn naive_select(zoo: &Zoo) -> &CheckpointRecord {
    zoo.records.last().expect("zoo always holds the root")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Independent,
    Naive,
    Selective,
    Oracle,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] =
        [StrategyKind::Independent, StrategyKind::Naive, StrategyKind::Selective, StrategyKind::Oracle];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Independent => "independent",
            StrategyKind::Naive => "naive",
            StrategyKind::Selective => "selective",
            StrategyKind::Oracle => "oracle",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| format!("unknown strategy `{s}`"))
    }
}

/// How each task picks its initialization.
#[derive(Clone, Copy)]
pub enum Strategy<'a> {
    Independent,
    Naive,
    Selective { discriminator: &'a dyn Discriminator, config: SelectiveConfig },
    Oracle { max_depth: usize },
}

impl Strategy<'_> {
    pub fn kind(&self) -> StrategyKind {
        match self {
            Strategy::Independent => StrategyKind::Independent,
            Strategy::Naive => StrategyKind::Naive,
            Strategy::Selective { .. } => StrategyKind::Selective,
            Strategy::Oracle { .. } => StrategyKind::Oracle,
        }
    }
}

impl fmt::Debug for Strategy<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind().as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskOutcome {
    pub task_id: String,
    pub init_id: String,
    pub curve: LearningCurve,
    pub perf: PerfSummary,
    pub baseline: PerfSummary,
    /// Relative PerfAUC as a fraction (0 = parity with independent fine-tuning).
    pub relative: f64,
    pub probe_updates: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathScore {
    /// Prior tasks on the initialization chain, in sequence order.
    pub chain: Vec<String>,
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub best_chain: Vec<String>,
    pub best_relative: f64,
    pub scores: Vec<PathScore>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceRun {
    pub tasks: Vec<String>,
    pub strategy: StrategyKind,
    pub budget: u64,
    pub seed: u64,
    pub zoo: Zoo,
    pub outcomes: Vec<TaskOutcome>,
}

struct Trained {
    record: CheckpointRecord,
    result: TrainResult,
}

type Cell<T> = Arc<OnceLock<Result<Arc<T>, EngineError>>>;

/// Memo keyed by a chain of task indices (the last entry is the task trained).
#[derive(Default)]
struct ChainMemo {
    cells: Mutex<HashMap<Vec<usize>, Cell<Trained>>>,
}

impl ChainMemo {
    fn cell(&self, chain: &[usize]) -> Cell<Trained> {
        self.cells.lock().expect("memo lock").entry(chain.to_vec()).or_default().clone()
    }
}

/// Runs sequences against one backend. Baseline runs are cached by
/// `(task, seed, budget)` and shared across sequences.
pub struct Engine<'a> {
    backend: &'a dyn Backend,
    families: FamilyMap,
    eval_steps: Option<Vec<u64>>,
    baselines: Mutex<HashMap<(String, u64, u64), Cell<TrainResult>>>,
}

impl<'a> Engine<'a> {
    pub fn new(backend: &'a dyn Backend) -> Self {
        Self { backend, families: FamilyMap::new(), eval_steps: None, baselines: Mutex::default() }
    }

    pub fn with_families(mut self, families: FamilyMap) -> Self {
        self.families = families;
        self
    }

    /// Fixed evaluation schedule instead of [`default_eval_steps`].
    pub fn with_eval_steps(mut self, steps: Vec<u64>) -> Self {
        self.eval_steps = Some(steps);
        self
    }

    pub fn backend(&self) -> &'a dyn Backend {
        self.backend
    }

    fn schedule(&self, budget: u64) -> Vec<u64> {
        self.eval_steps.clone().unwrap_or_else(|| default_eval_steps(budget))
    }

    /// Training seed of a task; identical for every initialization of that task.
    pub fn task_seed(seed: u64, task_id: &str) -> u64 {
        derive_seed(seed, task_id)
    }

    fn train_from(&self, task: &TaskSpec, init: &CheckpointRecord, budget: u64, seed: u64) -> Result<TrainResult, EngineError> {
        let wrap = |e: BackendError| EngineError::Backend { task_id: task.task_id.clone(), source: Arc::new(e) };
        let request = TrainRequest::new(task.task_id.clone(), init.init(), budget, self.schedule(budget)).map_err(wrap)?;
        self.backend.train(task, &request, Self::task_seed(seed, &task.task_id)).map_err(wrap)
    }

    fn kept_checkpoint(task: &TaskSpec, init: &CheckpointRecord, result: &TrainResult, budget: u64) -> Result<CheckpointRecord, EngineError> {
        let mut lineage = init.lineage.clone();
        lineage.push(task.task_id.clone());
        let id = CheckpointRecord::id_for(&lineage);
        let best_step = result.curve.best_step(budget).unwrap_or(0);
        let best_loss = result.curve.value_at(best_step).unwrap_or(f64::NAN);
        let perf = PerfSummary::of(&result.curve, budget, id.clone())
            .map_err(|source| EngineError::Metrics { task_id: task.task_id.clone(), source })?;
        Ok(CheckpointRecord {
            id,
            lineage,
            state: Arc::new(result.final_state.clone()),
            summary: Some(TaskSummary { task_id: task.task_id.clone(), best_loss, best_step, perf }),
        })
    }

    /// Independent run of `task` from the root (cached).
    pub fn baseline(&self, task: &TaskSpec, budget: u64, seed: u64) -> Result<Arc<TrainResult>, EngineError> {
        let cell = self
            .baselines
            .lock()
            .expect("baseline lock")
            .entry((task.task_id.clone(), seed, budget))
            .or_default()
            .clone();
        cell.get_or_init(|| {
            let root = CheckpointRecord::root(self.backend.root_state().clone());
            self.train_from(task, &root, budget, seed).map(Arc::new)
        })
        .clone()
    }

    /// Relative PerfAUC of `curve` on `task` against the cached baseline.
    pub fn relative_to_baseline(
        &self,
        task: &TaskSpec,
        curve: &LearningCurve,
        budget: u64,
        seed: u64,
    ) -> Result<(f64, PerfSummary, PerfSummary), EngineError> {
        let base = self.baseline(task, budget, seed)?;
        let metrics = |source| EngineError::Metrics { task_id: task.task_id.clone(), source };
        let method = PerfSummary::of(curve, budget, format!("{}:method", task.task_id)).map_err(metrics)?;
        let baseline = PerfSummary::of(&base.curve, budget, format!("{}:independent", task.task_id)).map_err(metrics)?;
        let rel = relative_perf_auc(&method, &baseline, &task.metric).map_err(metrics)?;
        Ok((rel, method, baseline))
    }

    /// Features of a checkpoint trained on `source` (from the root) as a
    /// candidate initialization for `target`.
    pub fn pair_features(&self, source: &TaskSpec, target: &TaskSpec, budget: u64, seed: u64) -> Result<FeatureVector, EngineError> {
        let run = self.run_sequence(std::slice::from_ref(source), Strategy::Independent, budget, seed)?;
        let sel = selective_select(
            run.zoo.records(),
            target,
            &Abstain,
            self.backend,
            Self::task_seed(seed, &target.task_id),
            &self.families,
            &SelectiveConfig::default(),
        )
        .map_err(|e| EngineError::Selector { task_id: target.task_id.clone(), source: Arc::new(e) })?;
        Ok(sel.scores[0].features)
    }

    fn check_sequence(tasks: &[TaskSpec], budget: u64) -> Result<(), EngineError> {
        if tasks.is_empty() {
            return Err(EngineError::EmptySequence);
        }
        if budget < 5 {
            return Err(EngineError::InvalidBudget(budget));
        }
        let mut seen = BTreeSet::new();
        for t in tasks {
            if !seen.insert(t.task_id.as_str()) {
                return Err(EngineError::DuplicateTask(t.task_id.clone()));
            }
        }
        Ok(())
    }

    pub fn run_sequence(
        &self,
        tasks: &[TaskSpec],
        strategy: Strategy<'_>,
        budget: u64,
        seed: u64,
    ) -> Result<SequenceRun, EngineError> {
        Self::check_sequence(tasks, budget)?;
        if let Strategy::Oracle { max_depth } = strategy {
            return self.run_oracle_sequence(tasks, budget, seed, max_depth);
        }
        let mut zoo = Zoo::new(self.backend.root_state().clone());
        let mut outcomes = Vec::with_capacity(tasks.len());
        for task in tasks {
            let (init_idx, probe_updates, anchor) = match strategy {
                Strategy::Independent => (0, 0, None),
                Strategy::Naive => (zoo.len() - 1, 0, None),
                Strategy::Selective { discriminator, config } => {
                    let sel = selective_select(
                        zoo.records(),
                        task,
                        discriminator,
                        self.backend,
                        Self::task_seed(seed, &task.task_id),
                        &self.families,
                        &config,
                    )
                    .map_err(|e| EngineError::Selector { task_id: task.task_id.clone(), source: Arc::new(e) })?;
                    let charged = if config.charge_probes { sel.probe_updates } else { 0 };
                    (sel.chosen, charged, sel.independent_zero_shot)
                }
                Strategy::Oracle { .. } => unreachable!("handled above"),
            };
            let init = zoo
                .records()
                .get(init_idx)
                .cloned()
                .ok_or_else(|| EngineError::UnknownCheckpoint(format!("#{init_idx}")))?;
            let result = self.train_from(task, &init, budget, seed)?;
            let curve = match anchor {
                Some(a) if probe_updates > 0 => result
                    .curve
                    .delayed(probe_updates, a)
                    .map_err(|source| EngineError::Metrics { task_id: task.task_id.clone(), source })?,
                _ => result.curve.clone(),
            };
            let (relative, perf, baseline) = self.relative_to_baseline(task, &curve, budget, seed)?;
            zoo.push(Self::kept_checkpoint(task, &init, &result, budget)?);
            outcomes.push(TaskOutcome {
                task_id: task.task_id.clone(),
                init_id: init.id.clone(),
                curve,
                perf,
                baseline,
                relative,
                probe_updates,
            });
        }
        Ok(SequenceRun {
            tasks: tasks.iter().map(|t| t.task_id.clone()).collect(),
            strategy: strategy.kind(),
            budget,
            seed,
            zoo,
            outcomes,
        })
    }

    fn chain_node(
        &self,
        memo: &ChainMemo,
        tasks: &[TaskSpec],
        chain: &[usize],
        budget: u64,
        seed: u64,
    ) -> Result<Arc<Trained>, EngineError> {
        let cell = memo.cell(chain);
        cell.get_or_init(|| {
            let (&last, prefix) = chain.split_last().expect("non-empty chain");
            let parent = if prefix.is_empty() {
                CheckpointRecord::root(self.backend.root_state().clone())
            } else {
                self.chain_node(memo, tasks, prefix, budget, seed)?.record.clone()
            };
            let task = &tasks[last];
            let result = self.train_from(task, &parent, budget, seed)?;
            let record = Self::kept_checkpoint(task, &parent, &result, budget)?;
            Ok(Arc::new(Trained { record, result }))
        })
        .clone()
    }

    /// All initialization chains for the last task, in evaluation order:
    /// shorter chains first, then lexicographic by task index.
    fn chains(prior: usize) -> Vec<Vec<usize>> {
        let mut chains: Vec<Vec<usize>> =
            (0u32..1 << prior).map(|mask| (0..prior).filter(|i| mask & (1 << i) != 0).collect()).collect();
        chains.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        chains
    }

    fn oracle_with_memo(
        &self,
        memo: &ChainMemo,
        tasks: &[TaskSpec],
        last: usize,
        budget: u64,
        seed: u64,
        max_depth: usize,
    ) -> Result<(OracleResult, Vec<usize>), EngineError> {
        if last > max_depth {
            return Err(EngineError::OracleTooDeep { prior: last, max_depth });
        }
        let target = &tasks[last];
        let chains = Self::chains(last);
        let scores = chains
            .par_iter()
            .map(|chain| {
                if chain.is_empty() {
                    return Ok(0.0);
                }
                let mut full = chain.clone();
                full.push(last);
                let node = self.chain_node(memo, tasks, &full, budget, seed)?;
                Ok(self.relative_to_baseline(target, &node.result.curve, budget, seed)?.0)
            })
            .collect::<Result<Vec<f64>, EngineError>>()?;
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = i;
            }
        }
        let names = |c: &[usize]| c.iter().map(|&i| tasks[i].task_id.clone()).collect::<Vec<_>>();
        let result = OracleResult {
            best_chain: names(&chains[best]),
            best_relative: scores[best],
            scores: chains.iter().zip(&scores).map(|(c, &s)| PathScore { chain: names(c), relative: s }).collect(),
        };
        Ok((result, chains[best].clone()))
    }

    /// Exhaustive search over every initialization chain for the last task of
    /// `tasks`. Shared prefixes are trained once.
    pub fn oracle_search(&self, tasks: &[TaskSpec], budget: u64, seed: u64, max_depth: usize) -> Result<OracleResult, EngineError> {
        Self::check_sequence(tasks, budget)?;
        let memo = ChainMemo::default();
        self.oracle_with_memo(&memo, tasks, tasks.len() - 1, budget, seed, max_depth).map(|r| r.0)
    }

    fn run_oracle_sequence(&self, tasks: &[TaskSpec], budget: u64, seed: u64, max_depth: usize) -> Result<SequenceRun, EngineError> {
        if tasks.len() - 1 > max_depth {
            return Err(EngineError::OracleTooDeep { prior: tasks.len() - 1, max_depth });
        }
        let memo = ChainMemo::default();
        let mut zoo = Zoo::new(self.backend.root_state().clone());
        let mut outcomes = Vec::with_capacity(tasks.len());
        for (i, task) in tasks.iter().enumerate() {
            let (_, best) = self.oracle_with_memo(&memo, tasks, i, budget, seed, max_depth)?;
            // Every chain checkpoint trained so far joins the zoo in a stable order.
            let mut trained: Vec<(Vec<usize>, Arc<Trained>)> = memo
                .cells
                .lock()
                .expect("memo lock")
                .iter()
                .filter_map(|(k, c)| c.get().and_then(|r| r.as_ref().ok()).map(|t| (k.clone(), t.clone())))
                .collect();
            trained.sort_by(|a, b| a.0.len().cmp(&b.0.len()).then_with(|| a.0.cmp(&b.0)));
            for (_, t) in trained {
                if zoo.get(&t.record.id).is_none() {
                    zoo.push(t.record.clone());
                }
            }
            let (init_id, curve) = if best.is_empty() {
                let base = self.baseline(task, budget, seed)?;
                (ROOT_ID.to_string(), base.curve.clone())
            } else {
                let mut full = best.clone();
                full.push(i);
                let node = self.chain_node(&memo, tasks, &full, budget, seed)?;
                let prefix = self.chain_node(&memo, tasks, &best, budget, seed)?;
                (prefix.record.id.clone(), node.result.curve.clone())
            };
            if zoo.get(&init_id).is_none() {
                return Err(EngineError::UnknownCheckpoint(init_id));
            }
            let (relative, perf, baseline) = self.relative_to_baseline(task, &curve, budget, seed)?;
            outcomes.push(TaskOutcome {
                task_id: task.task_id.clone(),
                init_id,
                curve,
                perf,
                baseline,
                relative,
                probe_updates: 0,
            });
        }
        Ok(SequenceRun {
            tasks: tasks.iter().map(|t| t.task_id.clone()).collect(),
            strategy: StrategyKind::Oracle,
            budget,
            seed,
            zoo,
            outcomes,
        })
    }
}

/// Never confident; used when only the features are wanted.
struct Abstain;

impl Discriminator for Abstain {
    fn confidence(&self, _: &CheckpointRecord, _: &TaskSpec, _: &FeatureVector) -> Result<f64, SelectorError> {
        Ok(0.0)
    }
}

/// Discriminator that knows the answer: it trains the target from the
/// candidate for the full budget and reports whether transfer was positive.
/// Confidence is `0.5 + 0.5 tanh(relative - margin)`.
pub struct HindsightDiscriminator<'e> {
    pub engine: &'e Engine<'e>,
    pub budget: u64,
    pub seed: u64,
    pub margin: f64,
}

impl Discriminator for HindsightDiscriminator<'_> {
    fn confidence(&self, candidate: &CheckpointRecord, target: &TaskSpec, _: &FeatureVector) -> Result<f64, SelectorError> {
        let run = self
            .engine
            .train_from(target, candidate, self.budget, self.seed)
            .map_err(|e| SelectorError::Discriminator(e.to_string()))?;
        let (rel, _, _) = self
            .engine
            .relative_to_baseline(target, &run.curve, self.budget, self.seed)
            .map_err(|e| SelectorError::Discriminator(e.to_string()))?;
        Ok(0.5 + 0.5 * (rel - self.margin).tanh())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// Oracle differs from `max(0, A->C, B->C, naive)`.
    Oracle,
    /// Selective is none of `0, A->C, B->C, naive`.
    Selective,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureViolation {
    pub row_id: String,
    pub kind: ViolationKind,
    pub expected: f64,
    pub found: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureCheckReport {
    pub rows_checked: usize,
    pub excepted: Vec<FixtureViolation>,
    pub violations: Vec<FixtureViolation>,
}

impl FixtureCheckReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the oracle and selective columns of per-triplet result rows.
/// Rows listed in `exceptions` are reported separately and do not fail the check.
pub fn fixture_oracle_check(rows: &[FixtureRow], exceptions: &BTreeSet<String>) -> Result<FixtureCheckReport, EngineError> {
    let mut report = FixtureCheckReport { rows_checked: 0, excepted: vec![], violations: vec![] };
    for row in rows {
        let values = [row.a_to_c, row.b_to_c, row.naive, row.selective, row.oracle];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EngineError::MalformedFixture(row.id.clone()));
        }
        let mut found = Vec::new();
        let expected_oracle = [0.0, row.a_to_c, row.b_to_c, row.naive].into_iter().fold(f64::MIN, f64::max);
        if (row.oracle - expected_oracle).abs() > FIXTURE_TOLERANCE {
            found.push(FixtureViolation { row_id: row.id.clone(), kind: ViolationKind::Oracle, expected: expected_oracle, found: row.oracle });
        }
        let options = [0.0, row.a_to_c, row.b_to_c, row.naive];
        let nearest = options
            .into_iter()
            .min_by(|a, b| (a - row.selective).abs().total_cmp(&(b - row.selective).abs()))
            .expect("non-empty");
        if (nearest - row.selective).abs() > FIXTURE_TOLERANCE {
            found.push(FixtureViolation { row_id: row.id.clone(), kind: ViolationKind::Selective, expected: nearest, found: row.selective });
        }
        if exceptions.contains(&row.id) {
            report.excepted.extend(found);
        } else {
            report.violations.extend(found);
        }
        report.rows_checked += 1;
    }
    Ok(report)
}
