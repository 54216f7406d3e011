//! Command implementations behind the `seqft` binary.
//!
//! Every command returns a typed result or a [`CliError`] carrying a stable
//! machine-readable code and the process exit status (0 ok, 1 verification
//! failure, 2 I/O or configuration error).

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backends::{serve_worker, Backend, ExternalBackend, ParameterState, SyntheticBackend, TaskSpec, TrainerEndpoint, TransferEffectMatrix};
use crate::benchmark::{
    build_triplets, generate_synthetic_benchmark, label_consistency, load_fixtures, measure_pair, reproduce_table2,
    BenchmarkError, BenchmarkFile, BenchmarkTask, CellCheck, GeneratedBenchmark, LabelMismatch, Shortfall,
    SyntheticBenchmarkSpec, TransferRecord, TripletConfig, LABEL_THRESHOLD,
};
use crate::engine::{fixture_oracle_check, Engine, FixtureCheckReport, Strategy, StrategyKind, DEFAULT_ORACLE_DEPTH};
use crate::metrics::{median_of, perf_auc, LearningCurve};
use crate::seed::derive_seed;
use crate::selector::{gbdt_fit, FitTrace, GbdtModel, GbdtParams, SelectiveConfig, SelectorError, SelectorModelFile};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const DEFAULT_BUDGET: u64 = 10_000;
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize)]
#[error("{code}: {message}")]
pub struct CliError {
    #[serde(rename = "error")]
    pub code: &'static str,
    pub message: String,
    #[serde(skip)]
    pub exit: i32,
}

impl CliError {
    pub fn config(code: &'static str, message: impl ToString) -> Self {
        Self { code, message: message.to_string(), exit: EXIT_IO }
    }

    pub fn verification(message: impl ToString) -> Self {
        Self { code: "verification_failed", message: message.to_string(), exit: EXIT_VERIFY }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("error serializes")
    }
}

fn read_text(path: &Path, missing: &'static str) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::config(missing, format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::config("write_failed", format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_text(path, &text)
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::config("thread_pool", e))?;
    Ok(pool.install(f))
}

/// Which training backend to use, as stored in a JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Synthetic {
        effects: TransferEffectMatrix,
        /// Entries per parameter group of the all-zero root state.
        root_dim: usize,
        #[serde(default)]
        noise_sigma: f64,
    },
    External {
        endpoint: TrainerEndpoint,
        /// Root state file; an all-zero state of `root_dim` when absent.
        #[serde(default)]
        root_state: Option<PathBuf>,
        #[serde(default)]
        root_dim: usize,
    },
}

impl BackendConfig {
    pub fn synthetic(generated: &GeneratedBenchmark) -> Self {
        BackendConfig::Synthetic {
            effects: generated.effects.clone(),
            root_dim: generated.root.group(crate::backends::ParamGroup::Softmax).len(),
            noise_sigma: generated.noise_sigma,
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = read_text(path, "backend_config_not_found")?;
        serde_json::from_str(&text).map_err(|e| CliError::config("backend_config_invalid", e))
    }

    pub fn build(&self) -> Result<Box<dyn Backend>, CliError> {
        Ok(match self {
            BackendConfig::Synthetic { effects, root_dim, noise_sigma } => {
                Box::new(SyntheticBackend::new(effects.clone(), ParameterState::zeros(*root_dim)).with_noise(*noise_sigma))
            }
            BackendConfig::External { endpoint, root_state, root_dim } => {
                let root = match root_state {
                    Some(p) => ParameterState::load(p).map_err(|e| CliError::config("backend_config_invalid", e))?,
                    None => ParameterState::zeros(*root_dim),
                };
                Box::new(ExternalBackend::new(endpoint.clone(), root))
            }
        })
    }
}

fn load_benchmark(path: &Path) -> Result<BenchmarkFile, CliError> {
    if !path.exists() {
        return Err(CliError::config("benchmark_not_found", path.display()));
    }
    BenchmarkFile::load(path).map_err(|e| CliError::config("benchmark_invalid", e))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------- run

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub triplet: String,
    pub config: TripletConfig,
    pub strategy: StrategyKind,
    /// Initialization checkpoint of each task, in sequence order.
    pub init_ids: Vec<String>,
    /// Lineage of the checkpoint the final task started from.
    pub chosen_path: Vec<String>,
    pub perf_auc: f64,
    pub baseline_perf_auc: f64,
    pub relative_pct: f64,
    pub curve_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigMedian {
    pub config: TripletConfig,
    pub n: usize,
    pub median_relative_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredCurve {
    pub id: String,
    pub metric_id: String,
    pub lower_bound: f64,
    pub points: Vec<(u64, f64)>,
}

/// Result of `run`. Deterministic in its inputs; wall-clock data goes to a
/// separate [`RunMetadata`] file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub report_version: u32,
    pub tool_version: String,
    pub benchmark: BenchmarkRef,
    pub strategy: StrategyKind,
    pub seed: u64,
    pub budget: u64,
    pub rows: Vec<ReportRow>,
    pub medians: Vec<ConfigMedian>,
    pub curves: Vec<StoredCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub jobs: Option<usize>,
}

/// Per-config medians of `relative_pct`, in appendix table order.
pub fn config_medians(rows: &[ReportRow]) -> Vec<ConfigMedian> {
    TripletConfig::ALL
        .iter()
        .filter_map(|&config| {
            let values: Vec<f64> = rows.iter().filter(|r| r.config == config).map(|r| r.relative_pct).collect();
            median_of(&values).ok().map(|m| ConfigMedian { config, n: values.len(), median_relative_pct: m })
        })
        .collect()
}

impl RunReport {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = read_text(path, "report_not_found")?;
        serde_json::from_str(&text).map_err(|e| CliError::config("report_invalid", e))
    }

    /// True when the summary block equals a recomputation from the rows.
    pub fn summary_consistent(&self) -> bool {
        config_medians(&self.rows) == self.medians
    }

    pub fn curve(&self, id: &str) -> Option<&StoredCurve> {
        self.curves.iter().find(|c| c.id == id)
    }

    pub fn metadata_path(out: &Path) -> PathBuf {
        let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".meta.json");
        out.with_file_name(name)
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub benchmark: PathBuf,
    pub strategy: StrategyKind,
    pub backend: PathBuf,
    /// Selector model; required by the selective strategy.
    pub model: Option<PathBuf>,
    pub seed: u64,
    pub budget: u64,
    pub jobs: Option<usize>,
    pub charge_probes: bool,
    pub max_depth: usize,
    pub out: Option<PathBuf>,
}

impl RunOptions {
    pub fn new(benchmark: impl Into<PathBuf>, strategy: StrategyKind, backend: impl Into<PathBuf>) -> Self {
        Self {
            benchmark: benchmark.into(),
            strategy,
            backend: backend.into(),
            model: None,
            seed: 0,
            budget: DEFAULT_BUDGET,
            jobs: None,
            charge_probes: false,
            max_depth: DEFAULT_ORACLE_DEPTH,
            out: None,
        }
    }
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

/// Runs one strategy over every triplet of a benchmark.
pub fn cmd_run(opts: &RunOptions) -> Result<RunReport, CliError> {
    let started = now_ms();
    let bench_bytes = fs::read(&opts.benchmark)
        .map_err(|e| CliError::config("benchmark_not_found", format!("{}: {e}", opts.benchmark.display())))?;
    let bench = load_benchmark(&opts.benchmark)?;
    let backend = BackendConfig::load(&opts.backend)?.build()?;
    let model = match (opts.strategy, &opts.model) {
        (StrategyKind::Selective, None) => {
            return Err(CliError::config("model_required", "the selective strategy needs --model"))
        }
        (StrategyKind::Selective, Some(p)) => {
            Some(SelectorModelFile::load(p).map_err(|e| CliError::config("model_invalid", e))?)
        }
        _ => None,
    };
    let config = SelectiveConfig { charge_probes: opts.charge_probes, ..Default::default() };
    let strategy = match opts.strategy {
        StrategyKind::Independent => Strategy::Independent,
        StrategyKind::Naive => Strategy::Naive,
        StrategyKind::Selective => Strategy::Selective { discriminator: model.as_ref().expect("loaded above"), config },
        StrategyKind::Oracle => Strategy::Oracle { max_depth: opts.max_depth },
    };
    let engine = Engine::new(backend.as_ref()).with_families(bench.families());

    let results = with_pool(opts.jobs, || {
        bench
            .triplets
            .par_iter()
            .map(|t| {
                let tasks: Vec<TaskSpec> = [&t.a, &t.b, &t.c]
                    .iter()
                    .map(|id| bench.task(id).ok_or_else(|| CliError::config("benchmark_invalid", format!("unknown task {id}"))))
                    .collect::<Result<_, _>>()?;
                let run = engine
                    .run_sequence(&tasks, strategy, opts.budget, derive_seed(opts.seed, &t.id()))
                    .map_err(|e| CliError::config("run_failed", format!("{}: {e}", t.id())))?;
                let last = run.outcomes.last().expect("three outcomes");
                let chosen_path = run.zoo.get(&last.init_id).map(|r| r.lineage.clone()).unwrap_or_default();
                let curve_ref = format!("{}/{}", t.id(), opts.strategy);
                let row = ReportRow {
                    triplet: t.id(),
                    config: t.config,
                    strategy: opts.strategy,
                    init_ids: run.outcomes.iter().map(|o| o.init_id.clone()).collect(),
                    chosen_path,
                    perf_auc: last.perf.perf_auc,
                    baseline_perf_auc: last.baseline.perf_auc,
                    relative_pct: 100.0 * last.relative,
                    curve_ref: curve_ref.clone(),
                };
                let curve = StoredCurve {
                    id: curve_ref,
                    metric_id: last.curve.metric_id.clone(),
                    lower_bound: last.curve.lower_bound,
                    points: last.curve.points().to_vec(),
                };
                Ok((row, curve))
            })
            .collect::<Result<Vec<_>, CliError>>()
    })??;
    let (rows, curves): (Vec<ReportRow>, Vec<StoredCurve>) = results.into_iter().unzip();
    let report = RunReport {
        report_version: REPORT_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        benchmark: BenchmarkRef { path: opts.benchmark.display().to_string(), sha256: sha256_hex(&bench_bytes) },
        strategy: opts.strategy,
        seed: opts.seed,
        budget: opts.budget,
        medians: config_medians(&rows),
        rows,
        curves,
    };
    if let Some(out) = &opts.out {
        write_json(out, &report)?;
        let meta = RunMetadata { started_unix_ms: started, finished_unix_ms: now_ms(), jobs: opts.jobs };
        write_json(&RunReport::metadata_path(out), &meta)?;
    }
    Ok(report)
}

// ---------------------------------------------------------------- verify-fixtures

pub const STRATEGY_COLUMNS: [&str; 3] = ["naive", "selective", "oracle"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub cell: CellCheck,
    /// Listed in the exceptions manifest.
    pub known: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub rows: usize,
    pub tasks: usize,
    pub evaluated_pair_count: usize,
    /// All median cells, pairwise columns included.
    pub cells_matched: usize,
    pub cells_total: usize,
    /// Cells of the naive, selective and oracle columns only.
    pub strategy_cells_matched: usize,
    pub strategy_cells_total: usize,
    pub cells: Vec<CellCheck>,
    pub discrepancies: Vec<Discrepancy>,
    pub oracle: FixtureCheckReport,
    pub label_mismatches: Vec<LabelMismatch>,
    pub passed: bool,
}

impl VerifyReport {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            EXIT_OK
        } else {
            EXIT_VERIFY
        }
    }
}

/// Recomputes the median table from the per-triplet rows and checks every
/// row's oracle/selective consistency and pairwise labels.
pub fn cmd_verify_fixtures(dir: &Path) -> Result<VerifyReport, CliError> {
    if !dir.is_dir() {
        return Err(CliError::config("fixtures_not_found", dir.display()));
    }
    let fx = load_fixtures(dir).map_err(|e| match e {
        BenchmarkError::Io(_) => CliError::config("fixtures_not_found", e),
        BenchmarkError::Checksum(_) => CliError::config("fixture_checksum_mismatch", e),
        other => CliError::config("fixture_schema_error", other),
    })?;
    let cells = reproduce_table2(&fx.rows, &fx.table2).map_err(|e| CliError::config("fixture_schema_error", e))?;
    let discrepancies: Vec<Discrepancy> = cells
        .iter()
        .filter(|c| !c.matches)
        .map(|c| Discrepancy { cell: c.clone(), known: fx.exceptions.table2_discrepancies.iter().any(|d| d.covers(c)) })
        .collect();
    let oracle = fixture_oracle_check(&fx.rows, &fx.exceptions.oracle_exceptions.iter().cloned().collect())
        .map_err(|e| CliError::config("fixture_schema_error", e))?;
    let label_mismatches = label_consistency(&fx.rows, &fx.exceptions);
    let is_strategy = |c: &&CellCheck| STRATEGY_COLUMNS.contains(&c.column.as_str());
    let passed = discrepancies.iter().all(|d| d.known) && oracle.passed() && label_mismatches.iter().all(|m| m.excepted);
    Ok(VerifyReport {
        rows: fx.rows.len(),
        tasks: fx.registry.tasks.len(),
        evaluated_pair_count: fx.registry.evaluated_pair_count,
        cells_matched: cells.iter().filter(|c| c.matches).count(),
        cells_total: cells.len(),
        strategy_cells_matched: cells.iter().filter(is_strategy).filter(|c| c.matches).count(),
        strategy_cells_total: cells.iter().filter(is_strategy).count(),
        cells,
        discrepancies,
        oracle,
        label_mismatches,
        passed,
    })
}

// ---------------------------------------------------------------- train-selector

#[derive(Debug, Clone)]
pub struct TrainSelectorOptions {
    pub benchmark: PathBuf,
    pub backend: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub budget: u64,
    pub jobs: Option<usize>,
    pub params: GbdtParams,
}

/// Featurizes every positive and negative pair record of the benchmark.
pub fn selector_training_set(
    bench: &BenchmarkFile,
    backend: &dyn Backend,
    budget: u64,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, Vec<bool>), CliError> {
    use crate::benchmark::Label;
    let engine = Engine::new(backend).with_families(bench.families());
    let labeled: Vec<(&TransferRecord, bool)> = bench
        .records
        .iter()
        .filter_map(|r| match r.label {
            Label::Positive => Some((r, true)),
            Label::Negative => Some((r, false)),
            _ => None,
        })
        .collect();
    let rows = labeled
        .par_iter()
        .map(|(r, _)| {
            let (src, tgt) = match (bench.task(&r.source_task), bench.task(&r.target_task)) {
                (Some(s), Some(t)) => (s, t),
                _ => return Err(CliError::config("benchmark_invalid", format!("record {}->{}", r.source_task, r.target_task))),
            };
            let seed = derive_seed(seed, &format!("{}->{}", r.source_task, r.target_task));
            engine
                .pair_features(&src, &tgt, budget, seed)
                .map(|f| f.as_slice().to_vec())
                .map_err(|e| CliError::config("run_failed", e))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((rows, labeled.iter().map(|(_, y)| *y).collect()))
}

pub fn cmd_train_selector(opts: &TrainSelectorOptions) -> Result<(GbdtModel, FitTrace), CliError> {
    let bench = load_benchmark(&opts.benchmark)?;
    let backend = BackendConfig::load(&opts.backend)?.build()?;
    let (x, y) = with_pool(opts.jobs, || selector_training_set(&bench, backend.as_ref(), opts.budget, opts.seed))??;
    let (model, trace) = gbdt_fit(&x, &y, &opts.params, opts.seed).map_err(|e| match e {
        SelectorError::SingleClass => CliError::config("single_class_training_data", e),
        other => CliError::config("training_failed", other),
    })?;
    write_text(&opts.out, &SelectorModelFile::new(model.clone()).to_json())?;
    Ok((model, trace))
}

// ---------------------------------------------------------------- export-curves

pub const CURVE_HEADER: [&str; 4] = ["triplet", "strategy", "step", "perf"];

/// Long-format best-so-far curves of every report row. Returns the data row count.
pub fn cmd_export_curves(report: &RunReport, out: &Path) -> Result<usize, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CURVE_HEADER).expect("in-memory write");
    let mut n = 0;
    for row in &report.rows {
        let curve = report
            .curve(&row.curve_ref)
            .ok_or_else(|| CliError::config("dangling_curve_reference", &row.curve_ref))?;
        let mut best = f64::INFINITY;
        for &(step, v) in &curve.points {
            best = best.min(v);
            w.write_record([row.triplet.clone(), row.strategy.to_string(), step.to_string(), best.to_string()])
                .expect("in-memory write");
            n += 1;
        }
    }
    let bytes = w.into_inner().map_err(|e| CliError::config("write_failed", e))?;
    fs::write(out, bytes).map_err(|e| CliError::config("write_failed", format!("{}: {e}", out.display())))?;
    Ok(n)
}

/// Reads an exported curve file back, keyed by `(triplet, strategy)`.
pub fn import_curves(path: &Path) -> Result<BTreeMap<(String, String), LearningCurve>, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::config("curves_not_found", e))?;
    let mut points: BTreeMap<(String, String), Vec<(u64, f64)>> = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| CliError::config("curves_invalid", e))?;
        let bad = || CliError::config("curves_invalid", format!("{rec:?}"));
        let step: u64 = rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let perf: f64 = rec.get(3).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        points.entry((rec[0].to_string(), rec[1].to_string())).or_default().push((step, perf));
    }
    points
        .into_iter()
        .map(|(k, p)| {
            LearningCurve::new(p, "perf", f64::NEG_INFINITY)
                .map(|c| (k, c))
                .map_err(|e| CliError::config("curves_invalid", e))
        })
        .collect()
}

/// PerfAUC of an imported curve, for round-trip checks.
pub fn imported_perf_auc(curve: &LearningCurve, budget: u64) -> Result<f64, CliError> {
    perf_auc(curve, budget).map_err(|e| CliError::config("curves_invalid", e))
}

// ---------------------------------------------------------------- label-pairs

#[derive(Debug, Clone)]
pub enum PairSource {
    /// Existing records (labels are recomputed).
    Records(PathBuf),
    /// Measure every ordered task pair of a benchmark with a backend.
    Measure { benchmark: PathBuf, backend: PathBuf, trials: usize },
}

#[derive(Debug, Clone)]
pub struct LabelPairsOptions {
    pub source: PairSource,
    pub threshold: f64,
    pub seed: u64,
    pub budget: u64,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
}

pub fn cmd_label_pairs(opts: &LabelPairsOptions) -> Result<Vec<TransferRecord>, CliError> {
    let raw: Vec<TransferRecord> = match &opts.source {
        PairSource::Records(path) => {
            let text = read_text(path, "records_not_found")?;
            serde_json::from_str(&text).map_err(|e| CliError::config("records_invalid", e))?
        }
        PairSource::Measure { benchmark, backend, trials } => {
            let bench = load_benchmark(benchmark)?;
            let backend = BackendConfig::load(backend)?.build()?;
            let tasks: Vec<TaskSpec> = bench.tasks.iter().map(BenchmarkTask::to_spec).collect();
            let seeds: Vec<u64> = (0..*trials).map(|k| derive_seed(opts.seed, &format!("trial-{k}"))).collect();
            let pairs: Vec<(&TaskSpec, &TaskSpec)> =
                tasks.iter().flat_map(|s| tasks.iter().filter(move |t| t.task_id != s.task_id).map(move |t| (s, t))).collect();
            with_pool(opts.jobs, || {
                pairs
                    .par_iter()
                    .map(|(s, t)| measure_pair(backend.as_ref(), s, t, opts.budget, &seeds))
                    .collect::<Result<Vec<_>, _>>()
            })?
            .map_err(|e| CliError::config("run_failed", e))?
        }
    };
    let labeled = raw
        .iter()
        .map(|r| r.labeled(opts.threshold))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::config("records_invalid", e))?;
    if let Some(out) = &opts.out {
        write_json(out, &labeled)?;
    }
    Ok(labeled)
}

// ---------------------------------------------------------------- build-benchmark

#[derive(Debug, Clone)]
pub enum BenchmarkSource {
    /// Labeled pair records plus a JSON list of tasks.
    Records { records: PathBuf, tasks: PathBuf },
    /// Generate tasks, effects and measured records for the synthetic learner.
    Synthetic(SyntheticBenchmarkSpec),
}

#[derive(Debug, Clone)]
pub struct BuildBenchmarkOptions {
    pub source: BenchmarkSource,
    pub per_config_targets: usize,
    pub pairs_per_target: usize,
    pub seed: u64,
    pub out: PathBuf,
    /// Where to write the matching backend config (synthetic source only).
    pub backend_out: Option<PathBuf>,
}

pub fn cmd_build_benchmark(opts: &BuildBenchmarkOptions) -> Result<(BenchmarkFile, Vec<Shortfall>), CliError> {
    let (bench, shortfalls) = match &opts.source {
        BenchmarkSource::Records { records, tasks } => {
            let records: Vec<TransferRecord> = serde_json::from_str(&read_text(records, "records_not_found")?)
                .map_err(|e| CliError::config("records_invalid", e))?;
            let records = records
                .iter()
                .map(|r| if r.label == crate::benchmark::Label::Unlabeled { r.labeled(LABEL_THRESHOLD) } else { Ok(r.clone()) })
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CliError::config("records_invalid", e))?;
            let tasks: Vec<BenchmarkTask> = serde_json::from_str(&read_text(tasks, "tasks_not_found")?)
                .map_err(|e| CliError::config("tasks_invalid", e))?;
            let build = build_triplets(&records, opts.per_config_targets, opts.pairs_per_target, opts.seed);
            let bench = BenchmarkFile::new(tasks, build.triplets, records);
            bench.validate().map_err(|e| CliError::config("benchmark_invalid", e))?;
            (bench, build.shortfalls)
        }
        BenchmarkSource::Synthetic(spec) => {
            let spec = SyntheticBenchmarkSpec {
                per_config_targets: opts.per_config_targets,
                pairs_per_target: opts.pairs_per_target,
                seed: opts.seed,
                ..spec.clone()
            };
            let generated = generate_synthetic_benchmark(&spec).map_err(|e| CliError::config("generation_failed", e))?;
            if let Some(path) = &opts.backend_out {
                write_json(path, &BackendConfig::synthetic(&generated))?;
            }
            (generated.benchmark, generated.shortfalls)
        }
    };
    write_text(&opts.out, &bench.to_json())?;
    Ok((bench, shortfalls))
}

// ---------------------------------------------------------------- worker

/// Serves the wire protocol on `input`/`output` with a synthetic backend.
pub fn cmd_synthetic_worker<R: BufRead, W: Write>(
    benchmark: &Path,
    backend: &Path,
    working_dir: &Path,
    input: R,
    output: W,
) -> Result<usize, CliError> {
    let bench = load_benchmark(benchmark)?;
    let config = BackendConfig::load(backend)?;
    if !matches!(config, BackendConfig::Synthetic { .. }) {
        return Err(CliError::config("backend_config_invalid", "worker needs a synthetic backend config"));
    }
    let backend = config.build()?;
    let tasks: HashMap<String, TaskSpec> = bench.tasks.iter().map(|t| (t.task_id.clone(), t.to_spec())).collect();
    serve_worker(backend.as_ref(), &tasks, input, output, working_dir).map_err(|e| CliError::config("worker_failed", e))
}
