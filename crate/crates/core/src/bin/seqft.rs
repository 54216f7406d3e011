use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use seqft::benchmark::SyntheticBenchmarkSpec;
use seqft::cli::{self, CliError, DEFAULT_BUDGET};
use seqft::engine::{StrategyKind, DEFAULT_ORACLE_DEPTH};
use seqft::selector::GbdtParams;

#[derive(Parser)]
#[command(name = "seqft", version, about = "Sequential fine-tuning harness")]
struct Cli {
    /// Base seed; all randomness is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Update budget B_max per task.
    #[arg(long, global = true, default_value_t = DEFAULT_BUDGET)]
    budget: u64,
    /// Output file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Label pair records by the +/- threshold rule (or measure them first).
    LabelPairs {
        /// JSON list of transfer records.
        #[arg(long, conflicts_with = "benchmark")]
        records: Option<PathBuf>,
        /// Measure all ordered task pairs of this benchmark instead.
        #[arg(long, requires = "backend")]
        benchmark: Option<PathBuf>,
        #[arg(long)]
        backend: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        trials: usize,
        #[arg(long, default_value_t = seqft::benchmark::LABEL_THRESHOLD)]
        threshold: f64,
    },
    /// Sample diagnostic triplets into a benchmark file.
    BuildBenchmark {
        #[arg(long, requires = "tasks", required_unless_present = "synthetic")]
        records: Option<PathBuf>,
        /// JSON list of tasks ({task_id, family, metric}).
        #[arg(long)]
        tasks: Option<PathBuf>,
        /// Generate a benchmark for the synthetic learner.
        #[arg(long, conflicts_with = "records")]
        synthetic: bool,
        #[arg(long, default_value_t = 18)]
        n_tasks: usize,
        #[arg(long, default_value_t = 4)]
        n_families: usize,
        /// Write the matching synthetic backend config here.
        #[arg(long)]
        backend_out: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        per_config_targets: usize,
        #[arg(long, default_value_t = 4)]
        pairs_per_target: usize,
    },
    /// Run one strategy over every triplet of a benchmark.
    Run {
        #[arg(long)]
        benchmark: PathBuf,
        #[arg(long, value_parser = parse_strategy)]
        strategy: StrategyKind,
        #[arg(long)]
        backend: PathBuf,
        /// Selector model (selective strategy).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Charge probe updates against the selected run.
        #[arg(long)]
        charge_probes: bool,
        #[arg(long, default_value_t = DEFAULT_ORACLE_DEPTH)]
        max_depth: usize,
    },
    /// Fit the checkpoint selector on a benchmark's labeled pairs.
    TrainSelector {
        #[arg(long)]
        benchmark: PathBuf,
        #[arg(long)]
        backend: PathBuf,
        #[arg(long, default_value_t = 100)]
        rounds: usize,
        #[arg(long, default_value_t = 3)]
        max_depth: usize,
        #[arg(long, default_value_t = 0.1)]
        learning_rate: f64,
    },
    /// Recompute the median table and check the shipped appendix rows.
    VerifyFixtures {
        #[arg(long, default_value = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures"))]
        fixtures: PathBuf,
    },
    /// Write best-so-far curves of a run report as long-format CSV.
    ExportCurves {
        #[arg(long)]
        report: PathBuf,
    },
    /// Serve the worker protocol on stdin/stdout with the synthetic learner.
    #[command(hide = true)]
    SyntheticWorker {
        #[arg(long)]
        benchmark: PathBuf,
        #[arg(long)]
        backend: PathBuf,
        #[arg(long, default_value = ".")]
        working_dir: PathBuf,
    },
}

fn parse_strategy(s: &str) -> Result<StrategyKind, String> {
    s.parse()
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn need_out(out: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    out.clone().ok_or_else(|| CliError::config("missing_out", "--out is required"))
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::LabelPairs { records, benchmark, backend, trials, threshold } => {
            let source = match (records, benchmark, backend) {
                (Some(r), _, _) => cli::PairSource::Records(r),
                (None, Some(benchmark), Some(backend)) => cli::PairSource::Measure { benchmark, backend, trials },
                _ => return Err(CliError::config("missing_input", "give --records or --benchmark with --backend")),
            };
            let opts = cli::LabelPairsOptions { source, threshold, seed: cli.seed, budget: cli.budget, jobs: cli.jobs, out: cli.out.clone() };
            let labeled = cli::cmd_label_pairs(&opts)?;
            if cli.out.is_none() {
                print_json(&labeled);
            }
        }
        Command::BuildBenchmark { records, tasks, synthetic, n_tasks, n_families, backend_out, per_config_targets, pairs_per_target } => {
            let source = if synthetic {
                cli::BenchmarkSource::Synthetic(SyntheticBenchmarkSpec { n_tasks, n_families, budget: cli.budget, ..Default::default() })
            } else {
                match (records, tasks) {
                    (Some(records), Some(tasks)) => cli::BenchmarkSource::Records { records, tasks },
                    _ => return Err(CliError::config("missing_input", "give --records and --tasks, or --synthetic")),
                }
            };
            let opts = cli::BuildBenchmarkOptions {
                source,
                per_config_targets,
                pairs_per_target,
                seed: cli.seed,
                out: need_out(&cli.out)?,
                backend_out,
            };
            let (bench, shortfalls) = cli::cmd_build_benchmark(&opts)?;
            for s in &shortfalls {
                eprintln!("warning: {} has {} of {} triplets", s.config, s.got, s.wanted);
            }
            println!("{} triplets, {} tasks, {} records", bench.triplets.len(), bench.tasks.len(), bench.records.len());
        }
        Command::Run { benchmark, strategy, backend, model, charge_probes, max_depth } => {
            let opts = cli::RunOptions {
                model,
                seed: cli.seed,
                budget: cli.budget,
                jobs: cli.jobs,
                charge_probes,
                max_depth,
                out: cli.out.clone(),
                ..cli::RunOptions::new(benchmark, strategy, backend)
            };
            let report = cli::cmd_run(&opts)?;
            if cli.out.is_none() {
                print_json(&report);
            } else {
                for m in &report.medians {
                    println!("{:<8} n={:<3} median {:.3}%", m.config, m.n, m.median_relative_pct);
                }
            }
        }
        Command::TrainSelector { benchmark, backend, rounds, max_depth, learning_rate } => {
            let params = GbdtParams { n_trees: rounds, max_depth, learning_rate, ..Default::default() };
            let opts = cli::TrainSelectorOptions {
                benchmark,
                backend,
                out: need_out(&cli.out)?,
                seed: cli.seed,
                budget: cli.budget,
                jobs: cli.jobs,
                params,
            };
            let (_, trace) = cli::cmd_train_selector(&opts)?;
            for (round, loss) in trace.losses.iter().enumerate() {
                println!("round {round:>3} loss {loss:.6}");
            }
        }
        Command::VerifyFixtures { fixtures } => {
            let report = cli::cmd_verify_fixtures(&fixtures)?;
            match &cli.out {
                Some(out) => std::fs::write(out, serde_json::to_string_pretty(&report).expect("serializable"))
                    .map_err(|e| CliError::config("write_failed", e))?,
                None => print_json(&report),
            }
            eprintln!(
                "{}/{} strategy median cells match ({}/{} with pairwise columns); {} oracle violations; {}",
                report.strategy_cells_matched,
                report.strategy_cells_total,
                report.cells_matched,
                report.cells_total,
                report.oracle.violations.len(),
                if report.passed { "ok" } else { "FAILED" }
            );
            return Ok(report.exit_code());
        }
        Command::ExportCurves { report } => {
            let report = cli::RunReport::load(&report)?;
            let n = cli::cmd_export_curves(&report, &need_out(&cli.out)?)?;
            println!("{n} curve points");
        }
        Command::SyntheticWorker { benchmark, backend, working_dir } => {
            let stdin = io::stdin();
            cli::cmd_synthetic_worker(&benchmark, &backend, &working_dir, stdin.lock(), io::stdout())?;
        }
    }
    Ok(cli::EXIT_OK)
}

fn main() -> ExitCode {
    let code = match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit
        }
    };
    ExitCode::from(code as u8)
}
