//! Acceptance checks, one line per criterion. Run with `cargo test --test acceptance`.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use seqft::backends::{Backend, BackendError, ContractViolation};
use seqft::benchmark::{generate_synthetic_benchmark, Polarity, SyntheticBenchmarkSpec, TripletConfig};
use seqft::cli::cmd_verify_fixtures;
use seqft::engine::{Engine, HindsightDiscriminator, Strategy};
use seqft::metrics::{best_perf, perf_auc, LearningCurve};
use seqft::seed::derive_seed;
use seqft::selector::{gbdt_fit, GbdtParams, SelectiveConfig};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(started: Instant, limit: Duration) -> Result<(), String> {
    let took = started.elapsed();
    ensure(took < limit, || format!("took {took:?}, limit {limit:?}"))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Rows of one appendix table: `[a_to_c, b_to_c, naive, selective, oracle]`.
fn read_table(k: usize) -> Vec<[f64; 5]> {
    let mut r = csv::Reader::from_path(fixtures_dir().join(format!("table_c{k}.csv"))).unwrap();
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            std::array::from_fn(|i| rec[i].trim().parse().unwrap())
        })
        .collect()
}

fn ac1() -> Check {
    let started = Instant::now();
    let report = cmd_verify_fixtures(&fixtures_dir()).map_err(|e| e.message)?;
    within(started, Duration::from_secs(1))?;

    let mut t2 = csv::Reader::from_path(fixtures_dir().join("table2.csv")).unwrap();
    let mut matched = 0;
    let mut mismatched = Vec::new();
    for (k, rec) in t2.records().enumerate() {
        let rec = rec.unwrap();
        let rows = read_table(k + 1);
        for col in 2..5 {
            let printed = rec[col + 1].trim();
            let places = printed.split_once('.').map_or(0, |(_, f)| f.len() as i32);
            let m = median(rows.iter().map(|r| r[col]).collect());
            if (m - printed.parse::<f64>().unwrap()).abs() <= 0.5 * 10f64.powi(-places) + 0.005 + 1e-9 {
                matched += 1;
            } else {
                mismatched.push(format!("{}:{col}", &rec[0]));
            }
        }
    }
    ensure(matched >= 23, || format!("only {matched}/24 strategy cells match"))?;
    ensure(report.strategy_cells_matched == matched && report.strategy_cells_total == 24, || {
        format!("library says {}/{}, oracle says {matched}/24", report.strategy_cells_matched, report.strategy_cells_total)
    })?;
    let listed = report.discrepancies.len();
    ensure(listed == report.cells_total - report.cells_matched, || format!("{listed} discrepancies listed"))?;
    ensure(report.passed, || "verify-fixtures reported failure".into())?;
    Ok(format!(
        "{matched}/24 strategy cells ({}/{} overall), {listed} listed discrepancy, {:?}",
        report.cells_matched,
        report.cells_total,
        started.elapsed()
    ))
}

fn ac2() -> Check {
    let started = Instant::now();
    let report = cmd_verify_fixtures(&fixtures_dir()).map_err(|e| e.message)?;
    let ex: serde_json::Value = serde_json::from_str(&fs::read_to_string(fixtures_dir().join("exceptions.json")).unwrap()).unwrap();
    let exempt: BTreeSet<String> =
        ex["oracle_exceptions"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
    let mut checked = 0;
    let mut bad = Vec::new();
    for k in 1..=8 {
        for (i, [a, b, naive, selective, oracle]) in read_table(k).into_iter().enumerate() {
            let id = format!("C.{k}#{}", i + 1);
            checked += 1;
            if exempt.contains(&id) {
                continue;
            }
            let expected = [0.0, a, b, naive].into_iter().fold(f64::MIN, f64::max);
            let oracle_ok = (oracle - expected).abs() <= 0.005 + 1e-9;
            let selective_ok = [0.0, a, b, naive].iter().any(|v| (selective - v).abs() <= 0.005 + 1e-9);
            if !(oracle_ok && selective_ok) {
                bad.push(id);
            }
        }
    }
    within(started, Duration::from_secs(1))?;
    ensure(checked == 128, || format!("{checked} rows"))?;
    ensure(bad.is_empty(), || format!("violations {bad:?}"))?;
    ensure(report.oracle.violations.is_empty() && report.oracle.rows_checked == 128, || {
        format!("library reports {} violations", report.oracle.violations.len())
    })?;
    Ok(format!("128 rows, {} exempt, 0 violations", exempt.len()))
}

fn ac3() -> Check {
    let c = 0.731;
    let flat = LearningCurve::new(vec![(0, c), (10, c), (10_000, c)], "loss", 0.0).unwrap();
    let got = perf_auc(&flat, 10_000).unwrap();
    ensure((got - c * 10_000f64.ln()).abs() <= 1e-12, || format!("constant: {got}"))?;

    let step = LearningCurve::new(vec![(0, 1.0), (100, 0.5)], "loss", 0.0).unwrap();
    let exact = perf_auc(&step, 10_000).unwrap();
    ensure((exact - 6.90776).abs() < 5e-6, || format!("step: {exact}"))?;
    // Midpoint rule over b in [0, ln 1e4]; the jump at ln 100 sits on a cell edge.
    let cells = 1_000_000;
    let h = 10_000f64.ln() / cells as f64;
    let numeric: f64 = (0..cells)
        .map(|k| {
            let b = (k as f64 + 0.5) * h;
            best_perf(&step, b.exp().floor() as u64).unwrap()
        })
        .sum::<f64>()
        * h;
    ensure((exact - numeric).abs() <= 1e-9, || format!("exact {exact} vs numeric {numeric}"))?;
    Ok(format!("constant exact; step {exact:.5} vs midpoint |d| = {:.1e}", (exact - numeric).abs()))
}

fn ac4() -> Check {
    let started = Instant::now();
    let spec = SyntheticBenchmarkSpec::default();
    let g = generate_synthetic_benchmark(&spec).map_err(|e| e.to_string())?;
    let bench = &g.benchmark;
    for config in TripletConfig::ALL {
        let n = bench.triplets.iter().filter(|t| t.config == config).count();
        ensure(n >= 2, || format!("{config}: only {n} triplets"))?;
    }
    let backend = g.backend();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let rows = pool.install(|| -> Result<Vec<(TripletConfig, f64, f64, f64)>, String> {
        let engine = Engine::new(&backend).with_families(bench.families());
        let mut rows = Vec::new();
        for t in &bench.triplets {
            let tasks: Vec<_> = [&t.a, &t.b, &t.c].iter().map(|id| bench.task(id).unwrap()).collect();
            let seed = derive_seed(spec.seed, &t.id());
            let last = |s: Strategy| -> Result<f64, String> {
                let run = engine.run_sequence(&tasks, s, spec.budget, seed).map_err(|e| e.to_string())?;
                Ok(run.outcomes.last().unwrap().relative)
            };
            let hindsight = HindsightDiscriminator { engine: &engine, budget: spec.budget, seed, margin: 0.0 };
            let oracle = last(Strategy::Oracle { max_depth: 4 })?;
            let naive = last(Strategy::Naive)?;
            let selective = last(Strategy::Selective { discriminator: &hindsight, config: SelectiveConfig::default() })?;
            rows.push((t.config, oracle, naive, selective));
        }
        Ok(rows)
    })?;
    within(started, Duration::from_secs(30))?;

    for (i, &(config, oracle, naive, selective)) in rows.iter().enumerate() {
        let id = bench.triplets[i].id();
        ensure(oracle >= naive.max(selective).max(0.0) - 1e-12, || format!("(a) {id}: oracle {oracle} naive {naive} sel {selective}"))?;
        ensure(selective >= 0.0, || format!("(b) {id}: selective {selective} < 0"))?;
        if config.has_positive_leg() {
            ensure(selective > 0.0, || format!("(b) {id}: selective {selective} with a positive leg"))?;
        }
    }
    let negneg: Vec<f64> = rows
        .iter()
        .filter(|r| r.0.a_to_c == Polarity::Neg && r.0.b_to_c == Polarity::Neg)
        .map(|r| r.2)
        .collect();
    let hurt = negneg.iter().filter(|&&v| v < 0.0).count();
    ensure(!negneg.is_empty() && hurt * 5 >= negneg.len() * 4, || format!("(c) naive < 0 on {hurt}/{} neg/neg", negneg.len()))?;
    Ok(format!("{} triplets, naive < 0 on {hurt}/{} neg/neg, {:?} on 1 thread", rows.len(), negneg.len(), started.elapsed()))
}

/// Exhaustive single split on residuals: best SSE reduction, first strict max.
fn oracle_root_split(x: &[Vec<f64>], r: &[f64], min_leaf: usize) -> Option<(usize, f64)> {
    let sse = |idx: &[usize]| {
        let m = idx.iter().map(|&i| r[i]).sum::<f64>() / idx.len() as f64;
        idx.iter().map(|&i| (r[i] - m).powi(2)).sum::<f64>()
    };
    let all: Vec<usize> = (0..x.len()).collect();
    let parent = sse(&all);
    let mut best: Option<(usize, f64, f64)> = None;
    for f in 0..x[0].len() {
        let mut vals: Vec<f64> = x.iter().map(|row| row[f]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let thr = w[0] + (w[1] - w[0]) / 2.0;
            let (l, rr): (Vec<usize>, Vec<usize>) = all.iter().partition(|&&i| x[i][f] <= thr);
            if l.len() < min_leaf || rr.len() < min_leaf {
                continue;
            }
            let gain = parent - sse(&l) - sse(&rr);
            if best.is_none_or(|b| gain > b.2) {
                best = Some((f, thr, gain));
            }
        }
    }
    best.map(|(f, t, _)| (f, t))
}

fn ac5() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x: Vec<Vec<f64>> = (0..200).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let y: Vec<bool> = x
        .iter()
        .map(|p| {
            let clean = 1.5 * p[0] - p[2] + 0.3 * p[1] * p[3] > 0.0;
            clean != (rng.random::<f64>() < 0.1)
        })
        .collect();
    let params = GbdtParams::default();
    let (model, trace) = gbdt_fit(&x, &y, &params, 5).map_err(|e| e.to_string())?;
    ensure(trace.losses.len() == 101, || format!("{} losses", trace.losses.len()))?;
    if let Some(w) = trace.losses.windows(2).find(|w| w[1] > w[0]) {
        return Err(format!("loss rose {} -> {}", w[0], w[1]));
    }

    let p0 = y.iter().filter(|&&v| v).count() as f64 / y.len() as f64;
    let residual: Vec<f64> = y.iter().map(|&v| f64::from(u8::from(v)) - p0).collect();
    let want = oracle_root_split(&x, &residual, params.min_samples_leaf);
    let got = model.trees[0].root_split();
    ensure(got == want, || format!("root split {got:?}, oracle {want:?}"))?;

    let sx: Vec<Vec<f64>> = (0..120).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
    let sy: Vec<bool> = sx.iter().map(|p| p[0] + 0.4 * p[1] > 0.1).collect();
    let (sep, _) = gbdt_fit(&sx, &sy, &params, 5).map_err(|e| e.to_string())?;
    let correct = sx.iter().zip(&sy).filter(|(p, &l)| sep.decide(p, 0.5).unwrap() == l).count();
    ensure(correct == sx.len(), || format!("separable accuracy {correct}/{}", sx.len()))?;
    let (f, t) = want.unwrap();
    Ok(format!(
        "loss {:.4} -> {:.4} non-increasing; root split x{f} <= {t:.4}; separable {correct}/{}",
        trace.losses[0],
        trace.losses[100],
        sx.len()
    ))
}

fn ac6() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let (_, bench, backend) = write_synthetic(dir.path(), 3);
    let run = |name: &str, jobs: &str| -> Result<Vec<u8>, String> {
        let out = dir.path().join(name);
        let o = seqft(&[
            "run",
            "--benchmark",
            bench.to_str().unwrap(),
            "--backend",
            backend.to_str().unwrap(),
            "--strategy",
            "oracle",
            "--seed",
            "11",
            "--jobs",
            jobs,
            "--out",
            out.to_str().unwrap(),
        ]);
        ensure(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
        Ok(fs::read(out).unwrap())
    };
    let first = run("a.json", "2")?;
    let second = run("b.json", "2")?;
    let serial = run("c.json", "1")?;
    ensure(first == second, || "reports differ between identical runs".into())?;
    ensure(first == serial, || "reports differ across --jobs".into())?;
    ensure(dir.path().join("a.json.meta.json").exists(), || "no metadata sidecar".into())?;
    Ok(format!("{} report bytes identical across 3 runs", first.len()))
}

fn ac7() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let values = [0.9, 1.0 / 3.0, 0.1 + 0.2, std::f64::consts::SQRT_2 / 10.0, 5e-324];
    let text: Vec<String> = values.iter().map(|v| v.to_string()).collect();
    let curve: Vec<(u64, &str)> = EVAL_STEPS.iter().copied().zip(text.iter().map(String::as_str)).collect();
    let result = echo_backend(dir.path(), &response_line(&curve))
        .train(&plain_task(), &echo_request(), 0)
        .map_err(|e| e.to_string())?;
    let exact = result.curve.points().iter().zip(&values).all(|(&(_, got), want)| got.to_bits() == want.to_bits());
    ensure(exact, || "curve not bit-exact".into())?;

    let cases: [(&[(u64, &str)], ContractViolation); 3] = [
        (&[(5, "0.9"), (10, "0.8"), (50, "0.5"), (100, "0.4")], ContractViolation::MissingStepZero),
        (&[(0, "1.0"), (10, "0.9"), (5, "0.8"), (50, "0.5"), (100, "0.4")], ContractViolation::NonMonotoneSteps { index: 2 }),
        (&[(0, "1.0"), (5, "0.9"), (10, "NaN"), (50, "0.5"), (100, "0.4")], ContractViolation::NonFiniteValue { step: 10 }),
    ];
    for (curve, want) in cases {
        let d = tempfile::tempdir().unwrap();
        match echo_backend(d.path(), &response_line(curve)).train(&plain_task(), &echo_request(), 0) {
            Err(BackendError::Validation(v)) if v == want => {}
            other => return Err(format!("expected {want:?}, got {other:?}")),
        }
    }
    Ok("echo curve bit-exact; 3 malformed responses rejected".into())
}

fn main() -> ExitCode {
    let checks: [(&str, fn() -> Check); 7] =
        [("AC1", ac1), ("AC2", ac2), ("AC3", ac3), ("AC4", ac4), ("AC5", ac5), ("AC6", ac6), ("AC7", ac7)];
    let mut failed = 0;
    for (name, check) in checks {
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("{name} PASS {detail}"),
            Ok(Err(reason)) => {
                failed += 1;
                println!("{name} FAIL {reason}");
            }
            Err(_) => {
                failed += 1;
                println!("{name} FAIL panicked");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
