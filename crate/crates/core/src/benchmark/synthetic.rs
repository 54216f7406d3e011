//! Generated benchmarks for the synthetic learner.
//!
//! Tasks are grouped into families; each ordered pair gets a positive,
//! negative or neutral transfer effect (positive is likelier within a family),
//! and task optima cluster around their family centre so that weight-space
//! features carry signal. Pair labels are then measured, not assumed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{build_triplets, BenchmarkError, BenchmarkFile, BenchmarkTask, Shortfall, TransferRecord, LABEL_THRESHOLD};
use crate::backends::{Backend, ParamGroup, ParameterState, SyntheticBackend, SyntheticParams, TaskSpec, TransferEffect, TransferEffectMatrix};
use crate::engine::{Engine, Strategy};
use crate::metrics::MetricSpec;
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticBenchmarkSpec {
    pub n_tasks: usize,
    pub n_families: usize,
    /// Entries per parameter group.
    pub state_dim: usize,
    /// Random trials per measured pair.
    pub trials: usize,
    pub noise_sigma: f64,
    pub budget: u64,
    pub per_config_targets: usize,
    pub pairs_per_target: usize,
    pub seed: u64,
}

impl Default for SyntheticBenchmarkSpec {
    fn default() -> Self {
        Self {
            n_tasks: 18,
            n_families: 4,
            state_dim: 4,
            trials: 3,
            noise_sigma: 0.002,
            budget: 10_000,
            per_config_targets: 2,
            pairs_per_target: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedBenchmark {
    pub benchmark: BenchmarkFile,
    pub effects: TransferEffectMatrix,
    pub root: ParameterState,
    pub noise_sigma: f64,
    pub shortfalls: Vec<Shortfall>,
}

impl GeneratedBenchmark {
    pub fn backend(&self) -> SyntheticBackend {
        SyntheticBackend::new(self.effects.clone(), self.root.clone()).with_noise(self.noise_sigma)
    }
}

/// Relative PerfAUC (percent) of `target` initialized from a checkpoint of
/// `source`, one value per seed.
pub fn measure_pair(
    backend: &dyn Backend,
    source: &TaskSpec,
    target: &TaskSpec,
    budget: u64,
    seeds: &[u64],
) -> Result<TransferRecord, BenchmarkError> {
    let engine = Engine::new(backend);
    let pair = [source.clone(), target.clone()];
    let trials = seeds
        .iter()
        .map(|&s| {
            engine
                .run_sequence(&pair, Strategy::Naive, budget, s)
                .map(|run| 100.0 * run.outcomes[1].relative)
                .map_err(|e| BenchmarkError::Measurement(e.to_string()))
        })
        .collect::<Result<Vec<f64>, _>>()?;
    TransferRecord::new(&source.task_id, &target.task_id, trials)
}

fn effect(rng: &mut ChaCha8Rng, kind: u8, gap: f64) -> TransferEffect {
    let (offset, rate) = match kind {
        0 => (rng.random_range(-0.45..-0.25), rng.random_range(1.8..3.0)),
        1 => (rng.random_range(0.12..0.25), rng.random_range(0.5..0.75)),
        _ => (rng.random_range(-0.004..0.004), rng.random_range(0.98..1.02)),
    };
    TransferEffect { zero_shot_offset: offset * gap, rate_multiplier: rate }
}

pub fn generate_synthetic_benchmark(spec: &SyntheticBenchmarkSpec) -> Result<GeneratedBenchmark, BenchmarkError> {
    if spec.n_tasks < 3 || spec.n_families == 0 || spec.state_dim == 0 || spec.trials == 0 {
        return Err(BenchmarkError::Measurement(format!("degenerate generator settings {spec:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "synthetic-benchmark"));
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let spread = Normal::new(0.0, 0.3).expect("valid normal");

    let centres: Vec<Vec<f64>> =
        (0..spec.n_families).map(|_| (0..spec.state_dim * ParamGroup::ALL.len()).map(|_| unit.sample(&mut rng)).collect()).collect();
    let mut tasks = Vec::with_capacity(spec.n_tasks);
    for i in 0..spec.n_tasks {
        let fam = i % spec.n_families;
        let flat: Vec<f64> = centres[fam].iter().map(|c| c + spread.sample(&mut rng)).collect();
        let optimum = ParameterState::new(
            ParamGroup::ALL.iter().zip(flat.chunks(spec.state_dim)).map(|(&g, v)| (g, v.to_vec())).collect(),
        )
        .expect("canonical layout");
        tasks.push(TaskSpec {
            task_id: format!("task_{i:02}"),
            family_id: format!("family_{fam}"),
            metric: MetricSpec::loss("loss"),
            synthetic: Some(SyntheticParams {
                zero_shot_loss: rng.random_range(0.8..1.2),
                asymptote: rng.random_range(0.05..0.2),
                time_constant: rng.random_range(200.0..600.0),
                optimum,
            }),
        });
    }

    let mut effects = TransferEffectMatrix::default();
    for t in &tasks {
        let p = t.synthetic.as_ref().expect("set above");
        let gap = p.zero_shot_loss - p.asymptote;
        for s in &tasks {
            if s.task_id == t.task_id {
                continue;
            }
            let (p_pos, p_neg) = if s.family_id == t.family_id { (0.7, 0.1) } else { (0.2, 0.35) };
            let u: f64 = rng.random();
            let kind = if u < p_pos { 0 } else if u < p_pos + p_neg { 1 } else { 2 };
            effects.set(&s.task_id, &t.task_id, effect(&mut rng, kind, gap)).expect("valid effect");
        }
    }

    let root = ParameterState::zeros(spec.state_dim);
    let backend = SyntheticBackend::new(effects.clone(), root.clone()).with_noise(spec.noise_sigma);
    let seeds: Vec<u64> = (0..spec.trials).map(|k| derive_seed(spec.seed, &format!("trial-{k}"))).collect();
    let mut records = Vec::new();
    for s in &tasks {
        for t in &tasks {
            if s.task_id != t.task_id {
                records.push(measure_pair(&backend, s, t, spec.budget, &seeds)?.labeled(LABEL_THRESHOLD)?);
            }
        }
    }
    let build = build_triplets(&records, spec.per_config_targets, spec.pairs_per_target, spec.seed);
    let benchmark = BenchmarkFile::new(tasks.iter().map(BenchmarkTask::from).collect(), build.triplets, records);
    benchmark.validate()?;
    Ok(GeneratedBenchmark { benchmark, effects, root, noise_sigma: spec.noise_sigma, shortfalls: build.shortfalls })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark::{Label, TripletConfig};

    fn small() -> SyntheticBenchmarkSpec {
        SyntheticBenchmarkSpec { n_tasks: 12, budget: 2000, ..Default::default() }
    }

    #[test]
    fn generated_benchmark_is_complete_and_deterministic() {
        let g = generate_synthetic_benchmark(&small()).unwrap();
        assert!(g.shortfalls.is_empty(), "{:?}", g.shortfalls);
        assert_eq!(g.benchmark.triplets.len(), 8 * 2 * 2);
        for cfg in TripletConfig::ALL {
            assert_eq!(g.benchmark.triplets.iter().filter(|t| t.config == cfg).count(), 4);
        }
        assert!(g.benchmark.records.iter().all(|r| r.label != Label::Unlabeled && r.trials.len() == 3));
        let again = generate_synthetic_benchmark(&small()).unwrap();
        assert_eq!(g.benchmark, again.benchmark);
    }
}
